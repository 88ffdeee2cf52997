#include "doctest.h"
#include "support.hpp"

#include "ctox/core.hpp"

using namespace ctox;
using ctox::test::TempDir;
using ctox::test::write_text;

namespace {

std::vector<std::string> words(const TokenSequence& seq) {
  std::vector<std::string> out;
  for (const auto& t : seq.tokens()) out.push_back(t.str());
  return out;
}

using Words = std::vector<std::string>;

}  // namespace

TEST_CASE("tokenize: default rules") {
  CHECK(words(tokenize("Gender1 people are stupid")) == Words{"gender1", "people", "are", "stupid"});
  CHECK(tokenize("").empty());
  CHECK(words(tokenize("Black, African")) == Words{"black", "african"});
  CHECK(words(tokenize("  tabs\tand\nnewlines  ")) == Words{"tabs", "and", "newlines"});
  CHECK(words(tokenize("don't stop!!")) == Words{"don", "t", "stop"});
}

TEST_CASE("tokenize: config switches") {
  TokenizerConfig keep;
  keep.lowercase = false;
  keep.strip_punctuation = false;
  CHECK(words(tokenize("Hi, Bob!", keep)) == Words{"Hi", ",", "Bob", "!"});

  TokenizerConfig pattern;
  pattern.token_pattern = "[A-Za-z]+";
  CHECK(words(tokenize("abc123def ghi", pattern)) == Words{"abc", "def", "ghi"});
}

TEST_CASE("tokenize: idempotent on its joined output") {
  std::mt19937_64 rng(11);
  const std::string alphabet = "abcXYZ09 ,.!?'-\t";
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const auto len = rng() % 40;
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng() % alphabet.size()];
    for (const bool strip : {true, false}) {
      TokenizerConfig cfg;
      cfg.strip_punctuation = strip;
      const auto once = tokenize(text, cfg);
      const auto twice = tokenize(once.joined(), cfg);
      REQUIRE(once.tokens() == twice.tokens());
      // Re-tokenizing the source reproduces the tokens.
      CHECK(tokenize(once.source_text(), cfg).tokens() == once.tokens());
    }
  }
}

TEST_CASE("Token rejects empty and whitespace surfaces") {
  CHECK_THROWS_AS(Token(""), InputError);
  CHECK_THROWS_AS(Token("a b"), InputError);
  CHECK_THROWS_AS(Token("a\tb"), InputError);
  CHECK(Token("ok").str() == "ok");
}

TEST_CASE("TokenSequence prefix and replacement") {
  const auto seq = tokenize("a b c d");
  const auto p = seq.prefix(2);
  CHECK(words(p) == Words{"a", "b"});
  CHECK(p.source_text() == "a b");
  CHECK(tokenize(p.source_text()).tokens() == p.tokens());
  CHECK(seq.prefix(0).empty());
  CHECK(seq.prefix(4).size() == 4);
  CHECK_THROWS_AS(seq.prefix(5), InputError);

  const auto r = seq.with_replacement(1, Token("z"));
  CHECK(r.joined() == "a z c d");
  CHECK(seq.joined() == "a b c d");
  CHECK_THROWS(seq.with_replacement(4, Token("z")));
}

TEST_CASE("load_corpus") {
  TempDir dir;

  SUBCASE("two lines") {
    write_text(dir / "c.jsonl", "{\"text\":\"Hello there\"}\n{\"text\":\"Bye\",\"id\":\"x\"}\n");
    const auto c = load_corpus(dir / "c.jsonl", {});
    REQUIRE(c.size() == 2);
    CHECK(c.id == "c");
    CHECK(words(c.sentences[0]) == Words{"hello", "there"});
    CHECK(c.sentence_ids == Words{"1", "x"});
  }
  SUBCASE("empty file") {
    write_text(dir / "e.jsonl", "");
    CHECK(load_corpus(dir / "e.jsonl", {}).empty());
  }
  SUBCASE("blank lines are skipped but counted") {
    write_text(dir / "b.jsonl", "\n{\"text\":\"a\"}\n\n{\"text\":\"b\"}\n");
    const auto c = load_corpus(dir / "b.jsonl", {});
    CHECK(c.sentence_ids == Words{"2", "4"});
  }
  SUBCASE("missing text field names line 1") {
    write_text(dir / "m.jsonl", "{\"body\":\"x\"}\n");
    try {
      load_corpus(dir / "m.jsonl", {});
      FAIL("expected an error");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
  SUBCASE("malformed json names its line") {
    write_text(dir / "j.jsonl", "{\"text\":\"ok\"}\n{not json\n");
    try {
      load_corpus(dir / "j.jsonl", {});
      FAIL("expected an error");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("skip_bad keeps the good lines and reports the rest") {
    write_text(dir / "s.jsonl", "{\"text\":\"ok\"}\n{not json\n{\"text\":3}\n{\"text\":\"fine\"}\n");
    Diagnostics diag;
    CorpusLoadOptions opts;
    opts.skip_bad = true;
    const auto c = load_corpus(dir / "s.jsonl", {}, opts, &diag);
    CHECK(c.size() == 2);
    CHECK(diag.warnings.size() == 2);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_corpus(dir / "nope.jsonl", {}), InputError);
  }
}

TEST_CASE("write_corpus then load_corpus round-trips") {
  TempDir dir;
  Corpus c;
  c.id = "rt";
  const Tokenizer tok;
  c.add(tok("The \"quoted\" one"), "a");
  c.add(tok("second, line"), "b");
  c.add(tok(""), "c");
  write_corpus(dir / "rt.jsonl", c);
  CHECK(load_corpus(dir / "rt.jsonl", {}) == c);
}

TEST_CASE("tokenizer digest tracks the config") {
  TokenizerConfig a;
  TokenizerConfig b;
  CHECK(tokenizer_digest(a) == tokenizer_digest(b));
  b.lowercase = false;
  CHECK(tokenizer_digest(a) != tokenizer_digest(b));
  b = a;
  b.token_pattern = "\\w+";
  CHECK(tokenizer_digest(a) != tokenizer_digest(b));
}

TEST_CASE("sha256_hex known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("format_double round-trips") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(0.0) == "0");
}

TEST_CASE("write_file_atomic replaces content and leaves no temporaries") {
  TempDir dir;
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(read_file(dir / "f.txt") == "two");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);
}
