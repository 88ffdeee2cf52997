#include "doctest.h"
#include "support.hpp"

#include <thread>

#include "ctox/backend.hpp"
#include "ctox/parallel.hpp"

using namespace ctox;
using ctox::test::seq_of;
using ctox::test::TempDir;
using ctox::test::write_text;

namespace {

// Returns whatever it was told to, so the validating front door can be
// exercised against misbehaving backends.
class RawClassifier final : public ClassifierBackend {
 public:
  explicit RawClassifier(ScoreMatrix reply) : reply_(std::move(reply)) {}
  std::string id() const override { return "raw"; }
  std::vector<AttributeId> attributes() const override { return {"toxicity"}; }
  ScoreMatrix classify_unchecked(std::span<const std::string>,
                                 std::span<const AttributeId>) const override {
    return reply_;
  }

 private:
  ScoreMatrix reply_;
};

class CountingClassifier final : public ClassifierBackend {
 public:
  std::string id() const override { return "counting"; }
  std::vector<AttributeId> attributes() const override { return {"a", "b"}; }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attrs) const override {
    calls += texts.size() * attrs.size();
    ScoreMatrix out;
    for (const auto& t : texts) {
      auto& row = out.emplace_back();
      for (std::size_t j = 0; j < attrs.size(); ++j) {
        row.push_back(static_cast<double>(t.size() % 10) / 10.0 + (attrs[j] == "b" ? 0.05 : 0.0));
      }
    }
    return out;
  }
  mutable std::atomic<std::size_t> calls{0};
};

std::vector<std::pair<std::string, double>> flat(const std::vector<Candidate>& cands) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& c : cands) out.emplace_back(c.token.str(), c.prob);
  return out;
}

}  // namespace

TEST_CASE("classify: stub table") {
  const auto clf = ctox::test::worked_classifier();
  const std::vector<std::string> texts = {"gender1 people are stupid"};
  const std::vector<AttributeId> attrs = {"toxicity"};
  CHECK(classify(*clf, texts, attrs) == ScoreMatrix{{0.92}});
}

TEST_CASE("classify: empty text list gives an empty matrix") {
  const ConstantClassifier clf(0.3);
  const std::vector<AttributeId> attrs = {"hate"};
  CHECK(classify(clf, std::vector<std::string>{}, attrs).empty());
}

TEST_CASE("classify: constant backend") {
  const ConstantClassifier clf(0.5, {"toxicity"});
  const std::vector<std::string> texts = {"a", "b b", "c c c"};
  const std::vector<AttributeId> attrs = {"toxicity"};
  CHECK(classify(clf, texts, attrs) == ScoreMatrix{{0.5}, {0.5}, {0.5}});
  CHECK_THROWS_AS(ConstantClassifier(1.5), InputError);
}

TEST_CASE("classify: unknown attribute is rejected") {
  const ConstantClassifier clf(0.5);
  const std::vector<std::string> texts = {"x"};
  const std::vector<AttributeId> attrs = {"toxicity"};
  CHECK_THROWS_AS(classify(clf, texts, attrs), InputError);
}

TEST_CASE("classify: malformed backend replies are rejected") {
  const std::vector<std::string> texts = {"x"};
  const std::vector<AttributeId> attrs = {"toxicity"};
  CHECK_THROWS_AS(classify(RawClassifier(ScoreMatrix{{1.2}}), texts, attrs), BackendError);
  CHECK_THROWS_AS(classify(RawClassifier(ScoreMatrix{{-0.1}}), texts, attrs), BackendError);
  CHECK_THROWS_AS(classify(RawClassifier(ScoreMatrix{{0.1, 0.2}}), texts, attrs), BackendError);
  CHECK_THROWS_AS(classify(RawClassifier(ScoreMatrix{}), texts, attrs), BackendError);
  CHECK_THROWS_AS(classify(RawClassifier(ScoreMatrix{{std::nan("")}}), texts, attrs), BackendError);
}

TEST_CASE("TableClassifier: missing text without a default fails") {
  const TableClassifier clf("t", {"x"}, {{"known", {{"x", 0.2}}}});
  CHECK(classify_one(clf, "known", "x") == 0.2);
  CHECK_THROWS_AS(classify_one(clf, "unknown", "x"), BackendError);
}

TEST_CASE("mask_fill: worked example stub") {
  const auto mf = ctox::test::worked_mask_fill();
  const auto seq = seq_of(ctox::test::worked_sentence());
  using Flat = std::vector<std::pair<std::string, double>>;
  CHECK(flat(mask_fill(*mf, seq, 0, 2)) == Flat{{"gender2", 0.5}, {"many", 0.5}});
  CHECK(flat(mask_fill(*mf, seq, 3, 2)) == Flat{{"smart", 0.5}, {"beautiful", 0.5}});
  CHECK_THROWS_AS(mask_fill(*mf, seq, 4, 2), InputError);
  CHECK_THROWS_AS(mask_fill(*mf, seq, 0, 0), InputError);
}

TEST_CASE("mask_fill: original excluded case-insensitively, renormalized, truncated") {
  StubMaskFill mf;
  mf.add_token("cat", {{Token("Cat"), 0.5}, {Token("dog"), 0.2}, {Token("cow"), 0.6},
                       {Token("dog"), 0.1}, {Token("ant"), 0.05}});
  const auto seq = seq_of({"the", "cat"});
  const auto out = mask_fill(mf, seq, 1, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0].token.str() == "cow");
  CHECK(out[1].token.str() == "dog");
  CHECK(out[0].prob == doctest::Approx(0.6 / 0.8).epsilon(1e-12));
  CHECK(out[1].prob == doctest::Approx(0.2 / 0.8).epsilon(1e-12));

  // Asking for three fetches four; Cat and the repeated dog drop out.
  const auto uniform = mask_fill(mf, seq, 1, 3, {true});
  REQUIRE(uniform.size() == 2);
  for (const auto& c : uniform) CHECK(c.prob == 0.5);
}

TEST_CASE("mask_fill: non-positive probabilities are a backend error") {
  StubMaskFill mf;
  mf.add_token("a", {{Token("b"), 0.0}});
  CHECK_THROWS_AS(mask_fill(mf, seq_of({"a"}), 0, 1), BackendError);
}

TEST_CASE("mask_fill property: random candidate lists") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "A", "B", "f", "g"};
  for (int trial = 0; trial < 300; ++trial) {
    StubMaskFill mf;
    StubMaskFill::CandidateList list;
    const auto n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      list.push_back({Token(vocab[rng() % vocab.size()]), 0.01 + static_cast<double>(rng() % 100) / 100.0});
    }
    mf.set_fallback(list);
    const std::string original = vocab[rng() % 5];
    const auto seq = seq_of({"x", original, "y"});
    const std::size_t k = 1 + rng() % 6;
    const auto out = mask_fill(mf, seq, 1, k);
    if (out.empty()) {
      // Only legal when every fetched candidate (k + 1 of them) was the original.
      for (std::size_t i = 0; i < std::min(k + 1, list.size()); ++i) {
        std::string lower = list[i].token.str();
        for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        REQUIRE(lower == original);
      }
      continue;
    }
    CHECK(out.size() <= k);
    double sum = 0.0;
    for (const auto& c : out) {
      std::string lower = c.token.str();
      for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      CHECK(lower != original);
      CHECK(c.prob > 0.0);
      sum += c.prob;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("ScoreCache never replaces a stored value") {
  ScoreCache<double> cache;
  CHECK(!cache.find("k"));
  CHECK(cache.insert("k", 0.1) == 0.1);
  CHECK(cache.insert("k", 0.9) == 0.1);
  CHECK(*cache.find("k") == 0.1);
  CHECK(cache.hits() == 1);
  CHECK(cache.misses() == 1);

  ScoreCache<int> shared;
  parallel_for(64, 8, [&](std::size_t i) { shared.insert("key", static_cast<int>(i)); });
  const int winner = *shared.find("key");
  parallel_for(64, 8, [&](std::size_t) { CHECK(*shared.find("key") == winner); });
}

TEST_CASE("CachingClassifier asks the inner backend once per (text, attribute)") {
  auto inner = std::make_shared<CountingClassifier>();
  CachingClassifier cached(inner);
  const std::vector<std::string> texts = {"one", "two", "one"};
  const std::vector<AttributeId> ab = {"a", "b"};
  const std::vector<AttributeId> b = {"b"};
  const auto first = classify(cached, texts, ab);
  const auto direct = classify(*inner, texts, ab);
  CHECK(first == direct);
  inner->calls = 0;
  const auto again = classify(cached, texts, b);
  CHECK(inner->calls == 0);
  CHECK(again[0][0] == first[0][1]);
  CHECK(cached.stats().hits > 0);
}

TEST_CASE("CachingMaskFill returns the inner answers") {
  auto inner = ctox::test::worked_mask_fill();
  CachingMaskFill cached(inner);
  const auto seq = seq_of(ctox::test::worked_sentence());
  CHECK(mask_fill(cached, seq, 0, 2) == mask_fill(*inner, seq, 0, 2));
  CHECK(mask_fill(cached, seq, 0, 2) == mask_fill(*inner, seq, 0, 2));
  CHECK(cached.stats().hits == 1);
}

TEST_CASE("FileClassifier reads digest-keyed scores") {
  TempDir dir;
  const TableClassifier::Table table = {{"hello world", {{"hate", 0.25}, {"abuse", 0.5}}},
                                        {"bye", {{"hate", 0.75}, {"abuse", 0.0}}}};
  write_text(dir / "s.tsv", to_score_tsv(table));
  const FileClassifier clf(dir / "s.tsv");
  CHECK(clf.attributes() == std::vector<AttributeId>{"abuse", "hate"});
  CHECK(classify_one(clf, "hello world", "hate") == 0.25);
  CHECK(classify_one(clf, "bye", "hate") == 0.75);
  CHECK_THROWS_AS(classify_one(clf, "unseen", "hate"), BackendError);
  CHECK(clf.id().rfind("file:", 0) == 0);

  write_text(dir / "bad.tsv", "abc\thate\n");
  CHECK_THROWS(FileClassifier(dir / "bad.tsv"));
}

TEST_CASE("StubMaskFill JSON") {
  TempDir dir;
  write_text(dir / "m.json", R"({
    "name": "j",
    "contexts": [{"text": "a b", "index": 1, "candidates": [{"token": "c", "prob": 0.3}, {"token": "d", "prob": 0.1}]}],
    "tokens": {"a": [{"token": "z"}]},
    "fallback": [{"token": "q"}]
  })");
  const auto mf = StubMaskFill::from_json_file(dir / "m.json");
  CHECK(mf.id() == "stub:j");
  const auto at1 = mask_fill(mf, seq_of({"a", "b"}), 1, 5);
  REQUIRE(at1.size() == 2);
  CHECK(at1[0].prob == doctest::Approx(0.75));
  CHECK(mask_fill(mf, seq_of({"a", "b"}), 0, 5)[0].token.str() == "z");
  CHECK(mask_fill(mf, seq_of({"x"}), 0, 5)[0].token.str() == "q");
}
