#include "doctest.h"
#include "support.hpp"

#include "ctox/analysis.hpp"
#include "ctox/causal.hpp"

using namespace ctox;
using ctox::test::seq_of;
using ctox::test::TempDir;
using ctox::test::write_text;

namespace {

GroupLexicon default_lexicon() {
  return GroupLexicon({{"religion", {"Muslim", "christian"}},
                       {"gender", {"women", "men"}},
                       {"race", {"African American", "hispanic"}}},
                      {});
}

const GroupGap& group(const LossGapReport& r, const std::string& name) {
  for (const auto& g : r.groups) {
    if (g.group == name) return g;
  }
  FAIL("no group " << name);
  throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("lexicon normalization and matching") {
  const auto lex = default_lexicon();
  CHECK(lex.groups().at("religion")[0] == GroupLexicon::Term{"muslim"});
  CHECK(lex.groups().at("race")[0] == GroupLexicon::Term{"african", "american"});
  CHECK(lex.matches("religion", tokenize("The Muslim man")));
  CHECK(lex.matches("gender", tokenize("The Muslim men")));
  CHECK_FALSE(lex.matches("gender", tokenize("The Muslim man")));
  CHECK(lex.matches("race", tokenize("an american of african descent")));
  CHECK_FALSE(lex.matches("race", tokenize("an american")));
  CHECK_FALSE(lex.matches("nope", tokenize("women")));
}

TEST_CASE("loss gap: single sentence") {
  Corpus c;
  c.add(tokenize("the muslim neighbour"), "s1");
  const auto r = loss_gap({{"s1", 2.0}}, {{"s1", 2.5}}, default_lexicon(), c);
  CHECK(*group(r, "religion").mean_gap == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(group(r, "religion").sentences == 1);
  CHECK(!group(r, "gender").mean_gap);
  CHECK(r.out_of_group.sentences == 0);
  CHECK(r.sentences == 1);
}

TEST_CASE("loss gap: identical files give zero gaps") {
  Corpus c;
  c.add(tokenize("muslim women"), "a");
  c.add(tokenize("nothing here"), "b");
  const LossTable l = {{"a", 3.1}, {"b", 1.7}};
  const auto r = loss_gap(l, l, default_lexicon(), c);
  for (const auto& g : r.groups) {
    if (g.mean_gap) CHECK(*g.mean_gap == 0.0);
  }
  CHECK(*r.out_of_group.mean_gap == 0.0);
}

TEST_CASE("loss gap: planted per-group offsets are recovered") {
  // 50 sentences, each in at most one group; the model loss is the baseline
  // loss plus the group's offset.
  const std::map<std::string, double> offsets = {{"religion", 0.25}, {"gender", -0.5}, {"race", 1.0}};
  const std::vector<std::pair<std::string, std::string>> members = {
      {"religion", "muslim"}, {"gender", "women"}, {"race", "hispanic"}, {"", "plain"}};
  Corpus c;
  LossTable base, model;
  std::map<std::string, std::size_t> counts;
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50; ++i) {
    const auto& [g, word] = members[static_cast<std::size_t>(i) % members.size()];
    const std::string id = "s" + std::to_string(i);
    c.add(seq_of({"some", word, "text"}), id);
    const double b = 1.0 + static_cast<double>(rng() % 1000) / 1000.0;
    base[id] = b;
    model[id] = b + (g.empty() ? 0.0 : offsets.at(g));
    ++counts[g];
  }
  const auto r = loss_gap(base, model, default_lexicon(), c);
  for (const auto& [g, off] : offsets) {
    CHECK(group(r, g).sentences == counts[g]);
    CHECK(*group(r, g).mean_gap == doctest::Approx(off).epsilon(1e-12));
  }
  CHECK(r.out_of_group.sentences == counts[""]);
  CHECK(*r.out_of_group.mean_gap == doctest::Approx(0.0));

  // Anti-symmetry.
  const auto flipped = loss_gap(model, base, default_lexicon(), c);
  for (std::size_t i = 0; i < r.groups.size(); ++i) {
    CHECK(*flipped.groups[i].mean_gap == -*r.groups[i].mean_gap);
  }
}

TEST_CASE("loss gap: a sentence counts toward every group it matches") {
  Corpus c;
  c.add(tokenize("muslim women"), "a");
  c.add(tokenize("women"), "b");
  const auto r = loss_gap({{"a", 1.0}, {"b", 1.0}}, {{"a", 2.0}, {"b", 1.5}}, default_lexicon(), c);
  CHECK(group(r, "religion").sentences == 1);
  CHECK(group(r, "gender").sentences == 2);
  CHECK(*group(r, "gender").mean_gap == doctest::Approx(0.75));
}

TEST_CASE("loss gap: errors and warnings") {
  Corpus c;
  c.add(tokenize("muslim"), "a");
  CHECK_THROWS_AS(loss_gap({{"a", 1.0}}, {{"b", 1.0}}, default_lexicon(), c), InputError);
  CHECK_THROWS_AS(loss_gap({{"a", 1.0}, {"b", 1.0}}, {{"a", 1.0}}, default_lexicon(), c), InputError);
  Corpus missing;
  missing.add(tokenize("x"), "zzz");
  CHECK_THROWS_AS(loss_gap({{"a", 1.0}}, {{"a", 1.0}}, default_lexicon(), missing), InputError);

  Diagnostics diag;
  loss_gap({{"a", 1.0}}, {{"a", 1.0}}, default_lexicon(), c, &diag);
  CHECK(diag.warnings.size() == 2);  // gender and race are empty
}

TEST_CASE("loss gap report formats") {
  Corpus c;
  c.add(tokenize("muslim"), "a");
  c.add(tokenize("other"), "b");
  const auto r = loss_gap({{"a", 1.0}, {"b", 1.0}}, {{"a", 1.5}, {"b", 0.75}}, default_lexicon(), c);
  const auto csv = ctox::test::lines_of(loss_gap_csv(r));
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] == "group,sentences,mean_gap");
  CHECK(csv[1] == "gender,0,");
  CHECK(csv[3] == "religion,1,0.5");
  CHECK(csv[4] == "out_of_group,1,-0.25");
  CHECK(loss_gap_json(r).find("\"mean_gap\": null") != std::string::npos);
}

TEST_CASE("load_losses") {
  TempDir dir;
  write_text(dir / "l.jsonl", "{\"id\":\"a\",\"loss\":1.5}\n{\"id\":7,\"loss\":2}\n");
  const auto l = load_losses(dir / "l.jsonl");
  CHECK(l.at("a") == 1.5);
  CHECK(l.at("7") == 2.0);
  write_text(dir / "d.jsonl", "{\"id\":\"a\",\"loss\":1.5}\n{\"id\":\"a\",\"loss\":2}\n");
  CHECK_THROWS_AS(load_losses(dir / "d.jsonl"), InputError);
}

TEST_CASE("ate diff: identical tables") {
  AteTable t;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    t.set("t" + std::to_string(i), "hate", static_cast<double>(rng() % 2001) / 1000.0 - 1.0);
  }
  const auto h = ate_diff_histogram(t, t, "hate", 0.05);
  CHECK(h.total == 100);
  CHECK(h.counts.size() == 1);
  CHECK(h.counts.at(0) == 100);
  CHECK(h.fraction_above == 0.0);
}

TEST_CASE("ate diff: one perturbed classifier response moves exactly one token") {
  // Two stub classifiers agree everywhere except one counterfactual text,
  // which scores 0.1 higher under the second. The expected shift is
  // computed by direct subtraction of the two treatment effects.
  Corpus corpus;
  corpus.id = "pair";
  corpus.add(seq_of({"they", "are", "vile"}), "1");
  corpus.add(seq_of({"we", "are", "fine"}), "2");
  TableClassifier::Table scores = {{"they are vile", {{"hate", 0.8}}},
                                   {"they are nice", {{"hate", 0.2}}},
                                   {"we are fine", {{"hate", 0.1}}}};
  const TableClassifier a("a", {"hate"}, scores, 0.3);
  scores["they are nice"]["hate"] = 0.3;
  const TableClassifier b("b", {"hate"}, scores, 0.3);
  StubMaskFill mf;
  mf.add_token("vile", {{Token("nice"), 1.0}});
  mf.set_fallback({{Token("x"), 1.0}});
  AteBuildConfig cfg;
  cfg.top_k = 1;
  const auto ta = build_ate_table(corpus, {"hate"}, a, mf, cfg).table;
  const auto tb = build_ate_table(corpus, {"hate"}, b, mf, cfg).table;

  const double expected = std::abs((0.8 - 0.2) - (0.8 - 0.3));
  const auto h = ate_diff_histogram(ta, tb, "hate", 0.05);
  CHECK(h.total == 5);
  CHECK(h.diffs.at("vile") == expected);
  std::size_t moved = 0;
  for (const auto& [tok, d] : h.diffs) {
    if (h.bucket_of(tok) != 0) {
      ++moved;
      CHECK(tok == "vile");
    }
  }
  CHECK(moved == 1);
  std::size_t sum = 0;
  for (const auto& [bucket, n] : h.counts) sum += n;
  CHECK(sum == h.total);
  CHECK(h.fraction_above == 0.0);
}

TEST_CASE("ate diff: intersection, errors, warnings, csv") {
  AteTable a, b;
  a.set("x", "hate", 0.5);
  a.set("y", "hate", 0.1);
  a.set("x", "abuse", 0.9);
  b.set("x", "hate", 0.2);
  b.set("z", "hate", 0.1);
  Diagnostics diag;
  b.provenance.tokenizer_digest = "different";
  const auto h = ate_diff_histogram(a, b, "hate", 0.1, 0.2, &diag);
  CHECK(h.total == 1);
  CHECK(diag.warnings.size() == 1);
  CHECK(h.above_threshold == 1);  // |0.5 - 0.2| = 0.3
  const auto csv = ctox::test::lines_of(ate_diff_csv(h));
  REQUIRE(csv.size() == 1 + 3);
  CHECK(csv[0] == "bucket_low,bucket_high,count");
  CHECK(csv[1] == "0,0.1,0");
  CHECK(csv[3] == "0.2,0.30000000000000004,1");

  AteTable disjoint;
  disjoint.set("q", "hate", 0.3);
  CHECK_THROWS_AS(ate_diff_histogram(a, disjoint, "hate", 0.05), InputError);
  CHECK_THROWS_AS(ate_diff_histogram(a, b, "hate", 0.0), InputError);
}
