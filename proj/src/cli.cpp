#include "ctox/cli.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ctox/analysis.hpp"
#include "ctox/causal.hpp"
#include "ctox/http_backend.hpp"
#include "ctox/metrics.hpp"
#include "ctox/parallel.hpp"
#include "ctox/scm.hpp"
#include "ctox/testbed.hpp"
#include "json.hpp"

namespace ctox::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.3.0";

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

testbed::PlantSpec oracle_spec(const std::string& rest) {
  if (rest.empty() || rest == "default") return {};
  return testbed::load_spec(rest);
}

// A sibling path with a different extension, never equal to the original.
fs::path sibling(const fs::path& out, const std::string& extension) {
  fs::path p = out;
  p.replace_extension(extension);
  if (p == out) p += extension;
  return p;
}

fs::path run_config_path(const fs::path& out) {
  fs::path p = out;
  p += ".run.json";
  return p;
}

// Everything needed to rerun a subcommand, written beside its outputs.
struct RunConfig {
  std::string subcommand;
  ojson options = ojson::object();
  TokenizerConfig tokenizer;
  std::size_t workers = 0;
  std::optional<std::uint64_t> seed;

  std::string to_json() const {
    ojson j = {{"tool", "ctox"},
               {"version", kVersion},
               {"subcommand", subcommand},
               {"options", options},
               {"tokenizer",
                {{"lowercase", tokenizer.lowercase},
                 {"strip_punctuation", tokenizer.strip_punctuation},
                 {"token_pattern", tokenizer.token_pattern},
                 {"digest", tokenizer_digest(tokenizer)}}},
               {"workers", workers}};
    if (seed) {
      j["seed"] = *seed;
    } else {
      j["seed"] = nullptr;
    }
    return j.dump(2) + "\n";
  }
};

struct CommonOptions {
  std::size_t workers = 0;
  bool no_lowercase = false;
  bool keep_punctuation = false;
  std::string token_pattern;

  TokenizerConfig tokenizer() const {
    return {!no_lowercase, !keep_punctuation, token_pattern};
  }
};

void add_common(CLI::App* sub, CommonOptions& common) {
  sub->add_option("--workers", common.workers, "Worker threads (0 = all cores)");
  sub->add_flag("--no-lowercase", common.no_lowercase, "Keep token case");
  sub->add_flag("--keep-punctuation", common.keep_punctuation,
                "Emit punctuation characters as tokens");
  sub->add_option("--token-pattern", common.token_pattern,
                  "Regex whose matches are the tokens (overrides the default split)");
}

void flush(Diagnostics& diag, std::ostream& err) {
  for (const auto& w : diag.warnings) err << "warning: " << w << '\n';
  diag.warnings.clear();
}

// --- ate-build -------------------------------------------------------------

struct AteBuildArgs {
  std::string corpus;
  std::string classifier;
  std::string mask_fill;
  std::string attrs;
  std::size_t top_k = 5;
  bool uniform = false;
  std::size_t max_length = 256;
  bool skip_bad = false;
  std::string corpus_id;
  std::string out;
};

int cmd_ate_build(const AteBuildArgs& a, const CommonOptions& common, std::ostream& out,
                  std::ostream& err) {
  Diagnostics diag;
  CorpusLoadOptions load;
  load.skip_bad = a.skip_bad;
  if (!a.corpus_id.empty()) load.corpus_id = a.corpus_id;
  const auto corpus = load_corpus(a.corpus, common.tokenizer(), load, &diag);
  flush(diag, err);

  const auto clf = make_classifier(a.classifier);
  const auto mf = make_mask_fill(a.mask_fill);
  const auto attrs = a.attrs.empty() ? clf->attributes() : split_list(a.attrs);

  AteBuildConfig cfg;
  cfg.top_k = a.top_k;
  cfg.mask_fill.uniform_weights = a.uniform;
  cfg.workers = common.workers;
  cfg.max_length = a.max_length;
  const auto result = build_ate_table(corpus, attrs, *clf, *mf, cfg, common.tokenizer(), &diag);
  flush(diag, err);

  save_ate_table(a.out, result.table);

  const auto& s = result.stats;
  ojson summary = {{"sentences", s.sentences},
                   {"positions", s.positions},
                   {"entries", result.table.size()},
                   {"counterfactuals", s.counterfactuals},
                   {"long_sentences", s.long_sentences},
                   {"classifier_cache_hit_rate", s.classifier_cache.hit_rate()},
                   {"mask_fill_cache_hit_rate", s.mask_fill_cache.hit_rate()},
                   {"wall_seconds", s.wall_seconds}};
  write_file_atomic(sibling(a.out, ".summary.json"), summary.dump(2) + "\n");

  RunConfig rc{"ate-build"};
  rc.options = {{"corpus", a.corpus},         {"classifier", a.classifier},
                {"maskfill", a.mask_fill},    {"attrs", attrs},
                {"top_k", a.top_k},           {"uniform_weights", a.uniform},
                {"max_length", a.max_length}, {"skip_bad", a.skip_bad},
                {"corpus_id", corpus.id},     {"out", a.out}};
  rc.tokenizer = common.tokenizer();
  rc.workers = resolve_workers(common.workers);
  write_file_atomic(run_config_path(a.out), rc.to_json());

  out << "wrote " << result.table.size() << " ATE entries from " << s.positions
      << " positions to " << a.out << '\n';
  return 0;
}

// --- scm-score -------------------------------------------------------------

struct ScmArgs {
  std::string corpus;
  std::string table;
  std::string attrs;
  std::string p = "inf";
  std::string negative_policy = "signed";
  std::string combine = "max";
  std::string weights;
  std::size_t min_support = 1;
  std::string out;
};

int cmd_scm_score(const ScmArgs& a, const CommonOptions& common, std::ostream& out,
                  std::ostream& err) {
  Diagnostics diag;
  const auto tok = common.tokenizer();
  const auto table = load_ate_table(a.table, tokenizer_digest(tok), &diag);
  const auto corpus = load_corpus(a.corpus, tok, {}, &diag);
  flush(diag, err);

  ScmConfig cfg;
  cfg.p = parse_norm_order(a.p);
  cfg.negative_policy = parse_negative_policy(a.negative_policy);
  cfg.combine = parse_attribute_combine(a.combine);
  cfg.min_support = a.min_support;
  for (const auto& kv : split_list(a.weights)) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("bad weight '" + kv + "', expected attr=w");
    cfg.weights[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
  }
  cfg.validate();

  const auto attrs = a.attrs.empty() ? table.provenance.attributes : split_list(a.attrs);
  if (attrs.empty()) throw InputError("no attributes: pass --attrs");
  const auto scores = batch_loss(corpus, table, attrs, cfg, common.workers);

  write_file_atomic(a.out, batch_loss_jsonl(corpus, scores));

  std::string csv = "id";
  for (const auto& attr : attrs) csv += ',' + attr;
  csv += ",combined,oov_count\n";
  std::size_t oov = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    csv += corpus.sentence_ids[i];
    for (const auto& attr : attrs) csv += ',' + format_double(scores[i].per_attribute.at(attr));
    csv += ',' + format_double(scores[i].combined) + ',' + std::to_string(scores[i].oov_count) + '\n';
    oov += scores[i].oov_count;
  }
  write_file_atomic(sibling(a.out, ".csv"), csv);

  RunConfig rc{"scm-score"};
  rc.options = {{"corpus", a.corpus},
                {"table", a.table},
                {"attrs", attrs},
                {"p", a.p},
                {"negative_policy", to_string(cfg.negative_policy)},
                {"combine", to_string(cfg.combine)},
                {"weights", cfg.weights},
                {"min_support", cfg.min_support},
                {"out", a.out}};
  rc.tokenizer = tok;
  rc.workers = resolve_workers(common.workers);
  write_file_atomic(run_config_path(a.out), rc.to_json());

  out << "scored " << scores.size() << " sentences (" << oov << " OOV positions) to " << a.out
      << '\n';
  return 0;
}

// --- metrics ---------------------------------------------------------------

struct MetricsArgs {
  std::string generations;
  std::string classifier;
  bool prescored = false;
  std::string attr;
  double threshold = 0.5;
  std::string out;
};

int cmd_metrics(const MetricsArgs& a, const CommonOptions& common, std::ostream& out,
                std::ostream& err) {
  if (a.prescored == !a.classifier.empty()) {
    throw InputError("pass exactly one of --classifier or --prescored");
  }
  auto file = load_generations(a.generations);
  std::vector<GenerationRecord> records;
  std::string attr = a.attr;
  std::size_t empty_continuations = 0;
  if (a.prescored) {
    if (!file.raw.empty()) throw InputError("--prescored given but records carry no scores");
    records = std::move(file.scored);
  } else {
    if (!file.scored.empty()) throw InputError("records are already scored; use --prescored");
    const auto clf = make_classifier(a.classifier);
    if (attr.empty()) attr = clf->attributes().at(0);
    Diagnostics diag;
    ScoreRecordsStats stats;
    records = score_records(file.raw, *clf, attr, &stats, &diag, common.workers);
    empty_continuations = stats.empty_continuations;
    flush(diag, err);
  }

  const auto report = compute_metrics(records, a.threshold);
  write_file_atomic(a.out, metrics_report_json(report));
  write_file_atomic(sibling(a.out, ".csv"), metrics_report_csv(report));

  RunConfig rc{"metrics"};
  rc.options = {{"generations", a.generations},
                {"classifier", a.classifier},
                {"prescored", a.prescored},
                {"attr", attr},
                {"threshold", a.threshold},
                {"empty_continuations", empty_continuations},
                {"out", a.out}};
  rc.tokenizer = common.tokenizer();
  rc.workers = resolve_workers(common.workers);
  write_file_atomic(run_config_path(a.out), rc.to_json());

  out << "metrics over " << records.size() << " prompts (" << report.toxic.prompts << " toxic, "
      << report.nontoxic.prompts << " non-toxic) to " << a.out << '\n';
  return 0;
}

// --- bias-gap --------------------------------------------------------------

struct BiasGapArgs {
  std::string corpus;
  std::string baseline;
  std::string model;
  std::string lexicon;
  std::string out;
};

int cmd_bias_gap(const BiasGapArgs& a, const CommonOptions& common, std::ostream& out,
                 std::ostream& err) {
  Diagnostics diag;
  const auto tok = common.tokenizer();
  const auto corpus = load_corpus(a.corpus, tok, {}, &diag);
  const auto lexicon = GroupLexicon::load(a.lexicon, tok);
  const auto report =
      loss_gap(load_losses(a.baseline), load_losses(a.model), lexicon, corpus, &diag);
  flush(diag, err);

  write_file_atomic(a.out, loss_gap_json(report));
  write_file_atomic(sibling(a.out, ".csv"), loss_gap_csv(report));

  RunConfig rc{"bias-gap"};
  rc.options = {{"corpus", a.corpus},
                {"baseline_losses", a.baseline},
                {"model_losses", a.model},
                {"lexicon", a.lexicon},
                {"out", a.out}};
  rc.tokenizer = tok;
  rc.workers = resolve_workers(common.workers);
  write_file_atomic(run_config_path(a.out), rc.to_json());

  out << "loss gap over " << report.sentences << " sentences, " << report.groups.size()
      << " groups to " << a.out << '\n';
  return 0;
}

// --- ate-diff --------------------------------------------------------------

struct AteDiffArgs {
  std::string table_a;
  std::string table_b;
  std::string attr;
  double bucket_width = 0.05;
  double threshold = 0.2;
  std::string out;
};

int cmd_ate_diff(const AteDiffArgs& a, const CommonOptions& common, std::ostream& out,
                 std::ostream& err) {
  Diagnostics diag;
  const auto ta = load_ate_table(a.table_a);
  const auto tb = load_ate_table(a.table_b);
  const auto hist = ate_diff_histogram(ta, tb, a.attr, a.bucket_width, a.threshold, &diag);
  flush(diag, err);

  write_file_atomic(a.out, ate_diff_json(hist));
  write_file_atomic(sibling(a.out, ".csv"), ate_diff_csv(hist));

  RunConfig rc{"ate-diff"};
  rc.options = {{"table_a", a.table_a},          {"table_b", a.table_b},
                {"attr", a.attr},                {"bucket_width", a.bucket_width},
                {"threshold", a.threshold},      {"out", a.out}};
  rc.tokenizer = common.tokenizer();
  rc.workers = resolve_workers(common.workers);
  write_file_atomic(run_config_path(a.out), rc.to_json());

  out << hist.total << " shared tokens, " << hist.above_threshold << " differ by more than "
      << a.threshold << " (fraction " << hist.fraction_above << ")\n";
  return 0;
}

// --- testbed-gen -----------------------------------------------------------

struct TestbedArgs {
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> sentences;
  std::optional<double> rho;
  std::string out;
};

int cmd_testbed_gen(const TestbedArgs& a, const CommonOptions& common, std::ostream& out,
                    std::ostream&) {
  auto spec = a.spec.empty() ? testbed::PlantSpec{} : testbed::load_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  if (a.sentences) spec.sentences = *a.sentences;
  if (a.rho) spec.rho = *a.rho;
  spec.validate();

  const auto tb = testbed::generate_corpus(spec);
  const fs::path dir = a.out;
  write_corpus(dir / "corpus.jsonl", tb.corpus);
  write_file_atomic(dir / "manifest.jsonl", testbed::manifest_jsonl(tb.manifest));
  write_file_atomic(dir / "spec.json", testbed::spec_to_json(spec));

  RunConfig rc{"testbed-gen"};
  rc.options = {{"spec", a.spec}, {"resolved_spec", nlohmann::ordered_json::parse(testbed::spec_to_json(spec))},
                {"out", a.out}};
  rc.tokenizer = common.tokenizer();
  rc.workers = resolve_workers(common.workers);
  rc.seed = spec.seed;
  write_file_atomic(dir / "run_config.json", rc.to_json());

  out << "generated " << tb.corpus.size() << " sentences (co-occurrence "
      << testbed::measured_cooccurrence(tb.manifest) << ") in " << a.out << '\n';
  return 0;
}

// --- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string classifier;
  std::string mask_fill;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  std::shared_ptr<const ClassifierBackend> clf;
  std::shared_ptr<const MaskFillBackend> mf;
  if (!a.classifier.empty()) clf = make_classifier(a.classifier);
  if (!a.mask_fill.empty()) mf = make_mask_fill(a.mask_fill);
  if (!clf && !mf) throw InputError("serve needs --classifier and/or --maskfill");
  BackendServer server(clf, mf);
  server.start(a.host, a.port);  // port 0 picks a free one
  out << "serving on " << server.base_url() << std::endl;
  server.wait();
  return 0;
}

}  // namespace

std::shared_ptr<const ClassifierBackend> make_classifier(const std::string& spec) {
  if (starts_with(spec, "http://") || starts_with(spec, "https://")) {
    return std::make_shared<HttpClassifier>(spec, http_options_from_env());
  }
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "constant") {
    const auto parts = split_list(rest, ':');
    if (parts.empty()) throw InputError("constant classifier needs a value: constant:<p>");
    const double value = std::stod(parts[0]);
    if (parts.size() > 1) return std::make_shared<ConstantClassifier>(value, split_list(parts[1]));
    return std::make_shared<ConstantClassifier>(value);
  }
  if (kind == "stub") return std::make_shared<TableClassifier>(TableClassifier::from_json_file(rest));
  if (kind == "file") return std::make_shared<FileClassifier>(rest);
  if (kind == "oracle") return std::make_shared<testbed::OracleClassifier>(oracle_spec(rest));
  throw InputError("unknown classifier spec '" + spec + "'");
}

std::shared_ptr<const MaskFillBackend> make_mask_fill(const std::string& spec) {
  if (starts_with(spec, "http://") || starts_with(spec, "https://")) {
    return std::make_shared<HttpMaskFill>(spec, http_options_from_env());
  }
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "stub") return std::make_shared<StubMaskFill>(StubMaskFill::from_json_file(rest));
  if (kind == "oracle") return std::make_shared<testbed::OracleMaskFill>(oracle_spec(rest));
  throw InputError("unknown mask-fill spec '" + spec + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal token ATE tables, SCM sentence scores and toxicity metrics", "ctox"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonOptions common;

  AteBuildArgs build;
  auto* sub_build = app.add_subcommand("ate-build", "Build a per-token ATE table from a corpus");
  sub_build->add_option("corpus", build.corpus, "Corpus JSONL")->required();
  sub_build->add_option("--classifier", build.classifier, "Classifier backend spec")->required();
  sub_build->add_option("--maskfill", build.mask_fill, "Mask-fill backend spec")->required();
  sub_build->add_option("--attrs", build.attrs, "Comma-separated attributes (default: all)");
  sub_build->add_option("--top-k", build.top_k, "Replacement candidates per position")
      ->check(CLI::PositiveNumber);
  sub_build->add_flag("--uniform-weights", build.uniform, "Weight replacements equally");
  sub_build->add_option("--max-length", build.max_length, "Warn above this many tokens");
  sub_build->add_flag("--skip-bad", build.skip_bad, "Skip malformed corpus lines");
  sub_build->add_option("--corpus-id", build.corpus_id, "Corpus id recorded in the table");
  sub_build->add_option("--out", build.out, "Output ATE table")->required();
  add_common(sub_build, common);

  ScmArgs scm;
  auto* sub_scm = app.add_subcommand("scm-score", "Score sentences with the L_p SCM");
  sub_scm->add_option("corpus", scm.corpus, "Corpus JSONL")->required();
  sub_scm->add_option("--table", scm.table, "ATE table")->required();
  sub_scm->add_option("--attrs", scm.attrs, "Comma-separated attributes (default: table's)");
  sub_scm->add_option("--p", scm.p, "Norm order: 1, any p > 1, or inf");
  sub_scm->add_option("--negative-policy", scm.negative_policy, "signed | clamp_zero");
  sub_scm->add_option("--combine", scm.combine, "max | weighted_sum");
  sub_scm->add_option("--weights", scm.weights, "attr=w,... for weighted_sum");
  sub_scm->add_option("--min-support", scm.min_support, "Ignore entries with less support");
  sub_scm->add_option("--out", scm.out, "Output JSONL")->required();
  add_common(sub_scm, common);

  MetricsArgs met;
  auto* sub_met = app.add_subcommand("metrics", "Toxicity metrics over prompt completions");
  sub_met->add_option("generations", met.generations, "Generations JSONL")->required();
  sub_met->add_option("--classifier", met.classifier, "Classifier backend spec");
  sub_met->add_flag("--prescored", met.prescored, "Input already carries toxicity scores");
  sub_met->add_option("--attr", met.attr, "Attribute to score (default: classifier's first)");
  sub_met->add_option("--threshold", met.threshold, "Toxic prompt bucket threshold");
  sub_met->add_option("--out", met.out, "Output JSON report")->required();
  add_common(sub_met, common);

  BiasGapArgs gap;
  auto* sub_gap = app.add_subcommand("bias-gap", "Per-group LM loss gap against a baseline");
  sub_gap->add_option("corpus", gap.corpus, "Corpus JSONL")->required();
  sub_gap->add_option("--baseline-losses", gap.baseline, "Baseline losses JSONL")->required();
  sub_gap->add_option("--model-losses", gap.model, "Model losses JSONL")->required();
  sub_gap->add_option("--lexicon", gap.lexicon, "Group lexicon JSON")->required();
  sub_gap->add_option("--out", gap.out, "Output JSON report")->required();
  add_common(sub_gap, common);

  AteDiffArgs diff;
  auto* sub_diff = app.add_subcommand("ate-diff", "Histogram of |ATE_a - ATE_b|");
  sub_diff->add_option("table_a", diff.table_a, "First ATE table")->required();
  sub_diff->add_option("table_b", diff.table_b, "Second ATE table")->required();
  sub_diff->add_option("--attr", diff.attr, "Attribute to compare")->required();
  sub_diff->add_option("--bucket-width", diff.bucket_width, "Histogram bucket width")
      ->check(CLI::PositiveNumber);
  sub_diff->add_option("--threshold", diff.threshold, "Report the fraction above this");
  sub_diff->add_option("--out", diff.out, "Output JSON report")->required();
  add_common(sub_diff, common);

  TestbedArgs tb;
  auto* sub_tb = app.add_subcommand("testbed-gen", "Generate a planted synthetic corpus");
  sub_tb->add_option("--spec", tb.spec, "PlantSpec JSON (default spec when omitted)");
  sub_tb->add_option("--seed", tb.seed, "Override the spec's seed");
  sub_tb->add_option("--sentences", tb.sentences, "Override the sentence count");
  sub_tb->add_option("--rho", tb.rho, "Override the co-occurrence rate");
  sub_tb->add_option("--out", tb.out, "Output directory")->required();
  add_common(sub_tb, common);

  ServeArgs serve;
  auto* sub_serve = app.add_subcommand("serve", "Expose backends over the HTTP wire protocol");
  sub_serve->add_option("--classifier", serve.classifier, "Classifier backend spec");
  sub_serve->add_option("--maskfill", serve.mask_fill, "Mask-fill backend spec");
  sub_serve->add_option("--host", serve.host, "Bind address");
  sub_serve->add_option("--port", serve.port, "Port (0 picks a free one)");

  std::vector<std::string> argv_storage = {"ctox"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (sub_build->parsed()) return cmd_ate_build(build, common, out, err);
    if (sub_scm->parsed()) return cmd_scm_score(scm, common, out, err);
    if (sub_met->parsed()) return cmd_metrics(met, common, out, err);
    if (sub_gap->parsed()) return cmd_bias_gap(gap, common, out, err);
    if (sub_diff->parsed()) return cmd_ate_diff(diff, common, out, err);
    if (sub_tb->parsed()) return cmd_testbed_gen(tb, common, out, err);
    if (sub_serve->parsed()) return cmd_serve(serve, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ctox::cli
