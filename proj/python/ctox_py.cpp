#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ctox/analysis.hpp"
#include "ctox/causal.hpp"
#include "ctox/cli.hpp"
#include "ctox/http_backend.hpp"
#include "ctox/metrics.hpp"
#include "ctox/scm.hpp"
#include "ctox/testbed.hpp"

namespace py = pybind11;
using namespace ctox;

namespace {

// Lets Python classes act as classifiers. Calls may arrive from worker
// threads; PYBIND11_OVERRIDE_PURE takes the GIL.
class PyClassifier : public ClassifierBackend {
 public:
  std::string id() const override { PYBIND11_OVERRIDE_PURE(std::string, ClassifierBackend, id); }
  std::vector<AttributeId> attributes() const override {
    PYBIND11_OVERRIDE_PURE(std::vector<AttributeId>, ClassifierBackend, attributes);
  }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override {
    py::gil_scoped_acquire gil;
    py::function fn = py::get_override(static_cast<const ClassifierBackend*>(this), "classify");
    if (!fn) throw BackendError("Python classifier does not implement classify()");
    std::vector<std::string> t(texts.begin(), texts.end());
    std::vector<AttributeId> a(attributes.begin(), attributes.end());
    return fn(t, a).cast<ScoreMatrix>();
  }
};

class PyMaskFill : public MaskFillBackend {
 public:
  std::string id() const override { PYBIND11_OVERRIDE_PURE(std::string, MaskFillBackend, id); }
  std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                    std::size_t top_k) const override {
    py::gil_scoped_acquire gil;
    py::function fn = py::get_override(static_cast<const MaskFillBackend*>(this), "candidates");
    if (!fn) throw BackendError("Python mask-filler does not implement candidates()");
    std::vector<std::string> tokens;
    for (const auto& t : seq.tokens()) tokens.push_back(t.str());
    std::vector<Candidate> out;
    for (auto item : fn(tokens, mask_index, top_k)) {
      auto pair = item.cast<std::pair<std::string, double>>();
      out.push_back({Token(pair.first), pair.second});
    }
    return out;
  }
};

TokenizerConfig make_tokenizer(bool lowercase, bool strip_punctuation, std::string pattern) {
  return {lowercase, strip_punctuation, std::move(pattern)};
}

std::vector<std::string> token_strings(const TokenSequence& seq) {
  std::vector<std::string> out;
  for (const auto& t : seq.tokens()) out.push_back(t.str());
  return out;
}

py::dict values_dict(const MetricValues& v) {
  py::dict metrics;
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    const auto name = std::string(metric_name(metric_at(i)));
    if (v.values[i]) {
      metrics[py::str(name)] = *v.values[i];
    } else {
      metrics[py::str(name)] = py::none();
    }
  }
  py::dict out;
  out["prompts"] = v.prompts;
  out["completions"] = v.completions;
  out["metrics"] = metrics;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Causal token ATE tables, L_p SCM sentence scores and toxicity metrics";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<BackendError>(m, "BackendError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  // =========================================================================
  // Core
  // =========================================================================
  py::class_<TokenizerConfig>(m, "TokenizerConfig")
      .def(py::init(&make_tokenizer), py::arg("lowercase") = true,
           py::arg("strip_punctuation") = true, py::arg("token_pattern") = "")
      .def_readwrite("lowercase", &TokenizerConfig::lowercase)
      .def_readwrite("strip_punctuation", &TokenizerConfig::strip_punctuation)
      .def_readwrite("token_pattern", &TokenizerConfig::token_pattern)
      .def_property_readonly("digest", [](const TokenizerConfig& c) { return tokenizer_digest(c); });

  m.def("tokenize",
        [](const std::string& text, const TokenizerConfig& cfg) {
          return token_strings(tokenize(text, cfg));
        },
        py::arg("text"), py::arg("config") = TokenizerConfig{});

  py::class_<Corpus>(m, "Corpus")
      .def(py::init([](const std::vector<std::string>& texts, std::optional<std::vector<std::string>> ids,
                       const std::string& corpus_id, const TokenizerConfig& cfg) {
             if (ids && ids->size() != texts.size()) throw InputError("ids and texts differ in length");
             Corpus c;
             c.id = corpus_id;
             const Tokenizer tok(cfg);
             for (std::size_t i = 0; i < texts.size(); ++i) {
               c.add(tok(texts[i]), ids ? (*ids)[i] : std::to_string(i + 1));
             }
             return c;
           }),
           py::arg("texts"), py::arg("ids") = py::none(), py::arg("corpus_id") = "corpus",
           py::arg("tokenizer") = TokenizerConfig{})
      .def_static("load",
                  [](const std::filesystem::path& path, const TokenizerConfig& cfg, bool skip_bad) {
                    CorpusLoadOptions opts;
                    opts.skip_bad = skip_bad;
                    return load_corpus(path, cfg, opts);
                  },
                  py::arg("path"), py::arg("tokenizer") = TokenizerConfig{},
                  py::arg("skip_bad") = false)
      .def("save", [](const Corpus& c, const std::filesystem::path& p) { write_corpus(p, c); })
      .def_readonly("id", &Corpus::id)
      .def_readonly("sentence_ids", &Corpus::sentence_ids)
      .def("tokens", [](const Corpus& c, std::size_t i) { return token_strings(c.sentences.at(i)); })
      .def("__len__", &Corpus::size);

  // =========================================================================
  // Backends
  // =========================================================================
  py::class_<ClassifierBackend, PyClassifier, std::shared_ptr<ClassifierBackend>>(m, "ClassifierBackend")
      .def(py::init<>())
      .def("id", &ClassifierBackend::id)
      .def("attributes", &ClassifierBackend::attributes)
      .def("classify",
           [](const ClassifierBackend& b, const std::vector<std::string>& texts,
              const std::vector<AttributeId>& attrs) { return classify(b, texts, attrs); },
           py::arg("texts"), py::arg("attributes"));

  py::class_<ConstantClassifier, ClassifierBackend, std::shared_ptr<ConstantClassifier>>(
      m, "ConstantClassifier")
      .def(py::init<double, std::vector<AttributeId>>(), py::arg("value"),
           py::arg("attributes") = default_attributes());

  py::class_<TableClassifier, ClassifierBackend, std::shared_ptr<TableClassifier>>(m, "TableClassifier")
      .def(py::init<std::string, std::vector<AttributeId>, TableClassifier::Table, std::optional<double>>(),
           py::arg("name"), py::arg("attributes"), py::arg("table"),
           py::arg("default_score") = py::none())
      .def_static("from_json_file", &TableClassifier::from_json_file);

  py::class_<FileClassifier, ClassifierBackend, std::shared_ptr<FileClassifier>>(m, "FileClassifier")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"));

  py::class_<HttpClassifier, ClassifierBackend, std::shared_ptr<HttpClassifier>>(m, "HttpClassifier")
      .def(py::init([](std::string url, std::vector<AttributeId> attrs) {
             HttpOptions opts = http_options_from_env();
             opts.attributes = std::move(attrs);
             return std::make_shared<HttpClassifier>(std::move(url), opts);
           }),
           py::arg("base_url"), py::arg("attributes") = default_attributes());

  py::class_<MaskFillBackend, PyMaskFill, std::shared_ptr<MaskFillBackend>>(m, "MaskFillBackend")
      .def(py::init<>())
      .def("id", &MaskFillBackend::id)
      .def("mask_fill",
           [](const MaskFillBackend& b, const std::vector<std::string>& tokens, std::size_t index,
              std::size_t top_k, bool uniform) {
             std::vector<Token> toks(tokens.begin(), tokens.end());
             TokenSequence seq(std::move(toks), {});
             std::vector<std::pair<std::string, double>> out;
             for (const auto& c : mask_fill(b, seq, index, top_k, {uniform})) {
               out.emplace_back(c.token.str(), c.prob);
             }
             return out;
           },
           py::arg("tokens"), py::arg("index"), py::arg("top_k") = 5,
           py::arg("uniform_weights") = false);

  py::class_<StubMaskFill, MaskFillBackend, std::shared_ptr<StubMaskFill>>(m, "StubMaskFill")
      .def(py::init<std::string>(), py::arg("name") = "stub")
      .def("add_token",
           [](StubMaskFill& s, const std::string& token,
              const std::vector<std::pair<std::string, double>>& list) {
             StubMaskFill::CandidateList c;
             for (const auto& [t, p] : list) c.push_back({Token(t), p});
             s.add_token(token, std::move(c));
           })
      .def("add_context",
           [](StubMaskFill& s, const std::string& text, std::size_t index,
              const std::vector<std::pair<std::string, double>>& list) {
             StubMaskFill::CandidateList c;
             for (const auto& [t, p] : list) c.push_back({Token(t), p});
             s.add_context(text, index, std::move(c));
           })
      .def_static("from_json_file", &StubMaskFill::from_json_file);

  py::class_<HttpMaskFill, MaskFillBackend, std::shared_ptr<HttpMaskFill>>(m, "HttpMaskFill")
      .def(py::init([](std::string url) {
             return std::make_shared<HttpMaskFill>(std::move(url), http_options_from_env());
           }),
           py::arg("base_url"));

  m.def("http_health", [](const std::string& url) { return http_health(url); }, py::arg("base_url"));

  // =========================================================================
  // ATE
  // =========================================================================
  py::class_<AteEntry>(m, "AteEntry")
      .def_readonly("ate", &AteEntry::ate)
      .def_readonly("support_count", &AteEntry::support_count)
      .def_readonly("te_sum", &AteEntry::te_sum);

  py::class_<AteTable>(m, "AteTable")
      .def(py::init<>())
      .def("set", &AteTable::set, py::arg("token"), py::arg("attribute"), py::arg("ate"),
           py::arg("support_count") = 1)
      .def("lookup", &AteTable::lookup, py::arg("token"), py::arg("attribute"),
           py::arg("min_support") = 1)
      .def("entries",
           [](const AteTable& t) {
             py::dict out;
             for (const auto& [key, e] : t.entries()) out[py::make_tuple(key.first, key.second)] = e;
             return out;
           })
      .def_property_readonly("attributes", [](const AteTable& t) { return t.provenance.attributes; })
      .def_property_readonly("corpus_id", [](const AteTable& t) { return t.provenance.corpus_id; })
      .def_property_readonly("top_k", [](const AteTable& t) { return t.provenance.top_k; })
      .def("save", [](const AteTable& t, const std::filesystem::path& p) { save_ate_table(p, t); })
      .def_static("load", [](const std::filesystem::path& p) { return load_ate_table(p); })
      .def("__len__", &AteTable::size)
      .def("__eq__", [](const AteTable& a, const AteTable& b) { return a == b; });

  m.def("treatment_effect",
        [](const std::vector<std::string>& tokens, std::size_t index, const ClassifierBackend& clf,
           const MaskFillBackend& mf, const AttributeId& attr, std::size_t top_k) {
          std::vector<Token> toks(tokens.begin(), tokens.end());
          TokenSequence seq(std::move(toks), {});
          py::gil_scoped_release release;
          return treatment_effect(seq, index, clf, mf, attr, top_k).te;
        },
        py::arg("tokens"), py::arg("index"), py::arg("classifier"), py::arg("mask_fill"),
        py::arg("attribute"), py::arg("top_k") = 5);

  m.def("build_ate_table",
        [](const Corpus& corpus, const std::vector<AttributeId>& attrs, const ClassifierBackend& clf,
           const MaskFillBackend& mf, std::size_t top_k, bool uniform, std::size_t workers) {
          AteBuildConfig cfg;
          cfg.top_k = top_k;
          cfg.mask_fill.uniform_weights = uniform;
          cfg.workers = workers;
          py::gil_scoped_release release;
          return build_ate_table(corpus, attrs, clf, mf, cfg).table;
        },
        py::arg("corpus"), py::arg("attributes"), py::arg("classifier"), py::arg("mask_fill"),
        py::arg("top_k") = 5, py::arg("uniform_weights") = false, py::arg("workers") = 1);

  // =========================================================================
  // SCM
  // =========================================================================
  py::enum_<NegativePolicy>(m, "NegativePolicy")
      .value("SIGNED", NegativePolicy::Signed)
      .value("CLAMP_ZERO", NegativePolicy::ClampZero);
  py::enum_<AttributeCombine>(m, "AttributeCombine")
      .value("MAX", AttributeCombine::Max)
      .value("WEIGHTED_SUM", AttributeCombine::WeightedSum);

  py::class_<ScmConfig>(m, "ScmConfig")
      .def(py::init([](double p, NegativePolicy policy, AttributeCombine combine,
                       std::map<AttributeId, double> weights, std::size_t min_support) {
             ScmConfig c{p, policy, combine, std::move(weights), min_support};
             c.validate();
             return c;
           }),
           py::arg("p") = std::numeric_limits<double>::infinity(),
           py::arg("negative_policy") = NegativePolicy::Signed,
           py::arg("combine") = AttributeCombine::Max,
           py::arg("weights") = std::map<AttributeId, double>{}, py::arg("min_support") = 1)
      .def_readwrite("p", &ScmConfig::p)
      .def_readwrite("negative_policy", &ScmConfig::negative_policy)
      .def_readwrite("combine", &ScmConfig::combine)
      .def_readwrite("weights", &ScmConfig::weights)
      .def_readwrite("min_support", &ScmConfig::min_support);

  py::class_<AttributeScore>(m, "AttributeScore")
      .def_readonly("per_attribute", &AttributeScore::per_attribute)
      .def_readonly("combined", &AttributeScore::combined)
      .def_readonly("oov_count", &AttributeScore::oov_count);

  m.def("scm_score",
        [](const std::vector<std::string>& tokens, const AteTable& table, const AttributeId& attr,
           const ScmConfig& cfg) {
          std::vector<Token> toks(tokens.begin(), tokens.end());
          return scm_score(TokenSequence(std::move(toks), {}), table, attr, cfg).value;
        },
        py::arg("tokens"), py::arg("table"), py::arg("attribute"), py::arg("config") = ScmConfig{});

  m.def("scm_score_recursive",
        [](const std::vector<std::string>& tokens, const AteTable& table, const AttributeId& attr,
           const ScmConfig& cfg) {
          std::vector<Token> toks(tokens.begin(), tokens.end());
          return scm_score_recursive(TokenSequence(std::move(toks), {}), table, attr, cfg);
        },
        py::arg("tokens"), py::arg("table"), py::arg("attribute"), py::arg("config") = ScmConfig{});

  m.def("scm_score_multi",
        [](const std::vector<std::string>& tokens, const AteTable& table,
           const std::vector<AttributeId>& attrs, const ScmConfig& cfg) {
          std::vector<Token> toks(tokens.begin(), tokens.end());
          return scm_score_multi(TokenSequence(std::move(toks), {}), table, attrs, cfg);
        },
        py::arg("tokens"), py::arg("table"), py::arg("attributes"), py::arg("config") = ScmConfig{});

  m.def("batch_loss", &batch_loss, py::arg("corpus"), py::arg("table"), py::arg("attributes"),
        py::arg("config") = ScmConfig{}, py::arg("workers") = 1,
        py::call_guard<py::gil_scoped_release>());

  // =========================================================================
  // Metrics
  // =========================================================================
  py::class_<Completion>(m, "Completion")
      .def(py::init([](double toxicity, double ctoxicity, std::string text, std::string continuation) {
             return Completion{std::move(text), toxicity, std::move(continuation), ctoxicity};
           }),
           py::arg("toxicity"), py::arg("ctoxicity"), py::arg("text") = "",
           py::arg("continuation") = "")
      .def_readwrite("toxicity", &Completion::toxicity)
      .def_readwrite("ctoxicity", &Completion::ctoxicity)
      .def_readwrite("full_text", &Completion::full_text)
      .def_readwrite("continuation_text", &Completion::continuation_text);

  py::class_<GenerationRecord>(m, "GenerationRecord")
      .def(py::init([](double prompt_toxicity, std::vector<Completion> completions, std::string prompt,
                       std::string id) {
             return GenerationRecord{std::move(id), std::move(prompt), prompt_toxicity,
                                     std::move(completions)};
           }),
           py::arg("prompt_toxicity"), py::arg("completions"), py::arg("prompt") = "",
           py::arg("id") = "")
      .def_readwrite("prompt_toxicity", &GenerationRecord::prompt_toxicity)
      .def_readwrite("completions", &GenerationRecord::completions);

  m.def("metric_names", [] {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < kMetricCount; ++i) out.emplace_back(metric_name(metric_at(i)));
    return out;
  });

  m.def("compute_metrics",
        [](const std::vector<GenerationRecord>& records, double threshold) {
          const auto r = compute_metrics(records, threshold);
          py::dict out;
          out["threshold"] = r.threshold;
          out["toxic"] = values_dict(r.toxic);
          out["nontoxic"] = values_dict(r.nontoxic);
          out["overall"] = values_dict(r.overall);
          return out;
        },
        py::arg("records"), py::arg("threshold") = 0.5);

  // =========================================================================
  // Analysis
  // =========================================================================
  m.def("ate_diff_fraction",
        [](const AteTable& a, const AteTable& b, const AttributeId& attr, double width,
           double threshold) {
          const auto h = ate_diff_histogram(a, b, attr, width, threshold);
          return py::make_tuple(h.counts, h.fraction_above);
        },
        py::arg("a"), py::arg("b"), py::arg("attribute"), py::arg("bucket_width") = 0.05,
        py::arg("threshold") = 0.2);

  // =========================================================================
  // Testbed
  // =========================================================================
  py::module_ tb = m.def_submodule("testbed", "Planted synthetic corpora with oracle backends");
  py::class_<testbed::PlantSpec>(tb, "PlantSpec")
      .def(py::init<>())
      .def_static("from_json", &testbed::spec_from_json)
      .def("to_json", &testbed::spec_to_json)
      .def_readwrite("sentences", &testbed::PlantSpec::sentences)
      .def_readwrite("rho", &testbed::PlantSpec::rho)
      .def_readwrite("seed", &testbed::PlantSpec::seed)
      .def_readwrite("noise", &testbed::PlantSpec::noise)
      .def_readwrite("protected_tokens", &testbed::PlantSpec::protected_tokens)
      .def("attributes", &testbed::PlantSpec::attributes);

  py::class_<testbed::OracleClassifier, ClassifierBackend, std::shared_ptr<testbed::OracleClassifier>>(
      tb, "OracleClassifier")
      .def(py::init<testbed::PlantSpec>());
  py::class_<testbed::OracleMaskFill, MaskFillBackend, std::shared_ptr<testbed::OracleMaskFill>>(
      tb, "OracleMaskFill")
      .def(py::init<const testbed::PlantSpec&>());

  tb.def("generate",
         [](const testbed::PlantSpec& spec) {
           auto out = testbed::generate_corpus(spec);
           return py::make_tuple(out.corpus, testbed::manifest_jsonl(out.manifest));
         },
         py::arg("spec"), "Returns (Corpus, manifest JSONL text)");
  tb.def("conditional_toxicity",
         [](const testbed::PlantSpec& spec, const std::string& token) {
           const auto out = testbed::generate_corpus(spec);
           return testbed::conditional_toxicity(out.corpus, out.manifest, token);
         },
         py::arg("spec"), py::arg("token"));

  // =========================================================================
  // CLI
  // =========================================================================
  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a ctox subcommand; returns (exit_code, stdout, stderr)");
}
