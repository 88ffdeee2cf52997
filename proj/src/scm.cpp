#include "ctox/scm.hpp"

#include <algorithm>
#include <cmath>

#include "ctox/parallel.hpp"
#include "json.hpp"

namespace ctox {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double positive_part(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

void ScmConfig::validate() const {
  if (!(p >= 1.0)) throw InputError("norm order p must be >= 1");
  if (negative_policy == NegativePolicy::Signed && p != 1.0 && !is_max_norm()) {
    throw InputError("signed negative policy requires p = 1 or p = inf");
  }
  for (const auto& [attr, w] : weights) {
    if (!(w >= 0.0)) throw InputError("attribute weight for '" + attr + "' must be >= 0");
  }
}

std::string to_string(NegativePolicy policy) {
  return policy == NegativePolicy::Signed ? "signed" : "clamp_zero";
}

std::string to_string(AttributeCombine combine) {
  return combine == AttributeCombine::Max ? "max" : "weighted_sum";
}

NegativePolicy parse_negative_policy(const std::string& text) {
  if (text == "signed") return NegativePolicy::Signed;
  if (text == "clamp_zero" || text == "clamp") return NegativePolicy::ClampZero;
  throw InputError("unknown negative policy '" + text + "'");
}

AttributeCombine parse_attribute_combine(const std::string& text) {
  if (text == "max") return AttributeCombine::Max;
  if (text == "weighted_sum" || text == "sum") return AttributeCombine::WeightedSum;
  throw InputError("unknown attribute combine rule '" + text + "'");
}

double parse_norm_order(const std::string& text) {
  if (text == "inf" || text == "infinity" || text == "max") return kInf;
  try {
    std::size_t used = 0;
    const double p = std::stod(text, &used);
    if (used == text.size()) return p;
  } catch (const std::exception&) {
  }
  throw InputError("bad norm order '" + text + "'");
}

std::vector<double> ate_sequence(const TokenSequence& seq, const AteTable& table,
                                 const AttributeId& attribute, std::size_t min_support,
                                 std::size_t* oov_count) {
  std::vector<double> out;
  out.reserve(seq.size());
  for (const auto& tok : seq.tokens()) {
    if (auto ate = table.lookup(tok.str(), attribute, min_support)) {
      out.push_back(*ate);
    } else {
      out.push_back(0.0);
      if (oov_count) ++*oov_count;
    }
  }
  return out;
}

double aggregate_ates(std::span<const double> ates, const ScmConfig& cfg) {
  if (ates.empty()) return 0.0;
  const bool clamp = cfg.negative_policy == NegativePolicy::ClampZero;

  if (cfg.is_max_norm()) {
    double m = clamp ? 0.0 : -kInf;
    for (double a : ates) m = std::max(m, clamp ? positive_part(a) : a);
    return m;
  }
  if (cfg.p == 1.0) {
    double sum = 0.0;
    for (double a : ates) sum += clamp ? positive_part(a) : a;
    return sum;
  }
  double acc = 0.0;
  for (double a : ates) acc += std::pow(positive_part(a), cfg.p);
  return std::pow(acc, 1.0 / cfg.p);
}

std::vector<double> aggregate_ates_recursive(std::span<const double> ates, const ScmConfig& cfg) {
  const bool clamp = cfg.negative_policy == NegativePolicy::ClampZero;
  std::vector<double> trace;
  trace.reserve(ates.size());

  if (cfg.is_max_norm()) {
    // A_t = max(A_{t-1}, ATE(X_t))
    double a_prev = clamp ? 0.0 : -kInf;
    for (double a : ates) {
      a_prev = std::max(a_prev, clamp ? positive_part(a) : a);
      trace.push_back(a_prev);
    }
  } else if (cfg.p == 1.0) {
    // A_t = A_{t-1} + ATE(X_t)
    double a_prev = 0.0;
    for (double a : ates) {
      a_prev += clamp ? positive_part(a) : a;
      trace.push_back(a_prev);
    }
  } else {
    // A_t^p = A_{t-1}^p + ATE(X_t)^p
    double powered = 0.0;
    for (double a : ates) {
      powered += std::pow(positive_part(a), cfg.p);
      trace.push_back(std::pow(powered, 1.0 / cfg.p));
    }
  }
  return trace;
}

SentenceScore scm_score(const TokenSequence& seq, const AteTable& table,
                        const AttributeId& attribute, const ScmConfig& cfg) {
  cfg.validate();
  SentenceScore out;
  const auto ates = ate_sequence(seq, table, attribute, cfg.min_support, &out.oov_count);
  out.value = aggregate_ates(ates, cfg);
  return out;
}

std::vector<double> scm_score_recursive(const TokenSequence& seq, const AteTable& table,
                                        const AttributeId& attribute, const ScmConfig& cfg) {
  cfg.validate();
  return aggregate_ates_recursive(ate_sequence(seq, table, attribute, cfg.min_support), cfg);
}

double combine_attributes(const std::map<AttributeId, double>& per_attribute,
                          const ScmConfig& cfg) {
  if (per_attribute.empty()) throw InputError("no attributes to combine");
  if (cfg.combine == AttributeCombine::Max) {
    double m = -kInf;
    for (const auto& [attr, score] : per_attribute) m = std::max(m, score);
    return m;
  }
  double sum = 0.0;
  for (const auto& [attr, score] : per_attribute) {
    auto w = cfg.weights.find(attr);
    if (w == cfg.weights.end()) {
      throw InputError("weighted_sum needs a weight for attribute '" + attr + "'");
    }
    sum += w->second * score;
  }
  return sum;
}

AttributeScore scm_score_multi(const TokenSequence& seq, const AteTable& table,
                               const std::vector<AttributeId>& attributes, const ScmConfig& cfg) {
  if (attributes.empty()) throw InputError("scm_score_multi needs at least one attribute");
  cfg.validate();

  AttributeScore out;
  std::vector<bool> missing(seq.size(), false);
  for (const auto& attr : attributes) {
    std::vector<double> ates;
    ates.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (auto ate = table.lookup(seq[i].str(), attr, cfg.min_support)) {
        ates.push_back(*ate);
      } else {
        ates.push_back(0.0);
        missing[i] = true;
      }
    }
    out.per_attribute[attr] = aggregate_ates(ates, cfg);
  }
  out.combined = combine_attributes(out.per_attribute, cfg);
  out.oov_count = static_cast<std::size_t>(std::count(missing.begin(), missing.end(), true));
  return out;
}

std::vector<AttributeScore> batch_loss(const Corpus& corpus, const AteTable& table,
                                       const std::vector<AttributeId>& attributes,
                                       const ScmConfig& cfg, std::size_t workers) {
  cfg.validate();
  std::vector<AttributeScore> out(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    out[i] = scm_score_multi(corpus.sentences[i], table, attributes, cfg);
  });
  return out;
}

std::string batch_loss_jsonl(const Corpus& corpus, const std::vector<AttributeScore>& scores) {
  if (scores.size() != corpus.size()) throw InputError("score count does not match corpus");
  std::string out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [attr, v] : scores[i].per_attribute) per[attr] = v;
    nlohmann::ordered_json line = {{"id", corpus.sentence_ids[i]},
                                   {"per_attribute", per},
                                   {"combined", scores[i].combined},
                                   {"oov_count", scores[i].oov_count}};
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace ctox
