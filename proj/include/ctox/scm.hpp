#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctox/causal.hpp"

namespace ctox {

// How negative token ATEs enter the norm.
//   Signed: p = 1 is the plain running sum, p = inf the plain running max.
//           Only defined for those two orders.
//   ClampZero: negatives count as 0; any p >= 1.
enum class NegativePolicy { Signed, ClampZero };

enum class AttributeCombine { Max, WeightedSum };

struct ScmConfig {
  double p = std::numeric_limits<double>::infinity();
  NegativePolicy negative_policy = NegativePolicy::Signed;
  AttributeCombine combine = AttributeCombine::Max;
  std::map<AttributeId, double> weights;
  // Table entries backed by fewer occurrences are treated as missing.
  std::size_t min_support = 1;

  bool is_max_norm() const { return p == std::numeric_limits<double>::infinity(); }
  // Throws InputError when the combination is not meaningful.
  void validate() const;
};

std::string to_string(NegativePolicy policy);
std::string to_string(AttributeCombine combine);
NegativePolicy parse_negative_policy(const std::string& text);
AttributeCombine parse_attribute_combine(const std::string& text);
// Accepts "1", "2.5", "inf".
double parse_norm_order(const std::string& text);

// Sentence score plus the number of positions whose token had no usable entry
// (those positions contribute ATE 0).
struct SentenceScore {
  double value = 0.0;
  std::size_t oov_count = 0;
};

// Per-position ATEs for one attribute, 0 for missing tokens.
std::vector<double> ate_sequence(const TokenSequence& seq, const AteTable& table,
                                 const AttributeId& attribute, std::size_t min_support,
                                 std::size_t* oov_count = nullptr);

// Closed-form norm of a list of ATEs under cfg.
double aggregate_ates(std::span<const double> ates, const ScmConfig& cfg);

// A_1 ... A_n computed one token at a time.
std::vector<double> aggregate_ates_recursive(std::span<const double> ates, const ScmConfig& cfg);

SentenceScore scm_score(const TokenSequence& seq, const AteTable& table,
                        const AttributeId& attribute, const ScmConfig& cfg);

std::vector<double> scm_score_recursive(const TokenSequence& seq, const AteTable& table,
                                        const AttributeId& attribute, const ScmConfig& cfg);

struct AttributeScore {
  std::map<AttributeId, double> per_attribute;
  double combined = 0.0;
  // Positions whose token is missing for at least one requested attribute.
  std::size_t oov_count = 0;

  friend bool operator==(const AttributeScore&, const AttributeScore&) = default;
};

double combine_attributes(const std::map<AttributeId, double>& per_attribute,
                          const ScmConfig& cfg);

AttributeScore scm_score_multi(const TokenSequence& seq, const AteTable& table,
                               const std::vector<AttributeId>& attributes, const ScmConfig& cfg);

// Element i scores sentence i.
std::vector<AttributeScore> batch_loss(const Corpus& corpus, const AteTable& table,
                                       const std::vector<AttributeId>& attributes,
                                       const ScmConfig& cfg, std::size_t workers = 1);

// JSONL lines {"id", "per_attribute", "combined", "oov_count"}.
std::string batch_loss_jsonl(const Corpus& corpus, const std::vector<AttributeScore>& scores);

}  // namespace ctox
