#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctox/causal.hpp"

namespace ctox {

// Protected-group term lists, normalized with the active tokenizer. A term
// that normalizes to several tokens matches a sentence containing all of them.
class GroupLexicon {
 public:
  using Term = std::vector<std::string>;

  GroupLexicon() = default;
  GroupLexicon(const std::map<std::string, std::vector<std::string>>& raw,
               const TokenizerConfig& config);

  // JSON object {group: [terms]}.
  static GroupLexicon load(const std::filesystem::path& path, const TokenizerConfig& config);

  const std::map<std::string, std::vector<Term>>& groups() const noexcept { return groups_; }
  bool matches(const std::string& group, const TokenSequence& seq) const;

 private:
  std::map<std::string, std::vector<Term>> groups_;
};

// id -> per-sentence LM loss, from JSONL {"id", "loss"}.
using LossTable = std::map<std::string, double>;
LossTable load_losses(const std::filesystem::path& path);

struct GroupGap {
  std::string group;
  std::size_t sentences = 0;
  std::optional<double> mean_gap;  // empty when no sentence is in the group
};

struct LossGapReport {
  std::vector<GroupGap> groups;  // sorted by group name
  GroupGap out_of_group;         // sentences matching no group
  std::size_t sentences = 0;
};

// gap = model loss - baseline loss per sentence, averaged per group. A
// sentence counts toward every group it matches.
LossGapReport loss_gap(const LossTable& baseline, const LossTable& model,
                       const GroupLexicon& lexicon, const Corpus& corpus,
                       Diagnostics* diagnostics = nullptr);

std::string loss_gap_json(const LossGapReport& report);
std::string loss_gap_csv(const LossGapReport& report);

struct AteDiffHistogram {
  AttributeId attribute;
  double bucket_width = 0.0;
  double threshold = 0.0;
  std::map<std::size_t, std::size_t> counts;  // bucket index -> tokens
  std::size_t total = 0;                      // tokens in both tables
  std::size_t above_threshold = 0;
  double fraction_above = 0.0;
  // Per-token |difference|, keyed by token.
  std::map<std::string, double> diffs;

  std::size_t bucket_of(const std::string& token) const;
};

// |ATE_a - ATE_b| over tokens present in both tables for `attribute`, bucketed
// as [i*width, (i+1)*width).
AteDiffHistogram ate_diff_histogram(const AteTable& a, const AteTable& b,
                                    const AttributeId& attribute, double bucket_width,
                                    double threshold = 0.2, Diagnostics* diagnostics = nullptr);

std::string ate_diff_json(const AteDiffHistogram& hist);
// bucket_low,bucket_high,count for every bucket from 0 to the highest used.
std::string ate_diff_csv(const AteDiffHistogram& hist);

}  // namespace ctox
