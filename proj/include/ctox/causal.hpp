#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctox/backend.hpp"
#include "ctox/core.hpp"

namespace ctox {

// The original sentence with one position swapped for a mask-fill candidate.
struct Counterfactual {
  TokenSequence sequence;
  double weight;
};

std::vector<Counterfactual> generate_counterfactuals(const TokenSequence& seq, std::size_t index,
                                                     const MaskFillBackend& mask_fill,
                                                     std::size_t top_k,
                                                     const MaskFillOptions& options = {});

struct TeRecord {
  std::string sentence_id;
  std::size_t position = 0;
  AttributeId attribute;
  double te = 0.0;
};

// f(s) minus the candidate-weighted mean of f(s') over counterfactuals at
// `index`. Both sides are scored on the space-joined token form.
TeRecord treatment_effect(const TokenSequence& seq, std::size_t index,
                          const ClassifierBackend& classifier, const MaskFillBackend& mask_fill,
                          const AttributeId& attribute, std::size_t top_k,
                          const MaskFillOptions& options = {});

struct AteEntry {
  double ate = 0.0;
  std::size_t support_count = 0;
  double te_sum = 0.0;

  friend bool operator==(const AteEntry&, const AteEntry&) = default;
};

struct AteProvenance {
  std::string corpus_id;
  std::string classifier_id;
  std::string mask_fill_id;
  std::size_t top_k = 0;
  bool uniform_weights = false;
  std::string tokenizer_digest;
  std::vector<AttributeId> attributes;

  friend bool operator==(const AteProvenance&, const AteProvenance&) = default;
};

// Per-(token, attribute) ATE lookup table.
class AteTable {
 public:
  using Key = std::pair<std::string, AttributeId>;

  static constexpr int kFormatVersion = 1;

  AteProvenance provenance;

  // Accumulates one TE sample.
  void add_sample(const std::string& token, const AttributeId& attribute, double te);

  // Stores a ready-made score, e.g. a published value. te_sum is derived.
  void set(const std::string& token, const AttributeId& attribute, double ate,
           std::size_t support_count = 1);

  // Stores an entry verbatim, as read back from a saved table.
  void set_entry(const std::string& token, const AttributeId& attribute, AteEntry entry);

  const AteEntry* find(const std::string& token, const AttributeId& attribute) const;

  // ATE if the token has an entry with at least min_support occurrences.
  std::optional<double> lookup(const std::string& token, const AttributeId& attribute,
                               std::size_t min_support = 1) const;

  const std::map<Key, AteEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  friend bool operator==(const AteTable&, const AteTable&) = default;

 private:
  std::map<Key, AteEntry> entries_;
};

struct AteBuildConfig {
  std::size_t top_k = 5;
  MaskFillOptions mask_fill;
  std::size_t workers = 0;
  // Sentences longer than this still count, with a warning.
  std::size_t max_length = 256;
  // Keep every TeRecord in the result.
  bool keep_records = false;
};

struct AteBuildStats {
  std::size_t sentences = 0;
  std::size_t positions = 0;
  std::size_t counterfactuals = 0;
  std::size_t long_sentences = 0;
  CacheStats classifier_cache;
  CacheStats mask_fill_cache;
  double wall_seconds = 0.0;
};

struct AteBuildResult {
  AteTable table;
  AteBuildStats stats;
  std::vector<TeRecord> records;  // corpus order, when requested
};

// Every occurrence of every token contributes one TE sample per attribute.
// Samples are summed in corpus order so results do not depend on the worker
// count.
AteBuildResult build_ate_table(const Corpus& corpus, const std::vector<AttributeId>& attributes,
                               const ClassifierBackend& classifier,
                               const MaskFillBackend& mask_fill, const AteBuildConfig& config = {},
                               const TokenizerConfig& tokenizer = {},
                               Diagnostics* diagnostics = nullptr);

// First line: JSON header with format version and provenance. Then one
// `token<TAB>attribute<TAB>ate<TAB>support_count<TAB>te_sum` row per entry.
std::string serialize_ate_table(const AteTable& table);
AteTable parse_ate_table(const std::string& content,
                         const std::optional<std::string>& expected_tokenizer_digest = std::nullopt,
                         Diagnostics* diagnostics = nullptr);

void save_ate_table(const std::filesystem::path& path, const AteTable& table);
AteTable load_ate_table(const std::filesystem::path& path,
                        const std::optional<std::string>& expected_tokenizer_digest = std::nullopt,
                        Diagnostics* diagnostics = nullptr);

}  // namespace ctox
