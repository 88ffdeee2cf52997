#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctox/core.hpp"

namespace ctox {

using AttributeId = std::string;

// The three toxicity attributes scored by default.
inline const std::vector<AttributeId>& default_attributes() {
  static const std::vector<AttributeId> kDefault = {"abuse", "hate", "offense"};
  return kDefault;
}

// Row per text, column per requested attribute.
using ScoreMatrix = std::vector<std::vector<double>>;

// Estimates P(attribute | text). Implementations must be safe to call from
// several threads at once and must return the same value for the same input
// within a run.
class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;

  virtual std::string id() const = 0;
  virtual std::vector<AttributeId> attributes() const = 0;
  virtual ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                         std::span<const AttributeId> attributes) const = 0;
};

// Validating front door for every classifier call: rejects attributes the
// backend does not declare and responses with the wrong shape or values
// outside [0, 1].
ScoreMatrix classify(const ClassifierBackend& backend, std::span<const std::string> texts,
                     std::span<const AttributeId> attributes);

double classify_one(const ClassifierBackend& backend, const std::string& text,
                    const AttributeId& attribute);

struct Candidate {
  Token token;
  double prob;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

// Proposes replacement words for a masked position. Returned candidates are
// raw: they may include the original token and need not be normalized.
class MaskFillBackend {
 public:
  virtual ~MaskFillBackend() = default;

  virtual std::string id() const = 0;
  virtual std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                            std::size_t top_k) const = 0;
};

struct MaskFillOptions {
  // Ignore model probabilities and weight every candidate equally.
  bool uniform_weights = false;
};

// At most top_k candidates, original token removed (case-insensitive),
// probabilities renormalized to sum to 1.
std::vector<Candidate> mask_fill(const MaskFillBackend& backend, const TokenSequence& seq,
                                 std::size_t index, std::size_t top_k,
                                 const MaskFillOptions& options = {});

// Read-through cache. A stored value is never replaced.
template <typename Value>
class ScoreCache {
 public:
  std::optional<Value> find(const std::string& key) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      misses_.fetch_add(1, std::memory_order_relaxed);
      return std::nullopt;
    }
    hits_.fetch_add(1, std::memory_order_relaxed);
    return it->second;
  }

  // Returns the value that ends up stored, which is the earlier one if
  // another writer got there first.
  Value insert(const std::string& key, Value value) {
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.try_emplace(key, std::move(value));
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Value> entries_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;

  double hit_rate() const {
    const auto total = hits + misses;
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }
};

// ---------------------------------------------------------------------------
// Classifier implementations

class ConstantClassifier final : public ClassifierBackend {
 public:
  ConstantClassifier(double value, std::vector<AttributeId> attributes = default_attributes());

  std::string id() const override;
  std::vector<AttributeId> attributes() const override { return attributes_; }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

 private:
  double value_;
  std::vector<AttributeId> attributes_;
};

// Fixed text -> attribute -> score table. Texts missing from the table get
// the default score, or fail when there is none.
class TableClassifier final : public ClassifierBackend {
 public:
  using Table = std::map<std::string, std::map<AttributeId, double>>;

  TableClassifier(std::string name, std::vector<AttributeId> attributes, Table table,
                  std::optional<double> default_score = std::nullopt);

  // {"name": s, "attributes": [...], "scores": {text: {attr: p}}, "default": p}
  static TableClassifier from_json_file(const std::filesystem::path& path);

  std::string id() const override { return "stub:" + name_; }
  std::vector<AttributeId> attributes() const override { return attributes_; }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

  const Table& table() const noexcept { return table_; }

 private:
  std::string name_;
  std::vector<AttributeId> attributes_;
  Table table_;
  std::optional<double> default_score_;
};

// Scores looked up by SHA-256 of the text from a TSV file of
// `text_digest<TAB>attribute<TAB>score` lines.
class FileClassifier final : public ClassifierBackend {
 public:
  explicit FileClassifier(const std::filesystem::path& path);

  std::string id() const override { return id_; }
  std::vector<AttributeId> attributes() const override { return attributes_; }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

 private:
  std::string id_;
  std::vector<AttributeId> attributes_;
  std::unordered_map<std::string, double> scores_;  // digest + '\t' + attribute
};

// Serializes a text-keyed table into the FileClassifier TSV format.
std::string to_score_tsv(const TableClassifier::Table& table);

// Per-(text, attribute) memoization in front of another classifier.
class CachingClassifier final : public ClassifierBackend {
 public:
  explicit CachingClassifier(std::shared_ptr<const ClassifierBackend> inner);

  std::string id() const override { return inner_->id(); }
  std::vector<AttributeId> attributes() const override { return inner_->attributes(); }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

  CacheStats stats() const { return {cache_.hits(), cache_.misses()}; }

 private:
  std::shared_ptr<const ClassifierBackend> inner_;
  mutable ScoreCache<double> cache_;
};

// ---------------------------------------------------------------------------
// Mask-fill implementations

// Candidates configured ahead of time, looked up first by (joined sentence,
// index), then by the original token, then a fallback list. Entries without
// probabilities are weighted equally.
class StubMaskFill final : public MaskFillBackend {
 public:
  using CandidateList = std::vector<Candidate>;

  explicit StubMaskFill(std::string name = "stub") : name_(std::move(name)) {}

  void add_context(const std::string& joined_text, std::size_t index, CandidateList list);
  void add_token(const std::string& token, CandidateList list);
  void set_fallback(CandidateList list) { fallback_ = std::move(list); }

  // {"name": s, "contexts": [{"text", "index", "candidates": [{"token", "prob"?}]}],
  //  "tokens": {token: [...]}, "fallback": [...]}
  static StubMaskFill from_json_file(const std::filesystem::path& path);

  std::string id() const override { return "stub:" + name_; }
  std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                    std::size_t top_k) const override;

 private:
  std::string name_;
  std::map<std::pair<std::string, std::size_t>, CandidateList> by_context_;
  std::map<std::string, CandidateList> by_token_;
  CandidateList fallback_;
};

// Memoizes mask-fill answers per (sentence, index, k) so a table build asks
// the model once per unique position.
class CachingMaskFill final : public MaskFillBackend {
 public:
  explicit CachingMaskFill(std::shared_ptr<const MaskFillBackend> inner);

  std::string id() const override { return inner_->id(); }
  std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                    std::size_t top_k) const override;

  CacheStats stats() const { return {cache_.hits(), cache_.misses()}; }

 private:
  std::shared_ptr<const MaskFillBackend> inner_;
  mutable ScoreCache<std::vector<Candidate>> cache_;
};

}  // namespace ctox
