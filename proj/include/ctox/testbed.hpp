#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctox/backend.hpp"
#include "ctox/core.hpp"

namespace ctox::testbed {

struct PlantedToken {
  std::string token;
  AttributeId attribute;
  double effect = 0.0;  // true contribution to the attribute, in [0, 1]
};

enum class OracleMode { Max, Sum };

// Recipe for a synthetic corpus in which protected tokens co-occur with
// causal tokens but never cause the attribute.
struct PlantSpec {
  std::size_t sentences = 500;
  std::size_t neutral_vocab = 200;
  std::vector<PlantedToken> causal = {
      {"stupid", "abuse", 0.85}, {"vermin", "hate", 0.9}, {"damn", "offense", 0.8}};
  std::vector<std::string> protected_tokens = {"gender1", "muslim", "women"};
  // P(a protected token is planted | sentence carries a causal token).
  double rho = 0.9;
  // Fraction of sentences that carry a causal token.
  double causal_rate = 0.5;
  // P(a protected token is planted | no causal token).
  double protected_base_rate = 0.1;
  std::size_t min_length = 5;
  std::size_t max_length = 12;
  std::uint64_t seed = 7;
  // Half-width of the seeded uniform noise added to oracle scores.
  double noise = 0.0;
  OracleMode mode = OracleMode::Max;
  // Number of neutral words the oracle mask-filler proposes.
  std::size_t fillers = 6;

  void validate() const;
  std::vector<AttributeId> attributes() const;
};

std::string spec_to_json(const PlantSpec& spec);
PlantSpec spec_from_json(const std::string& json);
PlantSpec load_spec(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::vector<std::string> causal_tokens;
  std::vector<std::string> protected_tokens;
  // Max over attributes of the oracle's score for the sentence.
  double oracle_score = 0.0;
  std::map<AttributeId, double> oracle_scores;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

std::string manifest_jsonl(const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

// Scores a text as the max (or capped sum) of the planted effects of its
// words for the attribute, plus optional seeded noise, clipped to [0, 1].
class OracleClassifier final : public ClassifierBackend {
 public:
  explicit OracleClassifier(PlantSpec spec);

  std::string id() const override;
  std::vector<AttributeId> attributes() const override { return spec_.attributes(); }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

  double score(const std::string& text, const AttributeId& attribute) const;
  // Score without noise, so the planted effect of a token is exact.
  double clean_score(const std::vector<std::string>& words, const AttributeId& attribute) const;
  double effect(const std::string& token, const AttributeId& attribute) const;
  double noise(const std::string& text, const AttributeId& attribute) const;

 private:
  PlantSpec spec_;
  std::map<std::pair<std::string, AttributeId>, double> effects_;
};

// Always proposes the same neutral words with fixed decreasing weights
// (fillers, fillers-1, ..., 1). Never proposes a causal token.
class OracleMaskFill final : public MaskFillBackend {
 public:
  explicit OracleMaskFill(const PlantSpec& spec);

  std::string id() const override { return id_; }
  std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                    std::size_t top_k) const override;

 private:
  std::string id_;
  std::vector<Candidate> pool_;
};

std::string neutral_word(std::size_t i);

struct Testbed {
  Corpus corpus;
  Manifest manifest;
};

// Seeded and single-threaded, so the output is reproducible bit for bit.
Testbed generate_corpus(const PlantSpec& spec);

// Fraction of sentences containing the token whose oracle score exceeds 0.5.
double conditional_toxicity(const Corpus& corpus, const Manifest& manifest,
                            const std::string& token);

// Fraction of causal sentences that also carry a protected token.
double measured_cooccurrence(const Manifest& manifest);

}  // namespace ctox::testbed
