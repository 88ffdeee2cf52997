#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctox/error.hpp"

namespace ctox {

// A normalized word. Never empty, never contains whitespace.
class Token {
 public:
  explicit Token(std::string surface);

  const std::string& str() const noexcept { return surface_; }

  friend bool operator==(const Token&, const Token&) = default;
  friend auto operator<=>(const Token&, const Token&) = default;

 private:
  std::string surface_;
};

struct TokenizerConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
  // When non-empty, tokens are the regex matches instead of the default
  // whitespace/punctuation split.
  std::string token_pattern;

  friend bool operator==(const TokenizerConfig&, const TokenizerConfig&) = default;
};

// Stable hex digest of the config; stored in ATE tables so that tables built
// under different normalization can be detected.
std::string tokenizer_digest(const TokenizerConfig& config);

class TokenSequence {
 public:
  TokenSequence() = default;
  TokenSequence(std::vector<Token> tokens, std::string source_text)
      : tokens_(std::move(tokens)), source_text_(std::move(source_text)) {}

  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  const std::string& source_text() const noexcept { return source_text_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const Token& operator[](std::size_t i) const { return tokens_[i]; }

  // Tokens joined with single spaces. This is the text handed to
  // classifiers, for originals and counterfactuals alike.
  std::string joined() const;

  // First n tokens. The prefix's source text is its joined form.
  TokenSequence prefix(std::size_t n) const;

  // Copy with position index swapped for replacement.
  TokenSequence with_replacement(std::size_t index, const Token& replacement) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;

 private:
  std::vector<Token> tokens_;
  std::string source_text_;
};

// Compiled tokenizer. Construct once and reuse when tokenizing many texts.
class Tokenizer {
 public:
  explicit Tokenizer(TokenizerConfig config = {});

  TokenSequence operator()(std::string_view text) const;
  const TokenizerConfig& config() const noexcept { return config_; }

 private:
  TokenizerConfig config_;
  std::optional<std::regex> pattern_;
};

TokenSequence tokenize(std::string_view text, const TokenizerConfig& config = {});

struct Corpus {
  std::string id;
  std::vector<TokenSequence> sentences;
  // Per-sentence ids, parallel to sentences. Taken from the "id" field when
  // present, otherwise the 1-based line number.
  std::vector<std::string> sentence_ids;

  std::size_t size() const noexcept { return sentences.size(); }
  bool empty() const noexcept { return sentences.empty(); }
  void add(TokenSequence seq, std::string sentence_id);

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CorpusLoadOptions {
  bool skip_bad = false;
  std::optional<std::string> corpus_id;  // defaults to the file stem
};

// One JSON object per line with a "text" field. Blank lines are ignored.
Corpus load_corpus(const std::filesystem::path& path, const TokenizerConfig& config,
                   const CorpusLoadOptions& options = {}, Diagnostics* diagnostics = nullptr);

void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

// Lowercase hex SHA-256 of the bytes of text.
std::string sha256_hex(std::string_view text);

// Writes content to path via a sibling temporary file and rename, so a
// failed run never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace ctox

template <>
struct std::hash<ctox::Token> {
  std::size_t operator()(const ctox::Token& t) const noexcept {
    return std::hash<std::string>{}(t.str());
  }
};
