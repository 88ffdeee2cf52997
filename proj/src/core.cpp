#include "ctox/core.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctox {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::string ascii_lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

Token::Token(std::string surface) : surface_(std::move(surface)) {
  if (surface_.empty()) throw InputError("token must be non-empty");
  for (unsigned char c : surface_) {
    if (is_space(c)) throw InputError("token contains whitespace: '" + surface_ + "'");
  }
}

std::string TokenSequence::joined() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens_[i].str();
  }
  return out;
}

TokenSequence TokenSequence::prefix(std::size_t n) const {
  if (n > tokens_.size()) throw InputError("prefix longer than sequence");
  std::vector<Token> head(tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(n));
  TokenSequence out(std::move(head), {});
  out.source_text_ = out.joined();
  return out;
}

TokenSequence TokenSequence::with_replacement(std::size_t index, const Token& replacement) const {
  if (index >= tokens_.size()) throw InputError("replacement index out of range");
  auto tokens = tokens_;
  tokens[index] = replacement;
  TokenSequence out(std::move(tokens), {});
  out.source_text_ = out.joined();
  return out;
}

std::string tokenizer_digest(const TokenizerConfig& config) {
  nlohmann::json j = {{"lowercase", config.lowercase},
                      {"strip_punctuation", config.strip_punctuation},
                      {"token_pattern", config.token_pattern}};
  return sha256_hex(j.dump()).substr(0, 16);
}

Tokenizer::Tokenizer(TokenizerConfig config) : config_(std::move(config)) {
  if (!config_.token_pattern.empty()) {
    try {
      pattern_.emplace(config_.token_pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw InputError("invalid token_pattern '" + config_.token_pattern + "': " + e.what());
    }
  }
}

TokenSequence Tokenizer::operator()(std::string_view text) const {
  std::vector<Token> tokens;
  auto emit = [&](std::string piece) {
    if (piece.empty()) return;
    if (config_.lowercase) piece = ascii_lower(std::move(piece));
    tokens.emplace_back(std::move(piece));
  };

  if (pattern_) {
    const std::string owned(text);
    for (std::sregex_iterator it(owned.begin(), owned.end(), *pattern_), end; it != end; ++it) {
      // A pattern may match across whitespace; tokens never contain it.
      std::string piece;
      for (unsigned char c : it->str()) {
        if (is_space(c)) {
          emit(std::move(piece));
          piece.clear();
        } else {
          piece.push_back(static_cast<char>(c));
        }
      }
      emit(std::move(piece));
    }
  } else {
    std::string word;
    for (unsigned char c : text) {
      if (is_space(c)) {
        emit(std::move(word));
        word.clear();
      } else if (is_punct(c)) {
        emit(std::move(word));
        word.clear();
        if (!config_.strip_punctuation) emit(std::string(1, static_cast<char>(c)));
      } else {
        word.push_back(static_cast<char>(c));
      }
    }
    emit(std::move(word));
  }
  return TokenSequence(std::move(tokens), std::string(text));
}

TokenSequence tokenize(std::string_view text, const TokenizerConfig& config) {
  return Tokenizer(config)(text);
}

void Corpus::add(TokenSequence seq, std::string sentence_id) {
  sentences.push_back(std::move(seq));
  sentence_ids.push_back(std::move(sentence_id));
}

Corpus load_corpus(const std::filesystem::path& path, const TokenizerConfig& config,
                   const CorpusLoadOptions& options, Diagnostics* diagnostics) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file: " + path.string());

  Corpus corpus;
  corpus.id = options.corpus_id.value_or(path.stem().string());
  const Tokenizer tokenizer(config);

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::string problem;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      problem = "malformed JSON";
    } else if (!j.is_object()) {
      problem = "expected a JSON object";
    } else if (!j.contains("text") || !j["text"].is_string()) {
      problem = "missing string field \"text\"";
    } else if (j.contains("id") && !j["id"].is_string() && !j["id"].is_number_integer()) {
      problem = "field \"id\" must be a string";
    }

    if (!problem.empty()) {
      const std::string msg = path.string() + ": line " + std::to_string(line_no) + ": " + problem;
      if (!options.skip_bad) throw InputError(msg);
      if (diagnostics) diagnostics->warn("skipped " + msg);
      continue;
    }

    std::string id = std::to_string(line_no);
    if (j.contains("id")) id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    corpus.add(tokenizer(j["text"].get<std::string>()), std::move(id));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::string out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    nlohmann::json j = {{"id", corpus.sentence_ids[i]}, {"text", corpus.sentences[i].source_text()}};
    out += j.dump();
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

std::string sha256_hex(std::string_view text) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw InputError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error("format_double failed");
  return std::string(buf.data(), end);
}

}  // namespace ctox
