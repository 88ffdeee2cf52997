#include "ctox/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ctox {

namespace {

bool iequals(const std::string& a, const std::string& b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::vector<Candidate> parse_candidates(const nlohmann::json& arr) {
  std::vector<Candidate> out;
  for (const auto& c : arr) {
    const double prob = c.contains("prob") ? c["prob"].get<double>() : 1.0;
    out.push_back({Token(c.at("token").get<std::string>()), prob});
  }
  return out;
}

}  // namespace

ScoreMatrix classify(const ClassifierBackend& backend, std::span<const std::string> texts,
                     std::span<const AttributeId> attributes) {
  const auto declared = backend.attributes();
  for (const auto& a : attributes) {
    if (std::find(declared.begin(), declared.end(), a) == declared.end()) {
      throw InputError("attribute '" + a + "' not supported by classifier " + backend.id());
    }
  }
  if (texts.empty()) return {};

  ScoreMatrix scores = backend.classify_unchecked(texts, attributes);
  if (scores.size() != texts.size()) {
    throw BackendError(backend.id() + ": expected " + std::to_string(texts.size()) +
                       " score rows, got " + std::to_string(scores.size()));
  }
  for (const auto& row : scores) {
    if (row.size() != attributes.size()) {
      throw BackendError(backend.id() + ": score row has wrong width");
    }
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw BackendError(backend.id() + ": probability outside [0,1]: " + std::to_string(p));
      }
    }
  }
  return scores;
}

double classify_one(const ClassifierBackend& backend, const std::string& text,
                    const AttributeId& attribute) {
  const std::string texts[] = {text};
  const AttributeId attrs[] = {attribute};
  return classify(backend, texts, attrs)[0][0];
}

std::vector<Candidate> mask_fill(const MaskFillBackend& backend, const TokenSequence& seq,
                                 std::size_t index, std::size_t top_k,
                                 const MaskFillOptions& options) {
  if (index >= seq.size()) {
    throw InputError("mask index " + std::to_string(index) + " out of range for sequence of length " +
                     std::to_string(seq.size()));
  }
  if (top_k == 0) throw InputError("top_k must be at least 1");

  // One extra so that dropping the original still leaves top_k.
  auto raw = backend.candidates(seq, index, top_k + 1);
  const std::string& original = seq[index].str();

  std::vector<Candidate> kept;
  std::set<std::string> seen;
  for (auto& c : raw) {
    if (!std::isfinite(c.prob) || c.prob <= 0.0) {
      throw BackendError(backend.id() + ": candidate '" + c.token.str() +
                         "' has non-positive probability");
    }
    if (iequals(c.token.str(), original)) continue;
    if (!seen.insert(c.token.str()).second) continue;
    kept.push_back(std::move(c));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
  if (kept.size() > top_k) kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(top_k), kept.end());

  if (options.uniform_weights) {
    for (auto& c : kept) c.prob = 1.0 / static_cast<double>(kept.size());
  } else {
    double total = 0.0;
    for (const auto& c : kept) total += c.prob;
    for (auto& c : kept) c.prob /= total;
  }
  return kept;
}

// ---------------------------------------------------------------------------

ConstantClassifier::ConstantClassifier(double value, std::vector<AttributeId> attributes)
    : value_(value), attributes_(std::move(attributes)) {
  if (!(value >= 0.0 && value <= 1.0)) throw InputError("constant score must lie in [0,1]");
}

std::string ConstantClassifier::id() const { return "constant:" + format_double(value_); }

ScoreMatrix ConstantClassifier::classify_unchecked(std::span<const std::string> texts,
                                                   std::span<const AttributeId> attributes) const {
  return ScoreMatrix(texts.size(), std::vector<double>(attributes.size(), value_));
}

TableClassifier::TableClassifier(std::string name, std::vector<AttributeId> attributes, Table table,
                                 std::optional<double> default_score)
    : name_(std::move(name)),
      attributes_(std::move(attributes)),
      table_(std::move(table)),
      default_score_(default_score) {}

TableClassifier TableClassifier::from_json_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad stub classifier file " + path.string() + ": " + e.what());
  }
  Table table;
  for (auto& [text, row] : j.at("scores").items()) {
    for (auto& [attr, p] : row.items()) table[text][attr] = p.get<double>();
  }
  std::optional<double> def;
  if (j.contains("default") && !j["default"].is_null()) def = j["default"].get<double>();
  return TableClassifier(j.value("name", path.stem().string()),
                         j.at("attributes").get<std::vector<AttributeId>>(), std::move(table), def);
}

ScoreMatrix TableClassifier::classify_unchecked(std::span<const std::string> texts,
                                                std::span<const AttributeId> attributes) const {
  ScoreMatrix out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    auto& row = out.emplace_back();
    auto it = table_.find(text);
    for (const auto& attr : attributes) {
      if (it != table_.end()) {
        if (auto a = it->second.find(attr); a != it->second.end()) {
          row.push_back(a->second);
          continue;
        }
      }
      if (!default_score_) {
        throw BackendError(id() + ": no score for '" + text + "' / " + attr);
      }
      row.push_back(*default_score_);
    }
  }
  return out;
}

FileClassifier::FileClassifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open score file: " + path.string());
  const std::string content = read_file(path);
  id_ = "file:" + sha256_hex(content).substr(0, 16);

  std::set<AttributeId> attrs;
  std::istringstream lines(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 3 columns");
    }
    const std::string digest = line.substr(0, t1);
    const std::string attr = line.substr(t1 + 1, t2 - t1 - 1);
    double score = 0.0;
    try {
      score = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": bad score");
    }
    attrs.insert(attr);
    scores_[digest + '\t' + attr] = score;
  }
  attributes_.assign(attrs.begin(), attrs.end());
}

ScoreMatrix FileClassifier::classify_unchecked(std::span<const std::string> texts,
                                               std::span<const AttributeId> attributes) const {
  ScoreMatrix out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    const std::string digest = sha256_hex(text);
    auto& row = out.emplace_back();
    for (const auto& attr : attributes) {
      auto it = scores_.find(digest + '\t' + attr);
      if (it == scores_.end()) {
        throw BackendError(id_ + ": no score for text '" + text + "' / " + attr);
      }
      row.push_back(it->second);
    }
  }
  return out;
}

std::string to_score_tsv(const TableClassifier::Table& table) {
  std::string out;
  for (const auto& [text, row] : table) {
    const std::string digest = sha256_hex(text);
    for (const auto& [attr, p] : row) {
      out += digest + '\t' + attr + '\t' + format_double(p) + '\n';
    }
  }
  return out;
}

CachingClassifier::CachingClassifier(std::shared_ptr<const ClassifierBackend> inner)
    : inner_(std::move(inner)) {}

ScoreMatrix CachingClassifier::classify_unchecked(std::span<const std::string> texts,
                                                  std::span<const AttributeId> attributes) const {
  ScoreMatrix out(texts.size(), std::vector<double>(attributes.size(), 0.0));

  // Collect misses per attribute and forward them in one batch each.
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    std::vector<std::string> missing_texts;
    std::vector<std::size_t> missing_rows;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::string key = attributes[a] + '\x1f' + texts[i];
      if (auto hit = cache_.find(key)) {
        out[i][a] = *hit;
      } else {
        missing_texts.push_back(texts[i]);
        missing_rows.push_back(i);
      }
    }
    if (missing_texts.empty()) continue;
    const AttributeId one[] = {attributes[a]};
    const auto fresh = classify(*inner_, missing_texts, one);
    for (std::size_t m = 0; m < missing_rows.size(); ++m) {
      const std::string key = attributes[a] + '\x1f' + missing_texts[m];
      out[missing_rows[m]][a] = cache_.insert(key, fresh[m][0]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void StubMaskFill::add_context(const std::string& joined_text, std::size_t index,
                               CandidateList list) {
  by_context_[{joined_text, index}] = std::move(list);
}

void StubMaskFill::add_token(const std::string& token, CandidateList list) {
  by_token_[token] = std::move(list);
}

StubMaskFill StubMaskFill::from_json_file(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad stub mask-fill file " + path.string() + ": " + e.what());
  }
  StubMaskFill stub(j.value("name", path.stem().string()));
  if (j.contains("contexts")) {
    for (const auto& c : j["contexts"]) {
      stub.add_context(c.at("text").get<std::string>(), c.at("index").get<std::size_t>(),
                       parse_candidates(c.at("candidates")));
    }
  }
  if (j.contains("tokens")) {
    for (auto& [tok, list] : j["tokens"].items()) stub.add_token(tok, parse_candidates(list));
  }
  if (j.contains("fallback")) stub.set_fallback(parse_candidates(j["fallback"]));
  return stub;
}

std::vector<Candidate> StubMaskFill::candidates(const TokenSequence& seq, std::size_t mask_index,
                                                std::size_t top_k) const {
  if (mask_index >= seq.size()) throw InputError("mask index out of range");
  const CandidateList* list = &fallback_;
  if (auto it = by_context_.find({seq.joined(), mask_index}); it != by_context_.end()) {
    list = &it->second;
  } else if (auto t = by_token_.find(seq[mask_index].str()); t != by_token_.end()) {
    list = &t->second;
  }
  CandidateList out(list->begin(), list->begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(top_k, list->size())));
  return out;
}

CachingMaskFill::CachingMaskFill(std::shared_ptr<const MaskFillBackend> inner)
    : inner_(std::move(inner)) {}

std::vector<Candidate> CachingMaskFill::candidates(const TokenSequence& seq,
                                                   std::size_t mask_index,
                                                   std::size_t top_k) const {
  const std::string key =
      std::to_string(mask_index) + '\x1f' + std::to_string(top_k) + '\x1f' + seq.joined();
  if (auto hit = cache_.find(key)) return *hit;
  return cache_.insert(key, inner_->candidates(seq, mask_index, top_k));
}

}  // namespace ctox
