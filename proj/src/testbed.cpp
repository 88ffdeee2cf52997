#include "ctox/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"

namespace ctox::testbed {

namespace {

using nlohmann::json;

// std distributions are implementation-defined; these mappings are not.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<std::string> split_words(const std::string& text) {
  const TokenSequence seq = tokenize(text);
  std::vector<std::string> out;
  for (const auto& t : seq.tokens()) out.push_back(t.str());
  return out;
}

}  // namespace

std::string neutral_word(std::size_t i) { return "w" + std::to_string(i); }

void PlantSpec::validate() const {
  if (sentences == 0) throw InputError("testbed needs at least one sentence");
  if (causal.empty()) throw InputError("testbed needs at least one causal token");
  if (min_length == 0 || min_length > max_length) throw InputError("bad sentence length range");
  if (min_length < 2) throw InputError("min_length must leave room for a planted pair");
  if (neutral_vocab < max_length) {
    throw InputError("vocabulary too small: " + std::to_string(neutral_vocab) +
                     " neutral words for sentences of up to " + std::to_string(max_length) +
                     " tokens");
  }
  if (fillers == 0 || fillers > neutral_vocab) throw InputError("fillers must be in [1, neutral_vocab]");
  for (double p : {rho, causal_rate, protected_base_rate}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("testbed rates must lie in [0,1]");
  }
  if (!(noise >= 0.0 && noise <= 0.5)) throw InputError("noise must lie in [0, 0.5]");

  std::set<std::string> causal_words;
  for (const auto& c : causal) {
    if (!(c.effect >= 0.0 && c.effect <= 1.0)) throw InputError("effect must lie in [0,1]");
    if (tokenize(c.token).size() != 1 || tokenize(c.token)[0].str() != c.token) {
      throw InputError("planted token '" + c.token + "' is not a single normalized word");
    }
    causal_words.insert(c.token);
  }
  for (const auto& p : protected_tokens) {
    if (causal_words.count(p)) throw InputError("token '" + p + "' is both causal and protected");
    if (tokenize(p).size() != 1 || tokenize(p)[0].str() != p) {
      throw InputError("protected token '" + p + "' is not a single normalized word");
    }
  }
  for (std::size_t i = 0; i < neutral_vocab; ++i) {
    const auto w = neutral_word(i);
    if (causal_words.count(w) ||
        std::find(protected_tokens.begin(), protected_tokens.end(), w) != protected_tokens.end()) {
      throw InputError("planted token '" + w + "' collides with the neutral vocabulary");
    }
  }
}

std::vector<AttributeId> PlantSpec::attributes() const {
  std::vector<AttributeId> out;
  for (const auto& c : causal) {
    if (std::find(out.begin(), out.end(), c.attribute) == out.end()) out.push_back(c.attribute);
  }
  return out;
}

std::string spec_to_json(const PlantSpec& spec) {
  json causal = json::array();
  for (const auto& c : spec.causal) {
    causal.push_back({{"token", c.token}, {"attribute", c.attribute}, {"effect", c.effect}});
  }
  nlohmann::ordered_json j = {{"sentences", spec.sentences},
                              {"neutral_vocab", spec.neutral_vocab},
                              {"causal", causal},
                              {"protected", spec.protected_tokens},
                              {"rho", spec.rho},
                              {"causal_rate", spec.causal_rate},
                              {"protected_base_rate", spec.protected_base_rate},
                              {"min_length", spec.min_length},
                              {"max_length", spec.max_length},
                              {"seed", spec.seed},
                              {"noise", spec.noise},
                              {"mode", spec.mode == OracleMode::Max ? "max" : "sum"},
                              {"fillers", spec.fillers}};
  return j.dump(2) + "\n";
}

PlantSpec spec_from_json(const std::string& text) {
  PlantSpec spec;
  try {
    const auto j = json::parse(text);
    spec.sentences = j.value("sentences", spec.sentences);
    spec.neutral_vocab = j.value("neutral_vocab", spec.neutral_vocab);
    if (j.contains("causal")) {
      spec.causal.clear();
      for (const auto& c : j["causal"]) {
        spec.causal.push_back({c.at("token").get<std::string>(),
                               c.at("attribute").get<std::string>(), c.at("effect").get<double>()});
      }
    }
    if (j.contains("protected")) {
      spec.protected_tokens = j["protected"].get<std::vector<std::string>>();
    }
    spec.rho = j.value("rho", spec.rho);
    spec.causal_rate = j.value("causal_rate", spec.causal_rate);
    spec.protected_base_rate = j.value("protected_base_rate", spec.protected_base_rate);
    spec.min_length = j.value("min_length", spec.min_length);
    spec.max_length = j.value("max_length", spec.max_length);
    spec.seed = j.value("seed", spec.seed);
    spec.noise = j.value("noise", spec.noise);
    const std::string mode = j.value("mode", std::string("max"));
    if (mode == "max") {
      spec.mode = OracleMode::Max;
    } else if (mode == "sum") {
      spec.mode = OracleMode::Sum;
    } else {
      throw InputError("unknown oracle mode '" + mode + "'");
    }
    spec.fillers = j.value("fillers", spec.fillers);
  } catch (const json::exception& e) {
    throw InputError(std::string("bad testbed spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

PlantSpec load_spec(const std::filesystem::path& path) { return spec_from_json(read_file(path)); }

std::string manifest_jsonl(const Manifest& manifest) {
  std::string out;
  for (const auto& m : manifest) {
    nlohmann::ordered_json scores = nlohmann::ordered_json::object();
    for (const auto& [a, s] : m.oracle_scores) scores[a] = s;
    nlohmann::ordered_json j = {{"id", m.id},
                                {"causal_tokens", m.causal_tokens},
                                {"protected_tokens", m.protected_tokens},
                                {"oracle_score", m.oracle_score},
                                {"oracle_scores", scores}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path.string());
  Manifest out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ManifestEntry m;
      m.id = j.at("id").get<std::string>();
      m.causal_tokens = j.at("causal_tokens").get<std::vector<std::string>>();
      m.protected_tokens = j.at("protected_tokens").get<std::vector<std::string>>();
      m.oracle_score = j.at("oracle_score").get<double>();
      if (j.contains("oracle_scores")) {
        m.oracle_scores = j["oracle_scores"].get<std::map<AttributeId, double>>();
      }
      out.push_back(std::move(m));
    } catch (const json::exception& e) {
      throw InputError("bad manifest line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

OracleClassifier::OracleClassifier(PlantSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (const auto& c : spec_.causal) effects_[{c.token, c.attribute}] = c.effect;
}

std::string OracleClassifier::id() const {
  return "oracle:" + sha256_hex(spec_to_json(spec_)).substr(0, 12);
}

double OracleClassifier::effect(const std::string& token, const AttributeId& attribute) const {
  auto it = effects_.find({token, attribute});
  return it == effects_.end() ? 0.0 : it->second;
}

double OracleClassifier::clean_score(const std::vector<std::string>& words,
                                     const AttributeId& attribute) const {
  double s = 0.0;
  for (const auto& w : words) {
    const double e = effect(w, attribute);
    s = spec_.mode == OracleMode::Max ? std::max(s, e) : s + e;
  }
  return std::min(s, 1.0);
}

double OracleClassifier::noise(const std::string& text, const AttributeId& attribute) const {
  if (spec_.noise == 0.0) return 0.0;
  const std::string digest =
      sha256_hex(std::to_string(spec_.seed) + '\x1f' + attribute + '\x1f' + text);
  const std::uint64_t bits = std::stoull(digest.substr(0, 13), nullptr, 16);  // 52 bits
  const double u = static_cast<double>(bits) * 0x1.0p-52;
  return (2.0 * u - 1.0) * spec_.noise;
}

double OracleClassifier::score(const std::string& text, const AttributeId& attribute) const {
  const double s = clean_score(split_words(text), attribute) + noise(text, attribute);
  return std::clamp(s, 0.0, 1.0);
}

ScoreMatrix OracleClassifier::classify_unchecked(std::span<const std::string> texts,
                                                 std::span<const AttributeId> attributes) const {
  ScoreMatrix out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    auto& row = out.emplace_back();
    for (const auto& a : attributes) row.push_back(score(t, a));
  }
  return out;
}

OracleMaskFill::OracleMaskFill(const PlantSpec& spec) {
  spec.validate();
  id_ = "oracle-fill:" + std::to_string(spec.fillers);
  for (std::size_t i = 0; i < spec.fillers; ++i) {
    pool_.push_back({Token(neutral_word(i)), static_cast<double>(spec.fillers - i)});
  }
}

std::vector<Candidate> OracleMaskFill::candidates(const TokenSequence& seq,
                                                  std::size_t mask_index,
                                                  std::size_t top_k) const {
  if (mask_index >= seq.size()) throw InputError("mask index out of range");
  return {pool_.begin(), pool_.begin() + static_cast<std::ptrdiff_t>(std::min(top_k, pool_.size()))};
}

// ---------------------------------------------------------------------------

Testbed generate_corpus(const PlantSpec& spec) {
  spec.validate();
  const OracleClassifier oracle(spec);
  const auto attrs = spec.attributes();
  std::mt19937_64 rng(spec.seed);

  Testbed out;
  out.corpus.id = "testbed-" + std::to_string(spec.seed);
  const int width = static_cast<int>(std::to_string(spec.sentences).size());

  for (std::size_t s = 0; s < spec.sentences; ++s) {
    const std::size_t length =
        spec.min_length + uniform_index(rng, spec.max_length - spec.min_length + 1);

    ManifestEntry entry;
    std::vector<std::string> words;
    if (uniform01(rng) < spec.causal_rate) {
      const auto& c = spec.causal[uniform_index(rng, spec.causal.size())];
      words.push_back(c.token);
      entry.causal_tokens.push_back(c.token);
      if (!spec.protected_tokens.empty() && uniform01(rng) < spec.rho) {
        const auto& p = spec.protected_tokens[uniform_index(rng, spec.protected_tokens.size())];
        words.push_back(p);
        entry.protected_tokens.push_back(p);
      }
    } else if (!spec.protected_tokens.empty() && uniform01(rng) < spec.protected_base_rate) {
      const auto& p = spec.protected_tokens[uniform_index(rng, spec.protected_tokens.size())];
      words.push_back(p);
      entry.protected_tokens.push_back(p);
    }

    // Distinct neutral words fill the rest (partial Fisher-Yates draw).
    std::vector<std::size_t> pool(spec.neutral_vocab);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; words.size() < length; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
      words.push_back(neutral_word(pool[i]));
    }
    for (std::size_t i = words.size(); i > 1; --i) {
      std::swap(words[i - 1], words[uniform_index(rng, i)]);
    }

    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    }

    std::string id = std::to_string(s + 1);
    id = "tb" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    entry.id = id;
    for (const auto& a : attrs) {
      const double score = oracle.score(text, a);
      entry.oracle_scores[a] = score;
      entry.oracle_score = std::max(entry.oracle_score, score);
    }
    out.corpus.add(tokenize(text), id);
    out.manifest.push_back(std::move(entry));
  }
  return out;
}

double conditional_toxicity(const Corpus& corpus, const Manifest& manifest,
                            const std::string& token) {
  if (manifest.size() != corpus.size()) throw InputError("manifest does not match corpus");
  std::size_t containing = 0;
  std::size_t toxic = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& toks = corpus.sentences[i].tokens();
    const bool has = std::any_of(toks.begin(), toks.end(),
                                 [&](const Token& t) { return t.str() == token; });
    if (!has) continue;
    ++containing;
    if (manifest[i].oracle_score > 0.5) ++toxic;
  }
  if (containing == 0) throw InputError("token '" + token + "' does not occur in the corpus");
  return static_cast<double>(toxic) / static_cast<double>(containing);
}

double measured_cooccurrence(const Manifest& manifest) {
  std::size_t causal = 0;
  std::size_t both = 0;
  for (const auto& m : manifest) {
    if (m.causal_tokens.empty()) continue;
    ++causal;
    if (!m.protected_tokens.empty()) ++both;
  }
  return causal == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(causal);
}

}  // namespace ctox::testbed
