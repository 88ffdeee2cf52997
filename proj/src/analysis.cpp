#include "ctox/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace ctox {

GroupLexicon::GroupLexicon(const std::map<std::string, std::vector<std::string>>& raw,
                           const TokenizerConfig& config) {
  const Tokenizer tokenizer(config);
  for (const auto& [group, terms] : raw) {
    auto& out = groups_[group];
    for (const auto& term : terms) {
      const TokenSequence seq = tokenizer(term);
      Term tokens;
      for (const auto& t : seq.tokens()) tokens.push_back(t.str());
      if (!tokens.empty()) out.push_back(std::move(tokens));
    }
  }
}

GroupLexicon GroupLexicon::load(const std::filesystem::path& path, const TokenizerConfig& config) {
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    return GroupLexicon(j.get<std::map<std::string, std::vector<std::string>>>(), config);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad lexicon file " + path.string() + ": " + e.what());
  }
}

bool GroupLexicon::matches(const std::string& group, const TokenSequence& seq) const {
  auto it = groups_.find(group);
  if (it == groups_.end()) return false;
  std::set<std::string> present;
  for (const auto& t : seq.tokens()) present.insert(t.str());
  return std::any_of(it->second.begin(), it->second.end(), [&](const Term& term) {
    return std::all_of(term.begin(), term.end(),
                       [&](const std::string& t) { return present.count(t) > 0; });
  });
}

LossTable load_losses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open loss file: " + path.string());
  LossTable out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError(where + ": malformed JSON");
    try {
      const std::string id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
      if (!out.emplace(id, j.at("loss").get<double>()).second) {
        throw InputError(where + ": duplicate id " + id);
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return out;
}

LossGapReport loss_gap(const LossTable& baseline, const LossTable& model,
                       const GroupLexicon& lexicon, const Corpus& corpus,
                       Diagnostics* diagnostics) {
  for (const auto& [id, loss] : baseline) {
    if (!model.count(id)) throw InputError("id " + id + " is in the baseline losses only");
  }
  for (const auto& [id, loss] : model) {
    if (!baseline.count(id)) throw InputError("id " + id + " is in the model losses only");
  }

  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> per_group;
  for (const auto& [group, terms] : lexicon.groups()) per_group[group];
  Acc out_of_group;

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& id = corpus.sentence_ids[i];
    auto b = baseline.find(id);
    if (b == baseline.end()) throw InputError("no loss for sentence " + id);
    const double gap = model.at(id) - b->second;

    bool any = false;
    for (auto& [group, acc] : per_group) {
      if (lexicon.matches(group, corpus.sentences[i])) {
        acc.sum += gap;
        ++acc.n;
        any = true;
      }
    }
    if (!any) {
      out_of_group.sum += gap;
      ++out_of_group.n;
    }
  }

  auto finish = [](const std::string& name, const Acc& acc) {
    GroupGap g{name, acc.n, std::nullopt};
    if (acc.n > 0) g.mean_gap = acc.sum / static_cast<double>(acc.n);
    return g;
  };

  LossGapReport report;
  report.sentences = corpus.size();
  for (const auto& [group, acc] : per_group) {
    if (acc.n == 0 && diagnostics) diagnostics->warn("group '" + group + "' matched no sentences");
    report.groups.push_back(finish(group, acc));
  }
  report.out_of_group = finish("out_of_group", out_of_group);
  return report;
}

std::string loss_gap_json(const LossGapReport& report) {
  auto one = [](const GroupGap& g) {
    nlohmann::ordered_json j = {{"sentences", g.sentences}};
    if (g.mean_gap) {
      j["mean_gap"] = *g.mean_gap;
    } else {
      j["mean_gap"] = nullptr;
    }
    return j;
  };
  nlohmann::ordered_json groups = nlohmann::ordered_json::object();
  for (const auto& g : report.groups) groups[g.group] = one(g);
  nlohmann::ordered_json j = {{"sentences", report.sentences},
                              {"groups", groups},
                              {"out_of_group", one(report.out_of_group)}};
  return j.dump(2) + "\n";
}

std::string loss_gap_csv(const LossGapReport& report) {
  std::string out = "group,sentences,mean_gap\n";
  auto row = [&](const GroupGap& g) {
    out += g.group + ',' + std::to_string(g.sentences) + ',';
    if (g.mean_gap) out += format_double(*g.mean_gap);
    out += '\n';
  };
  for (const auto& g : report.groups) row(g);
  row(report.out_of_group);
  return out;
}

// ---------------------------------------------------------------------------

std::size_t AteDiffHistogram::bucket_of(const std::string& token) const {
  auto it = diffs.find(token);
  if (it == diffs.end()) throw InputError("token '" + token + "' not in histogram");
  return static_cast<std::size_t>(std::floor(it->second / bucket_width));
}

AteDiffHistogram ate_diff_histogram(const AteTable& a, const AteTable& b,
                                    const AttributeId& attribute, double bucket_width,
                                    double threshold, Diagnostics* diagnostics) {
  if (!(bucket_width > 0.0)) throw InputError("bucket width must be positive");
  if (a.provenance.tokenizer_digest != b.provenance.tokenizer_digest && diagnostics) {
    diagnostics->warn("ATE tables use different tokenizers (" + a.provenance.tokenizer_digest +
                      " vs " + b.provenance.tokenizer_digest + ")");
  }

  AteDiffHistogram hist;
  hist.attribute = attribute;
  hist.bucket_width = bucket_width;
  hist.threshold = threshold;
  for (const auto& [key, entry] : a.entries()) {
    if (key.second != attribute) continue;
    const AteEntry* other = b.find(key.first, attribute);
    if (!other) continue;
    const double diff = std::abs(entry.ate - other->ate);
    hist.diffs[key.first] = diff;
    ++hist.counts[static_cast<std::size_t>(std::floor(diff / bucket_width))];
    if (diff > threshold) ++hist.above_threshold;
  }
  hist.total = hist.diffs.size();
  if (hist.total == 0) {
    throw InputError("ATE tables share no tokens for attribute '" + attribute + "'");
  }
  hist.fraction_above = static_cast<double>(hist.above_threshold) / static_cast<double>(hist.total);
  return hist;
}

std::string ate_diff_json(const AteDiffHistogram& hist) {
  nlohmann::ordered_json buckets = nlohmann::ordered_json::array();
  for (const auto& [idx, count] : hist.counts) {
    buckets.push_back({{"bucket_low", static_cast<double>(idx) * hist.bucket_width},
                       {"bucket_high", static_cast<double>(idx + 1) * hist.bucket_width},
                       {"count", count}});
  }
  nlohmann::ordered_json j = {{"attribute", hist.attribute},
                              {"bucket_width", hist.bucket_width},
                              {"threshold", hist.threshold},
                              {"total_tokens", hist.total},
                              {"above_threshold", hist.above_threshold},
                              {"fraction_above", hist.fraction_above},
                              {"buckets", buckets}};
  return j.dump(2) + "\n";
}

std::string ate_diff_csv(const AteDiffHistogram& hist) {
  std::string out = "bucket_low,bucket_high,count\n";
  const std::size_t last = hist.counts.empty() ? 0 : hist.counts.rbegin()->first;
  for (std::size_t i = 0; i <= last; ++i) {
    auto it = hist.counts.find(i);
    out += format_double(static_cast<double>(i) * hist.bucket_width) + ',' +
           format_double(static_cast<double>(i + 1) * hist.bucket_width) + ',' +
           std::to_string(it == hist.counts.end() ? 0 : it->second) + '\n';
  }
  return out;
}

}  // namespace ctox
