#include "ctox/causal.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "ctox/parallel.hpp"
#include "json.hpp"

namespace ctox {

namespace {

// TE as a weighted sum of per-counterfactual differences. With weights that
// sum to one this equals f(s) - E[f(s')], and it is exactly zero when every
// counterfactual scores the same as the original.
double weighted_effect(double original, const std::vector<Counterfactual>& cfs,
                       const ScoreMatrix& scores, std::size_t row_offset, std::size_t column) {
  double te = 0.0;
  for (std::size_t j = 0; j < cfs.size(); ++j) {
    te += cfs[j].weight * (original - scores[row_offset + j][column]);
  }
  return te;
}

template <typename T>
std::shared_ptr<const T> borrow(const T& ref) {
  return std::shared_ptr<const T>(&ref, [](const T*) {});
}

}  // namespace

std::vector<Counterfactual> generate_counterfactuals(const TokenSequence& seq, std::size_t index,
                                                     const MaskFillBackend& mask_fill,
                                                     std::size_t top_k,
                                                     const MaskFillOptions& options) {
  std::vector<Counterfactual> out;
  for (auto& c : ctox::mask_fill(mask_fill, seq, index, top_k, options)) {
    out.push_back({seq.with_replacement(index, c.token), c.prob});
  }
  return out;
}

TeRecord treatment_effect(const TokenSequence& seq, std::size_t index,
                          const ClassifierBackend& classifier, const MaskFillBackend& mask_fill,
                          const AttributeId& attribute, std::size_t top_k,
                          const MaskFillOptions& options) {
  const auto cfs = generate_counterfactuals(seq, index, mask_fill, top_k, options);
  if (cfs.empty()) {
    throw BackendError(mask_fill.id() + ": no replacement candidates for '" + seq[index].str() + "'");
  }
  std::vector<std::string> texts;
  texts.reserve(cfs.size() + 1);
  texts.push_back(seq.joined());
  for (const auto& cf : cfs) texts.push_back(cf.sequence.joined());

  const AttributeId attrs[] = {attribute};
  const auto scores = classify(classifier, texts, attrs);
  return {"", index, attribute, weighted_effect(scores[0][0], cfs, scores, 1, 0)};
}

// ---------------------------------------------------------------------------

void AteTable::add_sample(const std::string& token, const AttributeId& attribute, double te) {
  auto& e = entries_[{token, attribute}];
  e.te_sum += te;
  e.support_count += 1;
  e.ate = e.te_sum / static_cast<double>(e.support_count);
}

void AteTable::set(const std::string& token, const AttributeId& attribute, double ate,
                   std::size_t support_count) {
  if (support_count == 0) throw InputError("support_count must be at least 1");
  entries_[{token, attribute}] = {ate, support_count, ate * static_cast<double>(support_count)};
}

void AteTable::set_entry(const std::string& token, const AttributeId& attribute, AteEntry entry) {
  if (entry.support_count == 0) throw InputError("support_count must be at least 1");
  entries_[{token, attribute}] = entry;
}

const AteEntry* AteTable::find(const std::string& token, const AttributeId& attribute) const {
  auto it = entries_.find({token, attribute});
  return it == entries_.end() ? nullptr : &it->second;
}

std::optional<double> AteTable::lookup(const std::string& token, const AttributeId& attribute,
                                       std::size_t min_support) const {
  const AteEntry* e = find(token, attribute);
  if (!e || e->support_count < min_support) return std::nullopt;
  return e->ate;
}

AteBuildResult build_ate_table(const Corpus& corpus, const std::vector<AttributeId>& attributes,
                               const ClassifierBackend& classifier,
                               const MaskFillBackend& mask_fill, const AteBuildConfig& config,
                               const TokenizerConfig& tokenizer, Diagnostics* diagnostics) {
  const auto started = std::chrono::steady_clock::now();
  if (corpus.empty()) throw InputError("empty corpus");
  if (attributes.empty()) throw InputError("no attributes requested");
  if (config.top_k == 0) throw InputError("top_k must be at least 1");

  const CachingClassifier clf(borrow(classifier));
  const CachingMaskFill mf(borrow(mask_fill));

  AteBuildResult result;
  auto& stats = result.stats;
  stats.sentences = corpus.size();

  struct Task {
    std::size_t sentence;
    std::size_t position;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const auto n = corpus.sentences[s].size();
    if (n > config.max_length) {
      ++stats.long_sentences;
      if (diagnostics) {
        diagnostics->warn("sentence " + corpus.sentence_ids[s] + " has " + std::to_string(n) +
                          " tokens (max_length " + std::to_string(config.max_length) + ")");
      }
    }
    for (std::size_t i = 0; i < n; ++i) tasks.push_back({s, i});
  }
  stats.positions = tasks.size();

  // Originals are scored once per sentence.
  std::vector<std::vector<double>> original(corpus.size());
  parallel_for(corpus.size(), config.workers, [&](std::size_t s) {
    if (corpus.sentences[s].empty()) return;
    const std::string texts[] = {corpus.sentences[s].joined()};
    original[s] = classify(clf, texts, attributes)[0];
  });

  std::vector<std::vector<double>> effects(tasks.size());
  std::vector<std::size_t> cf_counts(tasks.size(), 0);
  parallel_for(tasks.size(), config.workers, [&](std::size_t t) {
    const auto& seq = corpus.sentences[tasks[t].sentence];
    const auto cfs = generate_counterfactuals(seq, tasks[t].position, mf, config.top_k,
                                              config.mask_fill);
    if (cfs.empty()) {
      throw BackendError(mf.id() + ": no replacement candidates for '" +
                         seq[tasks[t].position].str() + "' in sentence " +
                         corpus.sentence_ids[tasks[t].sentence]);
    }
    std::vector<std::string> texts;
    texts.reserve(cfs.size());
    for (const auto& cf : cfs) texts.push_back(cf.sequence.joined());
    const auto scores = classify(clf, texts, attributes);

    auto& row = effects[t];
    row.resize(attributes.size());
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      row[a] = weighted_effect(original[tasks[t].sentence][a], cfs, scores, 0, a);
    }
    cf_counts[t] = cfs.size();
  });

  // Ordered reduction.
  auto& table = result.table;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& token = corpus.sentences[tasks[t].sentence][tasks[t].position].str();
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      table.add_sample(token, attributes[a], effects[t][a]);
      if (config.keep_records) {
        result.records.push_back(
            {corpus.sentence_ids[tasks[t].sentence], tasks[t].position, attributes[a], effects[t][a]});
      }
    }
    stats.counterfactuals += cf_counts[t];
  }

  table.provenance = {corpus.id,       classifier.id(),
                      mask_fill.id(),  config.top_k,
                      config.mask_fill.uniform_weights, tokenizer_digest(tokenizer),
                      attributes};
  stats.classifier_cache = clf.stats();
  stats.mask_fill_cache = mf.stats();
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------

std::string serialize_ate_table(const AteTable& table) {
  const auto& p = table.provenance;
  nlohmann::ordered_json header = {{"format", "ctox-ate-table"},
                                   {"version", AteTable::kFormatVersion},
                                   {"corpus_id", p.corpus_id},
                                   {"classifier", p.classifier_id},
                                   {"mask_fill", p.mask_fill_id},
                                   {"top_k", p.top_k},
                                   {"uniform_weights", p.uniform_weights},
                                   {"tokenizer_digest", p.tokenizer_digest},
                                   {"attributes", p.attributes},
                                   {"entries", table.size()}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& [key, e] : table.entries()) {
    out += key.first;
    out += '\t';
    out += key.second;
    out += '\t';
    out += format_double(e.ate);
    out += '\t';
    out += std::to_string(e.support_count);
    out += '\t';
    out += format_double(e.te_sum);
    out += '\n';
  }
  return out;
}

AteTable parse_ate_table(const std::string& content,
                         const std::optional<std::string>& expected_tokenizer_digest,
                         Diagnostics* diagnostics) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("ATE table is empty");

  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("format", "") != "ctox-ate-table") {
    throw FormatError("not an ATE table: missing JSON header");
  }
  const int version = header.value("version", -1);
  if (version != AteTable::kFormatVersion) {
    throw FormatError("unsupported ATE table format version " + std::to_string(version) +
                      " (expected " + std::to_string(AteTable::kFormatVersion) + ")");
  }

  AteTable table;
  auto& p = table.provenance;
  try {
    p.corpus_id = header.at("corpus_id").get<std::string>();
    p.classifier_id = header.at("classifier").get<std::string>();
    p.mask_fill_id = header.at("mask_fill").get<std::string>();
    p.top_k = header.at("top_k").get<std::size_t>();
    p.uniform_weights = header.at("uniform_weights").get<bool>();
    p.tokenizer_digest = header.at("tokenizer_digest").get<std::string>();
    p.attributes = header.at("attributes").get<std::vector<AttributeId>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad ATE table header: ") + e.what());
  }

  if (expected_tokenizer_digest && *expected_tokenizer_digest != p.tokenizer_digest &&
      diagnostics) {
    diagnostics->warn("ATE table was built with tokenizer " + p.tokenizer_digest +
                      " but the active tokenizer is " + *expected_tokenizer_digest);
  }

  std::size_t line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      cols.push_back(line.substr(start, tab - start));
    }
    cols.push_back(line.substr(start));
    if (cols.size() != 5) {
      throw FormatError("ATE table line " + std::to_string(line_no) + ": expected 5 columns");
    }
    AteEntry e;
    try {
      e.ate = std::stod(cols[2]);
      e.support_count = std::stoul(cols[3]);
      e.te_sum = std::stod(cols[4]);
    } catch (const std::exception&) {
      throw FormatError("ATE table line " + std::to_string(line_no) + ": bad number");
    }
    if (e.support_count == 0) {
      throw FormatError("ATE table line " + std::to_string(line_no) + ": zero support");
    }
    const double derived = e.te_sum / static_cast<double>(e.support_count);
    if (std::abs(derived - e.ate) > 1e-12 * std::max(1.0, std::abs(e.ate))) {
      throw FormatError("ATE table line " + std::to_string(line_no) +
                        ": ate disagrees with te_sum / support_count");
    }
    table.set_entry(cols[0], cols[1], e);
    ++rows;
  }
  const auto declared = header.value("entries", rows);
  if (declared != rows) {
    throw FormatError("ATE table declares " + std::to_string(declared) + " entries but has " +
                      std::to_string(rows));
  }
  return table;
}

void save_ate_table(const std::filesystem::path& path, const AteTable& table) {
  write_file_atomic(path, serialize_ate_table(table));
}

AteTable load_ate_table(const std::filesystem::path& path,
                        const std::optional<std::string>& expected_tokenizer_digest,
                        Diagnostics* diagnostics) {
  return parse_ate_table(read_file(path), expected_tokenizer_digest, diagnostics);
}

}  // namespace ctox
