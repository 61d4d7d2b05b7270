#include "lrtts/curation.hpp"

#include "lrtts/audio.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/parallel.hpp"
#include "lrtts/rng.hpp"
#include "lrtts/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace lrtts::curation {

namespace {

using Json = nlohmann::json;

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t pos; (pos = line.find(sep, start)) != std::string::npos; start = pos + 1) {
    fields.push_back(line.substr(start, pos - start));
  }
  fields.push_back(line.substr(start));
  return fields;
}

bool shorter(const CorpusEntry& a, const CorpusEntry& b) {
  return a.duration_s < b.duration_s || (a.duration_s == b.duration_s && a.id < b.id);
}

void require_measured(std::span<const CorpusEntry> entries) {
  for (const auto& e : entries) {
    if (!(e.duration_s > 0.0)) {
      throw Error(ErrorCode::ConfigError, "duration of '" + e.id + "' has not been measured");
    }
  }
}

// Longest prefix of `order` whose cumulative duration stays within budget.
Subset take_prefix(std::span<const CorpusEntry> ordered, double budget_s) {
  Subset subset;
  subset.budget_s = budget_s;
  for (const auto& e : ordered) {
    if (subset.total_duration_s + e.duration_s > budget_s) break;
    subset.total_duration_s += e.duration_s;
    subset.entries.push_back(e);
  }
  if (subset.entries.empty()) {
    throw Error(ErrorCode::EmptySelection,
                "budget " + std::to_string(budget_s) + " s is below the first candidate's duration");
  }
  return subset;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<std::string> symbols_of(const CorpusEntry& e, const Lexicon* lexicon) {
  std::vector<std::string> out;
  const auto cps = text::decode_utf8(e.text);
  if (!lexicon) {
    for (char32_t cp : cps) {
      if (!text::is_space(cp)) out.push_back(text::encode_utf8(text::to_lower(cp)));
    }
    return out;
  }
  std::u32string word;
  auto flush = [&] {
    if (word.empty()) return;
    const auto it = lexicon->find(text::encode_utf8(word));
    if (it == lexicon->end()) {
      out.emplace_back("<oov>");
    } else {
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
    word.clear();
  };
  for (char32_t cp : cps) {
    if (text::is_word_char(cp) || (text::is_apostrophe(cp) && !word.empty())) {
      word.push_back(text::is_apostrophe(cp) ? U'\'' : text::to_lower(cp));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace

std::string_view to_string(SelectionMode mode) {
  return mode == SelectionMode::Informed ? "informed" : "random";
}

std::string_view to_string(BatchMode mode) {
  return mode == BatchMode::Bucketed ? "bucketed" : "random";
}

std::vector<CorpusEntry> load_ljspeech_manifest(const std::filesystem::path& root) {
  const auto metadata = root / "metadata.csv";
  if (!std::filesystem::is_regular_file(metadata)) {
    throw Error(ErrorCode::MissingMetadata, metadata.string() + " not found");
  }
  std::istringstream in(binary::read_text(metadata));
  std::vector<CorpusEntry> entries;
  std::set<std::string> seen;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, '|');
    if (fields.size() != 3) {
      throw Error(ErrorCode::MalformedRow, metadata.string() + ":" + std::to_string(line_no) +
                                               ": expected 3 fields, found " +
                                               std::to_string(fields.size()));
    }
    if (fields[0].empty() || !seen.insert(fields[0]).second) {
      throw Error(ErrorCode::MalformedRow, metadata.string() + ":" + std::to_string(line_no) +
                                               ": empty or duplicate id '" + fields[0] + "'");
    }
    CorpusEntry e;
    e.id = fields[0];
    e.raw_text = fields[1];
    e.text = fields[2];
    e.audio_path = root / "wavs" / (e.id + ".wav");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<CorpusEntry> measure_durations(std::vector<CorpusEntry> entries, unsigned jobs) {
  std::vector<std::string> failures(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i) {
    try {
      const auto info = audio::read_wav_info(entries[i].audio_path);
      entries[i].duration_s =
          static_cast<double>(info.n_samples) / static_cast<double>(info.sample_rate_hz);
    } catch (const Error& err) {
      failures[i] = entries[i].id + " (" + err.what() + ")";
    }
  });
  std::string message;
  std::size_t n_failed = 0;
  for (const auto& f : failures) {
    if (f.empty()) continue;
    message += (n_failed++ ? "; " : "") + f;
  }
  if (n_failed) {
    throw Error(ErrorCode::Io, std::to_string(n_failed) + " unreadable audio file(s): " + message);
  }
  return entries;
}

double total_duration(std::span<const CorpusEntry> entries) {
  double total = 0.0;
  for (const auto& e : entries) total += e.duration_s;
  return total;
}

Subset select_informed_subset(std::span<const CorpusEntry> entries, double budget_s) {
  require_measured(entries);
  std::vector<CorpusEntry> sorted(entries.begin(), entries.end());
  std::sort(sorted.begin(), sorted.end(), shorter);
  Subset subset = take_prefix(sorted, budget_s);
  subset.selection_mode = SelectionMode::Informed;
  return subset;
}

Subset select_random_subset(std::span<const CorpusEntry> entries, double budget_s,
                            std::uint64_t seed) {
  require_measured(entries);
  std::vector<CorpusEntry> shuffled(entries.begin(), entries.end());
  Rng rng(seed);
  rng.shuffle(std::span<CorpusEntry>(shuffled));
  Subset subset = take_prefix(shuffled, budget_s);
  subset.selection_mode = SelectionMode::Random;
  subset.seed = seed;
  return subset;
}

BatchPlan plan_batches(std::span<const CorpusEntry> entries, std::size_t batch_size,
                       BatchMode mode, std::uint64_t seed) {
  if (batch_size == 0) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.mode = mode;
  plan.seed = seed;

  Rng rng(seed);
  auto order = iota_indices(entries.size());
  if (mode == BatchMode::Bucketed) {
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return shorter(entries[a], entries[b]); });
  } else {
    rng.shuffle(std::span<std::size_t>(order));
  }
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<std::string> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      batch.push_back(entries[order[i]].id);
    }
    plan.batches.push_back(std::move(batch));
  }
  if (mode == BatchMode::Bucketed) {
    rng.shuffle(std::span<std::vector<std::string>>(plan.batches));
  }
  return plan;
}

PaddingReport padding_stats(const BatchPlan& plan, std::span<const CorpusEntry> entries) {
  std::unordered_map<std::string, double> duration;
  for (const auto& e : entries) duration.emplace(e.id, e.duration_s);

  PaddingReport report;
  for (const auto& batch : plan.batches) {
    if (batch.empty()) continue;
    BatchPadding b;
    b.min_duration_s = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& id : batch) {
      const auto it = duration.find(id);
      if (it == duration.end()) throw Error(ErrorCode::UnknownId, "batch plan references '" + id + "'");
      sum += it->second;
      b.min_duration_s = std::min(b.min_duration_s, it->second);
      b.max_duration_s = std::max(b.max_duration_s, it->second);
    }
    b.padding_ratio =
        b.max_duration_s > 0.0 ? 1.0 - sum / (static_cast<double>(batch.size()) * b.max_duration_s) : 0.0;
    report.mean_padding_ratio += b.padding_ratio;
    report.per_batch.push_back(b);
  }
  if (!report.per_batch.empty()) report.mean_padding_ratio /= static_cast<double>(report.per_batch.size());
  return report;
}

SymbolHistogram symbol_histogram(std::span<const CorpusEntry> subset,
                                 std::span<const CorpusEntry> inventory, const Lexicon* lexicon) {
  if (subset.empty()) throw Error(ErrorCode::EmptySubset, "symbol histogram of an empty subset");
  SymbolHistogram hist;
  for (const auto& e : subset) {
    for (auto& s : symbols_of(e, lexicon)) {
      ++hist.symbols[s].count;
      ++hist.total;
    }
  }
  for (auto& [symbol, stat] : hist.symbols) {
    stat.frequency = hist.total ? static_cast<double>(stat.count) / static_cast<double>(hist.total) : 0.0;
  }
  if (!inventory.empty()) {
    std::set<std::string> all;
    for (const auto& e : inventory) {
      for (auto& s : symbols_of(e, lexicon)) all.insert(std::move(s));
    }
    std::size_t present = 0;
    for (const auto& s : all) present += hist.symbols.count(s);
    hist.coverage = all.empty() ? 1.0 : static_cast<double>(present) / static_cast<double>(all.size());
  }
  return hist;
}

Lexicon read_lexicon(const std::filesystem::path& path) {
  std::istringstream in(binary::read_text(path));
  Lexicon lexicon;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind(";;;", 0) == 0) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    if (word.empty()) continue;
    if (const auto paren = word.find('('); paren != std::string::npos && paren > 0) {
      word.resize(paren);  // alternate pronunciation marker, e.g. READ(1)
    }
    word = text::encode_utf8([&] {
      auto cps = text::decode_utf8(word);
      for (auto& cp : cps) cp = text::to_lower(cp);
      return cps;
    }());
    std::vector<std::string> phones;
    for (std::string p; fields >> p;) phones.push_back(p);
    lexicon.emplace(word, std::move(phones));  // first pronunciation wins
  }
  return lexicon;
}

std::string check_informed_invariants(const Subset& subset, std::span<const CorpusEntry> corpus) {
  std::ostringstream problems;
  const double total = total_duration(subset.entries);
  if (std::abs(total - subset.total_duration_s) > 1e-6 * std::max(1.0, total)) {
    problems << "total_duration_s does not match the sum of durations; ";
  }
  if (total > subset.budget_s) problems << "total exceeds budget; ";
  if (!std::is_sorted(subset.entries.begin(), subset.entries.end(), shorter)) {
    problems << "entries not sorted by duration; ";
  }
  std::set<std::string> chosen;
  double max_selected = 0.0;
  for (const auto& e : subset.entries) {
    chosen.insert(e.id);
    max_selected = std::max(max_selected, e.duration_s);
  }
  double min_excluded = std::numeric_limits<double>::infinity();
  for (const auto& e : corpus) {
    if (!chosen.count(e.id)) min_excluded = std::min(min_excluded, e.duration_s);
  }
  if (max_selected > min_excluded) problems << "a selected entry is longer than an excluded one; ";
  if (std::isfinite(min_excluded) && !(total + min_excluded > subset.budget_s)) {
    problems << "selection is not maximal; ";
  }
  return problems.str();
}

void write_subset(const Subset& subset, const std::filesystem::path& jsonl_path,
                  const std::filesystem::path& summary_path) {
  std::string lines;
  for (const auto& e : subset.entries) {
    Json row = {{"id", e.id}, {"audio", e.audio_path.generic_string()}, {"text", e.text},
                {"duration_s", e.duration_s}};
    lines += row.dump() + "\n";
  }
  binary::write_text(jsonl_path, lines);

  Json summary = {{"mode", to_string(subset.selection_mode)},
                  {"budget_s", subset.budget_s},
                  {"seed", subset.seed ? Json(*subset.seed) : Json(nullptr)},
                  {"total_s", subset.total_duration_s},
                  {"n", subset.entries.size()}};
  binary::write_text(summary_path, summary.dump(2) + "\n");
}

std::vector<CorpusEntry> read_subset_manifest(const std::filesystem::path& jsonl_path) {
  std::istringstream in(binary::read_text(jsonl_path));
  std::vector<CorpusEntry> entries;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      const auto row = Json::parse(line);
      CorpusEntry e;
      e.id = row.at("id").get<std::string>();
      e.audio_path = row.at("audio").get<std::string>();
      e.text = row.at("text").get<std::string>();
      e.duration_s = row.at("duration_s").get<double>();
      entries.push_back(std::move(e));
    } catch (const Json::exception& ex) {
      throw Error(ErrorCode::MalformedRow,
                  jsonl_path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

}  // namespace lrtts::curation
