#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lrtts::curation {

struct CorpusEntry {
  std::string id;
  std::filesystem::path audio_path;
  std::string text;      // normalized transcription
  std::string raw_text;  // kept for audit, never used for selection
  double duration_s = 0.0;
};

enum class SelectionMode { Informed, Random };

struct Subset {
  std::vector<CorpusEntry> entries;
  double total_duration_s = 0.0;
  SelectionMode selection_mode = SelectionMode::Informed;
  double budget_s = 0.0;
  std::optional<std::uint64_t> seed;
};

enum class BatchMode { Bucketed, RandomShuffle };

struct BatchPlan {
  std::vector<std::vector<std::string>> batches;
  std::size_t batch_size = 1;
  BatchMode mode = BatchMode::Bucketed;
  std::uint64_t seed = 0;
};

struct BatchPadding {
  double min_duration_s = 0.0;
  double max_duration_s = 0.0;
  double padding_ratio = 0.0;
};

struct PaddingReport {
  std::vector<BatchPadding> per_batch;
  double mean_padding_ratio = 0.0;
};

struct SymbolStat {
  std::size_t count = 0;
  double frequency = 0.0;
};

struct SymbolHistogram {
  std::map<std::string, SymbolStat> symbols;
  std::size_t total = 0;
  double coverage = 1.0;  // fraction of the reference inventory present
};

/// word (upper- or lower-case) -> phoneme sequence, e.g. CMUdict lines
/// `WORD  P1 P2 ...`.
using Lexicon = std::map<std::string, std::vector<std::string>>;

std::string_view to_string(SelectionMode mode);
std::string_view to_string(BatchMode mode);

/// Reads `root/metadata.csv` (`id|raw|normalized`); audio at `root/wavs/<id>.wav`.
std::vector<CorpusEntry> load_ljspeech_manifest(const std::filesystem::path& root);

/// Fills duration_s from WAV headers. Every unreadable file is collected and
/// reported in one Io error naming the ids; nothing is silently skipped.
/// `jobs` > 1 reads headers on worker threads; the result is order-stable.
std::vector<CorpusEntry> measure_durations(std::vector<CorpusEntry> entries, unsigned jobs = 1);

double total_duration(std::span<const CorpusEntry> entries);

/// Shortest-first, ties by id; the longest prefix whose total is <= budget_s.
Subset select_informed_subset(std::span<const CorpusEntry> entries, double budget_s);

/// Seeded uniform shuffle, then the longest prefix whose total is <= budget_s.
Subset select_random_subset(std::span<const CorpusEntry> entries, double budget_s,
                            std::uint64_t seed);

/// Bucketed: sort by duration, chunk, shuffle batch order. RandomShuffle:
/// shuffle entries, chunk.
BatchPlan plan_batches(std::span<const CorpusEntry> entries, std::size_t batch_size,
                       BatchMode mode, std::uint64_t seed);

/// Padding ratio of a batch = 1 - sum(d) / (len(batch) * max(d)).
PaddingReport padding_stats(const BatchPlan& plan, std::span<const CorpusEntry> entries);

/// Case-folded character counts (whitespace excluded), or phoneme counts when
/// a lexicon is given. Coverage is measured against the symbols of `inventory`
/// (typically the full corpus); pass an empty span to skip it.
SymbolHistogram symbol_histogram(std::span<const CorpusEntry> subset,
                                 std::span<const CorpusEntry> inventory = {},
                                 const Lexicon* lexicon = nullptr);

Lexicon read_lexicon(const std::filesystem::path& path);

/// Prefix, budget-safety and maximality of an informed selection against the
/// corpus it was drawn from. Empty string when all hold, else a description.
std::string check_informed_invariants(const Subset& subset, std::span<const CorpusEntry> corpus);

// Subset manifests: JSON-lines {"id","audio","text","duration_s"} plus a
// sidecar summary {"mode","budget_s","seed","total_s","n"}.
void write_subset(const Subset& subset, const std::filesystem::path& jsonl_path,
                  const std::filesystem::path& summary_path);
std::vector<CorpusEntry> read_subset_manifest(const std::filesystem::path& jsonl_path);

}  // namespace lrtts::curation
