#pragma once

#include "lrtts/curation.hpp"
#include "lrtts/noisegen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lrtts::augment {

struct AugManifestEntry {
  std::string id;  // <source_id>__aug<k>
  std::string source_id;
  std::filesystem::path audio_path;  // relative to the dataset directory
  std::string text;
  double duration_s = 0.0;
  int aug_id = 0;
  std::string noise_name = "clean";
  std::optional<double> snr_db;  // absent iff aug_id == 0
  double mixture_gain = 1.0;
  std::uint64_t seed = 0;
};

struct BuildOptions {
  unsigned jobs = 1;
  std::optional<int> expected_sample_rate_hz;  // mismatching sources fail
};

struct BuildResult {
  std::vector<AugManifestEntry> entries;  // subset order, then aug id
  std::vector<std::string> failures;      // "<source_id>: <reason>"
};

std::string augmented_id(const std::string& source_id, int aug_id);

/// Per (utterance, augmentation) seed; independent of processing order.
std::uint64_t derive_seed(std::uint64_t master_seed, const std::string& source_id, int aug_id);

/// Throws ConfigError on aug id 0, duplicates, or empty names.
void validate_specs(std::span<const noisegen::NoiseSpec> specs);

/// Writes `out_dir/wavs/<id>.wav` for the clean copy (aug id 0) and one noisy
/// copy per spec of every subset entry. Specs are validated before any file
/// is written. Per-utterance failures are collected, not thrown.
BuildResult build_augmented_dataset(std::span<const curation::CorpusEntry> subset,
                                    std::span<const noisegen::NoiseSpec> specs,
                                    const std::filesystem::path& out_dir, std::uint64_t master_seed,
                                    const BuildOptions& options = {});

struct VerifyReport {
  std::size_t n_checked = 0;
  std::size_t n_clean_skipped = 0;
  double max_abs_deviation_db = 0.0;
  std::size_t n_exceeding = 0;  // |achieved - target| > tolerance
  double tolerance_db = 0.5;
  std::vector<std::string> flagged_ids;
  std::vector<std::string> missing;  // MissingFile, per entry
};

/// Re-measures the active-speech SNR of every noisy entry against the clean
/// copy of its source: the noise is recovered as noisy / mixture_gain - clean.
VerifyReport verify_augmented_dataset(std::span<const AugManifestEntry> manifest,
                                      const std::filesystem::path& dataset_dir, unsigned jobs = 1,
                                      double tolerance_db = 0.5);

void write_manifest(std::span<const AugManifestEntry> entries, const std::filesystem::path& path);
std::vector<AugManifestEntry> read_manifest(const std::filesystem::path& path);

/// Build summary: specs, master seed, counts per aug id, failures and
/// (optionally) verification statistics.
void write_summary(std::span<const noisegen::NoiseSpec> specs, std::uint64_t master_seed,
                   const BuildResult& result, const VerifyReport* verification,
                   const std::filesystem::path& path);

}  // namespace lrtts::augment
