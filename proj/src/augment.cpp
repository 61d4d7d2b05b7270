#include "lrtts/augment.hpp"

#include "lrtts/audio.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/parallel.hpp"
#include "lrtts/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace lrtts::augment {

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kind_name(noisegen::SpectrumKind k) {
  switch (k) {
    case noisegen::SpectrumKind::White: return "white";
    case noisegen::SpectrumKind::Usasi: return "usasi";
    case noisegen::SpectrumKind::PsdTable: return "psd_table";
  }
  return "?";
}

}  // namespace

std::string augmented_id(const std::string& source_id, int aug_id) {
  return source_id + "__aug" + std::to_string(aug_id);
}

std::uint64_t derive_seed(std::uint64_t master_seed, const std::string& source_id, int aug_id) {
  return stable_hash(master_seed, source_id, static_cast<std::uint64_t>(aug_id));
}

void validate_specs(std::span<const noisegen::NoiseSpec> specs) {
  std::set<int> seen;
  for (const auto& s : specs) {
    if (s.aug_id < 1) {
      throw Error(ErrorCode::ConfigError,
                  "aug id " + std::to_string(s.aug_id) + " of '" + s.name + "' must be >= 1");
    }
    if (!seen.insert(s.aug_id).second) {
      throw Error(ErrorCode::ConfigError, "duplicate aug id " + std::to_string(s.aug_id));
    }
    if (s.name.empty()) throw Error(ErrorCode::ConfigError, "noise spec without a name");
    if (!std::isfinite(s.snr_db)) throw Error(ErrorCode::ConfigError, "non-finite snr for " + s.name);
  }
}

BuildResult build_augmented_dataset(std::span<const curation::CorpusEntry> subset,
                                    std::span<const noisegen::NoiseSpec> specs,
                                    const fs::path& out_dir, std::uint64_t master_seed,
                                    const BuildOptions& options) {
  validate_specs(specs);
  for (const auto& s : specs) {
    if (s.spectrum.kind == noisegen::SpectrumKind::PsdTable) {
      noisegen::validate(s.spectrum, options.expected_sample_rate_hz.value_or(22050));
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir / "wavs", ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + (out_dir / "wavs").string() + ": " + ec.message());

  struct Slot {
    std::vector<AugManifestEntry> entries;
    std::string failure;
  };
  std::vector<Slot> slots(subset.size());

  parallel_for(subset.size(), options.jobs, [&](std::size_t i) {
    const auto& src = subset[i];
    Slot& slot = slots[i];
    try {
      const auto clip = audio::read_wav(src.audio_path);
      if (options.expected_sample_rate_hz && clip.sample_rate_hz != *options.expected_sample_rate_hz) {
        throw Error(ErrorCode::ConfigError,
                    "sample rate " + std::to_string(clip.sample_rate_hz) + " Hz, expected " +
                        std::to_string(*options.expected_sample_rate_hz));
      }
      auto make_entry = [&](int aug_id) {
        AugManifestEntry e;
        e.id = augmented_id(src.id, aug_id);
        e.source_id = src.id;
        e.audio_path = fs::path("wavs") / (e.id + ".wav");
        e.text = src.text;
        e.duration_s = clip.duration_s();
        e.aug_id = aug_id;
        return e;
      };

      std::vector<AugManifestEntry> out;
      auto clean = make_entry(0);
      audio::write_wav(clip, out_dir / clean.audio_path);
      out.push_back(std::move(clean));

      for (const auto& spec : specs) {
        auto e = make_entry(spec.aug_id);
        e.noise_name = spec.name;
        e.snr_db = spec.snr_db;
        e.seed = derive_seed(master_seed, src.id, spec.aug_id);
        const auto mix = noisegen::mix_at_snr(clip, spec.spectrum, spec.snr_db, e.seed);
        e.mixture_gain = mix.mixture_gain;
        audio::write_wav(mix.mixture, out_dir / e.audio_path);
        out.push_back(std::move(e));
      }
      slot.entries = std::move(out);
    } catch (const std::exception& ex) {
      slot.failure = src.id + ": " + ex.what();
    }
  });

  BuildResult result;
  for (auto& slot : slots) {
    if (!slot.failure.empty()) {
      result.failures.push_back(std::move(slot.failure));
      continue;
    }
    for (auto& e : slot.entries) result.entries.push_back(std::move(e));
  }
  return result;
}

VerifyReport verify_augmented_dataset(std::span<const AugManifestEntry> manifest,
                                      const fs::path& dataset_dir, unsigned jobs,
                                      double tolerance_db) {
  std::map<std::string, const AugManifestEntry*> clean_of;
  for (const auto& e : manifest) {
    if (e.aug_id == 0) clean_of[e.source_id] = &e;
  }

  struct Slot {
    bool checked = false;
    double deviation = 0.0;
    std::string missing;
  };
  std::vector<Slot> slots(manifest.size());

  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    const auto& e = manifest[i];
    if (e.aug_id == 0) return;
    Slot& slot = slots[i];
    const auto it = clean_of.find(e.source_id);
    if (it == clean_of.end()) {
      slot.missing = e.id + ": no clean entry for source " + e.source_id;
      return;
    }
    const fs::path noisy_path = dataset_dir / e.audio_path;
    const fs::path clean_path = dataset_dir / it->second->audio_path;
    for (const auto& p : {noisy_path, clean_path}) {
      if (!fs::exists(p)) {
        slot.missing = e.id + ": " + std::string(to_string(ErrorCode::MissingFile)) + ": " + p.string();
        return;
      }
    }
    const auto noisy = audio::read_wav(noisy_path);
    const auto clean = audio::read_wav(clean_path);
    if (noisy.size() != clean.size()) {
      throw Error(ErrorCode::ShapeMismatch, e.id + ": length differs from its clean source");
    }
    const Eigen::VectorXd noise = noisy.samples / e.mixture_gain - clean.samples;
    const double speech_db = audio::active_speech_level_p56(clean).active_level_db;
    const double achieved = speech_db - audio::power_db(audio::mean_power(noise));
    slot.checked = true;
    slot.deviation = achieved - e.snr_db.value_or(0.0);
  });

  VerifyReport report;
  report.tolerance_db = tolerance_db;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& slot = slots[i];
    if (manifest[i].aug_id == 0) {
      ++report.n_clean_skipped;
    } else if (!slot.missing.empty()) {
      report.missing.push_back(slot.missing);
    } else if (slot.checked) {
      ++report.n_checked;
      const double dev = std::abs(slot.deviation);
      report.max_abs_deviation_db = std::max(report.max_abs_deviation_db, dev);
      if (dev > tolerance_db) {
        ++report.n_exceeding;
        report.flagged_ids.push_back(manifest[i].id);
      }
    }
  }
  return report;
}

void write_manifest(std::span<const AugManifestEntry> entries, const fs::path& path) {
  std::string lines;
  for (const auto& e : entries) {
    Json row = {{"id", e.id},
                {"source_id", e.source_id},
                {"audio", e.audio_path.generic_string()},
                {"text", e.text},
                {"duration_s", e.duration_s},
                {"aug_id", e.aug_id},
                {"noise", e.noise_name},
                {"snr_db", e.snr_db ? Json(*e.snr_db) : Json(nullptr)},
                {"mixture_gain", e.mixture_gain},
                {"seed", e.seed}};
    lines += row.dump() + "\n";
  }
  binary::write_text(path, lines);
}

std::vector<AugManifestEntry> read_manifest(const fs::path& path) {
  std::istringstream in(binary::read_text(path));
  std::vector<AugManifestEntry> entries;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    try {
      const auto row = Json::parse(line);
      AugManifestEntry e;
      e.id = row.at("id").get<std::string>();
      e.source_id = row.at("source_id").get<std::string>();
      e.audio_path = row.at("audio").get<std::string>();
      e.text = row.at("text").get<std::string>();
      e.duration_s = row.at("duration_s").get<double>();
      e.aug_id = row.at("aug_id").get<int>();
      e.noise_name = row.at("noise").get<std::string>();
      if (!row.at("snr_db").is_null()) e.snr_db = row["snr_db"].get<double>();
      e.mixture_gain = row.at("mixture_gain").get<double>();
      e.seed = row.at("seed").get<std::uint64_t>();
      if ((e.aug_id == 0) != !e.snr_db) throw Error(ErrorCode::MalformedRow, "snr_db must be null iff aug_id is 0");
      entries.push_back(std::move(e));
    } catch (const Json::exception& ex) {
      throw Error(ErrorCode::MalformedRow,
                  path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    } catch (const Error& ex) {
      throw Error(ErrorCode::MalformedRow, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

void write_summary(std::span<const noisegen::NoiseSpec> specs, std::uint64_t master_seed,
                   const BuildResult& result, const VerifyReport* verification,
                   const fs::path& path) {
  Json jspecs = Json::array();
  for (const auto& s : specs) {
    Json js = {{"name", s.name},
               {"kind", kind_name(s.spectrum.kind)},
               {"snr_db", s.snr_db},
               {"aug_id", s.aug_id}};
    if (s.spectrum.kind == noisegen::SpectrumKind::PsdTable) {
      Json pts = Json::array();
      for (const auto& p : s.spectrum.psd_points) pts.push_back({p.freq_hz, p.power_db});
      js["psd_points"] = pts;
    }
    jspecs.push_back(js);
  }
  std::map<std::string, std::size_t> per_aug;
  for (const auto& e : result.entries) ++per_aug[std::to_string(e.aug_id)];

  Json summary = {{"specs", jspecs},
                  {"master_seed", master_seed},
                  {"n_entries", result.entries.size()},
                  {"per_aug_id", per_aug},
                  {"failures", result.failures}};
  if (verification) {
    summary["verification"] = {{"n_checked", verification->n_checked},
                               {"n_clean_skipped", verification->n_clean_skipped},
                               {"max_abs_deviation_db", verification->max_abs_deviation_db},
                               {"tolerance_db", verification->tolerance_db},
                               {"n_exceeding", verification->n_exceeding},
                               {"flagged_ids", verification->flagged_ids},
                               {"missing", verification->missing}};
  }
  binary::write_text(path, summary.dump(2) + "\n");
}

}  // namespace lrtts::augment
