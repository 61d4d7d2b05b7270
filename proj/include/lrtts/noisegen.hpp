#pragma once

#include "lrtts/audio.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace lrtts::noisegen {

enum class SpectrumKind { White, Usasi, PsdTable };

struct PsdPoint {
  double freq_hz = 0.0;
  double power_db = 0.0;
};

struct SpectrumSpec {
  SpectrumKind kind = SpectrumKind::White;
  std::vector<PsdPoint> psd_points;  // required iff kind == PsdTable

  static SpectrumSpec white() { return {SpectrumKind::White, {}}; }
  static SpectrumSpec usasi() { return {SpectrumKind::Usasi, {}}; }
  static SpectrumSpec table(std::vector<PsdPoint> points) {
    return {SpectrumKind::PsdTable, std::move(points)};
  }
};

/// One augmentation: a noise at a target active-speech SNR, labeled by its
/// augmentation id (0 is reserved for the clean original).
struct NoiseSpec {
  std::string name;
  SpectrumSpec spectrum;
  double snr_db = 0.0;
  int aug_id = 1;
};

/// USASI program-noise corners: first-order high-pass at 100 Hz cascaded with
/// first-order low-pass at 320 Hz.
inline constexpr double kUsasiHighPassHz = 100.0;
inline constexpr double kUsasiLowPassHz = 320.0;

/// Electret-microphone noise floor approximation used for the "sensor" noise:
/// rises about 10 dB/decade below 1 kHz, flat above. An approximation of the
/// typical shape, not a measured datasheet curve.
std::vector<PsdPoint> default_sensor_psd();

/// The three default augmentations: white 25 dB, USASI 15 dB, sensor 20 dB,
/// with aug ids 1, 2, 3.
std::vector<NoiseSpec> default_noise_specs();

/// Throws BadSpectrum when a PsdTable is unusable at `sample_rate_hz`.
void validate(const SpectrumSpec& spec, int sample_rate_hz);

/// Target power response |H(f)|^2 (linear, unnormalized) at `freq_hz`.
double target_power_response(const SpectrumSpec& spec, double freq_hz);

/// n i.i.d. N(0, 1) samples from `Rng(seed)`.
Eigen::VectorXd white_gaussian(Eigen::Index n, std::uint64_t seed);

/// White Gaussian noise shaped by |H(f)| in the frequency domain and
/// normalized to unit RMS. Requires n >= sample_rate_hz.
Eigen::VectorXd shaped_noise(Eigen::Index n, const SpectrumSpec& spec, int sample_rate_hz,
                             std::uint64_t seed);

struct MixResult {
  audio::AudioClip mixture;
  double noise_gain = 0.0;     // applied to the unit-RMS noise before summing
  double mixture_gain = 1.0;   // < 1 when the overflow rescue rescaled the sum
  double active_level_db = 0.0;
  double noise_power_db = 0.0;  // of the scaled noise, before mixture_gain
};

/// speech + g * noise where g makes active_power(speech) / power(g * noise)
/// equal 10^(snr_db/10). If the sum peaks above 1.0 the whole mixture is scaled
/// by 0.99 / peak, which leaves the SNR untouched.
MixResult mix_at_snr(const audio::AudioClip& speech, const SpectrumSpec& spec, double snr_db,
                     std::uint64_t seed);

/// The same noise `mix_at_snr` would draw for a clip of `n` samples.
Eigen::VectorXd mixing_noise(Eigen::Index n, const SpectrumSpec& spec, int sample_rate_hz,
                             std::uint64_t seed);

/// CSV with header `freq_hz,power_db`.
std::vector<PsdPoint> read_psd_csv(const std::filesystem::path& path);
void write_psd_csv(const std::vector<PsdPoint>& points, const std::filesystem::path& path);

}  // namespace lrtts::noisegen
