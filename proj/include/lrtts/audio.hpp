#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>

namespace lrtts::audio {

/// Mono PCM in [-1, 1] at a fixed sample rate.
struct AudioClip {
  Eigen::VectorXd samples;
  int sample_rate_hz = 22050;

  Eigen::Index size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }
};

/// Mean square of a signal (0 for empty input).
template <typename Derived>
typename Derived::Scalar mean_power(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.size() == 0 ? Scalar(0) : x.squaredNorm() / static_cast<Scalar>(x.size());
}

/// 10 log10 of a power relative to a full-scale square wave.
inline double power_db(double power) { return 10.0 * std::log10(power); }

// --- WAV ------------------------------------------------------------------

/// Reads RIFF/WAVE, 16-bit PCM, mono. Samples are scaled by 1/32768.
AudioClip read_wav(const std::filesystem::path& path);

/// Sample count and rate from the header only (no payload decode).
struct WavInfo {
  std::int64_t n_samples = 0;
  int sample_rate_hz = 0;
};
WavInfo read_wav_info(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Out-of-range samples are clamped, never wrapped.
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

/// The 16-bit code `write_wav` stores for a sample.
std::int16_t quantize_sample(double x);

// --- Active speech level (ITU-T P.56, method B) -----------------------------

struct ActiveLevelResult {
  double active_level_db = 0.0;     // dB re full-scale square wave
  double activity_factor = 0.0;     // (0, 1]
  double long_term_level_db = 0.0;  // 10 log10(mean(x^2))
};

struct P56Params {
  double time_constant_s = 0.03;
  double hangover_s = 0.2;
  double margin_db = 15.9;
  int n_thresholds = 31;  // c_j = 2^-j, j = 0..n_thresholds-1
  double min_duration_s = 0.5;
};

/// Throws SignalTooShort below `min_duration_s`, SilentSignal when no
/// threshold of the ladder is ever crossed.
ActiveLevelResult active_speech_level_p56(const AudioClip& clip, const P56Params& params = {});

// --- Mel spectrogram --------------------------------------------------------

struct MelConfig {
  int n_fft = 1024;
  int hop_length = 256;
  int win_length = 1024;
  int n_mels = 80;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-5;
};

/// Throws BadConfig for inconsistent settings.
void validate(const MelConfig& cfg, int sample_rate_hz);

struct MelSpectrogram {
  Eigen::MatrixXd frames;  // T x n_mels, natural log
  MelConfig config;
};

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x (n_fft/2 + 1) area-normalized triangular filters.
Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, int sample_rate_hz);

/// Center frequencies (Hz) of the filters returned by `mel_filterbank`.
Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg);

/// Periodic Hann window of `win_length`. Windowed frames are zero-padded to
/// n_fft before the transform.
Eigen::VectorXd analysis_window(const MelConfig& cfg);

/// Frames without padding: T = 1 + (len - win_length) / hop_length.
Eigen::Index frame_count(Eigen::Index n_samples, const MelConfig& cfg);

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg = {});

/// "MELB" container: magic, u32 T, u32 n_mels, u32 reserved, float32 payload
/// row-major (frame-major), all little-endian.
void write_melb(const Eigen::MatrixXd& frames, const std::filesystem::path& path);
Eigen::MatrixXd read_melb(const std::filesystem::path& path);

}  // namespace lrtts::audio
