#pragma once

// Shared fixtures for the unit and acceptance suites.

#include "lrtts/audio.hpp"
#include "lrtts/rng.hpp"

#include <unsupported/Eigen/FFT>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include <unistd.h>

namespace lrtts::testing {

/// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("lrtts_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline audio::AudioClip sine(double freq_hz, double amplitude, double seconds, int fs = 22050) {
  audio::AudioClip clip;
  clip.sample_rate_hz = fs;
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * fs));
  clip.samples.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    clip.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / fs);
  }
  return clip;
}

/// Alternating Gaussian bursts and digital silence, starting with a burst.
inline audio::AudioClip gated_noise(double burst_s, double gap_s, int n_bursts, double stddev,
                                    std::uint64_t seed, int fs = 22050) {
  Rng rng(seed);
  const auto burst = static_cast<Eigen::Index>(std::llround(burst_s * fs));
  const auto gap = static_cast<Eigen::Index>(std::llround(gap_s * fs));
  audio::AudioClip clip;
  clip.sample_rate_hz = fs;
  clip.samples = Eigen::VectorXd::Zero(n_bursts * (burst + gap));
  for (int b = 0; b < n_bursts; ++b) {
    for (Eigen::Index i = 0; i < burst; ++i) clip.samples[b * (burst + gap) + i] = stddev * rng.gaussian();
  }
  return clip;
}

/// Voiced "syllables" (harmonic complex under a raised-cosine envelope)
/// separated by pauses, at a random overall level. Enough structure for the
/// active-level detector to see both speech and silence.
inline audio::AudioClip speech_like(double seconds, std::uint64_t seed, int fs = 22050) {
  Rng rng(seed);
  audio::AudioClip clip;
  clip.sample_rate_hz = fs;
  const auto n = static_cast<Eigen::Index>(std::llround(seconds * fs));
  clip.samples = Eigen::VectorXd::Zero(n);
  const double level = std::pow(10.0, rng.uniform(-30.0, -12.0) / 20.0);
  Eigen::Index pos = static_cast<Eigen::Index>(rng.uniform(0.05, 0.3) * fs);
  while (pos < n) {
    const auto syl = static_cast<Eigen::Index>(rng.uniform(0.08, 0.35) * fs);
    const double f0 = rng.uniform(90.0, 220.0);
    const double amp = level * rng.uniform(0.4, 1.0);
    for (Eigen::Index i = 0; i < syl && pos + i < n; ++i) {
      const double env = std::pow(std::sin(std::numbers::pi * i / syl), 2);
      double v = 0.0;
      for (int h = 1; h <= 8; ++h) v += std::sin(2.0 * std::numbers::pi * f0 * h * i / fs) / h;
      clip.samples[pos + i] = amp * env * v;
    }
    pos += syl + static_cast<Eigen::Index>(rng.uniform(0.02, 0.4) * fs);
  }
  return clip;
}

/// Welch PSD (periodic Hann, 50% overlap), one-sided, arbitrary units.
inline Eigen::VectorXd welch_psd(const Eigen::VectorXd& x, int nperseg) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> win(nperseg), seg(nperseg);
  for (int i = 0; i < nperseg; ++i) win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / nperseg);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(nperseg / 2 + 1);
  std::vector<std::complex<double>> spec;
  int count = 0;
  for (Eigen::Index start = 0; start + nperseg <= x.size(); start += nperseg / 2, ++count) {
    for (int i = 0; i < nperseg; ++i) seg[i] = x[start + i] * win[i];
    fft.fwd(spec, seg);
    for (int k = 0; k <= nperseg / 2; ++k) acc[k] += std::norm(spec[k]);
  }
  return acc / count;
}

}  // namespace lrtts::testing
