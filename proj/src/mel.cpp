#include "lrtts/audio.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace lrtts::audio {

namespace {

constexpr double kLinearHzPerMel = 200.0 / 3.0;
constexpr double kBreakHz = 1000.0;
constexpr double kBreakMel = kBreakHz / kLinearHzPerMel;  // 15
const double kLogStep = std::log(6.4) / 27.0;

}  // namespace

double hz_to_mel(double hz) {
  if (hz < kBreakHz) return hz / kLinearHzPerMel;
  return kBreakMel + std::log(hz / kBreakHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kBreakMel) return mel * kLinearHzPerMel;
  return kBreakHz * std::exp(kLogStep * (mel - kBreakMel));
}

void validate(const MelConfig& cfg, int sample_rate_hz) {
  auto bad = [](const std::string& what) { return Error(ErrorCode::BadConfig, what); };
  if (sample_rate_hz <= 0) throw bad("sample rate must be positive");
  if (cfg.n_fft <= 0 || cfg.hop_length <= 0 || cfg.win_length <= 0 || cfg.n_mels <= 0) {
    throw bad("n_fft, hop_length, win_length and n_mels must be positive");
  }
  if (cfg.win_length > cfg.n_fft) throw bad("win_length exceeds n_fft");
  if (cfg.hop_length > cfg.win_length) throw bad("hop_length exceeds win_length");
  if (!(cfg.fmin_hz >= 0.0 && cfg.fmin_hz < cfg.fmax_hz)) throw bad("need 0 <= fmin < fmax");
  if (cfg.fmax_hz > sample_rate_hz / 2.0) {
    throw bad("fmax " + std::to_string(cfg.fmax_hz) + " Hz exceeds Nyquist");
  }
  if (!(cfg.log_floor > 0.0)) throw bad("log_floor must be positive");
}

Eigen::VectorXd mel_center_frequencies(const MelConfig& cfg) {
  const Eigen::VectorXd mels = Eigen::VectorXd::LinSpaced(cfg.n_mels + 2, hz_to_mel(cfg.fmin_hz),
                                                          hz_to_mel(cfg.fmax_hz));
  return mels.segment(1, cfg.n_mels).unaryExpr([](double m) { return mel_to_hz(m); });
}

Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, int sample_rate_hz) {
  validate(cfg, sample_rate_hz);
  const int n_bins = cfg.n_fft / 2 + 1;
  const Eigen::VectorXd edges =
      Eigen::VectorXd::LinSpaced(cfg.n_mels + 2, hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz))
          .unaryExpr([](double m) { return mel_to_hz(m); });

  Eigen::MatrixXd bank = Eigen::MatrixXd::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / cfg.n_fft;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      bank(m, k) = norm * std::max(0.0, std::min(rise, fall));
    }
    if (!(bank.row(m).sum() > 0.0)) {
      throw Error(ErrorCode::BadConfig, "mel band " + std::to_string(m) +
                                            " covers no FFT bin; lower n_mels or raise n_fft");
    }
  }
  return bank;
}

Eigen::VectorXd analysis_window(const MelConfig& cfg) {
  Eigen::VectorXd w(cfg.win_length);
  for (int i = 0; i < cfg.win_length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.win_length);
  }
  return w;
}

Eigen::Index frame_count(Eigen::Index n_samples, const MelConfig& cfg) {
  if (n_samples < cfg.win_length) return 0;
  return 1 + (n_samples - cfg.win_length) / cfg.hop_length;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  const Eigen::MatrixXd bank = mel_filterbank(cfg, clip.sample_rate_hz);
  if (clip.size() < cfg.win_length) {
    throw Error(ErrorCode::ClipTooShort, std::to_string(clip.size()) + " samples < win_length " +
                                             std::to_string(cfg.win_length));
  }
  const Eigen::VectorXd window = analysis_window(cfg);
  const Eigen::Index n_frames = frame_count(clip.size(), cfg);
  const int n_bins = cfg.n_fft / 2 + 1;

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buffer(cfg.n_fft, 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::VectorXd magnitude(n_bins);

  MelSpectrogram out;
  out.config = cfg;
  out.frames.resize(n_frames, cfg.n_mels);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const Eigen::Index start = t * cfg.hop_length;
    for (int i = 0; i < cfg.win_length; ++i) buffer[i] = clip.samples[start + i] * window[i];
    fft.fwd(spectrum, buffer);
    for (int k = 0; k < n_bins; ++k) magnitude[k] = std::abs(spectrum[k]);
    out.frames.row(t) = (bank * magnitude).cwiseMax(cfg.log_floor).array().log().matrix().transpose();
  }
  return out;
}

void write_melb(const Eigen::MatrixXd& frames, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * static_cast<std::size_t>(frames.size()));
  binary::put_bytes(out, "MELB");
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frames.rows()));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(frames.cols()));
  binary::put_le<std::uint32_t>(out, 0);
  for (Eigen::Index t = 0; t < frames.rows(); ++t) {
    for (Eigen::Index m = 0; m < frames.cols(); ++m) {
      binary::put_le<float>(out, static_cast<float>(frames(t, m)));
    }
  }
  binary::write_file(path, out);
}

Eigen::MatrixXd read_melb(const std::filesystem::path& path) {
  const auto data = binary::read_file(path);
  if (data.size() < 16 || std::string_view(reinterpret_cast<const char*>(data.data()), 4) != "MELB") {
    throw Error(ErrorCode::Io, path.string() + ": not a MELB file");
  }
  const auto rows = binary::get_le<std::uint32_t>(data, 4);
  const auto cols = binary::get_le<std::uint32_t>(data, 8);
  if (data.size() != 16 + 4ull * rows * cols) {
    throw Error(ErrorCode::Io, path.string() + ": payload size does not match header");
  }
  Eigen::MatrixXd frames(rows, cols);
  std::size_t offset = 16;
  for (std::uint32_t t = 0; t < rows; ++t) {
    for (std::uint32_t m = 0; m < cols; ++m, offset += 4) frames(t, m) = binary::get_le<float>(data, offset);
  }
  return frames;
}

}  // namespace lrtts::audio
