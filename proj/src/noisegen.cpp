#include "lrtts/noisegen.hpp"

#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/rng.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lrtts::noisegen {

namespace {

// Smallest 5-smooth integer >= n; keeps the mixed-radix FFT fast for any clip length.
Eigen::Index next_fast_size(Eigen::Index n) {
  for (Eigen::Index m = std::max<Eigen::Index>(n, 1);; ++m) {
    Eigen::Index r = m;
    for (Eigen::Index p : {2, 3, 5}) {
      while (r % p == 0) r /= p;
    }
    if (r == 1) return m;
  }
}

void normalize_rms(Eigen::VectorXd& x) {
  const double rms = std::sqrt(audio::mean_power(x));
  if (rms > 0.0) x /= rms;
}

}  // namespace

std::vector<PsdPoint> default_sensor_psd() {
  return {{20.0, 17.0}, {50.0, 13.0},  {100.0, 10.0},  {200.0, 7.0},
          {300.0, 5.2}, {500.0, 3.0},  {700.0, 1.5},   {1000.0, 0.0},
          {2000.0, 0.0}, {4000.0, 0.0}, {6000.0, 0.0}, {8000.0, 0.0}};
}

std::vector<NoiseSpec> default_noise_specs() {
  return {
      {"white", SpectrumSpec::white(), 25.0, 1},
      {"usasi", SpectrumSpec::usasi(), 15.0, 2},
      {"sensor", SpectrumSpec::table(default_sensor_psd()), 20.0, 3},
  };
}

void validate(const SpectrumSpec& spec, int sample_rate_hz) {
  if (spec.kind != SpectrumKind::PsdTable) return;
  const auto& pts = spec.psd_points;
  if (pts.size() < 2) throw Error(ErrorCode::BadSpectrum, "PSD table needs at least 2 points");
  const double nyquist = sample_rate_hz / 2.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!(pts[i].freq_hz > 0.0) || pts[i].freq_hz > nyquist) {
      throw Error(ErrorCode::BadSpectrum, "PSD point " + std::to_string(i) + " at " +
                                              std::to_string(pts[i].freq_hz) +
                                              " Hz outside (0, Nyquist]");
    }
    if (!std::isfinite(pts[i].power_db)) {
      throw Error(ErrorCode::BadSpectrum, "PSD point " + std::to_string(i) + " has non-finite power");
    }
    if (i > 0 && !(pts[i].freq_hz > pts[i - 1].freq_hz)) {
      throw Error(ErrorCode::BadSpectrum, "PSD frequencies must be strictly increasing");
    }
  }
}

double target_power_response(const SpectrumSpec& spec, double freq_hz) {
  switch (spec.kind) {
    case SpectrumKind::White:
      return 1.0;
    case SpectrumKind::Usasi: {
      const double f2 = freq_hz * freq_hz;
      const double hp = kUsasiHighPassHz * kUsasiHighPassHz;
      const double lp = kUsasiLowPassHz * kUsasiLowPassHz;
      return f2 / ((f2 + hp) * (f2 + lp));
    }
    case SpectrumKind::PsdTable: {
      const auto& pts = spec.psd_points;
      double db;
      if (freq_hz <= pts.front().freq_hz) {
        db = pts.front().power_db;
      } else if (freq_hz >= pts.back().freq_hz) {
        db = pts.back().power_db;
      } else {
        const auto hi = std::upper_bound(pts.begin(), pts.end(), freq_hz,
                                         [](double f, const PsdPoint& p) { return f < p.freq_hz; });
        const auto lo = hi - 1;
        const double t = std::log(freq_hz / lo->freq_hz) / std::log(hi->freq_hz / lo->freq_hz);
        db = lo->power_db + t * (hi->power_db - lo->power_db);
      }
      return std::pow(10.0, db / 10.0);
    }
  }
  return 1.0;
}

Eigen::VectorXd white_gaussian(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rng.gaussian();
  return out;
}

Eigen::VectorXd shaped_noise(Eigen::Index n, const SpectrumSpec& spec, int sample_rate_hz,
                             std::uint64_t seed) {
  if (sample_rate_hz <= 0) throw Error(ErrorCode::BadConfig, "sample rate must be positive");
  if (n < sample_rate_hz) {
    throw Error(ErrorCode::TooShort, "shaped noise needs at least one second (" +
                                         std::to_string(sample_rate_hz) + " samples), got " +
                                         std::to_string(n));
  }
  validate(spec, sample_rate_hz);

  // Shaping is circular over a 5-smooth length >= n; the leading n samples are kept.
  const Eigen::Index len = next_fast_size(n);
  Eigen::VectorXd white = white_gaussian(len, seed);
  Eigen::VectorXd out;
  if (spec.kind == SpectrumKind::White) {
    out = white.head(n);
  } else {
    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<double> time(white.data(), white.data() + len);
    std::vector<std::complex<double>> freq;
    fft.fwd(freq, time);
    for (std::size_t k = 0; k < freq.size(); ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(len);
      freq[k] *= std::sqrt(target_power_response(spec, f));
    }
    fft.inv(time, freq, len);
    out = Eigen::Map<const Eigen::VectorXd>(time.data(), n);
  }
  normalize_rms(out);
  return out;
}

Eigen::VectorXd mixing_noise(Eigen::Index n, const SpectrumSpec& spec, int sample_rate_hz,
                             std::uint64_t seed) {
  const Eigen::Index len = std::max<Eigen::Index>(n, sample_rate_hz);
  return shaped_noise(len, spec, sample_rate_hz, seed).head(n);
}

MixResult mix_at_snr(const audio::AudioClip& speech, const SpectrumSpec& spec, double snr_db,
                     std::uint64_t seed) {
  const auto level = audio::active_speech_level_p56(speech);
  const Eigen::VectorXd noise = mixing_noise(speech.size(), spec, speech.sample_rate_hz, seed);

  const double active_power = std::pow(10.0, level.active_level_db / 10.0);
  const double target_noise_power = active_power / std::pow(10.0, snr_db / 10.0);

  MixResult result;
  result.noise_gain = std::sqrt(target_noise_power / audio::mean_power(noise));
  result.active_level_db = level.active_level_db;
  result.noise_power_db = audio::power_db(target_noise_power);
  result.mixture.sample_rate_hz = speech.sample_rate_hz;
  result.mixture.samples = speech.samples + result.noise_gain * noise;

  const double peak = result.mixture.samples.cwiseAbs().maxCoeff();
  if (peak > 1.0) {
    result.mixture_gain = 0.99 / peak;
    result.mixture.samples *= result.mixture_gain;
  }
  return result;
}

std::vector<PsdPoint> read_psd_csv(const std::filesystem::path& path) {
  std::istringstream in(binary::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::BadSpectrum, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "freq_hz,power_db") {
    throw Error(ErrorCode::BadSpectrum, path.string() + ": expected header freq_hz,power_db");
  }
  std::vector<PsdPoint> points;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      std::size_t used = 0;
      const double f = std::stod(line.substr(0, comma), &used);
      const double p = std::stod(line.substr(comma + 1));
      points.push_back({f, p});
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadSpectrum, path.string() + ":" + std::to_string(line_no) +
                                              ": cannot parse '" + line + "'");
    }
  }
  return points;
}

void write_psd_csv(const std::vector<PsdPoint>& points, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "freq_hz,power_db\n";
  for (const auto& p : points) out << p.freq_hz << ',' << p.power_db << '\n';
  binary::write_text(path, out.str());
}

}  // namespace lrtts::noisegen
