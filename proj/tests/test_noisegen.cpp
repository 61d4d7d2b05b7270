#include "doctest.h"

#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"
#include "lrtts/noisegen.hpp"
#include "lrtts/rng.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace lrtts;
using lrtts::testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected lrtts::Error");
  return ErrorCode::Usage;
}

// Achieved SNR recomputed from the parts: P.56 on the clean speech against the
// power of whatever the mixture added to it.
double remeasured_snr(const audio::AudioClip& speech, const noisegen::MixResult& mix) {
  const Eigen::VectorXd noise = mix.mixture.samples / mix.mixture_gain - speech.samples;
  return audio::active_speech_level_p56(speech).active_level_db - audio::power_db(audio::mean_power(noise));
}

}  // namespace

TEST_CASE("rng: xoshiro256** golden outputs") {
  // Frozen from an independent Python implementation of SplitMix64 seeding,
  // xoshiro256** and the polar method.
  Rng rng(1);
  CHECK(rng.next_u64() == 0xb3f2af6d0fc710c5ull);
  CHECK(rng.next_u64() == 0x853b559647364ceaull);
  CHECK(rng.next_u64() == 0x92f89756082a4514ull);

  Rng g(42);
  CHECK(g.gaussian() == doctest::Approx(-0.7262191382447857).epsilon(1e-14));
  CHECK(g.gaussian() == doctest::Approx(-0.21119691823195985).epsilon(1e-14));
  CHECK(g.gaussian() == doctest::Approx(0.2216227015035933).epsilon(1e-14));
  CHECK(g.gaussian() == doctest::Approx(0.5227716877560146).epsilon(1e-14));

  CHECK(stable_hash(7, "LJ001-0001", 2) == 0x92a01d406fa44d66ull);
}

TEST_CASE("rng: bounded integers and shuffles are deterministic and in range") {
  Rng a(5), b(5);
  std::vector<int> xs(20), ys(20);
  for (int i = 0; i < 20; ++i) xs[i] = ys[i] = i;
  a.shuffle(std::span<int>(xs));
  b.shuffle(std::span<int>(ys));
  CHECK(xs == ys);
  std::sort(xs.begin(), xs.end());
  for (int i = 0; i < 20; ++i) CHECK(xs[i] == i);
  Rng c(9);
  for (int i = 0; i < 1000; ++i) CHECK(c.below(7) < 7);
}

TEST_CASE("white_gaussian: moments, determinism, seed sensitivity") {
  const auto x = noisegen::white_gaussian(1000000, 1);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  CHECK(std::abs(mean) <= 0.005);
  CHECK(std::abs(var - 1.0) <= 0.01);

  CHECK(noisegen::white_gaussian(1000, 1) == noisegen::white_gaussian(1000, 1));
  const auto s1 = noisegen::white_gaussian(16, 1);
  const auto s2 = noisegen::white_gaussian(16, 2);
  CHECK((s1.array() != s2.array()).all());
}

TEST_CASE("shaped_noise: unit RMS for every spectrum kind") {
  for (const auto& spec : {noisegen::SpectrumSpec::white(), noisegen::SpectrumSpec::usasi(),
                           noisegen::SpectrumSpec::table(noisegen::default_sensor_psd())}) {
    for (Eigen::Index n : {22050, 30011, 50000}) {
      const auto x = noisegen::shaped_noise(n, spec, 22050, 3);
      CHECK(x.size() == n);
      CHECK(std::sqrt(audio::mean_power(x)) == doctest::Approx(1.0).epsilon(0.01));
    }
  }
}

TEST_CASE("shaped_noise: white shaping is the identity up to RMS") {
  const Eigen::Index n = 30000;
  const auto shaped = noisegen::shaped_noise(n, noisegen::SpectrumSpec::white(), 22050, 11);
  Eigen::VectorXd white = noisegen::white_gaussian(n, 11);
  white /= std::sqrt(audio::mean_power(white));
  CHECK((shaped - white).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("shaped_noise: USASI follows the analytic curve") {
  const int fs = 22050;
  const int nperseg = 2048;
  const auto x = noisegen::shaped_noise(60 * fs, noisegen::SpectrumSpec::usasi(), fs, 5);
  const auto psd = lrtts::testing::welch_psd(x, nperseg);
  auto analytic_db = [](double f) {
    const double f2 = f * f;
    return 10.0 * std::log10(f2 / ((f2 + 100.0 * 100.0) * (f2 + 320.0 * 320.0)));
  };
  const double bin_hz = static_cast<double>(fs) / nperseg;
  const int ref = static_cast<int>(std::lround(200.0 / bin_hz));
  const double offset = 10.0 * std::log10(psd[ref]) - analytic_db(ref * bin_hz);
  double worst = 0.0;
  for (int k = 1; k <= nperseg / 2; ++k) {
    const double f = k * bin_hz;
    if (f < 50.0 || f > 5000.0) continue;
    worst = std::max(worst, std::abs(10.0 * std::log10(psd[k]) - offset - analytic_db(f)));
  }
  CHECK(worst <= 1.0);
}

TEST_CASE("shaped_noise: a flat table degenerates to white") {
  const int fs = 16000;
  const auto spec = noisegen::SpectrumSpec::table({{100.0, -3.0}, {4000.0, -3.0}});
  const auto psd = lrtts::testing::welch_psd(noisegen::shaped_noise(30 * fs, spec, fs, 8), 512);
  const Eigen::VectorXd db = psd.segment(4, 250).array().log10() * 10.0;
  CHECK(db.maxCoeff() - db.mean() <= 1.0);
  CHECK(db.mean() - db.minCoeff() <= 1.0);
}

TEST_CASE("shaped_noise: table interpolation is linear in log frequency") {
  const auto spec = noisegen::SpectrumSpec::table({{100.0, 0.0}, {1000.0, -20.0}});
  auto db = [&](double f) { return 10.0 * std::log10(noisegen::target_power_response(spec, f)); };
  CHECK(db(50.0) == doctest::Approx(0.0));
  CHECK(db(std::sqrt(100.0 * 1000.0)) == doctest::Approx(-10.0));
  CHECK(db(5000.0) == doctest::Approx(-20.0));
}

TEST_CASE("shaped_noise: errors") {
  CHECK(code_of([] { noisegen::shaped_noise(100, noisegen::SpectrumSpec::usasi(), 22050, 1); }) ==
        ErrorCode::TooShort);
  CHECK(code_of([] {
          noisegen::shaped_noise(22050, noisegen::SpectrumSpec::table({{100.0, 0.0}}), 22050, 1);
        }) == ErrorCode::BadSpectrum);
  CHECK(code_of([] {
          noisegen::shaped_noise(22050, noisegen::SpectrumSpec::table({{200.0, 0.0}, {100.0, 0.0}}),
                                 22050, 1);
        }) == ErrorCode::BadSpectrum);
  CHECK(code_of([] {
          noisegen::shaped_noise(16000, noisegen::SpectrumSpec::table({{100.0, 0.0}, {9000.0, 0.0}}),
                                 16000, 1);
        }) == ErrorCode::BadSpectrum);
}

TEST_CASE("mix_at_snr: unit-RMS tone at 20 dB gets noise gain 0.1") {
  const auto tone = lrtts::testing::sine(1000.0, std::sqrt(2.0), 3.0);
  const auto mix = noisegen::mix_at_snr(tone, noisegen::SpectrumSpec::white(), 20.0, 4);
  CHECK(mix.noise_gain == doctest::Approx(0.1).epsilon(0.01));
  CHECK(mix.mixture_gain < 1.0);  // sqrt(2) peak forces the rescue
  CHECK(mix.mixture.samples.cwiseAbs().maxCoeff() <= 0.99 + 1e-12);
}

TEST_CASE("mix_at_snr: remeasured SNR hits the default targets") {
  const auto specs = noisegen::default_noise_specs();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto speech = lrtts::testing::speech_like(2.5, 100 + seed);
    for (const auto& spec : specs) {
      const auto mix = noisegen::mix_at_snr(speech, spec.spectrum, spec.snr_db, seed);
      CHECK(std::abs(remeasured_snr(speech, mix) - spec.snr_db) <= 0.3);
    }
  }
}

TEST_CASE("mix_at_snr: short clips, determinism, linearity, silence") {
  const auto speech = lrtts::testing::speech_like(0.7, 3);
  const auto a = noisegen::mix_at_snr(speech, noisegen::SpectrumSpec::usasi(), 15.0, 9);
  const auto b = noisegen::mix_at_snr(speech, noisegen::SpectrumSpec::usasi(), 15.0, 9);
  CHECK(a.mixture.samples == b.mixture.samples);
  CHECK(std::abs(remeasured_snr(speech, a) - 15.0) <= 0.3);

  auto louder = speech;
  louder.samples *= 2.5;
  const auto c = noisegen::mix_at_snr(louder, noisegen::SpectrumSpec::usasi(), 15.0, 9);
  CHECK(c.noise_gain == doctest::Approx(2.5 * a.noise_gain).epsilon(0.01));

  audio::AudioClip silent{Eigen::VectorXd::Zero(22050), 22050};
  CHECK(code_of([&] { noisegen::mix_at_snr(silent, noisegen::SpectrumSpec::white(), 20.0, 1); }) ==
        ErrorCode::SilentSignal);
}

TEST_CASE("psd csv: write then read") {
  TempDir dir("psd");
  const auto pts = noisegen::default_sensor_psd();
  noisegen::write_psd_csv(pts, dir / "sensor.csv");
  const auto back = noisegen::read_psd_csv(dir / "sensor.csv");
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].freq_hz == pts[i].freq_hz);
    CHECK(back[i].power_db == pts[i].power_db);
  }
  binary::write_text(dir / "bad.csv", "f,p\n1,2\n");
  CHECK(code_of([&] { noisegen::read_psd_csv(dir / "bad.csv"); }) == ErrorCode::BadSpectrum);
}
