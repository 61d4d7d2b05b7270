#include "lrtts/audio.hpp"
#include "lrtts/error.hpp"

#include <cmath>
#include <vector>

namespace lrtts::audio {

// ITU-T P.56 method B. The envelope is two cascaded one-pole smoothers of the
// rectified signal. For every threshold c_j on the ladder a sample counts as
// active while the envelope is at or above c_j, or for up to `hangover`
// samples after it last was. The active level is the point where
// (active power at c_j) - (c_j in dB) falls to the margin, found by linear
// interpolation in dB between the two rungs that bracket it.
ActiveLevelResult active_speech_level_p56(const AudioClip& clip, const P56Params& params) {
  if (clip.sample_rate_hz <= 0) throw Error(ErrorCode::BadConfig, "sample rate must be positive");
  if (clip.size() == 0 || clip.duration_s() < params.min_duration_s) {
    throw Error(ErrorCode::SignalTooShort,
                "need at least " + std::to_string(params.min_duration_s) + " s, got " +
                    std::to_string(clip.duration_s()) + " s");
  }
  const double fs = clip.sample_rate_hz;
  const double g = std::exp(-1.0 / (params.time_constant_s * fs));
  const auto hangover = static_cast<std::int64_t>(std::ceil(params.hangover_s * fs));
  const int n_thr = params.n_thresholds;

  std::vector<double> thresholds(n_thr);
  for (int j = 0; j < n_thr; ++j) thresholds[j] = std::ldexp(1.0, -j);

  std::vector<std::int64_t> active(n_thr, 0);
  std::vector<std::int64_t> hang(n_thr, hangover);
  double sum_sq = 0.0;
  double p = 0.0;
  double q = 0.0;
  for (double x : clip.samples) {
    sum_sq += x * x;
    p = g * p + (1.0 - g) * std::abs(x);
    q = g * q + (1.0 - g) * p;
    for (int j = 0; j < n_thr; ++j) {
      if (q >= thresholds[j]) {
        ++active[j];
        hang[j] = 0;
      } else if (hang[j] < hangover) {
        ++active[j];
        ++hang[j];
      }
    }
  }

  const int lowest = n_thr - 1;
  if (sum_sq == 0.0 || active[lowest] == 0) {
    throw Error(ErrorCode::SilentSignal, "no threshold crossing; activity undefined");
  }

  const double long_term_power = sum_sq / static_cast<double>(clip.size());
  auto level_db = [&](int j) { return power_db(sum_sq / static_cast<double>(active[j])); };
  auto excess_db = [&](int j) { return level_db(j) - 20.0 * std::log10(thresholds[j]); };

  // Walk the ladder upward from the quietest rung. `excess_db` shrinks as the
  // threshold rises; the first rung at or below the margin closes the bracket.
  double active_db = level_db(lowest);
  if (excess_db(lowest) > params.margin_db) {
    active_db = level_db(0);
    for (int j = lowest - 1; j >= 0; --j) {
      if (active[j] == 0) {
        active_db = level_db(j + 1);
        break;
      }
      const double below = excess_db(j + 1);
      const double here = excess_db(j);
      if (here <= params.margin_db) {
        const double f = (below - params.margin_db) / (below - here);
        active_db = level_db(j + 1) + f * (level_db(j) - level_db(j + 1));
        break;
      }
    }
  }

  ActiveLevelResult result;
  result.active_level_db = active_db;
  result.long_term_level_db = power_db(long_term_power);
  result.activity_factor = std::min(1.0, long_term_power / std::pow(10.0, active_db / 10.0));
  return result;
}

}  // namespace lrtts::audio
