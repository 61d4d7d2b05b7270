#include "lrtts/error.hpp"
#include "lrtts/rng.hpp"

#include <cmath>

namespace lrtts {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedWav: return "MalformedWav";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::Io: return "Io";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::SilentSignal: return "SilentSignal";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadSpectrum: return "BadSpectrum";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::MissingMetadata: return "MissingMetadata";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::EmptySubset: return "EmptySubset";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::NotRowStochastic: return "NotRowStochastic";
    case ErrorCode::NoValidFrames: return "NoValidFrames";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::MalformedAttnFile: return "MalformedAttnFile";
    case ErrorCode::BadRange: return "BadRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::AugIdOutOfRange: return "AugIdOutOfRange";
    case ErrorCode::GraphConsistency: return "GraphConsistency";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

std::uint64_t stable_hash(std::uint64_t seed, std::string_view key, std::uint64_t index) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 0x100000001B3ull;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : key) mix(static_cast<unsigned char>(c));
  mix(0);
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(index >> (8 * i)));
  return splitmix64(h);
}

}  // namespace lrtts
