#include "lrtts/audio.hpp"
#include "lrtts/binary_io.hpp"
#include "lrtts/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lrtts::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct ParsedHeader {
  WavInfo info;
  std::uint64_t data_offset = 0;
  std::uint64_t data_bytes = 0;
};

std::uint32_t read_u32(std::istream& in) {
  std::uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return binary::get_le<std::uint32_t>(b, 0);
}

ParsedHeader parse_header(std::istream& in, std::uint64_t file_size, const std::string& name) {
  auto malformed = [&name](const std::string& what) {
    return Error(ErrorCode::MalformedWav, name + ": " + what);
  };
  if (file_size < 12) throw malformed("file shorter than RIFF header");
  char riff[4];
  in.read(riff, 4);
  const std::uint32_t riff_size = read_u32(in);
  char wave[4];
  in.read(wave, 4);
  if (std::string_view(riff, 4) != "RIFF" || std::string_view(wave, 4) != "WAVE") {
    throw malformed("missing RIFF/WAVE magic");
  }
  (void)riff_size;  // commonly wrong in the wild; chunk sizes are authoritative

  ParsedHeader header;
  bool have_fmt = false;
  std::uint64_t pos = 12;
  while (pos + 8 <= file_size) {
    in.seekg(static_cast<std::streamoff>(pos));
    char id[4];
    in.read(id, 4);
    const std::uint32_t size = read_u32(in);
    if (!in) throw malformed("unreadable chunk header");
    const std::string_view chunk(id, 4);
    const std::uint64_t body = pos + 8;
    if (chunk == "fmt ") {
      if (size < 16 || body + size > file_size) throw malformed("bad fmt chunk size");
      std::uint8_t fmt[40] = {};
      in.read(reinterpret_cast<char*>(fmt), std::min<std::uint32_t>(size, 40));
      std::uint16_t format = binary::get_le<std::uint16_t>(fmt, 0);
      const auto channels = binary::get_le<std::uint16_t>(fmt, 2);
      const auto rate = binary::get_le<std::uint32_t>(fmt, 4);
      const auto bits = binary::get_le<std::uint16_t>(fmt, 14);
      if (format == kFormatExtensible && size >= 40) format = binary::get_le<std::uint16_t>(fmt, 24);
      if (format != kFormatPcm) {
        throw Error(ErrorCode::UnsupportedFormat, name + ": format tag " + std::to_string(format));
      }
      if (channels != 1) {
        throw Error(ErrorCode::UnsupportedFormat, name + ": " + std::to_string(channels) + " channels");
      }
      if (bits != 16) {
        throw Error(ErrorCode::UnsupportedFormat, name + ": " + std::to_string(bits) + "-bit samples");
      }
      if (rate == 0) throw malformed("zero sample rate");
      header.info.sample_rate_hz = static_cast<int>(rate);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw malformed("data chunk before fmt chunk");
      if (body + size > file_size) {
        throw malformed("data chunk declares " + std::to_string(size) + " bytes, " +
                        std::to_string(file_size - body) + " present");
      }
      if (size % 2 != 0) throw malformed("odd data size for 16-bit samples");
      header.data_offset = body;
      header.data_bytes = size;
      header.info.n_samples = static_cast<std::int64_t>(size / 2);
      return header;
    }
    pos = body + size + (size & 1u);
  }
  throw malformed(have_fmt ? "no data chunk" : "no fmt chunk");
}

std::uint64_t file_size_of(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot stat " + path.string() + ": " + ec.message());
  return size;
}

}  // namespace

std::int16_t quantize_sample(double x) {
  const double scaled = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

WavInfo read_wav_info(const std::filesystem::path& path) {
  const auto size = file_size_of(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return parse_header(in, size, path.string()).info;
}

AudioClip read_wav(const std::filesystem::path& path) {
  const auto size = file_size_of(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const ParsedHeader header = parse_header(in, size, path.string());

  std::vector<std::uint8_t> payload(header.data_bytes);
  in.seekg(static_cast<std::streamoff>(header.data_offset));
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!in) throw Error(ErrorCode::Io, "short read: " + path.string());

  AudioClip clip;
  clip.sample_rate_hz = header.info.sample_rate_hz;
  clip.samples.resize(header.info.n_samples);
  for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = binary::get_le<std::int16_t>(payload, static_cast<std::size_t>(2 * i)) / 32768.0;
  }
  return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  if (clip.sample_rate_hz <= 0) throw Error(ErrorCode::BadConfig, "sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  binary::put_bytes(out, "RIFF");
  binary::put_le<std::uint32_t>(out, 36 + 2 * n);
  binary::put_bytes(out, "WAVE");
  binary::put_bytes(out, "fmt ");
  binary::put_le<std::uint32_t>(out, 16);
  binary::put_le<std::uint16_t>(out, kFormatPcm);
  binary::put_le<std::uint16_t>(out, 1);
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  binary::put_le<std::uint16_t>(out, 2);
  binary::put_le<std::uint16_t>(out, 16);
  binary::put_bytes(out, "data");
  binary::put_le<std::uint32_t>(out, 2 * n);
  for (double x : clip.samples) binary::put_le<std::int16_t>(out, quantize_sample(x));
  binary::write_file(path, out);
}

}  // namespace lrtts::audio
