#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrtts {

enum class ErrorCode {
  // audio
  MalformedWav,
  UnsupportedFormat,
  Io,
  SignalTooShort,
  SilentSignal,
  ClipTooShort,
  BadConfig,
  // noisegen
  BadSpectrum,
  TooShort,
  // curation
  MissingMetadata,
  MalformedRow,
  EmptySelection,
  UnknownId,
  EmptySubset,
  // augment
  ConfigError,
  MissingFile,
  // evalkit
  NotRowStochastic,
  NoValidFrames,
  EmptyLabel,
  EmptyReference,
  MalformedAttnFile,
  // toy
  BadRange,
  ShapeMismatch,
  AugIdOutOfRange,
  GraphConsistency,
  // cli
  Usage,
};

std::string_view to_string(ErrorCode code);

/// All library failures are reported through this type; `code()` identifies
/// the failure class, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// True for failures caused by the filesystem rather than by bad input values.
inline bool is_io_error(ErrorCode code) {
  return code == ErrorCode::Io || code == ErrorCode::MissingFile ||
         code == ErrorCode::MissingMetadata;
}

}  // namespace lrtts
