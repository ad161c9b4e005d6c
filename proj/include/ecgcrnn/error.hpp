#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecgcrnn {

enum class Errc {
  // record_io
  TruncatedFile,
  UnsupportedType,
  BadName,
  BadLabel,
  DuplicateId,
  EmptyManifest,
  BadSize,
  BadRecord,
  // dsp
  BadSpec,
  SignalTooShort,
  BadRate,
  EmptyInput,
  ZeroVariance,
  // pipeline / nn
  TooShort,
  ShapeMismatch,
  StaleTrace,
  BadCheckpoint,
  // train
  BadDistribution,
  NonFiniteGradient,
  NonFiniteLoss,
  BadConfig,
  // eval
  LengthMismatch,
  EmptyMatrix,
  OutOfRange,
  // stream
  OutOfOrder,
  RateMismatch,
  Overflow,
  ModelNotLoaded,
  SessionMismatch,
  Protocol,
  Io,
};

std::string_view errc_name(Errc code);

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ecgcrnn
