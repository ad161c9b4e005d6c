#include "ecgcrnn/error.hpp"

namespace ecgcrnn {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::UnsupportedType: return "UnsupportedType";
    case Errc::BadName: return "BadName";
    case Errc::BadLabel: return "BadLabel";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::BadSize: return "BadSize";
    case Errc::BadRecord: return "BadRecord";
    case Errc::BadSpec: return "BadSpec";
    case Errc::SignalTooShort: return "SignalTooShort";
    case Errc::BadRate: return "BadRate";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::TooShort: return "TooShort";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::StaleTrace: return "StaleTrace";
    case Errc::BadCheckpoint: return "BadCheckpoint";
    case Errc::BadDistribution: return "BadDistribution";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::BadConfig: return "BadConfig";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::OutOfOrder: return "OutOfOrder";
    case Errc::RateMismatch: return "RateMismatch";
    case Errc::Overflow: return "Overflow";
    case Errc::ModelNotLoaded: return "ModelNotLoaded";
    case Errc::SessionMismatch: return "SessionMismatch";
    case Errc::Protocol: return "Protocol";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace ecgcrnn
