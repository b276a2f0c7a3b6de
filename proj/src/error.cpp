#include "hopf/error.hpp"

namespace hopf {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonStarShaped: return "NonStarShaped";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::HarmonicMismatch: return "HarmonicMismatch";
    case ErrorKind::MissingBranch: return "MissingBranch";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::NonPositiveSpeed: return "NonPositiveSpeed";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::NoLco: return "NoLco";
    case ErrorKind::NotSettled: return "NotSettled";
    case ErrorKind::NotStabilized: return "NotStabilized";
    case ErrorKind::Invasive: return "Invasive";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace hopf
