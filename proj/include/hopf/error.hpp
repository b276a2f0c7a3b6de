#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hopf {

enum class ErrorKind {
    InvalidArgument,
    NonStarShaped,
    RankDeficient,
    HarmonicMismatch,
    MissingBranch,
    NoConvergence,
    SingularJacobian,
    NonPositiveSpeed,
    NumericalFailure,
    NoLco,
    NotSettled,
    NotStabilized,
    Invasive,
    Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message)
{
    if (!condition) throw Error(kind, message);
}

}  // namespace hopf
