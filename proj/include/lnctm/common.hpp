#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lnctm {

/// Absolute tolerance used for every shape check, branch test and defensive
/// check in the library (vehicles, or vehicles per timestep).
inline constexpr double kTolerance = 1e-9;

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CflViolation : public Error {
    using Error::Error;
};

class ShapeViolation : public Error {
    using Error::Error;
};

class DegenerateDiagram : public Error {
    using Error::Error;
};

class NegativeDensity : public Error {
    using Error::Error;
};

class InvalidSpec : public Error {
    using Error::Error;
};

class DimensionMismatch : public Error {
    using Error::Error;
};

class TooLarge : public Error {
    using Error::Error;
};

class ParseError : public Error {
    using Error::Error;
};

class IoError : public Error {
    using Error::Error;
};

/// One problem found while validating a scenario or node instance.
struct Diagnostic {
    std::string code;     // e.g. "CflViolation"
    std::string subject;  // e.g. "link 3"
    std::string message;

    std::string to_string() const { return code + " (" + subject + "): " + message; }
};

/// Thrown when a document parses but does not describe a runnable model.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<Diagnostic> diagnostics)
        : Error(summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

    const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

private:
    static std::string summarize(const std::vector<Diagnostic>& ds) {
        std::string out = "validation failed";
        for (const auto& d : ds) out += "\n  " + d.to_string();
        return out;
    }

    std::vector<Diagnostic> diagnostics_;
};

}  // namespace lnctm
