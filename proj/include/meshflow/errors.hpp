#pragma once

#include <stdexcept>
#include <string>

namespace meshflow {

enum class ErrorKind {
    // network validation
    InvalidNetwork,
    NonzeroPhaseShift,
    NonpositiveTap,
    NoReferenceBus,
    DisconnectedNetwork,
    // case parsing
    SyntaxError,
    MissingSection,
    NonNumericEntry,
    UnsupportedCostModel,
    PhaseShifterPresent,
    MissingFile,
    // model construction
    InvalidSpec,
    MissingCost,
    PenaltyOnExactModel,
    // solver
    EmptyInterior,
};

inline const char* to_string(ErrorKind kind);

/// Structured failure raised by every module. `line`/`column` are 1-based and
/// zero when not applicable.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what, int line = 0, int column = 0)
        : std::runtime_error(format(kind, what, line, column)),
          kind_(kind), line_(line), column_(column) {}

    ErrorKind kind() const noexcept { return kind_; }
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

  private:
    static std::string format(ErrorKind kind, const std::string& what, int line, int column) {
        std::string out = to_string(kind);
        if (line > 0) {
            out += " (line " + std::to_string(line);
            if (column > 0) out += ", column " + std::to_string(column);
            out += ")";
        }
        if (!what.empty()) out += ": " + what;
        return out;
    }

    ErrorKind kind_;
    int line_;
    int column_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidNetwork: return "InvalidNetwork";
        case ErrorKind::NonzeroPhaseShift: return "NonzeroPhaseShift";
        case ErrorKind::NonpositiveTap: return "NonpositiveTap";
        case ErrorKind::NoReferenceBus: return "NoReferenceBus";
        case ErrorKind::DisconnectedNetwork: return "DisconnectedNetwork";
        case ErrorKind::SyntaxError: return "SyntaxError";
        case ErrorKind::MissingSection: return "MissingSection";
        case ErrorKind::NonNumericEntry: return "NonNumericEntry";
        case ErrorKind::UnsupportedCostModel: return "UnsupportedCostModel";
        case ErrorKind::PhaseShifterPresent: return "PhaseShifterPresent";
        case ErrorKind::MissingFile: return "MissingFile";
        case ErrorKind::InvalidSpec: return "InvalidSpec";
        case ErrorKind::MissingCost: return "MissingCost";
        case ErrorKind::PenaltyOnExactModel: return "PenaltyOnExactModel";
        case ErrorKind::EmptyInterior: return "EmptyInterior";
    }
    return "Unknown";
}

}  // namespace meshflow
