#pragma once

#include <stdexcept>
#include <string>

namespace netdyn {

enum class ErrorKind {
    domain,
    no_solution,
    degenerate_border,
    singularity,
    not_applicable,
    no_bcb,
    no_pdb,
    no_threshold,
    assumption_violated,
    non_invariant,
};

inline const char* to_string(ErrorKind k)
{
    switch (k) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::no_solution: return "no-solution";
    case ErrorKind::degenerate_border: return "degenerate-border";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::not_applicable: return "not-applicable";
    case ErrorKind::no_bcb: return "no-bcb";
    case ErrorKind::no_pdb: return "no-pdb-in-bracket";
    case ErrorKind::no_threshold: return "no-threshold";
    case ErrorKind::assumption_violated: return "assumption-violated";
    case ErrorKind::non_invariant: return "non-invariant";
    }
    return "unknown";
}

/// Numerical failure raised by every module. The CLI maps it to exit code 3.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace netdyn
