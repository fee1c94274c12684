#pragma once

#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace netdyn::cli {

inline constexpr const char* version = "1.0.0";

enum ExitCode { ok = 0, config_error = 2, numerical_error = 3 };

/// Bad command line or config file. `line` is 0 when the problem has no source line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what : what), line_(line)
    {
    }

    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Runs one command. `args` excludes the program name. Output goes to --out when given, else `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& data);

} // namespace netdyn::cli
