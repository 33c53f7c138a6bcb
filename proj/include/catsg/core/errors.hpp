#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace catsg {

// non-fatal diagnostics go to stderr so machine-readable stdout stays clean
inline void warn(const std::string& msg) {
  std::cerr << "[warn] " << msg << "\n";
}

// Error categories map 1:1 onto CLI exit codes (see cli/exit_codes).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

#define CATSG_CHECK(cond, err_type, msg)                                     \
  do {                                                                       \
    if (!(cond)) throw err_type(std::string(msg));                           \
  } while (0)

}  // namespace catsg
