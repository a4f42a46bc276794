#pragma once

#include <stdexcept>
#include <string>

namespace xsg {

// Convention tag written into checkpoints, dataset manifests and run dirs.
// Bump when the axis table, file layouts or flow conventions change.
inline constexpr const char* kConventionVersion = "xsgen.conventions/1";

struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define XSG_CHECK(cond, msg)                                  \
  do {                                                        \
    if (!(cond)) throw ::xsg::ConfigError(std::string(msg));  \
  } while (0)

#define XSG_CHECK_SHAPE(cond, msg)                            \
  do {                                                        \
    if (!(cond)) throw ::xsg::ShapeError(std::string(msg));   \
  } while (0)

#define XSG_CHECK_DOMAIN(cond, msg)                           \
  do {                                                        \
    if (!(cond)) throw ::xsg::DomainError(std::string(msg));  \
  } while (0)

}  // namespace xsg
