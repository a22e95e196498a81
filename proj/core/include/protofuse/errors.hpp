#pragma once

#include <stdexcept>
#include <string>

namespace protofuse {

// Base of every error thrown by the library. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PROTOFUSE_DEFINE_ERROR(Name) \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  }

PROTOFUSE_DEFINE_ERROR(LoadError);
PROTOFUSE_DEFINE_ERROR(SchemaError);
PROTOFUSE_DEFINE_ERROR(ConfigError);
PROTOFUSE_DEFINE_ERROR(PreconditionError);
PROTOFUSE_DEFINE_ERROR(ArityError);
PROTOFUSE_DEFINE_ERROR(RangeError);
PROTOFUSE_DEFINE_ERROR(NormalizationError);
PROTOFUSE_DEFINE_ERROR(UndefinedMetricError);
PROTOFUSE_DEFINE_ERROR(InitializationError);
PROTOFUSE_DEFINE_ERROR(DivergenceError);

#undef PROTOFUSE_DEFINE_ERROR

}  // namespace protofuse
