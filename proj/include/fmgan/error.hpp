#pragma once

#include <stdexcept>
#include <string>

namespace fmgan {

enum class ErrorKind {
  dimension,
  parameter,
  numeric,
  input,
  config,
  capacity,
  contract,
  range,
};

const char* to_string(ErrorKind kind);

// Base of every error raised by the library. The kind drives the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FMGAN_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FMGAN_DEFINE_ERROR(DimensionError, dimension)
FMGAN_DEFINE_ERROR(ParameterError, parameter)
FMGAN_DEFINE_ERROR(NumericError, numeric)
FMGAN_DEFINE_ERROR(InputError, input)
FMGAN_DEFINE_ERROR(ConfigError, config)
FMGAN_DEFINE_ERROR(CapacityError, capacity)
FMGAN_DEFINE_ERROR(ContractError, contract)
FMGAN_DEFINE_ERROR(RangeError, range)

#undef FMGAN_DEFINE_ERROR

// Process exit status for an error category: config=2, input=3, numeric=4, rest=1.
int exit_code(ErrorKind kind) noexcept;

}  // namespace fmgan
