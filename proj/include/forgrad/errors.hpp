#pragma once

#include <stdexcept>
#include <string>

namespace forgrad {

/// Base of every error the library throws. `kind()` is a stable identifier
/// used by the CLI and the Python bindings to map failures to exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FORGRAD_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

// nn-core
FORGRAD_DEFINE_ERROR(ShapeMismatch);
FORGRAD_DEFINE_ERROR(NonFinite);
FORGRAD_DEFINE_ERROR(StaleCache);
FORGRAD_DEFINE_ERROR(Divergence);
FORGRAD_DEFINE_ERROR(FormatError);
FORGRAD_DEFINE_ERROR(VersionError);
FORGRAD_DEFINE_ERROR(ValidationError);
// spectral
FORGRAD_DEFINE_ERROR(AlreadyCentered);
FORGRAD_DEFINE_ERROR(EmptyInput);
FORGRAD_DEFINE_ERROR(InsufficientBins);
FORGRAD_DEFINE_ERROR(NegativeSigma);
// attribution
FORGRAD_DEFINE_ERROR(NotAConvLayer);
FORGRAD_DEFINE_ERROR(DegenerateMasks);
FORGRAD_DEFINE_ERROR(ConfigError);
// metrics
FORGRAD_DEFINE_ERROR(DegenerateSubsetSize);
// filtering
FORGRAD_DEFINE_ERROR(UnsupportedMethod);
FORGRAD_DEFINE_ERROR(EmptyValidationSet);
// harness
FORGRAD_DEFINE_ERROR(CountMismatch);
FORGRAD_DEFINE_ERROR(SplitViolation);

#undef FORGRAD_DEFINE_ERROR

}  // namespace forgrad
