#pragma once

#include <stdexcept>
#include <string>

namespace manifool {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MANIFOOL_DEFINE_ERROR(Name)            \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  }

MANIFOOL_DEFINE_ERROR(LogUndefined);
MANIFOOL_DEFINE_ERROR(HorizonPoint);
MANIFOOL_DEFINE_ERROR(DegenerateTangent);
MANIFOOL_DEFINE_ERROR(DimensionMismatch);
MANIFOOL_DEFINE_ERROR(EmptyDataset);
MANIFOOL_DEFINE_ERROR(FormatError);
MANIFOOL_DEFINE_ERROR(ZeroImage);
MANIFOOL_DEFINE_ERROR(BracketFailure);
MANIFOOL_DEFINE_ERROR(SegmentOverflow);
MANIFOOL_DEFINE_ERROR(AllFailed);
MANIFOOL_DEFINE_ERROR(InvalidArgument);

#undef MANIFOOL_DEFINE_ERROR

}  // namespace manifool
