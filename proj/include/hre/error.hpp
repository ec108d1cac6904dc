#pragma once

#include <stdexcept>
#include <string>

namespace hre {

// Base class for all evaluation-engine errors. Subclasses mirror the
// failure modes surfaced by the public API so callers can catch narrowly.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HRE_DEFINE_ERROR(Name)                                                 \
    class Name : public Error {                                               \
    public:                                                                    \
        using Error::Error;                                                    \
    }

HRE_DEFINE_ERROR(IoError);
HRE_DEFINE_ERROR(FormatError);
HRE_DEFINE_ERROR(ValueError);
HRE_DEFINE_ERROR(ShapeMismatch);
HRE_DEFINE_ERROR(MissingSplit);
HRE_DEFINE_ERROR(EmptySplit);
HRE_DEFINE_ERROR(UnlabeledData);
HRE_DEFINE_ERROR(EmptyClass);
HRE_DEFINE_ERROR(EmptyList);
HRE_DEFINE_ERROR(EmptyTable);
HRE_DEFINE_ERROR(DegeneratePerformance);
HRE_DEFINE_ERROR(WeightError);
HRE_DEFINE_ERROR(ZeroVariance);
HRE_DEFINE_ERROR(LengthMismatch);
HRE_DEFINE_ERROR(MissingGroup);
HRE_DEFINE_ERROR(PoolTooSmall);
HRE_DEFINE_ERROR(NoGradientOracle);

#undef HRE_DEFINE_ERROR

} // namespace hre
