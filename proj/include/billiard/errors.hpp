#pragma once

#include <stdexcept>
#include <string>

namespace billiard {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define BILLIARD_ERROR(Name)                                        \
    struct Name : Error {                                           \
        explicit Name(const std::string& what = #Name) : Error(what) {} \
    }

// geometry
BILLIARD_ERROR(DegenerateParametrization);
BILLIARD_ERROR(UnresolvedZero);
BILLIARD_ERROR(FlatArc);
BILLIARD_ERROR(ReachExceeded);
BILLIARD_ERROR(ValidationError);

// trajectory
BILLIARD_ERROR(NoIntersection);
BILLIARD_ERROR(TangencyAmbiguous);
BILLIARD_ERROR(BounceCapExceeded);
BILLIARD_ERROR(AmbiguousLocation);
BILLIARD_ERROR(SpeedOutOfBand);

// grazing
BILLIARD_ERROR(EmptyInterval);
BILLIARD_ERROR(AllTrapped);
BILLIARD_ERROR(InsufficientBounces);
BILLIARD_ERROR(DegenerateFamily);
BILLIARD_ERROR(StepFailure);

// jacobians
BILLIARD_ERROR(GrazingAtBounce);
BILLIARD_ERROR(ChartFailure);
BILLIARD_ERROR(HypothesisViolated);
BILLIARD_ERROR(BothCoefficientsTiny);
BILLIARD_ERROR(PreconditionFailed);
BILLIARD_ERROR(GrazingOnPath);

// kinetic
BILLIARD_ERROR(TraceFailure);

// cli
BILLIARD_ERROR(ParseError);

#undef BILLIARD_ERROR

}  // namespace billiard
