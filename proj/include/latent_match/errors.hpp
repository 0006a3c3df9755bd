#pragma once

#include <stdexcept>
#include <string>

namespace latent {

// Base of everything the library throws. Two families: input problems
// (malformed data or configuration) and numerical failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

#define LATENT_DEFINE_ERROR(Name, Base) \
  class Name : public Base {            \
   public:                              \
    using Base::Base;                   \
  }

LATENT_DEFINE_ERROR(SchemaError, InputError);
LATENT_DEFINE_ERROR(InvalidSpec, InputError);

LATENT_DEFINE_ERROR(EmptySubsample, NumericalError);
LATENT_DEFINE_ERROR(DegenerateDenominator, NumericalError);
LATENT_DEFINE_ERROR(RankDeficientBasis, NumericalError);
LATENT_DEFINE_ERROR(NotCertified, NumericalError);
LATENT_DEFINE_ERROR(NonBracketable, NumericalError);
LATENT_DEFINE_ERROR(SingularShifterDesign, NumericalError);
LATENT_DEFINE_ERROR(SingularMoment, NumericalError);
LATENT_DEFINE_ERROR(RankDeficientInstruments, NumericalError);
LATENT_DEFINE_ERROR(DerivativeFloorViolated, NumericalError);
LATENT_DEFINE_ERROR(SingularCovariance, NumericalError);
LATENT_DEFINE_ERROR(RankDeficientDesign, NumericalError);

#undef LATENT_DEFINE_ERROR

}  // namespace latent
