#pragma once

#include <stdexcept>
#include <string>

namespace cdk {

// Root of every error the library throws. Subclasses name the failure; the
// message carries the detail.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CDK_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

// core
CDK_DEFINE_ERROR(ZeroMassError);
CDK_DEFINE_ERROR(InvalidDistributionError);
CDK_DEFINE_ERROR(DomainError);

// corpus
CDK_DEFINE_ERROR(EmptySetError);
CDK_DEFINE_ERROR(TokenOutOfRangeError);
CDK_DEFINE_ERROR(IoError);
CDK_DEFINE_ERROR(FormatError);
CDK_DEFINE_ERROR(CorruptionError);
CDK_DEFINE_ERROR(ParseError);

// verifier / model
CDK_DEFINE_ERROR(PrefixTooLongError);
CDK_DEFINE_ERROR(TransportError);
CDK_DEFINE_ERROR(ProtocolError);

// sampler
CDK_DEFINE_ERROR(NotMemberError);
CDK_DEFINE_ERROR(DeadEndError);
CDK_DEFINE_ERROR(MaxLenExceededError);
CDK_DEFINE_ERROR(FallbackDegenerateError);

// oracle
CDK_DEFINE_ERROR(EnumerationBudgetExceeded);
CDK_DEFINE_ERROR(DegenerateError);
CDK_DEFINE_ERROR(SupportMismatchError);

#undef CDK_DEFINE_ERROR

}  // namespace cdk
