#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace melodica {

/// Base of every error raised by the library. Each subclass names one
/// failure mode; callers that only need a message can catch this.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define MELODICA_DEFINE_ERROR(Name)                                            \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
  }

// instrument
class InvalidDigit : public Error {
public:
  explicit InvalidDigit(std::size_t position)
      : Error("invalid melody digit at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

// audio
MELODICA_DEFINE_ERROR(EmptySignal);
MELODICA_DEFINE_ERROR(WindowTooLong);
MELODICA_DEFINE_ERROR(MalformedHeader);
MELODICA_DEFINE_ERROR(UnsupportedEncoding);

// scoring
MELODICA_DEFINE_ERROR(EmptyTarget);

// trajectory
class JointLimit : public Error {
public:
  explicit JointLimit(std::size_t index)
      : Error("joint " + std::to_string(index) + " outside its limits"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

class Unreachable : public Error {
public:
  Unreachable(const std::string &what, double residual_cm, int note = 0)
      : Error(what), residual_cm_(residual_cm), note_(note) {}
  double residual_cm() const noexcept { return residual_cm_; }
  /// Note number (1..11) when raised while solving a strike table, else 0.
  int note() const noexcept { return note_; }

private:
  double residual_cm_;
  int note_;
};

MELODICA_DEFINE_ERROR(MissingConfig);
MELODICA_DEFINE_ERROR(OnsetCollision);

// vision
MELODICA_DEFINE_ERROR(NoInstrument);
MELODICA_DEFINE_ERROR(EmptyMask);

// session
MELODICA_DEFINE_ERROR(IllegalEvent);
MELODICA_DEFINE_ERROR(OpenConversation);
MELODICA_DEFINE_ERROR(NoGrades);
MELODICA_DEFINE_ERROR(IllegalPhase);
MELODICA_DEFINE_ERROR(UnknownSong);

// affect
MELODICA_DEFINE_ERROR(SignalTooShort);
MELODICA_DEFINE_ERROR(MissingAnnotations);
MELODICA_DEFINE_ERROR(DegenerateData);
MELODICA_DEFINE_ERROR(EmptyTrainingSet);
MELODICA_DEFINE_ERROR(InsufficientClassMembers);

#undef MELODICA_DEFINE_ERROR

} // namespace melodica
