#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cotasr {

// Every library error derives from Error; the C API maps each kind onto a
// distinct status code (see cotasr.h).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class InvariantError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class InputTooShortError : public Error { using Error::Error; };
class EmptyTargetError : public Error { using Error::Error; };
class VocabError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class UndefinedMetricError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

class InfeasibleTargetError : public Error {
 public:
  InfeasibleTargetError(std::size_t frames, std::size_t required)
      : Error("infeasible CTC target: " + std::to_string(frames) +
              " frames, at least " + std::to_string(required) + " required"),
        frames_(frames), required_(required) {}
  std::size_t frames() const { return frames_; }
  std::size_t required() const { return required_; }

 private:
  std::size_t frames_;
  std::size_t required_;
};

class TrainingDivergedError : public Error {
 public:
  explicit TrainingDivergedError(std::size_t step)
      : Error("training diverged (non-finite loss) at step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace cotasr
