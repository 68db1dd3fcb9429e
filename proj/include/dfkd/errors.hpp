#pragma once

#include <stdexcept>
#include <string>

namespace dfkd {

// Bad caller-supplied value (shape mismatch, out-of-range scalar, ...).
struct argument_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed runtime data (non-finite losses/logits, corrupt files, ...).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing external prerequisite (dataset files, checkpoints).
struct setup_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite training loss. Carries where the run blew up; the trainer
// writes a checkpoint before throwing this.
class training_diverged : public std::runtime_error {
 public:
  training_diverged(const std::string& what, int epoch, long step)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step) + ")"),
        epoch_(epoch),
        step_(step) {}

  int epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  int epoch_;
  long step_;
};

}  // namespace dfkd
