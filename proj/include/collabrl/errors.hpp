#pragma once

#include <stdexcept>
#include <string>

namespace collabrl {

// QRE fixed-point iteration failed to reach tolerance; carries the residual.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& msg, double residual)
      : std::runtime_error(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Stepping a finished episode, or a policy emitting a token outside the vocab.
class EpisodeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// PPO divergence guard tripped.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupted or incomplete output bundle.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace collabrl
