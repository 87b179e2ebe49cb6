#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace s3pr {

struct AdamOptions {
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// ADAM with bias correction; one instance per optimization variable.
class AdamState {
 public:
  explicit AdamState(std::size_t size) : first_(size, 0.0), second_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, const AdamOptions& opts) {
    ++steps_;
    const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i] = opts.beta1 * first_[i] + (1.0 - opts.beta1) * grad[i];
      second_[i] = opts.beta2 * second_[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
      params[i] -= opts.learning_rate * (first_[i] / c1) / (std::sqrt(second_[i] / c2) + opts.epsilon);
    }
  }

  const std::vector<double>& first_moment() const { return first_; }
  const std::vector<double>& second_moment() const { return second_; }
  std::size_t step_count() const { return steps_; }

 private:
  std::vector<double> first_;
  std::vector<double> second_;
  std::size_t steps_ = 0;
};

}  // namespace s3pr
