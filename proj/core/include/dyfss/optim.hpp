#pragma once

#include <deque>
#include <functional>
#include <string>

#include "dyfss/types.hpp"

namespace dyfss {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
};

/// Named trainable matrices with gradient and Adam moment buffers. Entries
/// have stable addresses; the step counter is shared by the whole set.
class ParameterSet {
 public:
  Parameter& add(std::string name, Matrix init);
  /// Uniform in ±1/sqrt(rows), drawn from `rng`.
  Parameter& add_uniform(std::string name, int rows, int cols, std::mt19937_64& rng);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  long n_scalars() const;
  long step() const { return step_; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  friend void adam_step(ParameterSet&, double, double, double, double);
  std::deque<Parameter> params_;
  long step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update in place; gradients are zeroed afterwards.
void adam_step(ParameterSet& params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
inline void adam_step(ParameterSet& params, const AdamConfig& cfg) {
  adam_step(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
}

/// Evaluates a loss at the current parameter values and accumulates its
/// analytic gradient into each Parameter::grad.
using DifferentiableLoss = std::function<double(ParameterSet&)>;

/// Central-difference gradient check. Probes `n_probes` random scalar
/// entries (all entries when n_probes covers the set) and returns the max of
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8). Parameter values
/// and gradients are restored/zeroed on return.
double finite_diff_check(const DifferentiableLoss& loss, ParameterSet& params, int n_probes, double h,
                         std::uint64_t seed = 0);

}  // namespace dyfss
