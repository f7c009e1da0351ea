#include "dyfss/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dyfss {

Parameter& ParameterSet::add(std::string name, Matrix init) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.first_moment = Matrix::Zero(init.rows(), init.cols());
  p.second_moment = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  return params_.emplace_back(std::move(p));
}

Parameter& ParameterSet::add_uniform(std::string name, int rows, int cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(rows, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return add(std::move(name), std::move(m));
}

Parameter& ParameterSet::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named '" + name + "'");
}

const Parameter& ParameterSet::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

long ParameterSet::n_scalars() const {
  return std::accumulate(params_.begin(), params_.end(), 0L,
                         [](long acc, const Parameter& p) { return acc + static_cast<long>(p.value.size()); });
}

void adam_step(ParameterSet& params, double lr, double beta1, double beta2, double eps) {
  ++params.step_;
  const double t = static_cast<double>(params.step_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& p : params.params_) {
    p.first_moment = beta1 * p.first_moment + (1.0 - beta1) * p.grad;
    p.second_moment = beta2 * p.second_moment + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (p.first_moment.array() / c1) / ((p.second_moment.array() / c2).sqrt() + eps);
    p.grad.setZero();
  }
}

double finite_diff_check(const DifferentiableLoss& loss, ParameterSet& params, int n_probes, double h,
                         std::uint64_t seed) {
  params.zero_grad();
  loss(params);
  std::vector<std::pair<Parameter*, Eigen::Index>> entries;
  std::vector<double> analytic;
  for (auto& p : params)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      entries.emplace_back(&p, i);
      analytic.push_back(p.grad.data()[i]);
    }
  params.zero_grad();

  std::vector<std::size_t> probes(entries.size());
  std::iota(probes.begin(), probes.end(), std::size_t{0});
  if (n_probes >= 0 && static_cast<std::size_t>(n_probes) < probes.size()) {
    auto rng = make_rng(seed, 0xfd);
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(static_cast<std::size_t>(n_probes));
  }

  double worst = 0.0;
  for (std::size_t k : probes) {
    auto [p, i] = entries[k];
    const double orig = p->value.data()[i];
    p->value.data()[i] = orig + h;
    const double up = loss(params);
    p->value.data()[i] = orig - h;
    const double down = loss(params);
    p->value.data()[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k];
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      params.zero_grad();
      return std::numeric_limits<double>::infinity();
    }
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  params.zero_grad();
  return worst;
}

}  // namespace dyfss
