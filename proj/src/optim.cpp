#include "midout/optim.hpp"

#include <cmath>
#include <limits>

namespace midout {

Tensor& ParameterStore::create(const std::string& name, Shape shape) {
  MIDOUT_CHECK(params_.find(name) == params_.end(), "duplicate parameter name '" << name << "'");
  Tensor t(std::move(shape));
  t.set_requires_grad();
  auto [it, inserted] = params_.emplace(name, std::move(t));
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  MIDOUT_CHECK(it != params_.end(), "unknown parameter '" << name << "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  MIDOUT_CHECK(it != params_.end(), "unknown parameter '" << name << "'");
  return it->second;
}

std::size_t ParameterStore::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParameterStore::zero_all_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void init_uniform(ParameterStore& store, RngStream& rng, double bound) {
  for (auto& [name, t] : store) {
    for (double& v : t.values) v = rng.uniform(-bound, bound);
  }
}

void adam_step(ParameterStore& store, AdamState& state) {
  state.t += 1;
  double corr1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double corr2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : store) {
    MIDOUT_CHECK(p.grad.size() == p.values.size(),
                 "parameter '" << name << "' has no populated grad");
    auto& [m, v] = state.moments[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double g = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      double mhat = m[i] / corr1;
      double vhat = v[i] / corr2;
      p.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  store.zero_all_grads();
}

double grad_check(ParameterStore& store, const std::function<Var(ComputeTape&)>& model_loss,
                  double eps, int coords_per_param, RngStream& rng) {
  const double inf = std::numeric_limits<double>::infinity();
  ComputeTape tape;
  Var loss = model_loss(tape);
  if (!std::isfinite(loss.value())) return inf;
  store.zero_all_grads();
  tape.backward(loss);

  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : store) analytic[name] = p.grad;

  auto eval = [&]() {
    ComputeTape t;
    return model_loss(t).value();
  };

  double worst = 0.0;
  for (auto& [name, p] : store) {
    for (int s = 0; s < coords_per_param; ++s) {
      std::size_t i = static_cast<std::size_t>(rng.below(p.numel()));
      double saved = p.values[i];
      p.values[i] = saved + eps;
      double up = eval();
      p.values[i] = saved - eps;
      double down = eval();
      p.values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) return inf;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[name][i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  store.zero_all_grads();
  return worst;
}

}  // namespace midout
