#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "midout/rng.hpp"
#include "midout/tape.hpp"
#include "midout/tensor.hpp"

namespace midout {

// Name -> trainable tensor registry. std::map keeps iteration lexicographic
// by name, which fixes checkpoint layout and optimizer visit order.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Shape shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t value_count() const;
  void zero_all_grads();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Fills every parameter of the store registered so far with U[-0.08, 0.08]
// draws, in lexicographic name order. Callers overwrite special-case
// entries (forget biases) afterwards.
void init_uniform(ParameterStore& store, RngStream& rng, double bound = 0.08);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  // first/second moment per parameter name, sized on first step
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

// Bias-corrected Adam update over every parameter; zeroes grads afterwards.
void adam_step(ParameterStore& store, AdamState& state);

// Central-difference gradient check. model_loss must rebuild the loss on the
// given tape deterministically from the current parameter values. Samples
// coords_per_param coordinates of every parameter and returns the max of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). A non-finite loss
// reports as +inf rather than throwing.
double grad_check(ParameterStore& store, const std::function<Var(ComputeTape&)>& model_loss,
                  double eps, int coords_per_param, RngStream& rng);

}  // namespace midout
