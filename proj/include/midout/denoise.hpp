#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "midout/attention.hpp"
#include "midout/layers.hpp"
#include "midout/rng.hpp"

namespace midout {

// One symmetric de-noising sample: clean y of odd length 2n+1 with
// y[n +- j] = mu - j*mu^2/n, and x = y + per-element uniform noise.
struct DenoiseSample {
  double mu = 0.0;
  int n = 0;
  std::vector<double> y;
  std::vector<double> x;
};

struct DenoiseConfig {
  int train_count = 1000;
  int test_count = 100;
  int n_min = 5;
  int n_max = 10;
  double noise_bound = 0.0035;
  int lstm_size = 100;
  double lr = 1e-4;
  int steps = 20000;
  int batch = 32;
  std::uint64_t seed = 1;
};

// Regression variant: scalar head instead of the softmax, raw previous
// value instead of embeddings, so only the hidden-state self-attention
// mechanism can apply.
struct DenoiseModelConfig {
  bool middle_out = false;
  bool hidden_self_attention = false;
  int enc_hidden = 100;
  int dec_hidden = 100;
};

inline DenoiseModelConfig denoise_baseline_config(int lstm = 100) {
  return {false, false, lstm, lstm};
}
inline DenoiseModelConfig denoise_middleout_config(int lstm = 100) {
  return {true, true, lstm, lstm};
}

std::vector<double> clean_symmetric_sequence(double mu, int n);
DenoiseSample make_denoise_sample(double mu, int n, double noise_bound, RngStream& rng);
std::pair<std::vector<DenoiseSample>, std::vector<DenoiseSample>> generate_denoise_dataset(
    const DenoiseConfig& cfg, RngStream& rng);

void write_denoise_jsonl(const std::string& path, const std::vector<DenoiseSample>& samples);
std::vector<DenoiseSample> read_denoise_jsonl(const std::string& path);

class DenoiseModel {
 public:
  DenoiseModel(ParameterStore& store, const DenoiseModelConfig& cfg);

  const DenoiseModelConfig& config() const { return cfg_; }
  void set_forget_biases(double v = 1.0);

  // Teacher-forced loss: per-step MSE over the emitted positions plus the
  // MSE of the middle/initial value predictor, equally weighted.
  Var sample_loss(ComputeTape& tape, const DenoiseSample& s) const;

  // Free-running pass fed by the model's own outputs; the ground-truth
  // length is supplied through x. Position 0 (baseline) or n (middle-out)
  // carries the predictor's estimate.
  std::vector<double> denoise(ComputeTape& tape, const std::vector<double>& x) const;

  // Scalar head on the final bidirectional encoder state.
  double predict_middle_value(ComputeTape& tape, const std::vector<double>& x) const;

 private:
  EncodedSequence encode_values(ComputeTape& tape, const std::vector<double>& x) const;
  struct Step {
    LstmStateVar state;
    Var out;
  };
  Step value_step(ComputeTape& tape, const EncodedSequence& enc, Var prev,
                  const LstmStateVar& state, const std::vector<Var>& hid_memory,
                  Side side) const;

  DenoiseModelConfig cfg_;
  BiEncoder encoder_;
  Linear predictor_;
  BilinearAttention enc_att_;
  std::optional<BilinearAttention> hid_att_;
  std::optional<LstmCell> dec_;
  std::optional<Linear> head_;
  std::optional<LstmCell> dec_left_, dec_right_;
  std::optional<Linear> head_left_, head_right_;
};

struct TrainedDenoise {
  std::unique_ptr<ParameterStore> store;
  std::unique_ptr<DenoiseModel> model;
  std::vector<std::pair<int, double>> loss_curve;  // (step, mean batch loss)
};

// Adam at cfg.lr for cfg.steps steps of cfg.batch samples. Aborts with a
// diagnostic on divergence (non-finite loss).
TrainedDenoise train_denoise(const DenoiseModelConfig& model_cfg, const DenoiseConfig& cfg,
                             const std::vector<DenoiseSample>& train);

struct DenoiseEval {
  double mse = 0.0;
  double symmetric_mse = 0.0;
};

DenoiseEval eval_denoise(const DenoiseModel& model, const std::vector<DenoiseSample>& test);

}  // namespace midout
