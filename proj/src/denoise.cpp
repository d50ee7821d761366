#include "midout/denoise.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "midout/metrics.hpp"

namespace midout {

namespace {
constexpr std::uint64_t kInitSalt = 2;
constexpr std::uint64_t kShuffleSalt = 3;
}  // namespace

std::vector<double> clean_symmetric_sequence(double mu, int n) {
  MIDOUT_CHECK(n >= 1, "sequence half-length " << n);
  double sigma = mu * mu;
  std::vector<double> y(static_cast<std::size_t>(2 * n + 1));
  for (int k = 0; k <= 2 * n; ++k) {
    int j = std::abs(k - n);
    y[static_cast<std::size_t>(k)] = mu - static_cast<double>(j) * sigma / n;
  }
  return y;
}

DenoiseSample make_denoise_sample(double mu, int n, double noise_bound, RngStream& rng) {
  DenoiseSample s;
  s.mu = mu;
  s.n = n;
  s.y = clean_symmetric_sequence(mu, n);
  s.x.resize(s.y.size());
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    s.x[i] = s.y[i] + rng.uniform(-noise_bound, noise_bound);
  }
  return s;
}

std::pair<std::vector<DenoiseSample>, std::vector<DenoiseSample>> generate_denoise_dataset(
    const DenoiseConfig& cfg, RngStream& rng) {
  auto draw = [&]() {
    double mu = rng.uniform(-1.0, 1.0);
    int n = static_cast<int>(rng.int_in(cfg.n_min, cfg.n_max));
    return make_denoise_sample(mu, n, cfg.noise_bound, rng);
  };
  std::vector<DenoiseSample> train, test;
  train.reserve(static_cast<std::size_t>(cfg.train_count));
  test.reserve(static_cast<std::size_t>(cfg.test_count));
  for (int i = 0; i < cfg.train_count; ++i) train.push_back(draw());
  for (int i = 0; i < cfg.test_count; ++i) test.push_back(draw());
  return {std::move(train), std::move(test)};
}

void write_denoise_jsonl(const std::string& path, const std::vector<DenoiseSample>& samples) {
  std::ofstream out(path);
  MIDOUT_CHECK(out.good(), "cannot open '" << path << "' for writing");
  for (const auto& s : samples) {
    nlohmann::json j;
    j["mu"] = s.mu;
    j["n"] = s.n;
    j["x"] = s.x;
    j["y"] = s.y;
    out << j.dump() << "\n";
  }
  MIDOUT_CHECK(out.good(), "write failed for '" << path << "'");
}

std::vector<DenoiseSample> read_denoise_jsonl(const std::string& path) {
  std::ifstream in(path);
  MIDOUT_CHECK(in.good(), "cannot open '" << path << "'");
  std::vector<DenoiseSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    DenoiseSample s;
    s.mu = j.at("mu").get<double>();
    s.n = j.at("n").get<int>();
    s.x = j.at("x").get<std::vector<double>>();
    s.y = j.at("y").get<std::vector<double>>();
    samples.push_back(std::move(s));
  }
  return samples;
}

DenoiseModel::DenoiseModel(ParameterStore& store, const DenoiseModelConfig& cfg)
    : cfg_(cfg),
      encoder_(store, "enc", 1, cfg.enc_hidden, cfg.dec_hidden),
      predictor_(store, "predictor", 2 * cfg.enc_hidden, 1),
      enc_att_(store, "att_enc", cfg.dec_hidden, 2 * cfg.enc_hidden) {
  if (cfg.hidden_self_attention) {
    hid_att_.emplace(store, "att_hid", cfg.dec_hidden, cfg.dec_hidden);
  }
  int d = 1 + 2 * cfg.enc_hidden + (cfg.hidden_self_attention ? cfg.dec_hidden : 0);
  if (cfg.middle_out) {
    dec_left_.emplace(store, "dec_left", d, cfg.dec_hidden);
    dec_right_.emplace(store, "dec_right", d, cfg.dec_hidden);
    head_left_.emplace(store, "head_left", cfg.dec_hidden, 1);
    head_right_.emplace(store, "head_right", cfg.dec_hidden, 1);
  } else {
    dec_.emplace(store, "dec", d, cfg.dec_hidden);
    head_.emplace(store, "head", cfg.dec_hidden, 1);
  }
}

void DenoiseModel::set_forget_biases(double v) {
  encoder_.set_forget_bias(v);
  if (dec_) dec_->set_forget_bias(v);
  if (dec_left_) dec_left_->set_forget_bias(v);
  if (dec_right_) dec_right_->set_forget_bias(v);
}

EncodedSequence DenoiseModel::encode_values(ComputeTape& tape,
                                            const std::vector<double>& x) const {
  std::vector<Var> inputs;
  inputs.reserve(x.size());
  for (double v : x) inputs.push_back(tape.constant_vector(std::vector<double>{v}));
  return encoder_.encode(tape, inputs);
}

DenoiseModel::Step DenoiseModel::value_step(ComputeTape& tape, const EncodedSequence& enc,
                                            Var prev, const LstmStateVar& state,
                                            const std::vector<Var>& hid_memory,
                                            Side side) const {
  Var query = state.h;
  AttentionResult ca = enc_att_.attend(tape, query, enc.states_matrix);
  std::vector<Var> parts{prev, ca.context};
  if (hid_att_) {
    parts.push_back(hid_att_->attend_memory(tape, query, hid_memory).context);
  }
  Var x = tape.concat(parts);
  const LstmCell& cell = cfg_.middle_out ? (side == Side::kLeft ? *dec_left_ : *dec_right_) : *dec_;
  const Linear& head =
      cfg_.middle_out ? (side == Side::kLeft ? *head_left_ : *head_right_) : *head_;
  Step st;
  st.state = cell.step(tape, x, state);
  st.out = head.apply(tape, st.state.h);
  return st;
}

Var DenoiseModel::sample_loss(ComputeTape& tape, const DenoiseSample& s) const {
  MIDOUT_CHECK(s.y.size() == static_cast<std::size_t>(2 * s.n + 1), "bad sample length");
  EncodedSequence enc = encode_values(tape, s.x);
  int n = s.n;

  // the predictor learns the first decoder input: the initial value for the
  // baseline, the middle value for middle-out
  int start_pos = cfg_.middle_out ? n : 0;
  Var pred_mid = predictor_.apply(tape, enc.final_concat);
  Var mid_loss = tape.mean_squared(
      pred_mid, tape.constant_vector(std::vector<double>{s.y[static_cast<std::size_t>(start_pos)]}));

  std::vector<Var> outs;
  std::vector<double> targets;
  std::vector<Var> hid_mem;
  auto gold = [&](int k) {
    return tape.constant_vector(std::vector<double>{s.y[static_cast<std::size_t>(k)]});
  };

  if (!cfg_.middle_out) {
    LstmStateVar st = enc.init_state;
    Var prev = gold(0);
    for (int t = 1; t <= 2 * n; ++t) {
      Step r = value_step(tape, enc, prev, st, hid_mem, Side::kRight);
      outs.push_back(r.out);
      targets.push_back(s.y[static_cast<std::size_t>(t)]);
      hid_mem.push_back(r.state.h);
      st = r.state;
      prev = gold(t);  // teacher forcing
    }
  } else {
    LstmStateVar left_st = enc.init_state, right_st = enc.init_state;
    Var left_prev = gold(n), right_prev = gold(n);
    for (int j = 1; j <= n; ++j) {
      // left then right within each alternation round; both sides always
      // have exactly n values here
      Step l = value_step(tape, enc, left_prev, left_st, hid_mem, Side::kLeft);
      outs.push_back(l.out);
      targets.push_back(s.y[static_cast<std::size_t>(n - j)]);
      hid_mem.push_back(l.state.h);
      left_st = l.state;
      left_prev = gold(n - j);

      Step r = value_step(tape, enc, right_prev, right_st, hid_mem, Side::kRight);
      outs.push_back(r.out);
      targets.push_back(s.y[static_cast<std::size_t>(n + j)]);
      hid_mem.push_back(r.state.h);
      right_st = r.state;
      right_prev = gold(n + j);
    }
  }
  Var seq_loss = tape.mean_squared(tape.concat(outs), tape.constant_vector(targets));
  return tape.add(seq_loss, mid_loss);
}

std::vector<double> DenoiseModel::denoise(ComputeTape& tape, const std::vector<double>& x) const {
  MIDOUT_CHECK(x.size() >= 3 && x.size() % 2 == 1, "input length " << x.size());
  int n = static_cast<int>(x.size() / 2);
  EncodedSequence enc = encode_values(tape, x);
  Var pred_mid = predictor_.apply(tape, enc.final_concat);
  std::vector<Var> hid_mem;

  if (!cfg_.middle_out) {
    std::vector<double> out{pred_mid.value()};
    LstmStateVar st = enc.init_state;
    Var prev = pred_mid;
    for (int t = 1; t <= 2 * n; ++t) {
      Step r = value_step(tape, enc, prev, st, hid_mem, Side::kRight);
      out.push_back(r.out.value());
      hid_mem.push_back(r.state.h);
      st = r.state;
      prev = r.out;  // the model's own output feeds the next step
    }
    return out;
  }

  std::vector<double> left_vals, right_vals;
  LstmStateVar left_st = enc.init_state, right_st = enc.init_state;
  Var left_prev = pred_mid, right_prev = pred_mid;
  for (int j = 1; j <= n; ++j) {
    Step l = value_step(tape, enc, left_prev, left_st, hid_mem, Side::kLeft);
    left_vals.push_back(l.out.value());
    hid_mem.push_back(l.state.h);
    left_st = l.state;
    left_prev = l.out;

    Step r = value_step(tape, enc, right_prev, right_st, hid_mem, Side::kRight);
    right_vals.push_back(r.out.value());
    hid_mem.push_back(r.state.h);
    right_st = r.state;
    right_prev = r.out;
  }
  std::vector<double> out(left_vals.rbegin(), left_vals.rend());
  out.push_back(pred_mid.value());
  out.insert(out.end(), right_vals.begin(), right_vals.end());
  return out;
}

double DenoiseModel::predict_middle_value(ComputeTape& tape, const std::vector<double>& x) const {
  MIDOUT_CHECK(!x.empty(), "predict_middle_value on empty input");
  EncodedSequence enc = encode_values(tape, x);
  return predictor_.apply(tape, enc.final_concat).value();
}

TrainedDenoise train_denoise(const DenoiseModelConfig& model_cfg, const DenoiseConfig& cfg,
                             const std::vector<DenoiseSample>& train) {
  MIDOUT_CHECK(!train.empty(), "empty training set");
  TrainedDenoise result;
  result.store = std::make_unique<ParameterStore>();
  result.model = std::make_unique<DenoiseModel>(*result.store, model_cfg);
  RngStream init_rng = RngStream(cfg.seed).derive(kInitSalt);
  init_uniform(*result.store, init_rng);
  result.model->set_forget_biases(1.0);

  AdamState adam;
  adam.lr = cfg.lr;
  RngStream order_rng = RngStream(cfg.seed).derive(kShuffleSalt);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  std::size_t pos = 0;

  ComputeTape tape;
  for (int step = 1; step <= cfg.steps; ++step) {
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      if (pos == order.size()) {
        order_rng.shuffle(order);
        pos = 0;
      }
      const DenoiseSample& s = train[order[pos++]];
      tape.reset();
      Var loss = result.model->sample_loss(tape, s);
      double lv = loss.value();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_denoise diverged: non-finite loss at step " +
                                 std::to_string(step));
      }
      tape.backward(loss, 1.0 / cfg.batch);
      batch_loss += lv / cfg.batch;
    }
    adam_step(*result.store, adam);
    if (step % 100 == 0 || step == cfg.steps || step == 1) {
      result.loss_curve.emplace_back(step, batch_loss);
    }
  }
  return result;
}

DenoiseEval eval_denoise(const DenoiseModel& model, const std::vector<DenoiseSample>& test) {
  MIDOUT_CHECK(!test.empty(), "empty test set");
  double se = 0.0;
  std::size_t count = 0;
  double sym = 0.0;
  ComputeTape tape;
  for (const auto& s : test) {
    tape.reset();
    std::vector<double> out = model.denoise(tape, s.x);
    MIDOUT_CHECK(out.size() == s.y.size(), "output length mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) {
      double d = out[i] - s.y[i];
      se += d * d;
      ++count;
    }
    sym += symmetric_mse(out);
  }
  return {se / static_cast<double>(count), sym / static_cast<double>(test.size())};
}

}  // namespace midout
