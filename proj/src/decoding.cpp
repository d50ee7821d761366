#include "midout/decoding.hpp"

#include <algorithm>
#include <cmath>

namespace midout {

SelfAttnVariant variant_from_string(const std::string& s) {
  if (s == "none") return SelfAttnVariant::kNone;
  if (s == "output") return SelfAttnVariant::kOutputOnly;
  if (s == "hidden") return SelfAttnVariant::kHiddenOnly;
  if (s == "dual") return SelfAttnVariant::kDual;
  MIDOUT_CHECK(false, "unknown self_attention variant '" << s << "'");
  return SelfAttnVariant::kNone;
}

std::string variant_to_string(SelfAttnVariant v) {
  switch (v) {
    case SelfAttnVariant::kNone: return "none";
    case SelfAttnVariant::kOutputOnly: return "output";
    case SelfAttnVariant::kHiddenOnly: return "hidden";
    case SelfAttnVariant::kDual: return "dual";
  }
  return "none";
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> log_softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  double lse = m + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = logits[i] - lse;
  return p;
}

int argmax_index(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::vector<int> Hypothesis::assemble() const {
  std::vector<int> out(left_tokens.rbegin(), left_tokens.rend());
  if (include_middle) out.push_back(middle_token);
  out.insert(out.end(), right_tokens.begin(), right_tokens.end());
  return out;
}

int Hypothesis::output_length() const {
  return static_cast<int>(left_tokens.size() + right_tokens.size()) + (include_middle ? 1 : 0);
}

namespace {
int decoder_input_size(const Seq2SeqConfig& c) {
  int d = c.embed_dim + 2 * c.enc_hidden;
  if (has_output_attention(c.variant)) d += c.embed_dim;
  if (has_hidden_attention(c.variant)) d += c.dec_hidden;
  if (c.oracle_input) d += c.embed_dim;
  return d;
}
}  // namespace

Seq2SeqModel::Seq2SeqModel(ParameterStore& store, const Seq2SeqConfig& cfg)
    : cfg_(cfg),
      embedding_(store, "embed", cfg.vocab_size, cfg.embed_dim),
      encoder_(store, "enc", cfg.feature_dim, cfg.enc_hidden, cfg.dec_hidden),
      enc_att_(store, "att_enc", cfg.dec_hidden, 2 * cfg.enc_hidden) {
  if (has_output_attention(cfg.variant)) {
    out_att_.emplace(store, "att_out", cfg.dec_hidden, cfg.embed_dim);
  }
  if (has_hidden_attention(cfg.variant)) {
    hid_att_.emplace(store, "att_hid", cfg.dec_hidden, cfg.dec_hidden);
  }
  int d = decoder_input_size(cfg);
  if (cfg.middle_out) {
    dec_left_.emplace(store, "dec_left", d, cfg.dec_hidden);
    dec_right_.emplace(store, "dec_right", d, cfg.dec_hidden);
    head_left_.emplace(store, "head_left", cfg.dec_hidden, cfg.vocab_size);
    head_right_.emplace(store, "head_right", cfg.dec_hidden, cfg.vocab_size);
  } else {
    dec_.emplace(store, "dec", d, cfg.dec_hidden);
    head_.emplace(store, "head", cfg.dec_hidden, cfg.vocab_size);
  }
}

void Seq2SeqModel::set_forget_biases(double v) {
  encoder_.set_forget_bias(v);
  if (dec_) dec_->set_forget_bias(v);
  if (dec_left_) dec_left_->set_forget_bias(v);
  if (dec_right_) dec_right_->set_forget_bias(v);
}

EncodedSequence Seq2SeqModel::encode(ComputeTape& tape,
                                     const std::vector<std::vector<double>>& frames) const {
  std::vector<Var> inputs;
  inputs.reserve(frames.size());
  for (const auto& f : frames) inputs.push_back(tape.constant_vector(f));
  return encoder_.encode(tape, inputs);
}

StepResult Seq2SeqModel::decode_step(ComputeTape& tape, const EncodedSequence& enc, Var prev_emb,
                                     const LstmStateVar& state,
                                     const std::vector<Var>& emb_memory,
                                     const std::vector<Var>& hid_memory, Var oracle_emb,
                                     Side side) const {
  Var query = state.h;  // h^d_{t-1}: the pre-step state queries all three mechanisms
  StepResult r;
  AttentionResult ca = enc_att_.attend(tape, query, enc.states_matrix);
  r.context = ca.context;
  std::vector<Var> parts{prev_emb, ca.context};
  if (out_att_) {
    AttentionResult da = out_att_->attend_memory(tape, query, emb_memory);
    r.output_attn = da.context;
    parts.push_back(da.context);
  }
  if (hid_att_) {
    AttentionResult ha = hid_att_->attend_memory(tape, query, hid_memory);
    r.hidden_attn = ha.context;
    parts.push_back(ha.context);
  }
  if (cfg_.oracle_input) {
    MIDOUT_CHECK(oracle_emb.valid(), "oracle-input model needs a middle-word embedding");
    parts.push_back(oracle_emb);
  }
  Var x = tape.concat(parts);
  const LstmCell& cell = cfg_.middle_out ? (side == Side::kLeft ? *dec_left_ : *dec_right_) : *dec_;
  const Linear& head =
      cfg_.middle_out ? (side == Side::kLeft ? *head_left_ : *head_right_) : *head_;
  r.state = cell.step(tape, x, state);
  r.logits = head.apply(tape, r.state.h);
  return r;
}

namespace {
int sample_from_logits(std::span<const double> logits, RngStream& rng) {
  return static_cast<int>(rng.categorical(softmax_values(logits)));
}
}  // namespace

Var Seq2SeqModel::baseline_train_loss(ComputeTape& tape, const EncodedSequence& enc,
                                      const std::vector<int>& targets, int oracle_token,
                                      const TrainOptions& opt) const {
  MIDOUT_CHECK(!cfg_.middle_out, "baseline_train_loss on a middle-out model");
  MIDOUT_CHECK(!targets.empty() && targets.back() == cfg_.stop_id,
               "targets must end with STOP");
  Var oracle_emb;
  if (cfg_.oracle_input) {
    MIDOUT_CHECK(oracle_token >= 0, "oracle-input model needs an oracle token");
    oracle_emb = embedding_.embed(tape, oracle_token);
  }
  std::vector<Var> emb_mem, hid_mem;
  LstmStateVar st = enc.init_state;
  Var prev = embedding_.embed(tape, cfg_.start_id);
  Var loss;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    StepResult r = decode_step(tape, enc, prev, st, emb_mem, hid_mem, oracle_emb, Side::kRight);
    Var ce = tape.cross_entropy(r.logits, targets[t]);
    loss = loss.valid() ? tape.add(loss, ce) : ce;
    emb_mem.push_back(embedding_.embed(tape, targets[t]));
    hid_mem.push_back(r.state.h);
    st = r.state;
    if (t + 1 < targets.size()) {
      int next_in = targets[t];
      if (opt.sample_rate > 0.0 && opt.rng != nullptr && opt.rng->bernoulli(opt.sample_rate)) {
        next_in = sample_from_logits(r.logits.values(), *opt.rng);
      }
      prev = embedding_.embed(tape, next_in);
    }
  }
  return tape.scale(loss, 1.0 / static_cast<double>(targets.size()));
}

Var Seq2SeqModel::middle_out_train_step(ComputeTape& tape, const EncodedSequence& enc,
                                        const std::vector<int>& left_targets,
                                        const std::vector<int>& right_targets, int middle_token,
                                        const TrainOptions& opt) const {
  MIDOUT_CHECK(cfg_.middle_out, "middle_out_train_step on a baseline model");
  MIDOUT_CHECK(!left_targets.empty() && left_targets.back() == cfg_.stop_id,
               "left targets must end with STOP");
  MIDOUT_CHECK(!right_targets.empty() && right_targets.back() == cfg_.stop_id,
               "right targets must end with STOP");
  Var mid_emb = embedding_.embed(tape, middle_token);
  std::vector<Var> emb_mem{mid_emb};
  std::vector<Var> hid_mem;

  struct TrainSide {
    LstmStateVar st;
    Var prev;
    const std::vector<int>* targets;
    std::size_t pos = 0;
    Side side;
    bool done() const { return pos >= targets->size(); }
  };
  TrainSide left{enc.init_state, mid_emb, &left_targets, 0, Side::kLeft};
  TrainSide right{enc.init_state, mid_emb, &right_targets, 0, Side::kRight};

  bool left_turn = cfg_.left_first;
  Var loss;
  int count = 0;
  while (!left.done() || !right.done()) {
    TrainSide& pref = left_turn ? left : right;
    TrainSide& other = left_turn ? right : left;
    TrainSide& s = pref.done() ? other : pref;

    int tgt = (*s.targets)[s.pos];
    StepResult r = decode_step(tape, enc, s.prev, s.st, emb_mem, hid_mem, Var{}, s.side);
    Var ce = tape.cross_entropy(r.logits, tgt);
    loss = loss.valid() ? tape.add(loss, ce) : ce;
    ++count;

    // shared memories advance in the global generation order
    emb_mem.push_back(embedding_.embed(tape, tgt));
    hid_mem.push_back(r.state.h);
    s.st = r.state;
    if (tgt != cfg_.stop_id) {
      int next_in = tgt;
      if (opt.sample_rate > 0.0 && opt.rng != nullptr && opt.rng->bernoulli(opt.sample_rate)) {
        next_in = sample_from_logits(r.logits.values(), *opt.rng);
      }
      s.prev = embedding_.embed(tape, next_in);
    }
    ++s.pos;
    left_turn = !left_turn;
  }
  return tape.scale(loss, 1.0 / static_cast<double>(count));
}

struct Seq2SeqModel::DecodeSession {
  LstmStateVar left_st, right_st;
  Var left_prev, right_prev;
  std::vector<Var> emb_mem, hid_mem;
  bool left_done = false, right_done = false;
  bool left_turn = true;
  Hypothesis hyp;

  bool live() const { return !left_done || !right_done; }
};

Seq2SeqModel::DecodeSession Seq2SeqModel::start_session(ComputeTape& tape,
                                                        const EncodedSequence& enc,
                                                        int seed_token) const {
  DecodeSession s;
  Var seed_emb = embedding_.embed(tape, seed_token);
  s.hyp.middle_token = seed_token;
  s.left_st = enc.init_state;
  s.right_st = enc.init_state;
  s.left_prev = seed_emb;
  s.right_prev = seed_emb;
  if (cfg_.middle_out) {
    s.hyp.include_middle = true;
    s.emb_mem.push_back(seed_emb);
    s.left_turn = cfg_.left_first;
  } else {
    // baseline: the left decoder never participates and the START seed is
    // not part of the output or the memory
    s.hyp.include_middle = false;
    s.left_done = true;
    s.left_turn = false;
  }
  return s;
}

Side Seq2SeqModel::due_side(const DecodeSession& s) const {
  if (s.left_done) return Side::kRight;
  if (s.right_done) return Side::kLeft;
  return s.left_turn ? Side::kLeft : Side::kRight;
}

StepResult Seq2SeqModel::session_step(ComputeTape& tape, const EncodedSequence& enc,
                                      DecodeSession& s, Side side, Var oracle_emb) const {
  Var prev = side == Side::kLeft ? s.left_prev : s.right_prev;
  const LstmStateVar& st = side == Side::kLeft ? s.left_st : s.right_st;
  return decode_step(tape, enc, prev, st, s.emb_mem, s.hid_mem, oracle_emb, side);
}

void Seq2SeqModel::commit_token(ComputeTape& tape, DecodeSession& s, Side side,
                                const StepResult& r, int token) const {
  s.emb_mem.push_back(embedding_.embed(tape, token));
  s.hid_mem.push_back(r.state.h);
  LstmStateVar& st = side == Side::kLeft ? s.left_st : s.right_st;
  st = r.state;
  bool& done = side == Side::kLeft ? s.left_done : s.right_done;
  bool& truncated = side == Side::kLeft ? s.hyp.left_truncated : s.hyp.right_truncated;
  std::vector<int>& toks = side == Side::kLeft ? s.hyp.left_tokens : s.hyp.right_tokens;
  if (token == cfg_.stop_id) {
    done = true;
  } else {
    toks.push_back(token);
    Var& prev = side == Side::kLeft ? s.left_prev : s.right_prev;
    prev = s.emb_mem.back();
    if (static_cast<int>(toks.size()) >= cfg_.max_len_per_side) {
      done = true;
      truncated = true;
    }
  }
  s.left_turn = !s.left_turn;
}

GeneratedSequence Seq2SeqModel::greedy_generate(ComputeTape& tape, const EncodedSequence& enc,
                                                int seed_token, int oracle_token) const {
  Var oracle_emb;
  if (cfg_.oracle_input) {
    MIDOUT_CHECK(oracle_token >= 0, "oracle-input model needs an oracle token");
    oracle_emb = embedding_.embed(tape, oracle_token);
  }
  DecodeSession s = start_session(tape, enc, seed_token);
  while (s.live()) {
    Side side = due_side(s);
    StepResult r = session_step(tape, enc, s, side, oracle_emb);
    int token = argmax_index(r.logits.values());
    commit_token(tape, s, side, r, token);
  }
  GeneratedSequence out;
  out.tokens = s.hyp.assemble();
  out.left_truncated = s.hyp.left_truncated;
  out.right_truncated = s.hyp.right_truncated;
  return out;
}

namespace {
// Deterministic ranking: score, then raw log-probability, then assembled
// tokens.
bool better_hypothesis(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.logprob_sum != b.logprob_sum) return a.logprob_sum > b.logprob_sum;
  return a.assemble() < b.assemble();
}
}  // namespace

std::vector<Hypothesis> Seq2SeqModel::beam_search(ComputeTape& tape, const EncodedSequence& enc,
                                                  int beam_size, const std::vector<int>& seeds,
                                                  int oracle_token) const {
  MIDOUT_CHECK(beam_size >= 1, "beam_size " << beam_size);
  MIDOUT_CHECK(!seeds.empty(), "beam_search needs at least one seed");
  Var oracle_emb;
  if (cfg_.oracle_input) {
    MIDOUT_CHECK(oracle_token >= 0, "oracle-input model needs an oracle token");
    oracle_emb = embedding_.embed(tape, oracle_token);
  }

  struct Candidate {
    int parent;
    int token;
    double logp;
  };

  std::vector<std::vector<Hypothesis>> ranked_per_seed;
  for (int seed : seeds) {
    std::vector<DecodeSession> pool;
    pool.push_back(start_session(tape, enc, seed));
    std::vector<Hypothesis> finished;
    std::vector<Hypothesis> truncated;

    while (!pool.empty()) {
      std::vector<StepResult> results(pool.size());
      std::vector<Side> sides(pool.size());
      std::vector<Candidate> cands;
      cands.reserve(pool.size() * static_cast<std::size_t>(cfg_.vocab_size));
      for (std::size_t p = 0; p < pool.size(); ++p) {
        sides[p] = due_side(pool[p]);
        results[p] = session_step(tape, enc, pool[p], sides[p], oracle_emb);
        std::vector<double> logp = log_softmax_values(results[p].logits.values());
        for (int tok = 0; tok < cfg_.vocab_size; ++tok) {
          cands.push_back({static_cast<int>(p), tok,
                           pool[p].hyp.logprob_sum + logp[static_cast<std::size_t>(tok)]});
        }
      }
      // candidates compete by accumulated log-probability; the length bonus
      // only enters the final ranking of complete hypotheses, which keeps
      // beam size 1 exactly equal to greedy decoding
      std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.logp != b.logp) return a.logp > b.logp;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam_size), cands.size());
      std::vector<DecodeSession> next;
      next.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) {
        const Candidate& c = cands[i];
        DecodeSession child = pool[static_cast<std::size_t>(c.parent)];
        child.hyp.logprob_sum = c.logp;
        commit_token(tape, child, sides[static_cast<std::size_t>(c.parent)],
                     results[static_cast<std::size_t>(c.parent)], c.token);
        if (!child.live()) {
          child.hyp.finished = !child.hyp.left_truncated && !child.hyp.right_truncated;
          child.hyp.score = child.hyp.logprob_sum + child.hyp.output_length();
          (child.hyp.finished ? finished : truncated).push_back(child.hyp);
        } else {
          next.push_back(std::move(child));
        }
      }
      pool = std::move(next);
    }

    std::sort(finished.begin(), finished.end(), better_hypothesis);
    std::sort(truncated.begin(), truncated.end(), better_hypothesis);
    finished.insert(finished.end(), truncated.begin(), truncated.end());
    ranked_per_seed.push_back(std::move(finished));
  }

  // Best hypothesis of every seed first: with k distinct seeds this returns
  // k outputs with k distinct middle words.
  std::vector<Hypothesis> firsts, rest;
  for (auto& pool : ranked_per_seed) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      (i == 0 ? firsts : rest).push_back(std::move(pool[i]));
    }
  }
  std::sort(firsts.begin(), firsts.end(), better_hypothesis);
  std::sort(rest.begin(), rest.end(), better_hypothesis);
  std::vector<Hypothesis> out;
  for (auto& h : firsts) {
    if (static_cast<int>(out.size()) < beam_size) out.push_back(std::move(h));
  }
  for (auto& h : rest) {
    if (static_cast<int>(out.size()) < beam_size) out.push_back(std::move(h));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> Seq2SeqModel::split_at_middle(
    const std::vector<int>& tokens, int middle_token, int stop_id) {
  auto it = std::find(tokens.begin(), tokens.end(), middle_token);
  MIDOUT_CHECK(it != tokens.end(), "middle token " << middle_token << " absent from sequence");
  std::vector<int> left(tokens.begin(), it);
  std::reverse(left.begin(), left.end());
  left.push_back(stop_id);
  std::vector<int> right(it + 1, tokens.end());
  right.push_back(stop_id);
  return {std::move(left), std::move(right)};
}

MiddleWordClassifier::MiddleWordClassifier(ParameterStore& store, const std::string& prefix,
                                           int feature_dim, int hidden, int classes)
    : feature_dim_(feature_dim),
      classes_(classes),
      cell_(store, prefix + ".lstm", feature_dim, hidden),
      head_(store, prefix + ".head", hidden, classes) {}

void MiddleWordClassifier::set_forget_bias(double v) { cell_.set_forget_bias(v); }

Var MiddleWordClassifier::logits(ComputeTape& tape,
                                 const std::vector<std::vector<double>>& frames) const {
  MIDOUT_CHECK(!frames.empty(), "classifier input is empty");
  LstmStateVar st = cell_.zero_state(tape);
  for (const auto& f : frames) st = cell_.step(tape, tape.constant_vector(f), st);
  return head_.apply(tape, st.h);
}

Var MiddleWordClassifier::train_loss(ComputeTape& tape,
                                     const std::vector<std::vector<double>>& frames,
                                     int class_id) const {
  return tape.cross_entropy(logits(tape, frames), class_id);
}

std::vector<double> MiddleWordClassifier::probabilities(
    const std::vector<std::vector<double>>& frames) const {
  ComputeTape tape;
  Var l = logits(tape, frames);
  return softmax_values(l.values());
}

std::vector<int> MiddleWordClassifier::top_k(const std::vector<std::vector<double>>& frames,
                                             int k) const {
  std::vector<double> p = probabilities(frames);
  std::vector<int> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)])
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(idx.size()))));
  return idx;
}

double sampling_ratio(double target_accuracy, double raw_accuracy) {
  if (raw_accuracy >= 1.0) return 0.0;
  double r = (1.0 - target_accuracy) / (1.0 - raw_accuracy);
  return std::clamp(r, 0.0, 1.0);
}

std::vector<int> mix_oracle_classifier(const std::vector<int>& oracle_words,
                                       const std::vector<int>& classifier_words, double ratio,
                                       RngStream& rng) {
  MIDOUT_CHECK(oracle_words.size() == classifier_words.size(),
               "oracle/classifier word count mismatch");
  std::vector<int> out(oracle_words.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = rng.bernoulli(ratio) ? classifier_words[i] : oracle_words[i];
  }
  return out;
}

std::vector<int> corrupt_oracle(const std::vector<int>& oracle_words,
                                const std::vector<int>& vocab, double target_accuracy,
                                RngStream& rng) {
  MIDOUT_CHECK(vocab.size() >= 2, "corruption vocabulary too small");
  MIDOUT_CHECK(target_accuracy >= 0.0 && target_accuracy <= 1.0,
               "target accuracy " << target_accuracy);
  std::vector<int> out(oracle_words.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rng.bernoulli(target_accuracy)) {
      out[i] = oracle_words[i];
    } else {
      // uniform over the wrong words (the oracle word occurs once in vocab)
      std::size_t j = static_cast<std::size_t>(rng.below(vocab.size() - 1));
      if (vocab[j] == oracle_words[i]) j = vocab.size() - 1;
      out[i] = vocab[j];
    }
  }
  return out;
}

std::vector<int> simulate_classifier_accuracy(const std::vector<int>& oracle_words,
                                              const std::vector<int>& classifier_words,
                                              const std::vector<int>& corruption_vocab,
                                              double target_accuracy, double raw_accuracy,
                                              RngStream& rng) {
  MIDOUT_CHECK(target_accuracy >= 0.0 && target_accuracy <= 1.0,
               "target accuracy " << target_accuracy);
  if (!classifier_words.empty()) {
    return mix_oracle_classifier(oracle_words, classifier_words,
                                 sampling_ratio(target_accuracy, raw_accuracy), rng);
  }
  return corrupt_oracle(oracle_words, corruption_vocab, target_accuracy, rng);
}

}  // namespace midout
