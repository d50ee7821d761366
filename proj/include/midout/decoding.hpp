#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "midout/attention.hpp"
#include "midout/layers.hpp"
#include "midout/rng.hpp"

namespace midout {

// Which self-attention contexts enter the decoder recurrence.
enum class SelfAttnVariant { kNone, kOutputOnly, kHiddenOnly, kDual };

inline bool has_output_attention(SelfAttnVariant v) {
  return v == SelfAttnVariant::kOutputOnly || v == SelfAttnVariant::kDual;
}
inline bool has_hidden_attention(SelfAttnVariant v) {
  return v == SelfAttnVariant::kHiddenOnly || v == SelfAttnVariant::kDual;
}
SelfAttnVariant variant_from_string(const std::string& s);
std::string variant_to_string(SelfAttnVariant v);

enum class Side { kLeft, kRight };

struct Seq2SeqConfig {
  int vocab_size = 0;
  int embed_dim = 0;
  int feature_dim = 0;
  int enc_hidden = 0;
  int dec_hidden = 0;
  SelfAttnVariant variant = SelfAttnVariant::kNone;
  bool middle_out = false;
  bool oracle_input = false;  // middle-word embedding concatenated at every step
  bool left_first = true;     // which decoder moves first in the alternation
  int start_id = 0;
  int stop_id = 1;
  int max_len_per_side = 12;
};

struct StepResult {
  LstmStateVar state;
  Var logits;
  Var context;      // c_t
  Var output_attn;  // d_t; invalid unless the variant computes it
  Var hidden_attn;  // h~_t; invalid unless the variant computes it
};

struct GeneratedSequence {
  std::vector<int> tokens;  // assembled output, STOP tokens stripped
  bool left_truncated = false;
  bool right_truncated = false;
};

// Beam-search candidate. Left tokens are stored in generation order, i.e.
// walking outwards from the middle.
struct Hypothesis {
  std::vector<int> left_tokens;
  std::vector<int> right_tokens;
  int middle_token = -1;
  bool include_middle = true;  // false for the baseline START seed
  double logprob_sum = 0.0;
  double score = 0.0;  // logprob_sum + assembled output length
  bool finished = false;
  bool left_truncated = false;
  bool right_truncated = false;

  std::vector<int> assemble() const;
  int output_length() const;
};

// Both decoder families over a token vocabulary. The baseline is realized
// as the middle-out machinery with the left decoder absent and a START
// seed, which keeps the two families' step inputs structurally identical.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ParameterStore& store, const Seq2SeqConfig& cfg);

  const Seq2SeqConfig& config() const { return cfg_; }
  void set_forget_biases(double v = 1.0);

  EncodedSequence encode(ComputeTape& tape,
                         const std::vector<std::vector<double>>& frames) const;

  // One recurrence step: attention contexts with the pre-step state as the
  // query, LSTM update, vocabulary logits. Never touches the memories.
  StepResult decode_step(ComputeTape& tape, const EncodedSequence& enc, Var prev_emb,
                         const LstmStateVar& state, const std::vector<Var>& emb_memory,
                         const std::vector<Var>& hid_memory, Var oracle_emb, Side side) const;

  struct TrainOptions {
    double sample_rate = 0.0;  // scheduled sampling rate for step inputs
    RngStream* rng = nullptr;
  };

  // Teacher-forced loss, mean cross-entropy per target token (targets must
  // end with STOP).
  Var baseline_train_loss(ComputeTape& tape, const EncodedSequence& enc,
                          const std::vector<int>& targets, int oracle_token,
                          const TrainOptions& opt) const;

  // Teacher-forced alternating pass in the same global order as generation.
  // left/right targets must each end with STOP; the loss is the sum of
  // cross-entropies over both sides divided by the total token count.
  Var middle_out_train_step(ComputeTape& tape, const EncodedSequence& enc,
                            const std::vector<int>& left_targets,
                            const std::vector<int>& right_targets, int middle_token,
                            const TrainOptions& opt) const;

  // Argmax free-running decode. seed = middle word (middle-out) or START.
  GeneratedSequence greedy_generate(ComputeTape& tape, const EncodedSequence& enc, int seed_token,
                                    int oracle_token = -1) const;

  // Per-seed beam pools of width beam_size; finished hypotheses compete by
  // score = sum log p + output length. The returned list holds the best
  // hypothesis of every seed first (so k distinct seeds yield k outputs with
  // k distinct middle words), then the remaining pool by score.
  std::vector<Hypothesis> beam_search(ComputeTape& tape, const EncodedSequence& enc,
                                      int beam_size, const std::vector<int>& seeds,
                                      int oracle_token = -1) const;

  // Splits gold tokens at the first occurrence of the middle word into
  // (left reversed + STOP, right + STOP). The middle word must be present.
  static std::pair<std::vector<int>, std::vector<int>> split_at_middle(
      const std::vector<int>& tokens, int middle_token, int stop_id);

 private:
  struct DecodeSession;
  DecodeSession start_session(ComputeTape& tape, const EncodedSequence& enc,
                              int seed_token) const;
  Side due_side(const DecodeSession& s) const;
  StepResult session_step(ComputeTape& tape, const EncodedSequence& enc, DecodeSession& s,
                          Side side, Var oracle_emb) const;
  void commit_token(ComputeTape& tape, DecodeSession& s, Side side, const StepResult& r,
                    int token) const;

  Seq2SeqConfig cfg_;
  EmbeddingTable embedding_;
  BiEncoder encoder_;
  BilinearAttention enc_att_;
  std::optional<BilinearAttention> out_att_;
  std::optional<BilinearAttention> hid_att_;
  std::optional<LstmCell> dec_;  // baseline
  std::optional<Linear> head_;
  std::optional<LstmCell> dec_left_, dec_right_;  // middle-out
  std::optional<Linear> head_left_, head_right_;
};

// Verb classifier: unidirectional LSTM over the input features, softmax
// head over the middle-word vocabulary.
class MiddleWordClassifier {
 public:
  MiddleWordClassifier(ParameterStore& store, const std::string& prefix, int feature_dim,
                       int hidden, int classes);

  void set_forget_bias(double v = 1.0);
  Var logits(ComputeTape& tape, const std::vector<std::vector<double>>& frames) const;
  Var train_loss(ComputeTape& tape, const std::vector<std::vector<double>>& frames,
                 int class_id) const;
  std::vector<double> probabilities(const std::vector<std::vector<double>>& frames) const;
  std::vector<int> top_k(const std::vector<std::vector<double>>& frames, int k) const;
  int classes() const { return classes_; }

 private:
  int feature_dim_, classes_;
  LstmCell cell_;
  Linear head_;
};

// Paper protocol (Sampling Ratio): probability of taking the classifier
// word instead of the oracle word so the mix lands at target accuracy.
double sampling_ratio(double target_accuracy, double raw_accuracy);
std::vector<int> mix_oracle_classifier(const std::vector<int>& oracle_words,
                                       const std::vector<int>& classifier_words, double ratio,
                                       RngStream& rng);
// Toy protocol for a near-perfect classifier: each oracle word survives
// with probability target_accuracy, otherwise a uniformly random *wrong*
// word from vocab replaces it.
std::vector<int> corrupt_oracle(const std::vector<int>& oracle_words,
                                const std::vector<int>& vocab, double target_accuracy,
                                RngStream& rng);
// Dispatches to the mix protocol when classifier words are given, else to
// the corruption protocol.
std::vector<int> simulate_classifier_accuracy(const std::vector<int>& oracle_words,
                                              const std::vector<int>& classifier_words,
                                              const std::vector<int>& corruption_vocab,
                                              double target_accuracy, double raw_accuracy,
                                              RngStream& rng);

// Value-level helpers shared by search and sampling.
std::vector<double> softmax_values(std::span<const double> logits);
std::vector<double> log_softmax_values(std::span<const double> logits);
int argmax_index(std::span<const double> v);

}  // namespace midout
