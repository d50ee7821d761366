#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "midout/decoding.hpp"
#include "midout/metrics.hpp"

namespace midout {

// Desk-scale captioning harness: scenes are (actor, verb, object) triples
// rendered as noisy one-hot frame features and templated multi-reference
// captions, with the gerund verb playing the middle-word role.
struct ToyCaptionConfig {
  int actors = 8;
  int verbs = 12;
  int objects = 10;
  int frames = 8;
  double feature_noise = 0.3;
  int train_scenes = 2000;
  int test_scenes = 200;
  int lstm_size = 128;
  int embed_dim = 64;
  double lr = 1e-4;
  int epochs = 15;
  int classifier_epochs = 4;
  int batch = 32;
  int beam = 8;
  int max_len_per_side = 10;
  std::uint64_t seed = 1;

  int feature_dim() const { return actors + verbs + objects; }
};

class ToyVocabulary {
 public:
  explicit ToyVocabulary(const ToyCaptionConfig& cfg);

  int size() const { return static_cast<int>(words_.size()); }
  int start_id() const { return 0; }
  int stop_id() const { return 1; }
  int actor_token(int a) const;
  int verb_token(int v) const;
  int object_token(int o) const;
  int verb_index(int token) const;  // -1 when the token is not a verb
  bool is_verb(int token) const { return verb_index(token) >= 0; }
  const std::string& word(int token) const;
  int token_of(const std::string& word) const;  // -1 when unknown
  std::vector<int> verb_tokens() const;
  std::string render(const std::vector<int>& tokens) const;

 private:
  int actors_, verbs_, objects_;
  std::vector<std::string> words_;
};

struct ToyScene {
  int actor = 0, verb = 0, object = 0;
  std::vector<std::vector<double>> features;  // frames x feature_dim
  std::vector<std::vector<int>> refs;         // token ids, no START/STOP
};

std::pair<std::vector<ToyScene>, std::vector<ToyScene>> generate_toy_dataset(
    const ToyCaptionConfig& cfg, RngStream& rng);

void write_toy_jsonl(const std::string& path, const std::vector<ToyScene>& scenes,
                     const ToyVocabulary& vocab);
std::vector<ToyScene> read_toy_jsonl(const std::string& path, const ToyVocabulary& vocab);

// min(0.05 * epoch, 0.25), epochs counted from 0.
double scheduled_sampling_rate(int epoch);

enum class CaptionFamily { kBaseline, kMiddleOut, kOracleBaseline };
std::string family_to_string(CaptionFamily f);

Seq2SeqConfig caption_model_config(const ToyCaptionConfig& cfg, CaptionFamily family,
                                   SelfAttnVariant variant);

struct TrainedCaption {
  std::unique_ptr<ParameterStore> store;
  std::unique_ptr<Seq2SeqModel> model;
  std::vector<std::pair<int, double>> loss_curve;  // (batch index, mean loss)
};

struct TrainedClassifier {
  std::unique_ptr<ParameterStore> store;
  std::unique_ptr<MiddleWordClassifier> model;
};

// Cross-entropy with scheduled sampling; middle-out splits every reference
// at its own verb.
TrainedCaption train_caption(const ToyCaptionConfig& cfg, CaptionFamily family,
                             SelfAttnVariant variant, const std::vector<ToyScene>& train);

// Trained separately from the decoders on (features -> verb index).
TrainedClassifier train_middle_word_classifier(const ToyCaptionConfig& cfg,
                                               const std::vector<ToyScene>& train);

double classifier_accuracy(const MiddleWordClassifier& cls, const std::vector<ToyScene>& scenes);

struct CaptionEval {
  double bleu4 = 0.0;    // corpus BLEU-4 in [0,1]
  double rouge_l = 0.0;  // mean over scenes
  int scenes = 0;
  int middle_contained = 0;  // middle-out generations containing their seed
  int middle_expected = 0;
};

// Beam top-1 per scene against the scene references. middle_words supplies
// the per-scene seed (middle-out) or oracle token (oracle baseline); pass
// empty for the plain baseline.
CaptionEval eval_caption_quality(const Seq2SeqModel& model, const ToyCaptionConfig& cfg,
                                 const ToyVocabulary& vocab,
                                 const std::vector<ToyScene>& scenes,
                                 const std::vector<int>& middle_words);

// Mean over scenes of Self-BLEU within the scene's beam-8 caption set.
// Middle-out sets are seeded with the classifier's top-beam verbs.
double eval_diversity(const Seq2SeqModel& model, const ToyCaptionConfig& cfg,
                      const ToyVocabulary& vocab, const std::vector<ToyScene>& scenes,
                      const MiddleWordClassifier* classifier);

struct SweepRow {
  std::string label;
  double accuracy = 0.0;  // realized accuracy of the word list used
  double bleu4 = 0.0;
  double rouge_l = 0.0;
};

// Table-3 style sweep: {raw classifier, 50%, 75%, 100%} middle words into
// the same trained middle-out model.
std::vector<SweepRow> run_oracle_sweep(const Seq2SeqModel& middleout,
                                       const MiddleWordClassifier& classifier,
                                       const ToyCaptionConfig& cfg, const ToyVocabulary& vocab,
                                       const std::vector<ToyScene>& scenes, RngStream& rng);

struct ControlEval {
  int pairs = 0;
  int middleout_hits = 0;
  int baseline_hits = 0;
  int middleout_contains_verb = 0;
  int baseline_contains_verb = 0;

  double middleout_accuracy() const { return pairs ? static_cast<double>(middleout_hits) / pairs : 0.0; }
  double baseline_accuracy() const { return pairs ? static_cast<double>(baseline_hits) / pairs : 0.0; }
};

// Concatenates two scenes' frames with no boundary marker, seeds the
// middle-out decoder with the first scene's verb (and feeds the same verb
// to the oracle baseline), and scores which scene's actor/object the
// caption describes.
ControlEval run_control_eval(const Seq2SeqModel& middleout, const Seq2SeqModel& oracle_baseline,
                             const ToyCaptionConfig& cfg, const ToyVocabulary& vocab,
                             const std::vector<ToyScene>& scenes, int num_pairs, RngStream& rng);

}  // namespace midout
