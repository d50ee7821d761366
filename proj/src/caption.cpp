#include "midout/caption.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace midout {

namespace {
constexpr std::uint64_t kInitSaltBase = 10;
constexpr std::uint64_t kShuffleSaltBase = 20;
constexpr std::uint64_t kSamplingSaltBase = 30;
constexpr std::uint64_t kClassifierInitSalt = 40;
constexpr std::uint64_t kClassifierShuffleSalt = 41;

const std::array<const char*, 8> kActors = {"man",      "woman", "boy",   "girl",
                                            "chef",     "magician", "clown", "farmer"};
const std::array<const char*, 12> kVerbs = {"playing", "performing", "eating",   "riding",
                                            "holding", "mixing",     "pushing",  "washing",
                                            "throwing", "catching",  "painting", "lifting"};
const std::array<const char*, 10> kObjects = {"piano", "guitar", "ball", "cake", "book",
                                              "car",   "kite",   "drum", "rope", "bowl"};

// caption templates over (a, the, is, ACTOR, VERB, OBJECT)
enum Slot { kA, kThe, kIs, kActor, kVerb, kObject };
const std::vector<std::vector<Slot>> kTemplates = {
    {kA, kActor, kIs, kVerb, kA, kObject},     {kThe, kActor, kIs, kVerb, kThe, kObject},
    {kA, kActor, kIs, kVerb, kThe, kObject},   {kThe, kActor, kIs, kVerb, kA, kObject},
    {kA, kActor, kVerb, kA, kObject},
};
}  // namespace

ToyVocabulary::ToyVocabulary(const ToyCaptionConfig& cfg)
    : actors_(cfg.actors), verbs_(cfg.verbs), objects_(cfg.objects) {
  MIDOUT_CHECK(cfg.actors >= 1 && cfg.actors <= static_cast<int>(kActors.size()),
               "actor inventory size " << cfg.actors);
  MIDOUT_CHECK(cfg.verbs >= 2 && cfg.verbs <= static_cast<int>(kVerbs.size()),
               "verb inventory size " << cfg.verbs);
  MIDOUT_CHECK(cfg.objects >= 1 && cfg.objects <= static_cast<int>(kObjects.size()),
               "object inventory size " << cfg.objects);
  words_ = {"<s>", "</s>", "a", "the", "is"};
  for (int i = 0; i < actors_; ++i) words_.emplace_back(kActors[static_cast<std::size_t>(i)]);
  for (int i = 0; i < verbs_; ++i) words_.emplace_back(kVerbs[static_cast<std::size_t>(i)]);
  for (int i = 0; i < objects_; ++i) words_.emplace_back(kObjects[static_cast<std::size_t>(i)]);
}

int ToyVocabulary::actor_token(int a) const {
  MIDOUT_CHECK(a >= 0 && a < actors_, "actor id " << a);
  return 5 + a;
}
int ToyVocabulary::verb_token(int v) const {
  MIDOUT_CHECK(v >= 0 && v < verbs_, "verb id " << v);
  return 5 + actors_ + v;
}
int ToyVocabulary::object_token(int o) const {
  MIDOUT_CHECK(o >= 0 && o < objects_, "object id " << o);
  return 5 + actors_ + verbs_ + o;
}
int ToyVocabulary::verb_index(int token) const {
  int base = 5 + actors_;
  if (token >= base && token < base + verbs_) return token - base;
  return -1;
}
const std::string& ToyVocabulary::word(int token) const {
  MIDOUT_CHECK(token >= 0 && token < size(), "token " << token);
  return words_[static_cast<std::size_t>(token)];
}
int ToyVocabulary::token_of(const std::string& w) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == w) return static_cast<int>(i);
  }
  return -1;
}
std::vector<int> ToyVocabulary::verb_tokens() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(verbs_));
  for (int v = 0; v < verbs_; ++v) out.push_back(verb_token(v));
  return out;
}
std::string ToyVocabulary::render(const std::vector<int>& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += " ";
    out += word(tokens[i]);
  }
  return out;
}

namespace {
std::vector<int> realize_template(const std::vector<Slot>& tmpl, const ToyVocabulary& vocab,
                                  int actor, int verb, int object) {
  std::vector<int> out;
  out.reserve(tmpl.size());
  for (Slot s : tmpl) {
    switch (s) {
      case kA: out.push_back(vocab.token_of("a")); break;
      case kThe: out.push_back(vocab.token_of("the")); break;
      case kIs: out.push_back(vocab.token_of("is")); break;
      case kActor: out.push_back(vocab.actor_token(actor)); break;
      case kVerb: out.push_back(vocab.verb_token(verb)); break;
      case kObject: out.push_back(vocab.object_token(object)); break;
    }
  }
  return out;
}

ToyScene draw_scene(const ToyCaptionConfig& cfg, const ToyVocabulary& vocab, RngStream& rng) {
  ToyScene s;
  s.actor = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.actors)));
  s.verb = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.verbs)));
  s.object = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.objects)));
  int dim = cfg.feature_dim();
  s.features.assign(static_cast<std::size_t>(cfg.frames),
                    std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  for (auto& frame : s.features) {
    frame[static_cast<std::size_t>(s.actor)] = 1.0;
    frame[static_cast<std::size_t>(cfg.actors + s.verb)] = 1.0;
    frame[static_cast<std::size_t>(cfg.actors + cfg.verbs + s.object)] = 1.0;
    for (double& v : frame) v += cfg.feature_noise * rng.normal();
  }
  int nrefs = static_cast<int>(rng.int_in(2, 4));
  std::vector<std::size_t> order(kTemplates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (int r = 0; r < nrefs; ++r) {
    s.refs.push_back(realize_template(kTemplates[order[static_cast<std::size_t>(r)]], vocab,
                                      s.actor, s.verb, s.object));
  }
  return s;
}
}  // namespace

std::pair<std::vector<ToyScene>, std::vector<ToyScene>> generate_toy_dataset(
    const ToyCaptionConfig& cfg, RngStream& rng) {
  ToyVocabulary vocab(cfg);
  std::vector<ToyScene> train, test;
  train.reserve(static_cast<std::size_t>(cfg.train_scenes));
  test.reserve(static_cast<std::size_t>(cfg.test_scenes));
  for (int i = 0; i < cfg.train_scenes; ++i) train.push_back(draw_scene(cfg, vocab, rng));
  for (int i = 0; i < cfg.test_scenes; ++i) test.push_back(draw_scene(cfg, vocab, rng));
  return {std::move(train), std::move(test)};
}

void write_toy_jsonl(const std::string& path, const std::vector<ToyScene>& scenes,
                     const ToyVocabulary& vocab) {
  std::ofstream out(path);
  MIDOUT_CHECK(out.good(), "cannot open '" << path << "' for writing");
  for (const auto& s : scenes) {
    nlohmann::json j;
    j["actor"] = s.actor;
    j["verb"] = s.verb;
    j["object"] = s.object;
    j["features"] = s.features;
    nlohmann::json refs = nlohmann::json::array();
    for (const auto& r : s.refs) {
      nlohmann::json ref = nlohmann::json::array();
      for (int tok : r) ref.push_back(vocab.word(tok));
      refs.push_back(std::move(ref));
    }
    j["refs"] = std::move(refs);
    out << j.dump() << "\n";
  }
  MIDOUT_CHECK(out.good(), "write failed for '" << path << "'");
}

std::vector<ToyScene> read_toy_jsonl(const std::string& path, const ToyVocabulary& vocab) {
  std::ifstream in(path);
  MIDOUT_CHECK(in.good(), "cannot open '" << path << "'");
  std::vector<ToyScene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ToyScene s;
    s.actor = j.at("actor").get<int>();
    s.verb = j.at("verb").get<int>();
    s.object = j.at("object").get<int>();
    s.features = j.at("features").get<std::vector<std::vector<double>>>();
    for (const auto& ref : j.at("refs")) {
      std::vector<int> toks;
      for (const auto& w : ref) {
        int t = vocab.token_of(w.get<std::string>());
        MIDOUT_CHECK(t >= 0, "unknown word '" << w.get<std::string>() << "' in " << path);
        toks.push_back(t);
      }
      s.refs.push_back(std::move(toks));
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

double scheduled_sampling_rate(int epoch) {
  MIDOUT_CHECK(epoch >= 0, "epoch " << epoch);
  return std::min(0.05 * epoch, 0.25);
}

std::string family_to_string(CaptionFamily f) {
  switch (f) {
    case CaptionFamily::kBaseline: return "baseline";
    case CaptionFamily::kMiddleOut: return "middleout";
    case CaptionFamily::kOracleBaseline: return "oracle_baseline";
  }
  return "baseline";
}

Seq2SeqConfig caption_model_config(const ToyCaptionConfig& cfg, CaptionFamily family,
                                   SelfAttnVariant variant) {
  ToyVocabulary vocab(cfg);
  Seq2SeqConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = cfg.embed_dim;
  c.feature_dim = cfg.feature_dim();
  c.enc_hidden = cfg.lstm_size;
  c.dec_hidden = cfg.lstm_size;
  c.variant = variant;
  c.middle_out = family == CaptionFamily::kMiddleOut;
  c.oracle_input = family == CaptionFamily::kOracleBaseline;
  c.start_id = vocab.start_id();
  c.stop_id = vocab.stop_id();
  c.max_len_per_side = cfg.max_len_per_side;
  return c;
}

TrainedCaption train_caption(const ToyCaptionConfig& cfg, CaptionFamily family,
                             SelfAttnVariant variant, const std::vector<ToyScene>& train) {
  MIDOUT_CHECK(!train.empty(), "empty training set");
  ToyVocabulary vocab(cfg);
  TrainedCaption result;
  result.store = std::make_unique<ParameterStore>();
  result.model = std::make_unique<Seq2SeqModel>(*result.store,
                                                caption_model_config(cfg, family, variant));
  std::uint64_t fam = static_cast<std::uint64_t>(family);
  RngStream init_rng = RngStream(cfg.seed).derive(kInitSaltBase + fam);
  init_uniform(*result.store, init_rng);
  result.model->set_forget_biases(1.0);

  std::vector<std::pair<std::size_t, std::size_t>> examples;  // (scene, ref)
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (std::size_t r = 0; r < train[i].refs.size(); ++r) examples.emplace_back(i, r);
  }
  RngStream order_rng = RngStream(cfg.seed).derive(kShuffleSaltBase + fam);
  RngStream sample_rng = RngStream(cfg.seed).derive(kSamplingSaltBase + fam);

  AdamState adam;
  adam.lr = cfg.lr;
  ComputeTape tape;
  int batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double rate = scheduled_sampling_rate(epoch);
    order_rng.shuffle(examples);
    for (std::size_t at = 0; at < examples.size(); at += static_cast<std::size_t>(cfg.batch)) {
      std::size_t chunk = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch),
                                                examples.size() - at);
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < chunk; ++b) {
        const auto& [si, ri] = examples[at + b];
        const ToyScene& scene = train[si];
        const std::vector<int>& ref = scene.refs[ri];
        int verb_tok = vocab.verb_token(scene.verb);
        tape.reset();
        EncodedSequence enc = result.model->encode(tape, scene.features);
        Seq2SeqModel::TrainOptions opt{rate, &sample_rng};
        Var loss;
        if (family == CaptionFamily::kMiddleOut) {
          auto [lt, rt] = Seq2SeqModel::split_at_middle(ref, verb_tok, vocab.stop_id());
          loss = result.model->middle_out_train_step(tape, enc, lt, rt, verb_tok, opt);
        } else {
          std::vector<int> targets = ref;
          targets.push_back(vocab.stop_id());
          int oracle_tok = family == CaptionFamily::kOracleBaseline ? verb_tok : -1;
          loss = result.model->baseline_train_loss(tape, enc, targets, oracle_tok, opt);
        }
        double lv = loss.value();
        if (!std::isfinite(lv)) {
          throw std::runtime_error("train_caption diverged: non-finite loss in epoch " +
                                   std::to_string(epoch));
        }
        tape.backward(loss, 1.0 / static_cast<double>(chunk));
        batch_loss += lv / static_cast<double>(chunk);
      }
      adam_step(*result.store, adam);
      ++batch_index;
      if (batch_index % 50 == 0) result.loss_curve.emplace_back(batch_index, batch_loss);
    }
  }
  return result;
}

TrainedClassifier train_middle_word_classifier(const ToyCaptionConfig& cfg,
                                               const std::vector<ToyScene>& train) {
  MIDOUT_CHECK(!train.empty(), "empty training set");
  TrainedClassifier result;
  result.store = std::make_unique<ParameterStore>();
  result.model = std::make_unique<MiddleWordClassifier>(*result.store, "cls", cfg.feature_dim(),
                                                        cfg.lstm_size, cfg.verbs);
  RngStream init_rng = RngStream(cfg.seed).derive(kClassifierInitSalt);
  init_uniform(*result.store, init_rng);
  result.model->set_forget_bias(1.0);

  RngStream order_rng = RngStream(cfg.seed).derive(kClassifierShuffleSalt);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  AdamState adam;
  adam.lr = cfg.lr;
  ComputeTape tape;
  for (int epoch = 0; epoch < cfg.classifier_epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
      std::size_t chunk = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch),
                                                order.size() - at);
      for (std::size_t b = 0; b < chunk; ++b) {
        const ToyScene& scene = train[order[at + b]];
        tape.reset();
        Var loss = result.model->train_loss(tape, scene.features, scene.verb);
        if (!std::isfinite(loss.value())) {
          throw std::runtime_error("classifier training diverged");
        }
        tape.backward(loss, 1.0 / static_cast<double>(chunk));
      }
      adam_step(*result.store, adam);
    }
  }
  return result;
}

double classifier_accuracy(const MiddleWordClassifier& cls, const std::vector<ToyScene>& scenes) {
  MIDOUT_CHECK(!scenes.empty(), "empty scene set");
  int hits = 0;
  for (const auto& s : scenes) {
    if (cls.top_k(s.features, 1)[0] == s.verb) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scenes.size());
}

CaptionEval eval_caption_quality(const Seq2SeqModel& model, const ToyCaptionConfig& cfg,
                                 const ToyVocabulary& vocab,
                                 const std::vector<ToyScene>& scenes,
                                 const std::vector<int>& middle_words) {
  MIDOUT_CHECK(!scenes.empty(), "empty scene set");
  const Seq2SeqConfig& mc = model.config();
  if (mc.middle_out || mc.oracle_input) {
    MIDOUT_CHECK(middle_words.size() == scenes.size(),
                 "need one middle word per scene, got " << middle_words.size());
  }
  CaptionEval ev;
  CorpusBleu bleu;
  double rouge_acc = 0.0;
  ComputeTape tape;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    tape.reset();
    EncodedSequence enc = model.encode(tape, scenes[i].features);
    std::vector<int> seeds;
    int oracle_tok = -1;
    if (mc.middle_out) {
      seeds = {middle_words[i]};
    } else {
      seeds = {mc.start_id};
      if (mc.oracle_input) oracle_tok = middle_words[i];
    }
    std::vector<Hypothesis> hyps = model.beam_search(tape, enc, cfg.beam, seeds, oracle_tok);
    std::vector<int> cand = hyps.front().assemble();
    bleu.add(cand, scenes[i].refs);
    rouge_acc += rouge_l(cand, scenes[i].refs);
    if (mc.middle_out) {
      ++ev.middle_expected;
      if (std::find(cand.begin(), cand.end(), middle_words[i]) != cand.end()) {
        ++ev.middle_contained;
      }
    }
  }
  ev.bleu4 = bleu.score();
  ev.rouge_l = rouge_acc / static_cast<double>(scenes.size());
  ev.scenes = static_cast<int>(scenes.size());
  return ev;
}

double eval_diversity(const Seq2SeqModel& model, const ToyCaptionConfig& cfg,
                      const ToyVocabulary& vocab, const std::vector<ToyScene>& scenes,
                      const MiddleWordClassifier* classifier) {
  MIDOUT_CHECK(!scenes.empty(), "empty scene set");
  const Seq2SeqConfig& mc = model.config();
  if (mc.middle_out) {
    MIDOUT_CHECK(classifier != nullptr, "middle-out diversity needs the classifier");
  }
  double acc = 0.0;
  ComputeTape tape;
  for (const auto& scene : scenes) {
    tape.reset();
    EncodedSequence enc = model.encode(tape, scene.features);
    std::vector<int> seeds;
    if (mc.middle_out) {
      for (int v : classifier->top_k(scene.features, cfg.beam)) {
        seeds.push_back(vocab.verb_token(v));
      }
    } else {
      seeds = {mc.start_id};
    }
    std::vector<Hypothesis> hyps = model.beam_search(tape, enc, cfg.beam, seeds, -1);
    std::vector<std::vector<int>> captions;
    captions.reserve(hyps.size());
    for (const auto& h : hyps) captions.push_back(h.assemble());
    acc += self_bleu(captions);
  }
  return acc / static_cast<double>(scenes.size());
}

namespace {
double realized_accuracy(const std::vector<int>& words, const std::vector<int>& oracle) {
  int hits = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == oracle[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(words.size());
}
}  // namespace

std::vector<SweepRow> run_oracle_sweep(const Seq2SeqModel& middleout,
                                       const MiddleWordClassifier& classifier,
                                       const ToyCaptionConfig& cfg, const ToyVocabulary& vocab,
                                       const std::vector<ToyScene>& scenes, RngStream& rng) {
  std::vector<int> oracle, raw;
  oracle.reserve(scenes.size());
  raw.reserve(scenes.size());
  for (const auto& s : scenes) {
    oracle.push_back(vocab.verb_token(s.verb));
    raw.push_back(vocab.verb_token(classifier.top_k(s.features, 1)[0]));
  }
  std::vector<int> verbs = vocab.verb_tokens();

  std::vector<SweepRow> rows;
  auto add_row = [&](const std::string& label, const std::vector<int>& words) {
    CaptionEval ev = eval_caption_quality(middleout, cfg, vocab, scenes, words);
    rows.push_back({label, realized_accuracy(words, oracle), ev.bleu4, ev.rouge_l});
  };
  add_row("raw", raw);
  add_row("50", corrupt_oracle(oracle, verbs, 0.50, rng));
  add_row("75", corrupt_oracle(oracle, verbs, 0.75, rng));
  add_row("100", corrupt_oracle(oracle, verbs, 1.00, rng));
  return rows;
}

ControlEval run_control_eval(const Seq2SeqModel& middleout, const Seq2SeqModel& oracle_baseline,
                             const ToyCaptionConfig& cfg, const ToyVocabulary& vocab,
                             const std::vector<ToyScene>& scenes, int num_pairs, RngStream& rng) {
  MIDOUT_CHECK(scenes.size() >= 2, "need at least two scenes");
  MIDOUT_CHECK(middleout.config().middle_out, "first model must be middle-out");
  MIDOUT_CHECK(oracle_baseline.config().oracle_input, "second model must take oracle input");

  ControlEval ev;
  ComputeTape tape;
  long attempts = 0;
  const long max_attempts = 1000L * num_pairs;
  while (ev.pairs < num_pairs && attempts < max_attempts) {
    ++attempts;
    std::size_t i = static_cast<std::size_t>(rng.below(scenes.size()));
    std::size_t j = static_cast<std::size_t>(rng.below(scenes.size()));
    const ToyScene& a = scenes[i];
    const ToyScene& b = scenes[j];
    if (i == j || a.actor == b.actor || a.verb == b.verb || a.object == b.object) continue;

    std::vector<std::vector<double>> features = a.features;
    features.insert(features.end(), b.features.begin(), b.features.end());
    int verb_tok = vocab.verb_token(a.verb);
    MIDOUT_CHECK(vocab.is_verb(verb_tok), "middle word must be a verb token");

    auto score_side = [&](const std::vector<int>& cand, const ToyScene& s) {
      int hits = 0;
      if (std::find(cand.begin(), cand.end(), vocab.actor_token(s.actor)) != cand.end()) ++hits;
      if (std::find(cand.begin(), cand.end(), vocab.object_token(s.object)) != cand.end()) ++hits;
      return hits;
    };

    tape.reset();
    EncodedSequence enc_mo = middleout.encode(tape, features);
    std::vector<int> mo_cand =
        middleout.beam_search(tape, enc_mo, cfg.beam, {verb_tok}, -1).front().assemble();

    tape.reset();
    EncodedSequence enc_bl = oracle_baseline.encode(tape, features);
    std::vector<int> bl_cand =
        oracle_baseline
            .beam_search(tape, enc_bl, cfg.beam, {oracle_baseline.config().start_id}, verb_tok)
            .front()
            .assemble();

    ++ev.pairs;
    if (score_side(mo_cand, a) > score_side(mo_cand, b)) ++ev.middleout_hits;
    if (score_side(bl_cand, a) > score_side(bl_cand, b)) ++ev.baseline_hits;
    if (std::find(mo_cand.begin(), mo_cand.end(), verb_tok) != mo_cand.end()) {
      ++ev.middleout_contains_verb;
    }
    if (std::find(bl_cand.begin(), bl_cand.end(), verb_tok) != bl_cand.end()) {
      ++ev.baseline_contains_verb;
    }
  }
  MIDOUT_CHECK(ev.pairs == num_pairs,
               "could not sample " << num_pairs << " disjoint scene pairs");
  return ev;
}

}  // namespace midout
