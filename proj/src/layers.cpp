#include "midout/layers.hpp"

namespace midout {

LstmCell::LstmCell(ParameterStore& store, const std::string& prefix, int input_size,
                   int hidden_size)
    : input_size_(input_size), hidden_size_(hidden_size) {
  Shape ws{hidden_size, input_size + hidden_size};
  Shape bs{hidden_size};
  w_i_ = &store.create(prefix + ".w_i", ws);
  w_f_ = &store.create(prefix + ".w_f", ws);
  w_g_ = &store.create(prefix + ".w_g", ws);
  w_o_ = &store.create(prefix + ".w_o", ws);
  b_i_ = &store.create(prefix + ".b_i", bs);
  b_f_ = &store.create(prefix + ".b_f", bs);
  b_g_ = &store.create(prefix + ".b_g", bs);
  b_o_ = &store.create(prefix + ".b_o", bs);
}

void LstmCell::set_forget_bias(double v) {
  for (double& x : b_f_->values) x = v;
}

LstmStateVar LstmCell::zero_state(ComputeTape& tape) const {
  Tensor z(Shape{hidden_size_});
  Var h = tape.constant(z);
  Var c = tape.constant(z);
  return {h, c};
}

LstmStateVar LstmCell::step(ComputeTape& tape, Var input, const LstmStateVar& state) const {
  MIDOUT_CHECK(static_cast<int>(input.numel()) == input_size_,
               "lstm input size " << input.numel() << " != " << input_size_);
  Var xh = tape.concat({input, state.h});
  Var i = tape.sigmoid(tape.add(tape.matmul(tape.param(*w_i_), xh), tape.param(*b_i_)));
  Var f = tape.sigmoid(tape.add(tape.matmul(tape.param(*w_f_), xh), tape.param(*b_f_)));
  Var g = tape.tanh(tape.add(tape.matmul(tape.param(*w_g_), xh), tape.param(*b_g_)));
  Var o = tape.sigmoid(tape.add(tape.matmul(tape.param(*w_o_), xh), tape.param(*b_o_)));
  Var c = tape.add(tape.mul(f, state.c), tape.mul(i, g));
  Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

Linear::Linear(ParameterStore& store, const std::string& prefix, int in, int out)
    : in_(in), out_(out) {
  w_ = &store.create(prefix + ".w", Shape{out, in});
  b_ = &store.create(prefix + ".b", Shape{out});
}

Var Linear::apply(ComputeTape& tape, Var x) const {
  MIDOUT_CHECK(static_cast<int>(x.numel()) == in_,
               "linear input size " << x.numel() << " != " << in_);
  return tape.add(tape.matmul(tape.param(*w_), x), tape.param(*b_));
}

EmbeddingTable::EmbeddingTable(ParameterStore& store, const std::string& prefix, int vocab,
                               int dim)
    : vocab_(vocab), dim_(dim) {
  table_ = &store.create(prefix + ".table", Shape{vocab, dim});
}

Var EmbeddingTable::embed(ComputeTape& tape, int token_id) const {
  MIDOUT_CHECK(token_id >= 0 && token_id < vocab_,
               "token id " << token_id << " out of [0," << vocab_ << ")");
  return tape.select_row(tape.param(*table_), token_id);
}

BiEncoder::BiEncoder(ParameterStore& store, const std::string& prefix, int input_size,
                     int enc_hidden, int dec_hidden)
    : enc_hidden_(enc_hidden),
      dec_hidden_(dec_hidden),
      fwd_(store, prefix + ".fwd", input_size, enc_hidden),
      bwd_(store, prefix + ".bwd", input_size, enc_hidden),
      bridge_h_(store, prefix + ".bridge_h", 2 * enc_hidden, dec_hidden),
      bridge_c_(store, prefix + ".bridge_c", 2 * enc_hidden, dec_hidden) {}

void BiEncoder::set_forget_bias(double v) {
  fwd_.set_forget_bias(v);
  bwd_.set_forget_bias(v);
}

EncodedSequence BiEncoder::encode(ComputeTape& tape, const std::vector<Var>& inputs) const {
  MIDOUT_CHECK(!inputs.empty(), "encode_bidirectional on empty input");
  int n = static_cast<int>(inputs.size());

  std::vector<LstmStateVar> fwd_states;
  fwd_states.reserve(inputs.size());
  LstmStateVar st = fwd_.zero_state(tape);
  for (int i = 0; i < n; ++i) {
    st = fwd_.step(tape, inputs[static_cast<std::size_t>(i)], st);
    fwd_states.push_back(st);
  }

  std::vector<LstmStateVar> bwd_states(inputs.size());
  st = bwd_.zero_state(tape);
  for (int i = n - 1; i >= 0; --i) {
    st = bwd_.step(tape, inputs[static_cast<std::size_t>(i)], st);
    bwd_states[static_cast<std::size_t>(i)] = st;
  }

  EncodedSequence out;
  out.states.reserve(inputs.size());
  for (int i = 0; i < n; ++i) {
    out.states.push_back(tape.concat({fwd_states[static_cast<std::size_t>(i)].h,
                                      bwd_states[static_cast<std::size_t>(i)].h}));
  }
  out.states_matrix = tape.stack(out.states);
  out.final_concat = tape.concat({fwd_states.back().h, bwd_states.front().h});
  out.init_state.h = tape.tanh(bridge_h_.apply(tape, out.final_concat));
  out.init_state.c = tape.tanh(bridge_c_.apply(tape, out.final_concat));
  return out;
}

}  // namespace midout
