#pragma once

#include <string>
#include <vector>

#include "midout/optim.hpp"
#include "midout/tape.hpp"

namespace midout {

struct LstmStateVar {
  Var h, c;
};

// Single LSTM cell with per-gate weights of shape {H, D+H}. Standard gate
// equations; forget bias is set to 1.0 by set_forget_bias() after the
// store-wide uniform init.
class LstmCell {
 public:
  LstmCell(ParameterStore& store, const std::string& prefix, int input_size, int hidden_size);

  LstmStateVar step(ComputeTape& tape, Var input, const LstmStateVar& state) const;
  LstmStateVar zero_state(ComputeTape& tape) const;
  void set_forget_bias(double v);

  int input_size() const { return input_size_; }
  int hidden_size() const { return hidden_size_; }

 private:
  int input_size_, hidden_size_;
  Tensor *w_i_, *w_f_, *w_g_, *w_o_;
  Tensor *b_i_, *b_f_, *b_g_, *b_o_;
};

class Linear {
 public:
  Linear(ParameterStore& store, const std::string& prefix, int in, int out);
  Var apply(ComputeTape& tape, Var x) const;
  int in_size() const { return in_; }
  int out_size() const { return out_; }

 private:
  int in_, out_;
  Tensor *w_, *b_;
};

// Token id -> row of a {V, E} matrix. Gradients flow only into the
// selected rows.
class EmbeddingTable {
 public:
  EmbeddingTable(ParameterStore& store, const std::string& prefix, int vocab, int dim);
  Var embed(ComputeTape& tape, int token_id) const;
  int vocab() const { return vocab_; }
  int dim() const { return dim_; }

 private:
  int vocab_, dim_;
  Tensor* table_;
};

// Per-step encoder states plus the decoder's initial state.
struct EncodedSequence {
  std::vector<Var> states;  // h_i^e, each {2*enc_hidden}
  Var states_matrix;        // stacked {n, 2*enc_hidden}, attention keys/values
  LstmStateVar init_state;  // decoder-sized
  Var final_concat;         // concat(fwd_n.h, bwd_1.h), input of value/verb heads
};

// Bidirectional LSTM encoder. h_i^e = concat(fwd_i, bwd_i); the decoder
// start state is a tanh-activated linear bridge from concat(fwd_n, bwd_1),
// adapting 2*enc_hidden down to dec_hidden.
class BiEncoder {
 public:
  BiEncoder(ParameterStore& store, const std::string& prefix, int input_size, int enc_hidden,
            int dec_hidden);

  EncodedSequence encode(ComputeTape& tape, const std::vector<Var>& inputs) const;
  void set_forget_bias(double v);

  int enc_hidden() const { return enc_hidden_; }
  int dec_hidden() const { return dec_hidden_; }
  int state_dim() const { return 2 * enc_hidden_; }

 private:
  int enc_hidden_, dec_hidden_;
  LstmCell fwd_, bwd_;
  Linear bridge_h_, bridge_c_;
};

}  // namespace midout
