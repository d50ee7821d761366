#pragma once

#include <string>
#include <vector>

#include "midout/optim.hpp"
#include "midout/tape.hpp"

namespace midout {

// Weights form a probability vector whenever the memory is nonempty; an
// empty memory yields the zero context and no weights.
struct AttentionResult {
  Var weights;  // invalid when the memory was empty
  Var context;
  bool empty = false;
};

// Bilinear ("general") attention: score(q, k) = q^T W_a k. Keys and values
// coincide; each mechanism instance owns its own W_a.
class BilinearAttention {
 public:
  BilinearAttention(ParameterStore& store, const std::string& prefix, int query_dim, int key_dim);

  Var score(ComputeTape& tape, Var query, Var key) const;

  // keys_matrix: {m, key_dim}, rows are both keys and values.
  AttentionResult attend(ComputeTape& tape, Var query, Var keys_matrix) const;

  // Memory form; an empty memory returns the zero context.
  AttentionResult attend_memory(ComputeTape& tape, Var query,
                                const std::vector<Var>& memory) const;

  int query_dim() const { return query_dim_; }
  int key_dim() const { return key_dim_; }

 private:
  int query_dim_, key_dim_;
  Tensor* w_a_;
};

}  // namespace midout
