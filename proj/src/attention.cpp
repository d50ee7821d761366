#include "midout/attention.hpp"

namespace midout {

BilinearAttention::BilinearAttention(ParameterStore& store, const std::string& prefix,
                                     int query_dim, int key_dim)
    : query_dim_(query_dim), key_dim_(key_dim) {
  w_a_ = &store.create(prefix + ".w_a", Shape{query_dim, key_dim});
}

Var BilinearAttention::score(ComputeTape& tape, Var query, Var key) const {
  MIDOUT_CHECK(static_cast<int>(query.numel()) == query_dim_,
               "attention query size " << query.numel() << " != " << query_dim_);
  MIDOUT_CHECK(static_cast<int>(key.numel()) == key_dim_,
               "attention key size " << key.numel() << " != " << key_dim_);
  Var u = tape.matmul(query, tape.param(*w_a_));  // {key_dim}
  return tape.dot(u, key);
}

AttentionResult BilinearAttention::attend(ComputeTape& tape, Var query, Var keys_matrix) const {
  MIDOUT_CHECK(static_cast<int>(query.numel()) == query_dim_,
               "attention query size " << query.numel() << " != " << query_dim_);
  MIDOUT_CHECK(keys_matrix.rank() == 2 && keys_matrix.dim(1) == key_dim_,
               "attention keys shape " << shape_str(keys_matrix.shape()) << ", key_dim "
                                       << key_dim_);
  Var u = tape.matmul(query, tape.param(*w_a_));     // {key_dim}
  Var scores = tape.matmul(keys_matrix, u);          // {m}
  Var alpha = tape.softmax(scores);
  Var context = tape.weighted_sum(alpha, keys_matrix);
  return {alpha, context, false};
}

AttentionResult BilinearAttention::attend_memory(ComputeTape& tape, Var query,
                                                 const std::vector<Var>& memory) const {
  if (memory.empty()) {
    Tensor zero(Shape{key_dim_});
    return {{}, tape.constant(zero), true};
  }
  return attend(tape, query, tape.stack(memory));
}

}  // namespace midout
