#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "midout/tensor.hpp"

namespace midout {

// Reverse-mode autodiff over a define-by-run tape.
//
// Every differentiable operation executes eagerly and appends one node to
// the tape; the record order is therefore a topological order of the
// dataflow graph, and backward() is a single reverse sweep that visits each
// node exactly once. Graphs are rebuilt per forward pass, which keeps
// data-dependent control flow (middle-out alternation, variable-length
// sequences) trivial. Values and gradients live in flat arenas so reset()
// reuses capacity across samples.

enum class Op : std::uint8_t {
  kLeaf,
  kParam,
  kMatMul,
  kAdd,
  kMul,
  kConcat,
  kTanh,
  kSigmoid,
  kSoftmax,
  kLogSoftmax,
  kMeanSquared,
  kCrossEntropy,
  kWeightedSum,
  kDot,
  kStack,
  kSelectRow,
  kSlice,
  kScale,
};

class ComputeTape;

// Lightweight handle to a tape node.
struct Var {
  ComputeTape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  int rank() const;
  int dim(int i) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double value(std::size_t i = 0) const;
  Shape shape() const;
};

class ComputeTape {
 public:
  struct Node {
    Op op;
    std::uint8_t rank;
    int d0, d1;         // extents; d0 used when rank>=1, d1 when rank==2
    int off, n;         // arena offset and element count (-1 off for params)
    int a, b;           // input ids, -1 if unused
    int args_off, args_n;
    int iaux, iaux2;
    double daux;
    Tensor* bound;      // parameter binding, nullptr otherwise
    bool needs_grad;
  };

  ComputeTape() = default;
  ComputeTape(const ComputeTape&) = delete;
  ComputeTape& operator=(const ComputeTape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  // Drops all nodes but keeps arena capacity.
  void reset();

  Var constant(const Tensor& t);
  Var constant_scalar(double v);
  Var constant_vector(std::span<const double> v);
  // Binds a trainable tensor; one node per tensor per tape, grads accumulate
  // straight into t.grad during backward().
  Var param(Tensor& t);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var concat(const std::vector<Var>& parts);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var softmax(Var x, int axis = -1);
  Var log_softmax(Var x, int axis = -1);
  Var mean_squared(Var pred, Var target);
  Var cross_entropy(Var logits, int target_id);
  Var weighted_sum(Var weights, Var values);
  Var dot(Var a, Var b);
  Var stack(const std::vector<Var>& rows);
  Var select_row(Var matrix, int row);
  Var slice(Var x, int offset, int len);
  Var scale(Var x, double c);

  // Reverse sweep from a scalar loss; seed scales every gradient (used to
  // fold 1/batch into per-sample backward passes).
  void backward(Var loss, double seed = 1.0);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::span<const double> values(int id) const;
  std::span<const double> grads(int id) const;

 private:
  friend struct Var;

  std::span<double> val_span(int id);
  std::span<const double> val_span(int id) const;
  std::span<double> grad_span(int id);

  int push(Op op, int rank, int d0, int d1, int a, int b, bool needs_grad);
  void check_same_tape(Var v) const;
  void backward_node(int id, double seed);

  std::vector<Node> nodes_;
  std::vector<double> buf_;
  std::vector<double> gbuf_;
  std::vector<int> args_;
  std::unordered_map<const Tensor*, int> params_;
};

inline int Var::rank() const { return tape->node(id).rank; }
inline int Var::dim(int i) const {
  const auto& nd = tape->node(id);
  return i == 0 ? nd.d0 : nd.d1;
}
inline std::size_t Var::numel() const { return static_cast<std::size_t>(tape->node(id).n); }
inline std::span<const double> Var::values() const { return tape->values(id); }
inline double Var::value(std::size_t i) const { return tape->values(id)[i]; }
inline Shape Var::shape() const {
  const auto& nd = tape->node(id);
  if (nd.rank == 0) return {};
  if (nd.rank == 1) return {nd.d0};
  return {nd.d0, nd.d1};
}

}  // namespace midout
