#include "midout/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace midout {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using MapConstVec = Eigen::Map<const Eigen::VectorXd>;

struct SliceIter {
  int nslices, len, stride, step;
};

// Iteration layout for softmax-style ops along an axis of a rank<=2 node.
SliceIter axis_slices(const ComputeTape::Node& nd, int axis) {
  if (nd.rank <= 1) {
    MIDOUT_CHECK(nd.n > 0, "softmax on empty axis, shape [" << nd.d0 << "]");
    return {1, nd.n, 1, 0};
  }
  if (axis < 0) axis = 1;
  MIDOUT_CHECK(axis == 0 || axis == 1, "softmax axis " << axis << " on rank-2 input");
  MIDOUT_CHECK(nd.d0 > 0 && nd.d1 > 0,
               "softmax on empty axis, shape [" << nd.d0 << "x" << nd.d1 << "]");
  if (axis == 1) return {nd.d0, nd.d1, 1, nd.d1};  // normalize each row
  return {nd.d1, nd.d0, nd.d1, 1};                 // normalize each column
}
}  // namespace

void ComputeTape::reset() {
  nodes_.clear();
  buf_.clear();
  gbuf_.clear();
  args_.clear();
  params_.clear();
}

std::span<double> ComputeTape::val_span(int id) {
  Node& nd = nodes_[static_cast<std::size_t>(id)];
  if (nd.bound != nullptr) return {nd.bound->values.data(), nd.bound->values.size()};
  return {buf_.data() + nd.off, static_cast<std::size_t>(nd.n)};
}

std::span<const double> ComputeTape::val_span(int id) const {
  const Node& nd = nodes_[static_cast<std::size_t>(id)];
  if (nd.bound != nullptr) return {nd.bound->values.data(), nd.bound->values.size()};
  return {buf_.data() + nd.off, static_cast<std::size_t>(nd.n)};
}

std::span<const double> ComputeTape::values(int id) const { return val_span(id); }

std::span<double> ComputeTape::grad_span(int id) {
  Node& nd = nodes_[static_cast<std::size_t>(id)];
  if (nd.bound != nullptr) return {nd.bound->grad.data(), nd.bound->grad.size()};
  return {gbuf_.data() + nd.off, static_cast<std::size_t>(nd.n)};
}

std::span<const double> ComputeTape::grads(int id) { return grad_span(id); }

int ComputeTape::push(Op op, int rank, int d0, int d1, int a, int b, bool needs_grad) {
  Node nd;
  nd.op = op;
  nd.rank = static_cast<std::uint8_t>(rank);
  nd.d0 = d0;
  nd.d1 = d1;
  nd.n = rank == 0 ? 1 : (rank == 1 ? d0 : d0 * d1);
  nd.off = static_cast<int>(buf_.size());
  nd.a = a;
  nd.b = b;
  nd.args_off = 0;
  nd.args_n = 0;
  nd.iaux = 0;
  nd.iaux2 = 0;
  nd.daux = 0.0;
  nd.bound = nullptr;
  nd.needs_grad = needs_grad;
  buf_.resize(buf_.size() + static_cast<std::size_t>(nd.n));
  nodes_.push_back(nd);
  return static_cast<int>(nodes_.size()) - 1;
}

void ComputeTape::check_same_tape(Var v) const {
  MIDOUT_CHECK(v.valid() && v.tape == this, "operand from a different tape");
}

Var ComputeTape::constant(const Tensor& t) {
  int rank = static_cast<int>(t.shape.size());
  MIDOUT_CHECK(rank <= 2, "tape supports rank <= 2, got " << shape_str(t.shape));
  int id = push(Op::kLeaf, rank, rank >= 1 ? t.shape[0] : 0, rank == 2 ? t.shape[1] : 0, -1, -1,
                false);
  std::copy(t.values.begin(), t.values.end(), val_span(id).begin());
  return {this, id};
}

Var ComputeTape::constant_scalar(double v) {
  int id = push(Op::kLeaf, 0, 0, 0, -1, -1, false);
  val_span(id)[0] = v;
  return {this, id};
}

Var ComputeTape::constant_vector(std::span<const double> v) {
  int id = push(Op::kLeaf, 1, static_cast<int>(v.size()), 0, -1, -1, false);
  std::copy(v.begin(), v.end(), val_span(id).begin());
  return {this, id};
}

Var ComputeTape::param(Tensor& t) {
  auto it = params_.find(&t);
  if (it != params_.end()) return {this, it->second};
  MIDOUT_CHECK(t.requires_grad && t.grad.size() == t.values.size(),
               "parameter bound to tape must carry grad storage");
  int rank = static_cast<int>(t.shape.size());
  MIDOUT_CHECK(rank <= 2, "tape supports rank <= 2, got " << shape_str(t.shape));
  Node nd;
  nd.op = Op::kParam;
  nd.rank = static_cast<std::uint8_t>(rank);
  nd.d0 = rank >= 1 ? t.shape[0] : 0;
  nd.d1 = rank == 2 ? t.shape[1] : 0;
  nd.n = static_cast<int>(t.numel());
  nd.off = -1;
  nd.a = nd.b = -1;
  nd.args_off = nd.args_n = 0;
  nd.iaux = nd.iaux2 = 0;
  nd.daux = 0.0;
  nd.bound = &t;
  nd.needs_grad = true;
  nodes_.push_back(nd);
  int id = static_cast<int>(nodes_.size()) - 1;
  params_.emplace(&t, id);
  return {this, id};
}

Var ComputeTape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = node(a.id), nb = node(b.id);
  bool ng = na.needs_grad || nb.needs_grad;
  int id;
  if (na.rank == 2 && nb.rank == 2) {
    MIDOUT_CHECK(na.d1 == nb.d0, "matmul inner dims: " << shape_str(a.shape()) << " x "
                                                       << shape_str(b.shape()));
    id = push(Op::kMatMul, 2, na.d0, nb.d1, a.id, b.id, ng);
    MapConstMat A(val_span(a.id).data(), na.d0, na.d1);
    MapConstMat B(val_span(b.id).data(), nb.d0, nb.d1);
    MapMat C(val_span(id).data(), na.d0, nb.d1);
    C.noalias() = A * B;
  } else if (na.rank == 2 && nb.rank == 1) {
    MIDOUT_CHECK(na.d1 == nb.d0, "matmul inner dims: " << shape_str(a.shape()) << " x "
                                                       << shape_str(b.shape()));
    id = push(Op::kMatMul, 1, na.d0, 0, a.id, b.id, ng);
    MapConstMat A(val_span(a.id).data(), na.d0, na.d1);
    MapConstVec x(val_span(b.id).data(), nb.d0);
    MapVec y(val_span(id).data(), na.d0);
    y.noalias() = A * x;
  } else if (na.rank == 1 && nb.rank == 2) {
    MIDOUT_CHECK(na.d0 == nb.d0, "matmul inner dims: " << shape_str(a.shape()) << " x "
                                                       << shape_str(b.shape()));
    id = push(Op::kMatMul, 1, nb.d1, 0, a.id, b.id, ng);
    MapConstVec x(val_span(a.id).data(), na.d0);
    MapConstMat B(val_span(b.id).data(), nb.d0, nb.d1);
    MapVec y(val_span(id).data(), nb.d1);
    y.noalias() = B.transpose() * x;
  } else {
    MIDOUT_CHECK(false, "matmul requires a matrix operand, got " << shape_str(a.shape()) << " x "
                                                                 << shape_str(b.shape()));
    return {};
  }
  return {this, id};
}

Var ComputeTape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = node(a.id), nb = node(b.id);
  MIDOUT_CHECK(na.rank == nb.rank && na.n == nb.n && na.d0 == nb.d0 && na.d1 == nb.d1,
               "add shapes: " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  int id = push(Op::kAdd, na.rank, na.d0, na.d1, a.id, b.id, na.needs_grad || nb.needs_grad);
  auto pa = val_span(a.id), pb = val_span(b.id);
  auto out = val_span(id);
  for (int i = 0; i < na.n; ++i) out[i] = pa[i] + pb[i];
  return {this, id};
}

Var ComputeTape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = node(a.id), nb = node(b.id);
  MIDOUT_CHECK(na.rank == nb.rank && na.n == nb.n && na.d0 == nb.d0 && na.d1 == nb.d1,
               "elementwise_mul shapes: " << shape_str(a.shape()) << " vs "
                                          << shape_str(b.shape()));
  int id = push(Op::kMul, na.rank, na.d0, na.d1, a.id, b.id, na.needs_grad || nb.needs_grad);
  auto pa = val_span(a.id), pb = val_span(b.id);
  auto out = val_span(id);
  for (int i = 0; i < na.n; ++i) out[i] = pa[i] * pb[i];
  return {this, id};
}

Var ComputeTape::concat(const std::vector<Var>& parts) {
  MIDOUT_CHECK(!parts.empty(), "concat of zero parts");
  int total = 0;
  bool ng = false;
  for (Var p : parts) {
    check_same_tape(p);
    const Node& np = node(p.id);
    MIDOUT_CHECK(np.rank <= 1, "concat needs scalar or vector parts, got "
                                   << shape_str(p.shape()));
    total += np.n;
    ng = ng || np.needs_grad;
  }
  int id = push(Op::kConcat, 1, total, 0, -1, -1, ng);
  Node& nd = nodes_[static_cast<std::size_t>(id)];
  nd.args_off = static_cast<int>(args_.size());
  nd.args_n = static_cast<int>(parts.size());
  for (Var p : parts) args_.push_back(p.id);
  auto out = val_span(id);
  int at = 0;
  for (Var p : parts) {
    auto pv = val_span(p.id);
    std::copy(pv.begin(), pv.end(), out.begin() + at);
    at += static_cast<int>(pv.size());
  }
  return {this, id};
}

Var ComputeTape::tanh(Var x) {
  check_same_tape(x);
  const Node nx = node(x.id);
  int id = push(Op::kTanh, nx.rank, nx.d0, nx.d1, x.id, -1, nx.needs_grad);
  auto in = val_span(x.id);
  auto out = val_span(id);
  for (int i = 0; i < nx.n; ++i) out[i] = std::tanh(in[i]);
  return {this, id};
}

Var ComputeTape::sigmoid(Var x) {
  check_same_tape(x);
  const Node nx = node(x.id);
  int id = push(Op::kSigmoid, nx.rank, nx.d0, nx.d1, x.id, -1, nx.needs_grad);
  auto in = val_span(x.id);
  auto out = val_span(id);
  for (int i = 0; i < nx.n; ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return {this, id};
}

Var ComputeTape::softmax(Var x, int axis) {
  check_same_tape(x);
  const Node nx = node(x.id);
  SliceIter it = axis_slices(nx, axis);
  int id = push(Op::kSoftmax, nx.rank, nx.d0, nx.d1, x.id, -1, nx.needs_grad);
  nodes_.back().iaux = axis;
  auto in = val_span(x.id);
  auto out = val_span(id);
  for (int s = 0; s < it.nslices; ++s) {
    int base = s * it.step;
    double m = in[base];
    for (int i = 1; i < it.len; ++i) m = std::max(m, in[base + i * it.stride]);
    double sum = 0.0;
    for (int i = 0; i < it.len; ++i) {
      double e = std::exp(in[base + i * it.stride] - m);
      out[base + i * it.stride] = e;
      sum += e;
    }
    for (int i = 0; i < it.len; ++i) out[base + i * it.stride] /= sum;
  }
  return {this, id};
}

Var ComputeTape::log_softmax(Var x, int axis) {
  check_same_tape(x);
  const Node nx = node(x.id);
  SliceIter it = axis_slices(nx, axis);
  int id = push(Op::kLogSoftmax, nx.rank, nx.d0, nx.d1, x.id, -1, nx.needs_grad);
  nodes_.back().iaux = axis;
  auto in = val_span(x.id);
  auto out = val_span(id);
  for (int s = 0; s < it.nslices; ++s) {
    int base = s * it.step;
    double m = in[base];
    for (int i = 1; i < it.len; ++i) m = std::max(m, in[base + i * it.stride]);
    double sum = 0.0;
    for (int i = 0; i < it.len; ++i) sum += std::exp(in[base + i * it.stride] - m);
    double lse = m + std::log(sum);
    for (int i = 0; i < it.len; ++i) out[base + i * it.stride] = in[base + i * it.stride] - lse;
  }
  return {this, id};
}

Var ComputeTape::mean_squared(Var pred, Var target) {
  check_same_tape(pred);
  check_same_tape(target);
  const Node np = node(pred.id), nt = node(target.id);
  MIDOUT_CHECK(np.n == nt.n, "mean_squared shapes: " << shape_str(pred.shape()) << " vs "
                                                     << shape_str(target.shape()));
  int id = push(Op::kMeanSquared, 0, 0, 0, pred.id, target.id, np.needs_grad || nt.needs_grad);
  auto pp = val_span(pred.id), pt = val_span(target.id);
  double acc = 0.0;
  for (int i = 0; i < np.n; ++i) {
    double d = pp[i] - pt[i];
    acc += d * d;
  }
  val_span(id)[0] = acc / np.n;
  return {this, id};
}

Var ComputeTape::cross_entropy(Var logits, int target_id) {
  check_same_tape(logits);
  const Node nl = node(logits.id);
  MIDOUT_CHECK(nl.rank == 1 && nl.n > 0, "cross_entropy needs a logit vector, got "
                                             << shape_str(logits.shape()));
  MIDOUT_CHECK(target_id >= 0 && target_id < nl.n,
               "cross_entropy target " << target_id << " out of [0," << nl.n << ")");
  int id = push(Op::kCrossEntropy, 0, 0, 0, logits.id, -1, nl.needs_grad);
  nodes_.back().iaux = target_id;
  auto in = val_span(logits.id);
  double m = in[0];
  for (int i = 1; i < nl.n; ++i) m = std::max(m, in[i]);
  double sum = 0.0;
  for (int i = 0; i < nl.n; ++i) sum += std::exp(in[i] - m);
  val_span(id)[0] = m + std::log(sum) - in[target_id];
  return {this, id};
}

Var ComputeTape::weighted_sum(Var weights, Var values) {
  check_same_tape(weights);
  check_same_tape(values);
  const Node nw = node(weights.id), nv = node(values.id);
  MIDOUT_CHECK(nw.rank == 1 && nv.rank == 2 && nw.d0 == nv.d0,
               "weighted_sum shapes: " << shape_str(weights.shape()) << " vs "
                                       << shape_str(values.shape()));
  MIDOUT_CHECK(nw.d0 > 0, "weighted_sum over zero rows");
  int id = push(Op::kWeightedSum, 1, nv.d1, 0, weights.id, values.id,
                nw.needs_grad || nv.needs_grad);
  MapConstVec w(val_span(weights.id).data(), nw.d0);
  MapConstMat V(val_span(values.id).data(), nv.d0, nv.d1);
  MapVec y(val_span(id).data(), nv.d1);
  y.noalias() = V.transpose() * w;
  return {this, id};
}

Var ComputeTape::dot(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Node na = node(a.id), nb = node(b.id);
  MIDOUT_CHECK(na.rank == 1 && nb.rank == 1 && na.d0 == nb.d0,
               "dot shapes: " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
  int id = push(Op::kDot, 0, 0, 0, a.id, b.id, na.needs_grad || nb.needs_grad);
  MapConstVec x(val_span(a.id).data(), na.d0);
  MapConstVec y(val_span(b.id).data(), nb.d0);
  val_span(id)[0] = x.dot(y);
  return {this, id};
}

Var ComputeTape::stack(const std::vector<Var>& rows) {
  MIDOUT_CHECK(!rows.empty(), "stack of zero rows");
  int d = -1;
  bool ng = false;
  for (Var r : rows) {
    check_same_tape(r);
    const Node& nr = node(r.id);
    MIDOUT_CHECK(nr.rank == 1, "stack needs vectors, got " << shape_str(r.shape()));
    if (d < 0) d = nr.d0;
    MIDOUT_CHECK(nr.d0 == d, "stack row width " << nr.d0 << " != " << d);
    ng = ng || nr.needs_grad;
  }
  int id = push(Op::kStack, 2, static_cast<int>(rows.size()), d, -1, -1, ng);
  Node& nd = nodes_[static_cast<std::size_t>(id)];
  nd.args_off = static_cast<int>(args_.size());
  nd.args_n = static_cast<int>(rows.size());
  for (Var r : rows) args_.push_back(r.id);
  auto out = val_span(id);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto rv = val_span(rows[r].id);
    std::copy(rv.begin(), rv.end(), out.begin() + static_cast<int>(r) * d);
  }
  return {this, id};
}

Var ComputeTape::select_row(Var matrix, int row) {
  check_same_tape(matrix);
  const Node nm = node(matrix.id);
  MIDOUT_CHECK(nm.rank == 2, "select_row on " << shape_str(matrix.shape()));
  MIDOUT_CHECK(row >= 0 && row < nm.d0, "row " << row << " out of [0," << nm.d0 << ")");
  int id = push(Op::kSelectRow, 1, nm.d1, 0, matrix.id, -1, nm.needs_grad);
  nodes_.back().iaux = row;
  auto in = val_span(matrix.id);
  auto out = val_span(id);
  std::copy(in.begin() + row * nm.d1, in.begin() + (row + 1) * nm.d1, out.begin());
  return {this, id};
}

Var ComputeTape::slice(Var x, int offset, int len) {
  check_same_tape(x);
  const Node nx = node(x.id);
  MIDOUT_CHECK(nx.rank == 1, "slice on " << shape_str(x.shape()));
  MIDOUT_CHECK(offset >= 0 && len > 0 && offset + len <= nx.d0,
               "slice [" << offset << "," << offset + len << ") of " << shape_str(x.shape()));
  int id = push(Op::kSlice, 1, len, 0, x.id, -1, nx.needs_grad);
  Node& nd = nodes_.back();
  nd.iaux = offset;
  nd.iaux2 = len;
  auto in = val_span(x.id);
  auto out = val_span(id);
  std::copy(in.begin() + offset, in.begin() + offset + len, out.begin());
  return {this, id};
}

Var ComputeTape::scale(Var x, double c) {
  check_same_tape(x);
  const Node nx = node(x.id);
  int id = push(Op::kScale, nx.rank, nx.d0, nx.d1, x.id, -1, nx.needs_grad);
  nodes_.back().daux = c;
  auto in = val_span(x.id);
  auto out = val_span(id);
  for (int i = 0; i < nx.n; ++i) out[i] = c * in[i];
  return {this, id};
}

void ComputeTape::backward(Var loss, double seed) {
  check_same_tape(loss);
  MIDOUT_CHECK(!nodes_.empty(), "backward on empty tape");
  MIDOUT_CHECK(loss.numel() == 1, "backward needs a scalar loss, got "
                                      << shape_str(loss.shape()));
  gbuf_.assign(buf_.size(), 0.0);
  grad_span(loss.id)[0] += seed;
  for (int id = loss.id; id >= 0; --id) {
    if (nodes_[static_cast<std::size_t>(id)].needs_grad) backward_node(id, seed);
  }
}

void ComputeTape::backward_node(int id, double /*seed*/) {
  const Node nd = nodes_[static_cast<std::size_t>(id)];
  auto g = grad_span(id);
  switch (nd.op) {
    case Op::kLeaf:
    case Op::kParam:
      return;
    case Op::kMatMul: {
      const Node na = node(nd.a), nb = node(nd.b);
      if (na.rank == 2 && nb.rank == 2) {
        MapConstMat A(val_span(nd.a).data(), na.d0, na.d1);
        MapConstMat B(val_span(nd.b).data(), nb.d0, nb.d1);
        MapConstMat G(g.data(), na.d0, nb.d1);
        if (na.needs_grad) {
          MapMat gA(grad_span(nd.a).data(), na.d0, na.d1);
          gA.noalias() += G * B.transpose();
        }
        if (nb.needs_grad) {
          MapMat gB(grad_span(nd.b).data(), nb.d0, nb.d1);
          gB.noalias() += A.transpose() * G;
        }
      } else if (na.rank == 2 && nb.rank == 1) {
        MapConstMat A(val_span(nd.a).data(), na.d0, na.d1);
        MapConstVec x(val_span(nd.b).data(), nb.d0);
        MapConstVec G(g.data(), na.d0);
        if (na.needs_grad) {
          MapMat gA(grad_span(nd.a).data(), na.d0, na.d1);
          gA.noalias() += G * x.transpose();
        }
        if (nb.needs_grad) {
          MapVec gx(grad_span(nd.b).data(), nb.d0);
          gx.noalias() += A.transpose() * G;
        }
      } else {
        MapConstVec x(val_span(nd.a).data(), na.d0);
        MapConstMat B(val_span(nd.b).data(), nb.d0, nb.d1);
        MapConstVec G(g.data(), nb.d1);
        if (na.needs_grad) {
          MapVec gx(grad_span(nd.a).data(), na.d0);
          gx.noalias() += B * G;
        }
        if (nb.needs_grad) {
          MapMat gB(grad_span(nd.b).data(), nb.d0, nb.d1);
          gB.noalias() += x * G.transpose();
        }
      }
      return;
    }
    case Op::kAdd: {
      for (int side = 0; side < 2; ++side) {
        int in = side == 0 ? nd.a : nd.b;
        if (!node(in).needs_grad) continue;
        auto gi = grad_span(in);
        for (int i = 0; i < nd.n; ++i) gi[i] += g[i];
      }
      return;
    }
    case Op::kMul: {
      auto va = val_span(nd.a), vb = val_span(nd.b);
      if (node(nd.a).needs_grad) {
        auto ga = grad_span(nd.a);
        for (int i = 0; i < nd.n; ++i) ga[i] += g[i] * vb[i];
      }
      if (node(nd.b).needs_grad) {
        auto gb = grad_span(nd.b);
        for (int i = 0; i < nd.n; ++i) gb[i] += g[i] * va[i];
      }
      return;
    }
    case Op::kConcat: {
      int at = 0;
      for (int k = 0; k < nd.args_n; ++k) {
        int in = args_[static_cast<std::size_t>(nd.args_off + k)];
        int len = node(in).n;
        if (node(in).needs_grad) {
          auto gi = grad_span(in);
          for (int i = 0; i < len; ++i) gi[i] += g[at + i];
        }
        at += len;
      }
      return;
    }
    case Op::kTanh: {
      auto y = val_span(id);
      auto gi = grad_span(nd.a);
      for (int i = 0; i < nd.n; ++i) gi[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::kSigmoid: {
      auto y = val_span(id);
      auto gi = grad_span(nd.a);
      for (int i = 0; i < nd.n; ++i) gi[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::kSoftmax: {
      SliceIter it = axis_slices(nd, nd.iaux);
      auto y = val_span(id);
      auto gi = grad_span(nd.a);
      for (int s = 0; s < it.nslices; ++s) {
        int base = s * it.step;
        double dotgy = 0.0;
        for (int i = 0; i < it.len; ++i) {
          int k = base + i * it.stride;
          dotgy += g[k] * y[k];
        }
        for (int i = 0; i < it.len; ++i) {
          int k = base + i * it.stride;
          gi[k] += y[k] * (g[k] - dotgy);
        }
      }
      return;
    }
    case Op::kLogSoftmax: {
      SliceIter it = axis_slices(nd, nd.iaux);
      auto y = val_span(id);
      auto gi = grad_span(nd.a);
      for (int s = 0; s < it.nslices; ++s) {
        int base = s * it.step;
        double gsum = 0.0;
        for (int i = 0; i < it.len; ++i) gsum += g[base + i * it.stride];
        for (int i = 0; i < it.len; ++i) {
          int k = base + i * it.stride;
          gi[k] += g[k] - std::exp(y[k]) * gsum;
        }
      }
      return;
    }
    case Op::kMeanSquared: {
      auto pp = val_span(nd.a), pt = val_span(nd.b);
      int n = node(nd.a).n;
      double c = 2.0 * g[0] / n;
      if (node(nd.a).needs_grad) {
        auto ga = grad_span(nd.a);
        for (int i = 0; i < n; ++i) ga[i] += c * (pp[i] - pt[i]);
      }
      if (node(nd.b).needs_grad) {
        auto gb = grad_span(nd.b);
        for (int i = 0; i < n; ++i) gb[i] -= c * (pp[i] - pt[i]);
      }
      return;
    }
    case Op::kCrossEntropy: {
      auto in = val_span(nd.a);
      int n = node(nd.a).n;
      auto gi = grad_span(nd.a);
      double m = in[0];
      for (int i = 1; i < n; ++i) m = std::max(m, in[i]);
      double sum = 0.0;
      for (int i = 0; i < n; ++i) sum += std::exp(in[i] - m);
      double lse = m + std::log(sum);
      for (int i = 0; i < n; ++i) {
        double p = std::exp(in[i] - lse);
        gi[i] += g[0] * (p - (i == nd.iaux ? 1.0 : 0.0));
      }
      return;
    }
    case Op::kWeightedSum: {
      const Node nw = node(nd.a), nv = node(nd.b);
      MapConstVec w(val_span(nd.a).data(), nw.d0);
      MapConstMat V(val_span(nd.b).data(), nv.d0, nv.d1);
      MapConstVec G(g.data(), nv.d1);
      if (nw.needs_grad) {
        MapVec gw(grad_span(nd.a).data(), nw.d0);
        gw.noalias() += V * G;
      }
      if (nv.needs_grad) {
        MapMat gV(grad_span(nd.b).data(), nv.d0, nv.d1);
        gV.noalias() += w * G.transpose();
      }
      return;
    }
    case Op::kDot: {
      auto va = val_span(nd.a), vb = val_span(nd.b);
      int n = node(nd.a).n;
      if (node(nd.a).needs_grad) {
        auto ga = grad_span(nd.a);
        for (int i = 0; i < n; ++i) ga[i] += g[0] * vb[i];
      }
      if (node(nd.b).needs_grad) {
        auto gb = grad_span(nd.b);
        for (int i = 0; i < n; ++i) gb[i] += g[0] * va[i];
      }
      return;
    }
    case Op::kStack: {
      for (int r = 0; r < nd.args_n; ++r) {
        int in = args_[static_cast<std::size_t>(nd.args_off + r)];
        if (!node(in).needs_grad) continue;
        auto gi = grad_span(in);
        for (int i = 0; i < nd.d1; ++i) gi[i] += g[r * nd.d1 + i];
      }
      return;
    }
    case Op::kSelectRow: {
      auto gi = grad_span(nd.a);
      int cols = node(nd.a).d1;
      for (int i = 0; i < cols; ++i) gi[nd.iaux * cols + i] += g[i];
      return;
    }
    case Op::kSlice: {
      auto gi = grad_span(nd.a);
      for (int i = 0; i < nd.iaux2; ++i) gi[nd.iaux + i] += g[i];
      return;
    }
    case Op::kScale: {
      auto gi = grad_span(nd.a);
      for (int i = 0; i < nd.n; ++i) gi[i] += g[i] * nd.daux;
      return;
    }
  }
}

}  // namespace midout
