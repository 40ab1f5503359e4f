#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to an immutable value (gradient accumulation
// aside). Operations are free functions that take the Tape they record on;
// there is no global tape, so independent forward/backward passes can run on
// disjoint tapes sharing read-only parameter leaves.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lpegn/errors.hpp"

namespace lpegn::ad {

namespace detail {
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
};

inline std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::vector<int> shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), false);
  }

  static Tensor parameter(std::vector<int> shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), true);
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    const auto n = detail::shape_size(shape);
    return make(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                requires_grad);
  }

  static Tensor scalar(double v) { return constant({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  int dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  std::span<const double> data() const { return node_->data; }
  double operator[](std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }

  // Mutable access to leaf storage, for optimizer updates between tapes.
  std::span<double> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> grad() const { return node_->grad; }

  // Allocates (zeroed) on first use.
  std::vector<double>& grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  const void* id() const { return node_.get(); }

 private:
  static Tensor make(std::vector<int> shape, std::vector<double> data, bool rg) {
    if (detail::shape_size(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor: data length does not match shape");
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = rg;
    return t;
  }

  friend class Tape;
  friend Tensor make_op_output(std::vector<int> shape, std::vector<double> data, bool rg);
  std::shared_ptr<detail::TensorNode> node_;
};

// Hook for defining differentiable operations outside this header.
inline Tensor make_op_output(std::vector<int> shape, std::vector<double> data, bool rg) {
  Tensor t;
  t.node_ = std::make_shared<detail::TensorNode>();
  if (detail::shape_size(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor: data length does not match shape");
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  t.node_->requires_grad = rg;
  return t;
}

// Recorded forward pass. Records are appended in creation order, which is a
// topological order of the computation; backward walks them once, in reverse.
class Tape {
 public:
  struct Record {
    const char* name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;  // reads output grad, accumulates input grads
  };

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void record(const char* name, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward) {
    records_.push_back(Record{name, std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<Record>& records() const { return records_; }

  void reset() {
    records_.clear();
    consumed_ = false;
  }

  // Populates grads of every requires-grad leaf reachable from `loss`.
  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw UsageError("backward: loss must be a scalar tensor");
    if (consumed_)
      throw UsageError("backward: tape already consumed; reset it first");
    bool on_tape = false;
    for (const auto& r : records_)
      if (r.output.id() == loss.id()) on_tape = true;
    if (!on_tape)
      throw UsageError("backward: loss was not produced on this tape");
    loss.grad_buffer()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // nothing downstream used it
      it->backward();
    }
    consumed_ = true;
  }

 private:
  std::vector<Record> records_;
  bool recording_ = true;
  bool consumed_ = false;
};

namespace detail {

inline bool want_grad(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline bool want_grad(const Tape& tape, const std::vector<Tensor>& ins) {
  if (!tape.recording()) return false;
  for (const Tensor& t : ins)
    if (t.requires_grad()) return true;
  return false;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// ---------------------------------------------------------------------------
// einsum machinery for two operands: "ij,jk->ik".
// Every axis of both operands must be named exactly once per operand, and
// every label must appear in the output or in the other operand (no silent
// marginalization), which keeps gradients expressible as einsums again.

struct EinsumPlan {
  std::vector<int> out_shape;
  // loop tables: free loops iterate over output labels, contracted loops
  // over summed labels; strides may be zero where a label is absent.
  std::vector<int> free_dim, con_dim;
  std::vector<std::int64_t> free_sa, free_sb, con_sa, con_sb;
  // fast path
  bool gemm = false;
  bool a_trans = false, b_trans = false, out_swap = false;
  int gm = 0, gn = 0, gk = 0;
};

inline std::vector<std::int64_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

inline EinsumPlan parse_einsum(std::string_view spec, const std::vector<int>& ashape,
                               const std::vector<int>& bshape) {
  const auto comma = spec.find(',');
  const auto arrow = spec.find("->");
  if (comma == std::string_view::npos || arrow == std::string_view::npos || arrow < comma)
    throw ShapeError("contract: malformed spec '" + std::string(spec) + "'");
  const std::string_view la = spec.substr(0, comma);
  const std::string_view lb = spec.substr(comma + 1, arrow - comma - 1);
  const std::string_view lo = spec.substr(arrow + 2);

  if (la.size() != ashape.size() || lb.size() != bshape.size())
    throw ShapeError("contract: spec '" + std::string(spec) + "' does not match operand ranks " +
                     shape_str(ashape) + ", " + shape_str(bshape));

  auto index_of = [](std::string_view s, char c) {
    const auto p = s.find(c);
    return p == std::string_view::npos ? -1 : static_cast<int>(p);
  };
  auto check_distinct = [&](std::string_view s, const char* which) {
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j)
        if (s[i] == s[j])
          throw ShapeError(std::string("contract: repeated axis '") + s[i] + "' in " + which);
  };
  check_distinct(la, "first operand");
  check_distinct(lb, "second operand");
  check_distinct(lo, "output");

  // collect labels
  std::string labels(la);
  for (char c : lb)
    if (index_of(labels, c) < 0) labels += c;
  for (char c : lo)
    if (index_of(labels, c) < 0)
      throw ShapeError(std::string("contract: output axis '") + c + "' not found in inputs");

  const auto sa = row_major_strides(ashape);
  const auto sb = row_major_strides(bshape);

  EinsumPlan plan;
  std::vector<char> free_labels, con_labels;
  for (char c : lo) free_labels.push_back(c);
  for (char c : labels)
    if (index_of(lo, c) < 0) con_labels.push_back(c);

  auto dim_of = [&](char c) -> int {
    const int ia = index_of(la, c);
    const int ib = index_of(lb, c);
    if (ia >= 0 && ib >= 0) {
      const int da = ashape[static_cast<std::size_t>(ia)];
      const int db = bshape[static_cast<std::size_t>(ib)];
      if (da != db)
        throw ShapeError(std::string("contract: axis '") + c + "' has size " +
                         std::to_string(da) + " in first operand but " + std::to_string(db) +
                         " in second");
      return da;
    }
    if (ia >= 0) return ashape[static_cast<std::size_t>(ia)];
    if (ib >= 0) return bshape[static_cast<std::size_t>(ib)];
    throw ShapeError(std::string("contract: unknown axis '") + c + "'");
  };

  for (char c : con_labels) {
    if (index_of(la, c) >= 0 && index_of(lb, c) < 0)
      throw ShapeError(std::string("contract: axis '") + c +
                       "' of first operand appears in neither the output nor the second operand");
    if (index_of(lb, c) >= 0 && index_of(la, c) < 0)
      throw ShapeError(std::string("contract: axis '") + c +
                       "' of second operand appears in neither the output nor the first operand");
  }

  for (char c : free_labels) {
    plan.out_shape.push_back(dim_of(c));
    plan.free_dim.push_back(dim_of(c));
    const int ia = index_of(la, c), ib = index_of(lb, c);
    plan.free_sa.push_back(ia >= 0 ? sa[static_cast<std::size_t>(ia)] : 0);
    plan.free_sb.push_back(ib >= 0 ? sb[static_cast<std::size_t>(ib)] : 0);
  }
  for (char c : con_labels) {
    plan.con_dim.push_back(dim_of(c));
    const int ia = index_of(la, c), ib = index_of(lb, c);
    plan.con_sa.push_back(ia >= 0 ? sa[static_cast<std::size_t>(ia)] : 0);
    plan.con_sb.push_back(ib >= 0 ? sb[static_cast<std::size_t>(ib)] : 0);
  }

  // GEMM fast path: two rank-2 operands, rank-2 output, one contracted label,
  // no batch labels.
  if (la.size() == 2 && lb.size() == 2 && lo.size() == 2 && con_labels.size() == 1) {
    const char k = con_labels[0];
    const char fa = la[0] == k ? la[1] : la[0];
    const char fb = lb[0] == k ? lb[1] : lb[0];
    if (fa != fb && index_of(lb, fa) < 0 && index_of(la, fb) < 0) {
      plan.gemm = true;
      plan.a_trans = (la[0] == k);   // stored as (k, fa)
      plan.b_trans = (lb[1] == k);   // stored as (fb, k)
      plan.out_swap = (lo[0] == fb); // output stored as (fb, fa)
      plan.gm = dim_of(fa);
      plan.gn = dim_of(fb);
      plan.gk = dim_of(k);
    }
  }
  return plan;
}

using CMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MMat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// out (+)= einsum(a, b). `out` must be pre-sized (and pre-zeroed unless accumulating).
inline void einsum_run(const EinsumPlan& plan, std::span<const double> a,
                       std::span<const double> b, std::span<double> out, bool accumulate) {
  if (plan.gemm) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod(plan.gm, plan.gn);
    CMat am(a.data(), plan.a_trans ? plan.gk : plan.gm, plan.a_trans ? plan.gm : plan.gk);
    CMat bm(b.data(), plan.b_trans ? plan.gn : plan.gk, plan.b_trans ? plan.gk : plan.gn);
    if (!plan.a_trans && !plan.b_trans) prod.noalias() = am * bm;
    else if (plan.a_trans && !plan.b_trans) prod.noalias() = am.transpose() * bm;
    else if (!plan.a_trans && plan.b_trans) prod.noalias() = am * bm.transpose();
    else prod.noalias() = am.transpose() * bm.transpose();
    MMat om(out.data(), plan.out_swap ? plan.gn : plan.gm, plan.out_swap ? plan.gm : plan.gn);
    if (plan.out_swap) {
      if (accumulate) om += prod.transpose();
      else om = prod.transpose();
    } else {
      if (accumulate) om += prod;
      else om = prod;
    }
    return;
  }

  if (!accumulate) std::fill(out.begin(), out.end(), 0.0);
  const int nf = static_cast<int>(plan.free_dim.size());
  const int nc = static_cast<int>(plan.con_dim.size());
  std::vector<int> fi(static_cast<std::size_t>(nf), 0), ci(static_cast<std::size_t>(nc), 0);
  std::int64_t out_pos = 0;
  while (true) {
    std::int64_t a_base = 0, b_base = 0;
    for (int i = 0; i < nf; ++i) {
      a_base += fi[static_cast<std::size_t>(i)] * plan.free_sa[static_cast<std::size_t>(i)];
      b_base += fi[static_cast<std::size_t>(i)] * plan.free_sb[static_cast<std::size_t>(i)];
    }
    double acc = 0.0;
    std::fill(ci.begin(), ci.end(), 0);
    while (true) {
      std::int64_t ao = a_base, bo = b_base;
      for (int i = 0; i < nc; ++i) {
        ao += ci[static_cast<std::size_t>(i)] * plan.con_sa[static_cast<std::size_t>(i)];
        bo += ci[static_cast<std::size_t>(i)] * plan.con_sb[static_cast<std::size_t>(i)];
      }
      acc += a[static_cast<std::size_t>(ao)] * b[static_cast<std::size_t>(bo)];
      int axis = nc - 1;
      for (; axis >= 0; --axis) {
        if (++ci[static_cast<std::size_t>(axis)] < plan.con_dim[static_cast<std::size_t>(axis)]) break;
        ci[static_cast<std::size_t>(axis)] = 0;
      }
      if (axis < 0) break;
    }
    out[static_cast<std::size_t>(out_pos)] += acc;
    int axis = nf - 1;
    for (; axis >= 0; --axis) {
      if (++fi[static_cast<std::size_t>(axis)] < plan.free_dim[static_cast<std::size_t>(axis)]) break;
      fi[static_cast<std::size_t>(axis)] = 0;
    }
    if (axis < 0) break;
    out_pos = 0;
    for (int i = 0; i < nf; ++i)
      out_pos = out_pos * plan.free_dim[static_cast<std::size_t>(i)] + fi[static_cast<std::size_t>(i)];
  }
}

inline void split_spec(std::string_view spec, std::string& la, std::string& lb, std::string& lo) {
  const auto comma = spec.find(',');
  const auto arrow = spec.find("->");
  la = std::string(spec.substr(0, comma));
  lb = std::string(spec.substr(comma + 1, arrow - comma - 1));
  lo = std::string(spec.substr(arrow + 2));
}

}  // namespace detail

// -----------------------------------------------------------------------------
// operations

// Generalized two-operand contraction, e.g. contract(a, b, "ij,jk->ik").
inline Tensor contract(Tape& tape, const Tensor& a, const Tensor& b, std::string_view spec) {
  const auto plan = detail::parse_einsum(spec, a.shape(), b.shape());
  std::vector<double> out_data(static_cast<std::size_t>(detail::shape_size(plan.out_shape)), 0.0);
  detail::einsum_run(plan, a.data(), b.data(), out_data, false);

  const bool rg = detail::want_grad(tape, {&a, &b});
  Tensor out = make_op_output(plan.out_shape, std::move(out_data), rg);
  if (rg) {
    std::string la, lb, lo;
    detail::split_spec(spec, la, lb, lo);
    tape.record("contract", {a, b}, out, [a, b, out, la, lb, lo]() {
      const auto& g = out.grad_buffer();
      if (a.requires_grad()) {
        const auto ga = detail::parse_einsum(lo + "," + lb + "->" + la, out.shape(), b.shape());
        detail::einsum_run(ga, g, b.data(), a.grad_buffer(), true);
      }
      if (b.requires_grad()) {
        const auto gb = detail::parse_einsum(la + "," + lo + "->" + lb, a.shape(), out.shape());
        detail::einsum_run(gb, a.data(), g, b.grad_buffer(), true);
      }
    });
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + detail::shape_str(a.shape()) +
                     " vs " + detail::shape_str(b.shape()));
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out_data(a.data().begin(), a.data().end());
  for (std::int64_t i = 0; i < b.size(); ++i) out_data[static_cast<std::size_t>(i)] += b[i];
  const bool rg = detail::want_grad(tape, {&a, &b});
  Tensor out = make_op_output(a.shape(), std::move(out_data), rg);
  if (rg) {
    tape.record("add", {a, b}, out, [a, b, out]() {
      const auto& g = out.grad_buffer();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& tg = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out_data(static_cast<std::size_t>(a.size()));
  for (std::int64_t i = 0; i < a.size(); ++i)
    out_data[static_cast<std::size_t>(i)] = a[i] * b[i];
  const bool rg = detail::want_grad(tape, {&a, &b});
  Tensor out = make_op_output(a.shape(), std::move(out_data), rg);
  if (rg) {
    tape.record("mul", {a, b}, out, [a, b, out]() {
      const auto& g = out.grad_buffer();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

// Gradient at exactly zero is zero.
inline Tensor relu(Tape& tape, const Tensor& a) {
  std::vector<double> out_data(static_cast<std::size_t>(a.size()));
  for (std::int64_t i = 0; i < a.size(); ++i)
    out_data[static_cast<std::size_t>(i)] = a[i] > 0.0 ? a[i] : 0.0;
  const bool rg = detail::want_grad(tape, {&a});
  Tensor out = make_op_output(a.shape(), std::move(out_data), rg);
  if (rg) {
    tape.record("relu", {a}, out, [a, out]() {
      const auto& g = out.grad_buffer();
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.data()[i] > 0.0) ga[i] += g[i];
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
  std::vector<double> out_data(static_cast<std::size_t>(a.size()));
  for (std::int64_t i = 0; i < a.size(); ++i)
    out_data[static_cast<std::size_t>(i)] = a[i] * s;
  const bool rg = detail::want_grad(tape, {&a});
  Tensor out = make_op_output(a.shape(), std::move(out_data), rg);
  if (rg) {
    tape.record("scale", {a}, out, [a, out, s]() {
      const auto& g = out.grad_buffer();
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

enum class Reduce { sum, mean };

// Reduces over the given axes (removed from the shape); empty list = all axes.
inline Tensor reduce(Tape& tape, const Tensor& a, std::vector<int> axes, Reduce kind) {
  if (axes.empty()) {
    axes.resize(static_cast<std::size_t>(a.rank()));
    std::iota(axes.begin(), axes.end(), 0);
  }
  std::vector<bool> reduced(static_cast<std::size_t>(a.rank()), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= a.rank())
      throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for shape " +
                       detail::shape_str(a.shape()));
    reduced[static_cast<std::size_t>(ax)] = true;
  }
  std::vector<int> out_shape;
  std::int64_t count = 1;
  for (int i = 0; i < a.rank(); ++i) {
    if (reduced[static_cast<std::size_t>(i)]) count *= a.dim(i);
    else out_shape.push_back(a.dim(i));
  }
  const auto strides = detail::row_major_strides(a.shape());
  const std::int64_t out_n = detail::shape_size(out_shape);
  std::vector<double> out_data(static_cast<std::size_t>(out_n), 0.0);

  // map every input offset to its output offset once
  std::vector<std::int64_t> out_of(static_cast<std::size_t>(a.size()));
  for (std::int64_t flat = 0; flat < a.size(); ++flat) {
    std::int64_t rem = flat, o = 0;
    for (int i = 0; i < a.rank(); ++i) {
      const std::int64_t q = rem / strides[static_cast<std::size_t>(i)];
      rem %= strides[static_cast<std::size_t>(i)];
      if (!reduced[static_cast<std::size_t>(i)]) o = o * a.dim(i) + q;
    }
    out_of[static_cast<std::size_t>(flat)] = o;
  }
  for (std::int64_t i = 0; i < a.size(); ++i)
    out_data[static_cast<std::size_t>(out_of[static_cast<std::size_t>(i)])] += a[i];
  const double divisor = kind == Reduce::mean ? static_cast<double>(count) : 1.0;
  if (kind == Reduce::mean)
    for (auto& v : out_data) v /= divisor;

  const bool rg = detail::want_grad(tape, {&a});
  Tensor out = make_op_output(std::move(out_shape), std::move(out_data), rg);
  if (rg) {
    tape.record("reduce", {a}, out, [a, out, out_of, divisor]() {
      const auto& g = out.grad_buffer();
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += g[static_cast<std::size_t>(out_of[i])] / divisor;
    });
  }
  return out;
}

inline Tensor reduce_sum(Tape& tape, const Tensor& a, std::vector<int> axes = {}) {
  return reduce(tape, a, std::move(axes), Reduce::sum);
}
inline Tensor reduce_mean(Tape& tape, const Tensor& a, std::vector<int> axes = {}) {
  return reduce(tape, a, std::move(axes), Reduce::mean);
}

// Max-subtracted negative log-likelihood of `label` under softmax(logits).
inline Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, int label) {
  if (logits.rank() != 1 || logits.size() < 2)
    throw ShapeError("softmax_cross_entropy: logits must be a vector of >= 2 classes");
  const int classes = static_cast<int>(logits.size());
  if (label < 0 || label >= classes)
    throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(classes) + " classes");
  double max_logit = logits[0];
  for (int c = 1; c < classes; ++c) max_logit = std::max(max_logit, logits[c]);
  double sum_exp = 0.0;
  std::vector<double> probs(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    probs[static_cast<std::size_t>(c)] = std::exp(logits[c] - max_logit);
    sum_exp += probs[static_cast<std::size_t>(c)];
  }
  for (auto& p : probs) p /= sum_exp;
  const double loss = std::log(sum_exp) + max_logit - logits[label];

  const bool rg = detail::want_grad(tape, {&logits});
  Tensor out = make_op_output({}, {loss}, rg);
  if (rg) {
    tape.record("softmax_cross_entropy", {logits}, out, [logits, out, probs, label]() {
      const double g = out.grad_buffer()[0];
      auto& gl = logits.grad_buffer();
      for (std::size_t c = 0; c < probs.size(); ++c)
        gl[c] += g * (probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0));
    });
  }
  return out;
}

// out[r, :] = src[rows[r], :] for a [R x C] source.
inline Tensor gather_rows(Tape& tape, const Tensor& src, std::vector<int> rows) {
  if (src.rank() != 2) throw ShapeError("gather_rows: source must be rank 2");
  const int cols = src.dim(1);
  const int nrows = src.dim(0);
  std::vector<double> out_data(rows.size() * static_cast<std::size_t>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= nrows)
      throw ShapeError("gather_rows: row index out of range");
    std::copy_n(src.data().data() + static_cast<std::size_t>(rows[r]) * cols, cols,
                out_data.data() + r * static_cast<std::size_t>(cols));
  }
  const bool rg = detail::want_grad(tape, {&src});
  Tensor out = make_op_output({static_cast<int>(rows.size()), cols}, std::move(out_data), rg);
  if (rg) {
    tape.record("gather_rows", {src}, out, [src, out, rows = std::move(rows), cols]() {
      const auto& g = out.grad_buffer();
      auto& gs = src.grad_buffer();
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < cols; ++c)
          gs[static_cast<std::size_t>(rows[r]) * cols + static_cast<std::size_t>(c)] +=
              g[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    });
  }
  return out;
}

// Weighted scatter of rows from several [cells_i x C] inputs into one
// [out_rows x C] output. Terms are applied in order, so the per-cell
// summation order is fixed regardless of worker count.
struct AssembleTerm {
  int out_row;
  int input;  // index into the inputs vector
  int row;    // row within that input
  double coef;
};

inline Tensor assemble_rows(Tape& tape, const std::vector<Tensor>& inputs, int out_rows,
                            std::shared_ptr<const std::vector<AssembleTerm>> terms) {
  if (inputs.empty()) throw ShapeError("assemble_rows: no inputs");
  const int cols = inputs.front().dim(1);
  for (const auto& t : inputs)
    if (t.rank() != 2 || t.dim(1) != cols)
      throw ShapeError("assemble_rows: inputs must all be [rows x C] with equal C");
  std::vector<double> out_data(static_cast<std::size_t>(out_rows) * cols, 0.0);
  for (const auto& term : *terms) {
    const auto src = inputs[static_cast<std::size_t>(term.input)].data();
    for (int c = 0; c < cols; ++c)
      out_data[static_cast<std::size_t>(term.out_row) * cols + static_cast<std::size_t>(c)] +=
          term.coef * src[static_cast<std::size_t>(term.row) * cols + static_cast<std::size_t>(c)];
  }
  const bool rg = detail::want_grad(tape, inputs);
  Tensor out = make_op_output({out_rows, cols}, std::move(out_data), rg);
  if (rg) {
    tape.record("assemble_rows", inputs, out, [inputs, out, terms = std::move(terms), cols]() {
      const auto& g = out.grad_buffer();
      for (const auto& term : *terms) {
        const Tensor& in = inputs[static_cast<std::size_t>(term.input)];
        if (!in.requires_grad()) continue;
        auto& gi = in.grad_buffer();
        for (int c = 0; c < cols; ++c)
          gi[static_cast<std::size_t>(term.row) * cols + static_cast<std::size_t>(c)] +=
              term.coef *
              g[static_cast<std::size_t>(term.out_row) * cols + static_cast<std::size_t>(c)];
      }
    });
  }
  return out;
}

inline Tensor add_n(Tape& tape, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("add_n: no inputs");
  for (const auto& t : inputs) check_same_shape(inputs.front(), t, "add_n");
  std::vector<double> out_data(inputs.front().data().begin(), inputs.front().data().end());
  for (std::size_t i = 1; i < inputs.size(); ++i)
    for (std::int64_t j = 0; j < inputs[i].size(); ++j)
      out_data[static_cast<std::size_t>(j)] += inputs[i][j];
  const bool rg = detail::want_grad(tape, inputs);
  Tensor out = make_op_output(inputs.front().shape(), std::move(out_data), rg);
  if (rg) {
    tape.record("add_n", inputs, out, [inputs, out]() {
      const auto& g = out.grad_buffer();
      for (const auto& in : inputs) {
        if (!in.requires_grad()) continue;
        auto& gi = in.grad_buffer();
        for (std::size_t j = 0; j < g.size(); ++j) gi[j] += g[j];
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("concat_cols: operands must be rank 2 with equal row counts");
  const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<double> out_data(static_cast<std::size_t>(rows) * (ca + cb));
  for (int r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + static_cast<std::size_t>(r) * ca, ca,
                out_data.data() + static_cast<std::size_t>(r) * (ca + cb));
    std::copy_n(b.data().data() + static_cast<std::size_t>(r) * cb, cb,
                out_data.data() + static_cast<std::size_t>(r) * (ca + cb) + ca);
  }
  const bool rg = detail::want_grad(tape, {&a, &b});
  Tensor out = make_op_output({rows, ca + cb}, std::move(out_data), rg);
  if (rg) {
    tape.record("concat_cols", {a, b}, out, [a, b, out, rows, ca, cb]() {
      const auto& g = out.grad_buffer();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < ca; ++c)
            ga[static_cast<std::size_t>(r) * ca + static_cast<std::size_t>(c)] +=
                g[static_cast<std::size_t>(r) * (ca + cb) + static_cast<std::size_t>(c)];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cb; ++c)
            gb[static_cast<std::size_t>(r) * cb + static_cast<std::size_t>(c)] +=
                g[static_cast<std::size_t>(r) * (ca + cb) + static_cast<std::size_t>(ca + c)];
      }
    });
  }
  return out;
}

// out[i, :] = elementwise max over src rows listed in groups[i]. Ties route
// the gradient to the first (lowest listed) maximizing row.
inline Tensor rows_max(Tape& tape, const Tensor& src, const std::vector<std::vector<int>>& groups) {
  if (src.rank() != 2) throw ShapeError("rows_max: source must be rank 2");
  const int cols = src.dim(1);
  const int n = static_cast<int>(groups.size());
  std::vector<double> out_data(static_cast<std::size_t>(n) * cols, 0.0);
  std::vector<int> argmax(static_cast<std::size_t>(n) * cols, -1);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < cols; ++c) {
      double best = 0.0;
      int best_row = -1;
      for (int r : groups[static_cast<std::size_t>(i)]) {
        const double v = src[static_cast<std::int64_t>(r) * cols + c];
        if (best_row < 0 || v > best) {
          best = v;
          best_row = r;
        }
      }
      out_data[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(c)] =
          best_row < 0 ? 0.0 : best;
      argmax[static_cast<std::size_t>(i) * cols + static_cast<std::size_t>(c)] = best_row;
    }
  }
  const bool rg = detail::want_grad(tape, {&src});
  Tensor out = make_op_output({n, cols}, std::move(out_data), rg);
  if (rg) {
    tape.record("rows_max", {src}, out, [src, out, argmax = std::move(argmax), cols]() {
      const auto& g = out.grad_buffer();
      auto& gs = src.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const int r = argmax[i];
        if (r >= 0)
          gs[static_cast<std::size_t>(r) * cols + i % static_cast<std::size_t>(cols)] += g[i];
      }
    });
  }
  return out;
}

inline Tensor reshape(Tape& tape, const Tensor& a, std::vector<int> new_shape) {
  if (detail::shape_size(new_shape) != a.size())
    throw ShapeError("reshape: element count mismatch");
  std::vector<double> out_data(a.data().begin(), a.data().end());
  const bool rg = detail::want_grad(tape, {&a});
  Tensor out = make_op_output(std::move(new_shape), std::move(out_data), rg);
  if (rg) {
    tape.record("reshape", {a}, out, [a, out]() {
      const auto& g = out.grad_buffer();
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

}  // namespace lpegn::ad
