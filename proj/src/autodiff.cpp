#include "matadv/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>

namespace matadv::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) throw std::invalid_argument("operation on an unbound Var");
    if (tape && v->tape() != tape) throw std::invalid_argument("operands live on different tapes");
    tape = v->tape();
  }
  return *tape;
}

void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + to_string(a.shape()));
  }
}

Var finish(Tape& tape, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn,
           const char* op) {
  if (!value.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite output");
  std::vector<Var> in(inputs);
  return tape.record(std::move(value), in, std::move(fn));
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t a_rs, a_cs, b_rs, b_cs;  // strides, 0 on broadcast dims
  bool same;
};

Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError(std::string(op) + ": broadcasting needs rank-2 operands, got " +
                     to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  auto pick = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  };
  Broadcast bc{};
  bc.rows = pick(a.rows(), b.rows());
  bc.cols = pick(a.cols(), b.cols());
  bc.a_cs = a.cols() == 1 ? 0 : 1;
  bc.a_rs = a.rows() == 1 ? 0 : a.cols();
  bc.b_cs = b.cols() == 1 ? 0 : 1;
  bc.b_rs = b.rows() == 1 ? 0 : b.cols();
  bc.same = a.shape() == b.shape();
  return bc;
}

enum class BinOp { add, sub, mul };

Var binary(const Var& a, const Var& b, BinOp kind, const char* op) {
  Tape& tape = same_tape({&a, &b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = broadcast_shapes(av, bv, op);
  Tensor out({bc.rows, bc.cols});
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinOp::add: return x + y;
      case BinOp::sub: return x - y;
      default: return x * y;
    }
  };
  if (bc.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for (std::size_t r = 0; r < bc.rows; ++r)
      for (std::size_t c = 0; c < bc.cols; ++c)
        out(r, c) = apply(av[r * bc.a_rs + c * bc.a_cs], bv[r * bc.b_rs + c * bc.b_cs]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  Tape* tp = &tape;
  return finish(tape, std::move(out), {a, b},
                [tp, ia, ib, bc, kind](const Tensor& g, GradSink& sink) {
                  const Tensor& av = tp->value(ia);
                  const Tensor& bv = tp->value(ib);
                  if (sink.wants(ia)) {
                    Tensor& ga = sink.at(ia);
                    for (std::size_t r = 0; r < bc.rows; ++r)
                      for (std::size_t c = 0; c < bc.cols; ++c) {
                        const double gv = g[r * bc.cols + c];
                        const double d = kind == BinOp::mul ? gv * bv[r * bc.b_rs + c * bc.b_cs] : gv;
                        ga[r * bc.a_rs + c * bc.a_cs] += d;
                      }
                  }
                  if (sink.wants(ib)) {
                    Tensor& gb = sink.at(ib);
                    for (std::size_t r = 0; r < bc.rows; ++r)
                      for (std::size_t c = 0; c < bc.cols; ++c) {
                        const double gv = g[r * bc.cols + c];
                        double d = gv;
                        if (kind == BinOp::sub) d = -gv;
                        if (kind == BinOp::mul) d = gv * av[r * bc.a_rs + c * bc.a_cs];
                        gb[r * bc.b_rs + c * bc.b_cs] += d;
                      }
                  }
                },
                op);
}

// Elementwise unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv, const char* op) {
  Tape& tape = same_tape({&a});
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  Tape* tp = &tape;
  const std::size_t io = tape.size();  // id the output is about to receive
  return finish(tape, std::move(out), {a},
                [tp, ia, io, deriv](const Tensor& g, GradSink& sink) {
                  const Tensor& x = tp->value(ia);
                  const Tensor& y = tp->value(io);
                  Tensor& ga = sink.at(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                },
                op);
}

enum class Extreme { max, min };

Var extreme(const Var& a, std::size_t axis, Extreme which, const char* op) {
  Tape& tape = same_tape({&a});
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, op);
  if (s.extent == 0) throw ShapeError(std::string(op) + ": empty axis");
  Shape out_shape = av.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      double best_v = av[o * s.extent * s.inner + in];
      for (std::size_t l = 1; l < s.extent; ++l) {
        const double v = av[(o * s.extent + l) * s.inner + in];
        if (which == Extreme::max ? v > best_v : v < best_v) {
          best_v = v;
          best = l;
        }
      }
      out[o * s.inner + in] = best_v;
      arg[o * s.inner + in] = best;
    }
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia, s, arg = std::move(arg)](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t in = 0; in < s.inner; ++in) {
                      const std::size_t k = o * s.inner + in;
                      ga[(o * s.extent + arg[k]) * s.inner + in] += g[k];
                    }
                },
                op);
}

}  // namespace

// ---- tape --------------------------------------------------------------------

Tensor& GradSink::at(std::size_t id) {
  Tensor& g = grads_[id];
  if (g.empty() && !tape_.value(id).empty()) g = Tensor(tape_.value(id).shape());
  return g;
}

bool GradSink::wants(std::size_t id) const { return tape_.requires_grad(id); }

Tensor Gradients::of(const Var& v) const {
  if (v.tape() != tape_) throw std::invalid_argument("Gradients::of: Var from another tape");
  const Tensor& g = grads_[v.id()];
  if (g.empty()) return Tensor(v.value().shape());
  return g;
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("leaf: non-finite value");
  nodes_.push_back({std::move(value), true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("constant: non-finite value");
  nodes_.push_back({std::move(value), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::invalid_argument("record: input from another tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + to_string(loss.shape()));
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id()].requires_grad) return out;

  out.grads_[loss.id()] = Tensor(loss.shape(), 1.0);
  GradSink sink(*this, out.grads_);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.backward || out.grads_[id].empty()) continue;
    node.backward(out.grads_[id], sink);
  }
  // interior adjoints are only needed during the sweep
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].backward) out.grads_[id] = Tensor();
  }
  return out;
}

// ---- primitives ----------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape({&a, &b});
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  Tape* tp = &tape;
  return finish(tape, std::move(out), {a, b},
                [tp, ia, ib](const Tensor& g, GradSink& sink) {
                  if (sink.wants(ia)) {
                    as_matrix(sink.at(ia)).noalias() +=
                        as_matrix(g) * as_matrix(tp->value(ib)).transpose();
                  }
                  if (sink.wants(ib)) {
                    as_matrix(sink.at(ib)).noalias() +=
                        as_matrix(tp->value(ia)).transpose() * as_matrix(g);
                  }
                },
                "matmul");
}

namespace {

// Adjoints behind a max pool are mostly zero; below 1/8 density, accumulating
// only the nonzero entries beats the dense products.
constexpr std::size_t kSparseAdjointRatio = 8;

void affine_backward_sparse(const Tape& tape, const Tensor& g, std::size_t ix, std::size_t iw,
                            std::size_t ib, GradSink& sink) {
  const Tensor& x = tape.value(ix);
  const Tensor& w = tape.value(iw);
  const std::size_t rows = g.rows(), in = w.rows(), out = w.cols();
  const bool want_x = sink.wants(ix), want_w = sink.wants(iw), want_b = sink.wants(ib);
  const RowMat wt = as_matrix(w).transpose();
  RowMat gwt = RowMat::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  double* gx = want_x ? sink.at(ix).data().data() : nullptr;
  double* gb = want_b ? sink.at(ib).data().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = g.data().data() + r * out;
    const double* xr = x.data().data() + r * in;
    for (std::size_t c = 0; c < out; ++c) {
      const double v = gr[c];
      if (v == 0.0) continue;
      if (want_x) {
        const double* wc = wt.data() + c * in;
        double* gxr = gx + r * in;
        for (std::size_t j = 0; j < in; ++j) gxr[j] += v * wc[j];
      }
      if (want_w) {
        double* gwc = gwt.data() + c * in;
        for (std::size_t j = 0; j < in; ++j) gwc[j] += v * xr[j];
      }
      if (want_b) gb[c] += v;
    }
  }
  if (want_w) as_matrix(sink.at(iw)) += gwt.transpose();
}

Var affine_impl(const Var& x, const Var& w, const Var& b, bool rectify, const char* op) {
  Tape& tape = same_tape({&x, &w, &b});
  require_rank2(x, op);
  require_rank2(w, op);
  require_rank2(b, op);
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError(std::string(op) + ": " + to_string(x.shape()) + " x " +
                     to_string(w.shape()) + " + " + to_string(b.shape()));
  }
  Tensor out({x.rows(), w.cols()});
  auto o = as_matrix(out);
  o.rowwise() = as_matrix(b.value()).row(0);
  o.noalias() += as_matrix(x.value()) * as_matrix(w.value());
  if (rectify) o = o.cwiseMax(0.0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const std::size_t io = tape.size();
  Tape* tp = &tape;
  return finish(tape, std::move(out), {x, w, b},
                [tp, ix, iw, ib, io, rectify](Tensor& g, GradSink& sink) {
                  double* gp = g.data().data();
                  std::size_t nonzero = 0;
                  if (rectify) {
                    const double* yp = tp->value(io).data().data();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      gp[i] = yp[i] > 0.0 ? gp[i] : 0.0;
                      nonzero += gp[i] != 0.0;
                    }
                  } else {
                    for (std::size_t i = 0; i < g.size(); ++i) nonzero += gp[i] != 0.0;
                  }
                  if (nonzero * kSparseAdjointRatio < g.size()) {
                    affine_backward_sparse(*tp, g, ix, iw, ib, sink);
                    return;
                  }
                  const auto gm = as_matrix(std::as_const(g));
                  if (sink.wants(ix)) {
                    as_matrix(sink.at(ix)).noalias() += gm * as_matrix(tp->value(iw)).transpose();
                  }
                  if (sink.wants(iw)) {
                    as_matrix(sink.at(iw)).noalias() += as_matrix(tp->value(ix)).transpose() * gm;
                  }
                  if (sink.wants(ib)) {
                    auto gb = as_matrix(sink.at(ib));
                    for (Eigen::Index r = 0; r < gm.rows(); ++r) gb.row(0) += gm.row(r);
                  }
                },
                op);
}

}  // namespace

Var affine(const Var& x, const Var& w, const Var& b) {
  return affine_impl(x, w, b, false, "affine");
}

Var affine_relu(const Var& x, const Var& w, const Var& b) {
  return affine_impl(x, w, b, true, "affine_relu");
}

Var transpose(const Var& a) {
  Tape& tape = same_tape({&a});
  require_rank2(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  as_matrix(out) = as_matrix(a.value()).transpose();
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia](const Tensor& g, GradSink& sink) {
                  as_matrix(sink.at(ia)) += as_matrix(g).transpose();
                },
                "transpose");
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::mul, "mul"); }

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; }, "scale");
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; },
               "add_scalar");
}

Var neg(const Var& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; }, "neg");
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double, double y) { return y > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; },
               "square");
}

Var sqrt(const Var& a) {
  for (double v : a.value().data())
    if (v < 0.0) throw NonFiniteError("sqrt: negative input");
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; }, "sqrt");
}

Var sum(const Var& a, std::size_t axis) {
  Tape& tape = same_tape({&a});
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "sum");
  Shape out_shape = av.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.extent; ++l)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += av[(o * s.extent + l) * s.inner + in];
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia, s](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t l = 0; l < s.extent; ++l)
                      for (std::size_t in = 0; in < s.inner; ++in)
                        ga[(o * s.extent + l) * s.inner + in] += g[o * s.inner + in];
                },
                "sum");
}

Var mean(const Var& a, std::size_t axis) {
  const std::size_t extent = split_axis(a.shape(), axis, "mean").extent;
  if (extent == 0) throw ShapeError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(extent));
}

Var sum_all(const Var& a) {
  Tape& tape = same_tape({&a});
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return finish(tape, Tensor::scalar(total), {a},
                [ia](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  const double gv = g[0];
                  for (double& x : ga.data()) x += gv;
                },
                "sum_all");
}

Var mean_all(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var max(const Var& a, std::size_t axis) { return extreme(a, axis, Extreme::max, "max"); }
Var min(const Var& a, std::size_t axis) { return extreme(a, axis, Extreme::min, "min"); }

Var segment_max(const Var& a, std::size_t group) {
  Tape& tape = same_tape({&a});
  require_rank2(a, "segment_max");
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("segment_max: " + std::to_string(a.rows()) + " rows not divisible by " +
                     std::to_string(group));
  }
  const std::size_t n = a.rows() / group, cols = a.cols();
  const Tensor& av = a.value();
  Tensor out({n, cols});
  // Argmax only when a gradient will need it; 64-bit lanes match the doubles
  // so the select loop vectorizes.
  const bool track = tape.requires_grad(a.id());
  std::vector<std::uint64_t> arg(track ? n * cols : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* base = av.data().data() + i * group * cols;
    double* o = out.data().data() + i * cols;
    std::copy_n(base, cols, o);
    if (!track) {
      for (std::size_t l = 1; l < group; ++l) {
        const double* row = base + l * cols;
        for (std::size_t c = 0; c < cols; ++c) o[c] = std::max(o[c], row[c]);
      }
      continue;
    }
    std::uint64_t* w = arg.data() + i * cols;
    for (std::size_t l = 1; l < group; ++l) {
      const double* row = base + l * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        const bool greater = row[c] > o[c];
        o[c] = greater ? row[c] : o[c];
        w[c] = greater ? l : w[c];
      }
    }
  }
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia, n, group, cols, arg = std::move(arg)](const Tensor& g, GradSink& sink) {
                  double* ga = sink.at(ia).data().data();
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t k = i * cols + c;
                      ga[(i * group + arg[k]) * cols + c] += g[k];
                    }
                },
                "segment_max");
}

Var segment_sum(const Var& a, std::size_t group) {
  Tape& tape = same_tape({&a});
  require_rank2(a, "segment_sum");
  if (group == 0 || a.rows() % group != 0) {
    throw ShapeError("segment_sum: " + std::to_string(a.rows()) + " rows not divisible by " +
                     std::to_string(group));
  }
  const std::size_t n = a.rows() / group, cols = a.cols();
  const Tensor& av = a.value();
  Tensor out({n, cols});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < group; ++l)
      for (std::size_t c = 0; c < cols; ++c) out(i, c) += av((i * group + l), c);
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia, group, n, cols](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t l = 0; l < group; ++l)
                      for (std::size_t c = 0; c < cols; ++c) ga(i * group + l, c) += g(i, c);
                },
                "segment_sum");
}

Var softmax(const Var& a, std::size_t axis) {
  Tape& tape = same_tape({&a});
  const Tensor& av = a.value();
  const AxisSplit s = split_axis(av.shape(), axis, "softmax");
  Tensor out(av.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      auto at = [&](std::size_t l) { return (o * s.extent + l) * s.inner + in; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.extent; ++l) m = std::max(m, av[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.extent; ++l) {
        out[at(l)] = std::exp(av[at(l)] - m);
        z += out[at(l)];
      }
      for (std::size_t l = 0; l < s.extent; ++l) out[at(l)] /= z;
    }
  const std::size_t ia = a.id();
  const std::size_t io = tape.size();
  Tape* tp = &tape;
  return finish(tape, std::move(out), {a},
                [tp, ia, io, s](const Tensor& g, GradSink& sink) {
                  const Tensor& y = tp->value(io);
                  Tensor& ga = sink.at(ia);
                  for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t in = 0; in < s.inner; ++in) {
                      auto at = [&](std::size_t l) { return (o * s.extent + l) * s.inner + in; };
                      double dot = 0.0;
                      for (std::size_t l = 0; l < s.extent; ++l) dot += g[at(l)] * y[at(l)];
                      for (std::size_t l = 0; l < s.extent; ++l)
                        ga[at(l)] += y[at(l)] * (g[at(l)] - dot);
                    }
                },
                "softmax");
}

Var column_softmax(const Var& a) {
  require_rank2(a, "column_softmax");
  return softmax(a, 0);
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  Tape& tape = same_tape({&logits});
  require_rank2(logits, "softmax_cross_entropy");
  const Tensor& z = logits.value();
  const std::size_t rows = z.rows(), classes = z.cols();
  if (labels.size() != rows) throw ShapeError("softmax_cross_entropy: label count mismatch");
  Tensor probs({rows, classes});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) m = std::max(m, z(r, c));
    double sum_exp = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs(r, c) = std::exp(z(r, c) - m);
      sum_exp += probs(r, c);
    }
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= sum_exp;
    loss += (m + std::log(sum_exp)) - z(r, static_cast<std::size_t>(y));
  }
  loss /= static_cast<double>(rows);
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return finish(tape, Tensor::scalar(loss), {logits},
                [il, probs = std::move(probs), ys = std::move(ys)](const Tensor& g, GradSink& sink) {
                  Tensor& gl = sink.at(il);
                  const double w = g[0] / static_cast<double>(probs.rows());
                  for (std::size_t r = 0; r < probs.rows(); ++r)
                    for (std::size_t c = 0; c < probs.cols(); ++c) {
                      const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
                      gl(r, c) += w * (probs(r, c) - onehot);
                    }
                },
                "softmax_cross_entropy");
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = same_tape({&a, &b});
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out(r, c) = a.value()(r, c);
    for (std::size_t c = 0; c < cb; ++c) out(r, ca + c) = b.value()(r, c);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), {a, b},
                [ia, ib, rows, ca, cb](const Tensor& g, GradSink& sink) {
                  if (sink.wants(ia)) {
                    Tensor& ga = sink.at(ia);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < ca; ++c) ga(r, c) += g(r, c);
                  }
                  if (sink.wants(ib)) {
                    Tensor& gb = sink.at(ib);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cb; ++c) gb(r, c) += g(r, ca + c);
                  }
                },
                "concat_cols");
}

Var gather_rows(const Var& a, std::span<const std::size_t> indices) {
  Tape& tape = same_tape({&a});
  require_rank2(a, "gather_rows");
  const std::size_t cols = a.cols();
  Tensor out({indices.size(), cols});
  const Tensor& av = a.value();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= av.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(tape, std::move(out), {a},
                [ia, cols, idx = std::move(idx)](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t c = 0; c < cols; ++c) ga(idx[r], c) += g(r, c);
                },
                "gather_rows");
}

Var reshape(const Var& a, Shape shape) {
  Tape& tape = same_tape({&a});
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                },
                "reshape");
}

Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; }, "clamp");
}

Var clamp(const Var& a, const Tensor& lo, const Tensor& hi) {
  Tape& tape = same_tape({&a});
  const Tensor& av = a.value();
  if (lo.shape() != av.shape() || hi.shape() != av.shape()) {
    throw ShapeError("clamp: bound shape mismatch with " + to_string(av.shape()));
  }
  Tensor out(av.shape());
  std::vector<char> pass(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (lo[i] > hi[i]) throw std::invalid_argument("clamp: lo > hi");
    out[i] = std::clamp(av[i], lo[i], hi[i]);
    pass[i] = av[i] > lo[i] && av[i] < hi[i];
  }
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), {a},
                [ia, pass = std::move(pass)](const Tensor& g, GradSink& sink) {
                  Tensor& ga = sink.at(ia);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (pass[i]) ga[i] += g[i];
                },
                "clamp");
}

Var pairwise_sqdist(const Var& a, const Var& b) {
  Tape& tape = same_tape({&a, &b});
  require_rank2(a, "pairwise_sqdist");
  require_rank2(b, "pairwise_sqdist");
  if (a.cols() != b.cols()) throw ShapeError("pairwise_sqdist: dimension mismatch");
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({n, m});
  // direct differences keep coincident points at exactly zero
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = av(i, c) - bv(j, c);
        acc += diff * diff;
      }
      out(i, j) = acc;
    }
  const std::size_t ia = a.id(), ib = b.id();
  Tape* tp = &tape;
  return finish(tape, std::move(out), {a, b},
                [tp, ia, ib, n, m, d](const Tensor& g, GradSink& sink) {
                  const Tensor& av = tp->value(ia);
                  const Tensor& bv = tp->value(ib);
                  const bool wa = sink.wants(ia), wb = sink.wants(ib);
                  Tensor* ga = wa ? &sink.at(ia) : nullptr;
                  Tensor* gb = wb ? &sink.at(ib) : nullptr;
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                      const double w = 2.0 * g(i, j);
                      if (w == 0.0) continue;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double diff = w * (av(i, c) - bv(j, c));
                        if (wa) (*ga)(i, c) += diff;
                        if (wb) (*gb)(j, c) -= diff;
                      }
                    }
                },
                "pairwise_sqdist");
}

}  // namespace matadv::ad
