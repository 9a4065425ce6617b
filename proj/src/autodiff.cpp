#include "relmask/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace relmask {

namespace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapM = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const Mat<Scalar>>;

template <typename Scalar>
MapM<Scalar> mat(Scalar* p, Index r, Index c) { return MapM<Scalar>(p, r, c); }
template <typename Scalar>
CMapM<Scalar> mat(const Scalar* p, Index r, Index c) { return CMapM<Scalar>(p, r, c); }

[[noreturn]] void shape_fail(const std::string& op, const std::string& what,
                             std::initializer_list<Shape> shapes) {
  std::string msg = op + ": " + what + " (shapes";
  for (const Shape& s : shapes) msg += " " + shape_str(s);
  msg += ")";
  throw ShapeError(msg);
}

int norm_axis(int axis, int rank, const std::string& op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError(op + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return a;
}

Index prod(const Shape& s, std::size_t from, std::size_t to) {
  Index p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

// Broadcast plan: output shape plus per-operand strides aligned to it
// (0 on broadcast axes).
struct BroadcastPlan {
  Shape out;
  Shape stride_a;
  Shape stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const std::string& op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      shape_fail(op, "operands do not broadcast", {a, b});
    p.out[i] = std::max(pa[i], pb[i]);
  }
  const Shape sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  p.stride_a.resize(r);
  p.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const Index total = numel(p.out);
  if (r == 0) {
    f(Index{0}, Index{0}, Index{0});
    return;
  }
  const Index inner = p.out[r - 1];
  const Index ia_step = p.stride_a[r - 1], ib_step = p.stride_b[r - 1];
  Shape counter(r, 0);
  Index oa = 0, ob = 0;
  for (Index base = 0; base < total; base += inner) {
    for (Index j = 0; j < inner; ++j) f(base + j, oa + j * ia_step, ob + j * ib_step);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      ++counter[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (counter[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      counter[d] = 0;
    }
  }
}

enum class Binary { Add, Sub, Mul };

template <typename Scalar>
Var<Scalar> binary_op(const Var<Scalar>& a, const Var<Scalar>& b, Binary kind) {
  const char* name = kind == Binary::Add ? "add" : kind == Binary::Sub ? "sub" : "mul";
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  const int ia = a.id(), ib = b.id();

  if (av.shape() == bv.shape()) {
    Tensor<Scalar> out(av.shape());
    switch (kind) {
      case Binary::Add: out.array() = av.array() + bv.array(); break;
      case Binary::Sub: out.array() = av.array() - bv.array(); break;
      case Binary::Mul: out.array() = av.array() * bv.array(); break;
    }
    return a.tape().record(name, std::move(out), {a, b}, [ia, ib, kind](Tape<Scalar>& t, int self) {
      const auto g = t.upstream(self).array();
      if (t.requires_grad(ia)) {
        auto ga = t.grad_buffer(ia).array();
        if (kind == Binary::Mul) ga += g * t.value(ib).array();
        else ga += g;
      }
      if (t.requires_grad(ib)) {
        auto gb = t.grad_buffer(ib).array();
        if (kind == Binary::Mul) gb += g * t.value(ia).array();
        else if (kind == Binary::Sub) gb -= g;
        else gb += g;
      }
    });
  }

  BroadcastPlan plan = plan_broadcast(av.shape(), bv.shape(), name);
  Tensor<Scalar> out(plan.out);
  Scalar* o = out.ptr();
  const Scalar* pa = av.ptr();
  const Scalar* pb = bv.ptr();
  switch (kind) {
    case Binary::Add: for_each_broadcast(plan, [&](Index i, Index x, Index y) { o[i] = pa[x] + pb[y]; }); break;
    case Binary::Sub: for_each_broadcast(plan, [&](Index i, Index x, Index y) { o[i] = pa[x] - pb[y]; }); break;
    case Binary::Mul: for_each_broadcast(plan, [&](Index i, Index x, Index y) { o[i] = pa[x] * pb[y]; }); break;
  }
  return a.tape().record(name, std::move(out), {a, b},
                         [ia, ib, kind, plan = std::move(plan)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    if (t.requires_grad(ia)) {
      Scalar* ga = t.grad_buffer(ia).ptr();
      if (kind == Binary::Mul) {
        const Scalar* vb = t.value(ib).ptr();
        for_each_broadcast(plan, [&](Index i, Index x, Index y) { ga[x] += g[i] * vb[y]; });
      } else {
        for_each_broadcast(plan, [&](Index i, Index x, Index) { ga[x] += g[i]; });
      }
    }
    if (t.requires_grad(ib)) {
      Scalar* gb = t.grad_buffer(ib).ptr();
      if (kind == Binary::Mul) {
        const Scalar* va = t.value(ia).ptr();
        for_each_broadcast(plan, [&](Index i, Index x, Index y) { gb[y] += g[i] * va[x]; });
      } else if (kind == Binary::Sub) {
        for_each_broadcast(plan, [&](Index i, Index, Index y) { gb[y] -= g[i]; });
      } else {
        for_each_broadcast(plan, [&](Index i, Index, Index y) { gb[y] += g[i]; });
      }
    }
  });
}

// Column buffer for one image: rows (c, ki, kj), cols (oy, ox).
template <typename Scalar>
void im2col(const Scalar* img, Index C, Index H, Index W, Index K, int stride, int pad,
            Index Ho, Index Wo, Scalar* cols) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < K; ++ki)
      for (Index kj = 0; kj < K; ++kj) {
        Scalar* row = cols + ((c * K + ki) * K + kj) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          Scalar* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, Scalar(0));
            continue;
          }
          const Scalar* src = img + (c * H + iy) * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index C, Index H, Index W, Index K, int stride, int pad,
            Index Ho, Index Wo, Scalar* img) {
  for (Index c = 0; c < C; ++c)
    for (Index ki = 0; ki < K; ++ki)
      for (Index kj = 0; kj < K; ++kj) {
        const Scalar* row = cols + ((c * K + ki) * K + kj) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          Scalar* dst = img + (c * H + iy) * W;
          const Scalar* src = row + oy * Wo;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Tensor<Scalar> value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::variable(Tensor<Scalar> value) {
  Var<Scalar> v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id()].requires_grad = true;
  return v;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(std::string op, Tensor<Scalar> value,
                                 std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
  return record(std::move(op), std::move(value), std::vector<Var<Scalar>>(inputs), std::move(fn));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(std::string op, Tensor<Scalar> value,
                                 const std::vector<Var<Scalar>>& inputs, BackwardFn fn) {
  if (!value.all_finite())
    throw NumericalError(op + ": non-finite value in output of shape " +
                         shape_str(value.shape()));
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  for (const Var<Scalar>& in : inputs) {
    if (&in.tape() != this) throw TapeError(node.op + ": input recorded on another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Scalar>
Tensor<Scalar>& Tape<Scalar>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
  return n.grad;
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::grad(const Var<Scalar>& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor<Scalar>(n.value.shape());
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& loss) {
  if (&loss.tape() != this) throw TapeError("backward: loss belongs to another tape");
  if (loss.value().size() != 1)
    throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!requires_grad(loss.id()))
    throw TapeError("backward: loss is not connected to any variable");
  for (Node& n : nodes_) n.grad = Tensor<Scalar>();
  grad_buffer(loss.id()).fill(Scalar(1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) { return binary_op(a, b, Binary::Add); }
template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) { return binary_op(a, b, Binary::Sub); }
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) { return binary_op(a, b, Binary::Mul); }

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().max(Scalar(0));
  const int ix = x.id();
  return x.tape().record("relu", std::move(out), {x}, [ix](Tape<Scalar>& t, int self) {
    const auto y = t.value(self).array();
    t.grad_buffer(ix).array() += (y > Scalar(0)).select(t.upstream(self).array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().abs();
  const int ix = x.id();
  return x.tape().record("abs", std::move(out), {x}, [ix](Tape<Scalar>& t, int self) {
    const Scalar* xv = t.value(ix).ptr();
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    const Index n = t.value(ix).size();
    for (Index i = 0; i < n; ++i) gi[i] += xv[i] > 0 ? g[i] : (xv[i] < 0 ? -g[i] : Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() * factor;
  const int ix = x.id();
  return x.tape().record("scale", std::move(out), {x}, [ix, factor](Tape<Scalar>& t, int self) {
    t.grad_buffer(ix).array() += t.upstream(self).array() * factor;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar c) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() + c;
  const int ix = x.id();
  return x.tape().record("add_scalar", std::move(out), {x}, [ix](Tape<Scalar>& t, int self) {
    t.grad_buffer(ix).array() += t.upstream(self).array();
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_fail("matmul", "operands need rank >= 2", {as, bs});
  const Index n = as[as.size() - 2], k = as.back();
  const Index k2 = bs[bs.size() - 2], m = bs.back();
  if (k != k2) shape_fail("matmul", "inner dimensions differ", {as, bs});
  const int ia = a.id(), ib = b.id();

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(m);

  if (bs.size() == 2) {
    const Index rows = numel(as) / k;
    Tensor<Scalar> out(out_shape);
    mat(out.ptr(), rows, m).noalias() = mat(a.value().ptr(), rows, k) * mat(b.value().ptr(), k, m);
    return a.tape().record("matmul", std::move(out), {a, b}, [=](Tape<Scalar>& t, int self) {
      const auto g = mat(t.upstream(self).ptr(), rows, m);
      if (t.requires_grad(ia))
        mat(t.grad_buffer(ia).ptr(), rows, k).noalias() += g * mat(t.value(ib).ptr(), k, m).transpose();
      if (t.requires_grad(ib))
        mat(t.grad_buffer(ib).ptr(), k, m).noalias() += mat(t.value(ia).ptr(), rows, k).transpose() * g;
    });
  }

  if (!std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))
    shape_fail("matmul", "batch dimensions differ", {as, bs});
  const Index batch = numel(as) / (n * k);
  Tensor<Scalar> out(out_shape);
  for (Index i = 0; i < batch; ++i)
    mat(out.ptr() + i * n * m, n, m).noalias() =
        mat(a.value().ptr() + i * n * k, n, k) * mat(b.value().ptr() + i * k * m, k, m);
  return a.tape().record("matmul", std::move(out), {a, b}, [=](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    for (Index i = 0; i < batch; ++i) {
      const auto gi = mat(g + i * n * m, n, m);
      if (t.requires_grad(ia))
        mat(t.grad_buffer(ia).ptr() + i * n * k, n, k).noalias() +=
            gi * mat(t.value(ib).ptr() + i * k * m, k, m).transpose();
      if (t.requires_grad(ib))
        mat(t.grad_buffer(ib).ptr() + i * k * m, k, m).noalias() +=
            mat(t.value(ia).ptr() + i * n * k, n, k).transpose() * gi;
    }
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const Shape& bs = bias.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0] || bs.size() != 1 || bs[0] != ws[1])
    shape_fail("linear", "expected x[...,in], w[in,out], b[out]", {xs, ws, bs});
  const Index in = ws[0], outf = ws[1], rows = numel(xs) / in;
  Shape out_shape(xs.begin(), xs.end() - 1);
  out_shape.push_back(outf);
  Tensor<Scalar> out(out_shape);
  auto o = mat(out.ptr(), rows, outf);
  o.noalias() = mat(x.value().ptr(), rows, in) * mat(w.value().ptr(), in, outf);
  o.rowwise() += mat(bias.value().ptr(), 1, outf).row(0);
  const int ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record("linear", std::move(out), {x, w, bias}, [=](Tape<Scalar>& t, int self) {
    const auto g = mat(t.upstream(self).ptr(), rows, outf);
    if (t.requires_grad(ix))
      mat(t.grad_buffer(ix).ptr(), rows, in).noalias() += g * mat(t.value(iw).ptr(), in, outf).transpose();
    if (t.requires_grad(iw))
      mat(t.grad_buffer(iw).ptr(), in, outf).noalias() += mat(t.value(ix).ptr(), rows, in).transpose() * g;
    if (t.requires_grad(ib))
      mat(t.grad_buffer(ib).ptr(), 1, outf) += g.colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& bias,
                   int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
    shape_fail("conv2d", "expected x[N,C,H,W] and square w[O,C,K,K]", {xs, ws});
  if (stride < 1 || pad < 0) shape_fail("conv2d", "invalid stride/pad", {xs, ws});
  const bool has_bias = bias.valid();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != ws[0]))
    shape_fail("conv2d", "bias must be [O]", {xs, ws, bias.shape()});
  const Index N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], K = ws[2];
  const Index Ho = (H + 2 * pad - K) / stride + 1;
  const Index Wo = (W + 2 * pad - K) / stride + 1;
  if (Ho <= 0 || Wo <= 0) shape_fail("conv2d", "kernel larger than padded input", {xs, ws});
  const Index CKK = C * K * K, P = Ho * Wo;

  Tensor<Scalar> out(Shape{N, O, Ho, Wo});
  typename Tensor<Scalar>::Storage cols(static_cast<std::size_t>(CKK * P));
  const auto wm = mat(w.value().ptr(), O, CKK);
  for (Index n = 0; n < N; ++n) {
    im2col(x.value().ptr() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, cols.data());
    auto y = mat(out.ptr() + n * O * P, O, P);
    y.noalias() = wm * mat(cols.data(), CKK, P);
    if (has_bias) y.colwise() += mat(bias.value().ptr(), O, 1).col(0);
  }
  const int ix = x.id(), iw = w.id(), ib = has_bias ? bias.id() : -1;
  std::vector<Var<Scalar>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape().record("conv2d", std::move(out), inputs, [=](Tape<Scalar>& t, int self) {
    const bool gx = t.requires_grad(ix), gw = t.requires_grad(iw);
    const bool gb = ib >= 0 && t.requires_grad(ib);
    typename Tensor<Scalar>::Storage buf(static_cast<std::size_t>(CKK * P));
    const auto wmat = mat(t.value(iw).ptr(), O, CKK);
    for (Index n = 0; n < N; ++n) {
      const auto g = mat(t.upstream(self).ptr() + n * O * P, O, P);
      if (gw) {
        im2col(t.value(ix).ptr() + n * C * H * W, C, H, W, K, stride, pad, Ho, Wo, buf.data());
        mat(t.grad_buffer(iw).ptr(), O, CKK).noalias() += g * mat(buf.data(), CKK, P).transpose();
      }
      if (gb) mat(t.grad_buffer(ib).ptr(), O, 1) += g.rowwise().sum();
      if (gx) {
        mat(buf.data(), CKK, P).noalias() = wmat.transpose() * g;
        col2im(buf.data(), C, H, W, K, stride, pad, Ho, Wo, t.grad_buffer(ix).ptr() + n * C * H * W);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) shape_fail("upsample2x", "expected NCHW", {xs});
  const Index NC = xs[0] * xs[1], H = xs[2], W = xs[3];
  Tensor<Scalar> out(Shape{xs[0], xs[1], 2 * H, 2 * W});
  const Scalar* in = x.value().ptr();
  Scalar* o = out.ptr();
  for (Index p = 0; p < NC; ++p)
    for (Index y = 0; y < 2 * H; ++y)
      for (Index xx = 0; xx < 2 * W; ++xx)
        o[(p * 2 * H + y) * 2 * W + xx] = in[(p * H + y / 2) * W + xx / 2];
  const int ix = x.id();
  return x.tape().record("upsample2x", std::move(out), {x}, [=](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (Index p = 0; p < NC; ++p)
      for (Index y = 0; y < 2 * H; ++y)
        for (Index xx = 0; xx < 2 * W; ++xx)
          gi[(p * H + y / 2) * W + xx / 2] += g[(p * 2 * H + y) * 2 * W + xx];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int ax = norm_axis(axis, static_cast<int>(s0.size()), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<Index> extents;
  for (const Var<Scalar>& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_fail("concat", "rank mismatch", {s0, s});
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != ax && s[d] != s0[d]) shape_fail("concat", "extent mismatch off-axis", {s0, s});
    out_shape[ax] += s[ax];
    extents.push_back(s[ax]);
  }
  const Index outer = prod(s0, 0, ax), inner = prod(s0, ax + 1, s0.size());
  const Index row = out_shape[ax] * inner;
  Tensor<Scalar> out(out_shape);
  Index off = 0;
  std::vector<int> ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Index chunk = extents[i] * inner;
    const Scalar* src = parts[i].value().ptr();
    for (Index o = 0; o < outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.ptr() + o * row + off);
    off += chunk;
    ids.push_back(parts[i].id());
  }
  return parts[0].tape().record("concat", std::move(out), parts, [=](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Index offset = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Index chunk = extents[i] * inner;
      if (t.requires_grad(ids[i])) {
        Scalar* gi = t.grad_buffer(ids[i]).ptr();
        for (Index o = 0; o < outer; ++o)
          for (Index j = 0; j < chunk; ++j) gi[o * chunk + j] += g[o * row + offset + j];
      }
      offset += chunk;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int axis, Index start, Index length) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "slice");
  if (start < 0 || length <= 0 || start + length > xs[ax])
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside " + shape_str(xs));
  Shape out_shape = xs;
  out_shape[ax] = length;
  const Index outer = prod(xs, 0, ax), inner = prod(xs, ax + 1, xs.size());
  const Index row = xs[ax] * inner, chunk = length * inner, off = start * inner;
  Tensor<Scalar> out(out_shape);
  const Scalar* src = x.value().ptr();
  for (Index o = 0; o < outer; ++o)
    std::copy(src + o * row + off, src + o * row + off + chunk, out.ptr() + o * chunk);
  const int ix = x.id();
  return x.tape().record("slice", std::move(out), {x}, [=](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (Index o = 0; o < outer; ++o)
      for (Index j = 0; j < chunk; ++j) gi[o * row + off + j] += g[o * chunk + j];
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Index known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = x.value().size() / known;
  if (numel(shape) != x.value().size())
    shape_fail("reshape", "element count differs", {x.shape(), shape});
  const int ix = x.id();
  return x.tape().record("reshape", x.value().reshaped(shape), {x}, [ix](Tape<Scalar>& t, int self) {
    t.grad_buffer(ix).array() += t.upstream(self).array();
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x, const std::vector<int>& perm) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  if (perm.size() != r) shape_fail("transpose", "permutation rank mismatch", {xs});
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(r) || seen[p]) shape_fail("transpose", "invalid permutation", {xs});
    seen[p] = true;
  }
  const Shape in_strides = contiguous_strides(xs);
  Shape out_shape(r), src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = xs[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // Offsets into the source, in output order.
  const Index total = numel(xs);
  std::vector<Index> src(static_cast<std::size_t>(total));
  {
    Shape counter(r, 0);
    Index off = 0;
    for (Index i = 0; i < total; ++i) {
      src[i] = off;
      for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
        ++counter[d];
        off += src_stride[d];
        if (counter[d] < out_shape[d]) break;
        off -= src_stride[d] * out_shape[d];
        counter[d] = 0;
      }
    }
  }
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x.value().ptr();
  for (Index i = 0; i < total; ++i) out[i] = in[src[i]];
  const int ix = x.id();
  return x.tape().record("transpose", std::move(out), {x},
                         [ix, src = std::move(src)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < src.size(); ++i) gi[src[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      Scalar eps) {
  const Shape& xs = x.shape();
  if (xs.empty() || gamma.shape() != Shape{xs.back()} || beta.shape() != Shape{xs.back()})
    shape_fail("layernorm", "gamma/beta must match last axis", {xs, gamma.shape(), beta.shape()});
  const Index D = xs.back(), R = numel(xs) / D;
  Tensor<Scalar> xhat(xs);
  std::vector<Scalar> rstd(static_cast<std::size_t>(R));
  Tensor<Scalar> out(xs);
  const auto g = gamma.value().array();
  const auto b = beta.value().array();
  for (Index r = 0; r < R; ++r) {
    const auto row = mat(x.value().ptr() + r * D, 1, D).array();
    const Scalar mu = row.mean();
    const Scalar var = (row - mu).square().mean();
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    auto xh = mat(xhat.ptr() + r * D, 1, D).array();
    xh = (row - mu) * rs;
    mat(out.ptr() + r * D, 1, D).array() = xh * g.transpose() + b.transpose();
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record("layernorm", std::move(out), {x, gamma, beta},
                         [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<Scalar>& t, int self) {
    const Scalar* gout = t.upstream(self).ptr();
    const auto gam = t.value(ig).array();
    const bool gx = t.requires_grad(ix);
    for (Index r = 0; r < R; ++r) {
      const auto dy = mat(gout + r * D, 1, D).array();
      const auto xh = mat(xhat.ptr() + r * D, 1, D).array();
      if (t.requires_grad(ig)) mat(t.grad_buffer(ig).ptr(), 1, D).array() += dy * xh;
      if (t.requires_grad(ib)) mat(t.grad_buffer(ib).ptr(), 1, D).array() += dy;
      if (gx) {
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> dxh = dy * gam.transpose();
        const Scalar m1 = dxh.mean();
        const Scalar m2 = (dxh * xh).mean();
        mat(t.grad_buffer(ix).ptr() + r * D, 1, D).array() += rstd[r] * (dxh - m1 - xh * m2);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "softmax");
  const Index outer = prod(xs, 0, ax), n = xs[ax], inner = prod(xs, ax + 1, xs.size());
  Tensor<Scalar> out(xs);
  const Scalar* in = x.value().ptr();
  Scalar* o = out.ptr();
  for (Index a = 0; a < outer; ++a)
    for (Index c = 0; c < inner; ++c) {
      const Index base = a * n * inner + c;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      Scalar s = 0;
      for (Index i = 0; i < n; ++i) s += (o[base + i * inner] = std::exp(in[base + i * inner] - mx));
      for (Index i = 0; i < n; ++i) o[base + i * inner] /= s;
    }
  const int ix = x.id();
  return x.tape().record("softmax", std::move(out), {x}, [=](Tape<Scalar>& t, int self) {
    const Scalar* y = t.value(self).ptr();
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (Index a = 0; a < outer; ++a)
      for (Index c = 0; c < inner; ++c) {
        const Index base = a * n * inner + c;
        Scalar dot = 0;
        for (Index i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (Index i = 0; i < n; ++i) {
          const Index j = base + i * inner;
          gi[j] += y[j] * (g[j] - dot);
        }
      }
  });
}

template <typename Scalar>
Var<Scalar> log_softmax(const Var<Scalar>& x, int axis) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "log_softmax");
  const Index outer = prod(xs, 0, ax), n = xs[ax], inner = prod(xs, ax + 1, xs.size());
  Tensor<Scalar> out(xs);
  const Scalar* in = x.value().ptr();
  Scalar* o = out.ptr();
  for (Index a = 0; a < outer; ++a)
    for (Index c = 0; c < inner; ++c) {
      const Index base = a * n * inner + c;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      Scalar s = 0;
      for (Index i = 0; i < n; ++i) s += std::exp(in[base + i * inner] - mx);
      const Scalar lse = mx + std::log(s);
      for (Index i = 0; i < n; ++i) o[base + i * inner] = in[base + i * inner] - lse;
    }
  const int ix = x.id();
  return x.tape().record("log_softmax", std::move(out), {x}, [=](Tape<Scalar>& t, int self) {
    const Scalar* y = t.value(self).ptr();
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (Index a = 0; a < outer; ++a)
      for (Index c = 0; c < inner; ++c) {
        const Index base = a * n * inner + c;
        Scalar gs = 0;
        for (Index i = 0; i < n; ++i) gs += g[base + i * inner];
        for (Index i = 0; i < n; ++i) {
          const Index j = base + i * inner;
          gi[j] += g[j] - std::exp(y[j]) * gs;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename Scalar>
Var<Scalar> embedding(const Var<Scalar>& table, std::span<const Index> ids, Shape prefix) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) shape_fail("embedding", "table must be [V, D]", {ts});
  if (numel(prefix) != static_cast<Index>(ids.size()))
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill prefix " +
                     shape_str(prefix));
  const Index V = ts[0], D = ts[1];
  for (Index id : ids)
    if (id < 0 || id >= V)
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(V));
  Shape out_shape = prefix;
  out_shape.push_back(D);
  Tensor<Scalar> out(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().ptr() + ids[i] * D, D, out.ptr() + static_cast<Index>(i) * D);
  const int it = table.id();
  std::vector<Index> saved(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {table},
                             [it, D, saved = std::move(saved)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gt = t.grad_buffer(it).ptr();
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (Index d = 0; d < D; ++d) gt[saved[i] * D + d] += g[static_cast<Index>(i) * D + d];
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& x, std::span<const Index> indices) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || xs[0] != static_cast<Index>(indices.size()))
    throw ShapeError("gather_rows: expected x[B, N] with B = " + std::to_string(indices.size()) +
                     ", got " + shape_str(xs));
  const Index B = xs[0], N = xs[1];
  for (Index i : indices)
    if (i < 0 || i >= N) throw ShapeError("gather_rows: index " + std::to_string(i) + " outside [0, " + std::to_string(N) + ")");
  Tensor<Scalar> out(Shape{B});
  for (Index b = 0; b < B; ++b) out[b] = x.value()[b * N + indices[b]];
  const int ix = x.id();
  std::vector<Index> saved(indices.begin(), indices.end());
  return x.tape().record("gather_rows", std::move(out), {x},
                         [ix, N, saved = std::move(saved)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (std::size_t b = 0; b < saved.size(); ++b) gi[static_cast<Index>(b) * N + saved[b]] += g[b];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  const int ix = x.id();
  return x.tape().record("sum", Tensor<Scalar>::scalar(x.value().array().sum()), {x},
                         [ix](Tape<Scalar>& t, int self) {
    t.grad_buffer(ix).array() += t.upstream(self)[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const int ix = x.id();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.value().size());
  return x.tape().record("mean", Tensor<Scalar>::scalar(x.value().array().sum() * inv), {x},
                         [ix, inv](Tape<Scalar>& t, int self) {
    t.grad_buffer(ix).array() += t.upstream(self)[0] * inv;
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x, const std::vector<int>& axes) {
  const Shape& xs = x.shape();
  const std::size_t r = xs.size();
  std::vector<bool> reduce(r, false);
  for (int a : axes) reduce[norm_axis(a, static_cast<int>(r), "mean")] = true;
  Shape out_shape;
  Index count = 1;
  for (std::size_t d = 0; d < r; ++d) {
    if (reduce[d]) count *= xs[d];
    else out_shape.push_back(xs[d]);
  }
  // Stride of each input axis in the output (0 on reduced axes).
  Shape ostride(r, 0);
  {
    const Shape os = contiguous_strides(out_shape);
    std::size_t k = 0;
    for (std::size_t d = 0; d < r; ++d)
      if (!reduce[d]) ostride[d] = os[k++];
  }
  BroadcastPlan plan;
  plan.out = xs;
  plan.stride_a = ostride;
  plan.stride_b = Shape(r, 0);
  Tensor<Scalar> out(out_shape);
  const Scalar* in = x.value().ptr();
  Scalar* o = out.ptr();
  for_each_broadcast(plan, [&](Index i, Index oa, Index) { o[oa] += in[i]; });
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  out.array() *= inv;
  const int ix = x.id();
  return x.tape().record("mean_axes", std::move(out), {x},
                         [ix, inv, plan = std::move(plan)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for_each_broadcast(plan, [&](Index i, Index oa, Index) { gi[i] += g[oa] * inv; });
  });
}

template <typename Scalar>
Var<Scalar> max(const Var<Scalar>& x, int axis) {
  const Shape& xs = x.shape();
  const int ax = norm_axis(axis, static_cast<int>(xs.size()), "max");
  const Index outer = prod(xs, 0, ax), n = xs[ax], inner = prod(xs, ax + 1, xs.size());
  Shape out_shape = xs;
  out_shape.erase(out_shape.begin() + ax);
  Tensor<Scalar> out(out_shape);
  std::vector<Index> arg(static_cast<std::size_t>(outer * inner));
  const Scalar* in = x.value().ptr();
  for (Index a = 0; a < outer; ++a)
    for (Index c = 0; c < inner; ++c) {
      const Index base = a * n * inner + c;
      Index best = base;
      for (Index i = 1; i < n; ++i)
        if (in[base + i * inner] > in[best]) best = base + i * inner;
      out[a * inner + c] = in[best];
      arg[a * inner + c] = best;
    }
  const int ix = x.id();
  return x.tape().record("max", std::move(out), {x}, [ix, arg = std::move(arg)](Tape<Scalar>& t, int self) {
    const Scalar* g = t.upstream(self).ptr();
    Scalar* gi = t.grad_buffer(ix).ptr();
    for (std::size_t i = 0; i < arg.size(); ++i) gi[arg[i]] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Attention

template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  const std::size_t r = qs.size();
  if (r < 2 || ks.size() != r || vs.size() != r || qs.back() != ks.back() ||
      ks[r - 2] != vs[r - 2] || !std::equal(qs.begin(), qs.end() - 2, ks.begin()) ||
      !std::equal(qs.begin(), qs.end() - 2, vs.begin()))
    shape_fail("scaled_dot_attention", "expected q[...,T,d], k[...,S,d], v[...,S,dv]", {qs, ks, vs});
  const Index T = qs[r - 2], D = qs.back(), S = ks[r - 2], DV = vs.back();
  const Index batch = numel(qs) / (T * D);
  const Scalar sc = Scalar(1) / std::sqrt(static_cast<Scalar>(D));
  Shape out_shape(qs.begin(), qs.end() - 1);
  out_shape.push_back(DV);
  Tensor<Scalar> out(out_shape);
  Tensor<Scalar> probs(Shape{batch, T, S});
  for (Index b = 0; b < batch; ++b) {
    auto p = mat(probs.ptr() + b * T * S, T, S);
    p.noalias() = mat(q.value().ptr() + b * T * D, T, D) * mat(k.value().ptr() + b * S * D, S, D).transpose();
    p *= sc;
    for (Index i = 0; i < T; ++i) {
      auto row = p.row(i).array();
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
    }
    mat(out.ptr() + b * T * DV, T, DV).noalias() = p * mat(v.value().ptr() + b * S * DV, S, DV);
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record("scaled_dot_attention", std::move(out), {q, k, v},
                         [=, probs = std::move(probs)](Tape<Scalar>& t, int self) {
    const bool gq = t.requires_grad(iq), gk = t.requires_grad(ik), gv = t.requires_grad(iv);
    Mat<Scalar> dp(T, S);
    for (Index b = 0; b < batch; ++b) {
      const auto p = mat(probs.ptr() + b * T * S, T, S);
      const auto g = mat(t.upstream(self).ptr() + b * T * DV, T, DV);
      const auto vb = mat(t.value(iv).ptr() + b * S * DV, S, DV);
      if (gv) mat(t.grad_buffer(iv).ptr() + b * S * DV, S, DV).noalias() += p.transpose() * g;
      if (!gq && !gk) continue;
      dp.noalias() = g * vb.transpose();
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = (dp.array() * p.array()).rowwise().sum();
      dp = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * sc;
      if (gq)
        mat(t.grad_buffer(iq).ptr() + b * T * D, T, D).noalias() +=
            dp * mat(t.value(ik).ptr() + b * S * D, S, D);
      if (gk)
        mat(t.grad_buffer(ik).ptr() + b * S * D, S, D).noalias() +=
            dp.transpose() * mat(t.value(iq).ptr() + b * T * D, T, D);
    }
  });
}

// ---------------------------------------------------------------------------

#define RELMASK_INSTANTIATE(S)                                                              \
  template class Tape<S>;                                                                   \
  template Var<S> add(const Var<S>&, const Var<S>&);                                        \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                        \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                        \
  template Var<S> relu(const Var<S>&);                                                      \
  template Var<S> abs(const Var<S>&);                                                       \
  template Var<S> scale(const Var<S>&, S);                                                  \
  template Var<S> add_scalar(const Var<S>&, S);                                             \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                     \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                      \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);            \
  template Var<S> upsample2x(const Var<S>&);                                                \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                  \
  template Var<S> slice(const Var<S>&, int, Index, Index);                                  \
  template Var<S> reshape(const Var<S>&, Shape);                                            \
  template Var<S> transpose(const Var<S>&, const std::vector<int>&);                        \
  template Var<S> layernorm(const Var<S>&, const Var<S>&, const Var<S>&, S);                \
  template Var<S> softmax(const Var<S>&, int);                                              \
  template Var<S> log_softmax(const Var<S>&, int);                                          \
  template Var<S> embedding(const Var<S>&, std::span<const Index>, Shape);                  \
  template Var<S> gather_rows(const Var<S>&, std::span<const Index>);                       \
  template Var<S> sum(const Var<S>&);                                                       \
  template Var<S> mean(const Var<S>&);                                                      \
  template Var<S> mean(const Var<S>&, const std::vector<int>&);                             \
  template Var<S> max(const Var<S>&, int);                                                  \
  template Var<S> scaled_dot_attention(const Var<S>&, const Var<S>&, const Var<S>&);

RELMASK_INSTANTIATE(float)
RELMASK_INSTANTIATE(double)

#undef RELMASK_INSTANTIATE

}  // namespace relmask
