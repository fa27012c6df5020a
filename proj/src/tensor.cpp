#include "slicemap/tensor.hpp"

#include <Eigen/Core>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "slicemap/error.hpp"

namespace slicemap {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
using BackwardFn = std::function<void(std::span<const T>, std::span<Buffer<T>* const>)>;

template <typename T>
Tensor<T> record(Shape shape, Buffer<T> value, std::vector<NodePtr<T>> inputs, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
  if (any && g_grad_enabled) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

Shape strip_leading_ones(const Shape& s) {
  auto it = std::find_if(s.begin(), s.end(), [](std::size_t d) { return d != 1; });
  return Shape(it, s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (numel(small) == 1) return true;
  const Shape s = strip_leading_ones(small);
  if (s.size() > big.size()) return false;
  return std::equal(s.rbegin(), s.rend(), big.rbegin());
}

struct BroadcastPlan {
  bool a_is_big;
  std::size_t n;
  std::size_t inner;
  Shape shape;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return {true, numel(a), numel(a), a};
  if (is_suffix(b, a) && (numel(a) > numel(b) || (numel(a) == numel(b) && a.size() >= b.size()))) return {true, numel(a), numel(b), a};
  if (is_suffix(a, b)) return {false, numel(b), numel(a), b};
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// out = f(a, b); da/db give the partial derivatives given (a, b, out).
// Visits (i, ia, ib) for every output element without per-element division.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn fn) {
  if (p.inner == p.n) {
    for (std::size_t i = 0; i < p.n; ++i) fn(i, i, i);
  } else if (p.inner == 1) {
    for (std::size_t i = 0; i < p.n; ++i) p.a_is_big ? fn(i, i, 0) : fn(i, 0, i);
  } else {
    for (std::size_t o = 0; o < p.n; o += p.inner) {
      for (std::size_t k = 0; k < p.inner; ++k) p.a_is_big ? fn(o + k, o + k, k) : fn(o + k, k, o + k);
    }
  }
}

// out = f(a, b); da/db give the partial derivatives given (a, b, out).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  const BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), name);
  const T* av = a.node()->value.data();
  const T* bv = b.node()->value.data();
  Buffer<T> out(p.n);
  T* o = out.data();
  for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(av[ia], bv[ib]); });
  NodePtr<T> an = a.node(), bn = b.node();
  auto result = record<T>(p.shape, std::move(out), {an, bn}, {});
  if (!result.requires_grad()) return result;
  const Node<T>* self = result.id();
  result.node()->backward = [an, bn, p, self, da, db](std::span<const T> g, std::span<Buffer<T>* const> grads) {
    const T* av = an->value.data();
    const T* bv = bn->value.data();
    const T* ov = self->value.data();
    T* ga = grads[0] ? grads[0]->data() : nullptr;
    T* gb = grads[1] ? grads[1]->data() : nullptr;
    if (ga && gb) {
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += g[i] * da(av[ia], bv[ib], ov[i]);
        gb[ib] += g[i] * db(av[ia], bv[ib], ov[i]);
      });
    } else if (ga) {
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * da(av[ia], bv[ib], ov[i]); });
    } else if (gb) {
      for_each_broadcast(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * db(av[ia], bv[ib], ov[i]); });
    }
  };
  return result;
}

template <typename T, typename D>
Tensor<T> unary_finish(const Tensor<T>& x, Buffer<T> out, D d) {
  NodePtr<T> xn = x.node();
  auto result = record<T>(x.shape(), std::move(out), {xn}, {});
  if (!result.requires_grad()) return result;
  const Node<T>* self = result.id();
  result.node()->backward = [xn, self, d](std::span<const T> g, std::span<Buffer<T>* const> grads) {
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xn->value[i], self->value[i]);
  };
  return result;
}

// `f(in, out)` evaluates a fixed-size chunk with Eigen array expressions.
// Every element goes through the same packet code path via an aligned
// scratch buffer, so results never depend on the allocation's alignment.
template <typename T, typename F, typename D>
Tensor<T> unary_bulk(const Tensor<T>& x, F f, D d) {
  constexpr std::size_t kChunk = 64 / sizeof(T) * 2;
  using Chunk = Eigen::Array<T, kChunk, 1>;
  const auto& xv = x.node()->value;
  const std::size_t n = xv.size();
  Buffer<T> out(n);
  alignas(64) T in_buf[kChunk];
  alignas(64) T out_buf[kChunk];
  for (std::size_t i = 0; i < n; i += kChunk) {
    const std::size_t m = std::min(kChunk, n - i);
    std::copy_n(xv.data() + i, m, in_buf);
    std::fill(in_buf + m, in_buf + kChunk, xv[i]);
    f(Eigen::Map<const Chunk, Eigen::Aligned64>(in_buf), Eigen::Map<Chunk, Eigen::Aligned64>(out_buf));
    std::copy_n(out_buf, m, out.data() + i);
  }
  return unary_finish(x, std::move(out), d);
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D d) {
  const auto& xv = x.node()->value;
  Buffer<T> out(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), f);
  return unary_finish(x, std::move(out), d);
}


template <typename T>
T stable_softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox * stride + j - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t j) {
  const long pad = static_cast<long>(g.pad), jj = static_cast<long>(j), s = static_cast<long>(g.stride);
  const long first = pad > jj ? (pad - jj + s - 1) / s : 0;
  const long last = (static_cast<long>(g.w) - 1 + pad - jj) / s + 1;  // exclusive
  const long hi = std::min<long>(static_cast<long>(g.wo), std::max<long>(last, 0));
  return {static_cast<std::size_t>(std::min<long>(first, hi)), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((ch * g.kh + i) * g.kw + j) * cols;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (ch * g.h + static_cast<std::size_t>(iy)) * g.w + (lo * g.stride + j - g.pad);
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * g.stride];
          }
          std::fill(dst + hi, dst + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t cols = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((ch * g.kh + i) * g.kw + j) * cols;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = x + (ch * g.h + static_cast<std::size_t>(iy)) * g.w + (lo * g.stride + j - g.pad);
          const T* src = row + oy * g.wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * g.stride] += src[ox];
        }
      }
    }
  }
}

// (outer, axis extent, inner) view of a shape around `axis`.
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return adopt(std::move(shape), Buffer<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  return adopt(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::adopt(Shape shape, Buffer<T> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return adopt(shape(), node_->value, requires_grad);
}

template <typename T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::span<const Tensor<T>> params) {
  if (loss.size() != 1) throw ShapeError("grad: loss must be a scalar, got shape " + to_string(loss.shape()));

  // Post-order DFS over nodes that require gradients; the loss ends up last.
  std::vector<Node<T>*> order;
  std::unordered_map<const Node<T>*, std::size_t> index;
  if (loss.requires_grad()) {
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    std::unordered_set<const Node<T>*> seen{loss.node().get()};
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      index.emplace(node, order.size());
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<const Node<T>*> keep;
  for (const auto& p : params) {
    if (!index.contains(p.id())) throw Error("grad: unreachable parameter of shape " + to_string(p.shape()));
    keep.insert(p.id());
  }

  std::vector<Buffer<T>> grads(order.size());
  grads.back().assign(1, T(1));
  std::vector<Buffer<T>*> input_grads;
  for (std::size_t i = order.size(); i-- > 0;) {
    Node<T>* node = order[i];
    if (node->backward) {
      input_grads.clear();
      for (const auto& in : node->inputs) {
        if (!in->requires_grad) {
          input_grads.push_back(nullptr);
          continue;
        }
        auto& buf = grads[index.at(in.get())];
        if (buf.empty()) buf.assign(in->value.size(), T(0));
        input_grads.push_back(&buf);
      }
      node->backward(grads[i], input_grads);
    }
    if (!keep.contains(node)) Buffer<T>().swap(grads[i]);
  }

  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto& g = grads[index.at(p.id())];
    if (g.empty()) g.assign(p.size(), T(0));
    out.push_back(Tensor<T>::adopt(p.shape(), g));
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_bulk(x, [](auto in, auto out) { out = in.exp(); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_bulk(x, [](auto in, auto out) { out = in.log(); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_bulk(x, [](auto in, auto out) { out = in.tanh(); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(x, [](T v) { return stable_softplus(v); }, [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> lgamma(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return static_cast<T>(std::lgamma(static_cast<double>(v))); },
      [](T v, T) { return static_cast<T>(boost::math::digamma(static_cast<double>(v))); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  NodePtr<T> xn = x.node();
  return record<T>({}, {static_cast<T>(acc)}, {xn}, [](std::span<const T> g, std::span<Buffer<T>* const> grads) {
    for (auto& v : *grads[0]) v += g[0];
  });
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("row_sum: scalar input");
  const std::size_t rows = x.dim(0);
  const std::size_t inner = rows ? x.size() / rows : 0;
  Buffer<T> out(rows);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inner; ++i) acc += static_cast<double>(xv[r * inner + i]);
    out[r] = static_cast<T>(acc);
  }
  NodePtr<T> xn = x.node();
  return record<T>({rows}, std::move(out), {xn},
                   [rows, inner](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t i = 0; i < inner; ++i) gx[r * inner + i] += g[r];
                   });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const Eigen::Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  using CMap = Eigen::Map<const RowMatrix<T>>;
  using MMap = Eigen::Map<RowMatrix<T>>;
  Buffer<T> out(static_cast<std::size_t>(m * n));
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  NodePtr<T> an = a.node(), bn = b.node();
  return record<T>({static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, std::move(out), {an, bn},
                   [an, bn, m, k, n](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     CMap gm(g.data(), m, n);
                     if (grads[0]) MMap(grads[0]->data(), m, k).noalias() += gm * CMap(bn->value.data(), k, n).transpose();
                     if (grads[1]) MMap(grads[1]->data(), k, n).noalias() += CMap(an->value.data(), m, k).transpose() * gm;
                   });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  const bool batched = input.rank() == 4;
  if ((input.rank() != 3 && !batched) || kernels.rank() != 4) {
    throw ShapeError("conv2d: expected input [N,C,H,W] or [C,H,W] and kernels [F,C,kH,kW], got " +
                     to_string(input.shape()) + " and " + to_string(kernels.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t off = batched ? 1 : 0;
  ConvGeometry geo{};
  geo.n = batched ? input.dim(0) : 1;
  geo.c = input.dim(off);
  geo.h = input.dim(off + 1);
  geo.w = input.dim(off + 2);
  geo.f = kernels.dim(0);
  geo.kh = kernels.dim(2);
  geo.kw = kernels.dim(3);
  geo.stride = stride;
  geo.pad = padding;
  if (kernels.dim(1) != geo.c) {
    throw ShapeError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
                     std::to_string(geo.c));
  }
  if (geo.kh > geo.h + 2 * padding || geo.kw > geo.w + 2 * padding) {
    throw ShapeError("conv2d: kernel does not fit the padded input");
  }
  if (bias.defined() && (bias.size() != geo.f)) throw ShapeError("conv2d: bias must have one entry per filter");
  geo.ho = (geo.h + 2 * padding - geo.kh) / stride + 1;
  geo.wo = (geo.w + 2 * padding - geo.kw) / stride + 1;

  using CMap = Eigen::Map<const RowMatrix<T>>;
  using MMap = Eigen::Map<RowMatrix<T>>;
  const Eigen::Index F = geo.f, P = geo.patch(), Q = geo.out_pixels();
  const std::size_t in_stride = geo.c * geo.h * geo.w;
  Buffer<T> out(geo.n * geo.f * geo.out_pixels());
  Buffer<T> col(geo.patch() * geo.out_pixels());
  const CMap wm(kernels.data().data(), F, P);
  for (std::size_t b = 0; b < geo.n; ++b) {
    im2col(input.data().data() + b * in_stride, geo, col.data());
    MMap o(out.data() + b * F * Q, F, Q);
    o.noalias() = wm * CMap(col.data(), P, Q);
    if (bias.defined()) {
      for (Eigen::Index f = 0; f < F; ++f) o.row(f).array() += bias.data()[static_cast<std::size_t>(f)];
    }
  }

  Shape shape = batched ? Shape{geo.n, geo.f, geo.ho, geo.wo} : Shape{geo.f, geo.ho, geo.wo};
  NodePtr<T> xn = input.node(), kn = kernels.node();
  std::vector<NodePtr<T>> inputs{xn, kn};
  if (bias.defined()) inputs.push_back(bias.node());
  return record<T>(std::move(shape), std::move(out), std::move(inputs),
                   [xn, kn, geo, in_stride](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     const Eigen::Index F = geo.f, P = geo.patch(), Q = geo.out_pixels();
                     const CMap wm(kn->value.data(), F, P);
                     Buffer<T> col(static_cast<std::size_t>(P * Q));
                     for (std::size_t b = 0; b < geo.n; ++b) {
                       const CMap gb(g.data() + b * F * Q, F, Q);
                       if (grads[1]) {
                         im2col(xn->value.data() + b * in_stride, geo, col.data());
                         MMap(grads[1]->data(), F, P).noalias() += gb * CMap(col.data(), P, Q).transpose();
                       }
                       if (grads[0]) {
                         MMap(col.data(), P, Q).noalias() = wm.transpose() * gb;
                         col2im_add(col.data(), geo, grads[0]->data() + b * in_stride);
                       }
                       if (grads.size() > 2 && grads[2]) {
                         for (Eigen::Index f = 0; f < F; ++f) (*grads[2])[static_cast<std::size_t>(f)] += gb.row(f).sum();
                       }
                     }
                   });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  NodePtr<T> xn = x.node();
  return record<T>(std::move(shape), x.node()->value, {xn},
                   [](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != shape[i]) throw ShapeError("concat: shape mismatch " + to_string(s));
    }
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
  }
  const AxisSplit out_split = split_at(shape, axis);
  Buffer<T> out(numel(shape));
  std::vector<NodePtr<T>> inputs;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t chunk = extents[k] * out_split.inner;
    const auto src = parts[k].data();
    for (std::size_t o = 0; o < out_split.outer; ++o) {
      std::copy_n(src.begin() + o * chunk, chunk, out.begin() + o * out_split.extent * out_split.inner + offset);
    }
    offsets.push_back(offset);
    offset += chunk;
    inputs.push_back(parts[k].node());
  }
  return record<T>(std::move(shape), std::move(out), std::move(inputs),
                   [out_split, extents, offsets](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     for (std::size_t k = 0; k < grads.size(); ++k) {
                       if (!grads[k]) continue;
                       const std::size_t chunk = extents[k] * out_split.inner;
                       auto& gk = *grads[k];
                       for (std::size_t o = 0; o < out_split.outer; ++o) {
                         const T* src = g.data() + o * out_split.extent * out_split.inner + offsets[k];
                         for (std::size_t i = 0; i < chunk; ++i) gk[o * chunk + i] += src[i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + to_string(x.shape()));
  }
  const AxisSplit in = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * in.inner;
  Buffer<T> out(in.outer * chunk);
  const auto src = x.data();
  for (std::size_t o = 0; o < in.outer; ++o) {
    std::copy_n(src.begin() + (o * in.extent + begin) * in.inner, chunk, out.begin() + o * chunk);
  }
  NodePtr<T> xn = x.node();
  return record<T>(std::move(shape), std::move(out), {xn},
                   [in, begin, chunk](std::span<const T> g, std::span<Buffer<T>* const> grads) {
                     auto& gx = *grads[0];
                     for (std::size_t o = 0; o < in.outer; ++o) {
                       T* dst = gx.data() + (o * in.extent + begin) * in.inner;
                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[o * chunk + i];
                     }
                   });
}

#define SLICEMAP_INSTANTIATE(T)                                                                                 \
  template class Tensor<T>;                                                                                     \
  template std::vector<Tensor<T>> grad(const Tensor<T>&, std::span<const Tensor<T>>);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> exp(const Tensor<T>&);                                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                                     \
  template Tensor<T> tanh(const Tensor<T>&);                                                                    \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                 \
  template Tensor<T> softplus(const Tensor<T>&);                                                                \
  template Tensor<T> lgamma(const Tensor<T>&);                                                                  \
  template Tensor<T> sum(const Tensor<T>&);                                                                     \
  template Tensor<T> row_sum(const Tensor<T>&);                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                          \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                                           \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);

SLICEMAP_INSTANTIATE(float)
SLICEMAP_INSTANTIATE(double)

#undef SLICEMAP_INSTANTIATE

}  // namespace slicemap
