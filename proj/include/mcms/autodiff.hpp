#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Tape owns an ordered node list. Every differentiable op appends one node
// after its inputs, so the list is topologically sorted by construction and
// backward() is a single reverse sweep. A tape built with record = false
// keeps nothing: ops still compute values, which is how the value-level API
// and inference reuse the same code.

#include "mcms/kernels.hpp"
#include "mcms/tensor.hpp"

#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mcms {

template <class T> class Tape;

template <class T> class Var {
public:
  Var() = default;

  const Tensor<T> &value() const { return *value_; }
  const std::shared_ptr<const Tensor<T>> &shared() const { return value_; }
  const Shape &shape() const { return value_->shape(); }
  bool requires_grad() const { return id_ >= 0; }
  int id() const { return id_; }
  Tape<T> *tape() const { return tape_; }

private:
  friend class Tape<T>;
  Var(std::shared_ptr<const Tensor<T>> v, Tape<T> *tape, int id)
      : value_(std::move(v)), tape_(tape), id_(id) {}

  std::shared_ptr<const Tensor<T>> value_;
  Tape<T> *tape_ = nullptr;
  int id_ = -1;
};

template <class T> class Tape {
public:
  using BackwardFn = std::function<void(const Tensor<T> &gout, Tape &tape)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Differentiable leaf (a parameter or an input under test).
  Var<T> leaf(Tensor<T> value) {
    auto v = std::make_shared<const Tensor<T>>(std::move(value));
    if (!record_)
      return Var<T>(std::move(v), this, -1);
    nodes_.push_back({v->shape(), nullptr});
    return Var<T>(std::move(v), this, static_cast<int>(nodes_.size() - 1));
  }

  static Var<T> constant(Tensor<T> value) {
    return Var<T>(std::make_shared<const Tensor<T>>(std::move(value)), nullptr,
                  -1);
  }

  // Appends an op node when any input needs a gradient; otherwise the
  // result is a constant and fn is dropped.
  static Var<T> record(std::initializer_list<const Var<T> *> inputs,
                       Tensor<T> out, BackwardFn fn) {
    return record(std::span<const Var<T> *const>(inputs.begin(), inputs.size()),
                  std::move(out), std::move(fn));
  }

  static Var<T> record(std::span<const Var<T> *const> inputs, Tensor<T> out,
                       BackwardFn fn) {
    Tape *tape = nullptr;
    for (const Var<T> *in : inputs)
      if (in->requires_grad() && in->tape() && in->tape()->record_) {
        tape = in->tape();
        break;
      }
    auto v = std::make_shared<const Tensor<T>>(std::move(out));
    if (!tape)
      return Var<T>(std::move(v), nullptr, -1);
    tape->nodes_.push_back({v->shape(), std::move(fn)});
    return Var<T>(std::move(v), tape,
                  static_cast<int>(tape->nodes_.size() - 1));
  }

  // Zero-initialized gradient accumulator for node id.
  Tensor<T> &grad_slot(int id) {
    auto &slot = grads_[static_cast<std::size_t>(id)];
    if (!slot)
      slot = std::make_unique<Tensor<T>>(nodes_[static_cast<std::size_t>(id)].shape);
    return *slot;
  }

  void accumulate(const Var<T> &v, const Tensor<T> &g) {
    if (!v.requires_grad())
      return;
    Tensor<T> &slot = grad_slot(v.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      slot[i] += g[i];
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the node list once in reverse.
  void backward(const Var<T> &loss) {
    if (loss.value().size() != 1)
      fail("backward: tape output is not a scalar (shape " +
           loss.shape().str() + ")");
    if (!loss.requires_grad() || loss.tape() != this)
      fail("backward: loss was not recorded on this tape");
    if (swept_)
      fail("backward: tape was already replayed");
    swept_ = true;
    grads_.clear();
    grads_.resize(nodes_.size());
    grad_slot(loss.id())[0] = T(1);
    visits_ = 0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!grads_[i] || !nodes_[i].backward)
        continue;
      ++visits_;
      // Interior gradients are consumed; leaves keep theirs.
      const Tensor<T> g = std::move(*grads_[i]);
      grads_[i].reset();
      nodes_[i].backward(g, *this);
    }
  }

  // Gradient of a leaf after backward(); nullptr when the loss did not
  // depend on it.
  const Tensor<T> *grad(const Var<T> &v) const {
    if (!v.requires_grad() || v.tape() != this)
      return nullptr;
    const auto i = static_cast<std::size_t>(v.id());
    return i < grads_.size() ? grads_[i].get() : nullptr;
  }

  Tensor<T> grad_or_zero(const Var<T> &v) const {
    const Tensor<T> *g = grad(v);
    return g ? *g : Tensor<T>(v.shape());
  }

  std::size_t interior_visits() const { return visits_; }

private:
  struct Node {
    Shape shape;
    BackwardFn backward; // empty for leaves
  };

  bool record_;
  bool swept_ = false;
  std::size_t visits_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<Tensor<T>>> grads_;
};

// ======================================================================
// Differentiable ops
// ======================================================================

enum class Padding { SameReflect, Valid };

struct ConvOptions {
  std::size_t stride = 1;
  Padding padding = Padding::SameReflect;
  std::size_t groups = 1;
};

template <class T> Var<T> add(const Var<T> &a, const Var<T> &b) {
  if (a.shape() != b.shape())
    shape_fail("add: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] += b.value()[i];
  return Tape<T>::record({&a, &b}, std::move(out),
                         [a, b](const Tensor<T> &g, Tape<T> &t) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

template <class T> Var<T> sub(const Var<T> &a, const Var<T> &b) {
  if (a.shape() != b.shape())
    shape_fail("sub: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] -= b.value()[i];
  return Tape<T>::record({&a, &b}, std::move(out),
                         [a, b](const Tensor<T> &g, Tape<T> &t) {
                           t.accumulate(a, g);
                           if (b.requires_grad()) {
                             Tensor<T> &s = t.grad_slot(b.id());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               s[i] -= g[i];
                           }
                         });
}

template <class T> Var<T> mul(const Var<T> &a, const Var<T> &b) {
  if (a.shape() != b.shape())
    shape_fail("mul: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] *= b.value()[i];
  return Tape<T>::record({&a, &b}, std::move(out),
                         [a, b](const Tensor<T> &g, Tape<T> &t) {
                           if (a.requires_grad()) {
                             Tensor<T> &s = t.grad_slot(a.id());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               s[i] += g[i] * b.value()[i];
                           }
                           if (b.requires_grad()) {
                             Tensor<T> &s = t.grad_slot(b.id());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               s[i] += g[i] * a.value()[i];
                           }
                         });
}

template <class T> Var<T> scale(const Var<T> &a, T factor) {
  Tensor<T> out = a.value();
  for (auto &v : out.values())
    v *= factor;
  return Tape<T>::record({&a}, std::move(out),
                         [a, factor](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(a.id());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             s[i] += factor * g[i];
                         });
}

template <class T> Var<T> abs(const Var<T> &a) {
  Tensor<T> out = a.value();
  for (auto &v : out.values())
    v = std::abs(v);
  return Tape<T>::record({&a}, std::move(out),
                         [a](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(a.id());
                           const Tensor<T> &x = a.value();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             s[i] += x[i] > T(0)   ? g[i]
                                     : x[i] < T(0) ? -g[i]
                                                   : T(0);
                         });
}

template <class T> Var<T> sum(const Var<T> &a) {
  Tensor<T> out({1, 1, 1, 1}, static_cast<T>(sum_of(a.value())));
  return Tape<T>::record({&a}, std::move(out),
                         [a](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(a.id());
                           for (auto &v : s.values())
                             v += g[0];
                         });
}

template <class T> Var<T> mean(const Var<T> &a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// Sum of two or more scalars; used for loss bookkeeping.
template <class T> Var<T> add_scalars(const std::vector<Var<T>> &terms) {
  Var<T> acc = terms.at(0);
  for (std::size_t i = 1; i < terms.size(); ++i)
    acc = add(acc, terms[i]);
  return acc;
}

// ---------------------------------------------------------------- conv

template <class T>
Var<T> pad_reflect(const Var<T> &x, std::size_t ph, std::size_t pw) {
  if (ph == 0 && pw == 0)
    return x;
  const Shape in = x.shape();
  return Tape<T>::record({&x}, kernels::pad_reflect(x.value(), ph, pw),
                         [x, in, ph, pw](const Tensor<T> &g, Tape<T> &t) {
                           t.accumulate(
                               x, kernels::pad_reflect_backward(g, in, ph, pw));
                         });
}

namespace detail {
template <class T>
void check_conv(const Shape &x, const Shape &w, const Var<T> *bias,
                const ConvOptions &o) {
  if (o.groups == 0 || o.stride == 0)
    shape_fail("conv2d: stride and groups must be >= 1");
  if (w.h % 2 == 0 || w.w % 2 == 0)
    shape_fail("conv2d: kernel size must be odd, got " + std::to_string(w.h) +
               "x" + std::to_string(w.w));
  if (x.c != w.c * o.groups)
    shape_fail("conv2d: input has " + std::to_string(x.c) +
               " channels, weight expects " + std::to_string(w.c * o.groups));
  if (w.n % o.groups != 0)
    shape_fail("conv2d: output channels not divisible by groups");
  if (bias && bias->value().size() != w.n)
    shape_fail("conv2d: bias has " + std::to_string(bias->value().size()) +
               " entries, expected " + std::to_string(w.n));
  if (o.padding == Padding::SameReflect) {
    if (x.h % o.stride != 0 || x.w % o.stride != 0)
      shape_fail("conv2d: stride " + std::to_string(o.stride) +
                 " does not divide spatial dims " + std::to_string(x.h) + "x" +
                 std::to_string(x.w));
  } else if (x.h < w.h || x.w < w.w) {
    shape_fail("conv2d: valid convolution with kernel larger than input");
  }
}
} // namespace detail

template <class T>
Var<T> conv2d(const Var<T> &x, const Var<T> &weight, const Var<T> *bias,
              const ConvOptions &opt = {}) {
  detail::check_conv(x.shape(), weight.shape(), bias, opt);
  const Var<T> src =
      opt.padding == Padding::SameReflect
          ? pad_reflect(x, weight.shape().h / 2, weight.shape().w / 2)
          : x;
  const Tensor<T> *bias_value = bias ? &bias->value() : nullptr;
  Tensor<T> out = kernels::conv_valid(src.value(), weight.value(), bias_value,
                                      opt.stride, opt.groups);
  const Var<T> b = bias ? *bias : Var<T>();
  const Var<T> *inputs[] = {&src, &weight, bias ? bias : &src};
  return Tape<T>::record(
      std::span<const Var<T> *const>(inputs), std::move(out),
      [src, weight, b, opt](const Tensor<T> &g, Tape<T> &t) {
        Tensor<T> *gx = src.requires_grad() ? &t.grad_slot(src.id()) : nullptr;
        Tensor<T> *gw =
            weight.requires_grad() ? &t.grad_slot(weight.id()) : nullptr;
        Tensor<T> *gb = b.requires_grad() ? &t.grad_slot(b.id()) : nullptr;
        kernels::conv_valid_backward(src.value(), weight.value(), g, opt.stride,
                                     opt.groups, gx, gw, gb);
      });
}

template <class T>
Var<T> conv2d(const Var<T> &x, const Var<T> &weight, const Var<T> &bias,
              const ConvOptions &opt = {}) {
  return conv2d(x, weight, &bias, opt);
}

// ---------------------------------------------------------------- spatial

template <class T> Var<T> avgpool2d(const Var<T> &x, std::size_t k) {
  const Shape in = x.shape();
  if (k == 0 || in.h % k != 0 || in.w % k != 0)
    shape_fail("avgpool2d: window " + std::to_string(k) +
               " does not divide spatial dims " + std::to_string(in.h) + "x" +
               std::to_string(in.w));
  return Tape<T>::record({&x}, kernels::avgpool(x.value(), k),
                         [x, in, k](const Tensor<T> &g, Tape<T> &t) {
                           t.accumulate(x, kernels::avgpool_backward(g, in, k));
                         });
}

template <class T> Var<T> upsample2x(const Var<T> &x) {
  const Shape in = x.shape();
  return Tape<T>::record({&x}, kernels::upsample2x(x.value()),
                         [x, in](const Tensor<T> &g, Tape<T> &t) {
                           t.accumulate(x, kernels::upsample2x_backward(g, in));
                         });
}

template <class T> Var<T> activation(const Var<T> &x) {
  Tensor<T> out = x.value();
  for (auto &v : out.values())
    v = kernels::activation_value(v);
  return Tape<T>::record({&x}, std::move(out),
                         [x](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(x.id());
                           const Tensor<T> &xv = x.value();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             s[i] += g[i] * kernels::activation_derivative(xv[i]);
                         });
}

template <class T>
Var<T> channel_norm(const Var<T> &x, const Var<T> &gamma, const Var<T> &beta) {
  if (gamma.value().size() != x.shape().c || beta.value().size() != x.shape().c)
    shape_fail("channel_norm: affine parameters do not match channel count");
  auto xhat = std::make_shared<Tensor<T>>();
  auto inv_std = std::make_shared<std::vector<T>>();
  Tensor<T> out = kernels::channel_norm(x.value(), gamma.value(), beta.value(),
                                        xhat.get(), inv_std.get());
  return Tape<T>::record(
      {&x, &gamma, &beta}, std::move(out),
      [x, gamma, beta, xhat, inv_std](const Tensor<T> &g, Tape<T> &t) {
        kernels::channel_norm_backward(
            *xhat, *inv_std, gamma.value(), g,
            x.requires_grad() ? &t.grad_slot(x.id()) : nullptr,
            gamma.requires_grad() ? &t.grad_slot(gamma.id()) : nullptr,
            beta.requires_grad() ? &t.grad_slot(beta.id()) : nullptr);
      });
}

// ---------------------------------------------------------------- layout

template <class T> Var<T> reshape(const Var<T> &x, const Shape &shape) {
  if (shape.size() != x.value().size())
    shape_fail("reshape: element count " + std::to_string(x.value().size()) +
               " cannot become " + shape.str());
  Tensor<T> out(shape, x.value().storage());
  return Tape<T>::record({&x}, std::move(out),
                         [x](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(x.id());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             s[i] += g[i];
                         });
}

template <class T>
Var<T> slice_channels(const Var<T> &x, std::size_t begin, std::size_t count) {
  const Shape in = x.shape();
  if (count == 0 || begin + count > in.c)
    shape_fail("slice_channels: range out of bounds");
  Tensor<T> out({in.n, count, in.h, in.w});
  const std::size_t hw = in.plane();
  for (std::size_t n = 0; n < in.n; ++n)
    std::copy_n(x.value().plane(n, begin), count * hw, out.plane(n, 0));
  return Tape<T>::record(
      {&x}, std::move(out),
      [x, begin, count, hw](const Tensor<T> &g, Tape<T> &t) {
        Tensor<T> &s = t.grad_slot(x.id());
        for (std::size_t n = 0; n < g.n(); ++n) {
          const T *src = g.plane(n, 0);
          T *dst = s.plane(n, begin);
          for (std::size_t i = 0; i < count * hw; ++i)
            dst[i] += src[i];
        }
      });
}

// Channel-equal division into `groups` parts.
template <class T>
std::vector<Var<T>> chunk(const Var<T> &x, std::size_t groups) {
  if (groups == 0 || x.shape().c % groups != 0)
    shape_fail("chunk: " + std::to_string(x.shape().c) +
               " channels are not divisible into " + std::to_string(groups) +
               " groups");
  const std::size_t per = x.shape().c / groups;
  std::vector<Var<T>> parts;
  parts.reserve(groups);
  for (std::size_t i = 0; i < groups; ++i)
    parts.push_back(slice_channels(x, i * per, per));
  return parts;
}

template <class T> Var<T> concat(const std::vector<Var<T>> &parts) {
  if (parts.empty())
    shape_fail("concat: no inputs");
  const Shape first = parts[0].shape();
  std::size_t channels = 0;
  for (const auto &p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      shape_fail("concat: non-channel dims differ (" + first.str() + " vs " +
                 s.str() + ")");
    channels += s.c;
  }
  Tensor<T> out({first.n, channels, first.h, first.w});
  const std::size_t hw = first.plane();
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto &p : parts) {
    offsets.push_back(at);
    for (std::size_t n = 0; n < first.n; ++n)
      std::copy_n(p.value().plane(n, 0), p.shape().c * hw, out.plane(n, at));
    at += p.shape().c;
  }
  std::vector<const Var<T> *> inputs;
  for (const auto &p : parts)
    inputs.push_back(&p);
  return Tape<T>::record(
      std::span<const Var<T> *const>(inputs.data(), inputs.size()),
      std::move(out), [parts, offsets, hw](const Tensor<T> &g, Tape<T> &t) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (!parts[k].requires_grad())
            continue;
          Tensor<T> &s = t.grad_slot(parts[k].id());
          const std::size_t cnt = parts[k].shape().c * hw;
          for (std::size_t n = 0; n < g.n(); ++n) {
            const T *src = g.plane(n, offsets[k]);
            T *dst = s.plane(n, 0);
            for (std::size_t i = 0; i < cnt; ++i)
              dst[i] += src[i];
          }
        }
      });
}

template <class T> Var<T> select_batch(const Var<T> &x, std::size_t index) {
  const Shape in = x.shape();
  if (index >= in.n)
    shape_fail("select_batch: index out of range");
  const std::size_t len = in.c * in.plane();
  Tensor<T> out({1, in.c, in.h, in.w});
  std::copy_n(x.value().data() + index * len, len, out.data());
  return Tape<T>::record({&x}, std::move(out),
                         [x, index, len](const Tensor<T> &g, Tape<T> &t) {
                           T *dst = t.grad_slot(x.id()).data() + index * len;
                           for (std::size_t i = 0; i < len; ++i)
                             dst[i] += g[i];
                         });
}

template <class T> Var<T> stack_batch(const std::vector<Var<T>> &items) {
  if (items.empty())
    shape_fail("stack_batch: no inputs");
  const Shape s = items[0].shape();
  const std::size_t len = s.size();
  Tensor<T> out({items.size() * s.n, s.c, s.h, s.w});
  std::vector<const Var<T> *> inputs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s)
      shape_fail("stack_batch: shape mismatch");
    std::copy_n(items[i].value().data(), len, out.data() + i * len);
    inputs.push_back(&items[i]);
  }
  return Tape<T>::record(
      std::span<const Var<T> *const>(inputs.data(), inputs.size()),
      std::move(out), [items, len](const Tensor<T> &g, Tape<T> &t) {
        for (std::size_t i = 0; i < items.size(); ++i) {
          if (!items[i].requires_grad())
            continue;
          Tensor<T> &s = t.grad_slot(items[i].id());
          for (std::size_t j = 0; j < len; ++j)
            s[j] += g[i * len + j];
        }
      });
}

// ---------------------------------------------------------------- matrices
// Matrices travel on the tape as 1x1xRxC tensors.

template <class T>
Var<T> as_matrix(const Var<T> &x, std::size_t rows, std::size_t cols) {
  return reshape(x, Shape{1, 1, rows, cols});
}

namespace detail {
inline void check_matrix(const Shape &s, const char *op) {
  if (s.n != 1 || s.c != 1)
    shape_fail(std::string(op) + ": expected a 1x1xRxC matrix, got " + s.str());
}
} // namespace detail

template <class T> Var<T> matmul(const Var<T> &a, const Var<T> &b) {
  detail::check_matrix(a.shape(), "matmul");
  detail::check_matrix(b.shape(), "matmul");
  const std::size_t r = a.shape().h, k = a.shape().w, m = b.shape().w;
  if (b.shape().h != k)
    shape_fail("matmul: inner dimensions differ (" + std::to_string(r) + "x" +
               std::to_string(k) + " times " + std::to_string(b.shape().h) +
               "x" + std::to_string(m) + ")");
  Tensor<T> out({1, 1, r, m});
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), r, k, m);
  return Tape<T>::record(
      {&a, &b}, std::move(out), [a, b, r, k, m](const Tensor<T> &g, Tape<T> &t) {
        if (a.requires_grad())
          kernels::gemm_nt(g.data(), b.value().data(),
                           t.grad_slot(a.id()).data(), r, m, k);
        if (b.requires_grad())
          kernels::gemm_tn(a.value().data(), g.data(),
                           t.grad_slot(b.id()).data(), k, r, m);
      });
}

template <class T> Var<T> transpose(const Var<T> &a) {
  detail::check_matrix(a.shape(), "transpose");
  const std::size_t r = a.shape().h, c = a.shape().w;
  Tensor<T> out({1, 1, c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out[j * r + i] = a.value()[i * c + j];
  return Tape<T>::record({&a}, std::move(out),
                         [a, r, c](const Tensor<T> &g, Tape<T> &t) {
                           Tensor<T> &s = t.grad_slot(a.id());
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               s[i * c + j] += g[j * r + i];
                         });
}

// Row-wise softmax (each row normalized over its columns).
template <class T> Var<T> softmax_rows(const Var<T> &a) {
  detail::check_matrix(a.shape(), "softmax");
  if (!a.value().all_finite())
    fail("softmax: non-finite input");
  const std::size_t r = a.shape().h, c = a.shape().w;
  Tensor<T> out({1, 1, r, c});
  kernels::softmax_rows(a.value().data(), out.data(), r, c);
  auto y = std::make_shared<Tensor<T>>(out);
  return Tape<T>::record({&a}, std::move(out),
                         [a, y, r, c](const Tensor<T> &g, Tape<T> &t) {
                           kernels::softmax_rows_backward(
                               y->data(), g.data(), t.grad_slot(a.id()).data(),
                               r, c);
                         });
}

// ======================================================================
// Finite-difference oracle
// ======================================================================

struct GradCheckOptions {
  // Coordinates checked per input; 0 checks all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // Smallest denominator in the relative error.
  double floor = 1e-8;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<Var<double>(Tape<double> &,
                                           std::span<const Var<double>>)>;

// Central differences (f(x+eps e) - f(x-eps e)) / (2 eps) against backward(),
// relative error with max(|a|, |n|, opt.floor) in the denominator.
inline GradCheckReport grad_check_report(const ScalarFn &f,
                                         std::vector<Tensor<double>> inputs,
                                         double eps,
                                         const GradCheckOptions &opt = {}) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    fail("grad_check: eps must lie in [1e-7, 1e-3]");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto &x : inputs)
      vars.push_back(tape.leaf(x));
    Var<double> y = f(tape, vars);
    if (!std::isfinite(y.value()[0]))
      fail("grad_check: function value is not finite");
    tape.backward(y);
    for (const auto &v : vars)
      analytic.push_back(tape.grad_or_zero(v));
  }

  const auto evaluate = [&](const std::vector<Tensor<double>> &xs) {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto &x : xs)
      vars.push_back(tape.leaf(x));
    const double v = f(tape, vars).value()[0];
    if (!std::isfinite(v))
      fail("grad_check: function value is not finite");
    return v;
  };

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    for (std::size_t i = 0; i < coords.size(); ++i)
      coords[i] = i;
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_input);
    }
    for (std::size_t i : coords) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + eps;
      const double fp = evaluate(inputs);
      inputs[k][i] = x0 - eps;
      const double fm = evaluate(inputs);
      inputs[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

inline double grad_check(const ScalarFn &f, std::vector<Tensor<double>> inputs,
                         double eps, const GradCheckOptions &opt = {}) {
  return grad_check_report(f, std::move(inputs), eps, opt).max_relative_error;
}

// Single-input convenience form.
inline double
grad_check(const std::function<Var<double>(Tape<double> &, const Var<double> &)> &f,
           const Tensor<double> &x, double eps,
           const GradCheckOptions &opt = {}) {
  return grad_check(
      [&](Tape<double> &t, std::span<const Var<double>> v) { return f(t, v[0]); },
      std::vector<Tensor<double>>{x}, eps, opt);
}

} // namespace mcms
