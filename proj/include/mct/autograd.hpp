#pragma once

// Reverse-mode autodiff over straight-line tapes. Each op computes its value
// eagerly through a kernel and, when a tape is active and an input is
// tracked, pushes a closure that replays the chain rule. backward() walks
// closures in exact reverse execution order. Leaf gradients accumulate
// across backward calls; intermediate gradients are reset at the start of
// every backward pass.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mct/kernels.hpp"
#include "mct/tensor.hpp"

namespace mct {

template <typename T>
struct Var {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
  }
  void zero_grad() {
    if (grad.numel()) grad.fill(T(0));
  }
};

template <typename T>
using VarPtr = std::shared_ptr<Var<T>>;

template <typename T>
VarPtr<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto v = std::make_shared<Var<T>>();
  v->value = std::move(value);
  v->requires_grad = requires_grad;
  if (requires_grad) v->ensure_grad();
  return v;
}

template <typename T>
class Tape {
 public:
  void record(VarPtr<T> out, std::function<void()> fn) {
    nodes_.push_back({std::move(out), std::move(fn)});
  }

  void backward(const VarPtr<T>& loss) {
    if (loss->value.numel() != 1) {
      throw Error::shape("backward requires a scalar loss, got " + shape_str(loss->value.shape()));
    }
    for (auto& n : nodes_) n.out->zero_grad();
    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    VarPtr<T> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

namespace ops {

template <typename T>
VarPtr<T> matmul(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  Tensor<T> y = kernels::matmul(a->value, b->value);
  y.check_finite("matmul");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape->record(out, [a, b, out] {
      const int64_t m = a->value.extent(0), k = a->value.extent(1), n = b->value.extent(1);
      if (a->requires_grad) kernels::mm_nt_acc(out->grad.data(), b->value.data(), a->grad.data(), m, n, k);
      if (b->requires_grad) kernels::mm_tn_acc(a->value.data(), out->grad.data(), b->grad.data(), m, k, n);
    });
  }
  return out;
}

template <typename T>
VarPtr<T> bmm(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  Tensor<T> y = kernels::bmm(a->value, b->value);
  y.check_finite("bmm");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape->record(out, [a, b, out] {
      kernels::bmm_backward(a->value, b->value, out->grad, a->requires_grad ? &a->grad : nullptr,
                            b->requires_grad ? &b->grad : nullptr);
    });
  }
  return out;
}

template <typename T>
VarPtr<T> linear(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b) {
  Tensor<T> y = kernels::linear(x->value, w->value, b->value);
  y.check_finite("linear");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (x->requires_grad || w->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape->record(out, [x, w, b, out] {
      kernels::linear_backward(x->value, w->value, out->grad,
                               x->requires_grad ? &x->grad : nullptr,
                               w->requires_grad ? &w->grad : nullptr,
                               b->requires_grad ? &b->grad : nullptr);
    });
  }
  return out;
}

template <typename T>
VarPtr<T> conv3d_grouped(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& w, const VarPtr<T>& b,
                         int64_t groups, std::array<int64_t, 3> stride) {
  Tensor<T> y = kernels::conv3d_grouped(x->value, w->value, b->value, groups, stride);
  y.check_finite("conv3d_grouped");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (x->requires_grad || w->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape->record(out, [x, w, b, out, groups, stride] {
      kernels::conv3d_grouped_backward(x->value, w->value, out->grad, groups, stride,
                                       x->requires_grad ? &x->grad : nullptr,
                                       w->requires_grad ? &w->grad : nullptr,
                                       b->requires_grad ? &b->grad : nullptr);
    });
  }
  return out;
}

// Running statistics live outside the graph; only gamma/beta receive grads.
template <typename T>
VarPtr<T> batchnorm3d(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& gamma,
                      const VarPtr<T>& beta, double eps, double momentum, bool train_mode,
                      Tensor<T>& running_mean, Tensor<T>& running_var, Tensor<T>& batches_seen) {
  Tensor<T> y;
  auto saved = std::make_shared<kernels::BatchNormSaved<T>>();
  if (train_mode) {
    y = kernels::batchnorm3d_train(x->value, gamma->value, beta->value, eps, momentum,
                                   running_mean, running_var, *saved);
    batches_seen[0] += T(1);
  } else {
    if (batches_seen[0] == T(0)) {
      throw Error::data("batchnorm3d eval mode requested before any running statistics were recorded");
    }
    y = kernels::batchnorm3d_eval(x->value, gamma->value, beta->value, eps, running_mean,
                                  running_var);
  }
  y.check_finite("batchnorm3d");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    if (train_mode) {
      tape->record(out, [x, gamma, beta, out, saved] {
        kernels::batchnorm3d_train_backward(x->value, gamma->value, out->grad, *saved,
                                            x->requires_grad ? &x->grad : nullptr,
                                            gamma->requires_grad ? &gamma->grad : nullptr,
                                            beta->requires_grad ? &beta->grad : nullptr);
      });
    } else {
      // snapshot the stats used in this forward
      auto mean = std::make_shared<Tensor<T>>(running_mean);
      auto var = std::make_shared<Tensor<T>>(running_var);
      tape->record(out, [x, gamma, beta, out, eps, mean, var] {
        kernels::batchnorm3d_eval_backward(x->value, gamma->value, out->grad, eps, *mean, *var,
                                           x->requires_grad ? &x->grad : nullptr,
                                           gamma->requires_grad ? &gamma->grad : nullptr,
                                           beta->requires_grad ? &beta->grad : nullptr);
      });
    }
  }
  return out;
}

template <typename T>
VarPtr<T> softmax(Tape<T>* tape, const VarPtr<T>& x) {
  Tensor<T> y = kernels::softmax(x->value);
  y.check_finite("softmax");
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] { kernels::softmax_backward(out->value, out->grad, x->grad); });
  }
  return out;
}

template <typename T>
VarPtr<T> layernorm(Tape<T>* tape, const VarPtr<T>& x, const VarPtr<T>& gamma,
                    const VarPtr<T>& beta, double eps) {
  auto saved = std::make_shared<kernels::LayerNormSaved<T>>();
  Tensor<T> y = kernels::layernorm(x->value, gamma->value, beta->value, eps, *saved);
  y.check_finite("layernorm");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (x->requires_grad || gamma->requires_grad || beta->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    tape->record(out, [x, gamma, beta, out, saved] {
      kernels::layernorm_backward(x->value, gamma->value, out->grad, *saved,
                                  x->requires_grad ? &x->grad : nullptr,
                                  gamma->requires_grad ? &gamma->grad : nullptr,
                                  beta->requires_grad ? &beta->grad : nullptr);
    });
  }
  return out;
}

template <typename T>
VarPtr<T> relu(Tape<T>* tape, const VarPtr<T>& x) {
  Tensor<T> y = kernels::relu(x->value);
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] { kernels::relu_backward(x->value, out->grad, x->grad); });
  }
  return out;
}

template <typename T>
VarPtr<T> gelu(Tape<T>* tape, const VarPtr<T>& x) {
  Tensor<T> y = kernels::gelu(x->value);
  y.check_finite("gelu");
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] { kernels::gelu_backward(x->value, out->grad, x->grad); });
  }
  return out;
}

template <typename T>
VarPtr<T> mean_tokens(Tape<T>* tape, const VarPtr<T>& x) {
  Tensor<T> y = kernels::mean_tokens(x->value);
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    const int64_t l = x->value.extent(-2);
    tape->record(out, [x, out, l] { kernels::mean_tokens_backward(l, out->grad, x->grad); });
  }
  return out;
}

template <typename T>
VarPtr<T> add(Tape<T>* tape, const VarPtr<T>& a, const VarPtr<T>& b) {
  if (!a->value.same_shape(b->value)) {
    throw Error::shape("add shape mismatch: " + shape_str(a->value.shape()) + " vs " +
                       shape_str(b->value.shape()));
  }
  Tensor<T> y = a->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  y.check_finite("add");
  auto out = make_leaf<T>(std::move(y));
  if (tape && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    tape->record(out, [a, b, out] {
      if (a->requires_grad) {
        for (int64_t i = 0; i < out->grad.numel(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        for (int64_t i = 0; i < out->grad.numel(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
VarPtr<T> scale(Tape<T>* tape, const VarPtr<T>& x, T factor) {
  Tensor<T> y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= factor;
  y.check_finite("scale");
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out, factor] {
      for (int64_t i = 0; i < out->grad.numel(); ++i) x->grad[i] += factor * out->grad[i];
    });
  }
  return out;
}

template <typename T>
VarPtr<T> mul_elem(Tape<T>* tape, const VarPtr<T>& x, const Tensor<T>& m) {
  Tensor<T> y = x->value;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= m[i];
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    auto mask = std::make_shared<Tensor<T>>(m);
    tape->record(out, [x, out, mask] {
      for (int64_t i = 0; i < out->grad.numel(); ++i) x->grad[i] += (*mask)[i] * out->grad[i];
    });
  }
  return out;
}

template <typename T>
VarPtr<T> transpose2d(Tape<T>* tape, const VarPtr<T>& x) {
  Tensor<T> y = kernels::transpose2d(x->value);
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] {
      Tensor<T> gt = kernels::transpose2d(out->grad);
      for (int64_t i = 0; i < gt.numel(); ++i) x->grad[i] += gt[i];
    });
  }
  return out;
}

template <typename T>
VarPtr<T> permute(Tape<T>* tape, const VarPtr<T>& x, std::vector<int> perm) {
  Tensor<T> y = kernels::permute(x->value, perm);
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    auto inv = kernels::inverse_permutation(perm);
    tape->record(out, [x, out, inv] {
      Tensor<T> gt = kernels::permute(out->grad, inv);
      for (int64_t i = 0; i < gt.numel(); ++i) x->grad[i] += gt[i];
    });
  }
  return out;
}

template <typename T>
VarPtr<T> reshape(Tape<T>* tape, const VarPtr<T>& x, Shape shape) {
  Tensor<T> y = x->value.reshaped(std::move(shape));
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] {
      for (int64_t i = 0; i < out->grad.numel(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

template <typename T>
VarPtr<T> replace_token(Tape<T>* tape, const VarPtr<T>& x, int64_t index, const VarPtr<T>& v) {
  Tensor<T> y = kernels::replace_token(x->value, index, v->value);
  auto out = make_leaf<T>(std::move(y));
  if (tape && (x->requires_grad || v->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (v->requires_grad) v->ensure_grad();
    tape->record(out, [x, v, out, index] {
      const int64_t d = x->value.extent(-1);
      const int64_t l = x->value.extent(-2);
      const int64_t prefix = x->value.numel() / (l * d);
      for (int64_t p = 0; p < prefix; ++p) {
        const T* grow = out->grad.data() + (p * l + index) * d;
        if (v->requires_grad) {
          for (int64_t j = 0; j < d; ++j) v->grad[j] += grow[j];
        }
        if (x->requires_grad) {
          for (int64_t t = 0; t < l; ++t) {
            if (t == index) continue;
            const T* src = out->grad.data() + (p * l + t) * d;
            T* dst = x->grad.data() + (p * l + t) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
VarPtr<T> select_token(Tape<T>* tape, const VarPtr<T>& x, int64_t index) {
  Tensor<T> y = kernels::select_token(x->value, index);
  auto out = make_leaf<T>(std::move(y));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out, index] {
      const int64_t d = x->value.extent(-1);
      const int64_t l = x->value.extent(-2);
      const int64_t prefix = x->value.numel() / (l * d);
      for (int64_t p = 0; p < prefix; ++p) {
        const T* src = out->grad.data() + p * d;
        T* dst = x->grad.data() + (p * l + index) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename T>
VarPtr<T> dropout(Tape<T>* tape, const VarPtr<T>& x, double rate, uint64_t seed, uint64_t step,
                  uint64_t site) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw Error::config("dropout rate must be < 1");
  Tensor<T> mask = kernels::dropout_mask<T>(x->value.shape(), rate, seed, step, site);
  return mul_elem(tape, x, mask);
}

template <typename T>
VarPtr<T> mse(Tape<T>* tape, const VarPtr<T>& pred, const Tensor<T>& target) {
  const T loss = kernels::mse(pred->value, target);
  auto out = make_leaf<T>(Tensor<T>::scalar(loss));
  out->value.check_finite("mse");
  if (tape && pred->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    pred->ensure_grad();
    auto tgt = std::make_shared<Tensor<T>>(target);
    tape->record(out, [pred, tgt, out] {
      kernels::mse_backward(pred->value, *tgt, out->grad[0], pred->grad);
    });
  }
  return out;
}

template <typename T>
VarPtr<T> cross_entropy(Tape<T>* tape, const VarPtr<T>& logits, std::vector<int> labels) {
  auto sm = std::make_shared<Tensor<T>>();
  const T loss = kernels::cross_entropy(logits->value, labels, *sm);
  auto out = make_leaf<T>(Tensor<T>::scalar(loss));
  out->value.check_finite("cross_entropy");
  if (tape && logits->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    logits->ensure_grad();
    tape->record(out, [logits, sm, labels = std::move(labels), out] {
      kernels::cross_entropy_backward(*sm, labels, out->grad[0], logits->grad);
    });
  }
  return out;
}

// Scalar-preserving sum over all elements; handy for building test losses.
template <typename T>
VarPtr<T> sum_all(Tape<T>* tape, const VarPtr<T>& x) {
  T acc = T(0);
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  auto out = make_leaf<T>(Tensor<T>::scalar(acc));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    tape->record(out, [x, out] {
      for (int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += out->grad[0];
    });
  }
  return out;
}

// Weighted sum <x, w> -> scalar; the standard scalarizer for gradient checks.
template <typename T>
VarPtr<T> weighted_sum(Tape<T>* tape, const VarPtr<T>& x, const Tensor<T>& w) {
  T acc = T(0);
  for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i] * w[i];
  auto out = make_leaf<T>(Tensor<T>::scalar(acc));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    auto wt = std::make_shared<Tensor<T>>(w);
    tape->record(out, [x, wt, out] {
      for (int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += (*wt)[i] * out->grad[0];
    });
  }
  return out;
}

}  // namespace ops
}  // namespace mct
