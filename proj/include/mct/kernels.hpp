#pragma once

// Dense kernels used by the autograd layer. Every kernel runs its reductions
// in a fixed ascending-index order, and parallel variants assign each output
// element to exactly one thread, so results are bit-identical regardless of
// MCT_THREADS.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mct/common.hpp"
#include "mct/rng.hpp"
#include "mct/tensor.hpp"
#include "mct/threading.hpp"

namespace mct::kernels {

// ---------------------------------------------------------------------------
// matmul cores (raw pointers, row-major)

template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  parallel_for(m, k * n, [=](int64_t i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (int64_t l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, k * n, [=](int64_t i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  });
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  parallel_for(k, m * n, [=](int64_t i) {
    T* crow = c + i * n;
    for (int64_t l = 0; l < m; ++l) {
      const T av = a[l * k + i];
      const T* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error::shape("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
  }
  if (a.extent(1) != b.extent(0)) {
    throw Error::shape("matmul inner extents disagree: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
  const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  mm_nn(a.data(), b.data(), c.data(), m, k, n, false);
  return c;
}

// Batched matmul over equal leading dims: a[...,m,k] * b[...,k,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw Error::shape("bmm rank mismatch: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
  for (int i = 0; i + 2 < a.rank(); ++i) {
    if (a.extent(i) != b.extent(i)) {
      throw Error::shape("bmm leading dims disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
  }
  const int64_t m = a.extent(-2), k = a.extent(-1), n = b.extent(-1);
  if (k != b.extent(-2)) {
    throw Error::shape("bmm inner extents disagree: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  const int64_t batches = numel_of(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> c(out_shape);
  parallel_for(batches, m * k * n, [&](int64_t p) {
    mm_nn(a.data() + p * m * k, b.data() + p * k * n, c.data() + p * m * n, m, k, n, false);
  });
  return c;
}

template <typename T>
void bmm_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc, Tensor<T>* da,
                  Tensor<T>* db) {
  const int64_t m = a.extent(-2), k = a.extent(-1), n = b.extent(-1);
  const int64_t batches = a.numel() / (m * k);
  parallel_for(batches, 2 * m * k * n, [&](int64_t p) {
    if (da) mm_nt_acc(dc.data() + p * m * n, b.data() + p * k * n, da->data() + p * m * k, m, n, k);
    if (db) mm_tn_acc(a.data() + p * m * k, dc.data() + p * m * n, db->data() + p * k * n, m, k, n);
  });
}

// ---------------------------------------------------------------------------
// linear: y[..., dout] = x[..., din] * w[din, dout] + b[dout]

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || b.rank() != 1 || b.extent(0) != w.extent(1)) {
    throw Error::shape("linear weight/bias shapes invalid: " + shape_str(w.shape()) + ", " +
                       shape_str(b.shape()));
  }
  if (x.rank() < 1 || x.extent(-1) != w.extent(0)) {
    throw Error::shape("linear trailing extent mismatch: input " + shape_str(x.shape()) +
                       " vs weight " + shape_str(w.shape()));
  }
  const int64_t din = w.extent(0), dout = w.extent(1);
  const int64_t rows = x.numel() / din;
  Shape out_shape(x.shape());
  out_shape.back() = dout;
  Tensor<T> y(out_shape);
  mm_nn(x.data(), w.data(), y.data(), rows, din, dout, false);
  const T* bias = b.data();
  parallel_for(rows, dout, [&](int64_t r) {
    T* yrow = y.data() + r * dout;
    for (int64_t j = 0; j < dout; ++j) yrow[j] += bias[j];
  });
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db) {
  const int64_t din = w.extent(0), dout = w.extent(1);
  const int64_t rows = x.numel() / din;
  if (dx) mm_nt_acc(dy.data(), w.data(), dx->data(), rows, dout, din);
  if (dw) mm_tn_acc(x.data(), dy.data(), dw->data(), rows, din, dout);
  if (db) {
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = dy.data() + r * dout;
      for (int64_t j = 0; j < dout; ++j) (*db)[j] += row[j];
    }
  }
}

// ---------------------------------------------------------------------------
// grouped valid 3D convolution, batched: x[N,Cin,D,H,W], w[Cout,Cin/G,kd,kh,kw]

struct Conv3dDims {
  int64_t n, cin, d, h, w;
  int64_t cout, cpg, kd, kh, kw;
  int64_t sd, sh, sw;
  int64_t od, oh, ow;
  int64_t groups;
};

inline int64_t valid_out_len(int64_t in, int64_t k, int64_t s) {
  return (in - k) / s + 1;
}

inline Conv3dDims conv3d_dims(const Shape& xs, const Shape& ws, int64_t groups,
                              std::array<int64_t, 3> stride) {
  if (xs.size() != 5 || ws.size() != 5) {
    throw Error::shape("conv3d expects x[N,Cin,D,H,W] and w[Cout,Cin/G,kd,kh,kw], got " +
                       shape_str(xs) + " and " + shape_str(ws));
  }
  Conv3dDims dm{};
  dm.n = xs[0]; dm.cin = xs[1]; dm.d = xs[2]; dm.h = xs[3]; dm.w = xs[4];
  dm.cout = ws[0]; dm.cpg = ws[1]; dm.kd = ws[2]; dm.kh = ws[3]; dm.kw = ws[4];
  dm.sd = stride[0]; dm.sh = stride[1]; dm.sw = stride[2];
  dm.groups = groups;
  if (groups < 1 || dm.cin % groups != 0 || dm.cout % groups != 0) {
    throw Error::shape("conv3d group error: Cin=" + std::to_string(dm.cin) + " Cout=" +
                       std::to_string(dm.cout) + " not divisible by groups=" +
                       std::to_string(groups));
  }
  if (dm.cpg != dm.cin / groups) {
    throw Error::shape("conv3d weight channel extent " + std::to_string(dm.cpg) +
                       " does not match Cin/G=" + std::to_string(dm.cin / groups));
  }
  if (dm.sd < 1 || dm.sh < 1 || dm.sw < 1) throw Error::shape("conv3d stride must be >= 1");
  if (dm.kd > dm.d || dm.kh > dm.h || dm.kw > dm.w) {
    throw Error::shape("conv3d kernel " + shape_str({dm.kd, dm.kh, dm.kw}) +
                       " larger than input " + shape_str({dm.d, dm.h, dm.w}));
  }
  dm.od = valid_out_len(dm.d, dm.kd, dm.sd);
  dm.oh = valid_out_len(dm.h, dm.kh, dm.sh);
  dm.ow = valid_out_len(dm.w, dm.kw, dm.sw);
  return dm;
}

// Accepts x[N,Cin,D,H,W] or the single-sample form x[Cin,D,H,W].
template <typename T>
Tensor<T> conv3d_grouped(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         int64_t groups, std::array<int64_t, 3> stride) {
  if (x.rank() == 4) {
    Shape batched(x.shape());
    batched.insert(batched.begin(), 1);
    Tensor<T> y = conv3d_grouped(x.reshaped(batched), w, b, groups, stride);
    return y.reshaped(Shape(y.shape().begin() + 1, y.shape().end()));
  }
  const Conv3dDims dm = conv3d_dims(x.shape(), w.shape(), groups, stride);
  if (b.rank() != 1 || b.extent(0) != dm.cout) {
    throw Error::shape("conv3d bias shape " + shape_str(b.shape()) + " != [Cout]");
  }
  Tensor<T> y({dm.n, dm.cout, dm.od, dm.oh, dm.ow});
  const int64_t cout_pg = dm.cout / dm.groups;
  const int64_t in_chan_stride = dm.d * dm.h * dm.w;
  const int64_t out_spatial = dm.od * dm.oh * dm.ow;
  const int64_t work = dm.cpg * dm.kd * dm.kh * dm.kw * out_spatial;
  parallel_for(dm.n * dm.cout, work, [&](int64_t idx) {
    const int64_t n = idx / dm.cout;
    const int64_t co = idx % dm.cout;
    const int64_t g = co / cout_pg;
    const T* xn = x.data() + n * dm.cin * in_chan_stride + g * dm.cpg * in_chan_stride;
    const T* wc = w.data() + co * dm.cpg * dm.kd * dm.kh * dm.kw;
    T* yo = y.data() + (n * dm.cout + co) * out_spatial;
    for (int64_t od = 0; od < dm.od; ++od) {
      for (int64_t oh = 0; oh < dm.oh; ++oh) {
        for (int64_t ow = 0; ow < dm.ow; ++ow) {
          T acc = b[co];
          const int64_t id0 = od * dm.sd, ih0 = oh * dm.sh, iw0 = ow * dm.sw;
          for (int64_t ci = 0; ci < dm.cpg; ++ci) {
            const T* xc = xn + ci * in_chan_stride;
            const T* wk = wc + ci * dm.kd * dm.kh * dm.kw;
            for (int64_t kd = 0; kd < dm.kd; ++kd) {
              for (int64_t kh = 0; kh < dm.kh; ++kh) {
                const T* xrow = xc + (id0 + kd) * dm.h * dm.w + (ih0 + kh) * dm.w + iw0;
                const T* wrow = wk + kd * dm.kh * dm.kw + kh * dm.kw;
                for (int64_t kw = 0; kw < dm.kw; ++kw) acc += xrow[kw] * wrow[kw];
              }
            }
          }
          yo[(od * dm.oh + oh) * dm.ow + ow] = acc;
        }
      }
    }
  });
  return y;
}

template <typename T>
void conv3d_grouped_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                             int64_t groups, std::array<int64_t, 3> stride, Tensor<T>* dx,
                             Tensor<T>* dw, Tensor<T>* db) {
  if (x.rank() == 4) {
    Shape xb(x.shape());
    xb.insert(xb.begin(), 1);
    Shape dyb(dy.shape());
    dyb.insert(dyb.begin(), 1);
    Tensor<T> dxb;
    if (dx) {
      Shape dxs(dx->shape());
      dxs.insert(dxs.begin(), 1);
      dxb = dx->reshaped(dxs);
    }
    conv3d_grouped_backward(x.reshaped(xb), w, dy.reshaped(dyb), groups, stride,
                            dx ? &dxb : nullptr, dw, db);
    if (dx) *dx = dxb.reshaped(dx->shape());
    return;
  }
  const Conv3dDims dm = conv3d_dims(x.shape(), w.shape(), groups, stride);
  const int64_t cout_pg = dm.cout / dm.groups;
  const int64_t in_chan_stride = dm.d * dm.h * dm.w;
  const int64_t out_spatial = dm.od * dm.oh * dm.ow;
  const int64_t ker = dm.kd * dm.kh * dm.kw;

  if (db) {
    parallel_for(dm.cout, dm.n * out_spatial, [&](int64_t co) {
      T acc = T(0);
      for (int64_t n = 0; n < dm.n; ++n) {
        const T* dyo = dy.data() + (n * dm.cout + co) * out_spatial;
        for (int64_t s = 0; s < out_spatial; ++s) acc += dyo[s];
      }
      (*db)[co] += acc;
    });
  }

  if (dw) {
    parallel_for(dm.cout, dm.n * out_spatial * dm.cpg * ker, [&](int64_t co) {
      const int64_t g = co / cout_pg;
      T* dwc = dw->data() + co * dm.cpg * ker;
      for (int64_t n = 0; n < dm.n; ++n) {
        const T* xn = x.data() + n * dm.cin * in_chan_stride + g * dm.cpg * in_chan_stride;
        const T* dyo = dy.data() + (n * dm.cout + co) * out_spatial;
        for (int64_t od = 0; od < dm.od; ++od) {
          for (int64_t oh = 0; oh < dm.oh; ++oh) {
            for (int64_t ow = 0; ow < dm.ow; ++ow) {
              const T g_out = dyo[(od * dm.oh + oh) * dm.ow + ow];
              if (g_out == T(0)) continue;
              const int64_t id0 = od * dm.sd, ih0 = oh * dm.sh, iw0 = ow * dm.sw;
              for (int64_t ci = 0; ci < dm.cpg; ++ci) {
                const T* xc = xn + ci * in_chan_stride;
                T* dwk = dwc + ci * ker;
                for (int64_t kd = 0; kd < dm.kd; ++kd) {
                  for (int64_t kh = 0; kh < dm.kh; ++kh) {
                    const T* xrow = xc + (id0 + kd) * dm.h * dm.w + (ih0 + kh) * dm.w + iw0;
                    T* dwrow = dwk + kd * dm.kh * dm.kw + kh * dm.kw;
                    for (int64_t kw = 0; kw < dm.kw; ++kw) dwrow[kw] += g_out * xrow[kw];
                  }
                }
              }
            }
          }
        }
      }
    });
  }

  if (dx) {
    parallel_for(dm.n, dm.cout * out_spatial * dm.cpg * ker, [&](int64_t n) {
      for (int64_t co = 0; co < dm.cout; ++co) {
        const int64_t g = co / cout_pg;
        const T* wc = w.data() + co * dm.cpg * ker;
        const T* dyo = dy.data() + (n * dm.cout + co) * out_spatial;
        T* dxn = dx->data() + n * dm.cin * in_chan_stride + g * dm.cpg * in_chan_stride;
        for (int64_t od = 0; od < dm.od; ++od) {
          for (int64_t oh = 0; oh < dm.oh; ++oh) {
            for (int64_t ow = 0; ow < dm.ow; ++ow) {
              const T g_out = dyo[(od * dm.oh + oh) * dm.ow + ow];
              if (g_out == T(0)) continue;
              const int64_t id0 = od * dm.sd, ih0 = oh * dm.sh, iw0 = ow * dm.sw;
              for (int64_t ci = 0; ci < dm.cpg; ++ci) {
                T* dxc = dxn + ci * in_chan_stride;
                const T* wk = wc + ci * ker;
                for (int64_t kd = 0; kd < dm.kd; ++kd) {
                  for (int64_t kh = 0; kh < dm.kh; ++kh) {
                    T* dxrow = dxc + (id0 + kd) * dm.h * dm.w + (ih0 + kh) * dm.w + iw0;
                    const T* wrow = wk + kd * dm.kh * dm.kw + kh * dm.kw;
                    for (int64_t kw = 0; kw < dm.kw; ++kw) dxrow[kw] += g_out * wrow[kw];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
}

// ---------------------------------------------------------------------------
// batchnorm3d over x[N,C,D,H,W]: per-channel statistics across (N,D,H,W)

template <typename T>
struct BatchNormSaved {
  std::vector<double> mean;
  std::vector<double> rstd;
};

template <typename T>
Tensor<T> batchnorm3d_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            double eps, double momentum, Tensor<T>& running_mean,
                            Tensor<T>& running_var, BatchNormSaved<T>& saved) {
  if (x.rank() != 5) throw Error::shape("batchnorm3d expects x[N,C,D,H,W], got " + shape_str(x.shape()));
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  const int64_t per_channel = n * spatial;
  if (per_channel < 2) {
    throw Error::shape("batchnorm3d train mode requires at least 2 values per channel, got " +
                       std::to_string(per_channel));
  }
  if (gamma.extent(0) != c || beta.extent(0) != c) {
    throw Error::shape("batchnorm3d gamma/beta must be [C]");
  }
  saved.mean.assign(static_cast<size_t>(c), 0.0);
  saved.rstd.assign(static_cast<size_t>(c), 0.0);
  Tensor<T> y(x.shape());
  const int64_t chan_stride = spatial;
  parallel_for(c, 4 * n * spatial, [&](int64_t ch) {
    double sum = 0.0, sumsq = 0.0;
    for (int64_t b = 0; b < n; ++b) {
      const T* xc = x.data() + (b * c + ch) * chan_stride;
      for (int64_t s = 0; s < spatial; ++s) {
        const double v = static_cast<double>(xc[s]);
        sum += v;
        sumsq += v * v;
      }
    }
    const double mean = sum / static_cast<double>(per_channel);
    double var = sumsq / static_cast<double>(per_channel) - mean * mean;
    if (var < 0.0) var = 0.0;  // numeric floor
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved.mean[static_cast<size_t>(ch)] = mean;
    saved.rstd[static_cast<size_t>(ch)] = rstd;
    running_mean[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[ch]) +
                                      momentum * mean);
    running_var[ch] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[ch]) +
                                     momentum * var);
    const double g = static_cast<double>(gamma[ch]), bt = static_cast<double>(beta[ch]);
    for (int64_t b = 0; b < n; ++b) {
      const T* xc = x.data() + (b * c + ch) * chan_stride;
      T* yc = y.data() + (b * c + ch) * chan_stride;
      for (int64_t s = 0; s < spatial; ++s) {
        yc[s] = static_cast<T>((static_cast<double>(xc[s]) - mean) * rstd * g + bt);
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> batchnorm3d_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  if (x.rank() != 5) throw Error::shape("batchnorm3d expects x[N,C,D,H,W]");
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  Tensor<T> y(x.shape());
  parallel_for(c, 2 * n * spatial, [&](int64_t ch) {
    const double mean = static_cast<double>(running_mean[ch]);
    const double rstd = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    const double g = static_cast<double>(gamma[ch]), bt = static_cast<double>(beta[ch]);
    for (int64_t b = 0; b < n; ++b) {
      const T* xc = x.data() + (b * c + ch) * spatial;
      T* yc = y.data() + (b * c + ch) * spatial;
      for (int64_t s = 0; s < spatial; ++s) {
        yc[s] = static_cast<T>((static_cast<double>(xc[s]) - mean) * rstd * g + bt);
      }
    }
  });
  return y;
}

template <typename T>
void batchnorm3d_train_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& dy,
                                const BatchNormSaved<T>& saved, Tensor<T>* dx, Tensor<T>* dgamma,
                                Tensor<T>* dbeta) {
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  const double m = static_cast<double>(n * spatial);
  parallel_for(c, 6 * n * spatial, [&](int64_t ch) {
    const double mean = saved.mean[static_cast<size_t>(ch)];
    const double rstd = saved.rstd[static_cast<size_t>(ch)];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < n; ++b) {
      const T* xc = x.data() + (b * c + ch) * spatial;
      const T* dyc = dy.data() + (b * c + ch) * spatial;
      for (int64_t s = 0; s < spatial; ++s) {
        const double xhat = (static_cast<double>(xc[s]) - mean) * rstd;
        sum_dy += static_cast<double>(dyc[s]);
        sum_dy_xhat += static_cast<double>(dyc[s]) * xhat;
      }
    }
    if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_dy_xhat);
    if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_dy);
    if (dx) {
      const double g = static_cast<double>(gamma[ch]);
      for (int64_t b = 0; b < n; ++b) {
        const T* xc = x.data() + (b * c + ch) * spatial;
        const T* dyc = dy.data() + (b * c + ch) * spatial;
        T* dxc = dx->data() + (b * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          const double xhat = (static_cast<double>(xc[s]) - mean) * rstd;
          const double v = g * rstd *
                           (static_cast<double>(dyc[s]) - sum_dy / m - xhat * sum_dy_xhat / m);
          dxc[s] += static_cast<T>(v);
        }
      }
    }
  });
}

template <typename T>
void batchnorm3d_eval_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& dy,
                               double eps, const Tensor<T>& running_mean,
                               const Tensor<T>& running_var, Tensor<T>* dx, Tensor<T>* dgamma,
                               Tensor<T>* dbeta) {
  const int64_t n = x.extent(0), c = x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  parallel_for(c, 4 * n * spatial, [&](int64_t ch) {
    const double mean = static_cast<double>(running_mean[ch]);
    const double rstd = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    const double g = static_cast<double>(gamma[ch]);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < n; ++b) {
      const T* xc = x.data() + (b * c + ch) * spatial;
      const T* dyc = dy.data() + (b * c + ch) * spatial;
      T* dxc = dx ? dx->data() + (b * c + ch) * spatial : nullptr;
      for (int64_t s = 0; s < spatial; ++s) {
        const double xhat = (static_cast<double>(xc[s]) - mean) * rstd;
        sum_dy += static_cast<double>(dyc[s]);
        sum_dy_xhat += static_cast<double>(dyc[s]) * xhat;
        if (dxc) dxc[s] += static_cast<T>(g * rstd * static_cast<double>(dyc[s]));
      }
    }
    if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_dy_xhat);
    if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_dy);
  });
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-subtracted

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const int64_t n = x.extent(-1);
  const int64_t slices = x.numel() / n;
  Tensor<T> y(x.shape());
  parallel_for(slices, 4 * n, [&](int64_t s) {
    const T* xr = x.data() + s * n;
    T* yr = y.data() + s * n;
    T mx = xr[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    T sum = T(0);
    for (int64_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = T(1) / sum;
    for (int64_t i = 0; i < n; ++i) yr[i] *= inv;
  });
  return y;
}

template <typename T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t n = y.extent(-1);
  const int64_t slices = y.numel() / n;
  parallel_for(slices, 3 * n, [&](int64_t s) {
    const T* yr = y.data() + s * n;
    const T* dyr = dy.data() + s * n;
    T* dxr = dx.data() + s * n;
    T dot = T(0);
    for (int64_t i = 0; i < n; ++i) dot += dyr[i] * yr[i];
    for (int64_t i = 0; i < n; ++i) dxr[i] += yr[i] * (dyr[i] - dot);
  });
}

// ---------------------------------------------------------------------------
// layernorm over the last axis

template <typename T>
struct LayerNormSaved {
  std::vector<double> mean;
  std::vector<double> rstd;
};

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps,
                    LayerNormSaved<T>& saved) {
  const int64_t d = x.extent(-1);
  if (gamma.extent(0) != d || beta.extent(0) != d) {
    throw Error::shape("layernorm gamma/beta must match last extent " + std::to_string(d));
  }
  const int64_t slices = x.numel() / d;
  saved.mean.assign(static_cast<size_t>(slices), 0.0);
  saved.rstd.assign(static_cast<size_t>(slices), 0.0);
  Tensor<T> y(x.shape());
  parallel_for(slices, 6 * d, [&](int64_t s) {
    const T* xr = x.data() + s * d;
    T* yr = y.data() + s * d;
    double sum = 0.0, sumsq = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double v = static_cast<double>(xr[i]);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / static_cast<double>(d);
    double var = sumsq / static_cast<double>(d) - mean * mean;
    if (var < 0.0) var = 0.0;
    const double rstd = 1.0 / std::sqrt(var + eps);
    saved.mean[static_cast<size_t>(s)] = mean;
    saved.rstd[static_cast<size_t>(s)] = rstd;
    for (int64_t i = 0; i < d; ++i) {
      yr[i] = static_cast<T>((static_cast<double>(xr[i]) - mean) * rstd *
                                 static_cast<double>(gamma[i]) +
                             static_cast<double>(beta[i]));
    }
  });
  return y;
}

template <typename T>
void layernorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& dy,
                        const LayerNormSaved<T>& saved, Tensor<T>* dx, Tensor<T>* dgamma,
                        Tensor<T>* dbeta) {
  const int64_t d = x.extent(-1);
  const int64_t slices = x.numel() / d;
  // dgamma/dbeta reduce over slices; keep that loop serial for determinism.
  for (int64_t s = 0; s < slices; ++s) {
    const T* xr = x.data() + s * d;
    const T* dyr = dy.data() + s * d;
    const double mean = saved.mean[static_cast<size_t>(s)];
    const double rstd = saved.rstd[static_cast<size_t>(s)];
    if (dgamma || dbeta) {
      for (int64_t i = 0; i < d; ++i) {
        const double xhat = (static_cast<double>(xr[i]) - mean) * rstd;
        if (dgamma) (*dgamma)[i] += static_cast<T>(static_cast<double>(dyr[i]) * xhat);
        if (dbeta) (*dbeta)[i] += dyr[i];
      }
    }
    if (dx) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        const double xhat = (static_cast<double>(xr[i]) - mean) * rstd;
        const double dxhat = static_cast<double>(dyr[i]) * static_cast<double>(gamma[i]);
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      T* dxr = dx->data() + s * d;
      for (int64_t i = 0; i < d; ++i) {
        const double xhat = (static_cast<double>(xr[i]) - mean) * rstd;
        const double dxhat = static_cast<double>(dyr[i]) * static_cast<double>(gamma[i]);
        dxr[i] += static_cast<T>(rstd * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (x[i] > T(0)) dx[i] += dy[i];
  }
}

// tanh-form gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
// These two constants define the function bit-exactly.
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubicCoef = 0.044715;

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    const double u = kGeluSqrt2OverPi * (v + kGeluCubicCoef * v * v * v);
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
  }
  return y;
}

template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x[i]);
    const double u = kGeluSqrt2OverPi * (v + kGeluCubicCoef * v * v * v);
    const double th = std::tanh(u);
    const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubicCoef * v * v);
    const double grad = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    dx[i] += static_cast<T>(grad * static_cast<double>(dy[i]));
  }
}

// ---------------------------------------------------------------------------
// mean over the token axis: x[..., L, d] -> [..., d]

template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  if (x.rank() < 2) throw Error::shape("mean_tokens expects rank >= 2");
  const int64_t d = x.extent(-1);
  const int64_t l = x.extent(-2);
  const int64_t prefix = x.numel() / (l * d);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  out_shape.push_back(d);
  Tensor<T> y(out_shape);
  const T inv = T(1) / static_cast<T>(l);
  for (int64_t p = 0; p < prefix; ++p) {
    T* yr = y.data() + p * d;
    for (int64_t t = 0; t < l; ++t) {
      const T* xr = x.data() + (p * l + t) * d;
      for (int64_t j = 0; j < d; ++j) yr[j] += xr[j];
    }
    for (int64_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  return y;
}

template <typename T>
void mean_tokens_backward(int64_t l, const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t d = dy.extent(-1);
  const int64_t prefix = dy.numel() / d;
  const T inv = T(1) / static_cast<T>(l);
  for (int64_t p = 0; p < prefix; ++p) {
    const T* dyr = dy.data() + p * d;
    for (int64_t t = 0; t < l; ++t) {
      T* dxr = dx.data() + (p * l + t) * d;
      for (int64_t j = 0; j < d; ++j) dxr[j] += dyr[j] * inv;
    }
  }
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
T mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!pred.same_shape(target)) {
    throw Error::shape("mse shape mismatch: " + shape_str(pred.shape()) + " vs " +
                       shape_str(target.shape()));
  }
  double acc = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return static_cast<T>(acc / static_cast<double>(pred.numel()));
}

template <typename T>
void mse_backward(const Tensor<T>& pred, const Tensor<T>& target, T dloss, Tensor<T>& dpred) {
  const T scale = T(2) * dloss / static_cast<T>(pred.numel());
  for (int64_t i = 0; i < pred.numel(); ++i) dpred[i] += scale * (pred[i] - target[i]);
}

// logits[N,C] with 0-based labels; returns mean over rows of -log softmax[label].
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>& softmax_saved) {
  if (logits.rank() != 2) throw Error::shape("cross_entropy expects logits[N,C]");
  const int64_t n = logits.extent(0), c = logits.extent(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw Error::shape("cross_entropy label count mismatch");
  }
  softmax_saved = softmax(logits);
  double acc = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const int lab = labels[static_cast<size_t>(r)];
    if (lab < 0 || lab >= c) throw Error::data("cross_entropy label out of range");
    const T* xr = logits.data() + r * c;
    T mx = xr[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
    double lse = 0.0;
    for (int64_t i = 0; i < c; ++i) lse += std::exp(static_cast<double>(xr[i] - mx));
    lse = std::log(lse) + static_cast<double>(mx);
    acc += lse - static_cast<double>(xr[lab]);
  }
  return static_cast<T>(acc / static_cast<double>(n));
}

template <typename T>
void cross_entropy_backward(const Tensor<T>& softmax_saved, const std::vector<int>& labels,
                            T dloss, Tensor<T>& dlogits) {
  const int64_t n = softmax_saved.extent(0), c = softmax_saved.extent(1);
  const T scale = dloss / static_cast<T>(n);
  for (int64_t r = 0; r < n; ++r) {
    const T* sr = softmax_saved.data() + r * c;
    T* dr = dlogits.data() + r * c;
    const int lab = labels[static_cast<size_t>(r)];
    for (int64_t i = 0; i < c; ++i) {
      dr[i] += scale * (sr[i] - (i == lab ? T(1) : T(0)));
    }
  }
}

// ---------------------------------------------------------------------------
// data movement

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw Error::shape("transpose2d expects rank-2");
  const int64_t m = x.extent(0), n = x.extent(1);
  Tensor<T> y({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  }
  return y;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw Error::shape("permute rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) {
      throw Error::shape("permute axes must name each axis exactly once");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> in_strides(static_cast<size_t>(r)), out_strides(static_cast<size_t>(r));
  int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<size_t>(i)] = s;
    s *= x.extent(i);
  }
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.extent(perm[static_cast<size_t>(i)]);
  s = 1;
  for (int i = r - 1; i >= 0; --i) {
    out_strides[static_cast<size_t>(i)] = s;
    s *= out_shape[static_cast<size_t>(i)];
  }
  Tensor<T> y(out_shape);
  const int64_t total = x.numel();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  for (int64_t flat = 0; flat < total; ++flat) {
    int64_t rem = flat;
    int64_t src = 0;
    for (int i = 0; i < r; ++i) {
      const int64_t coord = rem / out_strides[static_cast<size_t>(i)];
      rem %= out_strides[static_cast<size_t>(i)];
      src += coord * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    y[flat] = x[src];
  }
  return y;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

// y = x with y[..., index, :] = v (v broadcast over leading dims)
template <typename T>
Tensor<T> replace_token(const Tensor<T>& x, int64_t index, const Tensor<T>& v) {
  if (x.rank() < 2) throw Error::shape("replace_token expects rank >= 2");
  const int64_t d = x.extent(-1);
  const int64_t l = x.extent(-2);
  if (index < 0 || index >= l) throw Error::shape("replace_token index out of range");
  if (v.numel() != d) throw Error::shape("replace_token vector length mismatch");
  Tensor<T> y = x;
  const int64_t prefix = x.numel() / (l * d);
  for (int64_t p = 0; p < prefix; ++p) {
    T* row = y.data() + (p * l + index) * d;
    for (int64_t j = 0; j < d; ++j) row[j] = v[j];
  }
  return y;
}

// y[..., d] = x[..., index, :]
template <typename T>
Tensor<T> select_token(const Tensor<T>& x, int64_t index) {
  if (x.rank() < 2) throw Error::shape("select_token expects rank >= 2");
  const int64_t d = x.extent(-1);
  const int64_t l = x.extent(-2);
  if (index < 0 || index >= l) throw Error::shape("select_token index out of range");
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  out_shape.push_back(d);
  Tensor<T> y(out_shape);
  const int64_t prefix = x.numel() / (l * d);
  for (int64_t p = 0; p < prefix; ++p) {
    const T* row = x.data() + (p * l + index) * d;
    T* yr = y.data() + p * d;
    for (int64_t j = 0; j < d; ++j) yr[j] = row[j];
  }
  return y;
}

// Inverted-dropout mask with keep-probability 1-rate; elements come from the
// counter RNG so the mask depends only on (seed, step, site, index).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, uint64_t seed, uint64_t step,
                       uint64_t site) {
  Tensor<T> mask(shape);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.numel(); ++i) {
    mask[i] = counter_uniform(seed, step, site, static_cast<uint64_t>(i)) >= rate ? keep_scale
                                                                                  : T(0);
  }
  return mask;
}

}  // namespace mct::kernels
