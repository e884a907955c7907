#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "keynet/rng.hpp"
#include "keynet/tensor.hpp"

namespace keynet {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  }
}

inline void check_2d(const Tensor& t, const char* op) {
  if (t.shape.size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " +
                                shape_str(t.shape));
  }
}

inline Tensor make_out(Shape s, bool track) {
  Tensor out = Tensor::zeros(std::move(s), track);
  if (track) out.node = std::make_shared<TensorNode>();
  return out;
}

inline void accumulate(Tensor& parent, std::size_t i, double g) {
  (*parent.grad)[i] += g;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  const bool track = a.requires_grad || b.requires_grad;
  Tensor out = detail::make_out(a.shape, track);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (track) {
    out.node->parents = {a, b};
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const std::size_t m = o.numel();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = (*o.grad)[i];
        if (pa.requires_grad) detail::accumulate(pa, i, g);
        if (pb.requires_grad) detail::accumulate(pb, i, g);
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  const bool track = a.requires_grad || b.requires_grad;
  Tensor out = detail::make_out(a.shape, track);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (track) {
    out.node->parents = {a, b};
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const std::size_t m = o.numel();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = (*o.grad)[i];
        if (pa.requires_grad) detail::accumulate(pa, i, g);
        if (pb.requires_grad) detail::accumulate(pb, i, -g);
      }
    };
  }
  return out;
}

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  const bool track = a.requires_grad || b.requires_grad;
  Tensor out = detail::make_out(a.shape, track);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  if (track) {
    out.node->parents = {a, b};
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pb = o.node->parents[1];
      const std::size_t m = o.numel();
      for (std::size_t i = 0; i < m; ++i) {
        const double g = (*o.grad)[i];
        if (pa.requires_grad) detail::accumulate(pa, i, g * (*pb.data)[i]);
        if (pb.requires_grad) detail::accumulate(pb, i, g * (*pa.data)[i]);
      }
    };
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [c](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      const std::size_t m = o.numel();
      for (std::size_t i = 0; i < m; ++i)
        detail::accumulate(pa, i, (*o.grad)[i] * c);
    };
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape) +
                                " x " + shape_str(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  const bool track = a.requires_grad || b.requires_grad;
  Tensor out = detail::make_out({m, n}, track);
  const double* pa = a.data->data();
  const double* pb = b.data->data();
  double* po = out.data->data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (track) {
    out.node->parents = {a, b};
    out.node->backward = [m, k, n](Tensor& o) {
      Tensor& A = o.node->parents[0];
      Tensor& B = o.node->parents[1];
      const double* g = o.grad->data();
      if (A.requires_grad) {
        // dA = g . B^T
        double* ga = A.grad->data();
        const double* pb2 = B.data->data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = pb2 + kk * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
      }
      if (B.requires_grad) {
        // dB = A^T . g
        double* gb = B.grad->data();
        const double* pa2 = A.data->data();
        for (int i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (int kk = 0; kk < k; ++kk) {
            const double av = pa2[i * k + kk];
            if (av == 0.0) continue;
            double* gbrow = gb + kk * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::check_2d(a, "transpose");
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = detail::make_out({n, m}, a.requires_grad);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) (*out.data)[j * m + i] = (*a.data)[i * n + j];
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [m, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          (*pa.grad)[i * n + j] += (*o.grad)[j * m + i];
    };
  }
  return out;
}

inline Tensor row_slice(const Tensor& a, int r0, int nrows) {
  detail::check_2d(a, "row_slice");
  if (r0 < 0 || nrows <= 0 || r0 + nrows > a.shape[0]) {
    throw std::invalid_argument("row_slice: rows [" + std::to_string(r0) + "," +
                                std::to_string(r0 + nrows) + ") of " +
                                shape_str(a.shape));
  }
  const int n = a.shape[1];
  Tensor out = detail::make_out({nrows, n}, a.requires_grad);
  std::copy_n(a.data->data() + static_cast<std::size_t>(r0) * n,
              static_cast<std::size_t>(nrows) * n, out.data->data());
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [r0, nrows, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (std::size_t i = 0; i < static_cast<std::size_t>(nrows) * n; ++i)
        (*pa.grad)[static_cast<std::size_t>(r0) * n + i] += (*o.grad)[i];
    };
  }
  return out;
}

inline Tensor col_slice(const Tensor& a, int c0, int ncols) {
  detail::check_2d(a, "col_slice");
  if (c0 < 0 || ncols <= 0 || c0 + ncols > a.shape[1]) {
    throw std::invalid_argument("col_slice: cols [" + std::to_string(c0) + "," +
                                std::to_string(c0 + ncols) + ") of " +
                                shape_str(a.shape));
  }
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = detail::make_out({m, ncols}, a.requires_grad);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < ncols; ++j)
      (*out.data)[i * ncols + j] = (*a.data)[i * n + c0 + j];
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [c0, ncols, m, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < ncols; ++j)
          (*pa.grad)[i * n + c0 + j] += (*o.grad)[i * ncols + j];
    };
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int n = parts[0].cols();
  int m = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    detail::check_2d(p, "concat_rows");
    if (p.shape[1] != n) {
      throw std::invalid_argument("concat_rows: column mismatch " +
                                  shape_str(parts[0].shape) + " vs " +
                                  shape_str(p.shape));
    }
    m += p.shape[0];
    track = track || p.requires_grad;
  }
  Tensor out = detail::make_out({m, n}, track);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data->data(), p.numel(), out.data->data() + off);
    off += p.numel();
  }
  if (track) {
    out.node->parents = parts;
    out.node->backward = [](Tensor& o) {
      std::size_t off2 = 0;
      for (Tensor& p : o.node->parents) {
        if (p.requires_grad) {
          for (std::size_t i = 0; i < p.numel(); ++i)
            (*p.grad)[i] += (*o.grad)[off2 + i];
        }
        off2 += p.numel();
      }
    };
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    detail::check_2d(p, "concat_cols");
    if (p.shape[0] != m) {
      throw std::invalid_argument("concat_cols: row mismatch " +
                                  shape_str(parts[0].shape) + " vs " +
                                  shape_str(p.shape));
    }
    n += p.shape[1];
    track = track || p.requires_grad;
  }
  Tensor out = detail::make_out({m, n}, track);
  int c0 = 0;
  for (const Tensor& p : parts) {
    const int pc = p.shape[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < pc; ++j)
        (*out.data)[i * n + c0 + j] = (*p.data)[i * pc + j];
    c0 += pc;
  }
  if (track) {
    out.node->parents = parts;
    out.node->backward = [m, n](Tensor& o) {
      int c = 0;
      for (Tensor& p : o.node->parents) {
        const int pc = p.shape[1];
        if (p.requires_grad) {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
              (*p.grad)[i * pc + j] += (*o.grad)[i * n + c + j];
        }
        c += pc;
      }
    };
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_out({1}, a.requires_grad);
  double acc = 0.0;
  for (double v : *a.data) acc += v;
  (*out.data)[0] = acc;
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      const double g = (*o.grad)[0];
      for (double& gv : *pa.grad) gv += g;
    };
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum(a), inv);
}

// a [m x n] + v broadcast over rows; v is [n] or [1 x n].
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  detail::check_2d(a, "add_rowvec");
  const int m = a.shape[0], n = a.shape[1];
  if (static_cast<int>(v.numel()) != n) {
    throw std::invalid_argument("add_rowvec: shape mismatch " +
                                shape_str(a.shape) + " vs " +
                                shape_str(v.shape));
  }
  const bool track = a.requires_grad || v.requires_grad;
  Tensor out = detail::make_out({m, n}, track);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      (*out.data)[i * n + j] = (*a.data)[i * n + j] + (*v.data)[j];
  if (track) {
    out.node->parents = {a, v};
    out.node->backward = [m, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pv = o.node->parents[1];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = (*o.grad)[i * n + j];
          if (pa.requires_grad) (*pa.grad)[i * n + j] += g;
          if (pv.requires_grad) (*pv.grad)[j] += g;
        }
    };
  }
  return out;
}

// Softmax over the last dimension, max-subtracted for stability.
inline Tensor softmax_lastdim(const Tensor& a) {
  if (a.shape.empty() || a.shape.back() < 1) {
    throw std::invalid_argument("softmax_lastdim: bad shape " +
                                shape_str(a.shape));
  }
  const int n = a.shape.back();
  const std::size_t outer = a.numel() / static_cast<std::size_t>(n);
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* x = a.data->data() + o * n;
    double* y = out.data->data() + o * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < n; ++j) y[j] /= z;
  }
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [n, outer](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (std::size_t s = 0; s < outer; ++s) {
        const double* y = o.data->data() + s * n;
        const double* g = o.grad->data() + s * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += y[j] * g[j];
        double* gx = pa.grad->data() + s * n;
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return out;
}

// Row-wise softmax over the columns flagged valid. Rows see the same key
// mask; a row with no valid key comes out all-zero instead of NaN.
inline Tensor masked_softmax_rows(const Tensor& a,
                                  const std::vector<char>& key_valid) {
  detail::check_2d(a, "masked_softmax_rows");
  const int m = a.shape[0], n = a.shape[1];
  if (static_cast<int>(key_valid.size()) != n) {
    throw std::invalid_argument("masked_softmax_rows: mask length " +
                                std::to_string(key_valid.size()) + " for " +
                                shape_str(a.shape));
  }
  bool any_valid = false;
  for (char c : key_valid) any_valid = any_valid || (c != 0);
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  if (any_valid) {
    for (int i = 0; i < m; ++i) {
      const double* x = a.data->data() + static_cast<std::size_t>(i) * n;
      double* y = out.data->data() + static_cast<std::size_t>(i) * n;
      double mx = -1e300;
      for (int j = 0; j < n; ++j)
        if (key_valid[j]) mx = std::max(mx, x[j]);
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        if (key_valid[j]) {
          y[j] = std::exp(x[j] - mx);
          z += y[j];
        } else {
          y[j] = 0.0;
        }
      }
      for (int j = 0; j < n; ++j) y[j] /= z;
    }
  }
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [m, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (int i = 0; i < m; ++i) {
        const double* y = o.data->data() + static_cast<std::size_t>(i) * n;
        const double* g = o.grad->data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += y[j] * g[j];
        double* gx = pa.grad->data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    };
  }
  return out;
}

// Layer normalization over the last dimension with learned gain and bias.
inline Tensor layer_norm(const Tensor& a, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  if (a.shape.empty()) {
    throw std::invalid_argument("layer_norm: scalar input");
  }
  const int n = a.shape.back();
  if (static_cast<int>(gain.numel()) != n ||
      static_cast<int>(bias.numel()) != n) {
    throw std::invalid_argument("layer_norm: gain/bias " +
                                shape_str(gain.shape) + "/" +
                                shape_str(bias.shape) + " for last extent " +
                                std::to_string(n));
  }
  const std::size_t outer = a.numel() / static_cast<std::size_t>(n);
  const bool track =
      a.requires_grad || gain.requires_grad || bias.requires_grad;
  Tensor out = detail::make_out(a.shape, track);
  std::vector<double> mus(outer), inv_sigmas(outer);
  for (std::size_t s = 0; s < outer; ++s) {
    const double* x = a.data->data() + s * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= n;
    const double inv_sigma = 1.0 / std::sqrt(var + eps);
    mus[s] = mu;
    inv_sigmas[s] = inv_sigma;
    double* y = out.data->data() + s * n;
    for (int j = 0; j < n; ++j)
      y[j] = (x[j] - mu) * inv_sigma * (*gain.data)[j] + (*bias.data)[j];
  }
  if (track) {
    out.node->parents = {a, gain, bias};
    out.node->backward = [n, outer, mus, inv_sigmas](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      Tensor& pg = o.node->parents[1];
      Tensor& pb = o.node->parents[2];
      for (std::size_t s = 0; s < outer; ++s) {
        const double* x = pa.data->data() + s * n;
        const double* g = o.grad->data() + s * n;
        const double mu = mus[s], inv_sigma = inv_sigmas[s];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          const double xhat = (x[j] - mu) * inv_sigma;
          const double dxhat = g[j] * (*pg.data)[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (pg.requires_grad) (*pg.grad)[j] += g[j] * xhat;
          if (pb.requires_grad) (*pb.grad)[j] += g[j];
        }
        if (pa.requires_grad) {
          double* gx = pa.grad->data() + s * n;
          for (int j = 0; j < n; ++j) {
            const double xhat = (x[j] - mu) * inv_sigma;
            const double dxhat = g[j] * (*pg.data)[j];
            gx[j] += inv_sigma *
                     (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
          }
        }
      }
    };
  }
  return out;
}

// Exact-erf GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (*a.data)[i];
    (*out.data)[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double x = (*pa.data)[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        (*pa.grad)[i] += (*o.grad)[i] * (cdf + x * pdf);
      }
    };
  }
  return out;
}

// Inverted dropout keyed off (seed, counter, element); identical seeds give
// identical masks, so training runs are reproducible.
inline Tensor dropout(const Tensor& a, double rate, std::uint64_t seed,
                      std::uint64_t counter) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::size_t n = a.numel();
  std::vector<char> keep(n);
  for (std::size_t i = 0; i < n; ++i)
    keep[i] = hash_uniform(seed, counter, i) >= rate ? 1 : 0;
  Tensor out = detail::make_out(a.shape, a.requires_grad);
  for (std::size_t i = 0; i < n; ++i)
    (*out.data)[i] = keep[i] ? (*a.data)[i] * keep_scale : 0.0;
  if (a.requires_grad) {
    out.node->parents = {a};
    out.node->backward = [keep, keep_scale, n](Tensor& o) {
      Tensor& pa = o.node->parents[0];
      for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) (*pa.grad)[i] += (*o.grad)[i] * keep_scale;
    };
  }
  return out;
}

// Row gather from an embedding table. Row 0 is the padding row: it is never
// written by the backward pass, which keeps it frozen at its initial zeros.
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  detail::check_2d(table, "embedding_rows");
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                  " outside vocabulary of " +
                                  std::to_string(v));
    }
  }
  const int m = static_cast<int>(ids.size());
  Tensor out = detail::make_out({m, d}, table.requires_grad);
  for (int i = 0; i < m; ++i)
    std::copy_n(table.data->data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data->data() + static_cast<std::size_t>(i) * d);
  if (table.requires_grad) {
    out.node->parents = {table};
    out.node->backward = [ids, d](Tensor& o) {
      Tensor& pt = o.node->parents[0];
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == 0) continue;
        const double* g = o.grad->data() + i * d;
        double* gt = pt.grad->data() + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) gt[j] += g[j];
      }
    };
  }
  return out;
}

// Mean-reduced cross entropy for single-label rows, log-sum-exp form.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& labels) {
  detail::check_2d(logits, "cross_entropy");
  const int m = logits.shape[0], c = logits.shape[1];
  if (static_cast<int>(labels.size()) != m) {
    throw std::invalid_argument("cross_entropy: " +
                                std::to_string(labels.size()) +
                                " labels for " + shape_str(logits.shape));
  }
  for (int l : labels) {
    if (l < 0 || l >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                  " outside [0," + std::to_string(c) + ")");
    }
  }
  Tensor out = detail::make_out({1}, logits.requires_grad);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* x = logits.data->data() + static_cast<std::size_t>(i) * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    total += mx + std::log(z) - x[labels[i]];
  }
  (*out.data)[0] = total / m;
  if (logits.requires_grad) {
    out.node->parents = {logits};
    out.node->backward = [labels, m, c](Tensor& o) {
      Tensor& pl = o.node->parents[0];
      const double g = (*o.grad)[0] / m;
      for (int i = 0; i < m; ++i) {
        const double* x = pl.data->data() + static_cast<std::size_t>(i) * c;
        double* gx = pl.grad->data() + static_cast<std::size_t>(i) * c;
        double mx = x[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        for (int j = 0; j < c; ++j) {
          const double p = std::exp(x[j] - mx) / z;
          gx[j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
        }
      }
    };
  }
  return out;
}

// Mean-reduced binary cross entropy on logits, softplus form. `row_mask`
// (optional) drops whole rows from the mean, e.g. padded actors.
inline Tensor bce_with_logits(const Tensor& logits,
                              const std::vector<double>& targets,
                              const std::vector<char>& row_mask = {}) {
  detail::check_2d(logits, "bce_with_logits");
  const int m = logits.shape[0], c = logits.shape[1];
  if (targets.size() != logits.numel()) {
    throw std::invalid_argument("bce_with_logits: " +
                                std::to_string(targets.size()) +
                                " targets for " + shape_str(logits.shape));
  }
  for (double t : targets) {
    if (t != 0.0 && t != 1.0) {
      throw std::invalid_argument("bce_with_logits: target " +
                                  std::to_string(t) + " not in {0,1}");
    }
  }
  if (!row_mask.empty() && static_cast<int>(row_mask.size()) != m) {
    throw std::invalid_argument("bce_with_logits: row mask length " +
                                std::to_string(row_mask.size()) + " for " +
                                shape_str(logits.shape));
  }
  std::size_t counted = 0;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    for (int j = 0; j < c; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * c + j;
      const double x = (*logits.data)[k];
      const double t = targets[k];
      total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
      ++counted;
    }
  }
  if (counted == 0) {
    throw std::invalid_argument("bce_with_logits: all rows masked");
  }
  Tensor out = detail::make_out({1}, logits.requires_grad);
  (*out.data)[0] = total / static_cast<double>(counted);
  if (logits.requires_grad) {
    out.node->parents = {logits};
    out.node->backward = [targets, row_mask, m, c, counted](Tensor& o) {
      Tensor& pl = o.node->parents[0];
      const double g = (*o.grad)[0] / static_cast<double>(counted);
      for (int i = 0; i < m; ++i) {
        if (!row_mask.empty() && !row_mask[i]) continue;
        for (int j = 0; j < c; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * c + j;
          const double x = (*pl.data)[k];
          const double sigma = 1.0 / (1.0 + std::exp(-x));
          (*pl.grad)[k] += g * (sigma - targets[k]);
        }
      }
    };
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace keynet
