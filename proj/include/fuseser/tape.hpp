#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "fuseser/common.hpp"
#include "fuseser/kernels.hpp"
#include "fuseser/mat.hpp"

namespace fuseser {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Mat<T>. Each op records its output value plus a
// backward closure; backward() walks the node list in reverse. One tape per
// forward pass; tapes are never shared between threads.
template <typename T>
class Tape {
public:
  Var leaf(Mat<T> value, bool needs_grad = true) {
    return push(std::move(value), needs_grad, nullptr);
  }
  Var constant(Mat<T> value) { return leaf(std::move(value), false); }

  const Mat<T>& val(Var v) const { return nodes_[v.id].val; }

  // Gradient of the last backward() root w.r.t. v; zeros if v is unreached.
  Mat<T> grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Mat<T>::zeros(n.val.rows, n.val.cols);
    return n.grad;
  }

  // nullptr when no gradient reached v
  const Mat<T>* grad_ptr(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var root) {
    Node& r = nodes_[root.id];
    if (r.val.rows != 1 || r.val.cols != 1)
      throw ConfigError("backward: root must be a 1x1 scalar, got " + r.val.shape_str());
    grad_buf(root.id) = Mat<T>::filled(1, 1, T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.needs_grad && !n.grad.empty()) n.back(*this);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // --- arithmetic -----------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    if (A.cols != B.rows)
      throw ConfigError("matmul: inner dims differ, " + A.shape_str() + " vs " + B.shape_str());
    Mat<T> out(A.rows, B.cols);
    kernels::gemm_nn(A.data(), B.data(), out.data(), A.rows, A.cols, B.cols, false);
    return push(std::move(out), any_grad({a, b}), [a, b, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      const Mat<T>& A = t.val(a);
      const Mat<T>& B = t.val(b);
      if (t.wants_grad(a)) {
        Mat<T>& ga = t.grad_buf_shaped(a);
        kernels::gemm_nt(g.data(), B.data(), ga.data(), g.rows, g.cols, B.rows, true);
      }
      if (t.wants_grad(b)) {
        Mat<T>& gb = t.grad_buf_shaped(b);
        kernels::gemm_tn(A.data(), g.data(), gb.data(), A.cols, A.rows, g.cols, true);
      }
    });
  }

  // A * B^T, with B given row-major as [n x k]
  Var matmul_nt(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    if (A.cols != B.cols)
      throw ConfigError("matmul_nt: inner dims differ, " + A.shape_str() + " vs " + B.shape_str());
    Mat<T> out(A.rows, B.rows);
    kernels::gemm_nt(A.data(), B.data(), out.data(), A.rows, A.cols, B.rows, false);
    return push(std::move(out), any_grad({a, b}), [a, b, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      const Mat<T>& A = t.val(a);
      const Mat<T>& B = t.val(b);
      if (t.wants_grad(a)) {
        Mat<T>& ga = t.grad_buf_shaped(a);
        kernels::gemm_nn(g.data(), B.data(), ga.data(), g.rows, g.cols, B.cols, true);
      }
      if (t.wants_grad(b)) {
        Mat<T>& gb = t.grad_buf_shaped(b);
        kernels::gemm_tn(g.data(), A.data(), gb.data(), g.cols, g.rows, A.cols, true);
      }
    });
  }

  Var add(Var a, Var b) { return binary_same_shape(a, b, "add", [](T x, T y) { return x + y; },
                                                   T(1), T(1)); }
  Var sub(Var a, Var b) { return binary_same_shape(a, b, "sub", [](T x, T y) { return x - y; },
                                                   T(1), T(-1)); }

  Var mul(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    if (!A.same_shape(B))
      throw ConfigError("mul: shape mismatch, " + A.shape_str() + " vs " + B.shape_str());
    Mat<T> out(A.rows, A.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = A.v[i] * B.v[i];
    return push(std::move(out), any_grad({a, b}), [a, b, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      const Mat<T>& A = t.val(a);
      const Mat<T>& B = t.val(b);
      if (t.wants_grad(a)) {
        Mat<T>& ga = t.grad_buf_shaped(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * B.v[i];
      }
      if (t.wants_grad(b)) {
        Mat<T>& gb = t.grad_buf_shaped(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] += g.v[i] * A.v[i];
      }
    });
  }

  // y[i,:] = x[i,:] + b, b is 1 x cols
  Var add_rowvec(Var x, Var b) {
    const Mat<T>& X = val(x);
    const Mat<T>& B = val(b);
    if (B.rows != 1 || B.cols != X.cols)
      throw ConfigError("add_rowvec: bias " + B.shape_str() + " does not broadcast over " +
                        X.shape_str());
    Mat<T> out(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i)
      for (int j = 0; j < X.cols; ++j) out.at(i, j) = X.at(i, j) + B.at(0, j);
    return push(std::move(out), any_grad({x, b}), [x, b, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      if (t.wants_grad(x)) {
        Mat<T>& gx = t.grad_buf_shaped(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i];
      }
      if (t.wants_grad(b)) {
        Mat<T>& gb = t.grad_buf_shaped(b);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
      }
    });
  }

  // y = alpha * x + beta, elementwise with scalar constants
  Var affine_scalar(Var x, T alpha, T beta) {
    const Mat<T>& X = val(x);
    Mat<T> out(X.rows, X.cols);
    for (std::size_t i = 0; i < X.size(); ++i) out.v[i] = alpha * X.v[i] + beta;
    return push(std::move(out), any_grad({x}), [x, alpha, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      if (!t.wants_grad(x)) return;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += alpha * g.v[i];
    });
  }

  // --- activations ----------------------------------------------------------

  Var sigmoid(Var x) {
    return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                 [](T /*in*/, T out) { return out * (T(1) - out); });
  }

  Var tanh_act(Var x) {
    return unary(x, [](T v) { return std::tanh(v); },
                 [](T /*in*/, T out) { return T(1) - out * out; });
  }

  Var relu(Var x) {
    return unary(x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T in, T /*out*/) { return in > T(0) ? T(1) : T(0); });
  }

  Var leaky_relu(Var x, T slope) {
    return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
                 [slope](T in, T /*out*/) { return in > T(0) ? T(1) : slope; });
  }

  Var elu(Var x, T alpha = T(1)) {
    return unary(x, [alpha](T v) { return v > T(0) ? v : alpha * (std::exp(v) - T(1)); },
                 [alpha](T in, T out) { return in > T(0) ? T(1) : out + alpha; });
  }

  // swish(v) = v * sigmoid(v)
  Var swish(Var x) {
    return unary(x, [](T v) { return v / (T(1) + std::exp(-v)); },
                 [](T in, T /*out*/) {
                   const T s = T(1) / (T(1) + std::exp(-in));
                   return s + in * s * (T(1) - s);
                 });
  }

  // --- row-wise normalizers -------------------------------------------------

  Var softmax_rows(Var x) {
    const Mat<T>& X = val(x);
    Mat<T> out(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i) {
      T mx = X.at(i, 0);
      for (int j = 1; j < X.cols; ++j) mx = std::max(mx, X.at(i, j));
      T sum = T(0);
      for (int j = 0; j < X.cols; ++j) {
        const T e = std::exp(X.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < X.cols; ++j) out.at(i, j) /= sum;
    }
    return push(std::move(out), any_grad({x}), [x, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      const Mat<T>& y = t.nodes_[out_id].val;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (int i = 0; i < y.rows; ++i) {
        T dot = T(0);
        for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    });
  }

  Var layernorm_rows(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat<T>& X = val(x);
    const Mat<T>& G = val(gamma);
    const Mat<T>& B = val(beta);
    if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
      throw ConfigError("layernorm_rows: scale/shift must be 1x" + std::to_string(X.cols));
    const int D = X.cols;
    Mat<T> out(X.rows, D);
    Mat<T> xhat(X.rows, D);
    std::vector<T> inv_std(X.rows);
    for (int i = 0; i < X.rows; ++i) {
      T mean = T(0);
      for (int j = 0; j < D; ++j) mean += X.at(i, j);
      mean /= T(D);
      T var = T(0);
      for (int j = 0; j < D; ++j) {
        const T d = X.at(i, j) - mean;
        var += d * d;
      }
      var /= T(D);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      for (int j = 0; j < D; ++j) {
        const T xh = (X.at(i, j) - mean) * is;
        xhat.at(i, j) = xh;
        out.at(i, j) = G.at(0, j) * xh + B.at(0, j);
      }
    }
    return push(std::move(out), any_grad({x, gamma, beta}),
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 out_id = next_id()](Tape& t) {
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  const Mat<T>& G = t.val(gamma);
                  const int D = g.cols;
                  if (t.wants_grad(gamma)) {
                    Mat<T>& gg = t.grad_buf_shaped(gamma);
                    for (int i = 0; i < g.rows; ++i)
                      for (int j = 0; j < D; ++j) gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
                  }
                  if (t.wants_grad(beta)) {
                    Mat<T>& gb = t.grad_buf_shaped(beta);
                    for (int i = 0; i < g.rows; ++i)
                      for (int j = 0; j < D; ++j) gb.at(0, j) += g.at(i, j);
                  }
                  if (t.wants_grad(x)) {
                    Mat<T>& gx = t.grad_buf_shaped(x);
                    for (int i = 0; i < g.rows; ++i) {
                      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                      for (int j = 0; j < D; ++j) {
                        const T dxh = g.at(i, j) * G.at(0, j);
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat.at(i, j);
                      }
                      for (int j = 0; j < D; ++j) {
                        const T dxh = g.at(i, j) * G.at(0, j);
                        gx.at(i, j) += inv_std[i] / T(D) *
                                       (T(D) * dxh - sum_dxhat - xhat.at(i, j) * sum_dxhat_xhat);
                      }
                    }
                  }
                });
  }

  // Per-column batch norm over the row (time) axis. Training mode normalizes
  // by batch stats and reports them via *stats_out; eval mode uses the given
  // running stats as constants.
  Var batchnorm_cols(Var x, Var gamma, Var beta, const Mat<T>& running_mean,
                     const Mat<T>& running_var, bool training,
                     std::pair<Mat<T>, Mat<T>>* stats_out = nullptr, T eps = T(1e-5)) {
    const Mat<T>& X = val(x);
    const int N = X.rows, C = X.cols;
    const Mat<T>& G = val(gamma);
    const Mat<T>& B = val(beta);
    if (G.cols != C || B.cols != C)
      throw ConfigError("batchnorm_cols: scale/shift must be 1x" + std::to_string(C));
    Mat<T> mean(1, C), var(1, C);
    if (training) {
      for (int j = 0; j < C; ++j) {
        T m = T(0);
        for (int i = 0; i < N; ++i) m += X.at(i, j);
        m /= T(N);
        T v = T(0);
        for (int i = 0; i < N; ++i) {
          const T d = X.at(i, j) - m;
          v += d * d;
        }
        mean.at(0, j) = m;
        var.at(0, j) = v / T(N);
      }
      if (stats_out) *stats_out = {mean, var};
    } else {
      mean = running_mean;
      var = running_var;
    }
    Mat<T> out(N, C);
    Mat<T> xhat(N, C);
    std::vector<T> inv_std(C);
    for (int j = 0; j < C; ++j) inv_std[j] = T(1) / std::sqrt(var.at(0, j) + eps);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < C; ++j) {
        const T xh = (X.at(i, j) - mean.at(0, j)) * inv_std[j];
        xhat.at(i, j) = xh;
        out.at(i, j) = G.at(0, j) * xh + B.at(0, j);
      }
    return push(std::move(out), any_grad({x, gamma, beta}),
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), training,
                 out_id = next_id()](Tape& t) {
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  const Mat<T>& G = t.val(gamma);
                  const int N = g.rows, C = g.cols;
                  if (t.wants_grad(gamma)) {
                    Mat<T>& gg = t.grad_buf_shaped(gamma);
                    for (int i = 0; i < N; ++i)
                      for (int j = 0; j < C; ++j) gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
                  }
                  if (t.wants_grad(beta)) {
                    Mat<T>& gb = t.grad_buf_shaped(beta);
                    for (int i = 0; i < N; ++i)
                      for (int j = 0; j < C; ++j) gb.at(0, j) += g.at(i, j);
                  }
                  if (t.wants_grad(x)) {
                    Mat<T>& gx = t.grad_buf_shaped(x);
                    if (training) {
                      for (int j = 0; j < C; ++j) {
                        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                        for (int i = 0; i < N; ++i) {
                          const T dxh = g.at(i, j) * G.at(0, j);
                          sum_dxhat += dxh;
                          sum_dxhat_xhat += dxh * xhat.at(i, j);
                        }
                        for (int i = 0; i < N; ++i) {
                          const T dxh = g.at(i, j) * G.at(0, j);
                          gx.at(i, j) += inv_std[j] / T(N) *
                                         (T(N) * dxh - sum_dxhat - xhat.at(i, j) * sum_dxhat_xhat);
                        }
                      }
                    } else {
                      for (int i = 0; i < N; ++i)
                        for (int j = 0; j < C; ++j)
                          gx.at(i, j) += g.at(i, j) * G.at(0, j) * inv_std[j];
                    }
                  }
                });
  }

  // --- shape ops --------------------------------------------------------

  Var concat_cols(Var a, Var b) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    if (A.rows != B.rows)
      throw ConfigError("concat_cols: row mismatch, " + A.shape_str() + " vs " + B.shape_str());
    Mat<T> out(A.rows, A.cols + B.cols);
    for (int i = 0; i < A.rows; ++i) {
      for (int j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j);
      for (int j = 0; j < B.cols; ++j) out.at(i, A.cols + j) = B.at(i, j);
    }
    return push(std::move(out), any_grad({a, b}),
                [a, b, ac = A.cols, out_id = next_id()](Tape& t) {
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  if (t.wants_grad(a)) {
                    Mat<T>& ga = t.grad_buf_shaped(a);
                    for (int i = 0; i < ga.rows; ++i)
                      for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(i, j);
                  }
                  if (t.wants_grad(b)) {
                    Mat<T>& gb = t.grad_buf_shaped(b);
                    for (int i = 0; i < gb.rows; ++i)
                      for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, ac + j);
                  }
                });
  }

  Var stack_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ConfigError("stack_rows: no inputs");
    const int cols = val(parts[0]).cols;
    int rows = 0;
    bool ng = false;
    for (Var p : parts) {
      if (val(p).cols != cols)
        throw ConfigError("stack_rows: column mismatch, " + val(p).shape_str() + " vs 1x" +
                          std::to_string(cols));
      rows += val(p).rows;
      ng = ng || nodes_[p.id].needs_grad;
    }
    Mat<T> out(rows, cols);
    int r = 0;
    for (Var p : parts) {
      const Mat<T>& P = val(p);
      std::copy(P.v.begin(), P.v.end(), out.v.begin() + static_cast<std::size_t>(r) * cols);
      r += P.rows;
    }
    return push(std::move(out), ng, [parts, cols, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      int r = 0;
      for (Var p : parts) {
        const int pr = t.val(p).rows;
        if (t.wants_grad(p)) {
          Mat<T>& gp = t.grad_buf_shaped(p);
          for (int i = 0; i < pr; ++i)
            for (int j = 0; j < cols; ++j) gp.at(i, j) += g.at(r + i, j);
        }
        r += pr;
      }
    });
  }

  Var slice_rows(Var x, int r0, int r1) {
    const Mat<T>& X = val(x);
    if (r0 < 0 || r1 > X.rows || r0 >= r1)
      throw ConfigError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                        ") out of " + X.shape_str());
    Mat<T> out(r1 - r0, X.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < X.cols; ++j) out.at(i - r0, j) = X.at(i, j);
    return push(std::move(out), any_grad({x}), [x, r0, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gx.at(r0 + i, j) += g.at(i, j);
    });
  }

  Var slice_cols(Var x, int c0, int c1) {
    const Mat<T>& X = val(x);
    if (c0 < 0 || c1 > X.cols || c0 >= c1)
      throw ConfigError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                        ") out of " + X.shape_str());
    Mat<T> out(X.rows, c1 - c0);
    for (int i = 0; i < X.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = X.at(i, j);
    return push(std::move(out), any_grad({x}), [x, c0, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gx.at(i, c0 + j) += g.at(i, j);
    });
  }

  Var transpose(Var x) {
    const Mat<T>& X = val(x);
    Mat<T> out(X.cols, X.rows);
    for (int i = 0; i < X.rows; ++i)
      for (int j = 0; j < X.cols; ++j) out.at(j, i) = X.at(i, j);
    return push(std::move(out), any_grad({x}), [x, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) gx.at(j, i) += g.at(i, j);
    });
  }

  // --- reductions -------------------------------------------------------

  Var mean_rows(Var x) {
    const Mat<T>& X = val(x);
    Mat<T> out(1, X.cols);
    for (int j = 0; j < X.cols; ++j) {
      T s = T(0);
      for (int i = 0; i < X.rows; ++i) s += X.at(i, j);
      out.at(0, j) = s / T(X.rows);
    }
    return push(std::move(out), any_grad({x}), [x, n = X.rows, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (int i = 0; i < gx.rows; ++i)
        for (int j = 0; j < gx.cols; ++j) gx.at(i, j) += g.at(0, j) / T(n);
    });
  }

  Var sum_all(Var x) {
    const Mat<T>& X = val(x);
    T s = T(0);
    for (const T& e : X.v) s += e;
    return push(Mat<T>::filled(1, 1, s), any_grad({x}), [x, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const T g = t.nodes_[out_id].grad.at(0, 0);
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (auto& e : gx.v) e += g;
    });
  }

  // y[i,j] = s[i,0] + d[j,0]; pairwise score grid for graph attention
  Var outer_add_cols(Var s, Var d) {
    const Mat<T>& S = val(s);
    const Mat<T>& D = val(d);
    if (S.cols != 1 || D.cols != 1)
      throw ConfigError("outer_add_cols: expects column vectors, got " + S.shape_str() + " and " +
                        D.shape_str());
    Mat<T> out(S.rows, D.rows);
    for (int i = 0; i < S.rows; ++i)
      for (int j = 0; j < D.rows; ++j) out.at(i, j) = S.at(i, 0) + D.at(j, 0);
    return push(std::move(out), any_grad({s, d}), [s, d, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      if (t.wants_grad(s)) {
        Mat<T>& gs = t.grad_buf_shaped(s);
        for (int i = 0; i < g.rows; ++i) {
          T acc = T(0);
          for (int j = 0; j < g.cols; ++j) acc += g.at(i, j);
          gs.at(i, 0) += acc;
        }
      }
      if (t.wants_grad(d)) {
        Mat<T>& gd = t.grad_buf_shaped(d);
        for (int j = 0; j < g.cols; ++j) {
          T acc = T(0);
          for (int i = 0; i < g.rows; ++i) acc += g.at(i, j);
          gd.at(j, 0) += acc;
        }
      }
    });
  }

  // --- lookup / conv ------------------------------------------------------

  Var gather_rows(Var table, std::vector<int> indices) {
    const Mat<T>& Tb = val(table);
    for (std::size_t i = 0; i < indices.size(); ++i)
      if (indices[i] < 0 || indices[i] >= Tb.rows)
        throw DataError("gather_rows: index " + std::to_string(indices[i]) + " at position " +
                        std::to_string(i) + " outside table with " + std::to_string(Tb.rows) +
                        " rows");
    Mat<T> out(static_cast<int>(indices.size()), Tb.cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (int j = 0; j < Tb.cols; ++j) out.at(static_cast<int>(i), j) = Tb.at(indices[i], j);
    return push(std::move(out), any_grad({table}),
                [table, indices = std::move(indices), out_id = next_id()](Tape& t) {
                  if (!t.wants_grad(table)) return;
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  Mat<T>& gt = t.grad_buf_shaped(table);
                  for (std::size_t i = 0; i < indices.size(); ++i)
                    for (int j = 0; j < g.cols; ++j)
                      gt.at(indices[i], j) += g.at(static_cast<int>(i), j);
                });
  }

  // Length-preserving 1D convolution over the row (time) axis. x is
  // [T x in_ch], w is [ksize*in_ch x out_ch] (tap-major), b is [1 x out_ch];
  // ksize must be odd, input zero-padded by ksize/2 on each side.
  Var conv1d_same(Var x, Var w, Var b, int ksize) {
    const Mat<T>& X = val(x);
    const Mat<T>& W = val(w);
    const Mat<T>& B = val(b);
    if (ksize % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd");
    const int in_ch = X.cols;
    if (W.rows != ksize * in_ch)
      throw ConfigError("conv1d_same: weight " + W.shape_str() + " does not match kernel " +
                        std::to_string(ksize) + " x in_ch " + std::to_string(in_ch));
    const int out_ch = W.cols;
    if (B.rows != 1 || B.cols != out_ch)
      throw ConfigError("conv1d_same: bias must be 1x" + std::to_string(out_ch));
    const int half = ksize / 2;
    const int n = X.rows;
    Mat<T> out(n, out_ch);
    for (int t0 = 0; t0 < n; ++t0)
      for (int o = 0; o < out_ch; ++o) {
        T acc = B.at(0, o);
        for (int dk = 0; dk < ksize; ++dk) {
          const int src = t0 + dk - half;
          if (src < 0 || src >= n) continue;
          for (int ci = 0; ci < in_ch; ++ci)
            acc += X.at(src, ci) * W.at(dk * in_ch + ci, o);
        }
        out.at(t0, o) = acc;
      }
    return push(std::move(out), any_grad({x, w, b}),
                [x, w, b, ksize, half, in_ch, out_ch, n, out_id = next_id()](Tape& t) {
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  const Mat<T>& X = t.val(x);
                  const Mat<T>& W = t.val(w);
                  if (t.wants_grad(b)) {
                    Mat<T>& gb = t.grad_buf_shaped(b);
                    for (int i = 0; i < n; ++i)
                      for (int o = 0; o < out_ch; ++o) gb.at(0, o) += g.at(i, o);
                  }
                  if (t.wants_grad(w)) {
                    Mat<T>& gw = t.grad_buf_shaped(w);
                    for (int t0 = 0; t0 < n; ++t0)
                      for (int dk = 0; dk < ksize; ++dk) {
                        const int src = t0 + dk - half;
                        if (src < 0 || src >= n) continue;
                        for (int ci = 0; ci < in_ch; ++ci)
                          for (int o = 0; o < out_ch; ++o)
                            gw.at(dk * in_ch + ci, o) += X.at(src, ci) * g.at(t0, o);
                      }
                  }
                  if (t.wants_grad(x)) {
                    Mat<T>& gx = t.grad_buf_shaped(x);
                    for (int t0 = 0; t0 < n; ++t0)
                      for (int dk = 0; dk < ksize; ++dk) {
                        const int src = t0 + dk - half;
                        if (src < 0 || src >= n) continue;
                        for (int ci = 0; ci < in_ch; ++ci) {
                          T acc = T(0);
                          for (int o = 0; o < out_ch; ++o)
                            acc += W.at(dk * in_ch + ci, o) * g.at(t0, o);
                          gx.at(src, ci) += acc;
                        }
                      }
                  }
                });
  }

  // Inverted dropout; identity when rate == 0. Caller passes the training
  // stream so masks are a function of seed, never of scheduling.
  Var dropout(Var x, T rate, Rng& rng) {
    if (rate <= T(0)) return x;
    const Mat<T>& X = val(x);
    const T keep = T(1) - rate;
    Mat<T> mask(X.rows, X.cols);
    for (auto& m : mask.v) m = (rng.uniform() < static_cast<double>(rate)) ? T(0) : T(1) / keep;
    Mat<T> out(X.rows, X.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = X.v[i] * mask.v[i];
    return push(std::move(out), any_grad({x}),
                [x, mask = std::move(mask), out_id = next_id()](Tape& t) {
                  if (!t.wants_grad(x)) return;
                  const Mat<T>& g = t.nodes_[out_id].grad;
                  Mat<T>& gx = t.grad_buf_shaped(x);
                  for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += g.v[i] * mask.v[i];
                });
  }

  // --- losses ---------------------------------------------------------------

  // -w * log softmax(logits)[target]; logits is 1 x K
  Var weighted_ce(Var logits, int target, T weight) {
    const Mat<T>& L = val(logits);
    if (L.rows != 1) throw ConfigError("weighted_ce: logits must be a row vector");
    if (target < 0 || target >= L.cols)
      throw DataError("weighted_ce: target " + std::to_string(target) + " outside " +
                      std::to_string(L.cols) + " classes");
    const T lse = log_sum_exp(L);
    const T loss = -weight * (L.at(0, target) - lse);
    return push(Mat<T>::filled(1, 1, loss), any_grad({logits}),
                [logits, target, weight, lse, out_id = next_id()](Tape& t) {
                  if (!t.wants_grad(logits)) return;
                  const T g = t.nodes_[out_id].grad.at(0, 0);
                  const Mat<T>& L = t.val(logits);
                  Mat<T>& gl = t.grad_buf_shaped(logits);
                  for (int j = 0; j < L.cols; ++j) {
                    const T p = std::exp(L.at(0, j) - lse);
                    gl.at(0, j) += g * weight * (p - (j == target ? T(1) : T(0)));
                  }
                });
  }

  // -w * (1 - p_t)^gamma * log p_t; reduces exactly to weighted_ce at gamma=0
  Var focal_loss(Var logits, int target, T weight, T gamma) {
    if (gamma < T(0)) throw ConfigError("focal_loss: gamma must be >= 0");
    if (gamma == T(0)) return weighted_ce(logits, target, weight);
    const Mat<T>& L = val(logits);
    if (L.rows != 1) throw ConfigError("focal_loss: logits must be a row vector");
    if (target < 0 || target >= L.cols)
      throw DataError("focal_loss: target " + std::to_string(target) + " outside " +
                      std::to_string(L.cols) + " classes");
    const T lse = log_sum_exp(L);
    const T log_pt = L.at(0, target) - lse;
    const T pt = std::exp(log_pt);
    const T q = std::max(T(1) - pt, T(0));
    const T loss = -weight * std::pow(q, gamma) * log_pt;
    return push(Mat<T>::filled(1, 1, loss), any_grad({logits}),
                [logits, target, weight, gamma, lse, log_pt, pt, q, out_id = next_id()](Tape& t) {
                  if (!t.wants_grad(logits)) return;
                  const T g = t.nodes_[out_id].grad.at(0, 0);
                  const Mat<T>& L = t.val(logits);
                  Mat<T>& gl = t.grad_buf_shaped(logits);
                  // dL/dp_t, then chain through softmax
                  const T dL_dpt = weight * (gamma * std::pow(q, gamma - T(1)) * log_pt -
                                             (pt > T(0) ? std::pow(q, gamma) / pt : T(0)));
                  for (int j = 0; j < L.cols; ++j) {
                    const T pj = std::exp(L.at(0, j) - lse);
                    const T dpt_dxj = pt * ((j == target ? T(1) : T(0)) - pj);
                    gl.at(0, j) += g * dL_dpt * dpt_dxj;
                  }
                });
  }

  // Extension point for tests that need a custom node (for example a
  // deliberately corrupted backward).
  Var push(Mat<T> value, bool needs_grad, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), std::move(back), needs_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool wants_grad(Var v) const { return nodes_[v.id].needs_grad; }

  Mat<T>& grad_buf_shaped(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Mat<T>::zeros(n.val.rows, n.val.cols);
    return n.grad;
  }

private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  int next_id() const { return static_cast<int>(nodes_.size()); }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (nodes_[v.id].needs_grad) return true;
    return false;
  }

  Mat<T>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Mat<T>::zeros(n.val.rows, n.val.cols);
    return n.grad;
  }

  template <typename FwdFn>
  Var binary_same_shape(Var a, Var b, const char* name, FwdFn fn, T da, T db) {
    const Mat<T>& A = val(a);
    const Mat<T>& B = val(b);
    if (!A.same_shape(B))
      throw ConfigError(std::string(name) + ": shape mismatch, " + A.shape_str() + " vs " +
                        B.shape_str());
    Mat<T> out(A.rows, A.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = fn(A.v[i], B.v[i]);
    return push(std::move(out), any_grad({a, b}), [a, b, da, db, out_id = next_id()](Tape& t) {
      const Mat<T>& g = t.nodes_[out_id].grad;
      if (t.wants_grad(a)) {
        Mat<T>& ga = t.grad_buf_shaped(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += da * g.v[i];
      }
      if (t.wants_grad(b)) {
        Mat<T>& gb = t.grad_buf_shaped(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb.v[i] += db * g.v[i];
      }
    });
  }

  template <typename FwdFn, typename DerivFn>
  Var unary(Var x, FwdFn fn, DerivFn deriv) {
    const Mat<T>& X = val(x);
    Mat<T> out(X.rows, X.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = fn(X.v[i]);
    return push(std::move(out), any_grad({x}), [x, deriv, out_id = next_id()](Tape& t) {
      if (!t.wants_grad(x)) return;
      const Mat<T>& g = t.nodes_[out_id].grad;
      const Mat<T>& y = t.nodes_[out_id].val;
      const Mat<T>& X = t.val(x);
      Mat<T>& gx = t.grad_buf_shaped(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx.v[i] += deriv(X.v[i], y.v[i]) * g.v[i];
    });
  }

  static T log_sum_exp(const Mat<T>& row) {
    T mx = row.at(0, 0);
    for (int j = 1; j < row.cols; ++j) mx = std::max(mx, row.at(0, j));
    T s = T(0);
    for (int j = 0; j < row.cols; ++j) s += std::exp(row.at(0, j) - mx);
    return mx + std::log(s);
  }

  std::vector<Node> nodes_;
};

}  // namespace fuseser
