#pragma once

// Trainable layers assembled from tape primitives. Every layer comes as a
// pair of helpers: add_*_params registers parameters under a prefix,
// bind_* resolves them to tape vars for one forward pass.

#include <string>
#include <utility>
#include <vector>

#include "fuseser/params.hpp"
#include "fuseser/tape.hpp"

namespace fuseser {

// Dropout context threaded through layers; nullptr rng or rate 0 disables.
template <typename T>
struct DropoutCtx {
  T rate = T(0);
  Rng* rng = nullptr;

  Var apply(Tape<T>& tp, Var x) const {
    if (!rng || rate <= T(0)) return x;
    return tp.dropout(x, rate, *rng);
  }
};

// --- linear -----------------------------------------------------------------

struct LinearVars {
  Var w, b;
};

template <typename T>
void add_linear_params(ParamSet<T>& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.add(prefix + ".w", in, out, Init::Glorot, rng);
  ps.add(prefix + ".b", 1, out, Init::Zeros, rng);
}

template <typename T>
LinearVars bind_linear(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".w"), b(prefix + ".b")};
}

template <typename T>
Var linear(Tape<T>& tp, Var x, const LinearVars& v) {
  return tp.add_rowvec(tp.matmul(x, v.w), v.b);
}

// --- multi-head attention -----------------------------------------------

struct MhaVars {
  LinearVars q, k, v, o;
};

// Per-head row-stochastic attention matrices from one forward pass.
template <typename T>
struct AttentionWeights {
  int heads = 0;
  std::vector<Mat<T>> per_head;  // each queries x keys
};

template <typename T>
void add_mha_params(ParamSet<T>& ps, const std::string& prefix, int dim, Rng& rng) {
  add_linear_params(ps, prefix + ".q", dim, dim, rng);
  add_linear_params(ps, prefix + ".k", dim, dim, rng);
  add_linear_params(ps, prefix + ".v", dim, dim, rng);
  add_linear_params(ps, prefix + ".o", dim, dim, rng);
}

template <typename T>
MhaVars bind_mha(const Bound<T>& b, const std::string& prefix) {
  return {bind_linear(b, prefix + ".q"), bind_linear(b, prefix + ".k"),
          bind_linear(b, prefix + ".v"), bind_linear(b, prefix + ".o")};
}

// Scaled dot-product attention, heads concatenated then output-projected.
// Self-attention when q == k == v, cross-attention otherwise.
template <typename T>
Var multihead_attention(Tape<T>& tp, Var q, Var k, Var v, int heads, const MhaVars& mv,
                        AttentionWeights<T>* attn_out = nullptr) {
  const int dim = tp.val(q).cols;
  if (tp.val(k).cols != dim || tp.val(v).cols != dim)
    throw ConfigError("multihead_attention: q/k/v feature dims differ (" +
                      tp.val(q).shape_str() + ", " + tp.val(k).shape_str() + ", " +
                      tp.val(v).shape_str() + ")");
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("multihead_attention: model dim " + std::to_string(dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  const int hd = dim / heads;
  const T scale = T(1) / std::sqrt(T(hd));

  const Var qp = linear(tp, q, mv.q);
  const Var kp = linear(tp, k, mv.k);
  const Var vp = linear(tp, v, mv.v);

  if (attn_out) {
    attn_out->heads = heads;
    attn_out->per_head.clear();
  }
  Var merged;
  for (int h = 0; h < heads; ++h) {
    const Var qh = tp.slice_cols(qp, h * hd, (h + 1) * hd);
    const Var kh = tp.slice_cols(kp, h * hd, (h + 1) * hd);
    const Var vh = tp.slice_cols(vp, h * hd, (h + 1) * hd);
    const Var scores = tp.affine_scalar(tp.matmul_nt(qh, kh), scale, T(0));
    const Var attn = tp.softmax_rows(scores);
    if (attn_out) attn_out->per_head.push_back(tp.val(attn));
    const Var oh = tp.matmul(attn, vh);
    merged = h == 0 ? oh : tp.concat_cols(merged, oh);
  }
  return linear(tp, merged, mv.o);
}

// --- transformer encoder layer (pre-norm) ------------------------------------

struct TransformerVars {
  Var ln1_g, ln1_b, ln2_g, ln2_b;
  MhaVars mha;
  LinearVars ffn1, ffn2;
};

template <typename T>
void add_transformer_params(ParamSet<T>& ps, const std::string& prefix, int dim, Rng& rng) {
  ps.add(prefix + ".ln1.g", 1, dim, Init::Ones, rng);
  ps.add(prefix + ".ln1.b", 1, dim, Init::Zeros, rng);
  ps.add(prefix + ".ln2.g", 1, dim, Init::Ones, rng);
  ps.add(prefix + ".ln2.b", 1, dim, Init::Zeros, rng);
  add_mha_params(ps, prefix + ".mha", dim, rng);
  add_linear_params(ps, prefix + ".ffn1", dim, 4 * dim, rng);
  add_linear_params(ps, prefix + ".ffn2", 4 * dim, dim, rng);
}

template <typename T>
TransformerVars bind_transformer(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".ln1.g"),          b(prefix + ".ln1.b"),
          b(prefix + ".ln2.g"),          b(prefix + ".ln2.b"),
          bind_mha(b, prefix + ".mha"),  bind_linear(b, prefix + ".ffn1"),
          bind_linear(b, prefix + ".ffn2")};
}

// x + MHA(LN(x)), then + FFN(LN(.)); FFN hidden is 4x the model dim.
template <typename T>
Var transformer_encoder_layer(Tape<T>& tp, Var x, int heads, const TransformerVars& tv,
                              const DropoutCtx<T>& drop = {},
                              AttentionWeights<T>* attn_out = nullptr) {
  const Var n1 = tp.layernorm_rows(x, tv.ln1_g, tv.ln1_b);
  const Var att = multihead_attention(tp, n1, n1, n1, heads, tv.mha, attn_out);
  const Var y = tp.add(x, drop.apply(tp, att));
  const Var n2 = tp.layernorm_rows(y, tv.ln2_g, tv.ln2_b);
  const Var ff = linear(tp, tp.relu(linear(tp, n2, tv.ffn1)), tv.ffn2);
  return tp.add(y, drop.apply(tp, ff));
}

// --- bidirectional GRU -----------------------------------------------------

struct GruDirVars {
  Var wz, uz, bz, wr, ur, br, wh, uh, bh;
};

struct BiGruVars {
  GruDirVars fwd, bwd;
};

template <typename T>
void add_gru_dir_params(ParamSet<T>& ps, const std::string& prefix, int in, int hidden, Rng& rng) {
  for (const char* gate : {"z", "r", "h"}) {
    ps.add(prefix + ".w" + gate, in, hidden, Init::Glorot, rng);
    ps.add(prefix + ".u" + gate, hidden, hidden, Init::Glorot, rng);
    ps.add(prefix + ".b" + gate, 1, hidden, Init::Zeros, rng);
  }
}

template <typename T>
void add_bigru_params(ParamSet<T>& ps, const std::string& prefix, int in, int hidden, Rng& rng) {
  add_gru_dir_params(ps, prefix + ".fwd", in, hidden, rng);
  add_gru_dir_params(ps, prefix + ".bwd", in, hidden, rng);
}

template <typename T>
GruDirVars bind_gru_dir(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".wz"), b(prefix + ".uz"), b(prefix + ".bz"),
          b(prefix + ".wr"), b(prefix + ".ur"), b(prefix + ".br"),
          b(prefix + ".wh"), b(prefix + ".uh"), b(prefix + ".bh")};
}

template <typename T>
BiGruVars bind_bigru(const Bound<T>& b, const std::string& prefix) {
  return {bind_gru_dir(b, prefix + ".fwd"), bind_gru_dir(b, prefix + ".bwd")};
}

// One direction of the GRU recurrence, initial hidden state zero:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   hc = tanh(x Wh + (r .* h) Uh + bh)
//   h' = z .* h + (1 - z) .* hc
template <typename T>
std::vector<Var> gru_direction(Tape<T>& tp, Var x, int hidden, const GruDirVars& gv,
                               bool reverse) {
  const int steps = tp.val(x).rows;
  Var h = tp.constant(Mat<T>::zeros(1, hidden));
  std::vector<Var> outputs(steps);
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const Var xt = tp.slice_rows(x, t, t + 1);
    const Var z = tp.sigmoid(
        tp.add_rowvec(tp.add(tp.matmul(xt, gv.wz), tp.matmul(h, gv.uz)), gv.bz));
    const Var r = tp.sigmoid(
        tp.add_rowvec(tp.add(tp.matmul(xt, gv.wr), tp.matmul(h, gv.ur)), gv.br));
    const Var hc = tp.tanh_act(
        tp.add_rowvec(tp.add(tp.matmul(xt, gv.wh), tp.matmul(tp.mul(r, h), gv.uh)), gv.bh));
    h = tp.add(tp.mul(z, h), tp.mul(tp.affine_scalar(z, T(-1), T(1)), hc));
    outputs[t] = h;
  }
  return outputs;
}

// Forward and backward passes concatenated per frame: T x (2 * hidden).
template <typename T>
Var bigru(Tape<T>& tp, Var x, int hidden, const BiGruVars& gv) {
  if (hidden < 1) throw ConfigError("bigru: hidden size must be >= 1");
  const auto fwd = gru_direction(tp, x, hidden, gv.fwd, false);
  const auto bwd = gru_direction(tp, x, hidden, gv.bwd, true);
  return tp.concat_cols(tp.stack_rows(fwd), tp.stack_rows(bwd));
}

// --- graph attention --------------------------------------------------------

struct GatVars {
  Var w, a_src, a_dst;
};

template <typename T>
void add_gat_params(ParamSet<T>& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.add(prefix + ".w", in, out, Init::Glorot, rng);
  ps.add(prefix + ".a_src", out, 1, Init::Glorot, rng);
  ps.add(prefix + ".a_dst", out, 1, Init::Glorot, rng);
}

template <typename T>
GatVars bind_gat(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".w"), b(prefix + ".a_src"), b(prefix + ".a_dst")};
}

// Directed edge (i, j): node i attends to neighbor j.
using Adjacency = std::vector<std::pair<int, int>>;

inline Adjacency full_adjacency(int n) {
  Adjacency adj;
  adj.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) adj.emplace_back(i, j);
  return adj;
}

// Single-head graph attention:
//   e_ij = LeakyReLU_0.2(a_src . Wh_i + a_dst . Wh_j)   for j in N(i)
//   alpha_i. = softmax over N(i),  h'_i = ELU(sum_j alpha_ij Wh_j)
template <typename T>
Var gat_layer(Tape<T>& tp, Var x, const Adjacency& adj, const GatVars& gv,
              Mat<T>* attn_out = nullptr) {
  const int n = tp.val(x).rows;
  std::vector<char> has_self(n, 0);
  std::vector<int> degree(n, 0);
  Mat<T> mask = Mat<T>::filled(n, n, T(-1e30));
  for (const auto& [i, j] : adj) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      throw ConfigError("gat_layer: edge (" + std::to_string(i) + "," + std::to_string(j) +
                        ") outside " + std::to_string(n) + " nodes");
    mask.at(i, j) = T(0);
    ++degree[i];
    if (i == j) has_self[i] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (degree[i] == 0)
      throw ConfigError("gat_layer: node " + std::to_string(i) + " has no neighbors");
    if (!has_self[i])
      throw ConfigError("gat_layer: node " + std::to_string(i) + " is missing its self-loop");
  }

  const Var h = tp.matmul(x, gv.w);
  const Var src = tp.matmul(h, gv.a_src);  // n x 1
  const Var dst = tp.matmul(h, gv.a_dst);  // n x 1
  const Var scores = tp.leaky_relu(tp.outer_add_cols(src, dst), T(0.2));
  const Var masked = tp.add(scores, tp.constant(std::move(mask)));
  const Var attn = tp.softmax_rows(masked);
  if (attn_out) *attn_out = tp.val(attn);
  return tp.elu(tp.matmul(attn, h));
}

// --- SwiGLU MLP --------------------------------------------------------

struct SwigluVars {
  LinearVars gate, up, out;
};

template <typename T>
void add_swiglu_params(ParamSet<T>& ps, const std::string& prefix, int in, int hidden, int out,
                       Rng& rng) {
  add_linear_params(ps, prefix + ".gate", in, hidden, rng);
  add_linear_params(ps, prefix + ".up", in, hidden, rng);
  add_linear_params(ps, prefix + ".out", hidden, out, rng);
}

template <typename T>
SwigluVars bind_swiglu(const Bound<T>& b, const std::string& prefix) {
  return {bind_linear(b, prefix + ".gate"), bind_linear(b, prefix + ".up"),
          bind_linear(b, prefix + ".out")};
}

// (Swish(x Wg + bg) .* (x Wu + bu)) Wo + bo
template <typename T>
Var swiglu_mlp(Tape<T>& tp, Var x, const SwigluVars& sv) {
  const Var gate = tp.swish(linear(tp, x, sv.gate));
  const Var up = linear(tp, x, sv.up);
  return linear(tp, tp.mul(gate, up), sv.out);
}

// --- pooling ----------------------------------------------------------------

struct AttentivePoolVars {
  Var w, b, u;
};

template <typename T>
void add_attentive_pool_params(ParamSet<T>& ps, const std::string& prefix, int dim, Rng& rng) {
  ps.add(prefix + ".w", dim, dim, Init::Glorot, rng);
  ps.add(prefix + ".b", 1, dim, Init::Zeros, rng);
  ps.add(prefix + ".u", dim, 1, Init::Glorot, rng);
}

template <typename T>
AttentivePoolVars bind_attentive_pool(const Bound<T>& b, const std::string& prefix) {
  return {b(prefix + ".w"), b(prefix + ".b"), b(prefix + ".u")};
}

// scores s_t = u . tanh(W x_t + b); output = sum_t softmax(s)_t x_t
template <typename T>
Var attentive_pool(Tape<T>& tp, Var x, const AttentivePoolVars& pv) {
  const Var scores = tp.matmul(tp.tanh_act(tp.add_rowvec(tp.matmul(x, pv.w), pv.b)), pv.u);
  const Var weights = tp.softmax_rows(tp.transpose(scores));  // 1 x T
  return tp.matmul(weights, x);
}

template <typename T>
Var mean_pool(Tape<T>& tp, Var x) {
  return tp.mean_rows(x);
}

}  // namespace fuseser
