// Copyright 2026 The h2ke Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "h2ke/model.hpp"

#include <cmath>
#include <limits>
#include <optional>

#include "h2ke/kernels.hpp"
#include "h2ke/rng.hpp"

namespace h2ke::model {

// ---------------------------------------------------------------------------
// Configuration

TransformerConfig TransformerConfig::preset(std::string_view name, int vocab_size) {
  TransformerConfig c;
  c.vocab_size = vocab_size;
  if (name == "base") {
    c.n_layers_enc = c.n_layers_dec = 6;
    c.d_model = 512;
    c.n_heads = 8;
    c.d_ff = 2048;
    c.dropout = 0.1;
  } else if (name == "big") {
    c.n_layers_enc = c.n_layers_dec = 6;
    c.d_model = 1024;
    c.n_heads = 16;
    c.d_ff = 4096;
    c.dropout = 0.3;
  } else if (name == "tiny") {
    c.n_layers_enc = c.n_layers_dec = 2;
    c.d_model = 64;
    c.n_heads = 4;
    c.d_ff = 128;
    c.dropout = 0.1;
  } else {
    throw InvalidArgument("unknown model preset '" + std::string(name) +
                          "' (expected base, big or tiny)");
  }
  return c;
}

void TransformerConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw InvalidArgument("d_model must be a positive multiple of n_heads");
  }
  if (d_ff <= 0 || vocab_size <= 0 || max_seq_len <= 0) {
    throw InvalidArgument("d_ff, vocab_size and max_seq_len must be positive");
  }
  if (n_layers_enc < 0 || n_layers_dec < 1) {
    throw InvalidArgument("need n_layers_enc >= 0 and n_layers_dec >= 1");
  }
  if (decoder_only && n_layers_enc != 0) {
    throw InvalidArgument("decoder-only models have no encoder layers");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
}

nlohmann::json TransformerConfig::to_json() const {
  return nlohmann::json{{"n_layers_enc", n_layers_enc},
                        {"n_layers_dec", n_layers_dec},
                        {"d_model", d_model},
                        {"n_heads", n_heads},
                        {"d_ff", d_ff},
                        {"dropout", dropout},
                        {"max_seq_len", max_seq_len},
                        {"vocab_size", vocab_size},
                        {"share_all_embeddings", share_all_embeddings},
                        {"decoder_only", decoder_only}};
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.n_layers_enc = j.at("n_layers_enc");
  c.n_layers_dec = j.at("n_layers_dec");
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.d_ff = j.at("d_ff");
  c.dropout = j.at("dropout");
  c.max_seq_len = j.at("max_seq_len");
  c.vocab_size = j.at("vocab_size");
  c.share_all_embeddings = j.at("share_all_embeddings");
  c.decoder_only = j.value("decoder_only", false);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

enum class Kind { kEmbedding, kWeight, kBias, kGain };

struct LinearIdx {
  int w = -1;
  int b = -1;
};
struct AttnIdx {
  LinearIdx q, k, v, o;
};
struct NormIdx {
  int g = -1;
  int b = -1;
};
struct FfnIdx {
  LinearIdx in, out;
};
struct EncLayerIdx {
  AttnIdx self;
  NormIdx ln1;
  FfnIdx ffn;
  NormIdx ln2;
};
struct DecLayerIdx {
  AttnIdx self;
  NormIdx ln1;
  std::optional<AttnIdx> cross;
  NormIdx ln2;
  FfnIdx ffn;
  NormIdx ln3;  // unused (-1) without cross-attention
};
struct Layout {
  int src_embed = -1;
  int tgt_embed = -1;
  int out_proj = -1;
  std::vector<EncLayerIdx> enc;
  std::vector<DecLayerIdx> dec;
};

// `add(name, rows, cols, kind)` returns the tensor index.
template <typename Add>
Layout make_layout(const TransformerConfig& c, Add&& add) {
  const std::size_t d = c.d_model;
  const std::size_t ff = c.d_ff;
  const std::size_t v = c.vocab_size;
  Layout lay;
  if (c.share_all_embeddings) {
    lay.src_embed = lay.tgt_embed = lay.out_proj = add("embed", v, d, Kind::kEmbedding);
    if (c.decoder_only) lay.src_embed = -1;
  } else {
    if (!c.decoder_only) lay.src_embed = add("src_embed", v, d, Kind::kEmbedding);
    lay.tgt_embed = add("tgt_embed", v, d, Kind::kEmbedding);
    lay.out_proj = add("out_proj", v, d, Kind::kEmbedding);
  }
  auto linear = [&](const std::string& p, std::size_t in, std::size_t out) {
    LinearIdx l;
    l.w = add(p + ".w", in, out, Kind::kWeight);
    l.b = add(p + ".b", 1, out, Kind::kBias);
    return l;
  };
  auto attn = [&](const std::string& p) {
    AttnIdx a;
    a.q = linear(p + ".q", d, d);
    a.k = linear(p + ".k", d, d);
    a.v = linear(p + ".v", d, d);
    a.o = linear(p + ".o", d, d);
    return a;
  };
  auto norm = [&](const std::string& p) {
    NormIdx n;
    n.g = add(p + ".g", 1, d, Kind::kGain);
    n.b = add(p + ".b", 1, d, Kind::kBias);
    return n;
  };
  auto ffn = [&](const std::string& p) {
    FfnIdx f;
    f.in = linear(p + ".in", d, ff);
    f.out = linear(p + ".out", ff, d);
    return f;
  };
  for (int l = 0; l < c.n_layers_enc; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncLayerIdx e;
    e.self = attn(p + ".self_attn");
    e.ln1 = norm(p + ".ln1");
    e.ffn = ffn(p + ".ffn");
    e.ln2 = norm(p + ".ln2");
    lay.enc.push_back(e);
  }
  for (int l = 0; l < c.n_layers_dec; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecLayerIdx e;
    e.self = attn(p + ".self_attn");
    e.ln1 = norm(p + ".ln1");
    if (!c.decoder_only) {
      e.cross = attn(p + ".cross_attn");
      e.ln2 = norm(p + ".ln2");
      e.ffn = ffn(p + ".ffn");
      e.ln3 = norm(p + ".ln3");
    } else {
      e.ffn = ffn(p + ".ffn");
      e.ln2 = norm(p + ".ln2");
    }
    lay.dec.push_back(e);
  }
  return lay;
}

Layout layout_of(const TransformerConfig& c) {
  int next = 0;
  return make_layout(c, [&](const std::string&, std::size_t, std::size_t, Kind) {
    return next++;
  });
}

}  // namespace

template <typename T>
Matrix<T>& ModelParams<T>::source_embedding() {
  const int i = layout_of(config).src_embed;
  if (i < 0) throw InvalidArgument("decoder-only model has no source embedding");
  return tensors[i];
}

template <typename T>
Matrix<T>& ModelParams<T>::target_embedding() {
  return tensors[layout_of(config).tgt_embed];
}

template <typename T>
Matrix<T>& ModelParams<T>::output_projection() {
  return tensors[layout_of(config).out_proj];
}

template <typename T>
const Matrix<T>& ModelParams<T>::output_projection() const {
  return tensors[layout_of(config).out_proj];
}

template <typename T>
ModelParams<T> allocate_params(const TransformerConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  make_layout(config, [&](const std::string& name, std::size_t r, std::size_t c, Kind) {
    return p.tensors.add(name, r, c);
  });
  return p;
}

template <typename T>
ModelParams<T> init_params(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  std::vector<Kind> kinds;
  make_layout(config, [&](const std::string& name, std::size_t r, std::size_t c, Kind k) {
    kinds.push_back(k);
    return p.tensors.add(name, r, c);
  });
  Rng rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    auto& t = p.tensors[i];
    switch (kinds[i]) {
      case Kind::kEmbedding:
        for (auto& x : t.data) x = static_cast<T>(embed_std * rng.normal());
        break;
      case Kind::kWeight: {
        const double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
        for (auto& x : t.data) x = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case Kind::kBias:
        t.fill(T(0));
        break;
      case Kind::kGain:
        t.fill(T(1));
        break;
    }
  }
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = allocate_params<To>(p.config);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const auto& src = p.tensors[i].data;
    auto& dst = out.tensors[i].data;
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<To>(src[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches

Batch Batch::make(const std::vector<std::vector<int>>& sources,
                  const std::vector<std::vector<int>>& targets, std::string id) {
  constexpr int kPad = 0, kBos = 2, kEos = 3;
  if (!sources.empty() && sources.size() != targets.size()) {
    throw InvalidArgument("batch: source/target count mismatch");
  }
  Batch b;
  b.id = std::move(id);
  b.batch_size = targets.size();
  for (const auto& s : sources) b.src_len = std::max(b.src_len, s.size());
  for (const auto& t : targets) b.tgt_len = std::max(b.tgt_len, t.size() + 1);
  b.src.assign(b.batch_size * b.src_len, kPad);
  b.src_mask.assign(b.batch_size * b.src_len, 0);
  b.tgt_in.assign(b.batch_size * b.tgt_len, kPad);
  b.tgt_out.assign(b.batch_size * b.tgt_len, kPad);
  b.tgt_mask.assign(b.batch_size * b.tgt_len, 0);
  for (std::size_t i = 0; i < b.batch_size; ++i) {
    if (!sources.empty()) {
      for (std::size_t j = 0; j < sources[i].size(); ++j) {
        b.src[i * b.src_len + j] = sources[i][j];
        b.src_mask[i * b.src_len + j] = 1;
      }
    }
    const auto& t = targets[i];
    for (std::size_t j = 0; j <= t.size(); ++j) {
      b.tgt_in[i * b.tgt_len + j] = j == 0 ? kBos : t[j - 1];
      b.tgt_out[i * b.tgt_len + j] = j == t.size() ? kEos : t[j];
      b.tgt_mask[i * b.tgt_len + j] = 1;
    }
  }
  return b;
}

std::size_t Batch::target_tokens() const {
  std::size_t n = 0;
  for (auto m : tgt_mask) n += m;
  return n;
}

// ---------------------------------------------------------------------------
// Forward / backward building blocks

namespace {

constexpr double kNormEps = 1e-5;

template <typename T>
using Kernels = kernels::KernelTable<T>;

template <typename T>
void linear_fwd(const Kernels<T>& K, const Matrix<T>& x, const Matrix<T>& w,
                const Matrix<T>& b, Matrix<T>& y) {
  y = Matrix<T>(x.rows, w.cols);
  K.gemm_nn(x.rows, w.cols, x.cols, x.data.data(), x.cols, w.data.data(), w.cols,
            y.data.data(), y.cols, false);
  for (std::size_t i = 0; i < y.rows; ++i) K.axpy(T(1), b.data.data(), y.row(i), y.cols);
}

// dx is accumulated into when non-null.
template <typename T>
void linear_bwd(const Kernels<T>& K, const Matrix<T>& x, const Matrix<T>& w,
                const Matrix<T>& dy, Matrix<T>* dx, Matrix<T>& dw, Matrix<T>& db) {
  if (dx) {
    K.gemm_nt(dy.rows, w.rows, dy.cols, dy.data.data(), dy.cols, w.data.data(), w.cols,
              dx->data.data(), dx->cols, true);
  }
  K.gemm_tn(x.cols, dy.cols, x.rows, x.data.data(), x.cols, dy.data.data(), dy.cols,
            dw.data.data(), dw.cols, true);
  for (std::size_t i = 0; i < dy.rows; ++i) K.axpy(T(1), dy.row(i), db.data.data(), db.cols);
}

template <typename T>
struct DropoutMask {
  std::vector<T> scale;  // empty when inactive
};

template <typename T>
void dropout_fwd(Matrix<T>& x, double p, Rng* rng, DropoutMask<T>* mask) {
  if (!rng || p <= 0.0) return;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> scale(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale[i] = rng->uniform() < p ? T(0) : keep;
    x.data[i] *= scale[i];
  }
  if (mask) mask->scale = std::move(scale);
}

template <typename T>
void dropout_bwd(Matrix<T>& d, const DropoutMask<T>& mask) {
  if (mask.scale.empty()) return;
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] *= mask.scale[i];
}

template <typename T>
struct NormCache {
  Matrix<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
void norm_fwd(const Matrix<T>& x, const Matrix<T>& g, const Matrix<T>& b, Matrix<T>& y,
              NormCache<T>* cache) {
  const std::size_t n = x.cols;
  y = Matrix<T>(x.rows, n);
  if (cache) {
    cache->xhat = Matrix<T>(x.rows, n);
    cache->rstd.assign(x.rows, T(0));
  }
  for (std::size_t i = 0; i < x.rows; ++i) {
    const T* xi = x.row(i);
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
    T* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const T xh = (xi[j] - mean) * rstd;
      if (cache) cache->xhat(i, j) = xh;
      yi[j] = xh * g.data[j] + b.data[j];
    }
    if (cache) cache->rstd[i] = rstd;
  }
}

// Returns dx (fresh matrix).
template <typename T>
Matrix<T> norm_bwd(const Matrix<T>& dy, const Matrix<T>& g, const NormCache<T>& c,
                   Matrix<T>& dg, Matrix<T>& db) {
  const std::size_t n = dy.cols;
  Matrix<T> dx(dy.rows, n);
  std::vector<T> dxh(n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const T* dyi = dy.row(i);
    const T* xh = c.xhat.row(i);
    T mean_d = 0, mean_dx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      dg.data[j] += dyi[j] * xh[j];
      db.data[j] += dyi[j];
      dxh[j] = dyi[j] * g.data[j];
      mean_d += dxh[j];
      mean_dx += dxh[j] * xh[j];
    }
    mean_d /= static_cast<T>(n);
    mean_dx /= static_cast<T>(n);
    T* dxi = dx.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      dxi[j] = c.rstd[i] * (dxh[j] - mean_d - xh[j] * mean_dx);
    }
  }
  return dx;
}

struct AttnShape {
  std::size_t batch = 0;
  std::size_t lq = 0;
  std::size_t lk = 0;
  const std::uint8_t* key_mask = nullptr;  // [batch × lk], may be null
  bool causal = false;
};

template <typename T>
struct AttnCache {
  Matrix<T> xq, xkv, q, k, v, concat;
  std::vector<T> probs;  // softmax output, [batch × heads × lq × lk]
  std::vector<T> kept;   // after dropout
  DropoutMask<T> drop;
};

template <typename T>
Matrix<T> attn_fwd(const Kernels<T>& K, const ModelParams<T>& P, const AttnIdx& ix,
                   const Matrix<T>& xq, const Matrix<T>& xkv, const AttnShape& s,
                   double p_drop, Rng* rng, AttnCache<T>* cache) {
  const auto& t = P.tensors;
  const std::size_t d = xq.cols;
  const std::size_t heads = P.config.n_heads;
  const std::size_t dk = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  Matrix<T> q, k, v;
  linear_fwd(K, xq, t[ix.q.w], t[ix.q.b], q);
  linear_fwd(K, xkv, t[ix.k.w], t[ix.k.b], k);
  linear_fwd(K, xkv, t[ix.v.w], t[ix.v.b], v);

  const std::size_t block = s.lq * s.lk;
  std::vector<T> probs(s.batch * heads * block);
  Matrix<T> concat(s.batch * s.lq, d);
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* sc = probs.data() + (b * heads + h) * block;
      K.gemm_nt(s.lq, s.lk, dk, q.data.data() + b * s.lq * d + h * dk, d,
                k.data.data() + b * s.lk * d + h * dk, d, sc, s.lk, false);
      for (std::size_t i = 0; i < s.lq; ++i) {
        T* row = sc + i * s.lk;
        T mx = kNegInf;
        for (std::size_t j = 0; j < s.lk; ++j) {
          const bool masked = (s.causal && j > i) ||
                              (s.key_mask && s.key_mask[b * s.lk + j] == 0);
          row[j] = masked ? kNegInf : row[j] * scale;
          mx = std::max(mx, row[j]);
        }
        if (mx == kNegInf) {
          std::fill(row, row + s.lk, T(0));
          continue;
        }
        T z = 0;
        for (std::size_t j = 0; j < s.lk; ++j) {
          row[j] = row[j] == kNegInf ? T(0) : std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < s.lk; ++j) row[j] /= z;
      }
    }
  }
  std::vector<T> kept = probs;
  DropoutMask<T> drop;
  if (rng && p_drop > 0.0) {
    Matrix<T> tmp;
    tmp.rows = 1;
    tmp.cols = kept.size();
    tmp.data = std::move(kept);
    dropout_fwd(tmp, p_drop, rng, &drop);
    kept = std::move(tmp.data);
  }
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      K.gemm_nn(s.lq, dk, s.lk, kept.data() + (b * heads + h) * block, s.lk,
                v.data.data() + b * s.lk * d + h * dk, d,
                concat.data.data() + b * s.lq * d + h * dk, d, false);
    }
  }
  Matrix<T> out;
  linear_fwd(K, concat, t[ix.o.w], t[ix.o.b], out);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->probs = std::move(probs);
    cache->kept = std::move(kept);
    cache->drop = std::move(drop);
  }
  return out;
}

// Accumulates into dxq and dxkv (which may alias).
template <typename T>
void attn_bwd(const Kernels<T>& K, const ModelParams<T>& P, ParamSet<T>& G,
              const AttnIdx& ix, const AttnShape& s, const AttnCache<T>& c,
              const Matrix<T>& dout, Matrix<T>& dxq, Matrix<T>& dxkv) {
  const auto& t = P.tensors;
  const std::size_t d = dout.cols;
  const std::size_t heads = P.config.n_heads;
  const std::size_t dk = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const std::size_t block = s.lq * s.lk;

  Matrix<T> dconcat(c.concat.rows, d);
  linear_bwd(K, c.concat, t[ix.o.w], dout, &dconcat, G[ix.o.w], G[ix.o.b]);

  Matrix<T> dq(c.q.rows, d), dk_(c.k.rows, d), dv(c.v.rows, d);
  std::vector<T> dp(block);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = (b * heads + h) * block;
      const T* p = c.probs.data() + off;
      const T* kept = c.kept.data() + off;
      const T* dO = dconcat.data.data() + b * s.lq * d + h * dk;
      K.gemm_nt(s.lq, s.lk, dk, dO, d, c.v.data.data() + b * s.lk * d + h * dk, d,
                dp.data(), s.lk, false);
      K.gemm_tn(s.lk, dk, s.lq, kept, s.lk, dO, d,
                dv.data.data() + b * s.lk * d + h * dk, d, true);
      if (!c.drop.scale.empty()) {
        const T* m = c.drop.scale.data() + off;
        for (std::size_t e = 0; e < block; ++e) dp[e] *= m[e];
      }
      for (std::size_t i = 0; i < s.lq; ++i) {
        T* dr = dp.data() + i * s.lk;
        const T* pr = p + i * s.lk;
        T acc = 0;
        for (std::size_t j = 0; j < s.lk; ++j) acc += dr[j] * pr[j];
        for (std::size_t j = 0; j < s.lk; ++j) dr[j] = pr[j] * (dr[j] - acc) * scale;
      }
      K.gemm_nn(s.lq, dk, s.lk, dp.data(), s.lk,
                c.k.data.data() + b * s.lk * d + h * dk, d,
                dq.data.data() + b * s.lq * d + h * dk, d, false);
      K.gemm_tn(s.lk, dk, s.lq, dp.data(), s.lk,
                c.q.data.data() + b * s.lq * d + h * dk, d,
                dk_.data.data() + b * s.lk * d + h * dk, d, false);
    }
  }
  linear_bwd(K, c.xq, t[ix.q.w], dq, &dxq, G[ix.q.w], G[ix.q.b]);
  linear_bwd(K, c.xkv, t[ix.k.w], dk_, &dxkv, G[ix.k.w], G[ix.k.b]);
  linear_bwd(K, c.xkv, t[ix.v.w], dv, &dxkv, G[ix.v.w], G[ix.v.b]);
}

template <typename T>
struct FfnCache {
  Matrix<T> x, pre, hidden;
  DropoutMask<T> drop;
};

template <typename T>
Matrix<T> ffn_fwd(const Kernels<T>& K, const ModelParams<T>& P, const FfnIdx& ix,
                  const Matrix<T>& x, double p_drop, Rng* rng, FfnCache<T>* cache) {
  const auto& t = P.tensors;
  Matrix<T> pre;
  linear_fwd(K, x, t[ix.in.w], t[ix.in.b], pre);
  Matrix<T> hidden = pre;
  for (auto& h : hidden.data) h = h > T(0) ? h : T(0);
  DropoutMask<T> drop;
  dropout_fwd(hidden, p_drop, rng, &drop);
  Matrix<T> out;
  linear_fwd(K, hidden, t[ix.out.w], t[ix.out.b], out);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->drop = std::move(drop);
  }
  return out;
}

template <typename T>
void ffn_bwd(const Kernels<T>& K, const ModelParams<T>& P, ParamSet<T>& G, const FfnIdx& ix,
             const FfnCache<T>& c, const Matrix<T>& dout, Matrix<T>& dx) {
  const auto& t = P.tensors;
  Matrix<T> dhidden(c.hidden.rows, c.hidden.cols);
  linear_bwd(K, c.hidden, t[ix.out.w], dout, &dhidden, G[ix.out.w], G[ix.out.b]);
  dropout_bwd(dhidden, c.drop);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (c.pre.data[i] <= T(0)) dhidden.data[i] = T(0);
  }
  linear_bwd(K, c.x, t[ix.in.w], dhidden, &dx, G[ix.in.w], G[ix.in.b]);
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
struct EncLayerCache {
  AttnCache<T> attn;
  DropoutMask<T> drop_attn;
  NormCache<T> ln1;
  FfnCache<T> ffn;
  DropoutMask<T> drop_ffn;
  NormCache<T> ln2;
};

template <typename T>
struct DecLayerCache {
  AttnCache<T> self;
  DropoutMask<T> drop_self;
  NormCache<T> ln1;
  AttnCache<T> cross;
  DropoutMask<T> drop_cross;
  NormCache<T> ln2;
  FfnCache<T> ffn;
  DropoutMask<T> drop_ffn;
  NormCache<T> ln3;
};

struct Context {
  double p_drop = 0.0;
  Rng* rng = nullptr;  // null: dropout off
};

template <typename T>
Matrix<T> enc_layer_fwd(const Kernels<T>& K, const ModelParams<T>& P, const EncLayerIdx& ix,
                        const Matrix<T>& x, const AttnShape& s, const Context& ctx,
                        EncLayerCache<T>* c) {
  const auto& t = P.tensors;
  Matrix<T> a = attn_fwd(K, P, ix.self, x, x, s, ctx.p_drop, ctx.rng, c ? &c->attn : nullptr);
  dropout_fwd(a, ctx.p_drop, ctx.rng, c ? &c->drop_attn : nullptr);
  add_inplace(a, x);
  Matrix<T> h;
  norm_fwd(a, t[ix.ln1.g], t[ix.ln1.b], h, c ? &c->ln1 : nullptr);
  Matrix<T> f = ffn_fwd(K, P, ix.ffn, h, ctx.p_drop, ctx.rng, c ? &c->ffn : nullptr);
  dropout_fwd(f, ctx.p_drop, ctx.rng, c ? &c->drop_ffn : nullptr);
  add_inplace(f, h);
  Matrix<T> y;
  norm_fwd(f, t[ix.ln2.g], t[ix.ln2.b], y, c ? &c->ln2 : nullptr);
  return y;
}

template <typename T>
Matrix<T> enc_layer_bwd(const Kernels<T>& K, const ModelParams<T>& P, ParamSet<T>& G,
                        const EncLayerIdx& ix, const AttnShape& s,
                        const EncLayerCache<T>& c, const Matrix<T>& dy) {
  const auto& t = P.tensors;
  Matrix<T> dh = norm_bwd(dy, t[ix.ln2.g], c.ln2, G[ix.ln2.g], G[ix.ln2.b]);
  Matrix<T> df = dh;
  dropout_bwd(df, c.drop_ffn);
  ffn_bwd(K, P, G, ix.ffn, c.ffn, df, dh);
  Matrix<T> dx = norm_bwd(dh, t[ix.ln1.g], c.ln1, G[ix.ln1.g], G[ix.ln1.b]);
  Matrix<T> da = dx;
  dropout_bwd(da, c.drop_attn);
  attn_bwd(K, P, G, ix.self, s, c.attn, da, dx, dx);
  return dx;
}

template <typename T>
Matrix<T> dec_layer_fwd(const Kernels<T>& K, const ModelParams<T>& P, const DecLayerIdx& ix,
                        const Matrix<T>& x, const Matrix<T>* memory, const AttnShape& self_s,
                        const AttnShape& cross_s, const Context& ctx, DecLayerCache<T>* c) {
  const auto& t = P.tensors;
  Matrix<T> a = attn_fwd(K, P, ix.self, x, x, self_s, ctx.p_drop, ctx.rng,
                         c ? &c->self : nullptr);
  dropout_fwd(a, ctx.p_drop, ctx.rng, c ? &c->drop_self : nullptr);
  add_inplace(a, x);
  Matrix<T> h1;
  norm_fwd(a, t[ix.ln1.g], t[ix.ln1.b], h1, c ? &c->ln1 : nullptr);
  Matrix<T> h2;
  NormIdx last = ix.ln2;
  if (ix.cross) {
    Matrix<T> ca = attn_fwd(K, P, *ix.cross, h1, *memory, cross_s, ctx.p_drop, ctx.rng,
                            c ? &c->cross : nullptr);
    dropout_fwd(ca, ctx.p_drop, ctx.rng, c ? &c->drop_cross : nullptr);
    add_inplace(ca, h1);
    norm_fwd(ca, t[ix.ln2.g], t[ix.ln2.b], h2, c ? &c->ln2 : nullptr);
    last = ix.ln3;
  } else {
    h2 = std::move(h1);
  }
  Matrix<T> f = ffn_fwd(K, P, ix.ffn, h2, ctx.p_drop, ctx.rng, c ? &c->ffn : nullptr);
  dropout_fwd(f, ctx.p_drop, ctx.rng, c ? &c->drop_ffn : nullptr);
  add_inplace(f, h2);
  Matrix<T> y;
  norm_fwd(f, t[last.g], t[last.b], y, c ? &c->ln3 : nullptr);
  return y;
}

template <typename T>
Matrix<T> dec_layer_bwd(const Kernels<T>& K, const ModelParams<T>& P, ParamSet<T>& G,
                        const DecLayerIdx& ix, const AttnShape& self_s,
                        const AttnShape& cross_s, const DecLayerCache<T>& c,
                        const Matrix<T>& dy, Matrix<T>* dmemory) {
  const auto& t = P.tensors;
  const NormIdx last = ix.cross ? ix.ln3 : ix.ln2;
  Matrix<T> dh2 = norm_bwd(dy, t[last.g], c.ln3, G[last.g], G[last.b]);
  Matrix<T> df = dh2;
  dropout_bwd(df, c.drop_ffn);
  ffn_bwd(K, P, G, ix.ffn, c.ffn, df, dh2);
  Matrix<T> dh1;
  if (ix.cross) {
    dh1 = norm_bwd(dh2, t[ix.ln2.g], c.ln2, G[ix.ln2.g], G[ix.ln2.b]);
    Matrix<T> dca = dh1;
    dropout_bwd(dca, c.drop_cross);
    attn_bwd(K, P, G, *ix.cross, cross_s, c.cross, dca, dh1, *dmemory);
  } else {
    dh1 = std::move(dh2);
  }
  Matrix<T> dx = norm_bwd(dh1, t[ix.ln1.g], c.ln1, G[ix.ln1.g], G[ix.ln1.b]);
  Matrix<T> da = dx;
  dropout_bwd(da, c.drop_self);
  attn_bwd(K, P, G, ix.self, self_s, c.self, da, dx, dx);
  return dx;
}

template <typename T>
Matrix<T> positional_table(std::size_t len, std::size_t d) {
  Matrix<T> pe(len, d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <typename T>
Matrix<T> embed_fwd(const Matrix<T>& table, const std::vector<int>& ids, std::size_t batch,
                    std::size_t len) {
  const std::size_t d = table.cols;
  const T scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const auto pe = positional_table<T>(len, d);
  Matrix<T> x(batch * len, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < len; ++p) {
      const int id = ids[b * len + p];
      if (id < 0 || static_cast<std::size_t>(id) >= table.rows) {
        throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary");
      }
      const T* e = table.row(id);
      T* xr = x.row(b * len + p);
      for (std::size_t j = 0; j < d; ++j) xr[j] = e[j] * scale + pe(p, j);
    }
  }
  return x;
}

template <typename T>
void embed_bwd(const Kernels<T>& K, const Matrix<T>& dx, const std::vector<int>& ids,
               Matrix<T>& dtable) {
  const T scale = static_cast<T>(std::sqrt(static_cast<double>(dtable.cols)));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    K.axpy(scale, dx.row(r), dtable.row(ids[r]), dtable.cols);
  }
}

template <typename T>
struct ForwardCache {
  std::vector<EncLayerCache<T>> enc;
  Matrix<T> memory;
  std::vector<DecLayerCache<T>> dec;
  Matrix<T> dec_out;
};

void check_lengths(const TransformerConfig& c, const Batch& batch) {
  const auto limit = static_cast<std::size_t>(c.max_seq_len);
  if (batch.src_len > limit || batch.tgt_len > limit) {
    throw InvalidArgument("batch '" + batch.id + "': sequence length " +
                          std::to_string(std::max(batch.src_len, batch.tgt_len)) +
                          " exceeds max_seq_len " + std::to_string(limit));
  }
  if (!c.decoder_only && batch.src_len == 0) {
    throw InvalidArgument("batch '" + batch.id + "': empty source for an encoder-decoder model");
  }
}

// Runs the network; returns logits [batch*tgt_len × vocab].
template <typename T>
Matrix<T> run_forward(const Kernels<T>& K, const ModelParams<T>& P, const Layout& lay,
                      const Batch& batch, const Context& ctx, ForwardCache<T>* cache) {
  const auto& t = P.tensors;
  check_lengths(P.config, batch);
  const AttnShape enc_s{batch.batch_size, batch.src_len, batch.src_len,
                        batch.src_mask.data(), false};
  const AttnShape self_s{batch.batch_size, batch.tgt_len, batch.tgt_len,
                         batch.tgt_mask.data(), true};
  const AttnShape cross_s{batch.batch_size, batch.tgt_len, batch.src_len,
                          batch.src_mask.data(), false};
  Matrix<T> memory;
  if (!P.config.decoder_only) {
    memory = embed_fwd(t[lay.src_embed], batch.src, batch.batch_size, batch.src_len);
    if (cache) cache->enc.resize(lay.enc.size());
    for (std::size_t l = 0; l < lay.enc.size(); ++l) {
      memory = enc_layer_fwd(K, P, lay.enc[l], memory, enc_s, ctx,
                             cache ? &cache->enc[l] : nullptr);
    }
  }
  Matrix<T> y = embed_fwd(t[lay.tgt_embed], batch.tgt_in, batch.batch_size, batch.tgt_len);
  if (cache) cache->dec.resize(lay.dec.size());
  for (std::size_t l = 0; l < lay.dec.size(); ++l) {
    y = dec_layer_fwd(K, P, lay.dec[l], y, &memory, self_s, cross_s, ctx,
                      cache ? &cache->dec[l] : nullptr);
  }
  const auto& out = t[lay.out_proj];
  Matrix<T> logits(y.rows, out.rows);
  K.gemm_nt(y.rows, out.rows, y.cols, y.data.data(), y.cols, out.data.data(), out.cols,
            logits.data.data(), logits.cols, false);
  if (cache) {
    cache->memory = std::move(memory);
    cache->dec_out = std::move(y);
  }
  return logits;
}

template <typename T>
void log_softmax_rows(Matrix<T>& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    T* r = m.row(i);
    T mx = r[0];
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    T z = 0;
    for (std::size_t j = 0; j < m.cols; ++j) z += std::exp(r[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < m.cols; ++j) r[j] -= lse;
  }
}

template <typename T>
void run_backward(const Kernels<T>& K, const ModelParams<T>& P, const Layout& lay,
                  const Batch& batch, const ForwardCache<T>& cache, const Matrix<T>& dlogits,
                  ParamSet<T>& G) {
  const auto& t = P.tensors;
  const AttnShape enc_s{batch.batch_size, batch.src_len, batch.src_len,
                        batch.src_mask.data(), false};
  const AttnShape self_s{batch.batch_size, batch.tgt_len, batch.tgt_len,
                         batch.tgt_mask.data(), true};
  const AttnShape cross_s{batch.batch_size, batch.tgt_len, batch.src_len,
                          batch.src_mask.data(), false};
  const auto& out = t[lay.out_proj];
  const auto& y = cache.dec_out;
  Matrix<T> dy(y.rows, y.cols);
  K.gemm_nn(dlogits.rows, y.cols, dlogits.cols, dlogits.data.data(), dlogits.cols,
            out.data.data(), out.cols, dy.data.data(), dy.cols, false);
  K.gemm_tn(out.rows, out.cols, dlogits.rows, dlogits.data.data(), dlogits.cols,
            y.data.data(), y.cols, G[lay.out_proj].data.data(), out.cols, true);

  Matrix<T> dmemory(cache.memory.rows, cache.memory.cols);
  for (std::size_t l = lay.dec.size(); l-- > 0;) {
    dy = dec_layer_bwd(K, P, G, lay.dec[l], self_s, cross_s, cache.dec[l], dy, &dmemory);
  }
  embed_bwd(K, dy, batch.tgt_in, G[lay.tgt_embed]);
  if (!P.config.decoder_only) {
    for (std::size_t l = lay.enc.size(); l-- > 0;) {
      dmemory = enc_layer_bwd(K, P, G, lay.enc[l], enc_s, cache.enc[l], dmemory);
    }
    embed_bwd(K, dmemory, batch.src, G[lay.src_embed]);
  }
}

template <typename T>
LossResult<T> compute_loss(const ModelParams<T>& params, const Batch& batch,
                           const LossOptions& opt, bool want_grads) {
  const auto& K = kernels::active<T>();
  const Layout lay = layout_of(params.config);
  const double eps = opt.label_smoothing;
  if (!(eps >= 0.0 && eps < 1.0)) throw InvalidArgument("label smoothing must lie in [0, 1)");
  std::optional<Rng> rng;
  if (opt.train_mode && params.config.dropout > 0.0) rng.emplace(opt.dropout_seed);
  const Context ctx{params.config.dropout, rng ? &*rng : nullptr};

  ForwardCache<T> cache;
  Matrix<T> logits = run_forward(K, params, lay, batch, ctx, want_grads ? &cache : nullptr);
  log_softmax_rows(logits);

  LossResult<T> res;
  res.tokens = batch.target_tokens();
  const std::size_t V = logits.cols;
  const double n = static_cast<double>(std::max<std::size_t>(res.tokens, 1));
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    if (!batch.tgt_mask[r]) continue;
    const T* lp = logits.row(r);
    const int y = batch.tgt_out[r];
    double sum_lp = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum_lp += lp[v];
    res.nll_sum -= lp[y];
    loss -= (1.0 - eps) * lp[y] + eps / static_cast<double>(V) * sum_lp;
  }
  res.loss = loss / n;
  if (!std::isfinite(res.loss)) throw NonFiniteLoss(batch.id);
  if (!want_grads) return res;

  // d loss / d logits = (softmax - smoothed one-hot) / n on real positions.
  Matrix<T>& dlogits = logits;
  const T uniform = static_cast<T>(eps / static_cast<double>(V));
  const T inv_n = static_cast<T>(1.0 / n);
  for (std::size_t r = 0; r < dlogits.rows; ++r) {
    T* g = dlogits.row(r);
    if (!batch.tgt_mask[r]) {
      std::fill(g, g + V, T(0));
      continue;
    }
    for (std::size_t v = 0; v < V; ++v) g[v] = (std::exp(g[v]) - uniform) * inv_n;
    g[batch.tgt_out[r]] -= static_cast<T>(1.0 - eps) * inv_n;
  }
  res.grads = params.tensors.zeros_like();
  run_backward(K, params, lay, batch, cache, dlogits, res.grads);
  return res;
}

}  // namespace

template <typename T>
Matrix<T> forward_logprobs(const ModelParams<T>& params, const Batch& batch, bool train_mode,
                           std::uint64_t dropout_seed) {
  const auto& K = kernels::active<T>();
  std::optional<Rng> rng;
  if (train_mode && params.config.dropout > 0.0) rng.emplace(dropout_seed);
  const Context ctx{params.config.dropout, rng ? &*rng : nullptr};
  Matrix<T> logits = run_forward<T>(K, params, layout_of(params.config), batch, ctx, nullptr);
  log_softmax_rows(logits);
  return logits;
}

template <typename T>
LossResult<T> loss_and_grads(const ModelParams<T>& params, const Batch& batch,
                             const LossOptions& options) {
  return compute_loss(params, batch, options, true);
}

template <typename T>
LossResult<T> evaluate_loss(const ModelParams<T>& params, const Batch& batch,
                            const LossOptions& options) {
  return compute_loss(params, batch, options, false);
}

template <typename T>
std::vector<bool> relu_pattern(const ModelParams<T>& params, const Batch& batch) {
  ForwardCache<T> cache;
  run_forward<T>(kernels::active<T>(), params, layout_of(params.config), batch, {}, &cache);
  std::vector<bool> bits;
  auto append = [&](const FfnCache<T>& f) {
    for (T x : f.pre.data) bits.push_back(x > T(0));
  };
  for (const auto& l : cache.enc) append(l.ffn);
  for (const auto& l : cache.dec) append(l.ffn);
  return bits;
}

template <typename T>
EncodedSource<T> encode_source(const ModelParams<T>& params, const std::vector<int>& src) {
  EncodedSource<T> out;
  out.length = src.size();
  if (params.config.decoder_only) return out;
  if (src.size() > static_cast<std::size_t>(params.config.max_seq_len)) {
    throw InvalidArgument("source length " + std::to_string(src.size()) +
                          " exceeds max_seq_len");
  }
  const auto& K = kernels::active<T>();
  const Layout lay = layout_of(params.config);
  const std::vector<std::uint8_t> mask(src.size(), 1);
  const AttnShape s{1, src.size(), src.size(), mask.data(), false};
  Matrix<T> x = embed_fwd(params.tensors[lay.src_embed], src, 1, src.size());
  for (const auto& layer : lay.enc) x = enc_layer_fwd<T>(K, params, layer, x, s, {}, nullptr);
  out.states = std::move(x);
  return out;
}

template <typename T>
Matrix<T> next_token_logprobs(const ModelParams<T>& params, const EncodedSource<T>& source,
                              const std::vector<std::vector<int>>& prefixes) {
  const auto& K = kernels::active<T>();
  const Layout lay = layout_of(params.config);
  const std::size_t n = prefixes.size();
  if (n == 0) return {};
  const std::size_t len = prefixes[0].size();
  if (len > static_cast<std::size_t>(params.config.max_seq_len)) {
    throw InvalidArgument("decoder prefix exceeds max_seq_len");
  }
  std::vector<int> ids;
  ids.reserve(n * len);
  for (const auto& p : prefixes) {
    if (p.size() != len) throw InvalidArgument("prefixes must share one length");
    ids.insert(ids.end(), p.begin(), p.end());
  }
  const std::size_t d = params.config.d_model;
  Matrix<T> memory;
  std::vector<std::uint8_t> src_mask(n * source.length, 1);
  if (!params.config.decoder_only) {
    memory = Matrix<T>(n * source.length, d);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy(source.states.data.begin(), source.states.data.end(),
                memory.data.begin() + b * source.length * d);
    }
  }
  const std::vector<std::uint8_t> tgt_mask(n * len, 1);
  const AttnShape self_s{n, len, len, tgt_mask.data(), true};
  const AttnShape cross_s{n, len, source.length, src_mask.data(), false};
  Matrix<T> y = embed_fwd(params.tensors[lay.tgt_embed], ids, n, len);
  for (const auto& layer : lay.dec) {
    y = dec_layer_fwd<T>(K, params, layer, y, &memory, self_s, cross_s, {}, nullptr);
  }
  Matrix<T> last(n, d);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(y.row(b * len + len - 1), y.row(b * len + len - 1) + d, last.row(b));
  }
  const auto& out = params.tensors[lay.out_proj];
  Matrix<T> logits(n, out.rows);
  K.gemm_nt(n, out.rows, d, last.data.data(), d, out.data.data(), out.cols,
            logits.data.data(), logits.cols, false);
  log_softmax_rows(logits);
  return logits;
}

#define H2KE_INSTANTIATE(T)                                                                  \
  template struct ModelParams<T>;                                                            \
  template ModelParams<T> allocate_params<T>(const TransformerConfig&);                      \
  template ModelParams<T> init_params<T>(const TransformerConfig&, std::uint64_t);           \
  template Matrix<T> forward_logprobs<T>(const ModelParams<T>&, const Batch&, bool,          \
                                         std::uint64_t);                                     \
  template LossResult<T> loss_and_grads<T>(const ModelParams<T>&, const Batch&,              \
                                           const LossOptions&);                              \
  template LossResult<T> evaluate_loss<T>(const ModelParams<T>&, const Batch&,               \
                                          const LossOptions&);                               \
  template EncodedSource<T> encode_source<T>(const ModelParams<T>&, const std::vector<int>&); \
  template Matrix<T> next_token_logprobs<T>(const ModelParams<T>&, const EncodedSource<T>&,  \
                                            const std::vector<std::vector<int>>&);  \
  template std::vector<bool> relu_pattern<T>(const ModelParams<T>&, const Batch&);

H2KE_INSTANTIATE(float)
H2KE_INSTANTIATE(double)
#undef H2KE_INSTANTIATE

template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace h2ke::model
