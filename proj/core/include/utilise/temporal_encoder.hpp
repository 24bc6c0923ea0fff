#pragma once

#include <vector>

#include "utilise/layers.hpp"

namespace utilise::nn {

// Activations retained by TemporalEncoder::forward for the backward pass.
// Token tensors are row-major pixels x frames x depth.
template <typename Real>
struct TemporalCache {
  int pixels = 0;
  int frames = 0;
  std::vector<Real> input;      // z: bottleneck embedding + positional encoding
  std::vector<Real> xhat1, rstd1, norm1;
  std::vector<Real> queries;    // pixels x heads x frames x key_dim
  std::vector<Real> keys;
  std::vector<Real> attention;  // pixels x heads x frames(query) x frames(key)
  std::vector<Real> residual;   // z + attention-mixed values
  std::vector<Real> xhat2, rstd2, norm2;
  std::vector<Real> hidden;     // MLP pre-activation, pixels x frames x hidden
  std::vector<Real> activated;  // GELU(hidden)
};

// Per-pixel temporal self-attention block over a sequence of bottleneck
// embeddings.
//
//   n1  = GroupNorm(z)
//   A_g = softmax(Q_g K_g^T / sqrt(key_dim)),  Q_g, K_g linear in n1[:, block g]
//   r   = z + concat_g(A_g n1[:, block g])
//   out = r + W2 GELU(W1 GroupNorm(r) + b1) + b2
//
// Heads act on disjoint channel blocks of size depth / heads; the attention
// scores mix the normalized embeddings directly, with no value projection.
// Queries are computed from the embeddings, so one output per input frame.
template <typename Real>
class TemporalEncoder {
 public:
  TemporalEncoder() = default;
  TemporalEncoder(int depth, int heads, int key_dim, int norm_groups, int hidden);

  void initialize(Rng& rng);
  std::vector<Param<Real>*> parameters();

  int depth() const { return depth_; }
  int heads() const { return heads_; }

  std::vector<Real> forward(const std::vector<Real>& tokens, int pixels, int frames,
                            TemporalCache<Real>& cache) const;

  // `d_attention` is an optional extra gradient on the attention scores
  // (same layout as TemporalCache::attention); pass an empty vector if none.
  std::vector<Real> backward(const TemporalCache<Real>& cache, const std::vector<Real>& d_out,
                             const std::vector<Real>& d_attention);

  Param<Real> norm1_gamma, norm1_beta;
  Param<Real> query_weight, query_bias;  // [heads, key_dim, depth/heads], [heads, key_dim]
  Param<Real> key_weight, key_bias;
  Param<Real> norm2_gamma, norm2_beta;
  Param<Real> mlp1_weight, mlp1_bias;    // [hidden, depth], [hidden]
  Param<Real> mlp2_weight, mlp2_bias;    // [depth, hidden], [depth]

 private:
  int depth_ = 0, heads_ = 1, key_dim_ = 1, groups_ = 1, hidden_ = 0;
};

// Row-wise group normalization over `rows` vectors of length `channels`.
template <typename Real>
void group_norm_forward(const Real* x, int rows, int channels, int groups, const Real* gamma,
                        const Real* beta, Real* y, Real* xhat, Real* rstd);
// Accumulates dgamma/dbeta and writes dx (overwrites).
template <typename Real>
void group_norm_backward(const Real* dy, const Real* xhat, const Real* rstd, int rows, int channels,
                         int groups, const Real* gamma, Real* dgamma, Real* dbeta, Real* dx);

}  // namespace utilise::nn
