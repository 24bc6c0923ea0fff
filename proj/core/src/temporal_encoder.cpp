#include "utilise/temporal_encoder.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace utilise::nn {
namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<Mat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using RowVecMap = Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>;
template <typename Real>
using ConstRowVecMap = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>;

constexpr double kNormEps = 1e-5;

// Plain loops for reductions and transcendental maps: Eigen's vectorized
// versions peel by pointer alignment, which makes results depend on where the
// heap placed a buffer.
template <typename Real, typename M>
void add_column_sums(const M& m, Real* out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] += m(r, c);
  }
}

}  // namespace

template <typename Real>
void group_norm_forward(const Real* x, int rows, int channels, int groups, const Real* gamma,
                        const Real* beta, Real* y, Real* xhat, Real* rstd) {
  const int size = channels / groups;
  for (int r = 0; r < rows; ++r) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = static_cast<std::size_t>(r) * channels + static_cast<std::size_t>(g) * size;
      Real mean = 0;
      for (int i = 0; i < size; ++i) mean += x[off + i];
      mean /= size;
      Real var = 0;
      for (int i = 0; i < size; ++i) {
        const Real d = x[off + i] - mean;
        var += d * d;
      }
      var /= size;
      const Real inv = Real(1) / std::sqrt(var + Real(kNormEps));
      rstd[static_cast<std::size_t>(r) * groups + g] = inv;
      for (int i = 0; i < size; ++i) {
        const Real h = (x[off + i] - mean) * inv;
        xhat[off + i] = h;
        y[off + i] = h * gamma[g * size + i] + beta[g * size + i];
      }
    }
  }
}

template <typename Real>
void group_norm_backward(const Real* dy, const Real* xhat, const Real* rstd, int rows, int channels,
                         int groups, const Real* gamma, Real* dgamma, Real* dbeta, Real* dx) {
  const int size = channels / groups;
  for (int r = 0; r < rows; ++r) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = static_cast<std::size_t>(r) * channels + static_cast<std::size_t>(g) * size;
      Real sum_d = 0;
      Real sum_dx = 0;
      for (int i = 0; i < size; ++i) {
        const int c = g * size + i;
        const Real d = dy[off + i] * gamma[c];
        dgamma[c] += dy[off + i] * xhat[off + i];
        dbeta[c] += dy[off + i];
        sum_d += d;
        sum_dx += d * xhat[off + i];
      }
      const Real inv = rstd[static_cast<std::size_t>(r) * groups + g];
      for (int i = 0; i < size; ++i) {
        const Real d = dy[off + i] * gamma[g * size + i];
        dx[off + i] = inv * (d - sum_d / size - xhat[off + i] * sum_dx / size);
      }
    }
  }
}

template <typename Real>
TemporalEncoder<Real>::TemporalEncoder(int depth, int heads, int key_dim, int norm_groups, int hidden)
    : norm1_gamma("temporal.norm1.gamma", {depth}),
      norm1_beta("temporal.norm1.beta", {depth}),
      query_weight("temporal.query.weight", {heads, key_dim, depth / heads}),
      query_bias("temporal.query.bias", {heads, key_dim}),
      key_weight("temporal.key.weight", {heads, key_dim, depth / heads}),
      key_bias("temporal.key.bias", {heads, key_dim}),
      norm2_gamma("temporal.norm2.gamma", {depth}),
      norm2_beta("temporal.norm2.beta", {depth}),
      mlp1_weight("temporal.mlp1.weight", {hidden, depth}),
      mlp1_bias("temporal.mlp1.bias", {hidden}),
      mlp2_weight("temporal.mlp2.weight", {depth, hidden}),
      mlp2_bias("temporal.mlp2.bias", {depth}),
      depth_(depth),
      heads_(heads),
      key_dim_(key_dim),
      groups_(norm_groups),
      hidden_(hidden) {
  if (depth % heads != 0) throw std::invalid_argument("temporal encoder: depth not divisible by heads");
  if (depth % norm_groups != 0) {
    throw std::invalid_argument("temporal encoder: depth not divisible by norm groups");
  }
}

template <typename Real>
void TemporalEncoder<Real>::initialize(Rng& rng) {
  norm1_gamma.fill(Real(1));
  norm1_beta.fill(Real(0));
  norm2_gamma.fill(Real(1));
  norm2_beta.fill(Real(0));
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(depth_ / heads_));
  query_weight.init_uniform(rng, head_bound);
  query_bias.init_uniform(rng, head_bound);
  key_weight.init_uniform(rng, head_bound);
  key_bias.init_uniform(rng, head_bound);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(depth_));
  mlp1_weight.init_uniform(rng, in_bound);
  mlp1_bias.init_uniform(rng, in_bound);
  const double hidden_bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  mlp2_weight.init_uniform(rng, hidden_bound);
  mlp2_bias.init_uniform(rng, hidden_bound);
}

template <typename Real>
std::vector<Param<Real>*> TemporalEncoder<Real>::parameters() {
  return {&norm1_gamma, &norm1_beta, &query_weight, &query_bias, &key_weight, &key_bias,
          &norm2_gamma, &norm2_beta, &mlp1_weight, &mlp1_bias, &mlp2_weight, &mlp2_bias};
}

template <typename Real>
std::vector<Real> TemporalEncoder<Real>::forward(const std::vector<Real>& tokens, int pixels,
                                                 int frames, TemporalCache<Real>& cache) const {
  const int D = depth_;
  const int T = frames;
  const int G = heads_;
  const int Dg = D / G;
  const int dk = key_dim_;
  const std::size_t token_count = static_cast<std::size_t>(pixels) * T;
  if (tokens.size() != token_count * D) throw std::invalid_argument("temporal encoder: token shape mismatch");
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dk));

  cache.pixels = pixels;
  cache.frames = frames;
  cache.input = tokens;
  cache.xhat1.assign(token_count * D, 0);
  cache.norm1.assign(token_count * D, 0);
  cache.rstd1.assign(token_count * groups_, 0);
  cache.queries.assign(static_cast<std::size_t>(pixels) * G * T * dk, 0);
  cache.keys.assign(cache.queries.size(), 0);
  cache.attention.assign(static_cast<std::size_t>(pixels) * G * T * T, 0);
  cache.residual = tokens;
  cache.xhat2.assign(token_count * D, 0);
  cache.norm2.assign(token_count * D, 0);
  cache.rstd2.assign(token_count * groups_, 0);
  cache.hidden.assign(token_count * hidden_, 0);
  cache.activated.assign(token_count * hidden_, 0);

  group_norm_forward(tokens.data(), static_cast<int>(token_count), D, groups_, norm1_gamma.value.data(),
                     norm1_beta.value.data(), cache.norm1.data(), cache.xhat1.data(), cache.rstd1.data());

  for (int p = 0; p < pixels; ++p) {
    const std::size_t tok = static_cast<std::size_t>(p) * T * D;
    ConstMatMap<Real> n1(cache.norm1.data() + tok, T, D);
    MatMap<Real> r1(cache.residual.data() + tok, T, D);
    for (int g = 0; g < G; ++g) {
      const std::size_t qk_off = (static_cast<std::size_t>(p) * G + g) * T * dk;
      const std::size_t a_off = (static_cast<std::size_t>(p) * G + g) * T * T;
      ConstMatMap<Real> wq(query_weight.value.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      ConstMatMap<Real> wk(key_weight.value.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      ConstRowVecMap<Real> bq(query_bias.value.data() + static_cast<std::size_t>(g) * dk, dk);
      ConstRowVecMap<Real> bk(key_bias.value.data() + static_cast<std::size_t>(g) * dk, dk);
      const auto block = n1.middleCols(g * Dg, Dg);
      MatMap<Real> q(cache.queries.data() + qk_off, T, dk);
      MatMap<Real> k(cache.keys.data() + qk_off, T, dk);
      q.noalias() = block * wq.transpose();
      q.rowwise() += bq;
      k.noalias() = block * wk.transpose();
      k.rowwise() += bk;
      MatMap<Real> a(cache.attention.data() + a_off, T, T);
      a.noalias() = (q * k.transpose()) * scale;
      for (int t = 0; t < T; ++t) {
        const Real m = a.row(t).maxCoeff();
        Real sum = 0;
        for (int j = 0; j < T; ++j) {
          a(t, j) = std::exp(a(t, j) - m);
          sum += a(t, j);
        }
        for (int j = 0; j < T; ++j) a(t, j) /= sum;
      }
      r1.middleCols(g * Dg, Dg).noalias() += a * block;
    }
  }

  group_norm_forward(cache.residual.data(), static_cast<int>(token_count), D, groups_,
                     norm2_gamma.value.data(), norm2_beta.value.data(), cache.norm2.data(),
                     cache.xhat2.data(), cache.rstd2.data());

  const int rows = static_cast<int>(token_count);
  ConstMatMap<Real> n2(cache.norm2.data(), rows, D);
  MatMap<Real> hid(cache.hidden.data(), rows, hidden_);
  ConstMatMap<Real> w1(mlp1_weight.value.data(), hidden_, D);
  ConstRowVecMap<Real> b1(mlp1_bias.value.data(), hidden_);
  hid.noalias() = n2 * w1.transpose();
  hid.rowwise() += b1;
  for (std::size_t i = 0; i < cache.hidden.size(); ++i) cache.activated[i] = gelu(cache.hidden[i]);

  std::vector<Real> out = cache.residual;
  MatMap<Real> o(out.data(), rows, D);
  ConstMatMap<Real> act(cache.activated.data(), rows, hidden_);
  ConstMatMap<Real> w2(mlp2_weight.value.data(), D, hidden_);
  ConstRowVecMap<Real> b2(mlp2_bias.value.data(), D);
  o.noalias() += act * w2.transpose();
  o.rowwise() += b2;
  return out;
}

template <typename Real>
std::vector<Real> TemporalEncoder<Real>::backward(const TemporalCache<Real>& cache,
                                                  const std::vector<Real>& d_out,
                                                  const std::vector<Real>& d_attention) {
  const int D = depth_;
  const int T = cache.frames;
  const int G = heads_;
  const int Dg = D / G;
  const int dk = key_dim_;
  const int pixels = cache.pixels;
  const int rows = pixels * T;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dk));
  if (d_out.size() != static_cast<std::size_t>(rows) * D) {
    throw std::invalid_argument("temporal encoder: gradient shape mismatch");
  }

  // MLP branch.
  ConstMatMap<Real> dout(d_out.data(), rows, D);
  ConstMatMap<Real> act(cache.activated.data(), rows, hidden_);
  MatMap<Real>(mlp2_weight.grad.data(), D, hidden_).noalias() += dout.transpose() * act;
  add_column_sums(dout, mlp2_bias.grad.data());
  Mat<Real> dhidden = dout * ConstMatMap<Real>(mlp2_weight.value.data(), D, hidden_);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < hidden_; ++j) {
      dhidden(r, j) *= gelu_derivative(cache.hidden[static_cast<std::size_t>(r) * hidden_ + j]);
    }
  }
  ConstMatMap<Real> n2(cache.norm2.data(), rows, D);
  MatMap<Real>(mlp1_weight.grad.data(), hidden_, D).noalias() += dhidden.transpose() * n2;
  add_column_sums(dhidden, mlp1_bias.grad.data());
  Mat<Real> dnorm2 = dhidden * ConstMatMap<Real>(mlp1_weight.value.data(), hidden_, D);

  std::vector<Real> dresidual(static_cast<std::size_t>(rows) * D);
  group_norm_backward(dnorm2.data(), cache.xhat2.data(), cache.rstd2.data(), rows, D, groups_,
                      norm2_gamma.value.data(), norm2_gamma.grad.data(), norm2_beta.grad.data(),
                      dresidual.data());
  for (std::size_t i = 0; i < dresidual.size(); ++i) dresidual[i] += d_out[i];

  // Attention branch: r1 = z + concat_g(A_g n1_g).
  std::vector<Real> dnorm1(static_cast<std::size_t>(rows) * D, 0);
  Mat<Real> da(T, T), ds(T, T), dq(T, dk), dkey(T, dk);
  for (int p = 0; p < pixels; ++p) {
    const std::size_t tok = static_cast<std::size_t>(p) * T * D;
    ConstMatMap<Real> n1(cache.norm1.data() + tok, T, D);
    ConstMatMap<Real> dr(dresidual.data() + tok, T, D);
    MatMap<Real> dn1(dnorm1.data() + tok, T, D);
    for (int g = 0; g < G; ++g) {
      const std::size_t qk_off = (static_cast<std::size_t>(p) * G + g) * T * dk;
      const std::size_t a_off = (static_cast<std::size_t>(p) * G + g) * T * T;
      ConstMatMap<Real> a(cache.attention.data() + a_off, T, T);
      ConstMatMap<Real> q(cache.queries.data() + qk_off, T, dk);
      ConstMatMap<Real> k(cache.keys.data() + qk_off, T, dk);
      const auto block = n1.middleCols(g * Dg, Dg);
      const auto dblock_out = dr.middleCols(g * Dg, Dg);

      da.noalias() = dblock_out * block.transpose();
      if (!d_attention.empty()) da += ConstMatMap<Real>(d_attention.data() + a_off, T, T);
      dn1.middleCols(g * Dg, Dg).noalias() += a.transpose() * dblock_out;

      for (int t = 0; t < T; ++t) {
        Real dot = 0;
        for (int j = 0; j < T; ++j) dot += a(t, j) * da(t, j);
        for (int j = 0; j < T; ++j) ds(t, j) = a(t, j) * (da(t, j) - dot);
      }
      ds *= scale;
      dq.noalias() = ds * k;
      dkey.noalias() = ds.transpose() * q;

      MatMap<Real> dwq(query_weight.grad.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      MatMap<Real> dwk(key_weight.grad.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      dwq.noalias() += dq.transpose() * block;
      dwk.noalias() += dkey.transpose() * block;
      add_column_sums(dq, query_bias.grad.data() + static_cast<std::size_t>(g) * dk);
      add_column_sums(dkey, key_bias.grad.data() + static_cast<std::size_t>(g) * dk);
      ConstMatMap<Real> wq(query_weight.value.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      ConstMatMap<Real> wk(key_weight.value.data() + static_cast<std::size_t>(g) * dk * Dg, dk, Dg);
      dn1.middleCols(g * Dg, Dg).noalias() += dq * wq + dkey * wk;
    }
  }

  std::vector<Real> dinput(static_cast<std::size_t>(rows) * D);
  group_norm_backward(dnorm1.data(), cache.xhat1.data(), cache.rstd1.data(), rows, D, groups_,
                      norm1_gamma.value.data(), norm1_gamma.grad.data(), norm1_beta.grad.data(),
                      dinput.data());
  for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += dresidual[i];
  return dinput;
}

#define UTILISE_INSTANTIATE(Real)                                                                \
  template class TemporalEncoder<Real>;                                                          \
  template void group_norm_forward<Real>(const Real*, int, int, int, const Real*, const Real*,  \
                                         Real*, Real*, Real*);                                   \
  template void group_norm_backward<Real>(const Real*, const Real*, const Real*, int, int, int, \
                                          const Real*, Real*, Real*, Real*);

UTILISE_INSTANTIATE(float)
UTILISE_INSTANTIATE(double)

#undef UTILISE_INSTANTIATE

}  // namespace utilise::nn
