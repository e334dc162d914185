#include "ctl/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "ctl/error.hpp"
#include "ctl/kernels.hpp"
#include "ctl/ops.hpp"

namespace ctl {

std::size_t default_top_k(std::size_t text_length) {
  return std::max<std::size_t>(2, (text_length + 3) / 4);
}

FusionParams FusionParams::zeros(std::size_t dim, std::size_t n_nodes, std::size_t embed_dim) {
  return FusionParams{Tensor({dim, dim}), Tensor({dim, dim}), Tensor({n_nodes, embed_dim}), Tensor({dim, dim}),
                      Tensor({dim})};
}

FusionParams FusionParams::init(std::size_t dim, std::size_t n_nodes, std::size_t embed_dim, RngState& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  FusionParams p;
  p.w_alpha = random_normal({dim, dim}, s, rng);
  p.w_beta = random_normal({dim, dim}, s, rng);
  p.node_embed = random_normal({n_nodes, embed_dim}, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng);
  p.gcn_w = random_normal({dim, dim}, s, rng);
  p.gcn_b = Tensor({dim});
  return p;
}

void FusionParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".w_alpha", &w_alpha});
  out.push_back({prefix + ".w_beta", &w_beta});
  out.push_back({prefix + ".node_embed", &node_embed});
  out.push_back({prefix + ".gcn_w", &gcn_w});
  out.push_back({prefix + ".gcn_b", &gcn_b});
}

namespace fusion {

void align_forward(const double* h, std::size_t s, const double* text, std::size_t l, std::size_t d,
                   std::size_t top_k, const std::uint8_t* fixed_mask, double* c, AlignCache& cache) {
  cache.mask.assign(s * l, 0);
  if (fixed_mask) {
    std::copy(fixed_mask, fixed_mask + s * l, cache.mask.begin());
  } else {
    if (top_k == 0 || top_k > l) {
      throw ParameterError("sparse_align: top_k=" + std::to_string(top_k) + " outside [1," + std::to_string(l) +
                           "]");
    }
    std::vector<double> scores(s * l, 0.0);
    kernels::gemm_nt(s, l, d, h, d, text, d, scores.data(), l);
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j : ctl::detail::topk_indices(scores.data() + i * l, l, top_k)) cache.mask[i * l + j] = 1;
    }
  }
  cache.probs.assign(s * l, 0.0);
  nn::attention_forward(h, text, text, {s, l, d, 1}, cache.mask.data(), false, c, cache.probs.data());
}

void align_backward(const double* h, std::size_t s, const double* text, std::size_t l, std::size_t d,
                    const AlignCache& cache, const double* dc, double* dh, double* dtext) {
  nn::attention_backward(h, text, text, {s, l, d, 1}, cache.probs.data(), dc, dh, dtext, dtext);
}

void film_forward(const FusionParams& p, const double* c, const double* h, std::size_t s, std::size_t n,
                  double eta, double* y, FilmCache& cache) {
  const std::size_t d = p.w_alpha.dim(0);
  cache.alpha.assign(s * d, 0.0);
  cache.beta.assign(s * d, 0.0);
  nn::linear_forward(c, s, p.w_alpha, nullptr, cache.alpha.data());
  nn::linear_forward(c, s, p.w_beta, nullptr, cache.beta.data());
  for (double& v : cache.alpha) v = ctl::detail::sigmoid(v);
  for (double& v : cache.beta) v = std::tanh(v);
  for (std::size_t i = 0; i < s; ++i) {
    const double* a = cache.alpha.data() + i * d;
    const double* b = cache.beta.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* hr = h + (i * n + j) * d;
      double* yr = y + (i * n + j) * d;
      for (std::size_t k = 0; k < d; ++k) yr[k] = a[k] * hr[k] + eta * b[k];
    }
  }
}

void film_backward(const FusionParams& p, const double* c, const double* h, std::size_t s, std::size_t n,
                   double eta, const FilmCache& cache, const double* dy, double* dc, double* dh, FusionParams& grad) {
  const std::size_t d = p.w_alpha.dim(0);
  nn::Buffer dza(s * d, 0.0), dzb(s * d, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const double* a = cache.alpha.data() + i * d;
    const double* b = cache.beta.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* hr = h + (i * n + j) * d;
      const double* dyr = dy + (i * n + j) * d;
      double* dhr = dh ? dh + (i * n + j) * d : nullptr;
      for (std::size_t k = 0; k < d; ++k) {
        dza[i * d + k] += dyr[k] * hr[k];
        dzb[i * d + k] += eta * dyr[k];
        if (dhr) dhr[k] += a[k] * dyr[k];
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      dza[i * d + k] *= a[k] * (1.0 - a[k]);
      dzb[i * d + k] *= 1.0 - b[k] * b[k];
    }
  }
  nn::linear_backward(c, s, p.w_alpha, dza.data(), dc, grad.w_alpha, nullptr);
  nn::linear_backward(c, s, p.w_beta, dzb.data(), dc, grad.w_beta, nullptr);
}

void adjacency_forward(const Tensor& node_embed, const Tensor& normalized_physical, double* a_mix,
                       AdjacencyCache& cache) {
  const std::size_t n = node_embed.dim(0);
  const std::size_t e = node_embed.dim(1);
  cache.gram.assign(n * n, 0.0);
  kernels::gemm_nt(n, n, e, node_embed.data(), e, node_embed.data(), e, cache.gram.data(), n);
  cache.probs.resize(n * n);
  for (std::size_t i = 0; i < n * n; ++i) cache.probs[i] = std::max(0.0, cache.gram[i]);
  for (std::size_t i = 0; i < n; ++i) ctl::detail::softmax_inplace(cache.probs.data() + i * n, n);
  for (std::size_t i = 0; i < n * n; ++i) a_mix[i] = 0.5 * (cache.probs[i] + normalized_physical[i]);
}

void adjacency_backward(const Tensor& node_embed, const AdjacencyCache& cache, const double* da_mix,
                        Tensor& dnode_embed) {
  const std::size_t n = node_embed.dim(0);
  const std::size_t e = node_embed.dim(1);
  nn::Buffer dr(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = cache.probs.data() + i * n;
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += 0.5 * da_mix[i * n + j] * p[j];
    for (std::size_t j = 0; j < n; ++j) {
      const double dz = p[j] * (0.5 * da_mix[i * n + j] - dot);
      dr[i * n + j] = cache.gram[i * n + j] > 0.0 ? dz : 0.0;
    }
  }
  // gram = E E^T  ->  dE += (dR + dR^T) E
  nn::Buffer sym(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sym[i * n + j] = dr[i * n + j] + dr[j * n + i];
  }
  kernels::gemm_nn(n, e, n, sym.data(), n, node_embed.data(), e, dnode_embed.data(), e);
}

void gcn_forward(const double* a, const double* x, std::size_t s, std::size_t n, const Tensor& w, const Tensor& b,
                 double* y, GcnCache& cache) {
  const std::size_t d = w.dim(0);
  cache.agg.assign(s * n * d, 0.0);
  cache.pre.assign(s * n * d, 0.0);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t off = i * n * d;
    kernels::gemm_nn(n, d, n, a, n, x + off, d, cache.agg.data() + off, d);
    nn::linear_forward(cache.agg.data() + off, n, w, &b, cache.pre.data() + off);
  }
  for (std::size_t i = 0; i < s * n * d; ++i) y[i] = std::max(0.0, cache.pre[i]) + x[i];
}

void gcn_backward(const double* a, const double* x, std::size_t s, std::size_t n, const Tensor& w,
                  const GcnCache& cache, const double* dy, double* dx, double* da, Tensor& dw, Tensor& db) {
  const std::size_t d = w.dim(0);
  nn::Buffer dpre(s * n * d);
  for (std::size_t i = 0; i < s * n * d; ++i) dpre[i] = cache.pre[i] > 0.0 ? dy[i] : 0.0;
  nn::Buffer dagg(n * d);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t off = i * n * d;
    std::fill(dagg.begin(), dagg.end(), 0.0);
    nn::linear_backward(cache.agg.data() + off, n, w, dpre.data() + off, dagg.data(), dw, &db);
    // agg = A x  ->  dA += dagg x^T, dx += A^T dagg
    if (da) kernels::gemm_nt(n, n, d, dagg.data(), d, x + off, d, da, n);
    if (dx) kernels::gemm_tn(n, d, n, a, n, dagg.data(), d, dx + off, d);
  }
  if (dx) kernels::axpy(1.0, dy, dx, s * n * d);
}

}  // namespace fusion

AlignedContext sparse_align(const Tensor& h_traffic, const Tensor& h_text, std::size_t top_k) {
  if (h_traffic.rank() != 3 || h_text.rank() != 3 || h_traffic.dim(0) != h_text.dim(0) ||
      h_traffic.dim(2) != h_text.dim(2)) {
    throw DimensionError("sparse_align: expected [B,S,D] and [B,L,D], got " + shape_string(h_traffic.shape()) +
                         " and " + shape_string(h_text.shape()));
  }
  const std::size_t bsz = h_traffic.dim(0), s = h_traffic.dim(1), d = h_traffic.dim(2), l = h_text.dim(1);
  if (top_k == 0 || top_k > l) {
    throw ParameterError("sparse_align: top_k=" + std::to_string(top_k) + " outside [1," + std::to_string(l) + "]");
  }
  AlignedContext out{Tensor({bsz, s, d}), Tensor({bsz, s, l})};
  fusion::AlignCache cache;
  for (std::size_t b = 0; b < bsz; ++b) {
    fusion::align_forward(h_traffic.data() + b * s * d, s, h_text.data() + b * l * d, l, d, top_k, nullptr,
                          out.c_text.data() + b * s * d, cache);
    std::copy(cache.probs.begin(), cache.probs.end(), out.attn_weights.data() + b * s * l);
  }
  return out;
}

Tensor film_modulate(const Tensor& h_traffic, const AlignedContext& ctx, const FusionParams& p, double eta) {
  const Tensor& c = ctx.c_text;
  if (c.rank() != 3) throw DimensionError("film_modulate: c_text must be [B,S,D]");
  const std::size_t bsz = c.dim(0), s = c.dim(1), d = c.dim(2);
  std::size_t n = 0;
  if (h_traffic.rank() == 3 && h_traffic.shape() == c.shape()) {
    n = 1;
  } else if (h_traffic.rank() == 4 && h_traffic.dim(0) == bsz && h_traffic.dim(1) == s && h_traffic.dim(3) == d) {
    n = h_traffic.dim(2);
  } else {
    throw DimensionError("film_modulate: h_traffic " + shape_string(h_traffic.shape()) + " does not match c_text " +
                         shape_string(c.shape()));
  }
  if (p.w_alpha.dim(0) != d) throw DimensionError("film_modulate: W_alpha width does not match D");
  Tensor out(h_traffic.shape());
  fusion::FilmCache cache;
  for (std::size_t b = 0; b < bsz; ++b) {
    fusion::film_forward(p, c.data() + b * s * d, h_traffic.data() + b * s * n * d, s, n, eta,
                         out.data() + b * s * n * d, cache);
  }
  return out;
}

Tensor adaptive_adjacency(const Tensor& node_embed) {
  if (node_embed.rank() != 2) throw DimensionError("adaptive_adjacency: E must be [N,d_e]");
  const std::size_t n = node_embed.dim(0);
  Tensor zero({n, n});
  Tensor out({n, n});
  fusion::AdjacencyCache cache;
  fusion::adjacency_forward(node_embed, zero, out.data(), cache);
  std::copy(cache.probs.begin(), cache.probs.end(), out.data());
  return out;
}

Tensor normalized_adjacency(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw DimensionError("normalized_adjacency: expected [N,N], got " + shape_string(adjacency.shape()));
  }
  const std::size_t n = adjacency.dim(0);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = i == j ? 1.0 : adjacency.at(i, j);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  return out;
}

Tensor mixed_adjacency(const Tensor& node_embed, const Tensor& normalized_physical) {
  const std::size_t n = node_embed.dim(0);
  if (normalized_physical.shape() != Tensor::Shape{n, n}) {
    throw DimensionError("mixed_adjacency: physical adjacency " + shape_string(normalized_physical.shape()) +
                         " does not match " + std::to_string(n) + " nodes");
  }
  Tensor out({n, n});
  fusion::AdjacencyCache cache;
  fusion::adjacency_forward(node_embed, normalized_physical, out.data(), cache);
  return out;
}

Tensor gcn_block(const Tensor& x, const Tensor& a, const Tensor& w, const Tensor& b) {
  if (x.rank() < 3) throw DimensionError("gcn_block: x must be [...,N,D]");
  const std::size_t n = x.dim(x.rank() - 2);
  const std::size_t d = x.cols();
  if (a.shape() != Tensor::Shape{n, n}) {
    throw DimensionError("gcn_block: A " + shape_string(a.shape()) + " does not match N=" + std::to_string(n));
  }
  if (w.shape() != Tensor::Shape{d, d}) throw DimensionError("gcn_block: W must be [D,D]");
  const std::size_t slices = x.size() / (n * d);
  Tensor out(x.shape());
  fusion::GcnCache cache;
  fusion::gcn_forward(a.data(), x.data(), slices, n, w, b, out.data(), cache);
  return out;
}

}  // namespace ctl
