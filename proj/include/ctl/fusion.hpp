#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctl/nn.hpp"
#include "ctl/rng.hpp"
#include "ctl/tensor.hpp"

namespace ctl {

inline constexpr double kFilmEta = 0.1;

// Default alignment sparsity when the config leaves top_k at 0.
std::size_t default_top_k(std::size_t text_length);

struct FusionParams {
  Tensor w_alpha;     // [D,D]
  Tensor w_beta;      // [D,D]
  Tensor node_embed;  // [N,d_e]
  Tensor gcn_w;       // [D,D]
  Tensor gcn_b;       // [D]

  static FusionParams zeros(std::size_t dim, std::size_t n_nodes, std::size_t embed_dim);
  static FusionParams init(std::size_t dim, std::size_t n_nodes, std::size_t embed_dim, RngState& rng);
  void collect(ParamList& out, const std::string& prefix);
};

struct AlignedContext {
  Tensor c_text;        // [B,S,D]
  Tensor attn_weights;  // [B,S,L]
};

// Batch forms. sparse_align keeps the top_k scores per (b,s) row and gives
// the rest zero weight.
AlignedContext sparse_align(const Tensor& h_traffic, const Tensor& h_text, std::size_t top_k);
// x = sigmoid(c W_a) * h + eta * tanh(c W_b). h is [B,S,D], or [B,S,N,D]
// with the modulation broadcast over N.
Tensor film_modulate(const Tensor& h_traffic, const AlignedContext& ctx, const FusionParams& p,
                     double eta = kFilmEta);
Tensor adaptive_adjacency(const Tensor& node_embed);
// Row-normalized physical adjacency with self-loops.
Tensor normalized_adjacency(const Tensor& adjacency);
// 0.5 * (adaptive + normalized physical)
Tensor mixed_adjacency(const Tensor& node_embed, const Tensor& normalized_physical);
// relu(A x W + b) + x on every [N,D] slice of x [B,S,N,D] (or [S,N,D]).
Tensor gcn_block(const Tensor& x, const Tensor& a, const Tensor& w, const Tensor& b);

namespace fusion {

// ---- per-sample kernels used by the model ----

struct AlignCache {
  std::vector<std::uint8_t> mask;  // [S,L]
  nn::Buffer probs;                // [S,L]
};

// When fixed_mask is given it replaces the Top-K selection.
void align_forward(const double* h, std::size_t s, const double* text, std::size_t l, std::size_t d,
                   std::size_t top_k, const std::uint8_t* fixed_mask, double* c, AlignCache& cache);
void align_backward(const double* h, std::size_t s, const double* text, std::size_t l, std::size_t d,
                    const AlignCache& cache, const double* dc, double* dh, double* dtext);

struct FilmCache {
  nn::Buffer alpha;  // [S,D]
  nn::Buffer beta;   // [S,D]
};

// y[s,n,:] = alpha[s] * h[s,n,:] + eta * beta[s]
void film_forward(const FusionParams& p, const double* c, const double* h, std::size_t s, std::size_t n,
                  double eta, double* y, FilmCache& cache);
void film_backward(const FusionParams& p, const double* c, const double* h, std::size_t s, std::size_t n,
                   double eta, const FilmCache& cache, const double* dy, double* dc, double* dh, FusionParams& grad);

struct AdjacencyCache {
  nn::Buffer gram;   // E E^T
  nn::Buffer probs;  // softmax rows
};
void adjacency_forward(const Tensor& node_embed, const Tensor& normalized_physical, double* a_mix,
                       AdjacencyCache& cache);
void adjacency_backward(const Tensor& node_embed, const AdjacencyCache& cache, const double* da_mix,
                        Tensor& dnode_embed);

struct GcnCache {
  nn::Buffer agg;  // [S,N,D]
  nn::Buffer pre;  // [S,N,D]
};
void gcn_forward(const double* a, const double* x, std::size_t s, std::size_t n, const Tensor& w, const Tensor& b,
                 double* y, GcnCache& cache);
void gcn_backward(const double* a, const double* x, std::size_t s, std::size_t n, const Tensor& w,
                  const GcnCache& cache, const double* dy, double* dx, double* da, Tensor& dw, Tensor& db);

}  // namespace fusion
}  // namespace ctl
