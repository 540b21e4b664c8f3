#pragma once

#include <utility>
#include <vector>

#include "ct/graph.hpp"
#include "ct/rng.hpp"
#include "ct/tensor.hpp"

namespace ct {

/// Slope of every leaky ReLU in the graph network and the branch trunks.
inline constexpr double kLeakySlope = 0.2;

/// Two graph convolution layers (weights shared between the two label-space
/// graphs), per-layer cross-graph mixing weights, an optional output
/// projection, and the two fusion maps. Fusion maps start at zero so training
/// begins from the pure-visual baseline.
struct SgcnParams {
  std::vector<Tensor> gcn_w;     // k -> hidden1, hidden1 -> hidden2
  std::vector<Tensor> cross_wf;  // one per layer, square in that layer's output dim
  std::vector<Tensor> cross_ww;
  Tensor proj;      // hidden2 -> d; empty when hidden2 == d
  Tensor fuse_gf;   // c_f -> d
  Tensor fuse_gw;   // c_w -> d

  std::vector<Tensor> all_params() const;
};

SgcnParams init_sgcn(int k, int hidden1, int hidden2, int d, int c_f, int c_w, Rng& rng);

/// Row-stochastic normalization D^-1 A; zero rows stay zero. Row-wise rather
/// than symmetric because the co-occurrence graphs are digraphs.
Tensor normalize_adjacency(const AdjacencyMatrix& adj);

/// Z = leaky_relu(A_hat * H * W).
Tensor gcn_layer(Tape& tape, const Tensor& a_hat, const Tensor& h, const Tensor& w);

/// Residual cross-graph mixing:
///   H_f' = Z_f + leaky_relu(B  Z_w W_f)
///   H_w' = Z_w + leaky_relu(B' Z_f W_w)
std::pair<Tensor, Tensor> cross_update(Tape& tape, const Tensor& z_full, const Tensor& z_weak,
                                       const Tensor& b, const Tensor& w_full,
                                       const Tensor& w_weak);

struct SemanticFeatures {
  Tensor h_full;  // c_f x d
  Tensor h_weak;  // c_w x d
};

SemanticFeatures sgcn_forward(Tape& tape, const Tensor& a_hat_full, const Tensor& a_hat_weak,
                              const Tensor& b, const Tensor& h0_full, const Tensor& h0_weak,
                              const SgcnParams& params);

/// Residual semantic fusion: features + g(features * H'), with g a linear map
/// from category scores back to feature space.
Tensor fuse(Tape& tape, const Tensor& features, const Tensor& h, const Tensor& g);

}  // namespace ct
