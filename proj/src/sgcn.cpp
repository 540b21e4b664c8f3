#include "ct/sgcn.hpp"

#include <cmath>
#include <stdexcept>

namespace ct {

namespace {

Tensor uniform_init(int rows, int cols, Rng& rng) {
  Tensor t(rows, cols, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::vector<Tensor> SgcnParams::all_params() const {
  std::vector<Tensor> out;
  for (const auto& w : gcn_w) out.push_back(w);
  for (const auto& w : cross_wf) out.push_back(w);
  for (const auto& w : cross_ww) out.push_back(w);
  if (proj.size() > 0) out.push_back(proj);
  out.push_back(fuse_gf);
  out.push_back(fuse_gw);
  return out;
}

SgcnParams init_sgcn(int k, int hidden1, int hidden2, int d, int c_f, int c_w, Rng& rng) {
  SgcnParams p;
  p.gcn_w.push_back(uniform_init(k, hidden1, rng));
  p.gcn_w.push_back(uniform_init(hidden1, hidden2, rng));
  p.cross_wf.push_back(uniform_init(hidden1, hidden1, rng));
  p.cross_ww.push_back(uniform_init(hidden1, hidden1, rng));
  p.cross_wf.push_back(uniform_init(hidden2, hidden2, rng));
  p.cross_ww.push_back(uniform_init(hidden2, hidden2, rng));
  if (hidden2 != d) {
    p.proj = Tensor(hidden2, d, true);
    for (double& v : p.proj.data()) v = 0.01 * rng.next_normal();
  }
  p.fuse_gf = Tensor(c_f, d, true);
  p.fuse_gw = Tensor(c_w, d, true);
  return p;
}

Tensor normalize_adjacency(const AdjacencyMatrix& adj) {
  const Tensor& a = adj.a;
  Tensor out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i) {
    double deg = 0.0;
    for (int j = 0; j < a.cols(); ++j) deg += a.at(i, j);
    if (deg == 0.0) continue;
    for (int j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) / deg;
  }
  return out;
}

Tensor gcn_layer(Tape& tape, const Tensor& a_hat, const Tensor& h, const Tensor& w) {
  return tape.leaky_relu(tape.matmul(tape.matmul(a_hat, h), w), kLeakySlope);
}

std::pair<Tensor, Tensor> cross_update(Tape& tape, const Tensor& z_full, const Tensor& z_weak,
                                       const Tensor& b, const Tensor& w_full,
                                       const Tensor& w_weak) {
  Tensor h_full = tape.add(
      z_full, tape.leaky_relu(tape.matmul(tape.matmul(b, z_weak), w_full), kLeakySlope));
  Tensor h_weak = tape.add(
      z_weak,
      tape.leaky_relu(tape.matmul(tape.matmul(tape.transpose(b), z_full), w_weak), kLeakySlope));
  return {h_full, h_weak};
}

SemanticFeatures sgcn_forward(Tape& tape, const Tensor& a_hat_full, const Tensor& a_hat_weak,
                              const Tensor& b, const Tensor& h0_full, const Tensor& h0_weak,
                              const SgcnParams& params) {
  if (params.gcn_w.size() != params.cross_wf.size() ||
      params.gcn_w.size() != params.cross_ww.size())
    throw std::invalid_argument("sgcn_forward: layer parameter lists disagree");
  Tensor h_full = h0_full;
  Tensor h_weak = h0_weak;
  for (std::size_t layer = 0; layer < params.gcn_w.size(); ++layer) {
    Tensor z_full = gcn_layer(tape, a_hat_full, h_full, params.gcn_w[layer]);
    Tensor z_weak = gcn_layer(tape, a_hat_weak, h_weak, params.gcn_w[layer]);
    std::tie(h_full, h_weak) =
        cross_update(tape, z_full, z_weak, b, params.cross_wf[layer], params.cross_ww[layer]);
  }
  if (params.proj.size() > 0) {
    h_full = tape.matmul(h_full, params.proj);
    h_weak = tape.matmul(h_weak, params.proj);
  }
  return {h_full, h_weak};
}

Tensor fuse(Tape& tape, const Tensor& features, const Tensor& h, const Tensor& g) {
  if (features.cols() != h.cols())
    throw std::invalid_argument("fuse: feature dim " + features.shape_str() +
                                " does not match semantic dim " + h.shape_str());
  Tensor scores = tape.matmul(features, tape.transpose(h));  // r x C
  return tape.add(tape.matmul(scores, g), features);
}

}  // namespace ct
