#pragma once

#include <string>
#include <vector>

#include "ct/config.hpp"
#include "ct/synthetic.hpp"
#include "ct/tensor.hpp"

namespace ct {

/// Co-occurrence statistics of one dataset's categories. p(i,j) is the
/// probability that an image containing category i also contains j, computed
/// as the exact quotient of image counts. Rows of never-seen categories are
/// zero. Generally asymmetric.
struct TransitionMatrix {
  Tensor p;                       // C x C
  std::vector<long> image_count;  // M_i
  Tensor pair_count;              // M_ij, exact integers stored as doubles
};

TransitionMatrix co_occurrence(const std::vector<std::vector<int>>& sets, int c);

/// Binary digraph adjacency: edge present iff p >= tau (boundary included).
struct AdjacencyMatrix {
  Tensor a;
  double tau = 0.0;
};

AdjacencyMatrix threshold(const TransitionMatrix& p, double tau);

enum class BipartiteKind { similarity, handcrafted, combined };

/// Weighted edges between the full and weak label spaces, c_f x c_w.
struct BipartiteEdges {
  Tensor b;
  BipartiteKind kind = BipartiteKind::similarity;
};

/// Row-softmaxed cosine similarities between the two embedding tables. Names,
/// when given, are only used in error messages for zero-norm rows.
BipartiteEdges similarity_edges(const Tensor& emb_full, const Tensor& emb_weak,
                                const std::vector<std::string>& full_names = {},
                                const std::vector<std::string>& weak_names = {});

BipartiteEdges handcrafted_edges(const std::vector<Relation>& relations, int c_f, int c_w);

BipartiteEdges combine_edges(const BipartiteEdges& sim, const BipartiteEdges& hc, EdgeMode mode);

/// Both intra-dataset graphs plus the inter-dataset edges, ready for the GCN.
struct SemanticGraph {
  TransitionMatrix p_full, p_weak;
  AdjacencyMatrix a_full, a_weak;
  BipartiteEdges edges;
};

/// Builds the graph from a bundle's training splits: transition matrices from
/// image-level label sets, adjacency at tau, bipartite edges per edge_mode.
/// `relations` overrides the world's own relation list when non-null.
SemanticGraph build_graph(const DatasetBundle& bundle, double tau, EdgeMode mode,
                          const std::vector<Relation>* relations = nullptr);

/// Inspection dump of every matrix with category names; parseable below.
std::string dump_graph(const SemanticGraph& g, const CategorySpace& cats);

struct GraphDump {
  std::vector<std::string> full_names, weak_names;
  double tau = 0.0;
  std::string edge_kind;
  Tensor p_full, a_full, p_weak, a_weak, b;
};

GraphDump parse_graph_dump(const std::string& text);

}  // namespace ct
