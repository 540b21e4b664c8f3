#include "ct/graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ct/errors.hpp"
#include "ct/textio.hpp"

namespace ct {

TransitionMatrix co_occurrence(const std::vector<std::vector<int>>& sets, int c) {
  TransitionMatrix t;
  t.image_count.assign(c, 0);
  t.pair_count = Tensor(c, c);
  for (const auto& set : sets) {
    for (int i : set) {
      if (i < 0 || i >= c)
        throw std::invalid_argument("co_occurrence: category index " + std::to_string(i) +
                                    " out of range for C=" + std::to_string(c));
      ++t.image_count[i];
      for (int j : set) t.pair_count.at(i, j) += 1.0;
    }
  }
  t.p = Tensor(c, c);
  for (int i = 0; i < c; ++i) {
    if (t.image_count[i] == 0) continue;  // row stays zero
    for (int j = 0; j < c; ++j) t.p.at(i, j) = t.pair_count.at(i, j) / t.image_count[i];
  }
  return t;
}

AdjacencyMatrix threshold(const TransitionMatrix& t, double tau) {
  if (!(tau > 0.0 && tau <= 1.0))
    throw std::invalid_argument("threshold: tau must lie in (0, 1], got " + std::to_string(tau));
  AdjacencyMatrix adj;
  adj.tau = tau;
  adj.a = Tensor(t.p.rows(), t.p.cols());
  for (int i = 0; i < t.p.rows(); ++i)
    for (int j = 0; j < t.p.cols(); ++j) adj.a.at(i, j) = t.p.at(i, j) >= tau ? 1.0 : 0.0;
  return adj;
}

BipartiteEdges similarity_edges(const Tensor& emb_full, const Tensor& emb_weak,
                                const std::vector<std::string>& full_names,
                                const std::vector<std::string>& weak_names) {
  if (emb_full.cols() != emb_weak.cols())
    throw std::invalid_argument("similarity_edges: embedding dims differ, " +
                                emb_full.shape_str() + " vs " + emb_weak.shape_str());
  const int c_f = emb_full.rows(), c_w = emb_weak.rows();
  auto name = [](const std::vector<std::string>& names, int i, const char* side) {
    return i < static_cast<int>(names.size()) ? names[i] : std::string(side) + std::to_string(i);
  };
  auto row_norm = [](const Tensor& m, int i) {
    double s = 0.0;
    for (int j = 0; j < m.cols(); ++j) s += m.at(i, j) * m.at(i, j);
    return std::sqrt(s);
  };
  std::vector<double> nf(c_f), nw(c_w);
  for (int i = 0; i < c_f; ++i) {
    nf[i] = row_norm(emb_full, i);
    if (nf[i] < 1e-12)
      throw std::invalid_argument("similarity_edges: zero-norm embedding for category " +
                                  name(full_names, i, "full:"));
  }
  for (int j = 0; j < c_w; ++j) {
    nw[j] = row_norm(emb_weak, j);
    if (nw[j] < 1e-12)
      throw std::invalid_argument("similarity_edges: zero-norm embedding for category " +
                                  name(weak_names, j, "weak:"));
  }
  BipartiteEdges e;
  e.kind = BipartiteKind::similarity;
  e.b = Tensor(c_f, c_w);
  for (int i = 0; i < c_f; ++i) {
    std::vector<double> sim(c_w);
    double m = -1e300;
    for (int j = 0; j < c_w; ++j) {
      double dot = 0.0;
      for (int t = 0; t < emb_full.cols(); ++t) dot += emb_full.at(i, t) * emb_weak.at(j, t);
      sim[j] = dot / (nf[i] * nw[j]);
      m = std::max(m, sim[j]);
    }
    double z = 0.0;
    for (int j = 0; j < c_w; ++j) z += std::exp(sim[j] - m);
    for (int j = 0; j < c_w; ++j) e.b.at(i, j) = std::exp(sim[j] - m) / z;
  }
  return e;
}

BipartiteEdges handcrafted_edges(const std::vector<Relation>& relations, int c_f, int c_w) {
  BipartiteEdges e;
  e.kind = BipartiteKind::handcrafted;
  e.b = Tensor(c_f, c_w);
  for (const auto& r : relations) {
    if (r.full_index < 0 || r.full_index >= c_f || r.weak_index < 0 || r.weak_index >= c_w)
      throw std::invalid_argument("handcrafted_edges: relation (" + std::to_string(r.full_index) +
                                  ", " + std::to_string(r.weak_index) + ") out of range " +
                                  std::to_string(c_f) + "x" + std::to_string(c_w));
    e.b.at(r.full_index, r.weak_index) = 1.0;
  }
  return e;
}

BipartiteEdges combine_edges(const BipartiteEdges& sim, const BipartiteEdges& hc, EdgeMode mode) {
  switch (mode) {
    case EdgeMode::similarity:
      return sim;
    case EdgeMode::handcrafted:
      return hc;
    case EdgeMode::combined: {
      if (!sim.b.same_shape(hc.b))
        throw std::invalid_argument("combine_edges: shape mismatch, " + sim.b.shape_str() +
                                    " vs " + hc.b.shape_str());
      BipartiteEdges e;
      e.kind = BipartiteKind::combined;
      e.b = Tensor(sim.b.rows(), sim.b.cols());
      for (int i = 0; i < e.b.size(); ++i) e.b.data()[i] = sim.b.data()[i] + hc.b.data()[i];
      return e;
    }
  }
  throw std::logic_error("combine_edges: unknown mode");
}

SemanticGraph build_graph(const DatasetBundle& bundle, double tau, EdgeMode mode,
                          const std::vector<Relation>* relations) {
  SemanticGraph g;
  g.p_full = co_occurrence(label_sets(bundle.full_train), bundle.world.cats.c_f());
  g.p_weak = co_occurrence(label_sets(bundle.weak_train), bundle.world.cats.c_w());
  g.a_full = threshold(g.p_full, tau);
  g.a_weak = threshold(g.p_weak, tau);
  const auto& rels = relations ? *relations : bundle.world.cats.relations;
  const int c_f = bundle.world.cats.c_f(), c_w = bundle.world.cats.c_w();
  switch (mode) {
    case EdgeMode::similarity:
      g.edges = similarity_edges(bundle.world.emb_full, bundle.world.emb_weak,
                                 bundle.world.cats.full_names, bundle.world.cats.weak_names);
      break;
    case EdgeMode::handcrafted:
      g.edges = handcrafted_edges(rels, c_f, c_w);
      break;
    case EdgeMode::combined:
      g.edges = combine_edges(similarity_edges(bundle.world.emb_full, bundle.world.emb_weak,
                                               bundle.world.cats.full_names,
                                               bundle.world.cats.weak_names),
                              handcrafted_edges(rels, c_f, c_w), EdgeMode::combined);
      break;
  }
  return g;
}

namespace {

void dump_matrix(std::ostringstream& os, const char* tag, const Tensor& m) {
  os << "matrix " << tag << " " << m.rows() << " " << m.cols() << "\n";
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j) os << " ";
      os << fmt_g17(m.at(i, j));
    }
    os << "\n";
  }
}

const char* kind_name(BipartiteKind k) {
  switch (k) {
    case BipartiteKind::similarity: return "similarity";
    case BipartiteKind::handcrafted: return "handcrafted";
    case BipartiteKind::combined: return "combined";
  }
  return "?";
}

}  // namespace

std::string dump_graph(const SemanticGraph& g, const CategorySpace& cats) {
  std::ostringstream os;
  os << "# semantic graph dump v1\n";
  os << "names_full";
  for (const auto& n : cats.full_names) os << " " << n;
  os << "\nnames_weak";
  for (const auto& n : cats.weak_names) os << " " << n;
  os << "\ntau " << fmt_g17(g.a_full.tau) << "\n";
  os << "edge_kind " << kind_name(g.edges.kind) << "\n";
  dump_matrix(os, "P_full", g.p_full.p);
  dump_matrix(os, "A_full", g.a_full.a);
  dump_matrix(os, "P_weak", g.p_weak.p);
  dump_matrix(os, "A_weak", g.a_weak.a);
  dump_matrix(os, "B", g.edges.b);
  return os.str();
}

GraphDump parse_graph_dump(const std::string& text) {
  std::istringstream in(text);
  GraphDump d;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw config_error("graph dump:" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty() || toks[0][0] == '#') continue;
    if (toks[0] == "names_full") {
      d.full_names.assign(toks.begin() + 1, toks.end());
    } else if (toks[0] == "names_weak") {
      d.weak_names.assign(toks.begin() + 1, toks.end());
    } else if (toks[0] == "tau") {
      if (toks.size() != 2) fail("tau needs one value");
      d.tau = std::stod(toks[1]);
    } else if (toks[0] == "edge_kind") {
      if (toks.size() != 2) fail("edge_kind needs one value");
      d.edge_kind = toks[1];
    } else if (toks[0] == "matrix") {
      if (toks.size() != 4) fail("matrix header needs 'matrix NAME R C'");
      const std::string name = toks[1];
      const int r = std::stoi(toks[2]), c = std::stoi(toks[3]);
      Tensor m(r, c);
      for (int i = 0; i < r; ++i) {
        if (!std::getline(in, line)) fail("truncated matrix " + name);
        ++lineno;
        auto row = split_ws(line);
        if (static_cast<int>(row.size()) != c) fail("row width mismatch in " + name);
        for (int j = 0; j < c; ++j) m.at(i, j) = std::stod(row[j]);
      }
      if (name == "P_full") d.p_full = m;
      else if (name == "A_full") d.a_full = m;
      else if (name == "P_weak") d.p_weak = m;
      else if (name == "A_weak") d.a_weak = m;
      else if (name == "B") d.b = m;
      else fail("unknown matrix '" + name + "'");
    } else {
      fail("unknown directive '" + toks[0] + "'");
    }
  }
  return d;
}

}  // namespace ct
