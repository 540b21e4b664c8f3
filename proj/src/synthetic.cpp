#include "ct/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ct/errors.hpp"
#include "ct/rng.hpp"
#include "ct/textio.hpp"
#include "json.hpp"

namespace ct {

namespace {

using nlohmann::json;

std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.next_normal();
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

void set_row(Tensor& m, int row, const std::vector<double>& v) {
  for (int j = 0; j < m.cols(); ++j) m.at(row, j) = v[j];
}

std::vector<double> get_row(const Tensor& m, int row) {
  std::vector<double> v(m.cols());
  for (int j = 0; j < m.cols(); ++j) v[j] = m.at(row, j);
  return v;
}

std::vector<SceneTemplate> make_templates(int c, int count, int max_size, Rng& rng) {
  std::vector<SceneTemplate> ts;
  // Two anchored templates pin the co-occurrence extremes: category 0 appears
  // only alongside 1 (P(1|0) = 1) and never with the rest (P(j|0) = 0), while
  // category 1 recurs elsewhere so the graph stays a digraph.
  ts.push_back({{0, 1}, rng.uniform(0.5, 1.5)});
  ts.push_back({{1, 2}, rng.uniform(0.5, 1.5)});
  const int pool = c - 2;  // categories {2..c-1}
  for (int i = 0; i < std::max(0, count - 2); ++i) {
    int size = 1 + rng.next_int(std::min({max_size, 3, pool}));
    std::set<int> cats;
    while (static_cast<int>(cats.size()) < size) cats.insert(2 + rng.next_int(pool));
    ts.push_back({{cats.begin(), cats.end()}, rng.uniform(0.5, 1.5)});
  }
  std::set<int> seen;
  for (const auto& t : ts) seen.insert(t.categories.begin(), t.categories.end());
  for (int cat = 0; cat < c; ++cat)
    if (!seen.count(cat)) ts.push_back({{cat}, rng.uniform(0.5, 1.5)});
  return ts;
}

Tensor cooccurrence_of(const std::vector<SceneTemplate>& ts, int c) {
  std::vector<double> wi(c, 0.0);
  Tensor wij(c, c);
  for (const auto& t : ts)
    for (int a : t.categories) {
      wi[a] += t.weight;
      for (int b : t.categories) wij.at(a, b) += t.weight;
    }
  Tensor p(c, c);
  for (int i = 0; i < c; ++i)
    if (wi[i] > 0.0)
      for (int j = 0; j < c; ++j) p.at(i, j) = wij.at(i, j) / wi[i];
  return p;
}

void check_extremes(const Tensor& p, const char* side) {
  bool has_high = false, has_low = false;
  for (int i = 0; i < p.rows(); ++i)
    for (int j = 0; j < p.cols(); ++j) {
      if (i == j) continue;
      if (p.at(i, j) >= 0.5) has_high = true;
      if (p.at(i, j) <= 0.1) has_low = true;
    }
  if (!has_high || !has_low)
    throw config_error(std::string("gen_world: ") + side +
                       " templates lack co-occurrence extremes (need a pair >= 0.5 and one <= 0.1)");
}

Box clamp_box(Box b) {
  const double cx = std::clamp(b.cx(), 0.02, 0.98);
  const double cy = std::clamp(b.cy(), 0.02, 0.98);
  const double w = b.width(), h = b.height();
  Box out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  out.x1 = std::max(out.x1, 0.0);
  out.y1 = std::max(out.y1, 0.0);
  out.x2 = std::min(out.x2, 1.0);
  out.y2 = std::min(out.y2, 1.0);
  return out;
}

Box place_gt_box(Rng& rng, const std::vector<GtInstance>& existing) {
  Box best{};
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double w = rng.uniform(0.12, 0.38);
    const double h = rng.uniform(0.12, 0.38);
    const double x1 = rng.uniform(0.005, 0.99 - w);
    const double y1 = rng.uniform(0.005, 0.99 - h);
    Box b{x1, y1, x1 + w, y1 + h};
    best = b;
    bool ok = true;
    for (const auto& g : existing) {
      if (g.box.contains(b) || b.contains(g.box) || iou(g.box, b) > 0.5) {
        ok = false;
        break;
      }
    }
    if (ok) return b;
  }
  return best;  // crowded canvas, accept the last candidate
}

Box jitter_box(Rng& rng, const Box& gt, double lo_iou, double hi_iou, double shift, double log_scale) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const double cx = gt.cx() + rng.uniform(-shift, shift) * gt.width();
    const double cy = gt.cy() + rng.uniform(-shift, shift) * gt.height();
    const double w = gt.width() * std::exp(rng.uniform(-log_scale, log_scale));
    const double h = gt.height() * std::exp(rng.uniform(-log_scale, log_scale));
    Box b = clamp_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
    if (!b.valid()) continue;
    const double v = iou(b, gt);
    if (v >= lo_iou && v < hi_iou) return b;
  }
  return gt;  // exact copy, IoU 1
}

Box background_box(Rng& rng, const std::vector<GtInstance>& gts) {
  Box last{};
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double w = rng.uniform(0.08, 0.3);
    const double h = rng.uniform(0.08, 0.3);
    const double x1 = rng.uniform(0.005, 0.99 - w);
    const double y1 = rng.uniform(0.005, 0.99 - h);
    Box b{x1, y1, x1 + w, y1 + h};
    last = b;
    double worst = 0.0;
    for (const auto& g : gts) worst = std::max(worst, iou(b, g.box));
    if (worst < 0.3) return b;
  }
  return last;
}

json tensor_to_json(const Tensor& t) {
  return json{{"r", t.rows()}, {"c", t.cols()}, {"v", t.data()}};
}

Tensor tensor_from_json(const json& j) {
  Tensor t(j.at("r").get<int>(), j.at("c").get<int>());
  const auto& v = j.at("v");
  if (static_cast<int>(v.size()) != t.size())
    throw config_error("bundle: tensor payload size mismatch");
  for (int i = 0; i < t.size(); ++i) t.data()[i] = v[i].get<double>();
  return t;
}

json templates_to_json(const std::vector<SceneTemplate>& ts) {
  json arr = json::array();
  for (const auto& t : ts) arr.push_back({{"cats", t.categories}, {"w", t.weight}});
  return arr;
}

std::vector<SceneTemplate> templates_from_json(const json& arr) {
  std::vector<SceneTemplate> ts;
  for (const auto& j : arr)
    ts.push_back({j.at("cats").get<std::vector<int>>(), j.at("w").get<double>()});
  return ts;
}

const char* relation_name(RelationKind k) {
  switch (k) {
    case RelationKind::subclass: return "subclass";
    case RelationKind::includes: return "includes";
    case RelationKind::similar: return "similar";
  }
  return "?";
}

RelationKind relation_from_name(const std::string& s) {
  if (s == "subclass") return RelationKind::subclass;
  if (s == "includes") return RelationKind::includes;
  if (s == "similar") return RelationKind::similar;
  throw config_error("unknown relation kind '" + s + "'");
}

}  // namespace

Tensor World::template_cooccurrence(bool weak_side) const {
  return cooccurrence_of(weak_side ? templates_weak : templates_full,
                         weak_side ? cats.c_w() : cats.c_f());
}

World gen_world(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.c_f < 3 || cfg.c_w < 3)
    throw config_error("gen_world: need at least 3 categories per dataset");
  if (cfg.max_gt_per_image < 2)
    throw config_error("gen_world: max_gt_per_image must be >= 2 (scene templates are pairs)");

  Rng rng(mix_seed(seed, 101, 0));
  World w;
  w.noise_scale = cfg.noise_scale;
  w.max_gt_per_image = cfg.max_gt_per_image;
  w.r_min = cfg.r_min;
  w.r_max = cfg.r_max;
  w.seed = seed;

  char buf[32];
  for (int i = 0; i < cfg.c_f; ++i) {
    std::snprintf(buf, sizeof(buf), "fcat%02d", i);
    w.cats.full_names.push_back(buf);
  }
  for (int i = 0; i < cfg.c_w; ++i) {
    std::snprintf(buf, sizeof(buf), "wcat%02d", i);
    w.cats.weak_names.push_back(buf);
  }
  for (int i = 0; i < cfg.n_overlap; ++i) w.cats.overlap.push_back({i, i});

  // Relations link non-overlapping weak categories to non-overlapping full
  // ones; at most one relation per weak category so the embedding rule is
  // unambiguous.
  const int free_w = cfg.c_w - cfg.n_overlap;
  const int free_f = cfg.c_f - cfg.n_overlap;
  const int n_rel = free_f > 0 ? std::min(cfg.n_relations, free_w) : 0;
  const RelationKind kinds[3] = {RelationKind::subclass, RelationKind::includes,
                                 RelationKind::similar};
  for (int i = 0; i < n_rel; ++i) {
    int weak_idx = cfg.n_overlap + i;
    int full_idx = cfg.n_overlap + rng.next_int(free_f);
    w.cats.relations.push_back({full_idx, weak_idx, kinds[i % 3]});
  }

  // Prototypes: every foreground category shares an "objectness" component
  // (as backbone features of real objects do), with its distinctive part in
  // the orthogonal complement; the background direction carries none of it.
  // This is what lets a background/foreground separator learned on one label
  // space carry over to categories it never saw.
  const double obj_mix = 0.5;
  const double distinct_mix = std::sqrt(1.0 - obj_mix * obj_mix);
  std::vector<double> u_obj = random_unit(rng, cfg.d_p);
  auto orthogonalize = [&](std::vector<double> v) {
    double dot = 0.0;
    for (int t = 0; t < cfg.d_p; ++t) dot += v[t] * u_obj[t];
    double norm = 0.0;
    for (int t = 0; t < cfg.d_p; ++t) {
      v[t] -= dot * u_obj[t];
      norm += v[t] * v[t];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw config_error("gen_world: degenerate prototype draw");
    for (double& x : v) x /= norm;
    return v;
  };
  // cos(proto_i, proto_j) = obj_mix^2 + distinct_mix^2 * cos(v_i, v_j); keep
  // the pairwise prototype similarity under 0.8.
  const double v_limit = (0.8 - obj_mix * obj_mix) / (distinct_mix * distinct_mix);
  std::vector<std::vector<double>> taken;
  w.proto_background = Tensor(1, cfg.d_p);
  taken.push_back(orthogonalize(random_unit(rng, cfg.d_p)));
  set_row(w.proto_background, 0, taken.back());
  auto next_proto = [&] {
    for (int attempt = 0; attempt < 500; ++attempt) {
      std::vector<double> v = orthogonalize(random_unit(rng, cfg.d_p));
      bool ok = true;
      for (const auto& t : taken)
        if (cosine(v, t) >= v_limit) {
          ok = false;
          break;
        }
      if (!ok) continue;
      taken.push_back(v);
      std::vector<double> proto(cfg.d_p);
      for (int t = 0; t < cfg.d_p; ++t) proto[t] = obj_mix * u_obj[t] + distinct_mix * v[t];
      return proto;
    }
    throw config_error("gen_world: cannot place distinct prototypes at d_p=" +
                       std::to_string(cfg.d_p) + "; raise d_p or lower the category count");
  };
  w.proto_full = Tensor(cfg.c_f, cfg.d_p);
  w.proto_weak = Tensor(cfg.c_w, cfg.d_p);
  for (int i = 0; i < cfg.c_f; ++i) set_row(w.proto_full, i, next_proto());
  // Weak-side prototypes: overlaps share the full-side vector, the rest are
  // fresh draws.
  for (int j = 0; j < cfg.c_w; ++j)
    set_row(w.proto_weak, j,
            j < cfg.n_overlap ? get_row(w.proto_full, j) : next_proto());

  // Embeddings: independent unit vectors; overlapping pairs share their
  // vector and related pairs are pinned at cosine 0.8 exactly.
  w.emb_full = Tensor(cfg.c_f, cfg.k);
  w.emb_weak = Tensor(cfg.c_w, cfg.k);
  for (int i = 0; i < cfg.c_f; ++i) set_row(w.emb_full, i, random_unit(rng, cfg.k));
  for (int j = 0; j < cfg.c_w; ++j) {
    if (j < cfg.n_overlap) {
      set_row(w.emb_weak, j, get_row(w.emb_full, j));
      continue;
    }
    const Relation* rel = nullptr;
    for (const auto& r : w.cats.relations)
      if (r.weak_index == j) rel = &r;
    if (!rel) {
      set_row(w.emb_weak, j, random_unit(rng, cfg.k));
      continue;
    }
    std::vector<double> e = get_row(w.emb_full, rel->full_index);
    std::vector<double> v(cfg.k);
    while (true) {
      std::vector<double> u = random_unit(rng, cfg.k);
      double dot = 0.0;
      for (int t = 0; t < cfg.k; ++t) dot += u[t] * e[t];
      double norm = 0.0;
      for (int t = 0; t < cfg.k; ++t) {
        v[t] = u[t] - dot * e[t];
        norm += v[t] * v[t];
      }
      if (norm > 1e-12) {
        norm = std::sqrt(norm);
        for (int t = 0; t < cfg.k; ++t) v[t] = 0.8 * e[t] + 0.6 * v[t] / norm;
        break;
      }
    }
    set_row(w.emb_weak, j, v);
  }

  w.templates_full = make_templates(cfg.c_f, cfg.templates_per_dataset, cfg.max_gt_per_image, rng);
  w.templates_weak = make_templates(cfg.c_w, cfg.templates_per_dataset, cfg.max_gt_per_image, rng);
  check_extremes(w.template_cooccurrence(false), "full");
  check_extremes(w.template_cooccurrence(true), "weak");
  return w;
}

SyntheticImage gen_image(const World& world, ImageMode mode, std::int64_t image_id,
                         std::uint64_t seed) {
  Rng rng(seed);
  const bool weak = mode == ImageMode::weak;
  const auto& templates = weak ? world.templates_weak : world.templates_full;
  const Tensor& protos = weak ? world.proto_weak : world.proto_full;
  const int c = weak ? world.cats.c_w() : world.cats.c_f();

  SyntheticImage img;
  img.image_id = image_id;
  img.is_weak = weak;

  // Weighted template choice.
  double total = 0.0;
  for (const auto& t : templates) total += t.weight;
  double pick = rng.uniform(0.0, total);
  const SceneTemplate* tpl = &templates.back();
  for (const auto& t : templates) {
    if (pick < t.weight) {
      tpl = &t;
      break;
    }
    pick -= t.weight;
  }

  for (int cat : tpl->categories) img.gt.push_back({place_gt_box(rng, img.gt), cat});

  int r = world.r_min + rng.next_int(world.r_max - world.r_min + 1);
  // Optional extra instance of a present category; never changes the
  // presence set, and only when the proposal budget allows it.
  if (rng.next_double() < 0.3 && 2 * (static_cast<int>(img.gt.size()) + 1) + 1 <= r &&
      static_cast<int>(img.gt.size()) < std::min(world.max_gt_per_image + 1, 4)) {
    int cat = img.gt[rng.next_int(static_cast<int>(img.gt.size()))].category;
    img.gt.push_back({place_gt_box(rng, img.gt), cat});
  }
  const int n_gt = static_cast<int>(img.gt.size());
  if (r < 2 * n_gt + 1) r = 2 * n_gt + 1;

  // One tight proposal per gt guarantees coverage at IoU >= 0.5; more tight
  // and loose jitters fill in while at least two slots stay for background.
  std::vector<Box> props;
  for (const auto& g : img.gt) props.push_back(jitter_box(rng, g.box, 0.5, 1.01, 0.25, 0.3));
  const struct {
    double lo, hi, shift, scale;
  } rounds[3] = {{0.05, 0.5, 0.9, 0.6}, {0.5, 1.01, 0.25, 0.3}, {0.05, 0.5, 0.9, 0.6}};
  for (const auto& round : rounds)
    for (const auto& g : img.gt) {
      if (static_cast<int>(props.size()) >= r - 2) break;
      props.push_back(jitter_box(rng, g.box, round.lo, round.hi, round.shift, round.scale));
    }
  while (static_cast<int>(props.size()) < r) props.push_back(background_box(rng, img.gt));

  // Shuffle so foreground proposals are not positionally identifiable.
  for (int i = static_cast<int>(props.size()) - 1; i > 0; --i)
    std::swap(props[i], props[rng.next_int(i + 1)]);
  img.proposals = std::move(props);

  img.assignment.resize(img.proposals.size());
  for (std::size_t i = 0; i < img.proposals.size(); ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (int g = 0; g < n_gt; ++g) {
      double v = iou(img.proposals[i], img.gt[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    img.assignment[i] = {best_iou >= 0.5 ? best : -1, best_iou};
  }

  const int d_p = world.d_p();
  const double sigma = world.noise_scale;
  img.features = Tensor(static_cast<int>(img.proposals.size()), world.d_in());
  for (int i = 0; i < img.features.rows(); ++i) {
    const auto& asg = img.assignment[i];
    if (asg.gt_index >= 0) {
      const GtInstance& g = img.gt[asg.gt_index];
      for (int j = 0; j < d_p; ++j)
        img.features.at(i, j) = protos.at(g.category, j) + sigma * rng.next_normal();
      auto delta = encode_box_delta(img.proposals[i], g.box);
      for (int t = 0; t < 4; ++t)
        img.features.at(i, d_p + t) = delta[t] + sigma * rng.next_normal();
    } else {
      for (int j = 0; j < d_p; ++j)
        img.features.at(i, j) = world.proto_background.at(0, j) + sigma * rng.next_normal();
      for (int t = 0; t < 4; ++t) img.features.at(i, d_p + t) = sigma * rng.next_normal();
    }
  }

  if (weak) {
    img.presence.assign(c, 0);
    for (const auto& g : img.gt) img.presence[g.category] = 1;
  }
  return img;
}

DatasetBundle gen_bundle(const World& world, int n_full_train, int n_full_test, int n_weak_train,
                         int n_weak_test, std::uint64_t seed) {
  if (n_full_train < 0 || n_full_test < 0 || n_weak_train < 0 || n_weak_test < 0)
    throw config_error("gen_bundle: sizes must be non-negative");
  DatasetBundle b;
  b.world = world;
  auto fill = [&](std::vector<SyntheticImage>& out, int n, ImageMode mode, std::uint64_t tag,
                  std::int64_t base) {
    out.reserve(n);
    for (int i = 0; i < n; ++i)
      out.push_back(gen_image(world, mode, base + i, mix_seed(seed, tag, i)));
  };
  fill(b.full_train, n_full_train, ImageMode::full, 1, 0);
  fill(b.full_test, n_full_test, ImageMode::full, 2, 1000000);
  fill(b.weak_train, n_weak_train, ImageMode::weak, 3, 2000000);
  fill(b.weak_test, n_weak_test, ImageMode::weak, 4, 3000000);
  return b;
}

namespace {

json world_to_json(const World& w) {
  json rels = json::array();
  for (const auto& r : w.cats.relations)
    rels.push_back({r.full_index, r.weak_index, relation_name(r.kind)});
  json overlap = json::array();
  for (const auto& p : w.cats.overlap) overlap.push_back({p.first, p.second});
  return json{{"type", "world"},
              {"version", 1},
              {"full_names", w.cats.full_names},
              {"weak_names", w.cats.weak_names},
              {"overlap", overlap},
              {"relations", rels},
              {"proto_full", tensor_to_json(w.proto_full)},
              {"proto_weak", tensor_to_json(w.proto_weak)},
              {"proto_background", tensor_to_json(w.proto_background)},
              {"emb_full", tensor_to_json(w.emb_full)},
              {"emb_weak", tensor_to_json(w.emb_weak)},
              {"templates_full", templates_to_json(w.templates_full)},
              {"templates_weak", templates_to_json(w.templates_weak)},
              {"noise_scale", w.noise_scale},
              {"max_gt_per_image", w.max_gt_per_image},
              {"r_min", w.r_min},
              {"r_max", w.r_max},
              {"seed", w.seed}};
}

World world_from_json(const json& j) {
  World w;
  w.cats.full_names = j.at("full_names").get<std::vector<std::string>>();
  w.cats.weak_names = j.at("weak_names").get<std::vector<std::string>>();
  for (const auto& p : j.at("overlap")) w.cats.overlap.push_back({p[0].get<int>(), p[1].get<int>()});
  for (const auto& r : j.at("relations"))
    w.cats.relations.push_back(
        {r[0].get<int>(), r[1].get<int>(), relation_from_name(r[2].get<std::string>())});
  w.proto_full = tensor_from_json(j.at("proto_full"));
  w.proto_weak = tensor_from_json(j.at("proto_weak"));
  w.proto_background = tensor_from_json(j.at("proto_background"));
  w.emb_full = tensor_from_json(j.at("emb_full"));
  w.emb_weak = tensor_from_json(j.at("emb_weak"));
  w.templates_full = templates_from_json(j.at("templates_full"));
  w.templates_weak = templates_from_json(j.at("templates_weak"));
  w.noise_scale = j.at("noise_scale").get<double>();
  w.max_gt_per_image = j.at("max_gt_per_image").get<int>();
  w.r_min = j.at("r_min").get<int>();
  w.r_max = j.at("r_max").get<int>();
  w.seed = j.at("seed").get<std::uint64_t>();
  return w;
}

json image_to_json(const SyntheticImage& img, const char* split) {
  json props = json::array();
  for (const auto& b : img.proposals) props.push_back({b.x1, b.y1, b.x2, b.y2});
  json gts = json::array();
  for (const auto& g : img.gt) gts.push_back({g.box.x1, g.box.y1, g.box.x2, g.box.y2, g.category});
  json assign = json::array();
  for (const auto& a : img.assignment) assign.push_back({a.gt_index, a.iou_value});
  json j{{"type", "image"},     {"split", split},
         {"id", img.image_id},  {"weak", img.is_weak},
         {"proposals", props},  {"features", tensor_to_json(img.features)},
         {"gt", gts},           {"assign", assign}};
  if (img.is_weak) j["presence"] = img.presence;
  return j;
}

SyntheticImage image_from_json(const json& j) {
  SyntheticImage img;
  img.image_id = j.at("id").get<std::int64_t>();
  img.is_weak = j.at("weak").get<bool>();
  for (const auto& p : j.at("proposals"))
    img.proposals.push_back(
        {p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
  img.features = tensor_from_json(j.at("features"));
  for (const auto& g : j.at("gt"))
    img.gt.push_back({{g[0].get<double>(), g[1].get<double>(), g[2].get<double>(),
                       g[3].get<double>()},
                      g[4].get<int>()});
  for (const auto& a : j.at("assign"))
    img.assignment.push_back({a[0].get<int>(), a[1].get<double>()});
  if (img.is_weak) img.presence = j.at("presence").get<std::vector<int>>();
  return img;
}

}  // namespace

void save_bundle(const DatasetBundle& bundle, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw config_error("save_bundle: cannot open " + path);
  out << world_to_json(bundle.world).dump() << "\n";
  auto dump_split = [&](const std::vector<SyntheticImage>& images, const char* split) {
    for (const auto& img : images) out << image_to_json(img, split).dump() << "\n";
  };
  dump_split(bundle.full_train, "full_train");
  dump_split(bundle.full_test, "full_test");
  dump_split(bundle.weak_train, "weak_train");
  dump_split(bundle.weak_test, "weak_test");
  if (!out) throw config_error("save_bundle: write failed for " + path);
}

DatasetBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("load_bundle: cannot open " + path);
  DatasetBundle b;
  std::string line;
  int lineno = 0;
  bool have_world = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "world") {
        if (j.at("version").get<int>() != 1)
          throw config_error("unsupported bundle version");
        b.world = world_from_json(j);
        have_world = true;
      } else if (type == "image") {
        if (!have_world) throw config_error("image record before world header");
        const std::string split = j.at("split").get<std::string>();
        SyntheticImage img = image_from_json(j);
        if (split == "full_train") b.full_train.push_back(std::move(img));
        else if (split == "full_test") b.full_test.push_back(std::move(img));
        else if (split == "weak_train") b.weak_train.push_back(std::move(img));
        else if (split == "weak_test") b.weak_test.push_back(std::move(img));
        else throw config_error("unknown split '" + split + "'");
      } else {
        throw config_error("unknown record type '" + type + "'");
      }
    } catch (const config_error& e) {
      throw config_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw config_error(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
    }
  }
  if (!have_world) throw config_error(path + ": missing world header record");
  return b;
}

std::vector<std::vector<int>> label_sets(const std::vector<SyntheticImage>& images) {
  std::vector<std::vector<int>> sets;
  sets.reserve(images.size());
  for (const auto& img : images) {
    std::set<int> cats;
    if (img.is_weak) {
      for (std::size_t c = 0; c < img.presence.size(); ++c)
        if (img.presence[c]) cats.insert(static_cast<int>(c));
    } else {
      for (const auto& g : img.gt) cats.insert(g.category);
    }
    sets.emplace_back(cats.begin(), cats.end());
  }
  return sets;
}

void load_embeddings(World& world, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("embeddings: cannot open " + path);
  std::map<std::string, std::vector<double>> table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    std::vector<double> v;
    for (std::size_t i = 1; i < toks.size(); ++i) {
      try {
        v.push_back(std::stod(toks[i]));
      } catch (const std::exception&) {
        throw config_error("embeddings: " + path + ":" + std::to_string(lineno) +
                           ": bad number '" + toks[i] + "'");
      }
    }
    if (static_cast<int>(v.size()) != world.k())
      throw config_error("embeddings: " + path + ":" + std::to_string(lineno) + ": expected " +
                         std::to_string(world.k()) + " values, got " + std::to_string(v.size()));
    table[toks[0]] = std::move(v);
  }
  auto lookup = [&](const std::string& name) -> const std::vector<double>& {
    auto it = table.find(name);
    if (it == table.end()) throw config_error("embeddings: no vector for category '" + name + "'");
    return it->second;
  };
  for (int i = 0; i < world.cats.c_f(); ++i) set_row(world.emb_full, i, lookup(world.cats.full_names[i]));
  for (int j = 0; j < world.cats.c_w(); ++j) set_row(world.emb_weak, j, lookup(world.cats.weak_names[j]));
  for (const auto& [fi, wi] : world.cats.overlap) set_row(world.emb_weak, wi, get_row(world.emb_full, fi));
}

std::vector<Relation> load_relations(const std::string& path, const CategorySpace& cats) {
  std::ifstream in(path);
  if (!in) throw config_error("relations: cannot open " + path);
  auto index_of = [](const std::vector<std::string>& names, const std::string& name,
                     const std::string& ctx) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw config_error(ctx + ": unknown category '" + name + "'");
  };
  std::vector<Relation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) fields.push_back(trim(field));
    const std::string ctx = "relations: " + path + ":" + std::to_string(lineno);
    if (fields.size() != 3)
      throw config_error(ctx + ": expected 'full<TAB>weak<TAB>kind'");
    out.push_back({index_of(cats.full_names, fields[0], ctx),
                   index_of(cats.weak_names, fields[1], ctx), relation_from_name(fields[2])});
  }
  return out;
}

}  // namespace ct
