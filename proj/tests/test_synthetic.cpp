#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "ct/errors.hpp"
#include "ct/graph.hpp"
#include "ct/synthetic.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ct;

namespace {

RunConfig small_cfg() {
  RunConfig cfg;
  cfg.c_f = 12;
  cfg.c_w = 8;
  cfg.n_overlap = 3;
  cfg.d_p = 16;
  cfg.k = 12;
  return cfg;
}

double row_cosine(const Tensor& a, int ra, const Tensor& b, int rb) {
  double dot = 0, na = 0, nb = 0;
  for (int j = 0; j < a.cols(); ++j) {
    dot += a.at(ra, j) * b.at(rb, j);
    na += a.at(ra, j) * a.at(ra, j);
    nb += b.at(rb, j) * b.at(rb, j);
  }
  return dot / std::sqrt(na * nb);
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && testutil::bitwise_equal(a.data(), b.data());
}

bool images_equal(const SyntheticImage& a, const SyntheticImage& b) {
  if (a.image_id != b.image_id || a.is_weak != b.is_weak || a.r() != b.r()) return false;
  for (int i = 0; i < a.r(); ++i) {
    if (a.proposals[i].x1 != b.proposals[i].x1 || a.proposals[i].y2 != b.proposals[i].y2)
      return false;
    if (a.assignment[i].gt_index != b.assignment[i].gt_index ||
        a.assignment[i].iou_value != b.assignment[i].iou_value)
      return false;
  }
  if (a.gt.size() != b.gt.size() || a.presence != b.presence) return false;
  for (std::size_t g = 0; g < a.gt.size(); ++g)
    if (a.gt[g].category != b.gt[g].category || a.gt[g].box.x1 != b.gt[g].box.x1) return false;
  return tensors_equal(a.features, b.features);
}

bool bundles_equal(const DatasetBundle& a, const DatasetBundle& b) {
  if (!tensors_equal(a.world.proto_full, b.world.proto_full)) return false;
  if (!tensors_equal(a.world.emb_weak, b.world.emb_weak)) return false;
  if (a.world.cats.full_names != b.world.cats.full_names) return false;
  if (a.world.cats.overlap != b.world.cats.overlap) return false;
  auto split_eq = [](const std::vector<SyntheticImage>& x, const std::vector<SyntheticImage>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!images_equal(x[i], y[i])) return false;
    return true;
  };
  return split_eq(a.full_train, b.full_train) && split_eq(a.full_test, b.full_test) &&
         split_eq(a.weak_train, b.weak_train) && split_eq(a.weak_test, b.weak_test);
}

}  // namespace

TEST_CASE("gen_world: overlap shares prototypes and embeddings") {
  World w = gen_world(small_cfg(), 7);
  CHECK(w.cats.overlap.size() == 3);
  for (const auto& [f, j] : w.cats.overlap) {
    CHECK(row_cosine(w.proto_full, f, w.proto_weak, j) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row_cosine(w.emb_full, f, w.emb_weak, j) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gen_world: deterministic per seed") {
  World a = gen_world(small_cfg(), 7);
  World b = gen_world(small_cfg(), 7);
  CHECK(tensors_equal(a.proto_full, b.proto_full));
  CHECK(tensors_equal(a.emb_weak, b.emb_weak));
  CHECK(a.templates_weak.size() == b.templates_weak.size());
  World c = gen_world(small_cfg(), 8);
  CHECK_FALSE(tensors_equal(a.proto_full, c.proto_full));
}

TEST_CASE("gen_world: infeasible overlap rejected") {
  RunConfig cfg = small_cfg();
  cfg.c_f = 2;
  cfg.c_w = 4;
  cfg.n_overlap = 3;
  CHECK_THROWS_AS(gen_world(cfg, 1), config_error);
}

TEST_CASE("gen_world: prototype separation and relation alignment") {
  World w = gen_world(small_cfg(), 21);
  const int n = 3;
  for (int i = 0; i < w.cats.c_f(); ++i)
    for (int j = 0; j < w.cats.c_w(); ++j) {
      if (i < n && i == j) continue;  // shared pair
      CHECK(row_cosine(w.proto_full, i, w.proto_weak, j) < 0.8);
    }
  CHECK(!w.cats.relations.empty());
  for (const auto& rel : w.cats.relations)
    CHECK(row_cosine(w.emb_full, rel.full_index, w.emb_weak, rel.weak_index) >= 0.7);
}

TEST_CASE("gen_world: template co-occurrence extremes for thresholding") {
  World w = gen_world(small_cfg(), 33);
  for (bool weak : {false, true}) {
    Tensor p = w.template_cooccurrence(weak);
    double hi = 0.0, lo = 1.0;
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < p.cols(); ++j)
        if (i != j) {
          hi = std::max(hi, p.at(i, j));
          lo = std::min(lo, p.at(i, j));
        }
    CHECK(hi >= 0.5);
    CHECK(lo <= 0.1);
  }
}

TEST_CASE("gen_image: every gt is covered by a foreground proposal") {
  World w = gen_world(small_cfg(), 3);
  for (int i = 0; i < 50; ++i) {
    SyntheticImage img = gen_image(w, ImageMode::full, i, mix_seed(3, 1, i));
    REQUIRE(img.r() >= 1);
    std::vector<bool> covered(img.gt.size(), false);
    for (const auto& asg : img.assignment)
      if (asg.gt_index >= 0) {
        CHECK(asg.iou_value >= 0.5);
        covered[asg.gt_index] = true;
      }
    for (bool c : covered) CHECK(c);
    CHECK(img.gt.size() >= 1);
    CHECK(img.gt.size() <= 4);
  }
}

TEST_CASE("gen_image: noiseless features carry prototype and exact deltas") {
  RunConfig cfg = small_cfg();
  cfg.noise_scale = 0.0;
  World w = gen_world(cfg, 5);
  SyntheticImage img = gen_image(w, ImageMode::full, 0, 99);
  for (int i = 0; i < img.r(); ++i) {
    const auto& asg = img.assignment[i];
    if (asg.gt_index < 0) continue;
    const auto& g = img.gt[asg.gt_index];
    for (int j = 0; j < w.d_p(); ++j)
      CHECK(img.features.at(i, j) == w.proto_full.at(g.category, j));
    auto d = encode_box_delta(img.proposals[i], g.box);
    for (int t = 0; t < 4; ++t) CHECK(img.features.at(i, w.d_p() + t) == d[t]);
  }
}

TEST_CASE("gen_image: background features stay dissimilar to prototypes") {
  World w = gen_world(small_cfg(), 11);  // noise_scale 0.25
  double worst_mean = 0.0;
  int bg_count = 0;
  double cos_sum = 0.0;
  for (int i = 0; i < 20 && bg_count < 100; ++i) {
    SyntheticImage img = gen_image(w, ImageMode::full, i, mix_seed(11, 1, i));
    for (int p = 0; p < img.r() && bg_count < 100; ++p) {
      if (img.assignment[p].gt_index >= 0) continue;
      ++bg_count;
      Tensor feat(1, w.d_p());
      for (int j = 0; j < w.d_p(); ++j) feat.at(0, j) = img.features.at(p, j);
      double best = -1.0;
      for (int c = 0; c < w.cats.c_f(); ++c)
        best = std::max(best, row_cosine(feat, 0, w.proto_full, c));
      cos_sum += best;
      worst_mean = std::max(worst_mean, best);
    }
  }
  REQUIRE(bg_count >= 50);
  CHECK(cos_sum / bg_count < 0.5);  // dissimilar in expectation
}

TEST_CASE("gen_image: weak mode exposes presence, keeps gt for evaluation only") {
  World w = gen_world(small_cfg(), 13);
  SyntheticImage img = gen_image(w, ImageMode::weak, 0, 1234);
  REQUIRE(img.is_weak);
  REQUIRE(static_cast<int>(img.presence.size()) == w.cats.c_w());
  std::set<int> present;
  for (const auto& g : img.gt) present.insert(g.category);
  for (int c = 0; c < w.cats.c_w(); ++c)
    CHECK(img.presence[c] == (present.count(c) ? 1 : 0));
  // The training-facing label view never needs gt: label_sets on weak images
  // reads presence only.
  auto sets = label_sets({img});
  CHECK(sets[0] == std::vector<int>(present.begin(), present.end()));

  SyntheticImage full = gen_image(w, ImageMode::full, 1, 4321);
  CHECK(full.presence.empty());
}

TEST_CASE("gen_bundle: sizes, determinism, unique ids") {
  World w = gen_world(small_cfg(), 17);
  DatasetBundle a = gen_bundle(w, 20, 5, 20, 5, 17);
  CHECK(a.full_train.size() == 20);
  CHECK(a.full_test.size() == 5);
  CHECK(a.weak_train.size() == 20);
  CHECK(a.weak_test.size() == 5);
  DatasetBundle b = gen_bundle(w, 20, 5, 20, 5, 17);
  CHECK(bundles_equal(a, b));
  std::set<std::int64_t> ids;
  for (const auto* split : {&a.full_train, &a.full_test, &a.weak_train, &a.weak_test})
    for (const auto& img : *split) CHECK(ids.insert(img.image_id).second);
}

TEST_CASE("bundle: save/load round trip is lossless") {
  World w = gen_world(small_cfg(), 19);
  DatasetBundle a = gen_bundle(w, 6, 2, 6, 2, 19);
  const std::string path = std::filesystem::temp_directory_path() / "ct_bundle_test.jsonl";
  save_bundle(a, path);
  DatasetBundle b = load_bundle(path);
  CHECK(bundles_equal(a, b));
  std::filesystem::remove(path);
}

TEST_CASE("bundle: malformed line reports its number") {
  const std::string path = std::filesystem::temp_directory_path() / "ct_bundle_bad.jsonl";
  {
    World w = gen_world(small_cfg(), 23);
    DatasetBundle a = gen_bundle(w, 1, 0, 1, 0, 23);
    save_bundle(a, path);
    std::ofstream app(path, std::ios::app);
    app << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_bundle(path), doctest::Contains(":4:"), config_error);
  std::filesystem::remove(path);
}

TEST_CASE("empirical co-occurrence converges to template probabilities") {
  World w = gen_world(small_cfg(), 42);
  DatasetBundle b = gen_bundle(w, 0, 0, 2000, 0, 42);
  auto t = co_occurrence(label_sets(b.weak_train), w.cats.c_w());
  Tensor expected = w.template_cooccurrence(true);
  for (int i = 0; i < expected.rows(); ++i) {
    if (t.image_count[i] == 0) continue;
    for (int j = 0; j < expected.cols(); ++j)
      CHECK(std::abs(t.p.at(i, j) - expected.at(i, j)) < 0.05);
  }
}

TEST_CASE("feature separability: nearest prototype wins at sigma 0.1") {
  RunConfig cfg = small_cfg();
  cfg.noise_scale = 0.1;
  World w = gen_world(cfg, 51);
  long correct = 0, total = 0;
  for (int i = 0; i < 60; ++i) {
    SyntheticImage img = gen_image(w, ImageMode::full, i, mix_seed(51, 1, i));
    for (int p = 0; p < img.r(); ++p) {
      if (img.assignment[p].gt_index < 0) continue;
      Tensor feat(1, w.d_p());
      for (int j = 0; j < w.d_p(); ++j) feat.at(0, j) = img.features.at(p, j);
      int best = 0;
      for (int c = 1; c < w.cats.c_f(); ++c)
        if (row_cosine(feat, 0, w.proto_full, c) > row_cosine(feat, 0, w.proto_full, best))
          best = c;
      ++total;
      if (best == img.gt[img.assignment[p].gt_index].category) ++correct;
    }
  }
  REQUIRE(total > 100);
  CHECK(static_cast<double>(correct) / total >= 0.9);
}

TEST_CASE("embedding and relation files load and validate") {
  namespace fs = std::filesystem;
  World w = gen_world(small_cfg(), 61);
  const std::string epath = fs::temp_directory_path() / "ct_emb_test.txt";
  {
    std::ofstream out(epath);
    auto dump = [&](const std::vector<std::string>& names, int base) {
      for (std::size_t i = 0; i < names.size(); ++i) {
        out << names[i];
        for (int j = 0; j < w.k(); ++j) out << " " << (base + static_cast<int>(i) + j * 0.25);
        out << "\n";
      }
    };
    dump(w.cats.full_names, 1);
    dump(w.cats.weak_names, 100);
  }
  load_embeddings(w, epath);
  CHECK(w.emb_full.at(0, 0) == 1.0);
  CHECK(w.emb_full.at(0, 1) == 1.25);
  // overlapping pairs re-synced to the full-side vector
  CHECK(w.emb_weak.at(0, 0) == w.emb_full.at(0, 0));
  CHECK(w.emb_weak.at(3, 0) == 103.0);  // non-overlapping keeps its own line
  fs::remove(epath);

  const std::string rpath = fs::temp_directory_path() / "ct_rel_test.txt";
  {
    std::ofstream out(rpath);
    out << w.cats.full_names[4] << "\t" << w.cats.weak_names[5] << "\tsubclass\n";
  }
  auto rels = load_relations(rpath, w.cats);
  REQUIRE(rels.size() == 1);
  CHECK(rels[0].full_index == 4);
  CHECK(rels[0].weak_index == 5);
  CHECK(rels[0].kind == RelationKind::subclass);
  {
    std::ofstream out(rpath);
    out << "nosuch\t" << w.cats.weak_names[5] << "\tsubclass\n";
  }
  CHECK_THROWS_AS(load_relations(rpath, w.cats), config_error);
  fs::remove(rpath);
}
