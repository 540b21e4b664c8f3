#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ct/boxes.hpp"
#include "ct/config.hpp"
#include "ct/tensor.hpp"

namespace ct {

enum class RelationKind { subclass, includes, similar };

/// Cross-dataset category relationship (full-side index, weak-side index).
struct Relation {
  int full_index = 0;
  int weak_index = 0;
  RelationKind kind = RelationKind::similar;
};

struct CategorySpace {
  std::vector<std::string> full_names;
  std::vector<std::string> weak_names;
  /// (full_index, weak_index) pairs for shared categories; injective on both sides.
  std::vector<std::pair<int, int>> overlap;
  std::vector<Relation> relations;

  int c_f() const { return static_cast<int>(full_names.size()); }
  int c_w() const { return static_cast<int>(weak_names.size()); }
};

/// Weighted subset of one dataset's categories; image presence sets are drawn
/// from these, which is what shapes the co-occurrence graphs.
struct SceneTemplate {
  std::vector<int> categories;
  double weight = 1.0;
};

/// Everything the generator needs to emit images: category spaces, visual
/// prototypes (unit vectors, shared across an overlap pair), semantic
/// embeddings, and scene templates per dataset.
struct World {
  CategorySpace cats;
  Tensor proto_full;        // c_f x d_p
  Tensor proto_weak;        // c_w x d_p
  Tensor proto_background;  // 1 x d_p
  Tensor emb_full;          // c_f x k
  Tensor emb_weak;          // c_w x k
  std::vector<SceneTemplate> templates_full;
  std::vector<SceneTemplate> templates_weak;
  double noise_scale = 0.25;
  int max_gt_per_image = 3;
  int r_min = 8;
  int r_max = 32;
  std::uint64_t seed = 0;

  int d_p() const { return proto_full.cols(); }
  int k() const { return emb_full.cols(); }
  int d_in() const { return d_p() + 4; }

  /// Co-occurrence probabilities implied by the scene templates:
  /// P[i][j] = P(j present | i present). Reference for the generated data.
  Tensor template_cooccurrence(bool weak_side) const;
};

struct GtInstance {
  Box box;
  int category = 0;
};

struct ProposalAssignment {
  int gt_index = -1;  // -1 = background
  double iou_value = 0.0;
};

struct SyntheticImage {
  std::int64_t image_id = 0;
  bool is_weak = false;
  std::vector<Box> proposals;
  Tensor features;  // r x d_in
  /// Instance annotations. Training labels for fully-annotated images; for
  /// weak images these are retained for evaluation only and the training
  /// path must consume presence() instead.
  std::vector<GtInstance> gt;
  std::vector<ProposalAssignment> assignment;
  /// y_w: 0/1 presence per weak category (weak images only).
  std::vector<int> presence;

  int r() const { return static_cast<int>(proposals.size()); }
};

struct DatasetBundle {
  World world;
  std::vector<SyntheticImage> full_train;
  std::vector<SyntheticImage> full_test;
  std::vector<SyntheticImage> weak_train;
  std::vector<SyntheticImage> weak_test;
};

enum class ImageMode { full, weak };

World gen_world(const RunConfig& cfg, std::uint64_t seed);

SyntheticImage gen_image(const World& world, ImageMode mode, std::int64_t image_id,
                         std::uint64_t seed);

DatasetBundle gen_bundle(const World& world, int n_full_train, int n_full_test, int n_weak_train,
                         int n_weak_test, std::uint64_t seed);

void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle(const std::string& path);

/// Per-image sets of present categories, for co-occurrence counting.
std::vector<std::vector<int>> label_sets(const std::vector<SyntheticImage>& images);

/// Replaces the generated embedding tables with vectors from a file
/// (`name v1 ... vk` per line). Overlapping pairs are re-synced to the
/// full-side vector afterwards.
void load_embeddings(World& world, const std::string& path);

/// Relation file: `full_name <TAB> weak_name <TAB> subclass|includes|similar`.
std::vector<Relation> load_relations(const std::string& path, const CategorySpace& cats);

}  // namespace ct
