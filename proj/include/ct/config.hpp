#pragma once

#include <string>

namespace ct {

enum class EdgeMode { similarity, handcrafted, combined };
enum class TrunkSource { mean, full, weak };
enum class TeacherAggregate { max, sum_clamped };

/// Resolved run configuration. File format is line-oriented `key = value`
/// with '#' comments; unknown keys are rejected. Command-line flags override
/// file values which override the defaults below.
struct RunConfig {
  // Category spaces and synthetic world.
  int c_f = 12;
  int c_w = 8;
  int n_overlap = 3;
  int d_p = 16;              // prototype feature dimension; d_in = d_p + 4
  int k = 32;                // semantic embedding dimension
  double noise_scale = 0.15;  // feature noise sigma
  int templates_per_dataset = 10;
  int n_relations = 2;       // auto-generated cross-dataset relation triples
  int max_gt_per_image = 3;
  int r_min = 8;             // proposals per image, inclusive range
  int r_max = 32;
  int n_full_train = 400;
  int n_full_test = 100;
  int n_weak_train = 800;
  int n_weak_test = 200;

  // Model dimensions.
  int d = 64;        // branch feature dimension
  int hidden1 = 32;  // graph conv hidden dims
  int hidden2 = 64;

  // Graph construction.
  double tau = 0.4;
  EdgeMode edge_mode = EdgeMode::similarity;

  // Loss weights and optimization.
  double lambda_full = 0.5;
  double lambda_cons = 1.0;
  double ema_alpha = 0.999;
  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int lr_decay_steps = 0;       // 0 disables step decay
  double lr_decay_factor = 0.1;
  int batch_full = 8;
  int batch_weak = 8;
  int steps = 3000;
  int eval_every = 500;
  std::uint64_t seed = 42;

  // Ablation switches and assembly variants.
  bool enable_dsmt = true;
  bool enable_sgcn = true;
  TrunkSource teacher_trunk_source = TrunkSource::mean;
  TeacherAggregate teacher_aggregate = TeacherAggregate::max;

  // Evaluation.
  double nms_iou = 0.3;
  std::string eval_split = "weak_test";

  // Paths.
  std::string bundle_path;
  std::string embedding_path;
  std::string relation_path;
  std::string out_dir = "out";

  int d_in() const { return d_p + 4; }

  /// Applies one key/value pair; throws config_error on unknown key or bad value.
  void apply(const std::string& key, const std::string& value);
  /// Merges `key = value` lines from a file over the current values.
  void load_file(const std::string& path);
  /// Canonical dump of every key, parseable by load_file.
  std::string resolved_text() const;
  /// Consistency checks (n_overlap bounds, positive sizes, ...).
  void validate() const;
};

std::string to_string(EdgeMode m);
std::string to_string(TrunkSource s);
std::string to_string(TeacherAggregate a);

}  // namespace ct
