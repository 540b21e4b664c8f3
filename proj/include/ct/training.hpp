#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ct/config.hpp"
#include "ct/dsmt.hpp"
#include "ct/evaluation.hpp"
#include "ct/graph.hpp"
#include "ct/rng.hpp"
#include "ct/sgcn.hpp"
#include "ct/synthetic.hpp"
#include "ct/tensor.hpp"

namespace ct {

struct LossReport {
  double mil = 0.0;
  double full = 0.0;
  double cons_f = 0.0;
  double cons_w = 0.0;
  double total = 0.0;
};

/// SGD with momentum and decoupled-from-nothing weight decay (added to the
/// gradient, the classic formulation). Parameters are named so momentum
/// buffers survive checkpointing.
struct SgdOptimizer {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::vector<double>> buffers;

  void attach(std::vector<std::pair<std::string, Tensor>> named);
  void zero_grad();
  void step(double lr);
};

/// All learnable and teacher parameters of one run.
struct BranchSet {
  FullStudentParams full_student;
  WeakStudentParams weak_student;
  TeacherParams teacher;
  SgcnParams sgcn;
};

struct TrainerState {
  RunConfig cfg;
  BranchSet params;
  OverlapMap overlap;
  SgdOptimizer opt;
  // Constants derived from the bundle: normalized adjacencies, bipartite
  // edges, frozen input embeddings.
  Tensor a_hat_full, a_hat_weak, b_edges;
  Tensor h0_full, h0_weak;
  long step = 0;
  Rng rng;
  std::vector<int> perm_full, perm_weak;
  int cursor_full = 0, cursor_weak = 0;
};

/// Builds graphs from the bundle's training splits, initializes all branches
/// (both student trunks start from the same draw, the teacher as a copy of
/// its assembled source) and wires the optimizer over the parameters enabled
/// by the ablation flags.
TrainerState init_trainer(const RunConfig& cfg, const DatasetBundle& bundle);

/// Every parameter tensor and a stable name, for checkpoints. Tensors are
/// shared handles, so the returned copies alias the live parameters.
std::vector<std::pair<std::string, Tensor>> named_params(const BranchSet& params);
/// The subset that trains under the given flags (never the teacher).
std::vector<std::pair<std::string, Tensor>> trainable_params(const BranchSet& params,
                                                             bool enable_dsmt, bool enable_sgcn);

// Loss terms. Teacher inputs carry no gradients by construction.
Tensor loss_mil(Tape& tape, const Tensor& image_scores, const std::vector<int>& presence);
Tensor loss_full(Tape& tape, const Tensor& cls_logits, const Tensor& deltas,
                 const SyntheticImage& img, int c_f);
Tensor loss_cons_full(Tape& tape, const Tensor& student_deltas, const Tensor& student_probs,
                      const Tensor& teacher_deltas, const Tensor& teacher_probs,
                      const OverlapMap& overlap);
Tensor loss_cons_weak(Tape& tape, const Tensor& image_scores, const Tensor& teacher_scores);

/// Image-level teacher score per weak category: max over proposals of the
/// softmax probability (background column dropped), or the clamped sum.
Tensor teacher_image_aggregate(const Tensor& cls_probs, TeacherAggregate kind);

using Batch = std::vector<const SyntheticImage*>;

/// Total loss over the two batches on the caller's tape, honoring the
/// ablation flags; no parameter updates.
Tensor total_loss(TrainerState& state, const Batch& full_batch, const Batch& weak_batch,
                  Tape& tape, LossReport* report);

/// Draws the next batches (epoch-shuffled cursors), runs two forward passes,
/// one backward, one SGD step and one EMA step. Throws numeric_error naming
/// the first non-finite loss term.
LossReport train_step(TrainerState& state, const Batch& full_batch, const Batch& weak_batch);

Batch next_full_batch(TrainerState& state, const DatasetBundle& bundle);
Batch next_weak_batch(TrainerState& state, const DatasetBundle& bundle);

void save_checkpoint(const TrainerState& state, const std::string& path);
void load_checkpoint(TrainerState& state, const std::string& path);

struct TrainResult {
  EvalReport final_eval;
  LossReport last_losses;
  long steps_run = 0;
};

/// Full training loop: writes the resolved config, a metric log
/// (metrics.csv) with one row per evaluation point, and a final checkpoint
/// into out_dir. Evaluation runs on weak_test every eval_every steps and at
/// the final step.
TrainResult run_training(TrainerState& state, const DatasetBundle& bundle,
                         const std::string& out_dir);

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-4;
  bool passed = false;
};

/// Finite-difference verification of the full composite loss on a tiny
/// world: every trainable parameter is probed against central differences.
GradcheckReport run_gradcheck(std::uint64_t seed = 5);

}  // namespace ct
