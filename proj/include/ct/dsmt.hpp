#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ct/boxes.hpp"
#include "ct/config.hpp"
#include "ct/rng.hpp"
#include "ct/sgcn.hpp"
#include "ct/tensor.hpp"

namespace ct {

/// x * w + b with w: in x out, b: 1 x out.
struct LinearParams {
  Tensor w;
  Tensor b;
};

Tensor linear(Tape& tape, const Tensor& x, const LinearParams& p);
LinearParams init_linear(int in, int out, Rng& rng);
LinearParams zero_linear(int in, int out);

/// Two-layer MLP d_in -> d -> d with leaky ReLU after each layer; the shared
/// region-feature trunk of every branch.
struct TrunkParams {
  LinearParams l1;
  LinearParams l2;
};

Tensor trunk_forward(Tape& tape, const Tensor& x, const TrunkParams& p);
TrunkParams init_trunk(int d_in, int d, Rng& rng);

/// Correspondence between the two label spaces; injective both ways. The
/// background classes of student and teacher heads are implicitly mapped to
/// each other (both sit in the last column).
struct OverlapMap {
  std::vector<std::pair<int, int>> pairs;  // (full_index, weak_index)
  std::vector<int> full_of_weak;           // c_w entries, -1 where not shared

  static OverlapMap from_pairs(const std::vector<std::pair<int, int>>& pairs, int c_f, int c_w);
  std::vector<int> full_indices() const;
  std::vector<int> weak_indices() const;
  bool empty() const { return pairs.empty(); }
};

/// Fully-supervised student: trunk, (C_f + 1)-way classifier with background
/// last, class-agnostic 4-d box regressor.
struct FullStudentParams {
  TrunkParams trunk;
  LinearParams cls;  // d -> c_f + 1
  LinearParams reg;  // d -> 4, zero-initialized so boxes start at the proposals
};

/// Weakly-supervised student: trunk plus the two-stream MIL head. No
/// background class.
struct WeakStudentParams {
  TrunkParams trunk;
  LinearParams phi_c;  // d -> c_w, classification stream
  LinearParams phi_d;  // d -> c_w, detection stream
};

/// Teacher: same architecture as the fully-supervised student but with the
/// weak label space (+ background). Never trained; mutated only by ema_update.
struct TeacherParams {
  TrunkParams trunk;
  LinearParams cls;  // d -> c_w + 1
  LinearParams reg;  // d -> 4

  std::vector<Tensor> all_params() const;
};

struct FullStudentOut {
  Tensor cls_logits;  // r x (c_f + 1)
  Tensor deltas;      // r x 4
};

/// trunk -> optional semantic fusion -> heads. Pass h_full/g_f as nullptr to
/// skip fusion.
FullStudentOut full_student_forward(Tape& tape, const Tensor& region_features,
                                    const FullStudentParams& p, const Tensor* h_full,
                                    const Tensor* g_f);

struct WeakStudentOut {
  Tensor image_scores;   // 1 x c_w, entries in [0, 1]
  Tensor region_scores;  // r x c_w, sigma_c ⊙ sigma_d
  Tensor sigma_c;        // rows sum to 1
  Tensor sigma_d;        // columns sum to 1
};

WeakStudentOut weak_student_forward(Tape& tape, const Tensor& region_features,
                                    const WeakStudentParams& p, const Tensor* h_weak,
                                    const Tensor* g_w);

struct TeacherOut {
  Tensor cls_probs;  // r x (c_w + 1), row-softmaxed
  Tensor deltas;     // r x 4
};

/// No fusion, no gradients: teacher parameters never reach a tape.
TeacherOut teacher_forward(const Tensor& region_features, const TeacherParams& p);

/// One EMA step theta_t <- alpha * theta_t + (1 - alpha) * source. Sources:
/// regression head and background column from the fully-supervised student,
/// classifier columns from phi_c (averaged with the matching full-student
/// column for overlapping categories), trunk per `trunk_source`. With
/// dsmt_enabled = false the teacher tracks the weak student only: trunk from
/// the weak trunk and no overlap mixing.
void ema_update(TeacherParams& teacher, const FullStudentParams& full_student,
                const WeakStudentParams& weak_student, const OverlapMap& overlap, double alpha,
                TrunkSource trunk_source = TrunkSource::mean, bool dsmt_enabled = true);

/// Teacher initialized as an exact copy of the assembled student source
/// (an EMA step with alpha = 0).
TeacherParams assemble_teacher(const FullStudentParams& full_student,
                               const WeakStudentParams& weak_student, const OverlapMap& overlap,
                               int d, int c_w, TrunkSource trunk_source, bool dsmt_enabled);

}  // namespace ct
