#include "ct/dsmt.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "ct/errors.hpp"

namespace ct {

Tensor linear(Tape& tape, const Tensor& x, const LinearParams& p) {
  return tape.add_rowvec(tape.matmul(x, p.w), p.b);
}

LinearParams init_linear(int in, int out, Rng& rng) {
  LinearParams p;
  p.w = Tensor(in, out, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : p.w.data()) v = rng.uniform(-bound, bound);
  p.b = Tensor(1, out, true);
  return p;
}

LinearParams zero_linear(int in, int out) {
  return {Tensor(in, out, true), Tensor(1, out, true)};
}

Tensor trunk_forward(Tape& tape, const Tensor& x, const TrunkParams& p) {
  Tensor h = tape.leaky_relu(linear(tape, x, p.l1), kLeakySlope);
  return tape.leaky_relu(linear(tape, h, p.l2), kLeakySlope);
}

TrunkParams init_trunk(int d_in, int d, Rng& rng) {
  return {init_linear(d_in, d, rng), init_linear(d, d, rng)};
}

OverlapMap OverlapMap::from_pairs(const std::vector<std::pair<int, int>>& pairs, int c_f,
                                  int c_w) {
  OverlapMap m;
  m.pairs = pairs;
  m.full_of_weak.assign(c_w, -1);
  std::set<int> fulls;
  for (const auto& [f, w] : pairs) {
    if (f < 0 || f >= c_f || w < 0 || w >= c_w)
      throw config_error("overlap map: pair (" + std::to_string(f) + ", " + std::to_string(w) +
                         ") out of range");
    if (!fulls.insert(f).second || m.full_of_weak[w] != -1)
      throw config_error("overlap map: indices must be injective on both sides");
    m.full_of_weak[w] = f;
  }
  return m;
}

std::vector<int> OverlapMap::full_indices() const {
  std::vector<int> out;
  for (const auto& p : pairs) out.push_back(p.first);
  return out;
}

std::vector<int> OverlapMap::weak_indices() const {
  std::vector<int> out;
  for (const auto& p : pairs) out.push_back(p.second);
  return out;
}

std::vector<Tensor> TeacherParams::all_params() const {
  return {trunk.l1.w, trunk.l1.b, trunk.l2.w, trunk.l2.b, cls.w, cls.b, reg.w, reg.b};
}

FullStudentOut full_student_forward(Tape& tape, const Tensor& region_features,
                                    const FullStudentParams& p, const Tensor* h_full,
                                    const Tensor* g_f) {
  Tensor f = trunk_forward(tape, region_features, p.trunk);
  if (h_full && g_f) f = fuse(tape, f, *h_full, *g_f);
  return {linear(tape, f, p.cls), linear(tape, f, p.reg)};
}

WeakStudentOut weak_student_forward(Tape& tape, const Tensor& region_features,
                                    const WeakStudentParams& p, const Tensor* h_weak,
                                    const Tensor* g_w) {
  if (region_features.rows() < 1)
    throw std::invalid_argument("weak_student_forward: need at least one proposal");
  Tensor f = trunk_forward(tape, region_features, p.trunk);
  if (h_weak && g_w) f = fuse(tape, f, *h_weak, *g_w);
  WeakStudentOut out;
  out.sigma_c = tape.softmax(linear(tape, f, p.phi_c), Axis::cols);
  out.sigma_d = tape.softmax(linear(tape, f, p.phi_d), Axis::rows);
  out.region_scores = tape.mul(out.sigma_c, out.sigma_d);
  out.image_scores = tape.col_sums(out.region_scores);
  return out;
}

TeacherOut teacher_forward(const Tensor& region_features, const TeacherParams& p) {
  Tape scratch;  // records nothing: teacher parameters carry no gradients
  Tensor f = trunk_forward(scratch, region_features, p.trunk);
  Tensor probs = scratch.softmax(linear(scratch, f, p.cls), Axis::cols);
  return {probs, linear(scratch, f, p.reg)};
}

namespace {

void blend(Tensor& target, const Tensor& source, double alpha) {
  for (int i = 0; i < target.size(); ++i)
    target.data()[i] = alpha * target.data()[i] + (1.0 - alpha) * source.data()[i];
}

void blend_col(Tensor& target, int tcol, const Tensor& source, int scol, double alpha) {
  for (int r = 0; r < target.rows(); ++r)
    target.at(r, tcol) = alpha * target.at(r, tcol) + (1.0 - alpha) * source.at(r, scol);
}

void blend_col_mean(Tensor& target, int tcol, const Tensor& a, int acol, const Tensor& b,
                    int bcol, double alpha) {
  for (int r = 0; r < target.rows(); ++r)
    target.at(r, tcol) = alpha * target.at(r, tcol) +
                         (1.0 - alpha) * 0.5 * (a.at(r, acol) + b.at(r, bcol));
}

Tensor mean_of(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = 0.5 * (a.data()[i] + b.data()[i]);
  return out;
}

}  // namespace

void ema_update(TeacherParams& teacher, const FullStudentParams& full_student,
                const WeakStudentParams& weak_student, const OverlapMap& overlap, double alpha,
                TrunkSource trunk_source, bool dsmt_enabled) {
  if (alpha < 0.0 || alpha >= 1.0)
    throw config_error("ema_update: alpha must lie in [0, 1), got " + std::to_string(alpha));

  auto blend_linear = [alpha](LinearParams& t, const LinearParams& s) {
    blend(t.w, s.w, alpha);
    blend(t.b, s.b, alpha);
  };
  auto trunk_src = [&](auto member) -> Tensor {
    const Tensor& f = member(full_student.trunk);
    const Tensor& w = member(weak_student.trunk);
    if (!dsmt_enabled) return w;
    switch (trunk_source) {
      case TrunkSource::full: return f;
      case TrunkSource::weak: return w;
      case TrunkSource::mean: return mean_of(f, w);
    }
    return w;
  };
  blend(teacher.trunk.l1.w, trunk_src([](const TrunkParams& t) -> const Tensor& { return t.l1.w; }), alpha);
  blend(teacher.trunk.l1.b, trunk_src([](const TrunkParams& t) -> const Tensor& { return t.l1.b; }), alpha);
  blend(teacher.trunk.l2.w, trunk_src([](const TrunkParams& t) -> const Tensor& { return t.l2.w; }), alpha);
  blend(teacher.trunk.l2.b, trunk_src([](const TrunkParams& t) -> const Tensor& { return t.l2.b; }), alpha);

  blend_linear(teacher.reg, full_student.reg);

  // Classifier assembly: weak category columns track phi_c, overlapping ones
  // the mean of phi_c and the mapped full-student column; the background
  // column (last on both sides) tracks the full student's background.
  const int c_w = teacher.cls.w.cols() - 1;
  const int full_bg = full_student.cls.w.cols() - 1;
  for (int c = 0; c < c_w; ++c) {
    const int f = dsmt_enabled ? overlap.full_of_weak[c] : -1;
    if (f >= 0) {
      blend_col_mean(teacher.cls.w, c, weak_student.phi_c.w, c, full_student.cls.w, f, alpha);
      blend_col_mean(teacher.cls.b, c, weak_student.phi_c.b, c, full_student.cls.b, f, alpha);
    } else {
      blend_col(teacher.cls.w, c, weak_student.phi_c.w, c, alpha);
      blend_col(teacher.cls.b, c, weak_student.phi_c.b, c, alpha);
    }
  }
  blend_col(teacher.cls.w, c_w, full_student.cls.w, full_bg, alpha);
  blend_col(teacher.cls.b, c_w, full_student.cls.b, full_bg, alpha);
}

TeacherParams assemble_teacher(const FullStudentParams& full_student,
                               const WeakStudentParams& weak_student, const OverlapMap& overlap,
                               int d, int c_w, TrunkSource trunk_source, bool dsmt_enabled) {
  TeacherParams t;
  t.trunk = {{Tensor(full_student.trunk.l1.w.rows(), d), Tensor(1, d)},
             {Tensor(d, d), Tensor(1, d)}};
  t.cls = {Tensor(d, c_w + 1), Tensor(1, c_w + 1)};
  t.reg = {Tensor(d, 4), Tensor(1, 4)};
  ema_update(t, full_student, weak_student, overlap, 0.0, trunk_source, dsmt_enabled);
  return t;
}

}  // namespace ct
