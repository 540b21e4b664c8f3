#include <cmath>

#include "ct/dsmt.hpp"
#include "ct/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ct;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

FullStudentParams zero_full(int d_in, int d, int c_f) {
  return {{zero_linear(d_in, d), zero_linear(d, d)}, zero_linear(d, c_f + 1), zero_linear(d, 4)};
}

FullStudentParams random_full(Rng& rng, int d_in, int d, int c_f) {
  return {init_trunk(d_in, d, rng), init_linear(d, c_f + 1, rng), init_linear(d, 4, rng)};
}

WeakStudentParams random_weak(Rng& rng, int d_in, int d, int c_w) {
  return {init_trunk(d_in, d, rng), init_linear(d, c_w, rng), init_linear(d, c_w, rng)};
}

TeacherParams random_teacher(Rng& rng, int d_in, int d, int c_w) {
  TeacherParams t;
  TrunkParams trunk = init_trunk(d_in, d, rng);
  auto strip = [](LinearParams l) {
    l.w.set_requires_grad(false);
    l.b.set_requires_grad(false);
    return l;
  };
  t.trunk = {strip(trunk.l1), strip(trunk.l2)};
  t.cls = strip(init_linear(d, c_w + 1, rng));
  t.reg = strip(init_linear(d, 4, rng));
  return t;
}

}  // namespace

TEST_CASE("full student: zero weights give zero outputs, row count preserved") {
  Tape t;
  Rng rng(3);
  Tensor f = random_tensor(rng, 7, 10);
  auto out = full_student_forward(t, f, zero_full(10, 6, 4), nullptr, nullptr);
  CHECK(out.cls_logits.rows() == 7);
  CHECK(out.cls_logits.cols() == 5);
  CHECK(out.deltas.rows() == 7);
  CHECK(out.deltas.cols() == 4);
  for (double v : out.cls_logits.data()) CHECK(v == 0.0);
  for (double v : out.deltas.data()) CHECK(v == 0.0);
}

TEST_CASE("full student: gradient through trunk matches finite differences") {
  Rng rng(5);
  Tensor f = random_tensor(rng, 4, 8);
  FullStudentParams p = random_full(rng, 8, 6, 3);
  Tensor mask_cls = random_tensor(rng, 4, 4);
  Tensor mask_reg = random_tensor(rng, 4, 4);
  auto loss_fn = [&](Tape& t) {
    auto out = full_student_forward(t, f, p, nullptr, nullptr);
    return t.add(t.sum(t.mul(out.cls_logits, mask_cls)), t.sum(t.mul(out.deltas, mask_reg)));
  };
  CHECK(grad_check(loss_fn, p.trunk.l1.w) < 1e-4);
  CHECK(grad_check(loss_fn, p.cls.w) < 1e-4);
  CHECK(grad_check(loss_fn, p.reg.b) < 1e-4);
}

TEST_CASE("weak student: singleton proposal makes sigma_d all ones") {
  Rng rng(7);
  Tensor f = random_tensor(rng, 1, 8);
  WeakStudentParams p = random_weak(rng, 8, 6, 4);
  Tape t;
  auto out = weak_student_forward(t, f, p, nullptr, nullptr);
  for (int c = 0; c < 4; ++c) CHECK(out.sigma_d.at(0, c) == 1.0);
  double total = 0;
  for (int c = 0; c < 4; ++c) total += out.image_scores.at(0, c);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weak student: empty proposal set rejected") {
  Rng rng(9);
  WeakStudentParams p = random_weak(rng, 8, 6, 4);
  Tape t;
  Tensor f(0, 8);
  CHECK_THROWS_AS(weak_student_forward(t, f, p, nullptr, nullptr), std::invalid_argument);
}

TEST_CASE("weak student: identical proposals split sigma_d evenly") {
  Rng rng(11);
  Tensor one = random_tensor(rng, 1, 8);
  Tensor f(2, 8);
  for (int j = 0; j < 8; ++j) {
    f.at(0, j) = one.at(0, j);
    f.at(1, j) = one.at(0, j);
  }
  WeakStudentParams p = random_weak(rng, 8, 6, 3);
  Tape t;
  auto out = weak_student_forward(t, f, p, nullptr, nullptr);
  for (int c = 0; c < 3; ++c) {
    CHECK(out.sigma_d.at(0, c) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.sigma_d.at(1, c) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("weak student: MIL head invariants over random inputs") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int r = 1 + rng.next_int(12);
    const int c_w = 2 + rng.next_int(6);
    Tensor f = random_tensor(rng, r, 9);
    WeakStudentParams p = random_weak(rng, 9, 5, c_w);
    Tape t;
    auto out = weak_student_forward(t, f, p, nullptr, nullptr);
    for (int i = 0; i < r; ++i) {
      double s = 0;
      for (int c = 0; c < c_w; ++c) s += out.sigma_c.at(i, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
    for (int c = 0; c < c_w; ++c) {
      double s = 0;
      for (int i = 0; i < r; ++i) s += out.sigma_d.at(i, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
      CHECK(out.image_scores.at(0, c) >= 0.0);
      CHECK(out.image_scores.at(0, c) <= 1.0);
    }
  }
}

TEST_CASE("teacher: zero weights give uniform probabilities") {
  Tape unused;
  Tensor f = Tensor::full(3, 10, 0.7);
  TeacherParams p;
  p.trunk = {{Tensor(10, 6), Tensor(1, 6)}, {Tensor(6, 6), Tensor(1, 6)}};
  p.cls = {Tensor(6, 5), Tensor(1, 5)};
  p.reg = {Tensor(6, 4), Tensor(1, 4)};
  auto out = teacher_forward(f, p);
  for (double v : out.cls_probs.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  for (double v : out.deltas.data()) CHECK(v == 0.0);
}

TEST_CASE("teacher: rows sum to one, forward is pure, never taped") {
  Rng rng(17);
  Tensor f = random_tensor(rng, 6, 10);
  TeacherParams p = random_teacher(rng, 10, 7, 4);
  auto a = teacher_forward(f, p);
  auto b = teacher_forward(f, p);
  CHECK(bitwise_equal(a.cls_probs.data(), b.cls_probs.data()));
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += a.cls_probs.at(i, c);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  // Frozen parameters never occupy a tape even when one is supplied.
  Tape t;
  trunk_forward(t, f, p.trunk);
  CHECK(t.op_count() == 0);
}

TEST_CASE("ema_update: single step formula") {
  Rng rng(19);
  FullStudentParams full = random_full(rng, 10, 6, 4);
  WeakStudentParams weak = random_weak(rng, 10, 6, 3);
  OverlapMap overlap = OverlapMap::from_pairs({{0, 0}, {1, 1}}, 4, 3);
  TeacherParams teacher;
  teacher.trunk = {{Tensor(10, 6), Tensor(1, 6)}, {Tensor(6, 6), Tensor(1, 6)}};
  teacher.cls = {Tensor(6, 4), Tensor(1, 4)};
  teacher.reg = {Tensor(6, 4), Tensor(1, 4)};
  // theta_t = 0, theta_s = 1, alpha = 0.999 -> 0.001.
  for (double& v : full.reg.w.data()) v = 1.0;
  ema_update(teacher, full, weak, overlap, 0.999);
  for (double v : teacher.reg.w.data()) CHECK(v == doctest::Approx(0.001).epsilon(1e-12));

  CHECK_THROWS_AS(ema_update(teacher, full, weak, overlap, 1.0), config_error);
  CHECK_THROWS_AS(ema_update(teacher, full, weak, overlap, -0.1), config_error);
}

TEST_CASE("ema_update: geometric convergence against frozen students") {
  Rng rng(23);
  FullStudentParams full = random_full(rng, 8, 5, 4);
  WeakStudentParams weak = random_weak(rng, 8, 5, 3);
  OverlapMap overlap = OverlapMap::from_pairs({{2, 1}}, 4, 3);
  TeacherParams teacher = random_teacher(rng, 8, 5, 3);
  TeacherParams source = assemble_teacher(full, weak, overlap, 5, 3, TrunkSource::mean, true);

  auto distance = [&] {
    double worst = 0;
    auto tp = teacher.all_params();
    auto sp = source.all_params();
    for (std::size_t i = 0; i < tp.size(); ++i)
      for (int j = 0; j < tp[i].size(); ++j)
        worst = std::max(worst, std::abs(tp[i].data()[j] - sp[i].data()[j]));
    return worst;
  };
  const double alpha = 0.9;
  const double d0 = distance();
  REQUIRE(d0 > 0);
  double prev = d0;
  for (int step = 1; step <= 20; ++step) {
    ema_update(teacher, full, weak, overlap, alpha, TrunkSource::mean, true);
    const double d = distance();
    CHECK(d <= prev + 1e-15);  // monotone
    CHECK(d == doctest::Approx(std::pow(alpha, step) * d0).epsilon(1e-9));
    prev = d;
  }
}

TEST_CASE("ema_update: teacher cls columns follow a weak-category permutation") {
  Rng rng(29);
  const int d = 5, c_f = 4, c_w = 3;
  FullStudentParams full = random_full(rng, 8, d, c_f);
  WeakStudentParams weak = random_weak(rng, 8, d, c_w);
  const std::vector<int> perm = {2, 0, 1};  // new weak index i was old perm[i]

  WeakStudentParams weak_perm = weak;
  weak_perm.phi_c.w = Tensor(d, c_w);
  weak_perm.phi_c.b = Tensor(1, c_w);
  for (int i = 0; i < c_w; ++i) {
    for (int r = 0; r < d; ++r) weak_perm.phi_c.w.at(r, i) = weak.phi_c.w.at(r, perm[i]);
    weak_perm.phi_c.b.at(0, i) = weak.phi_c.b.at(0, perm[i]);
  }

  OverlapMap base = OverlapMap::from_pairs({{0, 0}, {3, 2}}, c_f, c_w);
  // permuted weak indices: old 0 -> new 1, old 2 -> new 0
  OverlapMap permuted = OverlapMap::from_pairs({{0, 1}, {3, 0}}, c_f, c_w);

  TeacherParams ta = assemble_teacher(full, weak, base, d, c_w, TrunkSource::mean, true);
  TeacherParams tb = assemble_teacher(full, weak_perm, permuted, d, c_w, TrunkSource::mean, true);
  for (int i = 0; i < c_w; ++i)
    for (int r = 0; r < d; ++r) CHECK(tb.cls.w.at(r, i) == ta.cls.w.at(r, perm[i]));
  // background column unchanged by the permutation
  for (int r = 0; r < d; ++r) CHECK(tb.cls.w.at(r, c_w) == ta.cls.w.at(r, c_w));
}

TEST_CASE("overlap map: injectivity and range checks") {
  CHECK_THROWS_AS(OverlapMap::from_pairs({{0, 0}, {0, 1}}, 4, 3), config_error);
  CHECK_THROWS_AS(OverlapMap::from_pairs({{0, 0}, {1, 0}}, 4, 3), config_error);
  CHECK_THROWS_AS(OverlapMap::from_pairs({{9, 0}}, 4, 3), config_error);
  OverlapMap m = OverlapMap::from_pairs({{2, 1}}, 4, 3);
  CHECK(m.full_of_weak == std::vector<int>{-1, 2, -1});
}

TEST_CASE("ema_update: setting-A assembly ignores the full student head") {
  Rng rng(31);
  const int d = 5, c_w = 3;
  FullStudentParams full = random_full(rng, 8, d, 4);
  WeakStudentParams weak = random_weak(rng, 8, d, c_w);
  OverlapMap overlap = OverlapMap::from_pairs({{0, 0}}, 4, c_w);
  TeacherParams t = assemble_teacher(full, weak, overlap, d, c_w, TrunkSource::mean, false);
  // every weak column equals phi_c, overlap or not, and the trunk is the weak trunk
  for (int c = 0; c < c_w; ++c)
    for (int r = 0; r < d; ++r) CHECK(t.cls.w.at(r, c) == weak.phi_c.w.at(r, c));
  CHECK(bitwise_equal(t.trunk.l1.w.data(), weak.trunk.l1.w.data()));
}
