#include <cmath>
#include <filesystem>
#include <fstream>

#include "ct/errors.hpp"
#include "ct/training.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ct;
using testutil::bitwise_equal;

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.c_f = 4;
  cfg.c_w = 3;
  cfg.n_overlap = 2;
  cfg.d = 8;
  cfg.d_p = 6;
  cfg.k = 6;
  cfg.hidden1 = 6;
  cfg.hidden2 = 7;
  cfg.max_gt_per_image = 2;
  cfg.r_min = 5;
  cfg.r_max = 6;
  cfg.noise_scale = 0.2;
  cfg.templates_per_dataset = 3;
  cfg.batch_full = 2;
  cfg.batch_weak = 2;
  cfg.steps = 4;
  cfg.eval_every = 2;
  cfg.seed = 9;
  return cfg;
}

DatasetBundle tiny_bundle(const RunConfig& cfg) {
  return gen_bundle(gen_world(cfg, cfg.seed), 4, 2, 4, 2, cfg.seed);
}

}  // namespace

TEST_CASE("loss_mil: closed forms and gradient") {
  Tape t;
  Tensor half = Tensor::row({0.5, 0.5, 0.5});
  CHECK(loss_mil(t, half, {1, 0, 1}).item() == doctest::Approx(std::log(2.0)));
  Tensor perfect = Tensor::row({1.0, 0.0, 1.0});
  CHECK(loss_mil(t, perfect, {1, 0, 1}).item() <= 1e-6);
  CHECK_THROWS_AS(loss_mil(t, half, {1, 0}), std::invalid_argument);

  Rng rng(3);
  Tensor probs = testutil::random_tensor(rng, 1, 4, 0.1, 0.9);
  probs.set_requires_grad(true);
  CHECK(grad_check([&](Tape& tp) { return loss_mil(tp, probs, {1, 0, 0, 1}); }, probs) < 1e-6);
}

TEST_CASE("loss_full: background-only and perfect cases") {
  const int c_f = 4;
  SyntheticImage img;
  img.proposals = {{0.1, 0.1, 0.3, 0.3}, {0.5, 0.5, 0.8, 0.9}};
  img.assignment = {{-1, 0.0}, {-1, 0.1}};
  img.features = Tensor(2, 10);
  {
    Tape t;
    Tensor logits(2, c_f + 1);
    Tensor deltas(2, 4);
    CHECK(loss_full(t, logits, deltas, img, c_f).item() ==
          doctest::Approx(std::log(static_cast<double>(c_f + 1))));
  }
  // One foreground proposal with exact deltas and a huge-margin logit.
  img.gt.push_back({{0.5, 0.5, 0.82, 0.88}, 2});
  img.assignment[1] = {0, 0.9};
  {
    Tape t;
    Tensor logits(2, c_f + 1);
    logits.at(0, c_f) = 50.0;  // background
    logits.at(1, 2) = 50.0;
    Tensor deltas(2, 4);
    auto d = encode_box_delta(img.proposals[1], img.gt[0].box);
    for (int k = 0; k < 4; ++k) deltas.at(1, k) = d[k];
    CHECK(loss_full(t, logits, deltas, img, c_f).item() < 1e-9);
  }
}

TEST_CASE("loss_cons_full: identical branches vanish; empty overlap keeps box term") {
  Rng rng(5);
  Tensor deltas = testutil::random_tensor(rng, 3, 4);
  Tensor probs = testutil::random_tensor(rng, 3, 5, 0.0, 1.0);
  Tensor tprobs = testutil::random_tensor(rng, 3, 4, 0.0, 1.0);
  OverlapMap overlap = OverlapMap::from_pairs({{0, 0}, {2, 1}}, 4, 3);
  Tape t;
  // teacher probs matched via the overlap columns
  Tensor tmatch(3, 4);
  for (int i = 0; i < 3; ++i) {
    tmatch.at(i, 0) = probs.at(i, 0);
    tmatch.at(i, 1) = probs.at(i, 2);
  }
  CHECK(loss_cons_full(t, deltas, probs, deltas, tmatch, overlap).item() == 0.0);

  OverlapMap none = OverlapMap::from_pairs({}, 4, 3);
  Tensor other = testutil::random_tensor(rng, 3, 4);
  double full_val = loss_cons_full(t, deltas, probs, other, tprobs, none).item();
  CHECK(full_val == t.mse(deltas, other).item());
}

TEST_CASE("loss_cons_weak: identity and closed form") {
  Tape t;
  Tensor a = Tensor::row({0.2, 0.4});
  CHECK(loss_cons_weak(t, a, a).item() == 0.0);
  CHECK(loss_cons_weak(t, Tensor::row({0.7}), Tensor::row({0.2})).item() ==
        doctest::Approx(0.125));
}

TEST_CASE("teacher_image_aggregate: max semantics and monotonicity") {
  Tensor probs = Tensor::from_rows({{0.1, 0.5, 0.4}});
  Tensor agg = teacher_image_aggregate(probs, TeacherAggregate::max);
  CHECK(agg.cols() == 2);  // background dropped
  CHECK(agg.at(0, 0) == 0.1);
  CHECK(agg.at(0, 1) == 0.5);

  Tensor uniform = Tensor::full(4, 4, 0.25);
  Tensor u = teacher_image_aggregate(uniform, TeacherAggregate::max);
  for (int c = 0; c < 3; ++c) CHECK(u.at(0, c) == 0.25);

  Tensor more = Tensor::from_rows({{0.1, 0.5, 0.4}, {0.3, 0.2, 0.5}});
  Tensor base = teacher_image_aggregate(more, TeacherAggregate::max);
  more.at(1, 0) = 0.6;
  Tensor raised = teacher_image_aggregate(more, TeacherAggregate::max);
  for (int c = 0; c < 2; ++c) CHECK(raised.at(0, c) >= base.at(0, c));

  Tensor sums = teacher_image_aggregate(more, TeacherAggregate::sum_clamped);
  CHECK(sums.at(0, 0) == doctest::Approx(std::min(1.0, 0.1 + 0.6)));
}

TEST_CASE("train_step: EMA follows the assembled post-update source") {
  RunConfig cfg = tiny_cfg();
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  TeacherParams before;
  before.trunk = {{st.params.teacher.trunk.l1.w.clone(), st.params.teacher.trunk.l1.b.clone()},
                  {st.params.teacher.trunk.l2.w.clone(), st.params.teacher.trunk.l2.b.clone()}};
  before.cls = {st.params.teacher.cls.w.clone(), st.params.teacher.cls.b.clone()};
  before.reg = {st.params.teacher.reg.w.clone(), st.params.teacher.reg.b.clone()};

  Batch fb = next_full_batch(st, bundle);
  Batch wb = next_weak_batch(st, bundle);
  train_step(st, fb, wb);

  TeacherParams source =
      assemble_teacher(st.params.full_student, st.params.weak_student, st.overlap, cfg.d,
                       cfg.c_w, cfg.teacher_trunk_source, cfg.enable_dsmt);
  auto tp = st.params.teacher.all_params();
  auto bp = before.all_params();
  auto sp = source.all_params();
  for (std::size_t i = 0; i < tp.size(); ++i)
    for (int j = 0; j < tp[i].size(); ++j) {
      double expect = cfg.ema_alpha * bp[i].data()[j] + (1 - cfg.ema_alpha) * sp[i].data()[j];
      CHECK(tp[i].data()[j] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("train_step: alpha 0 snaps the teacher to its source") {
  RunConfig cfg = tiny_cfg();
  cfg.ema_alpha = 0.0;
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  Batch fb = next_full_batch(st, bundle);
  Batch wb = next_weak_batch(st, bundle);
  train_step(st, fb, wb);
  TeacherParams source =
      assemble_teacher(st.params.full_student, st.params.weak_student, st.overlap, cfg.d,
                       cfg.c_w, cfg.teacher_trunk_source, cfg.enable_dsmt);
  auto tp = st.params.teacher.all_params();
  auto sp = source.all_params();
  for (std::size_t i = 0; i < tp.size(); ++i) CHECK(bitwise_equal(tp[i].data(), sp[i].data()));
}

TEST_CASE("train_step: backward never touches teacher parameters") {
  RunConfig cfg = tiny_cfg();
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  Batch fb = next_full_batch(st, bundle);
  Batch wb = next_weak_batch(st, bundle);
  std::vector<std::pair<std::string, std::vector<double>>> before;
  for (auto& [name, t] : named_params(st.params))
    if (name.rfind("teacher.", 0) == 0) before.push_back({name, t.data()});
  Tape tape;
  Tensor total = total_loss(st, fb, wb, tape, nullptr);
  tape.backward(total);
  // forward + backward ran; only an explicit EMA step may move the teacher
  for (auto& [name, vals] : before)
    for (auto& [n2, t2] : named_params(st.params))
      if (n2 == name) CHECK(bitwise_equal(t2.data(), vals));
}

TEST_CASE("train_step: zero lambdas train the weak student exactly like setting A") {
  RunConfig cfg_a = tiny_cfg();
  cfg_a.lambda_full = 0.0;
  cfg_a.lambda_cons = 0.0;
  RunConfig cfg_b = cfg_a;
  cfg_b.enable_dsmt = false;

  DatasetBundle bundle = tiny_bundle(cfg_a);
  TrainerState sa = init_trainer(cfg_a, bundle);
  TrainerState sb = init_trainer(cfg_b, bundle);
  for (int step = 0; step < 3; ++step) {
    Batch fa = next_full_batch(sa, bundle), wa = next_weak_batch(sa, bundle);
    Batch fb = next_full_batch(sb, bundle), wb = next_weak_batch(sb, bundle);
    train_step(sa, fa, wa);
    train_step(sb, fb, wb);
  }
  for (auto& [name, t] : named_params(sa.params)) {
    if (name.rfind("weak.", 0) != 0 && name.rfind("sgcn.", 0) != 0) continue;
    for (auto& [name_b, t_b] : named_params(sb.params))
      if (name_b == name) CHECK(bitwise_equal(t.data(), t_b.data()));
  }
}

TEST_CASE("train_step: disabled modules stay at initialization") {
  RunConfig cfg = tiny_cfg();
  cfg.enable_dsmt = false;
  cfg.enable_sgcn = false;
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  std::vector<double> full_init, sgcn_init;
  for (auto& [name, t] : named_params(st.params)) {
    if (name.rfind("full.", 0) == 0)
      full_init.insert(full_init.end(), t.data().begin(), t.data().end());
    if (name.rfind("sgcn.", 0) == 0)
      sgcn_init.insert(sgcn_init.end(), t.data().begin(), t.data().end());
  }
  for (int step = 0; step < 3; ++step) {
    Batch fb = next_full_batch(st, bundle);
    Batch wb = next_weak_batch(st, bundle);
    train_step(st, fb, wb);
  }
  std::vector<double> full_now, sgcn_now;
  for (auto& [name, t] : named_params(st.params)) {
    if (name.rfind("full.", 0) == 0)
      full_now.insert(full_now.end(), t.data().begin(), t.data().end());
    if (name.rfind("sgcn.", 0) == 0)
      sgcn_now.insert(sgcn_now.end(), t.data().begin(), t.data().end());
  }
  CHECK(bitwise_equal(full_init, full_now));
  CHECK(bitwise_equal(sgcn_init, sgcn_now));
}

TEST_CASE("loss weights scale their contribution linearly") {
  RunConfig cfg = tiny_cfg();
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  Batch fb = next_full_batch(st, bundle);
  Batch wb = next_weak_batch(st, bundle);

  LossReport r1;
  {
    Tape t;
    total_loss(st, fb, wb, t, &r1);
  }
  st.cfg.lambda_cons *= 2.0;
  LossReport r2;
  {
    Tape t;
    total_loss(st, fb, wb, t, &r2);
  }
  const double cons = r1.cons_f + r1.cons_w;
  CHECK(r2.cons_f == r1.cons_f);  // raw terms unchanged
  CHECK(r2.total - r1.total == doctest::Approx(cfg.lambda_cons * cons).epsilon(1e-12));
}

TEST_CASE("train_step: non-finite loss aborts naming the term") {
  RunConfig cfg = tiny_cfg();
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  st.params.weak_student.phi_c.w.at(0, 0) = std::nan("");
  Batch fb = next_full_batch(st, bundle);
  Batch wb = next_weak_batch(st, bundle);
  CHECK_THROWS_WITH_AS(train_step(st, fb, wb), doctest::Contains("L_mil"), numeric_error);
}

TEST_CASE("checkpoint: save/load resumes the exact trajectory") {
  RunConfig cfg = tiny_cfg();
  DatasetBundle bundle = tiny_bundle(cfg);
  namespace fs = std::filesystem;
  const std::string path = fs::temp_directory_path() / "ct_ckpt_test.txt";

  TrainerState st = init_trainer(cfg, bundle);
  for (int i = 0; i < 2; ++i)
    train_step(st, next_full_batch(st, bundle), next_weak_batch(st, bundle));
  save_checkpoint(st, path);

  std::vector<double> cont_losses;
  for (int i = 0; i < 10; ++i)
    cont_losses.push_back(
        train_step(st, next_full_batch(st, bundle), next_weak_batch(st, bundle)).total);

  TrainerState st2 = init_trainer(cfg, bundle);
  load_checkpoint(st2, path);
  CHECK(st2.step == 2);
  std::vector<double> resumed_losses;
  for (int i = 0; i < 10; ++i)
    resumed_losses.push_back(
        train_step(st2, next_full_batch(st2, bundle), next_weak_batch(st2, bundle)).total);

  CHECK(bitwise_equal(cont_losses, resumed_losses));
  auto pa = named_params(st.params);
  auto pb = named_params(st2.params);
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(bitwise_equal(pa[i].second.data(), pb[i].second.data()));
  fs::remove(path);
}

TEST_CASE("run_training: zero steps emit an empty log and a checkpoint") {
  RunConfig cfg = tiny_cfg();
  cfg.steps = 0;
  DatasetBundle bundle = tiny_bundle(cfg);
  TrainerState st = init_trainer(cfg, bundle);
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path() / "ct_run0";
  run_training(st, bundle, dir);
  std::ifstream log(dir + "/metrics.csv");
  std::string header, extra;
  REQUIRE(std::getline(log, header));
  CHECK(header ==
        "step,loss_mil,loss_full,loss_cons_f,loss_cons_w,loss_total,map_pct,corloc_pct");
  CHECK_FALSE(std::getline(log, extra));
  CHECK(fs::exists(dir + "/checkpoint.txt"));
  CHECK(fs::exists(dir + "/config.resolved"));
  fs::remove_all(dir);
}

TEST_CASE("run_training: fixed seed reproduces the metric log") {
  RunConfig cfg = tiny_cfg();
  cfg.steps = 4;
  DatasetBundle bundle = tiny_bundle(cfg);
  namespace fs = std::filesystem;
  auto run_once = [&](const std::string& dir) {
    TrainerState st = init_trainer(cfg, bundle);
    run_training(st, bundle, dir);
    std::ifstream in(dir + "/metrics.csv");
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return all;
  };
  const std::string d1 = fs::temp_directory_path() / "ct_runa";
  const std::string d2 = fs::temp_directory_path() / "ct_runb";
  CHECK(run_once(d1) == run_once(d2));
  fs::remove_all(d1);
  fs::remove_all(d2);
}
