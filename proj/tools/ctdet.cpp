#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ct/config.hpp"
#include "ct/errors.hpp"
#include "ct/evaluation.hpp"
#include "ct/graph.hpp"
#include "ct/synthetic.hpp"
#include "ct/training.hpp"

namespace {

namespace fs = std::filesystem;

struct CliOverrides {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed, out, bundle, checkpoint, split, embeddings, relations;
};

// Precedence: flags > config file > defaults.
ct::RunConfig resolve_config(const CliOverrides& o) {
  ct::RunConfig cfg;
  if (!o.config_path.empty()) cfg.load_file(o.config_path);
  for (const std::string& s : o.sets) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ct::config_error("--set expects key=value, got '" + s + "'");
    cfg.apply(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!o.seed.empty()) cfg.apply("seed", o.seed);
  if (!o.out.empty()) cfg.apply("out_dir", o.out);
  if (!o.bundle.empty()) cfg.apply("bundle_path", o.bundle);
  if (!o.split.empty()) cfg.apply("eval_split", o.split);
  if (!o.embeddings.empty()) cfg.apply("embedding_path", o.embeddings);
  if (!o.relations.empty()) cfg.apply("relation_path", o.relations);
  cfg.validate();
  return cfg;
}

void write_resolved(const ct::RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(cfg.out_dir + "/config.resolved");
  out << cfg.resolved_text();
}

ct::DatasetBundle load_bundle_for(const ct::RunConfig& cfg) {
  if (cfg.bundle_path.empty())
    throw ct::config_error("no bundle: pass --bundle PATH or set bundle_path");
  ct::DatasetBundle bundle = ct::load_bundle(cfg.bundle_path);
  if (!cfg.embedding_path.empty()) ct::load_embeddings(bundle.world, cfg.embedding_path);
  return bundle;
}

int cmd_gen_data(const ct::RunConfig& cfg) {
  write_resolved(cfg);
  ct::World world = ct::gen_world(cfg, cfg.seed);
  if (!cfg.embedding_path.empty()) ct::load_embeddings(world, cfg.embedding_path);
  ct::DatasetBundle bundle = ct::gen_bundle(world, cfg.n_full_train, cfg.n_full_test,
                                            cfg.n_weak_train, cfg.n_weak_test, cfg.seed);
  const std::string path = cfg.out_dir + "/bundle.jsonl";
  ct::save_bundle(bundle, path);
  std::printf("wrote %s (%d full-train, %d full-test, %d weak-train, %d weak-test images)\n",
              path.c_str(), cfg.n_full_train, cfg.n_full_test, cfg.n_weak_train,
              cfg.n_weak_test);
  return 0;
}

int cmd_build_graph(const ct::RunConfig& cfg) {
  write_resolved(cfg);
  ct::DatasetBundle bundle = load_bundle_for(cfg);
  std::vector<ct::Relation> file_relations;
  const std::vector<ct::Relation>* rels = nullptr;
  if (!cfg.relation_path.empty()) {
    file_relations = ct::load_relations(cfg.relation_path, bundle.world.cats);
    rels = &file_relations;
  }
  ct::SemanticGraph graph = ct::build_graph(bundle, cfg.tau, cfg.edge_mode, rels);
  if (cfg.edge_mode != ct::EdgeMode::similarity) {
    bool any = false;
    for (double v : graph.edges.b.data()) any = any || v != 0.0;
    if (cfg.edge_mode == ct::EdgeMode::handcrafted && !any)
      std::fprintf(stderr, "warning: no relations given, hand-crafted edge matrix is zero\n");
  }
  const std::string path = cfg.out_dir + "/graph.txt";
  std::ofstream out(path);
  out << ct::dump_graph(graph, bundle.world.cats);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_train(const ct::RunConfig& cfg) {
  write_resolved(cfg);
  ct::DatasetBundle bundle = load_bundle_for(cfg);
  ct::TrainerState state = ct::init_trainer(cfg, bundle);
  ct::TrainResult result = ct::run_training(state, bundle, cfg.out_dir);
  std::printf("trained %ld steps; weak-test mAP %.2f%%, CorLoc %.2f%%\n", result.steps_run,
              100.0 * result.final_eval.map, 100.0 * result.final_eval.mean_corloc);
  std::printf("checkpoint: %s/checkpoint.txt\nmetrics:    %s/metrics.csv\n", cfg.out_dir.c_str(),
              cfg.out_dir.c_str());
  return 0;
}

int cmd_eval(const ct::RunConfig& cfg, const std::string& checkpoint) {
  write_resolved(cfg);
  if (checkpoint.empty()) throw ct::config_error("eval: pass --checkpoint PATH");
  ct::DatasetBundle bundle = load_bundle_for(cfg);
  ct::TrainerState state = ct::init_trainer(cfg, bundle);
  ct::load_checkpoint(state, checkpoint);
  const std::vector<ct::SyntheticImage>* split = nullptr;
  if (cfg.eval_split == "weak_test") split = &bundle.weak_test;
  else if (cfg.eval_split == "weak_train") split = &bundle.weak_train;
  else throw ct::config_error("eval: eval_split must be weak_test or weak_train, got " +
                              cfg.eval_split);
  ct::EvalReport report =
      ct::evaluate(state.params.teacher, *split, bundle.world.cats.c_w(), cfg.nms_iou);
  const std::string path = cfg.out_dir + "/eval.csv";
  std::ofstream out(path);
  out << ct::eval_report_csv(report, bundle.world.cats.weak_names);
  std::printf("%s on %s: mAP %.2f%%, CorLoc %.2f%%\n", checkpoint.c_str(),
              cfg.eval_split.c_str(), 100.0 * report.map, 100.0 * report.mean_corloc);
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_gradcheck(const ct::RunConfig& cfg) {
  ct::GradcheckReport report = ct::run_gradcheck(cfg.seed);
  double worst = 0.0;
  for (const auto& e : report.entries) {
    std::printf("%-18s max relative error %.3e%s\n", e.name.c_str(), e.max_rel_error,
                e.max_rel_error < report.tolerance ? "" : "  <-- FAIL");
    worst = std::max(worst, e.max_rel_error);
  }
  std::printf("gradcheck %s: worst %.3e, tolerance %.0e\n", report.passed ? "PASS" : "FAIL",
              worst, report.tolerance);
  return report.passed ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised detection with cross-dataset category transfer"};
  app.require_subcommand(1);

  CliOverrides o;
  std::string checkpoint;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value config file");
    sub->add_option("--seed", o.seed, "RNG seed (overrides config)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--set", o.sets, "extra key=value overrides")->take_all();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset bundle");
  add_common(gen);
  gen->add_option("--embeddings", o.embeddings, "external embedding table");

  CLI::App* graph = app.add_subcommand("build-graph", "build and dump the semantic graphs");
  add_common(graph);
  graph->add_option("--bundle", o.bundle, "bundle file");
  graph->add_option("--relations", o.relations, "relation file (full<TAB>weak<TAB>kind)");

  CLI::App* train = app.add_subcommand("train", "train on a bundle");
  add_common(train);
  train->add_option("--bundle", o.bundle, "bundle file");
  train->add_option("--embeddings", o.embeddings, "external embedding table");
  train->add_option("--relations", o.relations, "relation file");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--bundle", o.bundle, "bundle file");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--split", o.split, "weak_test or weak_train");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  add_common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    ct::RunConfig cfg = resolve_config(o);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (graph->parsed()) return cmd_build_graph(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint);
    if (gc->parsed()) return cmd_gradcheck(cfg);
  } catch (const ct::numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const ct::config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
