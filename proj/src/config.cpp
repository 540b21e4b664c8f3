#include "ct/config.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "ct/errors.hpp"
#include "ct/textio.hpp"

namespace ct {

namespace {

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw config_error("config: bad integer for '" + key + "': " + v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw config_error("config: bad integer for '" + key + "': " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw config_error("config: bad number for '" + key + "': " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config: bad boolean for '" + key + "': " + v);
}

}  // namespace

std::string to_string(EdgeMode m) {
  switch (m) {
    case EdgeMode::similarity: return "similarity";
    case EdgeMode::handcrafted: return "handcrafted";
    case EdgeMode::combined: return "combined";
  }
  return "?";
}

std::string to_string(TrunkSource s) {
  switch (s) {
    case TrunkSource::mean: return "mean";
    case TrunkSource::full: return "full";
    case TrunkSource::weak: return "weak";
  }
  return "?";
}

std::string to_string(TeacherAggregate a) {
  return a == TeacherAggregate::max ? "max" : "sum_clamped";
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "c_f") c_f = parse_int(key, value);
  else if (key == "c_w") c_w = parse_int(key, value);
  else if (key == "n_overlap") n_overlap = parse_int(key, value);
  else if (key == "d_p") d_p = parse_int(key, value);
  else if (key == "k") k = parse_int(key, value);
  else if (key == "noise_scale") noise_scale = parse_double(key, value);
  else if (key == "templates_per_dataset") templates_per_dataset = parse_int(key, value);
  else if (key == "n_relations") n_relations = parse_int(key, value);
  else if (key == "max_gt_per_image") max_gt_per_image = parse_int(key, value);
  else if (key == "r_min") r_min = parse_int(key, value);
  else if (key == "r_max") r_max = parse_int(key, value);
  else if (key == "n_full_train") n_full_train = parse_int(key, value);
  else if (key == "n_full_test") n_full_test = parse_int(key, value);
  else if (key == "n_weak_train") n_weak_train = parse_int(key, value);
  else if (key == "n_weak_test") n_weak_test = parse_int(key, value);
  else if (key == "d") d = parse_int(key, value);
  else if (key == "hidden1") hidden1 = parse_int(key, value);
  else if (key == "hidden2") hidden2 = parse_int(key, value);
  else if (key == "tau") tau = parse_double(key, value);
  else if (key == "edge_mode") {
    if (value == "similarity") edge_mode = EdgeMode::similarity;
    else if (value == "handcrafted") edge_mode = EdgeMode::handcrafted;
    else if (value == "combined") edge_mode = EdgeMode::combined;
    else throw config_error("config: edge_mode must be similarity|handcrafted|combined, got " + value);
  } else if (key == "lambda_full") lambda_full = parse_double(key, value);
  else if (key == "lambda_cons") lambda_cons = parse_double(key, value);
  else if (key == "ema_alpha") ema_alpha = parse_double(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "momentum") momentum = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "lr_decay_steps") lr_decay_steps = parse_int(key, value);
  else if (key == "lr_decay_factor") lr_decay_factor = parse_double(key, value);
  else if (key == "batch_full") batch_full = parse_int(key, value);
  else if (key == "batch_weak") batch_weak = parse_int(key, value);
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "eval_every") eval_every = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "enable_dsmt") enable_dsmt = parse_bool(key, value);
  else if (key == "enable_sgcn") enable_sgcn = parse_bool(key, value);
  else if (key == "teacher_trunk_source") {
    if (value == "mean") teacher_trunk_source = TrunkSource::mean;
    else if (value == "full") teacher_trunk_source = TrunkSource::full;
    else if (value == "weak") teacher_trunk_source = TrunkSource::weak;
    else throw config_error("config: teacher_trunk_source must be mean|full|weak, got " + value);
  } else if (key == "teacher_aggregate") {
    if (value == "max") teacher_aggregate = TeacherAggregate::max;
    else if (value == "sum_clamped") teacher_aggregate = TeacherAggregate::sum_clamped;
    else throw config_error("config: teacher_aggregate must be max|sum_clamped, got " + value);
  } else if (key == "nms_iou") nms_iou = parse_double(key, value);
  else if (key == "eval_split") eval_split = value;
  else if (key == "bundle_path") bundle_path = value;
  else if (key == "embedding_path") embedding_path = value;
  else if (key == "relation_path") relation_path = value;
  else if (key == "out_dir") out_dir = value;
  else throw config_error("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config: " + path + ":" + std::to_string(lineno) +
                         ": expected 'key = value'");
    apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  auto put = [&](const std::string& key, const std::string& v) { os << key << " = " << v << "\n"; };
  put("c_f", std::to_string(c_f));
  put("c_w", std::to_string(c_w));
  put("n_overlap", std::to_string(n_overlap));
  put("d_p", std::to_string(d_p));
  put("k", std::to_string(k));
  put("noise_scale", fmt_g17(noise_scale));
  put("templates_per_dataset", std::to_string(templates_per_dataset));
  put("n_relations", std::to_string(n_relations));
  put("max_gt_per_image", std::to_string(max_gt_per_image));
  put("r_min", std::to_string(r_min));
  put("r_max", std::to_string(r_max));
  put("n_full_train", std::to_string(n_full_train));
  put("n_full_test", std::to_string(n_full_test));
  put("n_weak_train", std::to_string(n_weak_train));
  put("n_weak_test", std::to_string(n_weak_test));
  put("d", std::to_string(d));
  put("hidden1", std::to_string(hidden1));
  put("hidden2", std::to_string(hidden2));
  put("tau", fmt_g17(tau));
  put("edge_mode", to_string(edge_mode));
  put("lambda_full", fmt_g17(lambda_full));
  put("lambda_cons", fmt_g17(lambda_cons));
  put("ema_alpha", fmt_g17(ema_alpha));
  put("lr", fmt_g17(lr));
  put("momentum", fmt_g17(momentum));
  put("weight_decay", fmt_g17(weight_decay));
  put("lr_decay_steps", std::to_string(lr_decay_steps));
  put("lr_decay_factor", fmt_g17(lr_decay_factor));
  put("batch_full", std::to_string(batch_full));
  put("batch_weak", std::to_string(batch_weak));
  put("steps", std::to_string(steps));
  put("eval_every", std::to_string(eval_every));
  put("seed", std::to_string(seed));
  put("enable_dsmt", enable_dsmt ? "true" : "false");
  put("enable_sgcn", enable_sgcn ? "true" : "false");
  put("teacher_trunk_source", to_string(teacher_trunk_source));
  put("teacher_aggregate", to_string(teacher_aggregate));
  put("nms_iou", fmt_g17(nms_iou));
  put("eval_split", eval_split);
  put("bundle_path", bundle_path);
  put("embedding_path", embedding_path);
  put("relation_path", relation_path);
  put("out_dir", out_dir);
  return os.str();
}

void RunConfig::validate() const {
  if (c_f < 1 || c_w < 1) throw config_error("config: c_f and c_w must be positive");
  if (n_overlap < 0 || n_overlap > std::min(c_f, c_w))
    throw config_error("config: n_overlap (" + std::to_string(n_overlap) +
                       ") must lie in [0, min(c_f, c_w) = " +
                       std::to_string(std::min(c_f, c_w)) + "]");
  if (d_p < 2 || k < 2 || d < 1 || hidden1 < 1 || hidden2 < 1)
    throw config_error("config: dimensions must be positive (d_p, k >= 2)");
  if (tau <= 0.0 || tau > 1.0) throw config_error("config: tau must lie in (0, 1]");
  if (lambda_full < 0.0 || lambda_cons < 0.0)
    throw config_error("config: loss weights must be non-negative");
  if (ema_alpha < 0.0 || ema_alpha >= 1.0) throw config_error("config: ema_alpha must lie in [0, 1)");
  if (r_min < 1 || r_max < r_min) throw config_error("config: need 1 <= r_min <= r_max");
  if (max_gt_per_image < 1) throw config_error("config: max_gt_per_image must be positive");
  if (2 * (max_gt_per_image) + 1 > r_max)
    throw config_error("config: r_max too small for max_gt_per_image (need >= 2*max_gt+1)");
  if (batch_full < 1 || batch_weak < 1) throw config_error("config: batch sizes must be positive");
  if (steps < 0) throw config_error("config: steps must be >= 0");
  if (eval_every < 1) throw config_error("config: eval_every must be positive");
  if (n_full_train < 0 || n_full_test < 0 || n_weak_train < 0 || n_weak_test < 0)
    throw config_error("config: split sizes must be non-negative");
  if (nms_iou < 0.0 || nms_iou >= 1.0) throw config_error("config: nms_iou must lie in [0, 1)");
}

}  // namespace ct
