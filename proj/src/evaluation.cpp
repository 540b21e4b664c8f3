#include "ct/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "ct/textio.hpp"

namespace ct {

namespace {

// Tolerant of collapsed boxes (clipping can flatten a wild regression output):
// they simply never overlap anything.
double overlap_or_zero(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  return iou(a, b);
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<Detection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (overlap_or_zero(dets[idx].box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

double average_precision(std::vector<Detection> dets,
                         const std::vector<std::pair<std::int64_t, Box>>& gts,
                         double iou_threshold) {
  if (gts.empty()) return std::numeric_limits<double>::quiet_NaN();

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].image_id != dets[b].image_id) return dets[a].image_id < dets[b].image_id;
    return a < b;
  });

  std::vector<bool> gt_used(gts.size(), false);
  std::vector<bool> is_tp(order.size(), false);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Detection& det = dets[order[k]];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || gts[g].first != det.image_id) continue;
      double v = overlap_or_zero(det.box, gts[g].second);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      gt_used[best] = true;
      is_tp[k] = true;
    }
  }

  const double n_gt = static_cast<double>(gts.size());
  std::vector<double> precision(order.size()), recall(order.size());
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (is_tp[k]) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = tp / n_gt;
  }

  double ap = 0.0;
  for (int t = 0; t <= 10; ++t) {
    const double level = t / 10.0;
    double best = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k)
      if (recall[k] >= level) best = std::max(best, precision[k]);
    ap += best / 11.0;
  }
  return ap;
}

EvalReport evaluate(const TeacherParams& teacher, const std::vector<SyntheticImage>& images,
                    int c_w, double nms_iou) {
  std::vector<std::vector<Detection>> dets(c_w);
  std::vector<std::vector<std::pair<std::int64_t, Box>>> gts(c_w);
  std::vector<long> positives(c_w, 0), localized(c_w, 0);

  for (const auto& img : images) {
    TeacherOut out = teacher_forward(img.features, teacher);
    const std::vector<Box> boxes = decode_boxes(img.proposals, out.deltas);

    for (const auto& g : img.gt)
      if (g.category >= 0 && g.category < c_w) gts[g.category].push_back({img.image_id, g.box});

    for (int c = 0; c < c_w; ++c) {
      std::vector<Detection> per_image;
      per_image.reserve(boxes.size());
      for (std::size_t i = 0; i < boxes.size(); ++i)
        per_image.push_back(
            {img.image_id, boxes[i], c, out.cls_probs.at(static_cast<int>(i), c)});
      auto kept = nms(std::move(per_image), nms_iou);
      dets[c].insert(dets[c].end(), kept.begin(), kept.end());
    }

    // CorLoc: for every category present in the image, does the top-scoring
    // box localize some instance of it?
    std::vector<bool> present(c_w, false);
    for (const auto& g : img.gt)
      if (g.category >= 0 && g.category < c_w) present[g.category] = true;
    for (int c = 0; c < c_w; ++c) {
      if (!present[c]) continue;
      ++positives[c];
      int top = 0;
      for (int i = 1; i < static_cast<int>(boxes.size()); ++i)
        if (out.cls_probs.at(i, c) > out.cls_probs.at(top, c)) top = i;
      for (const auto& g : img.gt)
        if (g.category == c && overlap_or_zero(boxes[top], g.box) >= 0.5) {
          ++localized[c];
          break;
        }
    }
  }

  EvalReport rep;
  rep.ap.resize(c_w);
  rep.has_gt.resize(c_w);
  rep.corloc.resize(c_w);
  double ap_sum = 0.0, cl_sum = 0.0;
  int ap_n = 0, cl_n = 0;
  for (int c = 0; c < c_w; ++c) {
    rep.has_gt[c] = !gts[c].empty();
    rep.ap[c] = average_precision(dets[c], gts[c]);
    if (rep.has_gt[c]) {
      ap_sum += rep.ap[c];
      ++ap_n;
    }
    if (positives[c] > 0) {
      rep.corloc[c] = static_cast<double>(localized[c]) / static_cast<double>(positives[c]);
      cl_sum += rep.corloc[c];
      ++cl_n;
    } else {
      rep.corloc[c] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  rep.map = ap_n > 0 ? ap_sum / ap_n : 0.0;
  rep.mean_corloc = cl_n > 0 ? cl_sum / cl_n : 0.0;
  return rep;
}

std::string eval_report_csv(const EvalReport& report, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "category,ap_pct,corloc_pct\n";
  for (std::size_t c = 0; c < report.ap.size(); ++c) {
    const std::string name =
        c < names.size() ? names[c] : "cat" + std::to_string(c);
    os << name << "," << (report.has_gt[c] ? fmt_g17(100.0 * report.ap[c]) : "excluded") << ","
       << (std::isnan(report.corloc[c]) ? "excluded" : fmt_g17(100.0 * report.corloc[c])) << "\n";
  }
  os << "mean," << fmt_g17(100.0 * report.map) << "," << fmt_g17(100.0 * report.mean_corloc)
     << "\n";
  return os.str();
}

}  // namespace ct
