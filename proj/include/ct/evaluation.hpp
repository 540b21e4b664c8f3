#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ct/boxes.hpp"
#include "ct/dsmt.hpp"
#include "ct/synthetic.hpp"

namespace ct {

struct Detection {
  std::int64_t image_id = 0;
  Box box;
  int category = 0;  // weak label space
  double score = 0.0;
};

struct EvalReport {
  std::vector<double> ap;       // per category, in [0, 1]; NaN when no gt
  std::vector<bool> has_gt;     // categories excluded from mAP are flagged off
  double map = 0.0;
  std::vector<double> corloc;   // NaN when no positive image
  double mean_corloc = 0.0;
};

/// Greedy NMS over detections of one image and one category: keep by
/// descending score, suppress IoU > threshold against kept boxes. Ties broken
/// by lower input index, so the result is independent of input order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// VOC 2007 11-point interpolated AP at IoU >= iou_threshold for one
/// category. `gts` lists every ground-truth instance of that category as
/// (image_id, box); each is matchable at most once, in descending score order.
double average_precision(std::vector<Detection> dets,
                         const std::vector<std::pair<std::int64_t, Box>>& gts,
                         double iou_threshold = 0.5);

/// Runs the teacher on every image, decodes boxes, applies per-image
/// per-category NMS and computes AP plus CorLoc. Scores are teacher softmax
/// probabilities; gt annotations are interpreted in the weak label space, so
/// pass weak splits.
EvalReport evaluate(const TeacherParams& teacher, const std::vector<SyntheticImage>& images,
                    int c_w, double nms_iou = 0.3);

/// CSV rows (category, ap%, corloc%) plus a mean row.
std::string eval_report_csv(const EvalReport& report, const std::vector<std::string>& names);

}  // namespace ct
