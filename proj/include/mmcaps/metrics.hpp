#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mmcaps/tensor.hpp"

namespace mmcaps {

// Raw overlap counts for one sample; keeping intersections and unions
// separate is what makes the pooled "overall" IoU computable.
struct SampleOverlap {
  int64_t intersection = 0;
  int64_t unions = 0;

  // Correctly predicting absence counts as a perfect match.
  double iou() const {
    return unions == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(unions);
  }
};

inline SampleOverlap overlap_counts(const std::vector<uint8_t>& pred,
                                    const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("iou: mask size mismatch");
  SampleOverlap o;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    o.intersection += (p && g) ? 1 : 0;
    o.unions += (p || g) ? 1 : 0;
  }
  return o;
}

inline double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  return overlap_counts(pred, gt).iou();
}

// Whole-video overlap: intersections and unions pooled over all frames
// before dividing, treating the video as a single sample.
inline SampleOverlap tube_overlap(const std::vector<std::vector<uint8_t>>& pred,
                                  const std::vector<std::vector<uint8_t>>& gt) {
  if (pred.size() != gt.size()) throw DimensionError("tube_iou: frame count mismatch");
  SampleOverlap total;
  for (size_t f = 0; f < pred.size(); ++f) {
    auto o = overlap_counts(pred[f], gt[f]);
    total.intersection += o.intersection;
    total.unions += o.unions;
  }
  return total;
}

inline double tube_iou(const std::vector<std::vector<uint8_t>>& pred,
                       const std::vector<std::vector<uint8_t>>& gt) {
  return tube_overlap(pred, gt).iou();
}

struct AggregateIoU {
  double overall = 0.0;  // pooled intersections / pooled unions
  double mean = 0.0;     // average of per-sample IoUs
};

inline AggregateIoU aggregate(const std::vector<SampleOverlap>& overlaps) {
  if (overlaps.empty()) throw ContractError("aggregate: no samples");
  int64_t inter = 0, uni = 0;
  double mean = 0.0;
  for (auto& o : overlaps) {
    inter += o.intersection;
    uni += o.unions;
    mean += o.iou();
  }
  AggregateIoU agg;
  agg.overall = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  agg.mean = mean / static_cast<double>(overlaps.size());
  return agg;
}

// Fraction of samples with IoU strictly above each display threshold.
inline std::vector<double> precision_curve(const std::vector<double>& ious) {
  if (ious.empty()) throw ContractError("precision_curve: no samples");
  std::vector<double> out;
  for (int k = 0; k < 5; ++k) {
    const double tau = 0.5 + 0.1 * k;
    int64_t hits = 0;
    for (double v : ious) hits += v > tau ? 1 : 0;
    out.push_back(static_cast<double>(hits) / static_cast<double>(ious.size()));
  }
  return out;
}

// Mean of precision over thresholds 0.50:0.05:0.95. With a single
// unranked prediction per query, average precision at a threshold reduces
// to precision at that threshold.
inline double map_over_thresholds(const std::vector<double>& ious) {
  if (ious.empty()) throw ContractError("map_over_thresholds: no samples");
  double total = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double tau = 0.5 + 0.05 * k;
    int64_t hits = 0;
    for (double v : ious) hits += v > tau ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(ious.size());
  }
  return total / 10.0;
}

struct MetricReport {
  std::string mode;  // "frame" or "tube"
  std::vector<double> per_sample_iou;
  std::vector<double> precision;  // P@0.5 .. P@0.9
  double map = 0.0;
  double overall_iou = 0.0;
  double mean_iou = 0.0;
  double classification_accuracy = -1.0;  // optional; < 0 when not measured
};

inline MetricReport make_report(const std::vector<SampleOverlap>& overlaps,
                                const std::string& mode) {
  MetricReport r;
  r.mode = mode;
  for (auto& o : overlaps) r.per_sample_iou.push_back(o.iou());
  r.precision = precision_curve(r.per_sample_iou);
  r.map = map_over_thresholds(r.per_sample_iou);
  auto agg = aggregate(overlaps);
  r.overall_iou = agg.overall;
  r.mean_iou = agg.mean;
  return r;
}

inline std::string report_keyvalues(const MetricReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "mode=" << r.mode << "\n";
  os << "samples=" << r.per_sample_iou.size() << "\n";
  for (int k = 0; k < 5; ++k)
    os << "P@0." << (5 + k) << "=" << r.precision[static_cast<size_t>(k)] << "\n";
  os << "mAP=" << r.map << "\n";
  os << "Overall=" << r.overall_iou << "\n";
  os << "Mean=" << r.mean_iou << "\n";
  if (r.classification_accuracy >= 0.0) os << "accuracy=" << r.classification_accuracy << "\n";
  return os.str();
}

inline std::string report_table(const MetricReport& r) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed;
  os << "  mode    P@0.5  P@0.6  P@0.7  P@0.8  P@0.9    mAP  Overall   Mean\n";
  os << "  " << r.mode;
  for (size_t i = r.mode.size(); i < 6; ++i) os << ' ';
  for (int k = 0; k < 5; ++k) os << "  " << r.precision[static_cast<size_t>(k)];
  os << "  " << r.map << "    " << r.overall_iou << "  " << r.mean_iou << "\n";
  return os.str();
}

}  // namespace mmcaps
