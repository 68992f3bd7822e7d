#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/image.hpp"

namespace gncaf {

// Pixel confusion matrix pooled over an evaluation set.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // counts[g * classes + p]

  explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  void add(int truth, int pred, std::int64_t n = 1) {
    require(truth >= 0 && truth < classes && pred >= 0 && pred < classes, "confusion matrix: label out of range");
    counts[static_cast<std::size_t>(truth) * classes + pred] += n;
  }

  void add_masks(const LabelMask& truth, const LabelMask& pred) {
    require(truth.height == pred.height && truth.width == pred.width, "confusion matrix: mask shape mismatch");
    for (std::size_t i = 0; i < truth.labels.size(); ++i) add(truth.labels[i], pred.labels[i]);
  }

  std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * classes + pred]; }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(classes == o.classes, "confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
};

enum class MetricScope { all_classes, tls_only };

inline MetricScope metric_scope_from_string(const std::string& s) {
  if (s == "all" || s == "all_classes") return MetricScope::all_classes;
  if (s == "tls" || s == "tls_only") return MetricScope::tls_only;
  throw ConfigError("unknown metric scope: " + s);
}

// Per-class and macro precision/recall/F1/IoU, fractions in [0, 1].
struct MetricsReport {
  int classes = 0;
  MetricScope scope = MetricScope::all_classes;
  std::vector<double> precision, recall, f1, iou;
  double mean_precision = 0.0, mean_recall = 0.0, mean_f1 = 0.0, mean_iou = 0.0;

  bool operator==(const MetricsReport& o) const {
    return classes == o.classes && scope == o.scope && precision == o.precision && recall == o.recall &&
           f1 == o.f1 && iou == o.iou && mean_precision == o.mean_precision && mean_recall == o.mean_recall &&
           mean_f1 == o.mean_f1 && mean_iou == o.mean_iou;
  }
};

// Empty denominators yield 0 and the class still enters the macro mean.
inline MetricsReport compute_metrics(const ConfusionMatrix& cm, MetricScope scope = MetricScope::all_classes) {
  int c = cm.classes;
  MetricsReport r;
  r.classes = c;
  r.scope = scope;
  r.precision.assign(c, 0.0);
  r.recall.assign(c, 0.0);
  r.f1.assign(c, 0.0);
  r.iou.assign(c, 0.0);
  for (int k = 0; k < c; ++k) {
    std::int64_t tp = cm.at(k, k);
    std::int64_t pred_k = 0, truth_k = 0;
    for (int g = 0; g < c; ++g) pred_k += cm.at(g, k);
    for (int p = 0; p < c; ++p) truth_k += cm.at(k, p);
    double prec = pred_k > 0 ? static_cast<double>(tp) / static_cast<double>(pred_k) : 0.0;
    double rec = truth_k > 0 ? static_cast<double>(tp) / static_cast<double>(truth_k) : 0.0;
    r.precision[k] = prec;
    r.recall[k] = rec;
    r.f1[k] = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    std::int64_t uni = pred_k + truth_k - tp;
    r.iou[k] = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
  }
  int first = scope == MetricScope::tls_only ? 1 : 0;
  int n = c - first;
  require(n > 0, "compute_metrics: empty class scope");
  for (int k = first; k < c; ++k) {
    r.mean_precision += r.precision[k] / n;
    r.mean_recall += r.recall[k] / n;
    r.mean_f1 += r.f1[k] / n;
    r.mean_iou += r.iou[k] / n;
  }
  return r;
}

inline ordered_json metrics_report_to_json(const MetricsReport& r) {
  ordered_json j;
  j["classes"] = r.classes;
  j["scope"] = r.scope == MetricScope::all_classes ? "all_classes" : "tls_only";
  ordered_json per = ordered_json::array();
  for (int k = 0; k < r.classes; ++k) {
    ordered_json c;
    c["class"] = k;
    c["precision"] = r.precision[k];
    c["recall"] = r.recall[k];
    c["f1"] = r.f1[k];
    c["iou"] = r.iou[k];
    per.push_back(c);
  }
  j["per_class"] = per;
  j["macro"] = {{"mP", r.mean_precision}, {"mR", r.mean_recall}, {"mF1", r.mean_f1}, {"mIoU", r.mean_iou}};
  return j;
}

}  // namespace gncaf
