#pragma once

#include <map>
#include <string>
#include <vector>

#include "gncaf/data.hpp"
#include "gncaf/model.hpp"
#include "gncaf/synthdata.hpp"
#include "gncaf/training.hpp"

namespace gncaf {

struct PreparedDataset {
  DatasetInfo info;
  SlideSplit split;
  std::vector<SlideRecord> train, val, test;
};

inline PreparedDataset prepare_dataset(const std::string& dir, int patch_size,
                                       const std::array<double, 3>& ratios, std::uint64_t seed) {
  PreparedDataset out;
  out.info = load_dataset_info(dir);
  out.split = split_slides(out.info.slide_ids, ratios, seed);
  out.train = load_slide_records(out.info, out.split.train, patch_size);
  out.val = load_slide_records(out.info, out.split.val, patch_size);
  out.test = load_slide_records(out.info, out.split.test, patch_size);
  return out;
}

// Frozen node features for every slide. Features depend only on the encoder
// parameters (drawn first from the init seed), so ablation sweeps over
// hops/aggregator/fusion can reuse them across runs with the same seed.
inline void attach_frozen_features(GncafModel& model, std::vector<SlideRecord>& slides) {
  PatchEncoderConfig cfg{EncoderMode::frozen_archive, model.config.feature_dim, false,
                         model.config.l2_normalize_features};
  for (SlideRecord& rec : slides)
    if (rec.features.rows() != rec.grid.n_nodes()) compute_slide_features(rec, cfg, model.encoder, model.store);
}

struct RunOutput {
  TrainResult train_result;
  MetricsReport val_report;
  MetricsReport test_report;
};

inline RunOutput run_experiment(PreparedDataset& ds, GncafModel& model, const TrainConfig& train_cfg,
                                MetricScope scope = MetricScope::all_classes) {
  if (model.encoder_mode() == EncoderMode::frozen_archive) {
    attach_frozen_features(model, ds.train);
    attach_frozen_features(model, ds.val);
    attach_frozen_features(model, ds.test);
  }
  RunOutput out;
  out.train_result = train(model, ds.train, ds.val, train_cfg);
  out.val_report = evaluate(model, ds.val, scope);
  out.test_report = evaluate(model, ds.test, scope);
  return out;
}

// Invalidate cached features (needed when the encoder seed changes between
// ablation runs).
inline void clear_features(PreparedDataset& ds) {
  for (auto* part : {&ds.train, &ds.val, &ds.test})
    for (SlideRecord& rec : *part) rec.features = MatrixF();
}

struct AblateRow {
  std::string value;
  MetricsReport report;
  int best_epoch = -1;
};

struct AblateResult {
  std::string axis;
  std::vector<AblateRow> rows;
};

inline ModelConfig apply_axis_value(ModelConfig base, const std::string& axis, const std::string& value) {
  if (axis == "hops") {
    int hops = std::stoi(value);
    require_config(hops >= 0, "ablate: hops must be >= 0");
    base.hops = hops;
    base.gcn_hidden.resize(hops, base.gcn_hidden.empty() ? 128 : base.gcn_hidden.back());
  } else if (axis == "aggregator") {
    aggregator_from_string(value);
    base.aggregator = value;
  } else if (axis == "fusion") {
    fusion_from_string(value);
    base.fusion = value;
  } else if (axis == "encoder") {
    encoder_mode_from_string(value);
    base.encoder_mode = value;
  } else {
    throw ConfigError("ablate: unknown axis '" + axis + "' (expected hops|aggregator|fusion|encoder)");
  }
  return base;
}

inline AblateResult run_ablation(PreparedDataset& ds, const ModelConfig& base_model,
                                 const TrainConfig& train_cfg, const std::string& axis,
                                 const std::vector<std::string>& values, std::uint64_t model_seed,
                                 MetricScope scope = MetricScope::all_classes) {
  AblateResult result;
  result.axis = axis;
  for (const std::string& value : values) {
    ModelConfig cfg = apply_axis_value(base_model, axis, value);
    GncafModel model = init_model(cfg, model_seed);
    if (axis == "encoder") clear_features(ds);  // trainable mode must not see stale features
    RunOutput out = run_experiment(ds, model, train_cfg, scope);
    AblateRow row;
    row.value = value;
    row.report = out.test_report;
    row.best_epoch = out.train_result.best_epoch;
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline ordered_json ablate_result_to_json(const AblateResult& r) {
  ordered_json j;
  j["axis"] = r.axis;
  ordered_json rows = ordered_json::array();
  for (const AblateRow& row : r.rows) {
    ordered_json e;
    e["value"] = row.value;
    e["best_epoch"] = row.best_epoch;
    e["metrics"] = metrics_report_to_json(row.report);
    rows.push_back(e);
  }
  j["rows"] = rows;
  return j;
}

inline std::string ablate_table_text(const AblateResult& r) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof(line), "%-12s %8s %8s %8s %8s\n", r.axis.c_str(), "mF1", "mIoU", "mP", "mR");
  out += line;
  for (const AblateRow& row : r.rows) {
    std::snprintf(line, sizeof(line), "%-12s %8.2f %8.2f %8.2f %8.2f\n", row.value.c_str(),
                  100.0 * row.report.mean_f1, 100.0 * row.report.mean_iou,
                  100.0 * row.report.mean_precision, 100.0 * row.report.mean_recall);
    out += line;
  }
  return out;
}

}  // namespace gncaf
