#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/data.hpp"
#include "gncaf/metrics.hpp"
#include "gncaf/model.hpp"

namespace gncaf {

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 5e-5;
  int epochs = 8;
  std::uint64_t seed = 0;
  std::vector<double> class_weights;                 // empty = unweighted
  std::array<double, 3> split_ratios = {0.6, 0.2, 0.2};
  std::string tile_sampling = "balanced";            // balanced | all
  bool deterministic = true;
};

struct SlideSplit {
  std::vector<std::string> train, val, test;
};

// Slide-level split, deterministic given seed: seeded shuffle, then a
// largest-remainder allocation that keeps every part nonempty.
inline SlideSplit split_slides(std::vector<std::string> ids, const std::array<double, 3>& ratios,
                               std::uint64_t seed) {
  require(ids.size() >= 3, "split_slides: need at least 3 slides");
  double rsum = ratios[0] + ratios[1] + ratios[2];
  require(rsum > 0.0 && std::abs(rsum - 1.0) < 1e-6, "split_slides: ratios must sum to 1");
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, 0x5171));
  rng.shuffle(ids);

  int n = static_cast<int>(ids.size());
  std::array<int, 3> count;
  std::array<double, 3> frac;
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = ratios[i] * n;
    count[i] = static_cast<int>(std::floor(exact));
    frac[i] = exact - count[i];
    assigned += count[i];
  }
  for (int r = 0; r < n - assigned; ++r) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    count[best]++;
    frac[best] = -1.0;
  }
  for (int i = 0; i < 3; ++i) {
    while (count[i] == 0) {
      int donor = count[0] >= count[1] && count[0] >= count[2] ? 0 : (count[1] >= count[2] ? 1 : 2);
      count[donor]--;
      count[i]++;
    }
  }

  SlideSplit split;
  auto it = ids.begin();
  split.train.assign(it, it + count[0]);
  it += count[0];
  split.val.assign(it, it + count[1]);
  it += count[1];
  split.test.assign(it, it + count[2]);
  return split;
}

// Mean pixel cross-entropy between c x (H*W) logits and a label mask.
inline Var cross_entropy_loss(Tape& t, Var logits, const LabelMask& target,
                              const std::vector<double>& class_weights = {}) {
  int c = static_cast<int>(t.val(logits).rows());
  require(t.val(logits).cols() == static_cast<Eigen::Index>(target.labels.size()),
          "cross_entropy_loss: logits/target size mismatch");
  auto targets = std::make_shared<std::vector<int>>(target.labels.begin(), target.labels.end());
  for (int v : *targets)
    require(v < c, "cross_entropy_loss: label out of range");
  std::shared_ptr<const std::vector<double>> weights;
  if (!class_weights.empty()) {
    require(static_cast<int>(class_weights.size()) == c, "cross_entropy_loss: weight count mismatch");
    weights = std::make_shared<const std::vector<double>>(class_weights);
  }
  return ag::cross_entropy_rows(t, ag::transpose(t, logits), targets, weights);
}

// Adam with bias correction; per-parameter moments live beside the store.
class AdamOptimizer {
public:
  AdamOptimizer(const ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (int i = 0; i < store.size(); ++i) {
      m_.emplace_back(Matrix::Zero(store.value(i).rows(), store.value(i).cols()));
      v_.emplace_back(Matrix::Zero(store.value(i).rows(), store.value(i).cols()));
    }
  }

  void step(ParamStore& store, const std::vector<std::uint8_t>& trainable) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (int i = 0; i < store.size(); ++i) {
      if (!trainable[i]) continue;
      const Matrix& g = store.grad(i);
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      Matrix mhat = m_[i] / bc1;
      Matrix vhat = v_[i] / bc2;
      store.value(i).array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Everything is trainable except a frozen patch encoder.
inline std::vector<std::uint8_t> trainable_mask(const GncafModel& model) {
  std::vector<std::uint8_t> mask(model.store.size(), 1);
  if (model.encoder_mode() == EncoderMode::frozen_archive) {
    for (int id : model.encoder.conv_w) mask[id] = 0;
    for (int id : model.encoder.conv_b) mask[id] = 0;
    mask[model.encoder.head_w] = 0;
    mask[model.encoder.head_b] = 0;
  }
  return mask;
}

struct TrainSample {
  int slide = 0;
  int node = 0;
};

// balanced: every tile containing a labeled pixel plus an equal number of
// background tiles per slide; all: every foreground tile.
inline std::vector<TrainSample> make_sample_list(const std::vector<SlideRecord>& slides,
                                                 const std::string& sampling, Rng& rng) {
  std::vector<TrainSample> samples;
  for (int s = 0; s < static_cast<int>(slides.size()); ++s) {
    const SlideRecord& rec = slides[s];
    if (sampling == "all") {
      for (int n = 0; n < rec.grid.n_nodes(); ++n) samples.push_back({s, n});
      continue;
    }
    require_config(sampling == "balanced", "unknown tile_sampling mode: " + sampling);
    std::vector<int> labeled, background;
    for (int n = 0; n < rec.grid.n_nodes(); ++n) {
      LabelMask m = rec.mask_patch(n);
      bool any = std::any_of(m.labels.begin(), m.labels.end(), [](std::uint8_t v) { return v != 0; });
      (any ? labeled : background).push_back(n);
    }
    for (int n : labeled) samples.push_back({s, n});
    rng.shuffle(background);
    std::size_t take = std::min(background.size(), labeled.empty() ? std::size_t{1} : labeled.size());
    for (std::size_t i = 0; i < take; ++i) samples.push_back({s, background[i]});
  }
  return samples;
}

// Forward one (target node, radius-K ego) sample to logits.
inline Var sample_forward(Tape& t, const GncafModel& model, const SlideRecord& rec, int node) {
  EgoSubgraph ego = ego_subgraph(rec.graph, node, model.config.hops);
  ImageU8 target = rec.patch(node);
  if (model.encoder_mode() == EncoderMode::frozen_archive) {
    require(rec.features.rows() == rec.grid.n_nodes(), "slide features missing or stale for " + rec.id);
    return gncaf_forward(t, model, ego, &rec.features, nullptr, target);
  }
  std::vector<ImageU8> ego_patches;
  ego_patches.reserve(ego.local_to_global.size());
  for (int g : ego.local_to_global) ego_patches.push_back(rec.patch(g));
  return gncaf_forward(t, model, ego, nullptr, &ego_patches, target);
}

using PatchPredictor = std::function<LabelMask(const SlideRecord&, int node)>;

enum class MetricsAveraging { pooled, per_patch_mean };

// Pool one confusion matrix over every evaluated pixel (the default), or
// average per-patch reports for the alternative convention. Padded pixels
// of edge tiles are excluded.
inline MetricsReport evaluate_with(const PatchPredictor& predict, const std::vector<SlideRecord>& slides,
                                   int classes, MetricScope scope = MetricScope::all_classes,
                                   MetricsAveraging averaging = MetricsAveraging::pooled) {
  require(!slides.empty(), "evaluate: empty dataset");
  ConfusionMatrix pooled(classes);
  MetricsReport mean_report;
  std::int64_t n_patches = 0;
  for (const SlideRecord& rec : slides) {
    for (int node = 0; node < rec.grid.n_nodes(); ++node) {
      LabelMask pred = predict(rec, node);
      LabelMask truth = rec.mask_patch(node);
      auto [r, c] = rec.grid.coords[node];
      int p = rec.grid.patch_size_px;
      int h = std::min(p, rec.grid.height_px - r * p);
      int w = std::min(p, rec.grid.width_px - c * p);
      ConfusionMatrix cm(classes);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) cm.add(truth.at(y, x), pred.at(y, x));
      if (averaging == MetricsAveraging::pooled) {
        pooled += cm;
      } else {
        MetricsReport r1 = compute_metrics(cm, scope);
        if (n_patches == 0) mean_report = r1;
        ++n_patches;
        if (n_patches > 1) {
          double k = 1.0 / static_cast<double>(n_patches);
          mean_report.mean_precision += k * (r1.mean_precision - mean_report.mean_precision);
          mean_report.mean_recall += k * (r1.mean_recall - mean_report.mean_recall);
          mean_report.mean_f1 += k * (r1.mean_f1 - mean_report.mean_f1);
          mean_report.mean_iou += k * (r1.mean_iou - mean_report.mean_iou);
        }
      }
    }
  }
  if (averaging == MetricsAveraging::pooled) return compute_metrics(pooled, scope);
  return mean_report;
}

inline MetricsReport evaluate(const GncafModel& model, const std::vector<SlideRecord>& slides,
                              MetricScope scope = MetricScope::all_classes,
                              MetricsAveraging averaging = MetricsAveraging::pooled) {
  PatchPredictor predict = [&model](const SlideRecord& rec, int node) {
    Tape t(const_cast<ParamStore*>(&model.store));
    Var logits = sample_forward(t, model, rec, node);
    return predict_class_mask(t.val(logits), rec.grid.patch_size_px, rec.grid.patch_size_px);
  };
  return evaluate_with(predict, slides, model.config.classes, scope, averaging);
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mf1 = 0.0;
  double val_miou = 0.0;
};

inline ordered_json epoch_record_to_json(const EpochRecord& e) {
  return ordered_json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mF1", e.val_mf1},
                      {"val_mIoU", e.val_miou}};
}

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_mf1 = -1.0;
};

// End-to-end optimization; the model is left holding the parameters of the
// best-validation epoch.
inline TrainResult train(GncafModel& model, const std::vector<SlideRecord>& train_slides,
                         const std::vector<SlideRecord>& val_slides, const TrainConfig& cfg) {
  require(!train_slides.empty() && !val_slides.empty(), "train: empty dataset");
  require_config(cfg.batch_size > 0 && cfg.epochs > 0, "train: batch_size and epochs must be positive");
  if (!cfg.class_weights.empty())
    require_config(static_cast<int>(cfg.class_weights.size()) == model.config.classes,
                   "train: class_weights size must equal class count");

  AdamOptimizer opt(model.store, cfg.learning_rate);
  std::vector<std::uint8_t> trainable = trainable_mask(model);

  TrainResult result;
  std::vector<Matrix> best_params;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, 0xE60C + static_cast<std::uint64_t>(epoch)));
    std::vector<TrainSample> samples = make_sample_list(train_slides, cfg.tile_sampling, epoch_rng);
    epoch_rng.shuffle(samples);

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size, ++step) {
      std::size_t end = std::min(samples.size(), start + cfg.batch_size);
      model.store.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const SlideRecord& rec = train_slides[samples[i].slide];
        Tape t(&model.store);
        Var logits = sample_forward(t, model, rec, samples[i].node);
        Var loss = cross_entropy_loss(t, logits, rec.mask_patch(samples[i].node), cfg.class_weights);
        double lv = t.val(loss)(0, 0);
        if (!std::isfinite(lv))
          throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step));
        batch_loss += lv;
        t.backward(loss);
      }
      int bn = static_cast<int>(end - start);
      for (int p = 0; p < model.store.size(); ++p) model.store.grad(p) /= bn;
      opt.step(model.store, trainable);
      loss_sum += batch_loss;
    }

    MetricsReport val = evaluate(model, val_slides);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = samples.empty() ? 0.0 : loss_sum / static_cast<double>(samples.size());
    rec.val_mf1 = val.mean_f1;
    rec.val_miou = val.mean_iou;
    result.history.push_back(rec);

    if (val.mean_f1 > result.best_val_mf1) {
      result.best_val_mf1 = val.mean_f1;
      result.best_epoch = epoch;
      best_params.clear();
      for (int p = 0; p < model.store.size(); ++p) best_params.push_back(model.store.value(p));
    }
  }

  for (int p = 0; p < model.store.size(); ++p) model.store.value(p) = best_params[p];
  return result;
}

}  // namespace gncaf
