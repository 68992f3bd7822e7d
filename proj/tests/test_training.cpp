#include <algorithm>
#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "gncaf/synthdata.hpp"
#include "gncaf/training.hpp"

#include "helpers.hpp"

using namespace gncaf;

namespace {

ModelConfig tiny_config(int hops = 1) {
  ModelConfig c;
  c.classes = 4;
  c.patch_size = 16;
  c.hops = hops;
  c.feature_dim = 16;
  c.gcn_hidden = std::vector<int>(hops, 16);
  c.mlp_hidden = 16;
  c.token_stride = 4;
  c.token_dim = 16;
  c.fusion_heads = 2;
  c.stem_channels = 4;
  c.encoder_channels = {4, 8};
  return c;
}

SlideRecord make_record(SlideImage slide, LabelMask mask) {
  ForegroundConfig fg{ThresholdMode::fixed, 0.05, 0.25};
  return prepare_slide_record(std::move(slide), std::move(mask), 16, fg);
}

SlideRecord solid_record(const std::string& id, int h, int w, std::uint8_t label) {
  SlideImage s;
  s.slide_id = id;
  s.pixels = ImageU8(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) s.pixels.set_pixel(y, x, 200, 60, 90);
  return make_record(std::move(s), LabelMask(h, w, label));
}

void attach_features(GncafModel& model, SlideRecord& rec) {
  PatchEncoderConfig cfg{EncoderMode::frozen_archive, model.config.feature_dim, false,
                         model.config.l2_normalize_features};
  compute_slide_features(rec, cfg, model.encoder, model.store);
}

}  // namespace

TEST_CASE("split_slides: ratios, determinism, exhaustiveness") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));

  SlideSplit a = split_slides(ids, {0.6, 0.2, 0.2}, 42);
  CHECK(a.train.size() == 6);
  CHECK(a.val.size() == 2);
  CHECK(a.test.size() == 2);

  SlideSplit b = split_slides(ids, {0.6, 0.2, 0.2}, 42);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  std::vector<std::string> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::string> sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  CHECK(all == sorted_ids);

  SlideSplit c = split_slides(ids, {0.6, 0.2, 0.2}, 43);
  CHECK(a.train != c.train);
}

TEST_CASE("split_slides: minimum sizes and small inputs") {
  CHECK_THROWS_AS(split_slides({"a", "b"}, {0.6, 0.2, 0.2}, 1), DataError);
  SlideSplit s = split_slides({"a", "b", "c"}, {0.6, 0.2, 0.2}, 1);
  CHECK(s.train.size() == 1);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);
}

TEST_CASE("cross_entropy_loss: uniform logits, large margin, per-pixel oracle") {
  ParamStore store;
  Tape t(&store);
  LabelMask target(2, 2);
  target.labels = {0, 1, 2, 3};

  Var uniform = t.input(Matrix::Zero(4, 4));
  CHECK(t.val(cross_entropy_loss(t, uniform, target))(0, 0) ==
        Catch::Approx(std::log(4.0)).epsilon(1e-12));

  Matrix margin = Matrix::Zero(4, 4);
  for (int px = 0; px < 4; ++px) margin(target.labels[px], px) = 100.0;
  CHECK(t.val(cross_entropy_loss(t, t.input(margin), target))(0, 0) < 1e-8);

  Rng rng(3);
  Matrix logits = test::random_matrix(rng, 4, 4);
  double oracle = 0.0;
  for (int px = 0; px < 4; ++px) {
    double denom = 0.0;
    for (int c = 0; c < 4; ++c) denom += std::exp(logits(c, px));
    oracle += -std::log(std::exp(logits(target.labels[px], px)) / denom);
  }
  oracle /= 4.0;
  CHECK(t.val(cross_entropy_loss(t, t.input(logits), target))(0, 0) ==
        Catch::Approx(oracle).epsilon(1e-6));

  LabelMask bad(2, 2);
  bad.labels = {0, 1, 2, 7};
  CHECK_THROWS_AS(cross_entropy_loss(t, t.input(logits), bad), DataError);
}

TEST_CASE("adam minimizes a quadratic") {
  ParamStore store;
  int x = store.add("x", Matrix::Constant(1, 1, 5.0));
  AdamOptimizer opt(store, 0.1);
  std::vector<std::uint8_t> mask{1};
  for (int i = 0; i < 200; ++i) {
    store.zero_grads();
    Tape t(&store);
    Var loss = ag::cwise_mul(t, t.param(x), t.param(x));
    t.backward(loss);
    opt.step(store, mask);
  }
  CHECK(std::abs(store.value(x)(0, 0)) < 0.1);
}

TEST_CASE("trainable_mask freezes the patch encoder in frozen_archive mode") {
  GncafModel frozen = init_model(tiny_config(), 1);
  std::vector<std::uint8_t> mask = trainable_mask(frozen);
  CHECK(mask[frozen.encoder.head_w] == 0);
  CHECK(mask[frozen.context_mlp.w1] == 1);

  ModelConfig cfg = tiny_config();
  cfg.encoder_mode = "trainable_cnn";
  GncafModel finetune = init_model(cfg, 1);
  CHECK(trainable_mask(finetune)[finetune.encoder.head_w] == 1);
}

TEST_CASE("train: loss decreases on a trivially learnable sample") {
  GncafModel model = init_model(tiny_config(), 5);
  SlideRecord rec = solid_record("train0", 32, 32, 1);
  attach_features(model, rec);
  std::vector<SlideRecord> train_set;
  train_set.push_back(rec);
  std::vector<SlideRecord> val_set;
  val_set.push_back(rec);

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.tile_sampling = "all";
  TrainResult res = train(model, train_set, val_set, cfg);
  REQUIRE(res.history.size() == 3);
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  CHECK(res.best_epoch >= 1);
}

TEST_CASE("train: fixed seed reproduces history and parameters exactly") {
  auto run = [&]() {
    GncafModel model = init_model(tiny_config(), 5);
    SynthSpec spec;
    spec.rows = 8;
    spec.cols = 8;
    spec.tile_size_px = 16;
    spec.n_structures = 1;
    spec.seed = 123;
    SynthSlide s = generate_slide(spec, "s0");
    SlideRecord rec = make_record(s.slide, s.mask);
    attach_features(model, rec);
    std::vector<SlideRecord> slides;
    slides.push_back(std::move(rec));

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 2;
    cfg.seed = 77;
    TrainResult res = train(model, slides, slides, cfg);
    return std::make_pair(res, model.store.value(model.context_mlp.w1));
  };
  auto [res_a, w_a] = run();
  auto [res_b, w_b] = run();
  REQUIRE(res_a.history.size() == res_b.history.size());
  for (std::size_t i = 0; i < res_a.history.size(); ++i) {
    CHECK(res_a.history[i].train_loss == res_b.history[i].train_loss);
    CHECK(res_a.history[i].val_mf1 == res_b.history[i].val_mf1);
  }
  CHECK(w_a == w_b);
}

TEST_CASE("train: non-finite loss aborts with a diagnostic") {
  GncafModel model = init_model(tiny_config(), 5);
  SlideRecord rec = solid_record("diverge", 32, 32, 1);
  attach_features(model, rec);
  // Corrupt parameters so the forward pass produces a non-finite loss.
  model.store.value(model.context_mlp.b2).setConstant(std::numeric_limits<double>::infinity());
  std::vector<SlideRecord> slides;
  slides.push_back(std::move(rec));
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(model, slides, slides, cfg), NumericError);
}

TEST_CASE("evaluate_with: perfect oracle scores 100% and is repeatable") {
  // One 16x16 tile whose quadrants carry all four classes.
  SlideImage s;
  s.slide_id = "oracle";
  s.pixels = ImageU8(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) s.pixels.set_pixel(y, x, 210, 40, 70);
  LabelMask mask(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) mask.at(y, x) = static_cast<std::uint8_t>((y / 8) * 2 + x / 8);
  std::vector<SlideRecord> slides;
  slides.push_back(make_record(std::move(s), std::move(mask)));

  PatchPredictor oracle = [](const SlideRecord& rec, int node) { return rec.mask_patch(node); };
  MetricsReport r1 = evaluate_with(oracle, slides, 4);
  CHECK(r1.mean_f1 == 1.0);
  CHECK(r1.mean_iou == 1.0);
  MetricsReport r2 = evaluate_with(oracle, slides, 4);
  CHECK(r1 == r2);
}

TEST_CASE("evaluate_with: pooled convention (and the per-patch alternative differs)") {
  SlideImage s;
  s.slide_id = "pooling";
  s.pixels = ImageU8(4, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) s.pixels.set_pixel(y, x, 210, 40, 70);
  LabelMask mask(4, 8, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) mask.at(y, x) = 1;  // tile 0 all class 1
  for (int y = 2; y < 4; ++y)
    for (int x = 4; x < 8; ++x) mask.at(y, x) = 1;  // tile 1 lower half class 1
  ForegroundConfig fg{ThresholdMode::fixed, 0.05, 0.25};
  SlideImage slide_copy = s;
  std::vector<SlideRecord> slides;
  slides.push_back(prepare_slide_record(std::move(slide_copy), std::move(mask), 4, fg));

  PatchPredictor predict = [](const SlideRecord& rec, int node) {
    return LabelMask(4, 4, node == 0 ? 1 : 0);
  };
  MetricsReport pooled = evaluate_with(predict, slides, 2);
  // Pooled over 32 pixels: class0 tp=8 fp=8 fn=0, class1 tp=16 fp=0 fn=8.
  CHECK(pooled.mean_f1 == Catch::Approx((2.0 / 3.0 + 0.8) / 2.0));
  MetricsReport averaged = evaluate_with(predict, slides, 2, MetricScope::all_classes,
                                         MetricsAveraging::per_patch_mean);
  CHECK(averaged.mean_f1 != pooled.mean_f1);
}

TEST_CASE("evaluate: empty dataset errors") {
  GncafModel model = init_model(tiny_config(), 5);
  CHECK_THROWS_AS(evaluate(model, {}), DataError);
}

TEST_CASE("checkpoint save/load/evaluate round trip gives an identical report") {
  GncafModel model = init_model(tiny_config(), 6);
  SynthSpec spec;
  spec.rows = 8;
  spec.cols = 8;
  spec.tile_size_px = 16;
  spec.n_structures = 1;
  spec.seed = 5;
  SynthSlide s = generate_slide(spec, "ckpt0");
  SlideRecord rec = make_record(s.slide, s.mask);
  attach_features(model, rec);
  std::vector<SlideRecord> slides;
  slides.push_back(std::move(rec));

  MetricsReport before = evaluate(model, slides);
  std::string path = test::make_temp_dir("train_ckpt") + "/m.gnck";
  save_checkpoint(path, model);
  GncafModel loaded = load_checkpoint(path);
  MetricsReport after = evaluate(loaded, slides);
  CHECK(before == after);
}
