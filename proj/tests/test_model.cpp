#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dhhqa/rng.hpp"
#include "dhhqa/train.hpp"
#include "dhhqa/vit.hpp"
#include "test_helpers.hpp"

using namespace dhhqa;
using namespace dhhqa::testing;

namespace {

VitConfig tiny_config() {
  VitConfig cfg;
  cfg.image_size = 8;
  cfg.vit_patch_size = 4;
  cfg.embed_dim = 8;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.n_distortion_classes = 3;
  return cfg;
}

Image random_patch(int side, std::uint64_t seed) {
  Image img(side, side);
  Rng rng(seed);
  for (std::uint8_t& c : img.pixels) c = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("vit config validation") {
  VitConfig cfg = tiny_config();
  cfg.image_size = 10;  // not divisible by patch size 4
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.embed_dim = 9;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.lambda = -0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(tiny_config().validate());
  CHECK_NOTHROW(VitConfig::paper_scale().validate());
  CHECK(VitConfig::paper_scale().n_tokens() == 196);
}

TEST_CASE("init_params layout: head widths, init bounds, zero biases") {
  const VitConfig cfg = tiny_config();
  ParamSet p = init_params(cfg, 3);
  const std::size_t d = 8;

  CHECK(p.get("cls_head.w1").shape() == std::vector<std::size_t>{d, 128});
  CHECK(p.get("cls_head.w2").shape() == std::vector<std::size_t>{128, 3});
  CHECK(p.get("reg_head.w1").shape() == std::vector<std::size_t>{d, 1024});
  CHECK(p.get("reg_head.w2").shape() == std::vector<std::size_t>{1024, 1});
  CHECK(p.get("patch_embed.w").shape() == std::vector<std::size_t>{4 * 4 * 3, d});
  CHECK(p.get("pos_embed").shape() == std::vector<std::size_t>{std::size_t(cfg.n_tokens()) + 1, d});

  for (const auto& [name, t] : p.items) {
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                         name.ends_with("beta");
    const bool is_gain = name.ends_with("gamma");
    const bool is_embedding = name == "cls_token" || name == "pos_embed";
    // weight matrices: uniform within +-1/sqrt(fan_in); embeddings: truncated
    // normal redrawn beyond two sigma
    const double bound =
        is_embedding ? 2.0 * 0.02 : 1.0 / std::sqrt(static_cast<double>(t.shape().front()));
    for (double v : t.data()) {
      if (is_bias)
        CHECK(v == 0.0);
      else if (is_gain)
        CHECK(v == 1.0);
      else
        CHECK(std::abs(v) <= bound + 1e-12);
    }
    CHECK(t.requires_grad());
  }

  const ParamSet q = init_params(cfg, 3);
  CHECK(p.get("block0.qkv.w").data() == q.get("block0.qkv.w").data());
  const ParamSet r = init_params(cfg, 4);
  CHECK(p.get("block0.qkv.w").data() != r.get("block0.qkv.w").data());
  CHECK_THROWS_AS(p.get("no_such_param"), std::invalid_argument);
}

TEST_CASE("encode produces a finite embedding of the advertised width") {
  const VitConfig cfg = tiny_config();
  const ParamSet p = init_params(cfg, 1);
  const Tensor e = encode(random_patch(8, 5), cfg, p);
  CHECK(e.numel() == std::size_t(cfg.embed_dim));
  for (double v : e.data()) CHECK(std::isfinite(v));

  // deterministic and input-sensitive
  CHECK(encode(random_patch(8, 5), cfg, p).data() == e.data());
  CHECK(encode(random_patch(8, 6), cfg, p).data() != e.data());
}

TEST_CASE("heads: softmax simplex output, uniform when the head weights are zero") {
  const VitConfig cfg = tiny_config();
  ParamSet p = init_params(cfg, 2);
  const Tensor e = encode(random_patch(8, 9), cfg, p);

  const Tensor probs = classify_head(e, cfg, p);
  REQUIRE(probs.shape() == std::vector<std::size_t>{1, 3});
  double sum = 0.0;
  for (double v : probs.data()) {
    CHECK(v > 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  const Tensor q = regress_head(e, cfg, p);
  CHECK(q.numel() == 1);
  CHECK(std::isfinite(q.item()));

  for (const std::string n : {"cls_head.w1", "cls_head.b1", "cls_head.w2", "cls_head.b2"})
    p.get(n).data().assign(p.get(n).data().size(), 0.0);
  const Tensor uniform = classify_head(e, cfg, p);
  for (double v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  for (const std::string n : {"reg_head.w1", "reg_head.b1", "reg_head.w2", "reg_head.b2"})
    p.get(n).data().assign(p.get(n).data().size(), 0.0);
  CHECK(regress_head(e, cfg, p).item() == 0.0);
}

TEST_CASE("joint_loss hand case") {
  // sample 1: probs (1,0) target 0 -> class 0;      q 3 vs 2   -> 1
  // sample 2: probs (0.5,0.5) target 1 -> 0.5;      q 0 vs 2   -> 4
  // lambda 2: mean of (0+1) and (2*0.5+4) = (1 + 5) / 2 = 3
  const std::vector<Tensor> probs{Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.5, 0.5})};
  const std::vector<Tensor> qs{Tensor({1, 1}, {3.0}), Tensor({1, 1}, {0.0})};
  const Tensor loss = joint_loss(probs, {0, 1}, qs, {2.0, 2.0}, 2.0, 2);
  CHECK(loss.item() == doctest::Approx(3.0).epsilon(1e-12));

  // lambda 0 drops the class term entirely: mean squared q error only
  const Tensor reg_only = joint_loss(probs, {0, 1}, qs, {2.0, 2.0}, 0.0, 2);
  CHECK(reg_only.item() == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("lambda zero leaves the classification head untouched by backward") {
  const VitConfig cfg = tiny_config();
  ParamSet p = init_params(cfg, 4);
  const Image patch = random_patch(8, 3);
  const Tensor e = encode(patch, cfg, p);
  const Tensor loss =
      joint_loss({classify_head(e, cfg, p)}, {1}, {regress_head(e, cfg, p)}, {0.5}, 0.0, 3);
  p.zero_grads();
  loss.backward();
  double cls_grad = 0.0, reg_grad = 0.0;
  for (double g : p.get("cls_head.w2").grad()) cls_grad += std::abs(g);
  for (double g : p.get("reg_head.w2").grad()) reg_grad += std::abs(g);
  CHECK(cls_grad == 0.0);
  CHECK(reg_grad > 0.0);
}

TEST_CASE("end-to-end gradients match finite differences") {
  const VitConfig cfg = tiny_config();
  ParamSet p = init_params(cfg, 7);
  const Image patch = random_patch(8, 42);

  const auto loss_fn = [&] {
    const Tensor e = encode(patch, cfg, p);
    return joint_loss({classify_head(e, cfg, p)}, {2}, {regress_head(e, cfg, p)}, {0.7},
                      1.0, 3);
  };
  Tensor loss = loss_fn();
  p.zero_grads();
  loss.backward();

  const double eps = 1e-5;
  for (const std::string name : {"patch_embed.w", "cls_token", "pos_embed", "block0.qkv.w",
                                 "block0.ln1.gamma", "block0.mlp1.w", "ln_final.beta",
                                 "cls_head.w2", "reg_head.w2", "reg_head.b1"}) {
    Tensor& t = p.get(name);
    REQUIRE(t.grad().size() == t.numel());
    // probe a spread of indices rather than every element
    for (std::size_t i = 0; i < t.numel(); i += std::max<std::size_t>(1, t.numel() / 7)) {
      const double saved = t.data()[i];
      t.data()[i] = saved + eps;
      const double up = loss_fn().item();
      t.data()[i] = saved - eps;
      const double down = loss_fn().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = t.grad()[i];
      CAPTURE(name);
      CAPTURE(i);
      CHECK(std::abs(numeric - analytic) /
                std::max({std::abs(numeric), std::abs(analytic), 1e-3}) <
            1e-3);
    }
  }
}

TEST_CASE("fused 32-bit batch gradients agree with the reference graph") {
  const VitConfig cfg = tiny_config();
  const std::vector<Image> patches{random_patch(8, 11), random_patch(8, 12), random_patch(8, 13)};
  const std::vector<int> targets{0, 2, 1};
  const std::vector<double> mos{0.3, 0.8, 0.55};

  for (const double lambda : {0.7, 0.0}) {
    CAPTURE(lambda);
    ParamSet p_ref = init_params(cfg, 21);
    std::vector<Tensor> probs, qhats;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const Tensor e = encode(patches[i], cfg, p_ref);
      if (lambda > 0.0) probs.push_back(classify_head(e, cfg, p_ref));
      qhats.push_back(regress_head(e, cfg, p_ref));
    }
    const Tensor loss = joint_loss(probs, targets, qhats, mos, lambda, cfg.n_distortion_classes);
    p_ref.zero_grads();
    loss.backward();

    ParamSet p_fused = init_params(cfg, 21);
    const double fused_loss = fused_batch_grads(patches, targets, mos, cfg, p_fused, lambda);
    CHECK(std::abs(fused_loss - loss.item()) <= 1e-5 * std::max(1.0, std::abs(loss.item())));

    for (std::size_t pi = 0; pi < p_ref.items.size(); ++pi) {
      const auto& [name, t_ref] = p_ref.items[pi];
      const Tensor& t_fused = p_fused.items[pi].second;
      REQUIRE(t_fused.grad().size() == t_fused.numel());
      CAPTURE(name);
      if (lambda == 0.0 && name.rfind("cls_head.", 0) == 0) {
        // classification branch is dead; fused path reports exact zeros
        for (double g : t_fused.grad()) CHECK(g == 0.0);
        continue;
      }
      REQUIRE(t_ref.grad().size() == t_ref.numel());
      for (std::size_t i = 0; i < t_ref.numel(); ++i) {
        CAPTURE(i);
        CHECK(std::abs(t_fused.grad()[i] - t_ref.grad()[i]) <=
              1e-4 + 1e-3 * std::abs(t_ref.grad()[i]));
      }
    }

    // bit-for-bit repeatable
    ParamSet p_again = init_params(cfg, 21);
    CHECK(fused_batch_grads(patches, targets, mos, cfg, p_again, lambda) == fused_loss);
    for (std::size_t pi = 0; pi < p_fused.items.size(); ++pi)
      CHECK(p_again.items[pi].second.grad() == p_fused.items[pi].second.grad());
  }
}

TEST_CASE("checkpoint round-trip: config, names, and bit-identical prediction") {
  TempDir dir("ckpt");
  VitConfig cfg = tiny_config();
  cfg.lambda = 0.25;
  ParamSet p = init_params(cfg, 11);
  const Image patch = random_patch(8, 1);

  const std::string path = (dir.path() / "model.ckpt").string();
  save_checkpoint(path, cfg, p);  // canonicalizes live params to f32
  const double q_before = regress_head(encode(patch, cfg, p), cfg, p).item();
  const Tensor probs_before = classify_head(encode(patch, cfg, p), cfg, p);

  auto [cfg2, p2] = load_checkpoint(path);
  CHECK(cfg2.image_size == cfg.image_size);
  CHECK(cfg2.embed_dim == cfg.embed_dim);
  CHECK(cfg2.n_blocks == cfg.n_blocks);
  CHECK(cfg2.n_heads == cfg.n_heads);
  CHECK(cfg2.n_distortion_classes == cfg.n_distortion_classes);
  CHECK(cfg2.lambda == cfg.lambda);
  REQUIRE(p2.items.size() == p.items.size());
  for (std::size_t i = 0; i < p.items.size(); ++i) {
    CHECK(p2.items[i].first == p.items[i].first);
    CHECK(p2.items[i].second.data() == p.items[i].second.data());
  }

  const double q_after = regress_head(encode(patch, cfg2, p2), cfg2, p2).item();
  CHECK(q_after == q_before);  // bit-identical, not approximately equal
  CHECK(classify_head(encode(patch, cfg2, p2), cfg2, p2).data() == probs_before.data());
}

TEST_CASE("load_checkpoint rejects garbage") {
  TempDir dir("ckpt_bad");
  const std::string path = (dir.path() / "bad.ckpt").string();
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint((dir.path() / "missing.ckpt").string()), std::runtime_error);
}

TEST_CASE("Adam drives a quadratic to its minimum") {
  ParamSet p;
  Tensor& w = p.add("w", Tensor({1}, {10.0}, true));
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  AdamOptimizer opt(p, cfg);
  for (int it = 0; it < 200; ++it) {
    const Tensor diff = sub(w, Tensor({1}, {3.0}));
    const Tensor loss = sum_all(mul(diff, diff));
    p.zero_grads();
    loss.backward();
    opt.step();
  }
  CHECK(w.data()[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("predict_image averages crops deterministically") {
  const VitConfig cfg = tiny_config();
  const ParamSet p = init_params(cfg, 5);
  const Image proj = random_patch(32, 8);
  const Prediction a = predict_image(proj, nullptr, p, cfg, 3, 99, 16);
  const Prediction b = predict_image(proj, nullptr, p, cfg, 3, 99, 16);
  CHECK(a.quality_score == b.quality_score);
  CHECK(a.class_probs == b.class_probs);
  REQUIRE(a.class_probs.size() == 3);
  double sum = 0.0;
  for (double v : a.class_probs) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(a.predicted_class ==
        int(std::max_element(a.class_probs.begin(), a.class_probs.end()) - a.class_probs.begin()));
  CHECK(std::isfinite(a.quality_score));
}

TEST_CASE("train runs end to end on a micro corpus and logs every epoch") {
  TempDir dir("train_micro");
  // synthetic manifest: 3 contents x 2 kinds x 2 levels of saved projections
  std::vector<SampleRecord> manifest;
  Rng rng(31);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 2; ++k)
      for (int level = 1; level <= 2; ++level) {
        const std::string id = "c" + std::to_string(c);
        const std::string png =
            (dir.path() / (id + "_" + std::to_string(k) + "_" + std::to_string(level) + ".png"))
                .string();
        save_png(random_patch(24, rng.below(1u << 30)), png);
        SampleRecord r;
        r.content_id = id;
        r.spec = {static_cast<DistortionKind>(k), level, 0};
        r.projection_path = png;
        r.pseudo_mos = 100.0 - 20.0 * (level - 1) - 2.0;
        manifest.push_back(std::move(r));
      }

  FoldSplit split;
  split.fold_index = 0;
  split.train_contents = {"c0", "c1"};
  split.test_contents = {"c2"};

  VitConfig vit = tiny_config();
  vit.n_distortion_classes = 7;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.crop_size = 16;
  tc.min_foreground = 0.0;
  tc.seed = 5;

  const TrainResult result = train(manifest, split, vit, tc);
  REQUIRE(result.log.size() == 2);
  for (const EpochLog& e : result.log) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(e.train_loss >= 0.0);
    CHECK(std::isfinite(e.test_srcc));
  }

  // repeatability under the same seed
  const TrainResult again = train(manifest, split, vit, tc);
  CHECK(again.log.back().train_loss == result.log.back().train_loss);
  CHECK(again.log.back().test_srcc == result.log.back().test_srcc);

  const std::string log_path = (dir.path() / "log.csv").string();
  save_epoch_log(result.log, log_path);
  std::ifstream in(log_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,train_loss,test_srcc,test_acc");
  int rows = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
}
