#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhhqa/distort.hpp"
#include "dhhqa/stats.hpp"
#include "dhhqa/vit.hpp"

namespace dhhqa {

struct TrainConfig {
  double learning_rate = 1e-5;
  int epochs = 50;
  int batch_size = 30;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int crop_size = 224;          // random-crop side in projection pixels
  double min_foreground = 0.5;  // crop rejection threshold
  int eval_crops = 1;           // crops averaged for the per-epoch test metrics
  bool float32_training = true;  // fused 32-bit forward/backward (64-bit master weights)

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double test_srcc = 0.0;
  double test_acc = -1.0;  // -1 when classification is disabled or no test set
};

struct Prediction {
  double quality_score = 0.0;                 // original MOS scale
  std::vector<double> class_probs;            // sums to 1
  int predicted_class = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochLog> log;
};

// Adam over a ParamSet; step() consumes the accumulated grads.
class AdamOptimizer {
 public:
  AdamOptimizer(ParamSet& params, const TrainConfig& cfg);
  void step();

 private:
  ParamSet& params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// One batch through the fused 32-bit forward/backward: returns the joint loss
// and accumulates parameter gradients (as doubles) into `params`. Exposed so
// the fast path can be validated against the reference autograd computation.
double fused_batch_grads(const std::vector<Image>& patches, const std::vector<int>& class_targets,
                         const std::vector<double>& mos01, const VitConfig& cfg, ParamSet& params,
                         double lambda);

// One random crop per row per epoch, Adam on the joint loss, per-epoch
// train loss / test SRCC / test ACC. MOS is scaled to [0,1] internally.
TrainResult train(const std::vector<SampleRecord>& manifest, const FoldSplit& split,
                  const VitConfig& vit_cfg, const TrainConfig& train_cfg);

Prediction predict_image(const Image& projection, const std::vector<std::uint8_t>* mask,
                         const ParamSet& params, const VitConfig& cfg, int k_crops,
                         std::uint64_t seed, int crop_size, double min_foreground = 0.5);
Prediction predict_mesh(const TexturedMesh& mesh, const ParamSet& params, const VitConfig& cfg,
                        const RenderConfig& render_cfg, int k_crops, std::uint64_t seed,
                        int crop_size, double min_foreground = 0.5);

void save_epoch_log(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace dhhqa
