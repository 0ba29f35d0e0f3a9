#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhhqa/image.hpp"
#include "dhhqa/tensor.hpp"

namespace dhhqa {

struct VitConfig {
  int image_size = 64;
  int vit_patch_size = 8;
  int embed_dim = 96;
  int n_blocks = 4;
  int n_heads = 4;
  int mlp_ratio = 4;
  int n_distortion_classes = 7;
  bool multitask_enabled = true;
  double lambda = 1.0;

  int n_tokens() const { return (image_size / vit_patch_size) * (image_size / vit_patch_size); }
  void validate() const;

  // 224/16, 12 blocks, dim 768 -- the full-size backbone layout
  static VitConfig paper_scale();
};

// Named, ordered parameter collection. Order is the checkpoint layout.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  Tensor& add(const std::string& name, Tensor t);
  void zero_grads();
};

// truncated-normal(0.02) weights, zero biases, unit layer-norm gains
ParamSet init_params(const VitConfig& cfg, std::uint64_t seed);

// Patch pixels scaled to [0,1] then normalized by mean/std 0.5/0.5. The
// patch must already have side cfg.image_size (see prepare_patch).
Tensor patch_to_input(const Image& patch);
Image prepare_patch(const Image& patch, const VitConfig& cfg);  // bilinear resize

// Transformer encoder; returns the average-pooled embedding over the patch
// tokens (class token excluded), shape [embed_dim].
Tensor encode(const Image& patch, const VitConfig& cfg, const ParamSet& params);

// dense(embed->128) -> gelu -> dense(128->N_d) -> softmax, shape [1, N_d]
Tensor classify_head(const Tensor& embedding, const VitConfig& cfg, const ParamSet& params);
// dense(embed->1024) -> gelu -> dense(1024->1), no output activation
Tensor regress_head(const Tensor& embedding, const VitConfig& cfg, const ParamSet& params);

// (1/Ns) sum_i (lambda * ||c_hat_i - c_i||^2 + (q_hat_i - q_i)^2);
// class_probs are [1, N_d] rows, targets one-hot indices
Tensor joint_loss(const std::vector<Tensor>& class_probs, const std::vector<int>& class_targets,
                  const std::vector<Tensor>& q_hats, const std::vector<double>& q_targets,
                  double lambda, int n_classes);

// JSON header (u64 byte length prefix) followed by one little-endian
// float32 payload per parameter in header order. Saving rounds the live
// parameters to float32 so a reloaded checkpoint predicts identically.
void save_checkpoint(const std::string& path, const VitConfig& cfg, ParamSet& params);
std::pair<VitConfig, ParamSet> load_checkpoint(const std::string& path);

}  // namespace dhhqa
