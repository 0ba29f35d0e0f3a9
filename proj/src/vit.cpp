#include "dhhqa/vit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dhhqa/rng.hpp"

namespace dhhqa {

void VitConfig::validate() const {
  if (image_size <= 0 || vit_patch_size <= 0 || image_size % vit_patch_size != 0)
    throw std::invalid_argument("vit: image_size must be a positive multiple of vit_patch_size");
  if (embed_dim <= 0 || n_heads <= 0 || embed_dim % n_heads != 0)
    throw std::invalid_argument("vit: embed_dim must be a positive multiple of n_heads");
  if (n_blocks <= 0 || mlp_ratio <= 0 || n_distortion_classes <= 0)
    throw std::invalid_argument("vit: block, ratio and class counts must be positive");
  if (lambda < 0.0) throw std::invalid_argument("vit: lambda must be >= 0");
}

VitConfig VitConfig::paper_scale() {
  VitConfig cfg;
  cfg.image_size = 224;
  cfg.vit_patch_size = 16;
  cfg.embed_dim = 768;
  cfg.n_blocks = 12;
  cfg.n_heads = 12;
  return cfg;
}

Tensor& ParamSet::get(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return t;
  throw std::invalid_argument("unknown parameter: " + name);
}

const Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw std::invalid_argument("unknown parameter: " + name);
}

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  items.emplace_back(name, std::move(t));
  return items.back().second;
}

void ParamSet::zero_grads() {
  for (auto& [n, t] : items) t.zero_grad();
}

namespace {

// normal(0, sigma) redrawn outside 2 sigma
Tensor trunc_normal(std::vector<std::size_t> shape, double sigma, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) {
    double g = rng.gaussian();
    while (std::abs(g) > 2.0) g = rng.gaussian();
    v = sigma * g;
  }
  return t;
}

Tensor zeros_p(std::vector<std::size_t> shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_p(std::vector<std::size_t> shape) { return Tensor::full(std::move(shape), 1.0, true); }

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for [fan_in, fan_out] weights; a
// global small-sigma normal leaves the network too close to linear and the
// optimizer stalls at these model sizes and epoch budgets
Tensor linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t = Tensor::zeros({fan_in, fan_out}, true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ParamSet init_params(const VitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  constexpr double kSigma = 0.02;
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t pd = static_cast<std::size_t>(cfg.vit_patch_size) * cfg.vit_patch_size * 3;
  const auto tokens = static_cast<std::size_t>(cfg.n_tokens());
  const auto hidden = static_cast<std::size_t>(cfg.mlp_ratio) * d;

  ParamSet p;
  p.add("patch_embed.w", linear_weight(pd, d, rng));
  p.add("patch_embed.b", zeros_p({d}));
  p.add("cls_token", trunc_normal({1, d}, kSigma, rng));
  p.add("pos_embed", trunc_normal({tokens + 1, d}, kSigma, rng));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    p.add(pre + "ln1.gamma", ones_p({d}));
    p.add(pre + "ln1.beta", zeros_p({d}));
    p.add(pre + "qkv.w", linear_weight(d, 3 * d, rng));
    p.add(pre + "qkv.b", zeros_p({3 * d}));
    p.add(pre + "proj.w", linear_weight(d, d, rng));
    p.add(pre + "proj.b", zeros_p({d}));
    p.add(pre + "ln2.gamma", ones_p({d}));
    p.add(pre + "ln2.beta", zeros_p({d}));
    p.add(pre + "mlp1.w", linear_weight(d, hidden, rng));
    p.add(pre + "mlp1.b", zeros_p({hidden}));
    p.add(pre + "mlp2.w", linear_weight(hidden, d, rng));
    p.add(pre + "mlp2.b", zeros_p({d}));
  }
  p.add("ln_final.gamma", ones_p({d}));
  p.add("ln_final.beta", zeros_p({d}));
  p.add("cls_head.w1", linear_weight(d, 128, rng));
  p.add("cls_head.b1", zeros_p({128}));
  p.add("cls_head.w2", linear_weight(128, static_cast<std::size_t>(cfg.n_distortion_classes), rng));
  p.add("cls_head.b2", zeros_p({static_cast<std::size_t>(cfg.n_distortion_classes)}));
  p.add("reg_head.w1", linear_weight(d, 1024, rng));
  p.add("reg_head.b1", zeros_p({1024}));
  p.add("reg_head.w2", linear_weight(1024, 1, rng));
  p.add("reg_head.b2", zeros_p({1}));
  return p;
}

Tensor patch_to_input(const Image& patch) {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(patch.height),
                            static_cast<std::size_t>(patch.width), 3});
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = (patch.pixels[i] / 255.0 - 0.5) / 0.5;
  return t;
}

Image prepare_patch(const Image& patch, const VitConfig& cfg) {
  if (patch.width == cfg.image_size && patch.height == cfg.image_size) return patch;
  return resize_bilinear(patch, cfg.image_size, cfg.image_size);
}

namespace {

// [tokens, patch*patch*3] matrix of flattened, normalized tiles
Tensor patchify(const Image& img, const VitConfig& cfg) {
  const int ps = cfg.vit_patch_size;
  const int grid = cfg.image_size / ps;
  Tensor x = Tensor::zeros({static_cast<std::size_t>(grid) * grid,
                            static_cast<std::size_t>(ps) * ps * 3});
  std::size_t row = 0;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx, ++row) {
      double* dst = x.data().data() + row * static_cast<std::size_t>(ps) * ps * 3;
      for (int y = 0; y < ps; ++y)
        for (int x2 = 0; x2 < ps; ++x2) {
          const std::uint8_t* px = img.at(gx * ps + x2, gy * ps + y);
          for (int c = 0; c < 3; ++c) *dst++ = (px[c] / 255.0 - 0.5) / 0.5;
        }
    }
  return x;
}

Tensor attention(const Tensor& x, const VitConfig& cfg, const ParamSet& p, const std::string& pre) {
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t dh = d / cfg.n_heads;
  const Tensor qkv = add_rowvec(matmul(x, p.get(pre + "qkv.w")), p.get(pre + "qkv.b"));
  const Tensor q = slice_cols(qkv, 0, d);
  const Tensor k = slice_cols(qkv, d, d);
  const Tensor v = slice_cols(qkv, 2 * d, d);
  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax(scores), vh));
  }
  return add_rowvec(matmul(concat_cols(heads), p.get(pre + "proj.w")), p.get(pre + "proj.b"));
}

}  // namespace

Tensor encode(const Image& patch, const VitConfig& cfg, const ParamSet& params) {
  cfg.validate();
  if (patch.width != cfg.image_size || patch.height != cfg.image_size)
    throw std::invalid_argument("encode: patch size does not match config image_size");
  const Tensor tiles = patchify(patch, cfg);
  Tensor x = add_rowvec(matmul(tiles, params.get("patch_embed.w")), params.get("patch_embed.b"));
  x = concat_rows(params.get("cls_token"), x);
  x = add(x, params.get("pos_embed"));
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    const Tensor norm1 = layer_norm(x, params.get(pre + "ln1.gamma"), params.get(pre + "ln1.beta"));
    x = add(x, attention(norm1, cfg, params, pre));
    const Tensor norm2 = layer_norm(x, params.get(pre + "ln2.gamma"), params.get(pre + "ln2.beta"));
    const Tensor hidden = gelu(add_rowvec(matmul(norm2, params.get(pre + "mlp1.w")), params.get(pre + "mlp1.b")));
    x = add(x, add_rowvec(matmul(hidden, params.get(pre + "mlp2.w")), params.get(pre + "mlp2.b")));
  }
  x = layer_norm(x, params.get("ln_final.gamma"), params.get("ln_final.beta"));
  // class token excluded from the pooled embedding
  return mean_axis0(slice_rows(x, 1, cfg.n_tokens()));
}

Tensor classify_head(const Tensor& embedding, const VitConfig& cfg, const ParamSet& params) {
  const Tensor f = reshape(embedding, {1, static_cast<std::size_t>(cfg.embed_dim)});
  const Tensor h = gelu(add_rowvec(matmul(f, params.get("cls_head.w1")), params.get("cls_head.b1")));
  return softmax(add_rowvec(matmul(h, params.get("cls_head.w2")), params.get("cls_head.b2")));
}

Tensor regress_head(const Tensor& embedding, const VitConfig& cfg, const ParamSet& params) {
  const Tensor f = reshape(embedding, {1, static_cast<std::size_t>(cfg.embed_dim)});
  const Tensor h = gelu(add_rowvec(matmul(f, params.get("reg_head.w1")), params.get("reg_head.b1")));
  return add_rowvec(matmul(h, params.get("reg_head.w2")), params.get("reg_head.b2"));
}

Tensor joint_loss(const std::vector<Tensor>& class_probs, const std::vector<int>& class_targets,
                  const std::vector<Tensor>& q_hats, const std::vector<double>& q_targets,
                  double lambda, int n_classes) {
  if (lambda < 0.0) throw std::invalid_argument("joint_loss: lambda must be >= 0");
  const std::size_t ns = q_hats.size();
  if (ns == 0 || q_targets.size() != ns ||
      (lambda > 0.0 && (class_probs.size() != ns || class_targets.size() != ns)))
    throw std::invalid_argument("joint_loss: batch dimensions disagree");

  Tensor total;
  for (std::size_t i = 0; i < ns; ++i) {
    const Tensor qt = Tensor({1, 1}, {q_targets[i]});
    const Tensor dq = sub(q_hats[i], qt);
    Tensor term = sum_all(mul(dq, dq));
    if (lambda > 0.0) {
      std::vector<double> onehot(n_classes, 0.0);
      if (class_targets[i] < 0 || class_targets[i] >= n_classes)
        throw std::invalid_argument("joint_loss: class target out of range");
      onehot[class_targets[i]] = 1.0;
      const Tensor ct = Tensor({1, static_cast<std::size_t>(n_classes)}, std::move(onehot));
      const Tensor dc = sub(class_probs[i], ct);
      term = add(term, scale(sum_all(mul(dc, dc)), lambda));
    }
    total = (i == 0) ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(ns));
}

void save_checkpoint(const std::string& path, const VitConfig& cfg, ParamSet& params) {
  nlohmann::json header;
  header["format"] = "dhhqa-ckpt-v1";
  header["config"] = {{"image_size", cfg.image_size},
                      {"vit_patch_size", cfg.vit_patch_size},
                      {"embed_dim", cfg.embed_dim},
                      {"n_blocks", cfg.n_blocks},
                      {"n_heads", cfg.n_heads},
                      {"mlp_ratio", cfg.mlp_ratio},
                      {"n_distortion_classes", cfg.n_distortion_classes},
                      {"multitask_enabled", cfg.multitask_enabled},
                      {"lambda", cfg.lambda}};
  auto& plist = header["params"] = nlohmann::json::array();
  for (auto& [name, t] : params.items)
    plist.push_back({{"name", name}, {"shape", t.shape()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const std::string htext = header.dump();
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(hlen));
  for (auto& [name, t] : params.items) {
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      buf[i] = static_cast<float>(t.data()[i]);
      t.data()[i] = buf[i];  // canonicalize live params to the stored precision
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

std::pair<VitConfig, ParamSet> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  in.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen > file_size - 8)
    throw std::runtime_error("corrupt checkpoint header in " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(htext, nullptr, false);
  if (header.is_discarded())
    throw std::runtime_error("corrupt checkpoint header in " + path);
  if (header.at("format") != "dhhqa-ckpt-v1")
    throw std::runtime_error("unrecognized checkpoint format in " + path);
  const auto& jc = header.at("config");
  VitConfig cfg;
  cfg.image_size = jc.at("image_size");
  cfg.vit_patch_size = jc.at("vit_patch_size");
  cfg.embed_dim = jc.at("embed_dim");
  cfg.n_blocks = jc.at("n_blocks");
  cfg.n_heads = jc.at("n_heads");
  cfg.mlp_ratio = jc.at("mlp_ratio");
  cfg.n_distortion_classes = jc.at("n_distortion_classes");
  cfg.multitask_enabled = jc.at("multitask_enabled");
  cfg.lambda = jc.at("lambda");
  cfg.validate();

  ParamSet params;
  for (const auto& jp : header.at("params")) {
    std::vector<std::size_t> shape = jp.at("shape").get<std::vector<std::size_t>>();
    Tensor t = Tensor::zeros(shape, true);
    std::vector<float> buf(t.numel());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    for (std::size_t i = 0; i < buf.size(); ++i) t.data()[i] = buf[i];
    params.add(jp.at("name").get<std::string>(), std::move(t));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return {cfg, std::move(params)};
}

}  // namespace dhhqa
