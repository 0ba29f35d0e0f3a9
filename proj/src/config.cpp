#include "dhhqa/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dhhqa {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.contains(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  reject_unknown(j, {"render", "vit", "train", "folds", "pointcloud_samples"}, "top level");
  RunConfig cfg;
  if (j.contains("render")) {
    const json& r = j["render"];
    reject_unknown(r, {"resolution", "background", "fit_margin", "lighting", "light_direction"},
                   "render");
    read(r, "resolution", cfg.render.resolution);
    if (r.contains("background")) {
      const auto bg = r["background"].get<std::vector<int>>();
      if (bg.size() != 3) throw std::invalid_argument("config: background must be [r,g,b]");
      for (int i = 0; i < 3; ++i) cfg.render.background_rgb[i] = static_cast<std::uint8_t>(bg[i]);
    }
    read(r, "fit_margin", cfg.render.fit_margin);
    if (r.contains("lighting")) {
      const std::string mode = r["lighting"].get<std::string>();
      if (mode == "unlit")
        cfg.render.lighting = Lighting::Unlit;
      else if (mode == "lambertian")
        cfg.render.lighting = Lighting::Lambertian;
      else
        throw std::invalid_argument("config: lighting must be 'unlit' or 'lambertian'");
    }
    if (r.contains("light_direction")) {
      const auto ld = r["light_direction"].get<std::vector<double>>();
      if (ld.size() != 3) throw std::invalid_argument("config: light_direction must be [x,y,z]");
      cfg.render.light_direction = {ld[0], ld[1], ld[2]};
    }
  }
  if (j.contains("vit")) {
    const json& v = j["vit"];
    reject_unknown(v,
                   {"image_size", "vit_patch_size", "embed_dim", "n_blocks", "n_heads", "mlp_ratio",
                    "n_distortion_classes", "multitask_enabled", "lambda"},
                   "vit");
    read(v, "image_size", cfg.vit.image_size);
    read(v, "vit_patch_size", cfg.vit.vit_patch_size);
    read(v, "embed_dim", cfg.vit.embed_dim);
    read(v, "n_blocks", cfg.vit.n_blocks);
    read(v, "n_heads", cfg.vit.n_heads);
    read(v, "mlp_ratio", cfg.vit.mlp_ratio);
    read(v, "n_distortion_classes", cfg.vit.n_distortion_classes);
    read(v, "multitask_enabled", cfg.vit.multitask_enabled);
    read(v, "lambda", cfg.vit.lambda);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"learning_rate", "epochs", "batch_size", "beta1", "beta2", "adam_eps", "seed",
                    "crop_size", "min_foreground", "eval_crops"},
                   "train");
    read(t, "learning_rate", cfg.train.learning_rate);
    read(t, "epochs", cfg.train.epochs);
    read(t, "batch_size", cfg.train.batch_size);
    read(t, "beta1", cfg.train.beta1);
    read(t, "beta2", cfg.train.beta2);
    read(t, "adam_eps", cfg.train.adam_eps);
    read(t, "seed", cfg.train.seed);
    read(t, "crop_size", cfg.train.crop_size);
    read(t, "min_foreground", cfg.train.min_foreground);
    read(t, "eval_crops", cfg.train.eval_crops);
  }
  read(j, "folds", cfg.folds);
  read(j, "pointcloud_samples", cfg.pointcloud_samples);
  cfg.render.validate();
  cfg.vit.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json() const {
  json j;
  j["render"] = {{"resolution", render.resolution},
                 {"background", {render.background_rgb[0], render.background_rgb[1], render.background_rgb[2]}},
                 {"fit_margin", render.fit_margin},
                 {"lighting", render.lighting == Lighting::Unlit ? "unlit" : "lambertian"},
                 {"light_direction", {render.light_direction[0], render.light_direction[1], render.light_direction[2]}}};
  j["vit"] = {{"image_size", vit.image_size},
              {"vit_patch_size", vit.vit_patch_size},
              {"embed_dim", vit.embed_dim},
              {"n_blocks", vit.n_blocks},
              {"n_heads", vit.n_heads},
              {"mlp_ratio", vit.mlp_ratio},
              {"n_distortion_classes", vit.n_distortion_classes},
              {"multitask_enabled", vit.multitask_enabled},
              {"lambda", vit.lambda}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_eps", train.adam_eps},
                {"seed", train.seed},
                {"crop_size", train.crop_size},
                {"min_foreground", train.min_foreground},
                {"eval_crops", train.eval_crops}};
  j["folds"] = folds;
  j["pointcloud_samples"] = pointcloud_samples;
  return j.dump(2);
}

void RunConfig::save_snapshot(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config snapshot: " + path);
  out << to_json() << "\n";
}

}  // namespace dhhqa
