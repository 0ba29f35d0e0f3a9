#pragma once

#include <string>

#include "dhhqa/render.hpp"
#include "dhhqa/train.hpp"
#include "dhhqa/vit.hpp"

namespace dhhqa {

// Merged configuration for a pipeline run. Loadable from JSON with strict
// key checking; every run writes the resolved snapshot next to its outputs
// so a run can be reproduced from the snapshot alone.
struct RunConfig {
  RenderConfig render;
  VitConfig vit;
  TrainConfig train;
  int folds = 5;
  std::size_t pointcloud_samples = 200000;

  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json() const;
  void save_snapshot(const std::string& path) const;
};

}  // namespace dhhqa
