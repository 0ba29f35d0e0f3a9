#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhhqa/mesh.hpp"
#include "dhhqa/render.hpp"

namespace dhhqa {

enum class DistortionKind {
  GeometryNoise,
  GeometryShift,
  GeometrySimplify,
  GeometryQuantize,
  TextureDownsample,
  TextureQuantize,
  ColorNoise,
};

inline constexpr int kNumDistortionKinds = 7;
inline constexpr int kNumDistortionLevels = 4;

const char* to_string(DistortionKind k);
DistortionKind distortion_kind_from_string(const std::string& s);

struct DistortionSpec {
  DistortionKind kind;
  int level;  // 1..4
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleRecord {
  std::string content_id;
  DistortionSpec spec;
  std::string projection_path;
  double pseudo_mos = 0.0;  // [0, 100], strictly decreasing in level
};

TexturedMesh apply_distortion(const TexturedMesh& mesh, const DistortionSpec& spec);

struct CorpusConfig {
  RenderConfig render;
  int patch_size = 224;  // recorded for downstream consumers, crops happen at train time
};

// For every content x 7 kinds x 4 levels: distort, render the front
// projection to out_dir/<content_id>/<kind>_<level>.png and emit a record
// with pseudo_mos = 100 - 20*(level-1) - Uniform(0,5).
std::vector<SampleRecord> build_corpus(const std::vector<TexturedMesh>& meshes,
                                       const std::string& out_dir, std::uint64_t seed,
                                       const RenderConfig& render_cfg = RenderConfig{});

// CSV manifest: header `content_id,kind,level,seed,projection_path,mos`
void save_manifest(const std::vector<SampleRecord>& records, const std::string& path);
std::vector<SampleRecord> load_manifest(const std::string& path);

}  // namespace dhhqa
