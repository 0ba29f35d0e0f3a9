#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dhhqa/config.hpp"
#include "dhhqa/distort.hpp"
#include "dhhqa/mesh.hpp"
#include "dhhqa/pcq_metrics.hpp"
#include "dhhqa/render.hpp"
#include "dhhqa/rng.hpp"
#include "dhhqa/stats.hpp"
#include "dhhqa/train.hpp"
#include "dhhqa/vit.hpp"

namespace py = pybind11;
using namespace dhhqa;

namespace {

py::array_t<std::uint8_t> image_to_numpy(const Image& img) {
  py::array_t<std::uint8_t> arr({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), arr.mutable_data());
  return arr;
}

Image numpy_to_image(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3 || arr.shape(2) != 3)
    throw std::invalid_argument("expected an (H, W, 3) uint8 array");
  Image img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(0)));
  std::copy(arr.data(), arr.data() + arr.size(), img.pixels.begin());
  return img;
}

py::array_t<double> points_to_numpy(const std::vector<Vec3>& pts) {
  py::array_t<double> arr({static_cast<py::ssize_t>(pts.size()), static_cast<py::ssize_t>(3)});
  double* out = arr.mutable_data();
  for (const Vec3& p : pts) {
    *out++ = p[0];
    *out++ = p[1];
    *out++ = p[2];
  }
  return arr;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Digital-human-head quality assessment core";

  py::class_<TexturedMesh>(m, "TexturedMesh")
      .def_readwrite("name", &TexturedMesh::name)
      .def_property_readonly("n_vertices", [](const TexturedMesh& t) { return t.vertices.size(); })
      .def_property_readonly("n_faces", [](const TexturedMesh& t) { return t.faces.size(); })
      .def_property_readonly("vertices", [](const TexturedMesh& t) { return points_to_numpy(t.vertices); })
      .def_property_readonly("texture", [](const TexturedMesh& t) { return image_to_numpy(t.texture); })
      .def("bbox_diagonal", &TexturedMesh::bbox_diagonal);

  py::class_<ColoredPointCloud>(m, "ColoredPointCloud")
      .def_property_readonly("points", [](const ColoredPointCloud& c) { return points_to_numpy(c.points); })
      .def_property_readonly("normals", [](const ColoredPointCloud& c) { return points_to_numpy(c.normals); })
      .def_property_readonly("colors",
                             [](const ColoredPointCloud& c) {
                               py::array_t<std::uint8_t> arr(
                                   {static_cast<py::ssize_t>(c.colors.size()), static_cast<py::ssize_t>(3)});
                               std::uint8_t* out = arr.mutable_data();
                               for (const auto& rgb : c.colors)
                                 out = std::copy(rgb.begin(), rgb.end(), out);
                               return arr;
                             })
      .def("__len__", &ColoredPointCloud::size);

  m.def("load_mesh", &load_mesh, py::arg("path"));
  m.def("save_mesh", &save_mesh, py::arg("mesh"), py::arg("obj_path"));
  m.def("geometric_center", [](const TexturedMesh& mesh) {
    const Vec3 c = geometric_center(mesh);
    return py::make_tuple(c[0], c[1], c[2]);
  });
  m.def("estimate_normals", &estimate_normals, py::arg("mesh"));
  m.def("mesh_to_pointcloud", &mesh_to_pointcloud, py::arg("mesh"), py::arg("n_samples"),
        py::arg("seed"));

  m.def(
      "render_front",
      [](const TexturedMesh& mesh, int resolution, double fit_margin) {
        RenderConfig cfg;
        cfg.resolution = resolution;
        cfg.fit_margin = fit_margin;
        const ProjectionImage proj = render_front(mesh, cfg);
        py::array_t<std::uint8_t> mask({proj.height(), proj.width()});
        std::copy(proj.background_mask.begin(), proj.background_mask.end(), mask.mutable_data());
        return py::make_tuple(image_to_numpy(proj.image), mask);
      },
      py::arg("mesh"), py::arg("resolution") = 1080, py::arg("fit_margin") = 0.05,
      "Front orthographic projection; returns (image, foreground_mask)");

  m.def(
      "crop_patches",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& img, int k,
         int patch_size, std::uint64_t seed, double min_foreground) {
        ProjectionImage proj;
        proj.image = numpy_to_image(img);
        proj.background_mask.assign(proj.image.pixels.size() / 3, 1);
        py::list out;
        for (const Patch& p : crop_patches(proj, k, patch_size, seed, min_foreground))
          out.append(py::make_tuple(image_to_numpy(p.pixels), p.crop_x, p.crop_y));
        return out;
      },
      py::arg("image"), py::arg("k"), py::arg("patch_size"), py::arg("seed"),
      py::arg("min_foreground") = 0.0);

  m.def(
      "apply_distortion",
      [](const TexturedMesh& mesh, const std::string& kind, int level, std::uint64_t seed) {
        return apply_distortion(mesh, {distortion_kind_from_string(kind), level, seed});
      },
      py::arg("mesh"), py::arg("kind"), py::arg("level"), py::arg("seed") = 0);
  m.attr("DISTORTION_KINDS") = [] {
    py::list kinds;
    for (int i = 0; i < kNumDistortionKinds; ++i)
      kinds.append(std::string(to_string(static_cast<DistortionKind>(i))));
    return kinds;
  }();

  const auto score_to_dict = [](const FrScore& s) {
    py::dict d;
    d["metric"] = to_string(s.metric);
    d["value"] = s.value;
    d["direction"] = to_string(s.direction);
    d["infinite"] = s.infinite;
    return d;
  };
  m.def(
      "p2point_mse",
      [score_to_dict](const ColoredPointCloud& a, const ColoredPointCloud& b) {
        return score_to_dict(p2point_mse(a, b));
      },
      py::arg("ref"), py::arg("dist"));
  m.def(
      "p2plane_mse",
      [score_to_dict](const ColoredPointCloud& a, const ColoredPointCloud& b) {
        return score_to_dict(p2plane_mse(a, b));
      },
      py::arg("ref"), py::arg("dist"));
  m.def(
      "psnr_yuv",
      [score_to_dict](const ColoredPointCloud& a, const ColoredPointCloud& b) {
        return score_to_dict(psnr_yuv(a, b));
      },
      py::arg("ref"), py::arg("dist"));

  m.def("srcc", &srcc);
  m.def("plcc", &plcc);
  m.def("krcc", &krcc);
  m.def("rmse", &rmse);
  m.def("accuracy", &accuracy);
  m.def(
      "make_folds",
      [](const std::vector<std::string>& contents, int k, std::uint64_t seed) {
        py::list out;
        for (const FoldSplit& f : make_folds(contents, k, seed))
          out.append(py::make_tuple(f.fold_index, f.train_contents, f.test_contents));
        return out;
      },
      py::arg("contents"), py::arg("k") = 5, py::arg("seed") = 0);

  m.def(
      "build_corpus",
      [](const std::vector<std::string>& mesh_paths, const std::string& out_dir,
         std::uint64_t seed, int resolution) {
        std::vector<TexturedMesh> meshes;
        for (const auto& p : mesh_paths) meshes.push_back(load_mesh(p));
        RenderConfig rc;
        rc.resolution = resolution;
        const auto records = build_corpus(meshes, out_dir, seed, rc);
        save_manifest(records, out_dir + "/manifest.csv");
        return records.size();
      },
      py::arg("mesh_paths"), py::arg("out_dir"), py::arg("seed"), py::arg("resolution") = 256);

  m.def(
      "train_fold",
      [](const std::string& manifest_path, int fold_index, const std::string& config_json,
         const std::string& ckpt_out) {
        const RunConfig cfg =
            config_json.empty() ? RunConfig{} : RunConfig::from_json_text(config_json);
        const auto manifest = load_manifest(manifest_path);
        std::vector<std::string> contents;
        for (const auto& r : manifest)
          if (std::find(contents.begin(), contents.end(), r.content_id) == contents.end())
            contents.push_back(r.content_id);
        const auto folds = make_folds(contents, cfg.folds, derive_seed(cfg.train.seed, "folds"));
        TrainResult result = train(manifest, folds.at(fold_index), cfg.vit, cfg.train);
        VitConfig vit_cfg = cfg.vit;
        if (!ckpt_out.empty()) save_checkpoint(ckpt_out, vit_cfg, result.params);
        py::list log;
        for (const EpochLog& e : result.log)
          log.append(py::make_tuple(e.epoch, e.train_loss, e.test_srcc, e.test_acc));
        return log;
      },
      py::arg("manifest_path"), py::arg("fold_index"), py::arg("config_json") = "",
      py::arg("ckpt_out") = "");

  m.def(
      "predict",
      [](const std::string& ckpt_path, const std::string& mesh_path, int k_crops,
         std::uint64_t seed, int crop_size) {
        auto [cfg, params] = load_checkpoint(ckpt_path);
        const Prediction pr = predict_mesh(load_mesh(mesh_path), params, cfg, RenderConfig{},
                                           k_crops, seed, crop_size);
        py::dict d;
        d["quality_score"] = pr.quality_score;
        d["class_probs"] = pr.class_probs;
        d["predicted_class"] = to_string(static_cast<DistortionKind>(pr.predicted_class));
        return d;
      },
      py::arg("ckpt_path"), py::arg("mesh_path"), py::arg("k_crops") = 5, py::arg("seed") = 0,
      py::arg("crop_size") = 224);
}
