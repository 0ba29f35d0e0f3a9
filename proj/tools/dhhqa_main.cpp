#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dhhqa/config.hpp"
#include "dhhqa/distort.hpp"
#include "dhhqa/mesh.hpp"
#include "dhhqa/pcq_metrics.hpp"
#include "dhhqa/render.hpp"
#include "dhhqa/rng.hpp"
#include "dhhqa/stats.hpp"
#include "dhhqa/train.hpp"
#include "dhhqa/vit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dhhqa;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const CommonOpts& common) {
  RunConfig cfg = common.config_path.empty() ? RunConfig{} : RunConfig::from_json_file(common.config_path);
  if (common.seed_set) cfg.train.seed = common.seed;
  return cfg;
}

std::vector<TexturedMesh> load_mesh_dir(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".obj") paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<TexturedMesh> meshes;
  meshes.reserve(paths.size());
  for (const auto& p : paths) meshes.push_back(load_mesh(p));
  return meshes;
}

struct PredRow {
  std::string content_id;
  std::string kind;
  int level;
  double pred_mos;
  std::string pred_kind;
  double mos;
  std::string true_kind;
};

std::vector<PredRow> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "content_id,kind,level,pred_mos,pred_kind,mos,true_kind")
    throw std::runtime_error("predictions file missing expected header: " + path);
  std::vector<PredRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 7) throw std::runtime_error("predictions row with wrong field count: " + line);
    rows.push_back({f[0], f[1], std::stoi(f[2]), std::stod(f[3]), f[4], std::stod(f[5]), f[6]});
  }
  if (rows.empty()) throw std::runtime_error("predictions file is empty: " + path);
  return rows;
}

MetricsReport evaluate_predictions(const std::vector<PredRow>& rows) {
  std::vector<double> pred, truth;
  std::vector<int> pred_cls, true_cls;
  bool have_cls = true;
  for (const PredRow& r : rows) {
    pred.push_back(r.pred_mos);
    truth.push_back(r.mos);
    if (r.pred_kind.empty()) {
      have_cls = false;
    } else {
      pred_cls.push_back(static_cast<int>(distortion_kind_from_string(r.pred_kind)));
      true_cls.push_back(static_cast<int>(distortion_kind_from_string(r.true_kind)));
    }
  }
  return evaluate(pred, truth, have_cls ? &pred_cls : nullptr, have_cls ? &true_cls : nullptr);
}

void write_predictions(const std::string& path, const std::vector<PredRow>& rows) {
  std::ofstream out(path);
  out << "content_id,kind,level,pred_mos,pred_kind,mos,true_kind\n";
  char buf[64];
  for (const PredRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.pred_mos);
    out << r.content_id << ',' << r.kind << ',' << r.level << ',' << buf << ',' << r.pred_kind << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.mos);
    out << buf << ',' << r.true_kind << "\n";
  }
}

// one training run over one fold; returns the per-fold report
MetricsReport run_fold(const std::vector<SampleRecord>& manifest, const FoldSplit& split,
                       const RunConfig& cfg, const std::string& out_dir) {
  TrainResult result = train(manifest, split, cfg.vit, cfg.train);
  const std::string tag = "fold" + std::to_string(split.fold_index);
  fs::create_directories(out_dir);
  save_checkpoint((fs::path(out_dir) / (tag + ".ckpt")).string(), cfg.vit, result.params);
  save_epoch_log(result.log, (fs::path(out_dir) / (tag + "_log.csv")).string());

  std::vector<PredRow> rows;
  for (const SampleRecord& rec : manifest) {
    if (std::find(split.test_contents.begin(), split.test_contents.end(), rec.content_id) ==
        split.test_contents.end())
      continue;
    const Image proj = load_image(rec.projection_path);
    const Prediction pr = predict_image(
        proj, nullptr, result.params, cfg.vit, 5,
        derive_seed(cfg.train.seed, "predict/" + rec.projection_path), cfg.train.crop_size,
        cfg.train.min_foreground);
    const bool mt = cfg.vit.multitask_enabled;
    rows.push_back({rec.content_id, to_string(rec.spec.kind), rec.spec.level, pr.quality_score,
                    mt ? to_string(static_cast<DistortionKind>(pr.predicted_class)) : "",
                    rec.pseudo_mos, mt ? to_string(rec.spec.kind) : ""});
  }
  write_predictions((fs::path(out_dir) / (tag + "_pred.csv")).string(), rows);
  MetricsReport report = evaluate_predictions(rows);
  report.fold_index = split.fold_index;
  std::ofstream((fs::path(out_dir) / (tag + "_report.json")).string()) << report.to_json() << "\n";
  return report;
}

void print_report_table(const std::vector<MetricsReport>& reports, std::ostream& os,
                        bool as_csv) {
  const bool any_acc = std::any_of(reports.begin(), reports.end(),
                                   [](const MetricsReport& r) { return r.acc.has_value(); });
  if (as_csv) {
    os << "method,srcc,plcc,krcc,rmse" << (any_acc ? ",acc" : "") << "\n";
    for (const auto& r : reports) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f", r.label.c_str(), r.srcc, r.plcc,
                    r.krcc, r.rmse);
      os << buf;
      if (any_acc) {
        if (r.acc)
          os << ',' << r.acc.value();
        else
          os << ",-";
      }
      os << "\n";
    }
    return;
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %10s", "Method", "SRCC", "PLCC", "KRCC", "RMSE");
  os << buf << (any_acc ? "      ACC" : "") << "\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-24s %8.4f %8.4f %8.4f %10.4f", r.label.c_str(), r.srcc,
                  r.plcc, r.krcc, r.rmse);
    os << buf;
    if (any_acc) {
      if (r.acc) {
        std::snprintf(buf, sizeof buf, "   %6.4f", *r.acc);
        os << buf;
      } else {
        os << "        -";
      }
    }
    os << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital-human-head quality assessment toolkit"};
  app.require_subcommand(1);
  CommonOpts common;

  // ---- render ----
  auto* cmd_render = app.add_subcommand("render", "Render the front projection of a mesh");
  std::string r_mesh, r_out, r_patches_dir, r_bg = "0,0,0", r_lighting = "unlit";
  int r_resolution = 1080, r_patch_size = 224, r_crops = 0;
  double r_margin = 0.05;
  std::uint64_t r_seed = 0;
  cmd_render->add_option("--mesh", r_mesh, "input .obj bundle")->required();
  cmd_render->add_option("--out", r_out, "output PNG")->required();
  cmd_render->add_option("--resolution", r_resolution, "square output resolution");
  cmd_render->add_option("--bg", r_bg, "background color r,g,b");
  cmd_render->add_option("--margin", r_margin, "fit margin fraction");
  cmd_render->add_option("--lighting", r_lighting, "unlit | lambertian");
  cmd_render->add_option("--patch-size", r_patch_size, "patch side in pixels");
  cmd_render->add_option("--crops", r_crops, "also save this many random patches");
  cmd_render->add_option("--patches-dir", r_patches_dir, "directory for saved patches");
  cmd_render->add_option("--seed", r_seed, "crop seed");

  // ---- distort ----
  auto* cmd_distort = app.add_subcommand("distort", "Apply one distortion to a mesh");
  std::string d_mesh, d_out, d_kind;
  int d_level = 1;
  std::uint64_t d_seed = 0;
  cmd_distort->add_option("--mesh", d_mesh)->required();
  cmd_distort->add_option("--out", d_out, "output .obj path")->required();
  cmd_distort->add_option("--kind", d_kind, "distortion kind name")->required();
  cmd_distort->add_option("--level", d_level, "severity 1..4")->required();
  cmd_distort->add_option("--seed", d_seed);

  // ---- dataset ----
  auto* cmd_dataset = app.add_subcommand("dataset", "Synthesize a labeled distortion corpus");
  std::string ds_meshes, ds_out;
  std::uint64_t ds_seed = 0;
  cmd_dataset->add_option("--meshes", ds_meshes, "directory of .obj bundles")->required();
  cmd_dataset->add_option("--out", ds_out, "corpus output directory")->required();
  cmd_dataset->add_option("--seed", ds_seed)->required();
  cmd_dataset->add_option("--config", common.config_path, "run config JSON");

  // ---- frmetric ----
  auto* cmd_fr = app.add_subcommand("frmetric", "Full-reference point-cloud metrics");
  std::string fr_ref, fr_dist, fr_metric = "all";
  std::size_t fr_samples = 200000;
  std::uint64_t fr_seed = 0;
  cmd_fr->add_option("--ref", fr_ref, "reference mesh")->required();
  cmd_fr->add_option("--dist", fr_dist, "distorted mesh")->required();
  cmd_fr->add_option("--samples", fr_samples, "points sampled per mesh");
  cmd_fr->add_option("--seed", fr_seed);
  cmd_fr->add_option("--metric", fr_metric, "p2point | p2plane | psnryuv | all");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "Train the quality model on a manifest");
  std::string t_manifest, t_fold = "0", t_out = "ckpt";
  cmd_train->add_option("--manifest", t_manifest)->required();
  cmd_train->add_option("--fold", t_fold, "fold index or 'all'");
  cmd_train->add_option("--config", common.config_path, "run config JSON");
  cmd_train->add_option("--out", t_out, "output directory");
  cmd_train->add_option("--seed", common.seed)->each([&](const std::string&) { common.seed_set = true; });

  // ---- eval ----
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a predictions CSV");
  std::string e_pred, e_out;
  cmd_eval->add_option("--pred", e_pred, "predictions CSV")->required();
  cmd_eval->add_option("--out", e_out, "write report JSON here (default stdout)");

  // ---- predict ----
  auto* cmd_predict = app.add_subcommand("predict", "Score one mesh or projection");
  std::string p_ckpt, p_mesh, p_image;
  int p_crops = 5;
  std::uint64_t p_seed = 0;
  cmd_predict->add_option("--ckpt", p_ckpt)->required();
  cmd_predict->add_option("--mesh", p_mesh, "textured mesh input");
  cmd_predict->add_option("--image", p_image, "pre-rendered projection input");
  cmd_predict->add_option("--crops", p_crops, "patches averaged");
  cmd_predict->add_option("--seed", p_seed);
  cmd_predict->add_option("--config", common.config_path, "run config JSON");

  // ---- report ----
  auto* cmd_report = app.add_subcommand("report", "Comparison table from report JSONs");
  std::vector<std::string> rep_runs;
  std::string rep_csv;
  cmd_report->add_option("--runs", rep_runs, "report JSON files")->required()->expected(-1);
  cmd_report->add_option("--csv", rep_csv, "also write CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_render) {
      RenderConfig rc;
      rc.resolution = r_resolution;
      rc.fit_margin = r_margin;
      int r, g, b;
      if (std::sscanf(r_bg.c_str(), "%d,%d,%d", &r, &g, &b) != 3)
        throw std::invalid_argument("--bg expects r,g,b");
      rc.background_rgb = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                           static_cast<std::uint8_t>(b)};
      if (r_lighting == "lambertian")
        rc.lighting = Lighting::Lambertian;
      else if (r_lighting != "unlit")
        throw std::invalid_argument("--lighting expects unlit or lambertian");
      const ProjectionImage proj = render_front(load_mesh(r_mesh), rc);
      save_png(proj.image, r_out);
      if (r_crops > 0) {
        const std::string dir = r_patches_dir.empty() ? fs::path(r_out).parent_path().string() : r_patches_dir;
        fs::create_directories(dir.empty() ? "." : dir);
        const auto patches = crop_patches(proj, r_crops, r_patch_size, r_seed);
        for (std::size_t i = 0; i < patches.size(); ++i)
          save_png(patches[i].pixels,
                   (fs::path(dir.empty() ? "." : dir) / ("patch_" + std::to_string(i) + ".png")).string());
      }
    } else if (*cmd_distort) {
      DistortionSpec spec{distortion_kind_from_string(d_kind), d_level, d_seed};
      const TexturedMesh out = apply_distortion(load_mesh(d_mesh), spec);
      fs::create_directories(fs::path(d_out).parent_path().empty() ? "." : fs::path(d_out).parent_path().string());
      save_mesh(out, d_out);
    } else if (*cmd_dataset) {
      const RunConfig cfg = resolve_config(common);
      const auto meshes = load_mesh_dir(ds_meshes);
      fs::create_directories(ds_out);
      const auto records = build_corpus(meshes, ds_out, ds_seed, cfg.render);
      save_manifest(records, (fs::path(ds_out) / "manifest.csv").string());
      cfg.save_snapshot((fs::path(ds_out) / "run_config.json").string());
      std::cout << records.size() << " records written to " << ds_out << "\n";
    } else if (*cmd_fr) {
      const TexturedMesh ref = load_mesh(fr_ref);
      const TexturedMesh dist = load_mesh(fr_dist);
      const auto ref_pc = mesh_to_pointcloud(ref, fr_samples, derive_seed(fr_seed, "ref"));
      const auto dist_pc = mesh_to_pointcloud(dist, fr_samples, derive_seed(fr_seed, "dist"));
      json out;
      const auto emit = [&](const FrScore& s) {
        out[to_string(s.metric)] = {{"value", s.infinite ? json("inf") : json(s.value)},
                                    {"direction", to_string(s.direction)},
                                    {"infinite", s.infinite}};
      };
      if (fr_metric == "p2point" || fr_metric == "all") emit(p2point_mse(ref_pc, dist_pc));
      if (fr_metric == "p2plane" || fr_metric == "all") emit(p2plane_mse(ref_pc, dist_pc));
      if (fr_metric == "psnryuv" || fr_metric == "all") emit(psnr_yuv(ref_pc, dist_pc));
      if (out.empty()) throw std::invalid_argument("unknown metric: " + fr_metric);
      std::cout << out.dump(2) << "\n";
    } else if (*cmd_train) {
      const RunConfig cfg = resolve_config(common);
      const auto manifest = load_manifest(t_manifest);
      std::vector<std::string> contents;
      for (const auto& r : manifest)
        if (std::find(contents.begin(), contents.end(), r.content_id) == contents.end())
          contents.push_back(r.content_id);
      const auto folds = make_folds(contents, cfg.folds, derive_seed(cfg.train.seed, "folds"));
      fs::create_directories(t_out);
      cfg.save_snapshot((fs::path(t_out) / "run_config.json").string());
      std::vector<MetricsReport> reports;
      if (t_fold == "all") {
        for (const auto& split : folds) reports.push_back(run_fold(manifest, split, cfg, t_out));
        MetricsReport mean = aggregate(reports);
        std::ofstream((fs::path(t_out) / "mean_report.json").string()) << mean.to_json() << "\n";
        std::cout << mean.to_json() << "\n";
      } else {
        const int fi = std::stoi(t_fold);
        if (fi < 0 || fi >= static_cast<int>(folds.size()))
          throw std::invalid_argument("fold index out of range");
        std::cout << run_fold(manifest, folds[fi], cfg, t_out).to_json() << "\n";
      }
    } else if (*cmd_eval) {
      const MetricsReport report = evaluate_predictions(load_predictions(e_pred));
      if (e_out.empty())
        std::cout << report.to_json() << "\n";
      else
        std::ofstream(e_out) << report.to_json() << "\n";
    } else if (*cmd_predict) {
      auto [cfg, params] = load_checkpoint(p_ckpt);
      const RunConfig run_cfg = resolve_config(common);
      Prediction pr;
      if (!p_mesh.empty())
        pr = predict_mesh(load_mesh(p_mesh), params, cfg, run_cfg.render, p_crops, p_seed,
                          run_cfg.train.crop_size, run_cfg.train.min_foreground);
      else if (!p_image.empty())
        pr = predict_image(load_image(p_image), nullptr, params, cfg, p_crops, p_seed,
                           run_cfg.train.crop_size, run_cfg.train.min_foreground);
      else
        throw std::invalid_argument("predict: provide --mesh or --image");
      json out;
      out["quality_score"] = pr.quality_score;
      out["class_probs"] = pr.class_probs;
      out["predicted_class"] = to_string(static_cast<DistortionKind>(pr.predicted_class));
      std::cout << out.dump(2) << "\n";
    } else if (*cmd_report) {
      std::vector<MetricsReport> reports;
      for (const auto& path : rep_runs) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open report: " + path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        MetricsReport r = MetricsReport::from_json(text);
        if (r.label.empty()) r.label = fs::path(path).stem().string();
        reports.push_back(std::move(r));
      }
      print_report_table(reports, std::cout, false);
      if (!rep_csv.empty()) {
        std::ofstream csv(rep_csv);
        print_report_table(reports, csv, true);
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << app.get_subcommands().front()->get_name() << ": " << msg << "\n";
    return 1;
  }
  return 0;
}
