/*
 * Copyright 2026 The meshcorr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "meshcorr/checkpoint.hpp"
#include "meshcorr/correction.hpp"
#include "meshcorr/dataset.hpp"
#include "meshcorr/groundtruth.hpp"
#include "meshcorr/rasterizer.hpp"
#include "meshcorr/scene_model.hpp"
#include "meshcorr/synthetic.hpp"
#include "meshcorr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meshcorr;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kOther = 1, kUsage = 2, kFormat = 3, kNumerical = 4 };

/// Bad flags, config keys or option values.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buffer(1 << 16);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    EVP_DigestUpdate(ctx, buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

/// Relative path and digest of every regular file under `root`, sorted.
json hash_tree(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  json out = json::array();
  for (const auto& f : files) out.push_back({{"path", f.generic_string()}, {"sha256", sha256_file(root / f)}});
  return out;
}

json hash_input(const fs::path& path) {
  if (fs::is_directory(path)) return {{"path", path.generic_string()}, {"files", hash_tree(path)}};
  return {{"path", path.generic_string()}, {"sha256", sha256_file(path)}};
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// Flat key=value file; '#' starts a comment, blank lines are skipped.
std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key=value");
    }
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    if (key.empty()) throw UsageError(path.string() + ":" + std::to_string(n) + ": empty key");
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

/// One subcommand: its options, their current values for the manifest,
/// the inputs to hash, and the action writing into a staging directory.
struct Command {
  CLI::App* app = nullptr;
  std::vector<std::pair<std::string, std::function<json()>>> values;
  std::vector<std::string> input_keys;
  std::string out;
  std::string config;
  std::function<void(const fs::path& staging)> run;

  template <class T>
  CLI::Option* option(const std::string& key, T& var, const std::string& help) {
    values.emplace_back(key, [&var] { return json(var); });
    CLI::Option* opt = app->add_option("--" + key, var, help);
    if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      opt->delimiter(',');
    } else {
      opt->capture_default_str();
    }
    return opt;
  }

  CLI::Option* flag(const std::string& key, bool& var, const std::string& help) {
    values.emplace_back(key, [&var] { return json(var); });
    return app->add_flag("--" + key, var, help);
  }

  /// A path option whose contents are hashed into the run manifest.
  template <class T>
  CLI::Option* input(const std::string& key, T& var, const std::string& help) {
    input_keys.push_back(key);
    return option(key, var, help)->required();
  }

  json config_json() const {
    json j = json::object();
    for (const auto& [key, get] : values) j[key] = get();
    return j;
  }

  std::vector<fs::path> input_paths() const {
    std::vector<fs::path> out_paths;
    const json cfg = config_json();
    for (const auto& key : input_keys) {
      const json& v = cfg.at(key);
      if (v.is_array()) {
        for (const auto& p : v) out_paths.emplace_back(p.get<std::string>());
      } else if (!v.get<std::string>().empty()) {
        out_paths.emplace_back(v.get<std::string>());
      }
    }
    return out_paths;
  }
};

// ------------------------------------------------------------------ loading

std::vector<Sample> load_samples(const std::vector<std::string>& feature_dirs, const std::vector<std::string>& gt_dirs) {
  if (feature_dirs.size() != gt_dirs.size()) {
    throw UsageError("--features and --gt need the same number of directories");
  }
  std::vector<Sample> out;
  for (std::size_t i = 0; i < feature_dirs.size(); ++i) {
    const auto features = list_frames(feature_dirs[i]);
    const auto targets = list_frames(gt_dirs[i]);
    if (features.size() != targets.size()) {
      throw FormatError(feature_dirs[i] + " and " + gt_dirs[i] + " hold different frame counts");
    }
    for (std::size_t f = 0; f < features.size(); ++f) {
      if (features[f].first != targets[f].first) {
        throw FormatError(gt_dirs[i] + " has no frame " + std::to_string(features[f].first));
      }
      Sample s{load_features(features[f].second), load_errors(targets[f].second), features[f].first,
               fs::path(feature_dirs[i]).lexically_normal().generic_string()};
      s.validate();
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Feature frames with empty targets, for prediction only.
std::vector<Sample> load_unlabelled(const std::string& feature_dir) {
  std::vector<Sample> out;
  for (const auto& [frame, dir] : list_frames(feature_dir)) {
    FeatureImageSet f = load_features(dir);
    ErrorImage e = ErrorImage::zeros(f.width, f.height);
    out.push_back({std::move(f), std::move(e), frame, feature_dir});
  }
  return out;
}

struct TrainOptions {
  std::string select = "all";
  TrainConfig cfg;

  void add_to(Command& c) {
    c.option("select", select, "comma-separated features, or 'all'");
    c.option("batch-size", cfg.batch_size, "mini-batch size");
    c.option("phase1-lr", cfg.phase1.learning_rate, "phase-1 learning rate");
    c.option("phase1-epochs", cfg.phase1.epochs, "phase-1 epochs");
    c.option("phase2-lr", cfg.phase2.learning_rate, "phase-2 learning rate");
    c.option("phase2-epochs", cfg.phase2.epochs, "phase-2 epochs");
    c.option("weight-decay", cfg.weight_decay, "decoupled weight decay per step");
    c.option("crop-height", cfg.crop_height, "training crop height (multiple of 32)");
    c.option("crop-width", cfg.crop_width, "training crop width (multiple of 32)");
    c.option("seed", cfg.seed, "initialisation and shuffling seed");
  }

  FeatureSelection selection() const {
    try {
      return select == "all" ? FeatureSelection::all() : FeatureSelection::parse(select);
    } catch (const FormatError& e) {
      throw UsageError(std::string("--select: ") + e.what());
    }
  }

  void validate() const {
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    selection();
  }
};

void log_epoch(const EpochLog& e) {
  std::cerr << "epoch " << e.epoch << " phase " << e.phase << " loss " << e.mean_loss << " lr " << e.learning_rate
            << '\n';
}

EvalOptions eval_options(int crop_height, int crop_width, int batch_size, bool depth_space) {
  if (crop_height <= 0 || crop_width <= 0 || crop_height % 32 != 0 || crop_width % 32 != 0) {
    throw UsageError("crop size must be a positive multiple of 32 in both axes");
  }
  if (batch_size <= 0) throw UsageError("--batch-size must be positive");
  return {crop_height, crop_width, batch_size, depth_space};
}

void write_csv(const fs::path& path, std::span<const MetricsReport> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(out, rows);
}

// ------------------------------------------------------------------ commands

void add_gen_synthetic(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("gen-synthetic", "generate a laser/camera mesh pair and a trajectory");
  struct Options {
    std::uint64_t seed = 0;
    std::string task = "depth_bias";
    double magnitude = 2.0;
    int frames = 10;
  };
  auto o = std::make_shared<Options>();
  c->option("seed", o->seed, "scene seed");
  c->option("task", o->task, "depth_bias or clean");
  c->option("magnitude", o->magnitude, "depth-bias offset in metres");
  c->option("frames", o->frames, "number of camera poses");
  c->run = [o](const fs::path& dir) {
    if (o->task != "depth_bias" && o->task != "clean") throw UsageError("--task must be depth_bias or clean");
    SceneSpec spec = depth_bias_task(o->seed, o->magnitude);
    if (o->task == "clean") spec.corruptions.clear();
    spec.frames = o->frames;
    SyntheticScene scene;
    try {
      scene = generate(spec);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    save_mesh(dir / "laser.ply", scene.laser);
    save_mesh(dir / "camera.ply", scene.camera);
    save_trajectory(dir / "poses.txt", scene.trajectory);
  };
  commands.push_back(std::move(c));
}

struct IntrinsicsOptions {
  CameraIntrinsics intr{52.0, 52.0, 51.5, 35.5, 104, 72};

  void add_to(Command& c) {
    c.option("fx", intr.fx, "focal length along x, pixels");
    c.option("fy", intr.fy, "focal length along y, pixels");
    c.option("cx", intr.cx, "principal point x (pixel centres at integers)");
    c.option("cy", intr.cy, "principal point y");
    c.option("width", intr.width, "image width");
    c.option("height", intr.height, "image height");
  }
};

void add_rasterize(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("rasterize", "render per-pixel feature images of a mesh for every pose");
  struct Options {
    std::string mesh, poses;
    IntrinsicsOptions intr;
    double near = 0.1;
  };
  auto o = std::make_shared<Options>();
  c->input("mesh", o->mesh, "PLY mesh");
  c->input("poses", o->poses, "pose file, one 3x4 camera-to-world matrix per line");
  o->intr.add_to(*c);
  c->option("near", o->near, "near clipping plane, metres");
  c->run = [o](const fs::path& dir) {
    try {
      o->intr.intr.validate();
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
    if (!(o->near > 0.0)) throw UsageError("--near must be positive");
    const Mesh mesh = load_mesh(o->mesh);
    const Trajectory traj = load_trajectory(o->poses);
    for (std::size_t i = 0; i < traj.size(); ++i) {
      const auto f = rasterize(mesh, traj.poses[i], o->intr.intr, RasterOptions{o->near});
      save_features(dir / frame_directory_name(traj.frames[i]), f, traj.frames[i]);
    }
  };
  commands.push_back(std::move(c));
}

void add_gen_gt(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("gen-gt", "per-pixel inverse-depth error between camera and laser renders");
  struct Options {
    std::string camera, laser;
    double scale = 1.0;
  };
  auto o = std::make_shared<Options>();
  c->input("camera", o->camera, "frame set rendered from the camera mesh");
  c->input("laser", o->laser, "frame set rendered from the laser mesh");
  c->option("scale", o->scale, "error scale A (1 for inverse depth, fx * baseline for disparity)");
  c->run = [o](const fs::path& dir) {
    GroundTruthConfig cfg{o->scale};
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto cam = list_frames(o->camera);
    const auto las = list_frames(o->laser);
    if (cam.size() != las.size()) throw FormatError("camera and laser frame sets hold different frame counts");
    for (std::size_t i = 0; i < cam.size(); ++i) {
      if (cam[i].first != las[i].first) throw FormatError(o->laser + " has no frame " + std::to_string(cam[i].first));
      const auto gt = compute_gt(load_features(cam[i].second), load_features(las[i].second), cfg);
      save_errors(dir / frame_directory_name(cam[i].first), gt, cam[i].first);
    }
  };
  commands.push_back(std::move(c));
}

void add_train(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("train", "two-phase training of the error-prediction network");
  struct Options {
    std::vector<std::string> features, gt;
    TrainOptions train;
  };
  auto o = std::make_shared<Options>();
  c->input("features", o->features, "camera feature frame sets, one per scene");
  c->input("gt", o->gt, "matching ground-truth frame sets");
  o->train.add_to(*c);
  c->run = [o](const fs::path& dir) {
    o->train.validate();
    const auto data = load_samples(o->features, o->gt);
    TrainConfig cfg = o->train.cfg;
    cfg.checkpoint_dir = dir / "checkpoints";
    TrainResult result;
    try {
      result = train(data, cfg, o->train.selection(), log_epoch);
    } catch (const NumericalError&) {
      const fs::path last_good = cfg.checkpoint_dir / "last_good.ckpt";
      if (fs::exists(last_good)) {
        std::string base = dir.string();
        base.erase(base.size() - std::string(".partial").size());
        const fs::path kept = base + ".last_good.ckpt";
        fs::rename(last_good, kept);
        std::cerr << "last finite parameters kept in " << kept.string() << '\n';
      }
      throw;
    }
    save_checkpoint(dir / "model.ckpt", result.model, {{"seed", cfg.seed}});
    std::ofstream log(dir / "loss_log.csv");
    write_loss_log(log, result.log);
  };
  commands.push_back(std::move(c));
}

void add_infer(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("infer", "predict per-pixel errors with a trained checkpoint");
  struct Options {
    std::string checkpoint, features;
    int crop_height = 64, crop_width = 96, batch_size = 8;
  };
  auto o = std::make_shared<Options>();
  c->input("checkpoint", o->checkpoint, "model checkpoint");
  c->input("features", o->features, "camera feature frame set");
  c->option("crop-height", o->crop_height, "centred prediction window height (multiple of 32)");
  c->option("crop-width", o->crop_width, "centred prediction window width (multiple of 32)");
  c->option("batch-size", o->batch_size, "frames per forward pass");
  c->run = [o](const fs::path& dir) {
    const EvalOptions opts = eval_options(o->crop_height, o->crop_width, o->batch_size, false);
    const auto model = load_checkpoint<float>(o->checkpoint);
    const auto frames = load_unlabelled(o->features);
    const auto preds = predict_errors(model, frames, opts);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i].features;
      const int x0 = (f.width - opts.crop_width) / 2;
      const int y0 = (f.height - opts.crop_height) / 2;
      ErrorImage full = ErrorImage::zeros(f.width, f.height, preds[i].scale);
      for (int y = 0; y < opts.crop_height; ++y) {
        for (int x = 0; x < opts.crop_width; ++x) {
          full.delta.at(x0 + x, y0 + y) = preds[i].delta.at(x, y);
          full.mask.at(x0 + x, y0 + y) = preds[i].mask.at(x, y);
        }
      }
      save_errors(dir / frame_directory_name(frames[i].frame), full, frames[i].frame);
    }
  };
  commands.push_back(std::move(c));
}

void add_correct(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("correct", "apply predicted errors to camera inverse depth");
  struct Options {
    std::string features, errors;
  };
  auto o = std::make_shared<Options>();
  c->input("features", o->features, "camera feature frame set");
  c->input("errors", o->errors, "error frame set (from infer or gen-gt)");
  c->run = [o](const fs::path& dir) {
    const auto feats = list_frames(o->features);
    const auto errs = list_frames(o->errors);
    if (feats.size() != errs.size()) throw FormatError("feature and error frame sets hold different frame counts");
    for (std::size_t i = 0; i < feats.size(); ++i) {
      if (feats[i].first != errs[i].first) throw FormatError(o->errors + " has no frame " + std::to_string(feats[i].first));
      const auto fixed = correct(load_features(feats[i].second), load_errors(errs[i].second));
      const fs::path out = dir / frame_directory_name(feats[i].first);
      fs::create_directories(out);
      save_pfm(out / "inverse_depth.pfm", fixed.inverse_depth);
      save_pfm(out / "depth.pfm", fixed.depth);
      save_pgm(out / "mask.pgm", fixed.mask);
    }
  };
  commands.push_back(std::move(c));
}

void add_eval(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("eval", "baseline and corrected RMSE / delta accuracy on held-out frames");
  struct Options {
    std::string checkpoint;
    std::vector<std::string> features, gt;
    int crop_height = 64, crop_width = 96, batch_size = 8;
    bool depth_space = false;
    std::string label = "cnn";
  };
  auto o = std::make_shared<Options>();
  c->input("checkpoint", o->checkpoint, "model checkpoint");
  c->input("features", o->features, "camera feature frame sets");
  c->input("gt", o->gt, "matching ground-truth frame sets");
  c->option("crop-height", o->crop_height, "centred evaluation window height");
  c->option("crop-width", o->crop_width, "centred evaluation window width");
  c->option("batch-size", o->batch_size, "frames per forward pass");
  c->flag("depth-space", o->depth_space, "metrics on depth instead of inverse depth");
  c->option("label", o->label, "config column of the corrected row");
  c->run = [o](const fs::path& dir) {
    const EvalOptions opts = eval_options(o->crop_height, o->crop_width, o->batch_size, o->depth_space);
    const auto model = load_checkpoint<float>(o->checkpoint);
    const auto data = load_samples(o->features, o->gt);
    const auto preds = predict_errors(model, data, opts);
    const auto result = evaluate_predictions(data, preds, opts, o->label);
    const std::vector<MetricsReport> rows = {result.baseline, result.corrected};
    write_csv(dir / "metrics.csv", rows);
  };
  commands.push_back(std::move(c));
}

void add_ablate(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("ablate", "corrected metrics with each feature disabled in turn");
  struct Options {
    std::string checkpoint;
    std::vector<std::string> features, gt, train_features, train_gt;
    int crop_height = 64, crop_width = 96, batch_size = 8;
    std::string mode = "cheap";
    int fine_tune_epochs = 0;
    TrainOptions train;
  };
  auto o = std::make_shared<Options>();
  c->input("checkpoint", o->checkpoint, "full-feature model checkpoint");
  c->input("features", o->features, "evaluation feature frame sets");
  c->input("gt", o->gt, "matching ground-truth frame sets");
  c->input_keys.push_back("train-features");
  c->option("train-features", o->train_features, "training frame sets (faithful mode, fine-tuning)");
  c->input_keys.push_back("train-gt");
  c->option("train-gt", o->train_gt, "matching training ground truth");
  c->option("eval-crop-height", o->crop_height, "centred evaluation window height");
  c->option("eval-crop-width", o->crop_width, "centred evaluation window width");
  c->option("eval-batch-size", o->batch_size, "frames per forward pass");
  c->option("mode", o->mode, "cheap (zero the channels) or faithful (retrain without them)");
  c->option("fine-tune-epochs", o->fine_tune_epochs, "phase-2 epochs for the reduced-feature model");
  o->train.add_to(*c);
  c->run = [o](const fs::path& dir) {
    AblationOptions opts;
    opts.eval = eval_options(o->crop_height, o->crop_width, o->batch_size, false);
    if (o->mode == "cheap") {
      opts.mode = AblationMode::cheap;
    } else if (o->mode == "faithful") {
      opts.mode = AblationMode::faithful;
    } else {
      throw UsageError("--mode must be cheap or faithful");
    }
    if (o->fine_tune_epochs < 0) throw UsageError("--fine-tune-epochs must be non-negative");
    opts.fine_tune_epochs = o->fine_tune_epochs;
    o->train.validate();
    if ((opts.mode == AblationMode::faithful || opts.fine_tune_epochs > 0) && o->train_features.empty()) {
      throw UsageError("faithful mode and fine-tuning need --train-features and --train-gt");
    }
    const auto model = load_checkpoint<float>(o->checkpoint);
    const auto data = load_samples(o->features, o->gt);
    const auto train_data = load_samples(o->train_features, o->train_gt);
    std::vector<MetricsReport> rows = {evaluate(model, data, opts.eval).baseline};
    const auto ablation = ablation_study(model, data, opts, train_data, o->train.cfg);
    rows.insert(rows.end(), ablation.begin(), ablation.end());
    write_csv(dir / "ablation.csv", rows);
  };
  commands.push_back(std::move(c));
}

void add_render_overlay(CLI::App& root, std::vector<std::unique_ptr<Command>>& commands) {
  auto c = std::make_unique<Command>();
  c->app = root.add_subcommand("render-overlay", "colour-coded PPM of signed per-pixel errors");
  struct Options {
    std::string errors;
    double limit = 0.0;
  };
  auto o = std::make_shared<Options>();
  c->input("errors", o->errors, "error frame set");
  c->option("limit", o->limit, "|error| drawn at full intensity; 0 = per-frame maximum");
  c->run = [o](const fs::path& dir) {
    if (!(o->limit >= 0.0)) throw UsageError("--limit must be non-negative");
    for (const auto& [frame, path] : list_frames(o->errors)) {
      const fs::path out = dir / frame_directory_name(frame);
      fs::create_directories(out);
      save_ppm(out / "overlay.ppm", error_overlay(load_errors(path), o->limit));
    }
  };
  commands.push_back(std::move(c));
}

// ------------------------------------------------------------------ driver

bool is_within(const fs::path& path, const fs::path& dir) {
  const fs::path p = fs::weakly_canonical(path);
  const fs::path d = fs::weakly_canonical(dir);
  auto pi = p.begin();
  for (auto di = d.begin(); di != d.end(); ++di, ++pi) {
    if (pi == p.end() || *pi != *di) return false;
  }
  return true;
}

void execute(const Command& c, const std::string& name) {
  const fs::path out = c.out;
  for (const auto& in : c.input_paths()) {
    if (!fs::exists(in)) throw FormatError("input " + in.string() + " does not exist");
    if (is_within(in, out)) throw UsageError("input " + in.string() + " lies inside the output directory");
  }
  json inputs = json::array();
  for (const auto& in : c.input_paths()) inputs.push_back(hash_input(in));

  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  try {
    c.run(staging);
    json manifest = {{"tool", "meshcorr"},
                     {"version", kVersion},
                     {"command", name},
                     {"config", c.config_json()},
                     {"inputs", inputs},
                     {"outputs", hash_tree(staging)},
                     {"build",
                      {{"compiler", __VERSION__},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                     "." + std::to_string(EIGEN_MINOR_VERSION)},
                       {"threads", 1}}}};
    std::ofstream(staging / "run_manifest.json") << manifest.dump(2) << '\n';
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(out);
  fs::rename(staging, out);
}

/// Prepends config-file entries as flags, unless the same flag is given on
/// the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const CLI::App& root) {
  if (args.size() < 2) return args;
  std::string config;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : root.get_subcommands([](const CLI::App*) { return true; })) {
    if (s->get_name() == args[1]) sub = s;
  }
  if (sub == nullptr) return args;
  auto given = [&](const std::string& key) {
    for (std::size_t i = 2; i < args.size(); ++i) {
      if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> out = {args[0], args[1]};
  for (const auto& [key, value] : read_config(config)) {
    if (key == "config" || key == "out" || key == "help" || sub->get_option_no_throw("--" + key) == nullptr) {
      throw UsageError(config + ": unknown key '" + key + "' for " + args[1]);
    }
    if (!given(key)) out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App root("Mesh-reconstruction depth correction: rasterise, train, correct, evaluate.", "meshcorr");
  root.require_subcommand(1);
  root.set_version_flag("--version", kVersion);
  std::vector<std::unique_ptr<Command>> commands;
  add_gen_synthetic(root, commands);
  add_rasterize(root, commands);
  add_gen_gt(root, commands);
  add_train(root, commands);
  add_infer(root, commands);
  add_correct(root, commands);
  add_eval(root, commands);
  add_ablate(root, commands);
  add_render_overlay(root, commands);
  for (auto& c : commands) {
    c->app->add_option("--out", c->out, "output directory (replaced on success)")->required();
    c->app->add_option("--config", c->config, "key=value file; command-line flags take precedence");
  }

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args, root);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
      root.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
      const int code = root.exit(e);
      return code == 0 ? kOk : kUsage;
    }
    for (const auto& c : commands) {
      if (c->app->parsed()) execute(*c, c->app->get_name());
    }
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "meshcorr: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "meshcorr: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const FormatError& e) {
    std::cerr << "meshcorr: bad input: " << e.what() << '\n';
    return kFormat;
  } catch (const ShapeError& e) {
    std::cerr << "meshcorr: bad input: " << e.what() << '\n';
    return kFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "meshcorr: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "meshcorr: " << e.what() << '\n';
    return kOther;
  }
}
