// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Criterion 7 trains two
// desk-scale networks and dominates the runtime; criterion 8 reuses the
// first of them.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "mfsr/geometry.hpp"
#include "mfsr/imgproc.hpp"
#include "mfsr/netcheck.hpp"
#include "mfsr/ops.hpp"
#include "mfsr/scene.hpp"
#include "mfsr/srnet.hpp"
#include "mfsr/trainer.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

using namespace mfsr;
using namespace mfsr::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt_num(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Context {
  fs::path work;
  fs::path configs;
  fs::path cli;
  std::optional<fs::path> vt_checkpoint;  // set by criterion 7
};

// ---- 1 ------------------------------------------------------------------------

Outcome gradient_correctness(Context& ctx) {
  const ConfigFile cfg = ConfigFile::load(ctx.configs / "toy.cfg");
  const NetworkConfig net = NetworkConfig::from_config(cfg.table("net"));
  const ConfigFile g = cfg.table("gradcheck");
  NetworkCheckOptions opt;
  opt.batch = std::size_t(g.get_int("batch", 2));
  opt.lr_height = std::size_t(g.get_int("lr_height", 2));
  opt.lr_width = std::size_t(g.get_int("lr_width", 2));
  opt.step = g.get_double("step", opt.step);
  opt.seed = std::uint64_t(g.get_int("seed", 1));
  const auto start = std::chrono::steady_clock::now();
  const NetworkCheckReport report = check_network_gradients(net, opt);
  const double secs = seconds_since(start);
  std::string worst_name;
  double worst = 0.0;
  for (const TensorCheck& t : report.tensors)
    if (t.max_relative_error >= worst) {
      worst = t.max_relative_error;
      worst_name = t.name;
    }
  const bool shape_ok = net.n_blocks == 2 && net.channels == 8 && opt.lr_height * net.scale == 16;
  return {shape_ok && worst < 1e-4 && secs < 300.0,
          "max rel err " + fmt_num(worst, 3) + " (" + worst_name + ") over " + std::to_string(report.tensors.size()) +
              " tensors, limit 1e-4; " + fmt_num(secs, 3) + " s, limit 300 s"};
}

// ---- 2 ------------------------------------------------------------------------

Outcome kernel_oracles(Context&) {
  std::uint64_t seed = 1000;
  double conv_worst = 0.0, deconv_worst = 0.0, adjoint_worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t k = 1; k <= 5; ++k)
    for (std::size_t stride = 1; stride <= 3; ++stride)
      for (std::size_t pad = 0; pad < k && pad <= 2; ++pad) {
        auto c = random_conv(3, 2, k, seed++);
        const Tensor x = random_tensor({2, 2, 9, 10}, seed++);
        const Tensor fast = conv2d(x, c, stride, pad);
        conv_worst = std::max(conv_worst, max_rel_diff(fast, naive_conv(x, c.weight, c.bias, long(stride), long(pad))));

        c.bias.fill(0.0);
        const Tensor y = random_tensor(fast.shape(), seed++);
        const double lhs = inner(conv2d(x, c, stride, pad), y);
        const double rhs = inner(x, conv2d_backward(x, c, y, stride, pad).input);
        adjoint_worst = std::max(adjoint_worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));

        for (std::size_t out_pad = 0; out_pad < stride; ++out_pad) {
          auto d = random_deconv(2, 3, k, seed++);
          const Tensor xd = random_tensor({2, 2, 4, 5}, seed++);
          const Tensor fd = deconv2d(xd, d, stride, pad, out_pad);
          deconv_worst = std::max(
              deconv_worst, max_rel_diff(fd, naive_deconv(xd, d.weight, d.bias, long(stride), long(pad), long(out_pad))));
          d.bias.fill(0.0);
          const Tensor yd = random_tensor(fd.shape(), seed++);
          const double l = inner(deconv2d(xd, d, stride, pad, out_pad), yd);
          const double r = inner(xd, deconv2d_backward(xd, d, yd, stride, pad, out_pad).input);
          adjoint_worst = std::max(adjoint_worst, std::abs(l - r) / std::max(1.0, std::abs(l)));
          ++cases;
        }
        ++cases;
      }
  const double worst = std::max({conv_worst, deconv_worst, adjoint_worst});
  return {worst < 1e-10, std::to_string(cases) + " grid cases; conv " + fmt_num(conv_worst, 3) + ", deconv " +
                             fmt_num(deconv_worst, 3) + ", adjoint " + fmt_num(adjoint_worst, 3) + ", limit 1e-10"};
}

// ---- 3 ------------------------------------------------------------------------

Outcome shape_contract(Context& ctx) {
  const NetworkConfig base = NetworkConfig::from_config(ConfigFile::load(ctx.configs / "default.cfg").table("net"));
  bool ok = base.scale == 8;
  std::string shapes;
  for (Variant v : {Variant::kVT, Variant::kTT}) {
    NetworkConfig cfg = base;
    cfg.variant = v;
    NetworkParams<float> params(cfg);
    params.initialize(1);
    const TensorF visible = random_tensor({1, 1, 96, 96}, 1, 0, 1).cast<float>();
    const TensorF thermal = random_tensor({1, 1, 12, 12}, 2, 0, 1).cast<float>();
    const TensorF out = forward(visible, thermal, cfg, params, BnMode::kEval);
    ok = ok && out.shape() == Shape{1, 1, 96, 96};
    shapes += to_string(v) + " -> " + shape_str(out.shape()) + " ";
  }
  return {ok, "(96x96 visible, 12x12 thermal) x8: " + shapes};
}

// ---- 4 ------------------------------------------------------------------------

Outcome displacement_exactness(Context&) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> shift(-10, 10);
  std::size_t clean = 0, noisy = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Displacement2D truth{shift(rng), shift(rng)};
    const Tensor prev = random_texture(72, 96, 500 + trial);
    const Tensor curr = shifted(prev, truth, 600 + trial);
    clean += estimate_displacement(prev, curr, 10) == truth;

    const auto [lo, hi] = std::minmax_element(prev.storage().begin(), prev.storage().end());
    std::normal_distribution<double> noise(0.0, 0.02 * (*hi - *lo));
    Tensor np = prev, nc = curr;
    for (auto& v : np.storage()) v += noise(rng);
    for (auto& v : nc.storage()) v += noise(rng);
    noisy += estimate_displacement(np, nc, 10) == truth;
  }
  return {clean == 20 && noisy == 20, "noiseless " + std::to_string(clean) + "/20, 2%-range noise " +
                                          std::to_string(noisy) + "/20, radius 10"};
}

// ---- 5 ------------------------------------------------------------------------

Outcome pose_recovery(Context&) {
  std::mt19937_64 rng(5);
  double worst_rot = 0.0, worst_trans = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const PoseSE3 delta = random_perturbation(rng);
    const SceneSpec scene = random_geometry_scene(100 + std::uint64_t(trial));
    const PoseError e = refine_trial(scene, scene.trajectory[0], delta, 0.1);
    worst_rot = std::max(worst_rot, e.rotation_deg);
    worst_trans = std::max(worst_trans, e.translation_mm);
  }
  const SceneSpec wall = flat_wall_scene(3);
  double worst_ratio = std::numeric_limits<double>::infinity();
  for (const Eigen::Vector3d& t : {Eigen::Vector3d(0.03, 0.0, 0.0), Eigen::Vector3d(-0.02, 0.025, 0.005),
                                   Eigen::Vector3d(0.04, 0.02, 0.0)}) {
    const PoseSE3 slide = PoseSE3::from_axis_angle(Eigen::Vector3d::Zero(), t);
    const double with = refine_trial(wall, PoseSE3::identity(), slide, 0.1).translation_mm;
    const double without = refine_trial(wall, PoseSE3::identity(), slide, 0.0).translation_mm;
    worst_ratio = std::min(worst_ratio, without / std::max(with, 1e-9));
  }
  return {worst_rot < 0.1 && worst_trans < 2.0 && worst_ratio >= 4.0,
          "10 pairs: worst rotation " + fmt_num(worst_rot, 3) + " deg (limit 0.1), worst translation " +
              fmt_num(worst_trans, 3) + " mm (limit 2); flat wall omega 0 / omega 0.1 translation error >= " +
              fmt_num(worst_ratio, 3) + "x (limit 4x)"};
}

// ---- 6 ------------------------------------------------------------------------

Outcome rendering(Context&) {
  double worst = 0.0;
  for (std::uint64_t seed = 31; seed < 36; ++seed) {
    const SceneSpec scene = random_geometry_scene(seed);
    const RigCalibration rig = scene.rig.calibration();
    const RenderedFrame f = render_frame(scene, scene.trajectory[0]);
    const AlignedVisible a = render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible, f.frame.pose_visible,
                                                    rig.thermal, f.frame.pose_thermal);
    worst = std::max(worst, reprojection_stats(a, f.correspondence).mean_error);
  }
  const SceneSpec two = two_plane_scene();
  const RigCalibration rig = two.rig.calibration();
  const RenderedFrame f = render_frame(two, two.trajectory[0]);
  const AlignedVisible a = render_aligned_visible(f.frame.visible, f.frame.depth, rig.visible, f.frame.pose_visible,
                                                  rig.thermal, f.frame.pose_thermal);
  const ReprojectionStats s = reprojection_stats(a, f.correspondence);
  const std::size_t pixels = rig.thermal.width * rig.thermal.height;
  std::size_t hidden = 0, hidden_masked = 0;
  for (std::size_t t = 0; t < pixels; ++t)
    if (f.correspondence[2 * pixels + t] == 0.0) {
      ++hidden;
      hidden_masked += a.mask[t] == 0.0;
    }
  return {worst < 0.5 && s.false_fill == 0 && hidden > 0 && hidden_masked == hidden,
          "5 scenes: worst mean reprojection " + fmt_num(worst, 3) + " px (limit 0.5); two planes: " +
              std::to_string(hidden_masked) + "/" + std::to_string(hidden) + " occluded pixels masked, false fill " +
              std::to_string(s.false_fill)};
}

// ---- 7 / 8 --------------------------------------------------------------------

DatasetManifest desk_dataset(Context& ctx) {
  const fs::path dir = ctx.work / "desk_data";
  const DatasetFamily family = DatasetFamily::from_config(ConfigFile::load(ctx.configs / "family.cfg").table("dataset"));
  if (fs::exists(dir / "manifest.json")) {
    DatasetManifest m = DatasetManifest::load(dir / "manifest.json");
    if (m.samples.size() == family.count && m.seed == family.seed && m.compute_hash() == m.content_hash) return m;
  }
  fs::remove_all(dir);
  return make_sr_dataset(family, dir);
}

Outcome fusion_efficacy(Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const DatasetManifest manifest = desk_dataset(ctx);
  const DatasetFamily family = DatasetFamily::from_config(ConfigFile::load(ctx.configs / "family.cfg").table("dataset"));
  TrainConfig vt = TrainConfig::from_config(ConfigFile::load(ctx.configs / "desk.cfg"));
  TrainConfig tt = vt;
  vt.net.variant = Variant::kVT;
  tt.net.variant = Variant::kTT;

  const TrainResult r_vt = train(vt, manifest, ctx.work / "desk_vt");
  ctx.vt_checkpoint = r_vt.checkpoint;
  const TrainResult r_tt = train(tt, manifest, ctx.work / "desk_tt");
  const double bicubic = evaluate_bicubic(load_split(manifest, Split::kTest), vt.net.scale, vt.eval_border).mean_psnr();
  const double secs = seconds_since(start);
  const double gap = r_vt.final_test_psnr - r_tt.final_test_psnr;
  const bool setup_ok = manifest.samples.size() == 200 && family.rho == 0.8 && vt.epochs == 20 && vt.precision == "f32";
  return {setup_ok && gap >= 0.2 && secs <= 7200.0,
          "VT " + fmt_num(r_vt.final_test_psnr, 6) + " dB, TT " + fmt_num(r_tt.final_test_psnr, 6) +
              " dB, gap " + fmt_num(gap, 3) + " dB (limit 0.2); bicubic " + fmt_num(bicubic, 6) + " dB; " +
              std::to_string(manifest.samples.size()) + " pairs, " + std::to_string(vt.epochs) + " epochs, " +
              fmt_num(secs / 60.0, 3) + " min (limit 120)"};
}

// Pixels of label `label` whose whole (2r+1)^2 neighbourhood carries the same
// label, away from the evaluation border.
std::vector<std::size_t> eroded_region(const std::vector<int>& labels, std::size_t h, std::size_t w, int label,
                                       std::size_t r, std::size_t border) {
  std::vector<std::size_t> out;
  const std::size_t margin = std::max(r, border);
  for (std::size_t i = margin; i + margin < h; ++i)
    for (std::size_t j = margin; j + margin < w; ++j) {
      bool inside = true;
      for (std::size_t di = i - r; inside && di <= i + r; ++di)
        for (std::size_t dj = j - r; inside && dj <= j + r; ++dj) inside = labels[di * w + dj] == label;
      if (inside) out.push_back(i * w + j);
    }
  return out;
}

double region_std(const Tensor& t, const std::vector<std::size_t>& idx) {
  double mean = 0.0;
  for (std::size_t i : idx) mean += t[i];
  mean /= double(idx.size());
  double var = 0.0;
  for (std::size_t i : idx) var += (t[i] - mean) * (t[i] - mean);
  return std::sqrt(var / double(idx.size()));
}

Outcome irrelevant_feature_rejection(Context& ctx) {
  if (!ctx.vt_checkpoint) return {false, "no trained VT model (criterion 7 did not run)"};
  const DatasetManifest manifest = desk_dataset(ctx);
  auto ckpt = load_checkpoint<float>(*ctx.vt_checkpoint);
  constexpr std::size_t kErode = 8, kMinPixels = 64;
  std::size_t regions = 0, failing = 0;
  double worst = 0.0, sum = 0.0;
  for (const ImagePair& pair : load_split(manifest, Split::kTest)) {
    if (pair.salient.empty()) continue;
    const std::size_t h = pair.thermal.dim(2), w = pair.thermal.dim(3);
    std::vector<int> labels(h * w);
    std::set<int> present;
    for (std::size_t i = 0; i < h * w; ++i) {
      labels[i] = int(std::lround(pair.salient[i] * 255.0));
      if (labels[i] > 0) present.insert(labels[i]);
    }
    if (present.empty()) continue;
    const Tensor out = super_resolve(ckpt.config, ckpt.params, pair);
    for (int label : present) {
      const auto idx = eroded_region(labels, h, w, label, kErode, kDefaultBorderCrop);
      if (idx.size() < kMinPixels) continue;
      const double ratio = region_std(out, idx) / region_std(pair.thermal, idx);
      ++regions;
      failing += ratio >= 2.0;
      worst = std::max(worst, ratio);
      sum += ratio;
    }
  }
  return {regions > 0 && failing == 0,
          std::to_string(regions) + " visible-only regions (eroded " + std::to_string(kErode) + " px, >= " +
              std::to_string(kMinPixels) + " px): output/ground-truth std ratio mean " +
              fmt_num(regions ? sum / double(regions) : 0.0, 3) + ", worst " + fmt_num(worst, 3) + " (limit 2), " +
              std::to_string(failing) + " above"};
}

// ---- 9 ------------------------------------------------------------------------

Outcome metric_correctness(Context& ctx) {
  double psnr_worst = 0.0, ssim_worst = 0.0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const Shape shape{1, 1, 32 + 4 * s, 40 - 2 * s};
    const Tensor a = random_tensor(shape, 700 + s, 0, 1);
    Tensor b = a;
    const Tensor n = random_tensor(shape, 800 + s);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + 0.05 * double(s + 1) * n[i], 0.0, 1.0);
    for (std::size_t crop : {std::size_t(0), kDefaultBorderCrop}) {
      psnr_worst = std::max(psnr_worst, std::abs(psnr(a, b, crop) - naive_psnr(a, b, crop)));
      ssim_worst = std::max(ssim_worst, std::abs(ssim(a, b, crop) - naive_ssim(a, b, crop)));
    }
  }

  const TrainConfig cfg = TrainConfig::from_config(ConfigFile::load(ctx.configs / "default.cfg"));
  const std::pair<std::size_t, double> table[] = {{0, 1e-4},     {19, 1e-4},     {20, 5e-5},    {39, 5e-5},
                                                  {40, 2.5e-5},  {59, 2.5e-5},   {60, 1.25e-5}, {79, 1.25e-5}};
  bool lr_ok = cfg.epochs == 80;
  for (auto [epoch, lr] : table) lr_ok = lr_ok && learning_rate(cfg, epoch) == lr;

  const std::vector<double> centre{1.0, -2.0, 0.5, 3.0};
  std::vector<double> p(centre.size(), 0.0), g(centre.size());
  AdamState state;
  double f = 0.0;
  for (int it = 0; it < 2000; ++it) {
    f = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      g[i] = 2.0 * (p[i] - centre[i]);
      f += (p[i] - centre[i]) * (p[i] - centre[i]);
    }
    adam_step<double>(p, g, state, 1e-2);
  }
  return {psnr_worst < 1e-8 && ssim_worst < 1e-8 && lr_ok && f < 1e-6,
          "psnr diff " + fmt_num(psnr_worst, 3) + ", ssim diff " + fmt_num(ssim_worst, 3) + " (limit 1e-8); lr table " +
              (lr_ok ? "exact" : "MISMATCH") + "; Adam bowl loss " + fmt_num(f, 3) + " after 2000 steps (limit 1e-6)"};
}

// ---- 10 -----------------------------------------------------------------------

int cli(const Context& ctx, const std::string& args) {
  const std::string cmd = ctx.cli.string() + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = b / fs::relative(entry.path(), a);
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) return false;
    ++files;
  }
  return files > 0;
}

Outcome determinism(Context& ctx) {
  const fs::path dir = ctx.work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "family.cfg") << "[dataset]\ncount = 12\ntest_fraction = 0.25\nimage_size = 96\nseed = 5\n";
  std::ofstream(dir / "train.cfg") << "[net]\nn_blocks = 2\nchannels = 8\nskip_period = 2\n"
                                      "[train]\nbatch_size = 8\nepochs = 2\npatches_per_image = 4\n"
                                      "augment_scaling = false\n";
  const std::string family = (dir / "family.cfg").string();
  bool ok = cli(ctx, "synth --config " + family + " --seed 9 --out " + (dir / "data_a").string()) == 0 &&
            cli(ctx, "synth --config " + family + " --seed 9 --out " + (dir / "data_b").string()) == 0;
  std::size_t data_files = 0;
  const bool data_same = ok && same_tree(dir / "data_a", dir / "data_b", data_files);

  const std::string train = "train --config " + (dir / "train.cfg").string() + " --data " + (dir / "data_a").string() +
                            " --workers 1 --seed 7 --out ";
  ok = cli(ctx, train + (dir / "run_a").string()) == 0 && cli(ctx, train + (dir / "run_b").string()) == 0;
  const bool ckpt_same = ok && fs::exists(dir / "run_a" / "model.ckpt") &&
                         slurp(dir / "run_a" / "model.ckpt") == slurp(dir / "run_b" / "model.ckpt");
  return {data_same && ckpt_same, std::string("synth: ") + std::to_string(data_files) + " files " +
                                      (data_same ? "byte-identical" : "DIFFER") + "; train --workers 1 --seed 7: " +
                                      (ckpt_same ? "bit-identical checkpoints" : "checkpoints DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfsr acceptance suite"};
  Context ctx;
  std::string work = MFSR_ACCEPTANCE_WORK;
  std::set<int> only;
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  ctx.configs = MFSR_CONFIG_DIR;
  ctx.cli = MFSR_CLI;
  fs::create_directories(ctx.work);
  spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<int, std::function<Outcome(Context&)>>> criteria = {
      {1, gradient_correctness}, {2, kernel_oracles},        {3, shape_contract},
      {4, displacement_exactness}, {5, pose_recovery},       {6, rendering},
      {7, fusion_efficacy},      {8, irrelevant_feature_rejection}, {9, metric_correctness},
      {10, determinism}};
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
              << fmt_num(seconds_since(start), 3) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
