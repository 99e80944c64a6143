// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// mfsr: synth -> align -> make-dataset -> train -> eval, plus gradcheck and bench.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>

#include "mfsr/config.hpp"
#include "mfsr/dataset.hpp"
#include "mfsr/geometry.hpp"
#include "mfsr/imgproc.hpp"
#include "mfsr/netcheck.hpp"
#include "mfsr/parallel.hpp"
#include "mfsr/scene.hpp"
#include "mfsr/serialize.hpp"
#include "mfsr/srnet.hpp"
#include "mfsr/trainer.hpp"

#ifndef MFSR_CONFIG_DIR
#define MFSR_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace mfsr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitInvariant = 2;

/// Errors caused by arguments or input files.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
  std::string precision;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--seed", common.seed, "Random seed (overrides the config file)");
  cmd->add_option("--workers", common.workers, "Worker threads; 1 gives bit-exact reproducibility")
      ->check(CLI::Range(1, 256));
  cmd->add_option("--precision", common.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
}

/// A path to an existing file, or the name of a bundled config ("toy" ->
/// configs/toy.cfg).
fs::path resolve_config(const std::string& name) {
  if (fs::is_regular_file(name)) return name;
  for (const char* dir : {static_cast<const char*>(std::getenv("MFSR_CONFIG_DIR")), MFSR_CONFIG_DIR}) {
    if (!dir) continue;
    for (const std::string& candidate : {name, name + ".cfg", name + ".scene"}) {
      const fs::path p = fs::path(dir) / candidate;
      if (fs::is_regular_file(p)) return p;
    }
  }
  throw UserError("config not found: " + name);
}

fs::path manifest_path(const std::string& data) {
  const fs::path p = fs::is_directory(data) ? fs::path(data) / "manifest.json" : fs::path(data);
  if (!fs::is_regular_file(p)) throw UserError("dataset manifest not found: " + p.string());
  return p;
}

std::string frame_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.%s", stem, i, ext);
  return buf;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("mfsr");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("MFSR_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off") {
      spdlog::warn("MFSR_LOG={} is not a log level; using info", level);
    } else {
      spdlog::set_level(parsed);
    }
  }
}

// ---- synth ----------------------------------------------------------------------

struct SynthArgs {
  std::string spec, config, out;
};

int run_synth(const SynthArgs& a, const Common& common) {
  if (a.spec.empty() == a.config.empty()) throw UserError("synth needs exactly one of --spec or --config");
  if (!a.spec.empty()) {
    SceneSpec scene = SceneSpec::from_config(ConfigFile::load(resolve_config(a.spec)));
    if (common.seed_set) scene.seed = common.seed;
    write_sequence(scene, a.out);
    spdlog::info("wrote {} frames to {}", scene.trajectory.size(), a.out);
    return kExitOk;
  }
  DatasetFamily family = DatasetFamily::from_config(ConfigFile::load(resolve_config(a.config)).table("dataset"));
  if (common.seed_set) family.seed = common.seed;
  const DatasetManifest m = make_sr_dataset(family, a.out);
  spdlog::info("wrote {} pairs ({} test) to {}, hash {}", m.samples.size(), m.split(Split::kTest).size(), a.out,
               m.content_hash);
  return kExitOk;
}

// ---- align ----------------------------------------------------------------------

struct AlignArgs {
  std::string seq, out;
  double omega = 0.1;
  bool ground_truth_poses = false;
};

int run_align(const AlignArgs& a, const Common&) {
  if (!fs::is_directory(a.seq)) throw UserError("sequence directory not found: " + a.seq);
  const Sequence seq = read_sequence(a.seq);
  if (seq.frames.empty()) throw UserError("sequence has no frames: " + a.seq);
  fs::create_directories(a.out);

  std::vector<PoseSE3> pose_v, pose_t;
  if (a.ground_truth_poses) {
    for (const auto& f : seq.frames) {
      pose_v.push_back(f.pose_visible);
      pose_t.push_back(f.pose_thermal);
    }
  } else {
    TrajectoryOptions opt;
    opt.refine.omega = a.omega;
    const TrajectoryEstimate est = estimate_trajectory(seq.frames, seq.rig, seq.frames.front().pose_visible, opt);
    pose_v = est.visible;
    pose_t = est.thermal;
  }
  write_poses(fs::path(a.out) / "poses_visible.txt", pose_v);
  write_poses(fs::path(a.out) / "poses_thermal.txt", pose_t);

  const std::vector<std::size_t> pairing = select_frame_pair(pose_v, pose_t);
  std::ofstream csv(fs::path(a.out) / "alignment.csv");
  csv << "frame,visible_frame,coverage,mean_reprojection_error_px,false_fill,rotation_error_deg,"
         "translation_error_mm\n"
      << std::setprecision(10);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const std::size_t j = pairing[i];
    const MultiModalFrame& src = seq.frames[j];
    const AlignedVisible r = render_aligned_visible(src.visible, src.depth, seq.rig.visible, pose_v[j],
                                                    seq.rig.thermal, pose_t[i]);
    write_image(fs::path(a.out) / frame_name("visible", i, "ppm"), r.image, 8);
    write_image(fs::path(a.out) / frame_name("mask", i, "pgm"), r.mask, 8);
    write_image(fs::path(a.out) / frame_name("thermal", i, "pgm"), seq.frames[i].thermal, 16);
    if (r.low_coverage) spdlog::warn("frame {}: coverage {:.1f}% is low", i, 100.0 * r.coverage);

    csv << i << ',' << j << ',' << r.coverage << ',';
    const Tensor& corr = seq.correspondences[i];
    if (!corr.empty() && i == j) {
      const ReprojectionStats s = reprojection_stats(r, corr);
      csv << s.mean_error << ',' << s.false_fill << ',';
    } else {
      csv << ",,";
    }
    const PoseSE3& truth = seq.frames[i].pose_visible;
    csv << PoseSE3::angle_between(pose_v[i], truth) * 180.0 / M_PI << ','
        << (pose_v[i].translation() - truth.translation()).norm() * 1000.0 << '\n';
  }
  spdlog::info("aligned {} frames into {}", seq.frames.size(), a.out);
  return kExitOk;
}

// ---- make-dataset ------------------------------------------------------------------

struct MakeDatasetArgs {
  std::string data, config, out;
  double test_fraction = 0.2;
};

int run_make_dataset(const MakeDatasetArgs& a, const Common& common) {
  if (a.data.empty() == a.config.empty()) throw UserError("make-dataset needs exactly one of --data or --config");
  if (!a.config.empty()) {
    if (a.out.empty()) throw UserError("make-dataset --config needs --out");
    return run_synth({"", a.config, a.out}, common);
  }
  if (!fs::is_directory(a.data)) throw UserError("aligned directory not found: " + a.data);
  if (a.test_fraction < 0.0 || a.test_fraction > 1.0) throw UserError("--test-fraction must lie in [0, 1]");
  DatasetManifest m;
  m.root = a.data;
  for (std::size_t i = 0;; ++i) {
    const std::string v = frame_name("visible", i, "ppm"), t = frame_name("thermal", i, "pgm");
    if (!fs::exists(m.resolve(v)) || !fs::exists(m.resolve(t))) break;
    SampleRecord r;
    r.id = frame_name("frame", i, "");
    r.id.pop_back();
    r.visible = v;
    r.thermal = t;
    r.scene_id = fs::path(a.data).filename().string();
    r.seed = i;
    m.samples.push_back(r);
  }
  if (m.samples.empty()) throw UserError("no aligned frames in " + a.data);
  const auto n_test = std::size_t(std::lround(double(m.samples.size()) * a.test_fraction));
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    m.samples[i].split = i + n_test >= m.samples.size() ? Split::kTest : Split::kTrain;
  m.seed = common.seed;
  m.content_hash = m.compute_hash();
  const fs::path out = a.out.empty() ? fs::path(a.data) / "manifest.json" : fs::path(a.out);
  m.save(out);
  spdlog::info("manifest with {} samples written to {}", m.samples.size(), out.string());
  return kExitOk;
}

// ---- train / eval -------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out;
};

int run_train(const TrainArgs& a, const Common& common) {
  TrainConfig cfg = TrainConfig::from_config(ConfigFile::load(resolve_config(a.config)));
  if (common.seed_set) cfg.seed = common.seed;
  if (!common.precision.empty()) cfg.precision = common.precision;
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(a.data));
  const TrainResult r = train(cfg, manifest, a.out);
  std::cout << std::setprecision(17) << "final_test_psnr_db " << r.final_test_psnr << '\n'
            << "checkpoint " << r.checkpoint.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, report;
  bool bicubic = false;
};

int run_eval(const EvalArgs& a, const Common&) {
  if (!fs::is_regular_file(a.ckpt)) throw UserError("checkpoint not found: " + a.ckpt);
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(a.data));
  EvalReport report = evaluate_checkpoint(a.ckpt, manifest);
  const double mean_psnr = report.mean_psnr(), mean_ssim = report.mean_ssim();
  if (a.bicubic) {
    const auto ckpt_scale = NetworkConfig::from_config(checkpoint_manifest(a.ckpt).table("net")).scale;
    const EvalReport base = evaluate_bicubic(load_split(manifest, Split::kTest), ckpt_scale);
    report.rows.insert(report.rows.end(), base.rows.begin(), base.rows.end());
    std::cout << std::setprecision(17) << "bicubic mean_psnr_db " << base.mean_psnr() << " mean_ssim "
              << base.mean_ssim() << '\n';
  }
  report.write_csv(a.report);
  std::cout << std::setprecision(17) << "mean_psnr_db " << mean_psnr << " mean_ssim " << mean_ssim << '\n';
  return kExitOk;
}

// ---- gradcheck / bench -------------------------------------------------------------

struct GradcheckArgs {
  std::string config = "toy";
};

int run_gradcheck(const GradcheckArgs& a, const Common& common) {
  const ConfigFile cfg = ConfigFile::load(resolve_config(a.config));
  const NetworkConfig net = NetworkConfig::from_config(cfg.table("net"));
  const ConfigFile g = cfg.table("gradcheck");
  NetworkCheckOptions opt;
  opt.batch = std::size_t(g.get_int("batch", (long long)opt.batch));
  opt.lr_height = std::size_t(g.get_int("lr_height", (long long)opt.lr_height));
  opt.lr_width = std::size_t(g.get_int("lr_width", (long long)opt.lr_width));
  opt.step = g.get_double("step", opt.step);
  opt.seed = common.seed_set ? common.seed : std::uint64_t(g.get_int("seed", (long long)opt.seed));
  const double tolerance = g.get_double("tolerance", 1e-4);

  const auto start = std::chrono::steady_clock::now();
  const NetworkCheckReport report = check_network_gradients(net, opt);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::size_t failures = 0;
  std::cout << std::left << std::setw(32) << "tensor" << std::right << std::setw(8) << "count" << std::setw(14)
            << "max_rel_err" << '\n';
  for (const TensorCheck& t : report.tensors) {
    const bool ok = t.max_relative_error < tolerance;
    failures += ok ? 0 : 1;
    std::cout << std::left << std::setw(32) << t.name << std::right << std::setw(8) << t.count << std::setw(14)
              << std::scientific << std::setprecision(3) << t.max_relative_error << std::defaultfloat
              << (ok ? "" : "  FAIL") << '\n';
  }
  std::cout << "max relative error " << std::scientific << std::setprecision(3) << report.max_relative_error()
            << std::defaultfloat << " over " << report.tensors.size() << " tensors, tolerance " << tolerance
            << ", " << std::fixed << std::setprecision(1) << seconds << " s\n";
  return failures == 0 ? kExitOk : kExitInvariant;
}

struct BenchArgs {
  std::string config = "default";
  std::size_t lr_size = 12;
  std::size_t batch = 1;
  std::size_t iterations = 5;
};

template <typename T>
double bench_forward(const NetworkConfig& net, const BenchArgs& a, std::uint64_t seed) {
  NetworkParams<T> params(net);
  params.initialize(seed);
  const std::size_t hr = a.lr_size * net.scale;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BasicTensor<T> v(Shape{a.batch, 1, hr, hr}), t(Shape{a.batch, 1, a.lr_size, a.lr_size});
  for (auto& x : v.storage()) x = T(u(rng));
  for (auto& x : t.storage()) x = T(u(rng));
  forward(v, t, net, params, BnMode::kEval);  // warm-up
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < a.iterations; ++i) forward(v, t, net, params, BnMode::kEval);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() /
         double(a.iterations * a.batch);
}

int run_bench(const BenchArgs& a, const Common& common) {
  if (a.lr_size == 0 || a.batch == 0 || a.iterations == 0) throw UserError("bench sizes must be positive");
  const NetworkConfig net = NetworkConfig::from_config(ConfigFile::load(resolve_config(a.config)).table("net"));
  const std::string precision = common.precision.empty() ? "f32" : common.precision;
  const std::uint64_t seed = common.seed_set ? common.seed : 1;
  const double per_image = precision == "f64" ? bench_forward<double>(net, a, seed) : bench_forward<float>(net, a, seed);
  const std::size_t hr = a.lr_size * net.scale;
  std::cout << "input: visible " << hr << "x" << hr << ", thermal " << a.lr_size << "x" << a.lr_size << ", batch "
            << a.batch << ", " << precision << ", " << num_workers() << " worker(s)\n"
            << "network: " << net.n_blocks << " blocks, " << net.channels << " channels, "
            << NetworkParams<float>(net).parameter_count() << " parameters\n"
            << std::fixed << std::setprecision(3) << "forward latency " << per_image * 1e3 << " ms/image, throughput "
            << std::setprecision(2) << 1.0 / per_image << " images/s\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Visible-guided thermal super-resolution toolkit", "mfsr"};
  app.require_subcommand(1);
  Common common;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Render a multi-modal sequence or an aligned SR dataset");
  c_synth->add_option("--spec", synth.spec, "Scene description (sequence mode)");
  c_synth->add_option("--config", synth.config, "Dataset family config (SR dataset mode)");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  add_common(c_synth, common);

  AlignArgs align;
  auto* c_align = app.add_subcommand("align", "Estimate poses and render visible frames on the thermal grid");
  c_align->add_option("--seq", align.seq, "Sequence directory written by synth")->required();
  c_align->add_option("--out", align.out, "Output directory")->required();
  c_align->add_option("--omega", align.omega, "Weight of the thermal consistency term");
  c_align->add_flag("--gt-poses", align.ground_truth_poses, "Use the stored poses instead of estimating them");
  add_common(c_align, common);

  MakeDatasetArgs make;
  auto* c_make = app.add_subcommand("make-dataset", "Write a dataset manifest");
  c_make->add_option("--data", make.data, "Aligned directory written by align");
  c_make->add_option("--config", make.config, "Dataset family config; renders pairs instead");
  c_make->add_option("--out", make.out, "Manifest path (--data) or output directory (--config)");
  c_make->add_option("--test-fraction", make.test_fraction, "Fraction of trailing frames held out");
  add_common(c_make, common);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a network");
  c_train->add_option("--config", tr.config, "Training config")->required();
  c_train->add_option("--data", tr.data, "Dataset manifest or its directory")->required();
  c_train->add_option("--out", tr.out, "Output directory")->required();
  add_common(c_train, common);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score a checkpoint on the test split");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  c_eval->add_option("--data", ev.data, "Dataset manifest or its directory")->required();
  c_eval->add_option("--report", ev.report, "Output CSV")->required();
  c_eval->add_flag("--bicubic", ev.bicubic, "Append bicubic baseline rows");
  add_common(c_eval, common);

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  c_gc->add_option("--config", gc.config, "Config name or path")->capture_default_str();
  add_common(c_gc, common);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Forward latency and throughput");
  c_bench->add_option("--config", bench.config, "Config name or path")->capture_default_str();
  c_bench->add_option("--lr-size", bench.lr_size, "Thermal input side length")->capture_default_str();
  c_bench->add_option("--batch", bench.batch, "Images per forward pass")->capture_default_str();
  c_bench->add_option("--iterations", bench.iterations, "Timed forward passes")->capture_default_str();
  add_common(c_bench, common);

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUser;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUser;
  }
  for (auto* cmd : app.get_subcommands())
    if (cmd->count("--seed")) common.seed_set = true;
  set_num_workers(common.workers);

  try {
    if (*c_synth) return run_synth(synth, common);
    if (*c_align) return run_align(align, common);
    if (*c_make) return run_make_dataset(make, common);
    if (*c_train) return run_train(tr, common);
    if (*c_eval) return run_eval(ev, common);
    if (*c_gc) return run_gradcheck(gc, common);
    if (*c_bench) return run_bench(bench, common);
  } catch (const UserError& e) {
    spdlog::error("{}", e.what());
    return kExitUser;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitUser;
  } catch (const FormatError& e) {
    spdlog::error("format: {}", e.what());
    return kExitUser;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitUser;
  } catch (const ShapeError& e) {
    spdlog::error("invariant violated: {}", e.what());
    return kExitInvariant;
  } catch (const NonFiniteGradient& e) {
    spdlog::error("invariant violated: {}", e.what());
    return kExitInvariant;
  } catch (const std::logic_error& e) {
    spdlog::error("invariant violated: {}", e.what());
    return kExitInvariant;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitUser;
  }
  return kExitUser;
}
