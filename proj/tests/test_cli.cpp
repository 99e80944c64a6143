// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "mfsr/dataset.hpp"

using namespace mfsr;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MFSR_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path workdir() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / "mfsr_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << text;
  return p;
}

fs::path small_family() {
  return write_file("family.cfg",
                    "[dataset]\ncount = 6\ntest_fraction = 0.34\nimage_size = 96\nrho = 0.8\nsalient_fraction = 0.3\n"
                    "thermal_noise = 0.01\nseed = 2\n");
}

fs::path tiny_train_config() {
  return write_file("tiny.cfg",
                    "[net]\nn_blocks = 1\nchannels = 4\nskip_period = 0\n"
                    "[train]\nbatch_size = 4\nepochs = 2\npatches_per_image = 2\naugment_scaling = false\n");
}

// Value following `key` on the first output line that starts with it.
double field_after(const std::string& text, const std::string& key) {
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream in(line);
    std::string word, value;
    if (in >> word >> value && word == key) return std::stod(value);
  }
  FAIL("missing " << key << " in: " << text);
  return 0.0;
}

}  // namespace

TEST_CASE("usage errors exit with status 1") {
  CHECK(run("").status == 1);
  CHECK(run("--no-such-flag").status == 1);
  CHECK(run("train --config toy").status == 1);
  CHECK(run("gradcheck --config /nonexistent/config.cfg").status == 1);
  CHECK(run("eval --ckpt /nonexistent.ckpt --data /nonexistent --report r.csv").status == 1);
  CHECK(run("--help").status == 0);
}

TEST_CASE("gradcheck on the toy network passes") {
  const Run r = run("gradcheck --config toy");
  CHECK(r.status == 0);
  CHECK(r.out.find("recon.conv") != std::string::npos);
}

TEST_CASE("synth with a fixed seed is byte-identical") {
  const fs::path cfg = small_family(), a = workdir() / "synth_a", b = workdir() / "synth_b";
  REQUIRE(run("synth --config " + cfg.string() + " --out " + a.string()).status == 0);
  REQUIRE(run("synth --config " + cfg.string() + " --out " + b.string()).status == 0);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
    ++files;
  }
  CHECK(files >= 13);
}

TEST_CASE("train twice, evaluate once") {
  const fs::path cfg = small_family(), data = workdir() / "train_data";
  REQUIRE(run("synth --config " + cfg.string() + " --out " + data.string()).status == 0);
  const std::string common = "train --config " + tiny_train_config().string() + " --data " + data.string() +
                             " --workers 1 --seed 7 --out ";
  const Run first = run(common + (workdir() / "run1").string());
  const Run second = run(common + (workdir() / "run2").string());
  REQUIRE(first.status == 0);
  REQUIRE(second.status == 0);
  CHECK(slurp(workdir() / "run1" / "model.ckpt") == slurp(workdir() / "run2" / "model.ckpt"));

  const double logged = field_after(first.out, "final_test_psnr_db");
  const fs::path report = workdir() / "report.csv";
  const Run ev = run("eval --ckpt " + (workdir() / "run1" / "model.ckpt").string() + " --data " + data.string() +
                     " --report " + report.string() + " --bicubic");
  REQUIRE(ev.status == 0);
  CHECK(std::abs(field_after(ev.out, "mean_psnr_db") - logged) < 1e-6);
  const std::string csv = slurp(report);
  CHECK(csv.rfind("image_id,psnr_db,ssim,variant\n", 0) == 0);
  CHECK(csv.find(",bicubic") != std::string::npos);
}

TEST_CASE("a sequence can be synthesized, aligned and turned into a dataset") {
  const fs::path seq = workdir() / "seq", aligned = workdir() / "aligned";
  REQUIRE(run("synth --spec room --out " + seq.string()).status == 0);
  REQUIRE(run("align --seq " + seq.string() + " --out " + aligned.string() + " --gt-poses").status == 0);
  CHECK(fs::exists(aligned / "alignment.csv"));
  CHECK(fs::exists(aligned / "thermal_0000.pgm"));
  const fs::path manifest = aligned / "manifest.json";
  REQUIRE(run("make-dataset --data " + aligned.string() + " --out " + manifest.string()).status == 0);
  const DatasetManifest m = DatasetManifest::load(manifest);
  CHECK_FALSE(m.split(Split::kTest).empty());
  CHECK_FALSE(m.split(Split::kTrain).empty());
}
