// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("paca_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& leaf = "") const { return (leaf.empty() ? path : path / leaf).string(); }
};

std::vector<std::string> tiny_train(const std::string& out) {
  return {"train",     "--model",   "tiny-debug", "--samples", "32", "--synth-classes", "4", "--steps", "6",
          "--batch-size", "8", "--eval-every", "3", "--seed", "5", "--out", out};
}

Outcome run_vec(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"paca"};
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = paca::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

Outcome run(std::initializer_list<std::string> args) { return run_vec(std::vector<std::string>(args)); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("param-count for b0 in ImageNet geometry") {
    const auto o = run({"param-count", "--model", "b0", "--geometry", "in1k", "--classes", "1000"});
    REQUIRE(o.code == paca::cli::kExitOk);
    const double n = std::stod(o.out);
    CHECK(n > 3.2e6);
    CHECK(n < 3.6e6);
    const auto d = run({"param-count", "--model", "b0"});
    CHECK(d.out == o.out);
  }

  TEST_CASE("profile prints a CSV with the scaling slope") {
    const auto o = run({"profile", "--mechanism", "paca", "--n", "256,1024,4096", "--c", "64", "--m", "49"});
    REQUIRE(o.code == paca::cli::kExitOk);
    CHECK(o.out.rfind("mechanism,N,", 0) == 0);
    const auto pos = o.out.find("paca,slope,");
    REQUIRE(pos != std::string::npos);
    std::istringstream footer(o.out.substr(pos));
    std::string field;
    for (int i = 0; i < 9; ++i) std::getline(footer, field, ',');
    CHECK(std::abs(std::stod(field) - 1.0) <= 0.05);

    const auto v = run({"profile", "--mechanism", "vanilla", "--n", "256,1024,4096", "--instrumented"});
    CHECK(v.code == paca::cli::kExitOk);
    CHECK(v.out.find("vanilla,1024,") != std::string::npos);
  }

  TEST_CASE("usage errors exit with 1") {
    CHECK(run({"param-count", "--bogus"}).code == paca::cli::kExitUsage);
    CHECK(run({}).code == paca::cli::kExitUsage);
    CHECK(run({"frobnicate"}).code == paca::cli::kExitUsage);
    CHECK(run({"param-count", "--model", "b9"}).code == paca::cli::kExitUsage);
    CHECK(run({"profile", "--n", "256,1024"}).code == paca::cli::kExitUsage);
    CHECK(run({"profile", "--mechanism", "linear"}).code == paca::cli::kExitUsage);
    CHECK(run({"train", "--dataset", "cifar100"}).code == paca::cli::kExitUsage);
    CHECK(run({"eval"}).code == paca::cli::kExitUsage);
    CHECK(run({"param-count", "--config", "/nonexistent/paca.cfg"}).code == paca::cli::kExitUsage);
    const auto o = run({"train", "--lr", "-1"});
    CHECK(o.code == paca::cli::kExitUsage);
    CHECK_FALSE(o.err.empty());
  }

  TEST_CASE("help exits cleanly") {
    const auto o = run({"--help"});
    CHECK(o.code == paca::cli::kExitOk);
    CHECK(o.out.find("profile") != std::string::npos);
  }

  TEST_CASE("runtime failures exit with 2") {
    const TempDir dir("runtime");
    const auto o = run({"eval", "--model", "tiny-debug", "--samples", "8", "--synth-classes", "4", "--checkpoint",
                        dir.str("missing.ckpt")});
    CHECK(o.code == paca::cli::kExitRuntime);
    CHECK(o.err.find("missing.ckpt") != std::string::npos);

    std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint";
    const auto j = run({"eval", "--model", "tiny-debug", "--samples", "8", "--synth-classes", "4", "--checkpoint",
                        dir.str("junk.ckpt")});
    CHECK(j.code == paca::cli::kExitRuntime);
  }

  TEST_CASE("config file values yield to command-line flags") {
    const TempDir dir("config");
    {
      std::ofstream cfg(dir.path / "run.cfg");
      cfg << "# comment\nmodel = b0\ngeometry=c100\n--classes = \"100\"\n";
    }
    const auto from_file = run({"param-count", "--config", dir.str("run.cfg")});
    const auto explicit_flags = run({"param-count", "--model", "b0", "--geometry", "c100", "--classes", "100"});
    REQUIRE(from_file.code == 0);
    CHECK(from_file.out == explicit_flags.out);
    const auto overridden = run({"param-count", "--config", dir.str("run.cfg"), "--classes", "10"});
    const auto flags10 = run({"param-count", "--model", "b0", "--geometry", "c100", "--classes", "10"});
    CHECK(overridden.out == flags10.out);
    CHECK(overridden.out != from_file.out);

    std::ofstream(dir.path / "bad.cfg") << "model b0\n";
    CHECK(run({"param-count", "--config", dir.str("bad.cfg")}).code == paca::cli::kExitUsage);
  }

  TEST_CASE("training twice gives byte-identical outputs") {
    const TempDir a("train_a"), b("train_b");
    const auto ra = run_vec(tiny_train(a.str()));
    const auto rb = run_vec(tiny_train(b.str()));
    REQUIRE(ra.code == 0);
    REQUIRE(rb.code == 0);
    CHECK(ra.out == rb.out);
    const std::string metrics = slurp(a.path / "metrics.csv");
    CHECK(metrics.rfind("step,lr,loss,eval_top1\n", 0) == 0);
    CHECK(metrics == slurp(b.path / "metrics.csv"));
    CHECK(slurp(a.path / "final.ckpt") == slurp(b.path / "final.ckpt"));

    const auto e = run({"eval", "--model", "tiny-debug", "--samples", "16", "--synth-classes", "4", "--split", "test",
                        "--seed", "5", "--checkpoint", a.str("final.ckpt")});
    CHECK(e.code == 0);
    CHECK(e.out.rfind("top1=", 0) == 0);

    const TempDir ex("explain");
    const auto x = run({"explain", "--model", "tiny-debug", "--samples", "8", "--synth-classes", "4", "--seed", "5",
                        "--checkpoint", a.str("final.ckpt"), "--layer", "1", "--top-k", "2", "--out", ex.str()});
    CHECK(x.code == 0);
    CHECK(x.out.find("top_cluster=") != std::string::npos);
    CHECK(fs::exists(ex.path / "importance.csv"));
    std::size_t pgm = 0, ppm = 0;
    for (const auto& entry : fs::directory_iterator(ex.path)) {
      pgm += entry.path().extension() == ".pgm";
      ppm += entry.path().extension() == ".ppm";
    }
    CHECK(pgm == 2);
    CHECK(ppm == 2);
    const std::string csv = slurp(ex.path / "importance.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    const auto wrong = run({"eval", "--model", "tiny-debug", "--samples", "8", "--synth-classes", "5",
                            "--checkpoint", a.str("final.ckpt")});
    CHECK(wrong.code != 0);
  }
}
