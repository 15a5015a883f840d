#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "indigo/commands.hpp"
#include "indigo/io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace indigo;
using indigo_test::TempDir;
using indigo_test::slurp;
using indigo_test::spew;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Swallows one stream for the duration of a CLI call so test output stays
// clean and messages can be asserted on.
struct Capture {
  std::ostream& os;
  std::stringstream ss;
  std::streambuf* old;
  explicit Capture(std::ostream& o) : os(o), old(o.rdbuf(ss.rdbuf())) {}
  ~Capture() { os.rdbuf(old); }
};

int run_cli(const std::vector<std::string>& args, std::string* err_text = nullptr,
            std::string* out_text = nullptr) {
  std::vector<const char*> argv{"indigo"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  Capture out(std::cout), err(std::cerr);
  const int rc = run_command(static_cast<int>(argv.size()), argv.data());
  if (err_text) *err_text = err.ss.str();
  if (out_text) *out_text = out.ss.str();
  return rc;
}

// A complete tiny run configuration: 8x8 images, T=6, one-epoch training.
json tiny_config(const TempDir& dir) {
  json c;
  c["seed"] = 5;
  c["zeta"] = 0.5;
  c["sample_count"] = 3;
  c["dataset"] = {{"count", 4}, {"height", 8}, {"width", 8}, {"seed", 3}};
  c["degradation"] = {{"kind", "box"}, {"factor", 2}};
  c["schedule"] = {{"steps", 6}};
  c["denoiser"] = {{"base_channels", 2}, {"time_embed_dim", 4}, {"train", {{"epochs", 1}}}};
  c["winn"] = {{"levels", 1}, {"pairs", 1}, {"res_blocks", 1}, {"width", 4},
               {"train", {{"epochs", 1}}}};
  c["paths"] = {{"data_dir", dir.file("data")},
                {"denoiser_ckpt", dir.file("ck_d")},
                {"winn_ckpt", dir.file("ck_w")}};
  return c;
}

std::string write_config(const TempDir& dir, const json& c, const std::string& name) {
  const std::string p = dir.file(name);
  spew(p, c.dump(2));
  return p;
}

}  // namespace

TEST_CASE("the pipeline runs end to end and solve at zeta 0 reduces to sample") {
  TempDir dir;
  const json base = tiny_config(dir);
  const std::string cfg = write_config(dir, base, "c.json");

  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out", dir.file("data")}) == 0);
  CHECK(fs::exists(dir.file("data/images/img_0003.tnsr")));
  CHECK(fs::exists(dir.file("data/images/img_0003.pgm")));
  CHECK(fs::exists(dir.file("data/measurements/y_0003.tnsr")));
  CHECK(fs::exists(dir.file("data/config.json")));

  REQUIRE(run_cli({"train-denoiser", "--config", cfg, "--out", dir.file("ck_d")}) == 0);
  CHECK(fs::exists(dir.file("ck_d/manifest.json")));
  CHECK(fs::exists(dir.file("ck_d/loss.json")));
  REQUIRE(run_cli({"train-winn", "--config", cfg, "--out", dir.file("ck_w")}) == 0);
  CHECK(fs::exists(dir.file("ck_w/manifest.json")));

  REQUIRE(run_cli({"sample", "--config", cfg, "--out", dir.file("samp")}) == 0);
  CHECK(fs::exists(dir.file("samp/samples/sample_0002.tnsr")));

  json zero = base;
  zero["zeta"] = 0.0;
  const std::string cfg0 = write_config(dir, zero, "c0.json");
  REQUIRE(run_cli({"solve", "--config", cfg0, "--out", dir.file("run0")}) == 0);
  // per-image chains share seed ^ index, so the unconditional samples and the
  // unguided reconstructions are the same files
  for (const char* i : {"0000", "0001", "0002"})
    CHECK(slurp(dir.file("samp/samples/sample_" + std::string(i) + ".tnsr")) ==
          slurp(dir.file("run0/recon/recon_" + std::string(i) + ".tnsr")));

  json traced = base;
  traced["trace_steps"] = {3};
  const std::string cfgt = write_config(dir, traced, "ct.json");
  std::string out_text;
  REQUIRE(run_cli({"solve", "--config", cfgt, "--out", dir.file("run1")}, nullptr, &out_text) ==
          0);
  CHECK(out_text.find("mean psnr") != std::string::npos);
  CHECK(fs::exists(dir.file("run1/recon/recon_0003.tnsr")));
  CHECK(fs::exists(dir.file("run1/recon/recon_0003.pgm")));
  CHECK(load_tensor_as<float>(dir.file("run1/trace/img_0000/x0t_3.tnsr")).shape() ==
        Shape{1, 8, 8});
  CHECK(load_tensor_as<float>(dir.file("run1/trace/img_0000/ct_3.tnsr")).shape() ==
        Shape{1, 4, 4});
  CHECK(load_tensor_as<float>(dir.file("run1/trace/img_0000/xhat_3.tnsr")).shape() ==
        Shape{1, 8, 8});

  // metrics.json: pinned schema, aggregates equal recomputation
  const json m = json::parse(slurp(dir.file("run1/metrics.json")));
  REQUIRE(m.contains("per_image"));
  REQUIRE(m["per_image"].size() == 4);
  double sum_psnr = 0.0, sum_cons = 0.0;
  for (const json& e : m["per_image"]) {
    CHECK(e.contains("name"));
    sum_psnr += e["psnr_db"].get<double>();
    sum_cons += e["consistency"].get<double>();
  }
  CHECK(std::abs(m["mean_psnr_db"].get<double>() - sum_psnr / 4.0) < 1e-9);
  CHECK(std::abs(m["mean_consistency"].get<double>() - sum_cons / 4.0) < 1e-9);

  // eval recomputes the reconstruction psnr independently
  json ev = base;
  ev["paths"]["eval_a"] = dir.file("run1/recon");
  ev["paths"]["eval_b"] = dir.file("data/images");
  REQUIRE(run_cli({"eval", "--config", write_config(dir, ev, "ce.json"), "--out",
                   dir.file("evout")}) == 0);
  const json e = json::parse(slurp(dir.file("evout/eval.json")));
  CHECK(std::abs(e["mean_psnr_db"].get<double>() - m["mean_psnr_db"].get<double>()) < 1e-9);

  // the baseline task runs without a winn checkpoint
  json bl = base;
  bl["task"] = "baseline";
  bl["paths"].erase("winn_ckpt");
  REQUIRE(run_cli({"solve", "--config", write_config(dir, bl, "cb.json"), "--out",
                   dir.file("run_b")}) == 0);
  CHECK(fs::exists(dir.file("run_b/metrics.json")));
}

TEST_CASE("identical invocations produce bit-identical outputs") {
  TempDir dir;
  const std::string cfg = write_config(dir, tiny_config(dir), "c.json");
  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out", dir.file("data")}) == 0);
  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out", dir.file("data2")}) == 0);
  CHECK(slurp(dir.file("data/images/img_0002.tnsr")) ==
        slurp(dir.file("data2/images/img_0002.tnsr")));
  CHECK(slurp(dir.file("data/measurements/y_0002.tnsr")) ==
        slurp(dir.file("data2/measurements/y_0002.tnsr")));

  REQUIRE(run_cli({"train-denoiser", "--config", cfg, "--out", dir.file("ck_d")}) == 0);
  REQUIRE(run_cli({"train-denoiser", "--config", cfg, "--out", dir.file("ck_d2")}) == 0);
  const json man = json::parse(slurp(dir.file("ck_d/manifest.json")));
  for (const json& p : man["params"]) {
    const std::string f = p["file"].get<std::string>();
    CHECK(slurp(dir.file("ck_d/" + f)) == slurp(dir.file("ck_d2/" + f)));
  }
  REQUIRE(run_cli({"train-winn", "--config", cfg, "--out", dir.file("ck_w")}) == 0);

  REQUIRE(run_cli({"solve", "--config", cfg, "--out", dir.file("r1")}) == 0);
  REQUIRE(run_cli({"solve", "--config", cfg, "--out", dir.file("r2")}) == 0);
  for (const char* i : {"0000", "0001", "0002", "0003"})
    CHECK(slurp(dir.file("r1/recon/recon_" + std::string(i) + ".tnsr")) ==
          slurp(dir.file("r2/recon/recon_" + std::string(i) + ".tnsr")));
  CHECK(slurp(dir.file("r1/metrics.json")) == slurp(dir.file("r2/metrics.json")));

  // the --seed override changes the chains
  REQUIRE(run_cli({"solve", "--config", cfg, "--out", dir.file("r3"), "--seed", "77"}) == 0);
  CHECK(slurp(dir.file("r1/recon/recon_0000.tnsr")) !=
        slurp(dir.file("r3/recon/recon_0000.tnsr")));
  const json rc3 = json::parse(slurp(dir.file("r3/config.json")));
  CHECK(rc3["seed"].get<std::uint64_t>() == 77);
}

TEST_CASE("config problems exit 1 and name the offender") {
  TempDir dir;
  std::string err;

  spew(dir.file("bad.json"), R"({"bogus": 1})");
  CHECK(run_cli({"gen-data", "--config", dir.file("bad.json")}, &err) == 1);
  CHECK(err.find("unknown config key: bogus") != std::string::npos);

  spew(dir.file("bad2.json"), R"({"task": "foo"})");
  CHECK(run_cli({"solve", "--config", dir.file("bad2.json")}, &err) == 1);
  CHECK(err.find("task must be") != std::string::npos);

  // missing required sections are config errors too
  const std::string cfg = write_config(dir, json::object(), "empty.json");
  CHECK(run_cli({"train-denoiser", "--config", cfg}, &err) == 1);
  CHECK(err.find("data_dir") != std::string::npos);

  // cli misuse
  CHECK(run_cli({}, &err) == 1);
  CHECK(run_cli({"solve"}, &err) == 1);
  CHECK(run_cli({"frobnicate"}, &err) == 1);
  CHECK(run_cli({"--help"}) == 0);
}

TEST_CASE("missing inputs exit 3") {
  TempDir dir;
  std::string err;
  CHECK(run_cli({"gen-data", "--config", dir.file("absent.json")}, &err) == 3);
  CHECK(err.find("cannot open config") != std::string::npos);

  json c = tiny_config(dir);
  CHECK(run_cli({"sample", "--config", write_config(dir, c, "c.json")}, &err) == 3);
  CHECK(err.find("manifest.json") != std::string::npos);
}

TEST_CASE("a non-finite chain exits 2 naming the step") {
  TempDir dir;
  const std::string cfg = write_config(dir, tiny_config(dir), "c.json");
  REQUIRE(run_cli({"gen-data", "--config", cfg, "--out", dir.file("data")}) == 0);
  REQUIRE(run_cli({"train-denoiser", "--config", cfg, "--out", dir.file("ck_d")}) == 0);

  // poison one parameter file; the chain state goes non-finite at once
  const json man = json::parse(slurp(dir.file("ck_d/manifest.json")));
  const json& p0 = man["params"][0];
  Tensor<float> bad(p0["shape"].get<Shape>());
  bad.array().setConstant(std::numeric_limits<float>::quiet_NaN());
  save_tensor(dir.file("ck_d/" + p0["file"].get<std::string>()), bad);

  std::string err;
  CHECK(run_cli({"sample", "--config", cfg, "--out", dir.file("samp")}, &err) == 2);
  CHECK(err.find("at t = ") != std::string::npos);
}

TEST_CASE("gradcheck exits 0 and prints one line per check") {
  std::string out;
  REQUIRE(run_cli({"gradcheck", "--seed", "1"}, nullptr, &out) == 0);
  CHECK(out.find("primitive add (float32)") != std::string::npos);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(out.find("gradient checks passed") != std::string::npos);
}
