#include "indigo/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "indigo/checkpoint.hpp"
#include "indigo/checks.hpp"
#include "indigo/config.hpp"
#include "indigo/guided.hpp"

// The command-line surface. One strict JSON config per invocation (--seed and
// --out override its seed and output_dir), every command writes the resolved
// config beside its outputs, and exit codes are classed: 0 ok, 1 config,
// 2 numerical, 3 i/o. All pipeline work runs in float32; per-image sampling
// chains are seeded with config seed XOR image index so runs are reproducible
// image by image.

namespace indigo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// printf formatting, but routed through std::cout so output is capturable
template <typename... Args>
std::string format(const char* fmt, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

std::string numbered(const char* stem, std::size_t i) {
  return format("%s_%04zu", stem, i);
}

// Sorted *.tnsr paths; zero-padded names make lexicographic order numeric.
std::vector<fs::path> list_tensors(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".tnsr") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("no .tnsr files in " + dir);
  return out;
}

std::vector<Tensor<float>> load_tensor_dir(const std::string& dir) {
  std::vector<Tensor<float>> out;
  for (const fs::path& p : list_tensors(dir)) out.push_back(load_tensor_as<float>(p.string()));
  return out;
}

// The tensor file is the ground truth; the pgm is a rendering for the eye.
void write_image(const std::string& base, const Tensor<float>& t) {
  save_tensor(base + ".tnsr", t);
  if (t.rank() == 3) save_pgm(base + ".pgm", t);
}

void write_resolved(const RunConfig& c) {
  fs::create_directories(c.output_dir);
  write_json_file(c.output_dir + "/config.json", dump_run_config(c));
}

void write_loss_trace(const RunConfig& c, const std::vector<double>& trace) {
  json j;
  j["epoch_loss"] = trace;
  write_json_file(c.output_dir + "/loss.json", j);
  for (std::size_t e = 0; e < trace.size(); ++e)
    std::cout << format("epoch %3zu/%zu  loss %.6f\n", e + 1, trace.size(), trace[e]);
}

void cmd_gen_data(const RunConfig& c) {
  write_resolved(c);
  fs::create_directories(c.output_dir + "/images");
  fs::create_directories(c.output_dir + "/measurements");
  Rng rng(c.dataset.seed);
  const auto pairs = make_pairs<float>(c.dataset, c.degrade, rng);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    write_image(c.output_dir + "/images/" + numbered("img", i), pairs[i].first);
    write_image(c.output_dir + "/measurements/" + numbered("y", i), pairs[i].second);
  }
  std::cout << "wrote " << pairs.size() << " pairs to " << c.output_dir << "\n";
}

void cmd_train_denoiser(const RunConfig& c) {
  if (c.paths.data_dir.empty()) throw ConfigError("train-denoiser needs paths.data_dir");
  write_resolved(c);
  const std::vector<Tensor<float>> images = load_tensor_dir(c.paths.data_dir + "/images");
  std::cout << "training denoiser on " << images.size() << " images, "
            << c.denoiser_train.epochs << " epochs\n";
  Rng rng(c.seed);
  DenoiserModel<float> m = create_denoiser<float>(c.denoiser, rng);
  const std::vector<double> trace =
      train_denoiser(images, m, c.schedule.make(), c.denoiser_train.make(), rng);
  save_denoiser(c.output_dir, m, c.schedule);
  write_loss_trace(c, trace);
  std::cout << "saved denoiser checkpoint to " << c.output_dir << "\n";
}

void cmd_train_winn(const RunConfig& c) {
  if (c.paths.data_dir.empty()) throw ConfigError("train-winn needs paths.data_dir");
  write_resolved(c);
  std::vector<Tensor<float>> xs = load_tensor_dir(c.paths.data_dir + "/images");
  std::vector<Tensor<float>> ys = load_tensor_dir(c.paths.data_dir + "/measurements");
  if (xs.size() != ys.size())
    throw ConfigError(std::to_string(xs.size()) + " images vs " + std::to_string(ys.size()) +
                      " measurements in " + c.paths.data_dir);
  std::vector<std::pair<Tensor<float>, Tensor<float>>> data;
  data.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    data.emplace_back(std::move(xs[i]), std::move(ys[i]));
  std::cout << "training winn on " << data.size() << " pairs, " << c.winn_train.epochs
            << " epochs\n";
  Rng rng(c.seed);
  WinnModel<float> m = create_winn<float>(c.winn, rng);
  const std::vector<double> trace = train_winn(data, m, c.winn_train.make(), rng);
  save_winn(c.output_dir, m);
  write_loss_trace(c, trace);
  std::cout << "saved winn checkpoint to " << c.output_dir << "\n";
}

// Sampling always runs under the schedule stored in the denoiser checkpoint;
// the config's schedule section only drives training.
void cmd_sample(const RunConfig& c) {
  if (c.paths.denoiser_ckpt.empty()) throw ConfigError("sample needs paths.denoiser_ckpt");
  write_resolved(c);
  const auto [m, sched] = load_denoiser<float>(c.paths.denoiser_ckpt);
  const NoiseSchedule s = sched.make();
  fs::create_directories(c.output_dir + "/samples");
  for (std::size_t i = 0; i < c.sample_count; ++i) {
    Rng rng(c.seed ^ i);
    write_image(c.output_dir + "/samples/" + numbered("sample", i),
                unconditional_sample(m, s, rng));
  }
  std::cout << "wrote " << c.sample_count << " samples to " << c.output_dir << "/samples\n";
}

void cmd_solve(const RunConfig& c) {
  if (c.paths.denoiser_ckpt.empty()) throw ConfigError("solve needs paths.denoiser_ckpt");
  if (c.paths.data_dir.empty()) throw ConfigError("solve needs paths.data_dir");
  const bool use_winn = !c.paths.winn_ckpt.empty();
  if (c.task == "indigo" && !use_winn) throw ConfigError("task \"indigo\" needs paths.winn_ckpt");
  write_resolved(c);

  const auto [m, sched] = load_denoiser<float>(c.paths.denoiser_ckpt);
  const NoiseSchedule s = sched.make();
  std::optional<WinnModel<float>> winn;
  if (use_winn) winn = load_winn<float>(c.paths.winn_ckpt);

  const std::vector<fs::path> meas = list_tensors(c.paths.data_dir + "/measurements");
  const std::vector<fs::path> truth = list_tensors(c.paths.data_dir + "/images");
  if (meas.size() != truth.size())
    throw ConfigError(std::to_string(meas.size()) + " measurements vs " +
                      std::to_string(truth.size()) + " images in " + c.paths.data_dir);
  fs::create_directories(c.output_dir + "/recon");

  DegradationOp noise_free = c.degrade;  // the consistency probe never adds noise
  noise_free.noise_sigma = 0.0;

  json per = json::array();
  double sum_psnr = 0.0, sum_cons = 0.0;
  for (std::size_t i = 0; i < meas.size(); ++i) {
    const Tensor<float> y = load_tensor_as<float>(meas[i].string());
    const Tensor<float> x = load_tensor_as<float>(truth[i].string());
    GuidanceConfig gc;
    gc.zeta = c.zeta;
    gc.seed = c.seed ^ i;
    gc.trace_steps = c.trace_steps;
    const SampleResult<float> r = c.task == "indigo" ? indigo_sample(y, m, *winn, s, gc)
                                                     : baseline_sample(y, m, c.degrade, s, gc);
    write_image(c.output_dir + "/recon/" + numbered("recon", i), r.image);
    if (!r.trace.empty()) {
      const std::string tdir = c.output_dir + "/trace/" + numbered("img", i);
      fs::create_directories(tdir);
      for (const TraceSnapshot<float>& snap : r.trace) {
        save_tensor(tdir + "/x0t_" + std::to_string(snap.t) + ".tnsr", snap.x0t);
        save_tensor(tdir + "/ct_" + std::to_string(snap.t) + ".tnsr", snap.ct);
        save_tensor(tdir + "/xhat_" + std::to_string(snap.t) + ".tnsr", snap.xhat);
      }
    }
    const double p = psnr(r.image, x);
    double cons;
    if (use_winn) {
      cons = consistency_residual(r.image, y, *winn);
    } else {
      Rng unused(0);
      cons = std::sqrt(static_cast<double>(
          sum_squares(sub(apply_degradation(noise_free, r.image, unused), y)).value()));
    }
    per.push_back({{"name", meas[i].stem().string()},
                   {"psnr_db", p},
                   {"consistency", cons}});
    sum_psnr += p;
    sum_cons += cons;
    std::cout << format("%s  psnr %6.2f dB  consistency %.4g\n",
                        meas[i].stem().string().c_str(), p, cons);
  }
  const double n = static_cast<double>(meas.size());
  json mj;
  mj["per_image"] = per;
  mj["mean_psnr_db"] = sum_psnr / n;
  mj["mean_consistency"] = sum_cons / n;
  write_json_file(c.output_dir + "/metrics.json", mj);
  std::cout << format("mean psnr %.2f dB, mean consistency %.4g (%zu images)\n", sum_psnr / n,
                      sum_cons / n, meas.size());
}

void cmd_eval(const RunConfig& c) {
  if (c.paths.eval_a.empty() || c.paths.eval_b.empty())
    throw ConfigError("eval needs paths.eval_a and paths.eval_b");
  write_resolved(c);
  const std::vector<fs::path> as = list_tensors(c.paths.eval_a);
  const std::vector<fs::path> bs = list_tensors(c.paths.eval_b);
  if (as.size() != bs.size())
    throw ConfigError("eval: " + std::to_string(as.size()) + " files in " + c.paths.eval_a +
                      " vs " + std::to_string(bs.size()) + " in " + c.paths.eval_b);
  json per = json::array();
  double sum = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double p =
        psnr(load_tensor_as<float>(as[i].string()), load_tensor_as<float>(bs[i].string()));
    per.push_back({{"name", as[i].stem().string()}, {"psnr_db", p}});
    sum += p;
    std::cout << format("%s vs %s  psnr %6.2f dB\n", as[i].stem().string().c_str(),
                        bs[i].stem().string().c_str(), p);
  }
  json j;
  j["per_image"] = per;
  j["mean_psnr_db"] = sum / static_cast<double>(as.size());
  write_json_file(c.output_dir + "/eval.json", j);
  std::cout << format("mean psnr %.2f dB (%zu pairs)\n", sum / static_cast<double>(as.size()),
                      as.size());
}

int cmd_gradcheck(std::uint64_t seed) {
  const std::vector<CheckResult> rs = gradient_check_suite(seed);
  for (const CheckResult& r : rs)
    std::cout << format("%-62s err %.3e  tol %.0e  %s\n", r.name.c_str(), r.err, r.tol,
                        r.pass ? "pass" : "FAIL");
  if (!all_checks_pass(rs)) {
    std::cout << "gradient checks FAILED\n";
    return 2;
  }
  std::cout << "all " << rs.size() << " gradient checks passed\n";
  return 0;
}

}  // namespace

int run_command(int argc, const char* const* argv) {
  CLI::App app{"inn-guided diffusion lab for small synthetic inverse problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  std::string out_override;
  const auto add_common = [&](CLI::App* sc, bool config_required) {
    auto* o = sc->add_option("--config", config_path, "run configuration (json)");
    if (config_required) o->required();
    sc->add_option("--seed", seed_override, "override the config seed");
    sc->add_option("--out", out_override, "override the config output_dir");
  };
  add_common(app.add_subcommand("gen-data", "write a synthetic dataset (images/, measurements/)"),
             true);
  add_common(app.add_subcommand("train-denoiser", "train the noise predictor; out is the checkpoint"),
             true);
  add_common(app.add_subcommand("train-winn", "train the invertible degradation model"), true);
  add_common(app.add_subcommand("sample", "draw unconditional samples from a trained denoiser"),
             true);
  add_common(app.add_subcommand("solve", "reconstruct every measurement in the data dir"), true);
  add_common(app.add_subcommand("eval", "psnr between paired tensor files of two directories"),
             true);
  add_common(app.add_subcommand("gradcheck", "run every finite-difference gradient suite"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() == "gradcheck") {
      std::uint64_t seed = 0;
      if (!config_path.empty()) seed = load_run_config(config_path).seed;
      if (sub->count("--seed")) seed = seed_override;
      return cmd_gradcheck(seed);
    }
    RunConfig c = load_run_config(config_path);
    if (sub->count("--seed")) c.seed = seed_override;
    if (sub->count("--out")) c.output_dir = out_override;
    if (sub->get_name() == "gen-data") cmd_gen_data(c);
    else if (sub->get_name() == "train-denoiser") cmd_train_denoiser(c);
    else if (sub->get_name() == "train-winn") cmd_train_winn(c);
    else if (sub->get_name() == "sample") cmd_sample(c);
    else if (sub->get_name() == "solve") cmd_solve(c);
    else cmd_eval(c);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace indigo
