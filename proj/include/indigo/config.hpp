#pragma once

#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

#include "indigo/degrade.hpp"
#include "indigo/denoiser.hpp"
#include "indigo/schedule.hpp"
#include "indigo/winn.hpp"
#include "json.hpp"

// Run configuration: one strict JSON document per invocation. Parsing is
// closed-world — any key the schema does not define is rejected by its full
// dotted path — and every command writes the fully resolved config beside its
// outputs so a run can be reproduced from its output directory alone.

namespace indigo {

struct ScheduleConfig {
  int steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule make() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct TrainSection {
  int epochs = 30;
  std::string optimizer = "adam";
  double lr = 1e-3;

  TrainConfig make() const {
    TrainConfig t;
    t.epochs = epochs;
    if (optimizer == "adam")
      t.opt.kind = OptimizerConfig::Kind::kAdam;
    else if (optimizer == "sgd")
      t.opt.kind = OptimizerConfig::Kind::kSgd;
    else
      throw ConfigError("unknown optimizer \"" + optimizer + "\" (want adam or sgd)");
    t.opt.lr = lr;
    if (epochs < 1) throw ConfigError("train epochs must be >= 1");
    if (lr <= 0) throw ConfigError("train lr must be > 0");
    return t;
  }
};

struct PathsSection {
  std::string data_dir;
  std::string denoiser_ckpt;
  std::string winn_ckpt;
  std::string eval_a;
  std::string eval_b;
};

struct RunConfig {
  std::string task = "indigo";  // solver used by `solve`: indigo | baseline
  std::uint64_t seed = 0;
  double zeta = 0.5;
  std::string output_dir = "out";
  std::size_t sample_count = 4;
  std::vector<int> trace_steps;
  DatasetSpec dataset;
  DegradationOp degrade;
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  TrainSection denoiser_train{80, "adam", 1e-3};
  WinnConfig winn;
  TrainSection winn_train{30, "adam", 2e-3};
  PathsSection paths;

  void validate() const {
    if (task != "indigo" && task != "baseline")
      throw ConfigError("task must be \"indigo\" or \"baseline\", got \"" + task + "\"");
    if (zeta < 0) throw ConfigError("zeta must be >= 0");
    if (sample_count < 1) throw ConfigError("sample_count must be >= 1");
    if (schedule.steps < 1) throw ConfigError("schedule.steps must be >= 1");
    dataset.validate();
    degrade.validate();
  }
};

namespace detail {

// Closed-world view of one JSON object: every known key is consumed through a
// typed getter, finish() rejects whatever is left, naming its dotted path.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config key " + path_ + ": expected an object");
  }

  void get(const char* key, std::string& out) {
    if (!mark(key)) return;
    const auto& v = (*j_)[key];
    if (!v.is_string()) fail(key, "a string");
    out = v.get<std::string>();
  }

  void get(const char* key, double& out) {
    if (!mark(key)) return;
    const auto& v = (*j_)[key];
    if (!v.is_number()) fail(key, "a number");
    out = v.get<double>();
  }

  void get(const char* key, int& out) {
    if (!mark(key)) return;
    const auto& v = (*j_)[key];
    if (!v.is_number_integer()) fail(key, "an integer");
    out = v.get<int>();
  }

  // one template covers size_t and uint64_t whether or not they are the
  // same type on the platform
  template <typename U>
    requires std::unsigned_integral<U> && (!std::same_as<U, bool>)
  void get(const char* key, U& out) {
    std::uint64_t u = 0;
    if (!get_u64(key, u)) return;
    out = static_cast<U>(u);
  }

  void get(const char* key, std::vector<int>& out) {
    if (!mark(key)) return;
    const auto& v = (*j_)[key];
    if (!v.is_array()) fail(key, "an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(key, "an array of integers");
      out.push_back(e.get<int>());
    }
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    if (!mark(key)) return;
    JsonReader sub((*j_)[key], join(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + join(it.key().c_str()));
  }

 private:
  bool mark(const char* key) {
    seen_.insert(key);
    return j_->contains(key);
  }

  bool get_u64(const char* key, std::uint64_t& out) {
    if (!mark(key)) return false;
    const auto& v = (*j_)[key];
    if (v.is_number_unsigned())
      out = v.get<std::uint64_t>();
    else if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
      out = static_cast<std::uint64_t>(v.get<std::int64_t>());
    else
      fail(key, "a non-negative integer");
    return true;
  }

  std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const char* key, const char* want) const {
    throw ConfigError("config key " + join(key) + ": expected " + want);
  }

  const nlohmann::json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_train(JsonReader& r, TrainSection& t) {
  r.get("epochs", t.epochs);
  r.get("optimizer", t.optimizer);
  r.get("lr", t.lr);
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  RunConfig c;
  detail::JsonReader r(j, "");
  r.get("task", c.task);
  r.get("seed", c.seed);
  r.get("zeta", c.zeta);
  r.get("output_dir", c.output_dir);
  r.get("sample_count", c.sample_count);
  r.get("trace_steps", c.trace_steps);
  r.section("dataset", [&](detail::JsonReader& d) {
    d.get("count", c.dataset.count);
    d.get("channels", c.dataset.channels);
    d.get("height", c.dataset.height);
    d.get("width", c.dataset.width);
    d.get("seed", c.dataset.seed);
  });
  r.section("degradation", [&](detail::JsonReader& d) {
    std::string kind = degradation_name(c.degrade.kind);
    d.get("kind", kind);
    c.degrade.kind = degradation_kind(kind);
    d.get("factor", c.degrade.factor);
    d.get("radius", c.degrade.radius);
    d.get("block", c.degrade.block);
    d.get("qstep", c.degrade.qstep);
    d.get("noise_sigma", c.degrade.noise_sigma);
  });
  r.section("schedule", [&](detail::JsonReader& d) {
    d.get("steps", c.schedule.steps);
    d.get("beta_start", c.schedule.beta_start);
    d.get("beta_end", c.schedule.beta_end);
  });
  r.section("denoiser", [&](detail::JsonReader& d) {
    d.get("base_channels", c.denoiser.base_channels);
    d.get("time_embed_dim", c.denoiser.time_embed_dim);
    d.section("train", [&](detail::JsonReader& t) { detail::read_train(t, c.denoiser_train); });
  });
  r.section("winn", [&](detail::JsonReader& d) {
    d.get("levels", c.winn.levels);
    d.get("pairs", c.winn.pairs);
    d.get("res_blocks", c.winn.res_blocks);
    d.get("width", c.winn.width);
    d.get("kernel", c.winn.kernel);
    d.section("train", [&](detail::JsonReader& t) { detail::read_train(t, c.winn_train); });
  });
  r.section("paths", [&](detail::JsonReader& d) {
    d.get("data_dir", c.paths.data_dir);
    d.get("denoiser_ckpt", c.paths.denoiser_ckpt);
    d.get("winn_ckpt", c.paths.winn_ckpt);
    d.get("eval_a", c.paths.eval_a);
    d.get("eval_b", c.paths.eval_b);
  });
  r.finish();
  // image geometry comes from the dataset section; the model sections carry
  // only genuine hyperparameters
  c.denoiser.channels = c.dataset.channels;
  c.denoiser.height = c.dataset.height;
  c.denoiser.width = c.dataset.width;
  c.winn.channels = c.dataset.channels;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), path);
}

inline nlohmann::json dump_run_config(const RunConfig& c) {
  nlohmann::json j;
  j["task"] = c.task;
  j["seed"] = c.seed;
  j["zeta"] = c.zeta;
  j["output_dir"] = c.output_dir;
  j["sample_count"] = c.sample_count;
  j["trace_steps"] = c.trace_steps;
  j["dataset"] = {{"count", c.dataset.count},
                  {"channels", c.dataset.channels},
                  {"height", c.dataset.height},
                  {"width", c.dataset.width},
                  {"seed", c.dataset.seed}};
  j["degradation"] = {{"kind", degradation_name(c.degrade.kind)}, {"factor", c.degrade.factor},
                      {"radius", c.degrade.radius},               {"block", c.degrade.block},
                      {"qstep", c.degrade.qstep},                 {"noise_sigma", c.degrade.noise_sigma}};
  j["schedule"] = {{"steps", c.schedule.steps},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  auto train = [](const TrainSection& t) {
    return nlohmann::json{{"epochs", t.epochs}, {"optimizer", t.optimizer}, {"lr", t.lr}};
  };
  j["denoiser"] = {{"base_channels", c.denoiser.base_channels},
                   {"time_embed_dim", c.denoiser.time_embed_dim},
                   {"train", train(c.denoiser_train)}};
  j["winn"] = {{"levels", c.winn.levels}, {"pairs", c.winn.pairs}, {"res_blocks", c.winn.res_blocks},
               {"width", c.winn.width},   {"kernel", c.winn.kernel}, {"train", train(c.winn_train)}};
  j["paths"] = {{"data_dir", c.paths.data_dir},
                {"denoiser_ckpt", c.paths.denoiser_ckpt},
                {"winn_ckpt", c.paths.winn_ckpt},
                {"eval_a", c.paths.eval_a},
                {"eval_b", c.paths.eval_b}};
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
  f.flush();
  if (!f) throw IoError("write failed on " + path);
}

}  // namespace indigo
