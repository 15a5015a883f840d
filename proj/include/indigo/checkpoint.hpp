#pragma once

#include <filesystem>

#include "indigo/config.hpp"
#include "indigo/io.hpp"

// Model checkpoints: a directory holding manifest.json (kind, architecture,
// schedule for denoisers, and a named-tensor list) plus one tensor file per
// parameter. Loading rebuilds the architecture, then overwrites every
// parameter by name, so a loaded model evaluates bitwise like the saved one.

namespace indigo {

namespace detail {

template <typename S>
nlohmann::json param_manifest(const ParamSet<S>& p) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    char file[16];
    std::snprintf(file, sizeof(file), "p%04zu.tnsr", i);
    list.push_back({{"name", p.item(i).name}, {"file", file}, {"shape", p.item(i).value.shape()}});
  }
  return list;
}

template <typename S>
void save_param_files(const std::string& dir, const ParamSet<S>& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    char file[16];
    std::snprintf(file, sizeof(file), "p%04zu.tnsr", i);
    save_tensor(dir + "/" + file, p.item(i).value);
  }
}

inline nlohmann::json read_manifest(const std::string& dir, const char* want_kind) {
  const std::string path = dir + "/manifest.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw IoError(path + ": missing \"kind\"");
  const std::string kind = j["kind"].get<std::string>();
  if (kind != want_kind)
    throw ConfigError("checkpoint at " + dir + " holds a " + kind + ", wanted a " + want_kind);
  return j;
}

template <typename S>
void check_manifest_dtype(const nlohmann::json& j, const std::string& dir) {
  const std::string want = dtype_code<S>() == 1 ? "float32" : "float64";
  const std::string got = j.value("dtype", "");
  if (got != want)
    throw ConfigError("checkpoint at " + dir + " holds " + got + " parameters, wanted " + want);
}

template <typename S>
void load_param_files(const std::string& dir, const nlohmann::json& manifest, ParamSet<S>& p) {
  const std::string path = dir + "/manifest.json";
  if (!manifest.contains("params") || !manifest["params"].is_array())
    throw IoError(path + ": missing \"params\"");
  const auto& list = manifest["params"];
  if (list.size() != p.size())
    throw IoError(path + ": " + std::to_string(list.size()) + " parameters for an architecture with " +
                  std::to_string(p.size()));
  std::vector<bool> filled(p.size(), false);
  try {
    for (const auto& e : list) {
      if (!e.is_object() || !e.contains("name") || !e.contains("file") || !e.contains("shape"))
        throw IoError(path + ": malformed params entry");
      const std::string name = e["name"].get<std::string>();
      std::size_t slot = p.size();
      for (std::size_t i = 0; i < p.size(); ++i)
        if (p.item(i).name == name) slot = i;
      if (slot == p.size())
        throw IoError(path + ": parameter \"" + name + "\" does not match the architecture");
      if (filled[slot]) throw IoError(path + ": duplicate parameter \"" + name + "\"");
      const Shape shape = e["shape"].get<Shape>();
      Tensor<S> v = load_tensor_as<S>(dir + "/" + e["file"].get<std::string>());
      if (v.shape() != shape || v.shape() != p.item(slot).value.shape())
        throw IoError(path + ": parameter \"" + name + "\" shape " + shape_str(v.shape()) +
                      " does not match manifest " + shape_str(shape) + " / architecture " +
                      shape_str(p.item(slot).value.shape()));
      p.item(slot).value = std::move(v);
      filled[slot] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace detail

template <typename S>
void save_denoiser(const std::string& dir, const DenoiserModel<S>& m, const ScheduleConfig& sched) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["kind"] = "denoiser";
  j["dtype"] = detail::dtype_code<S>() == 1 ? "float32" : "float64";
  j["arch"] = {{"channels", m.cfg.channels},
               {"height", m.cfg.height},
               {"width", m.cfg.width},
               {"base_channels", m.cfg.base_channels},
               {"time_embed_dim", m.cfg.time_embed_dim}};
  j["schedule"] = {{"steps", sched.steps},
                   {"beta_start", sched.beta_start},
                   {"beta_end", sched.beta_end}};
  j["params"] = detail::param_manifest(m.params);
  write_json_file(dir + "/manifest.json", j);
  detail::save_param_files(dir, m.params);
}

template <typename S>
std::pair<DenoiserModel<S>, ScheduleConfig> load_denoiser(const std::string& dir) {
  const nlohmann::json j = detail::read_manifest(dir, "denoiser");
  detail::check_manifest_dtype<S>(j, dir);
  DenoiserConfig cfg;
  ScheduleConfig sched;
  try {
    detail::JsonReader a(j.at("arch"), "arch");
    a.get("channels", cfg.channels);
    a.get("height", cfg.height);
    a.get("width", cfg.width);
    a.get("base_channels", cfg.base_channels);
    a.get("time_embed_dim", cfg.time_embed_dim);
    a.finish();
    detail::JsonReader s(j.at("schedule"), "schedule");
    s.get("steps", sched.steps);
    s.get("beta_start", sched.beta_start);
    s.get("beta_end", sched.beta_end);
    s.finish();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
  Rng rng(0);
  DenoiserModel<S> m = create_denoiser<S>(cfg, rng);
  detail::load_param_files(dir, j, m.params);
  return {std::move(m), sched};
}

template <typename S>
void save_winn(const std::string& dir, const WinnModel<S>& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["kind"] = "winn";
  j["dtype"] = detail::dtype_code<S>() == 1 ? "float32" : "float64";
  j["arch"] = {{"channels", m.cfg.channels}, {"levels", m.cfg.levels},
               {"pairs", m.cfg.pairs},       {"res_blocks", m.cfg.res_blocks},
               {"width", m.cfg.width},       {"kernel", m.cfg.kernel}};
  j["params"] = detail::param_manifest(m.params);
  write_json_file(dir + "/manifest.json", j);
  detail::save_param_files(dir, m.params);
}

template <typename S>
WinnModel<S> load_winn(const std::string& dir) {
  const nlohmann::json j = detail::read_manifest(dir, "winn");
  detail::check_manifest_dtype<S>(j, dir);
  WinnConfig cfg;
  try {
    detail::JsonReader a(j.at("arch"), "arch");
    a.get("channels", cfg.channels);
    a.get("levels", cfg.levels);
    a.get("pairs", cfg.pairs);
    a.get("res_blocks", cfg.res_blocks);
    a.get("width", cfg.width);
    a.get("kernel", cfg.kernel);
    a.finish();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
  Rng rng(0);
  WinnModel<S> m = create_winn<S>(cfg, rng);
  detail::load_param_files(dir, j, m.params);
  return m;
}

}  // namespace indigo
