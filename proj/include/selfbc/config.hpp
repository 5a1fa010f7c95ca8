#pragma once

// Run configuration: a flat JSON object. Every key has a default; unknown
// keys and bad values are collected and reported together.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfbc/envs.hpp"
#include "selfbc/error.hpp"
#include "selfbc/trainers.hpp"

namespace selfbc {

using nlohmann::json;

class ConfigError : public InvalidInput {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : InvalidInput(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid config:";
    for (const auto& x : p) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

inline const std::vector<std::string>& known_commands() {
  static const std::vector<std::string> c{"gen-data",        "pretrain",      "train-selfbc", "train-esbc",
                                          "sweep-beta",      "sweep-scale-ref", "verify-theory", "eval",
                                          "export-curves"};
  return c;
}

inline const std::vector<double>& default_beta_grid() {
  static const std::vector<double> g{1.0, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.01, 0.005};
  return g;
}

inline const std::vector<double>& default_scale_ref_grid() {
  static const std::vector<double> g{1.0, 0.1, 0.01, 0.001};
  return g;
}

namespace config_detail {

enum class Kind { kNumber, kUnsigned, kBool, kString, kNumberList, kUnsignedList, kStringList };

using Check = std::function<std::optional<std::string>(const json&)>;

struct KeySpec {
  std::string name;
  Kind kind;
  json default_value;
  Check check;
};

inline bool kind_matches(Kind k, const json& v) {
  auto is_unsigned = [](const json& x) { return x.is_number_unsigned() || (x.is_number_integer() && x.get<long long>() >= 0); };
  switch (k) {
    case Kind::kNumber: return v.is_number();
    case Kind::kUnsigned: return is_unsigned(v);
    case Kind::kBool: return v.is_boolean();
    case Kind::kString: return v.is_string();
    case Kind::kNumberList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
    case Kind::kUnsignedList: return v.is_array() && std::all_of(v.begin(), v.end(), is_unsigned);
    case Kind::kStringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_string(); });
  }
  return false;
}

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kNumber: return "a number";
    case Kind::kUnsigned: return "a nonnegative integer";
    case Kind::kBool: return "a boolean";
    case Kind::kString: return "a string";
    case Kind::kNumberList: return "a list of numbers";
    case Kind::kUnsignedList: return "a list of nonnegative integers";
    case Kind::kStringList: return "a list of strings";
  }
  return "?";
}

inline Check range(double lo, double hi, bool lo_open, bool hi_open) {
  return [=](const json& v) -> std::optional<std::string> {
    const double x = v.get<double>();
    const bool ok = (lo_open ? x > lo : x >= lo) && (hi_open ? x < hi : x <= hi);
    if (ok) return std::nullopt;
    return "must lie in " + std::string(lo_open ? "(" : "[") + format_double(lo) + ", " + format_double(hi) +
           (hi_open ? ")" : "]");
  };
}

inline Check positive() {
  return [](const json& v) -> std::optional<std::string> {
    if (v.get<double>() > 0) return std::nullopt;
    return "must be positive";
  };
}

inline Check at_least(std::uint64_t lo) {
  return [=](const json& v) -> std::optional<std::string> {
    if (v.get<std::uint64_t>() >= lo) return std::nullopt;
    return "must be at least " + std::to_string(lo);
  };
}

inline Check one_of(std::vector<std::string> allowed) {
  return [=](const json& v) -> std::optional<std::string> {
    const auto s = v.get<std::string>();
    for (const auto& a : allowed) {
      if (a == s) return std::nullopt;
    }
    std::string msg = "must be one of";
    for (const auto& a : allowed) msg += " " + a;
    return msg;
  };
}

inline Check each(Check inner) {
  return [=](const json& v) -> std::optional<std::string> {
    for (const auto& x : v) {
      if (auto e = inner(x)) return "every entry " + *e;
    }
    return std::nullopt;
  };
}

inline const std::vector<KeySpec>& schema() {
  const TrainerConfig d;
  static const std::vector<KeySpec> s{
      {"command", Kind::kString, "", one_of(known_commands())},
      {"seed", Kind::kUnsigned, 0, nullptr},
      {"seeds", Kind::kUnsignedList, json::array({0, 1, 2}), nullptr},
      {"dataset", Kind::kString, "", nullptr},
      {"output_dir", Kind::kString, "", nullptr},
      {"checkpoint", Kind::kString, "", nullptr},
      {"checkpoints", Kind::kStringList, json::array(), nullptr},
      {"behavior", Kind::kString, "medium", one_of({"expert", "medium", "random"})},
      {"n_transitions", Kind::kUnsigned, 100000, at_least(1000)},
      {"grid", Kind::kNumberList, json::array(), nullptr},
      {"instances", Kind::kUnsigned, 100, at_least(1)},
      {"kappas", Kind::kNumberList, json::array({5e-6, 5e-5, 1e-3, 0.1, 0.5, 1.0}), each(range(0, 1, false, false))},
      {"runs", Kind::kStringList, json::array(), nullptr},
      {"alpha", Kind::kNumber, d.alpha, positive()},
      {"beta", Kind::kNumber, d.beta, range(0, 1, true, false)},
      {"tau", Kind::kNumber, d.tau, range(0, 1, true, false)},
      {"scale_ref", Kind::kNumber, d.scale_ref, range(0, 1, false, false)},
      {"policy_noise", Kind::kNumber, d.policy_noise, range(0, 1e9, false, false)},
      {"noise_clip", Kind::kNumber, d.noise_clip, range(0, 1e9, false, false)},
      {"policy_update_frequency", Kind::kUnsigned, d.policy_update_frequency, at_least(1)},
      {"batch_size", Kind::kUnsigned, d.batch_size, at_least(1)},
      {"gamma", Kind::kNumber, d.gamma, range(0, 1, false, true)},
      {"n_bc", Kind::kUnsigned, d.n_bc, nullptr},
      {"n_ebc", Kind::kUnsigned, d.n_ebc, nullptr},
      {"n_selfbc", Kind::kUnsigned, d.n_selfbc, nullptr},
      {"n_ens", Kind::kUnsigned, d.n_ens, at_least(1)},
      {"use_ema", Kind::kBool, d.use_ema, nullptr},
      {"reference_init", Kind::kString, to_string(d.reference_init), one_of({"pretrained", "behavior"})},
      {"pretrainer", Kind::kString, to_string(d.pretrainer), one_of({"bc", "td3bc", "td3ebc"})},
      {"hidden_sizes", Kind::kUnsignedList, d.hidden_sizes, each(at_least(1))},
      {"lr", Kind::kNumber, d.lr, positive()},
      {"critic_layer_norm", Kind::kBool, d.critic_layer_norm, nullptr},
      {"done_is_timeout", Kind::kBool, d.done_is_timeout, nullptr},
      {"eval_every", Kind::kUnsigned, d.eval_every, nullptr},
      {"eval_episodes", Kind::kUnsigned, d.eval_episodes, at_least(1)},
      {"record_wall_time", Kind::kBool, d.record_wall_time, nullptr},
  };
  return s;
}

}  // namespace config_detail

/// Fills defaults and validates. Throws ConfigError naming every bad key.
inline json resolve_config(const json& user) {
  using namespace config_detail;
  if (!user.is_object()) throw ConfigError({"config must be a JSON object"});
  std::vector<std::string> problems;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const bool known = std::any_of(schema().begin(), schema().end(), [&](const KeySpec& k) { return k.name == it.key(); });
    if (!known) problems.push_back(it.key() + ": unknown key");
  }
  json out = json::object();
  for (const auto& k : schema()) {
    const json v = user.contains(k.name) ? user.at(k.name) : k.default_value;
    if (!kind_matches(k.kind, v)) {
      problems.push_back(k.name + ": must be " + kind_name(k.kind));
      continue;
    }
    if (k.check) {
      if (auto e = k.check(v)) {
        problems.push_back(k.name + ": " + *e);
        continue;
      }
    }
    out[k.name] = v;
  }
  if (problems.empty()) {
    const std::string cmd = out["command"];
    if (cmd.empty()) problems.push_back("command: must be set");
    if (out["grid"].empty()) {
      if (cmd == "sweep-beta") out["grid"] = default_beta_grid();
      if (cmd == "sweep-scale-ref") out["grid"] = default_scale_ref_grid();
    }
    for (const auto& g : out["grid"]) {
      const double x = g.get<double>();
      if (cmd == "sweep-beta" && !(x > 0 && x <= 1)) problems.push_back("grid: beta values must lie in (0, 1]");
      if (cmd == "sweep-scale-ref" && !(x >= 0 && x <= 1)) problems.push_back("grid: scale_ref values must lie in [0, 1]");
    }
    if (out["seeds"].empty()) problems.push_back("seeds: must be nonempty");
    if (out["hidden_sizes"].empty()) problems.push_back("hidden_sizes: must be nonempty");
    if (out["policy_update_frequency"].get<std::uint64_t>() > 1000000) {
      problems.push_back("policy_update_frequency: must be at most 1000000");
    }
    if (out["n_ens"].get<std::uint64_t>() > 64) problems.push_back("n_ens: must be at most 64");
  }
  if (!problems.empty()) throw ConfigError(problems);
  return out;
}

inline TrainerConfig trainer_config_from(const json& c) {
  TrainerConfig t;
  t.alpha = c.at("alpha");
  t.beta = c.at("beta");
  t.tau = c.at("tau");
  t.scale_ref = c.at("scale_ref");
  t.policy_noise = c.at("policy_noise");
  t.noise_clip = c.at("noise_clip");
  t.policy_update_frequency = c.at("policy_update_frequency").get<int>();
  t.batch_size = c.at("batch_size");
  t.gamma = c.at("gamma");
  t.n_bc = c.at("n_bc");
  t.n_ebc = c.at("n_ebc");
  t.n_selfbc = c.at("n_selfbc");
  t.n_ens = c.at("n_ens").get<int>();
  t.use_ema = c.at("use_ema");
  t.reference_init = reference_init_from_string(c.at("reference_init"));
  t.pretrainer = pretrainer_from_string(c.at("pretrainer"));
  t.hidden_sizes = c.at("hidden_sizes").get<std::vector<int>>();
  t.lr = c.at("lr");
  t.critic_layer_norm = c.at("critic_layer_norm");
  t.done_is_timeout = c.at("done_is_timeout");
  t.eval_every = c.at("eval_every");
  t.eval_episodes = c.at("eval_episodes").get<int>();
  t.record_wall_time = c.at("record_wall_time");
  t.validate();
  return t;
}

}  // namespace selfbc
