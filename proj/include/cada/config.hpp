#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cada/adapt.hpp"
#include "cada/segnet.hpp"

namespace cada {

struct DataConfig {
  std::string mode = "synth";  // synth | manifest
  int64_t size = 64;
  int64_t n_source = 200;
  int64_t n_target = 200;
  int64_t n_test = 60;
  double shift = 1.0;
  uint64_t seed = 7;
  std::string source_dir, target_dir, test_dir;  // manifest mode
};

// Full experiment description. Every field has a default; a run directory
// always contains the exact resolved copy.
struct RunConfig {
  SegNetConfig model;

  int64_t epochs = 30;
  int64_t batch_size = 4;
  uint64_t seed = 1;
  double ema_alpha = 0.99;

  double seg_lr = 1e-4;  // SGD with momentum for the segmentation weights
  double seg_momentum = 0.9;
  double disc_lr = 2.5e-5;  // Adam for every discriminator
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double poly_power = 0.9;

  double lambda_seg = 1.0;
  double lambda_adv_e = 0.002;
  double lambda_adv_d = 0.018;
  double lambda_mse_e = 0.057;
  double lambda_mse_d = 0.79;
  double deep_supervision = 0.25;  // weight of each per-scale segmentation loss

  AdaptorFlags flags;

  int64_t checkpoint_every = 5;  // epochs
  DataConfig data;
  std::string out_dir = "runs/default";
  std::string init_from;  // optional checkpoint to start the student from

  Lambdas<float> lambdas() const {
    Lambdas<float> l;
    l.seg = static_cast<float>(lambda_seg);
    l.adv_e = static_cast<float>(lambda_adv_e);
    l.adv_d = static_cast<float>(lambda_adv_d);
    l.mse_e = static_cast<float>(lambda_mse_e);
    l.mse_d = static_cast<float>(lambda_mse_d);
    return l;
  }

  void validate() const {
    model.validate();
    lambdas().validate();
    flags.validate();
    require(epochs >= 1, "RunConfig: epochs must be >= 1");
    require(batch_size >= 1, "RunConfig: batch_size must be >= 1");
    require(ema_alpha >= 0.0 && ema_alpha <= 1.0, "RunConfig: ema_alpha must lie in [0,1]");
    require(checkpoint_every >= 1, "RunConfig: checkpoint_every must be >= 1");
    require(data.mode == "synth" || data.mode == "manifest",
            "RunConfig: data.mode must be 'synth' or 'manifest'");
    require(data.size == model.input_size,
            "RunConfig: data.size must equal model.input_size");
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t x = std::stoll(v, &used);
    require(used == v.size(), "");
    return x;
  } catch (...) {
    fail("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    require(used == v.size(), "");
    return x;
  } catch (...) {
    fail("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::vector<ConfigField>& config_fields() {
  auto int_field = [](std::string key, auto member) {
    return ConfigField{
        key,
        [member](const RunConfig& c) { return std::to_string(c.*member); },
        [member, key](RunConfig& c, const std::string& v) {
          c.*member = parse_int(key, v);
        }};
  };
  auto dbl_field = [](std::string key, auto member) {
    return ConfigField{
        key,
        [member](const RunConfig& c) { return fmt_double(c.*member); },
        [member, key](RunConfig& c, const std::string& v) {
          c.*member = parse_double(key, v);
        }};
  };
  auto str_field = [](std::string key, auto member) {
    return ConfigField{key, [member](const RunConfig& c) { return c.*member; },
                       [member](RunConfig& c, const std::string& v) { c.*member = v; }};
  };
  static const std::vector<ConfigField> fields = {
      {"model.base_channels",
       [](const RunConfig& c) { return std::to_string(c.model.base_channels); },
       [](RunConfig& c, const std::string& v) {
         c.model.base_channels = parse_int("model.base_channels", v);
       }},
      {"model.input_size",
       [](const RunConfig& c) { return std::to_string(c.model.input_size); },
       [](RunConfig& c, const std::string& v) {
         c.model.input_size = parse_int("model.input_size", v);
       }},
      int_field("train.epochs", &RunConfig::epochs),
      int_field("train.batch_size", &RunConfig::batch_size),
      {"train.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) {
         c.seed = static_cast<uint64_t>(parse_int("train.seed", v));
       }},
      dbl_field("train.ema_alpha", &RunConfig::ema_alpha),
      dbl_field("train.seg_lr", &RunConfig::seg_lr),
      dbl_field("train.seg_momentum", &RunConfig::seg_momentum),
      dbl_field("train.disc_lr", &RunConfig::disc_lr),
      dbl_field("train.adam_beta1", &RunConfig::adam_beta1),
      dbl_field("train.adam_beta2", &RunConfig::adam_beta2),
      dbl_field("train.adam_eps", &RunConfig::adam_eps),
      dbl_field("train.poly_power", &RunConfig::poly_power),
      dbl_field("train.deep_supervision", &RunConfig::deep_supervision),
      int_field("train.checkpoint_every", &RunConfig::checkpoint_every),
      dbl_field("lambda.seg", &RunConfig::lambda_seg),
      dbl_field("lambda.adv_e", &RunConfig::lambda_adv_e),
      dbl_field("lambda.adv_d", &RunConfig::lambda_adv_d),
      dbl_field("lambda.mse_e", &RunConfig::lambda_mse_e),
      dbl_field("lambda.mse_d", &RunConfig::lambda_mse_d),
      {"adapt.enc_enabled",
       [](const RunConfig& c) { return c.flags.enc_enabled ? "true" : "false"; },
       [](RunConfig& c, const std::string& v) {
         c.flags.enc_enabled = parse_bool("adapt.enc_enabled", v);
       }},
      {"adapt.se_enabled",
       [](const RunConfig& c) { return c.flags.se_enabled ? "true" : "false"; },
       [](RunConfig& c, const std::string& v) {
         c.flags.se_enabled = parse_bool("adapt.se_enabled", v);
       }},
      {"adapt.dec_enabled",
       [](const RunConfig& c) { return c.flags.dec_enabled ? "true" : "false"; },
       [](RunConfig& c, const std::string& v) {
         c.flags.dec_enabled = parse_bool("adapt.dec_enabled", v);
       }},
      {"adapt.num_dec_discs",
       [](const RunConfig& c) { return std::to_string(c.flags.num_dec_discs); },
       [](RunConfig& c, const std::string& v) {
         c.flags.num_dec_discs = static_cast<int>(parse_int("adapt.num_dec_discs", v));
       }},
      {"data.mode", [](const RunConfig& c) { return c.data.mode; },
       [](RunConfig& c, const std::string& v) { c.data.mode = v; }},
      {"data.size", [](const RunConfig& c) { return std::to_string(c.data.size); },
       [](RunConfig& c, const std::string& v) {
         c.data.size = parse_int("data.size", v);
       }},
      {"data.n_source", [](const RunConfig& c) { return std::to_string(c.data.n_source); },
       [](RunConfig& c, const std::string& v) {
         c.data.n_source = parse_int("data.n_source", v);
       }},
      {"data.n_target", [](const RunConfig& c) { return std::to_string(c.data.n_target); },
       [](RunConfig& c, const std::string& v) {
         c.data.n_target = parse_int("data.n_target", v);
       }},
      {"data.n_test", [](const RunConfig& c) { return std::to_string(c.data.n_test); },
       [](RunConfig& c, const std::string& v) {
         c.data.n_test = parse_int("data.n_test", v);
       }},
      {"data.shift", [](const RunConfig& c) { return fmt_double(c.data.shift); },
       [](RunConfig& c, const std::string& v) {
         c.data.shift = parse_double("data.shift", v);
       }},
      {"data.seed", [](const RunConfig& c) { return std::to_string(c.data.seed); },
       [](RunConfig& c, const std::string& v) {
         c.data.seed = static_cast<uint64_t>(parse_int("data.seed", v));
       }},
      {"data.source_dir", [](const RunConfig& c) { return c.data.source_dir; },
       [](RunConfig& c, const std::string& v) { c.data.source_dir = v; }},
      {"data.target_dir", [](const RunConfig& c) { return c.data.target_dir; },
       [](RunConfig& c, const std::string& v) { c.data.target_dir = v; }},
      {"data.test_dir", [](const RunConfig& c) { return c.data.test_dir; },
       [](RunConfig& c, const std::string& v) { c.data.test_dir = v; }},
      str_field("run.out_dir", &RunConfig::out_dir),
      str_field("run.init_from", &RunConfig::init_from),
  };
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  fail("config: unknown key '" + key + "'");
}

// Flat `key = value` text; '#' starts a comment.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + " is not 'key = value'");
    config_set(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  require(f.good(), "config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_run_config(buf.str(), std::move(base));
}

// Canonical serialization (fixed key order) used for resolved-config copies
// and checkpoint embedding.
inline std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(cfg) << '\n';
  return os.str();
}

}  // namespace cada
