#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/attention.hpp"
#include "prunekit/controller.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/optimizer.hpp"
#include "prunekit/pruning.hpp"

namespace prunekit {

constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  std::string arch = "toy2";
  DatasetSpec dataset;
  SgdConfig sgd;
  int total_epochs = 0;
  int batch_size = 64;
  double rewind_fraction = 0.6;
  bool rewind_weights = false;
  Policy policy;
  ControllerConfig controller;
  AttentionConfig attention;
  PruneMetric prune_metric = PruneMetric::Params;
  uint64_t seed = 42;
  int max_rounds = 100;
  std::string out_dir = "runs";

  void validate() const {
    if (total_epochs < 2) throw ConfigError("train.total_epochs must be >= 2");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(rewind_fraction > 0.0 && rewind_fraction < 1.0))
      throw ConfigError("rewind.fraction must be in (0, 1)");
    if (max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
    dataset.validate();
    sgd.validate();
    policy.validate();
    controller.validate();
    attention.validate();
  }
};

namespace cfgdetail {

using nlohmann::json;

// Collects every key not in `allowed`, reported as full dotted paths so a
// typo points at itself rather than at "invalid config".
inline void check_keys(const json& obj, const std::string& prefix,
                       const std::vector<std::string>& allowed,
                       std::vector<std::string>& unknown) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const std::string& a : allowed) ok = ok || a == key;
    if (!ok) unknown.push_back(prefix.empty() ? key : prefix + "." + key);
  }
}

inline const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline std::string path_join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

template <typename T>
T number_at(const json& obj, const std::string& prefix, const std::string& key,
            T fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number())
    throw ConfigError(path_join(prefix, key) + " must be a number");
  return v->get<T>();
}

inline bool bool_at(const json& obj, const std::string& prefix,
                    const std::string& key, bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean())
    throw ConfigError(path_join(prefix, key) + " must be a boolean");
  return v->get<bool>();
}

inline std::string string_at(const json& obj, const std::string& prefix,
                             const std::string& key, const std::string& fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string())
    throw ConfigError(path_join(prefix, key) + " must be a string");
  return v->get<std::string>();
}

inline const json& object_at(const json& obj, const std::string& key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError("config missing required key " + key);
  if (!v->is_object()) throw ConfigError(key + " must be an object");
  return *v;
}

}  // namespace cfgdetail

// Parses one dataset object (the config's `dataset` section; also accepted
// standalone by `eval --dataset`). Unknown keys land in `unknown`.
inline DatasetSpec parse_dataset_spec(const nlohmann::json& d,
                                      std::vector<std::string>& unknown) {
  using namespace cfgdetail;
  if (!d.is_object()) throw ConfigError("dataset must be an object");
  check_keys(d, "dataset",
             {"source", "dir", "train_size", "test_size", "classes", "channels",
              "height", "width", "augment_crop", "augment_flip", "crop_pad",
              "noise_sigma"},
             unknown);
  DatasetSpec spec;
  const std::string source = string_at(d, "dataset", "source", "synthetic_blobs");
  if (source == "synthetic_blobs")
    spec.source = DataSource::SyntheticBlobs;
  else if (source == "cifar10_binary_dir") {
    spec.source = DataSource::Cifar10BinaryDir;
    // cifar geometry is fixed; fill it in so configs stay terse
    spec.classes = 10;
    spec.channels = 3;
    spec.height = 32;
    spec.width = 32;
  } else
    throw ConfigError(
        "dataset.source must be synthetic_blobs or cifar10_binary_dir (got \"" +
        source + "\")");
  spec.dir = string_at(d, "dataset", "dir", spec.dir);
  spec.train_size = number_at<int>(d, "dataset", "train_size", spec.train_size);
  spec.test_size = number_at<int>(d, "dataset", "test_size", spec.test_size);
  spec.classes = number_at<int>(d, "dataset", "classes", spec.classes);
  spec.channels = number_at<int>(d, "dataset", "channels", spec.channels);
  spec.height = number_at<int>(d, "dataset", "height", spec.height);
  spec.width = number_at<int>(d, "dataset", "width", spec.width);
  spec.augment_crop = bool_at(d, "dataset", "augment_crop", spec.augment_crop);
  spec.augment_flip = bool_at(d, "dataset", "augment_flip", spec.augment_flip);
  spec.crop_pad = number_at<int>(d, "dataset", "crop_pad", spec.crop_pad);
  spec.noise_sigma = number_at<double>(d, "dataset", "noise_sigma", spec.noise_sigma);
  return spec;
}

inline RunConfig parse_run_config(const nlohmann::json& root) {
  using namespace cfgdetail;
  if (!root.is_object()) throw ConfigError("config root must be a JSON object");

  std::vector<std::string> unknown;
  check_keys(root, "",
             {"schema_version", "arch", "dataset", "train", "rewind", "policy",
              "controller", "attention", "pruning", "seed", "max_rounds",
              "out_dir"},
             unknown);

  RunConfig cfg;

  const json* sv = find(root, "schema_version");
  if (!sv) throw ConfigError("config missing required key schema_version");
  if (!sv->is_number_integer() || sv->get<int>() != kConfigSchemaVersion)
    throw ConfigError("schema_version must be " +
                      std::to_string(kConfigSchemaVersion));

  cfg.arch = string_at(root, "", "arch", cfg.arch);

  if (const json* d = find(root, "dataset"))
    cfg.dataset = parse_dataset_spec(*d, unknown);

  {
    const json& t = object_at(root, "train");
    check_keys(t, "train",
               {"total_epochs", "batch_size", "lr_schedule", "momentum",
                "weight_decay", "nesterov"},
               unknown);
    cfg.total_epochs = number_at<int>(t, "train", "total_epochs", 0);
    cfg.batch_size = number_at<int>(t, "train", "batch_size", cfg.batch_size);
    const json* sched = find(t, "lr_schedule");
    if (!sched) throw ConfigError("config missing required key train.lr_schedule");
    if (!sched->is_array())
      throw ConfigError("train.lr_schedule must be an array of [epoch, lr] pairs");
    for (const json& pair : *sched) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
          !pair[1].is_number())
        throw ConfigError("train.lr_schedule entries must be [epoch, lr] pairs");
      cfg.sgd.lr_schedule.emplace_back(pair[0].get<int>(), pair[1].get<double>());
    }
    cfg.sgd.momentum = number_at<double>(t, "train", "momentum", cfg.sgd.momentum);
    cfg.sgd.weight_decay =
        number_at<double>(t, "train", "weight_decay", cfg.sgd.weight_decay);
    cfg.sgd.nesterov = bool_at(t, "train", "nesterov", cfg.sgd.nesterov);
  }

  if (const json* r = find(root, "rewind")) {
    if (!r->is_object()) throw ConfigError("rewind must be an object");
    check_keys(*r, "rewind", {"fraction", "weights"}, unknown);
    cfg.rewind_fraction =
        number_at<double>(*r, "rewind", "fraction", cfg.rewind_fraction);
    cfg.rewind_weights = bool_at(*r, "rewind", "weights", cfg.rewind_weights);
  }

  {
    const json& p = object_at(root, "policy");
    check_keys(p, "policy", {"kind", "target", "minimize"}, unknown);
    cfg.policy.kind =
        policy_kind_from_name(string_at(p, "policy", "kind", "accuracy_guaranteed"));
    if (const json* tv = find(p, "target")) {
      if (!tv->is_number()) throw ConfigError("policy.target must be a number");
      cfg.policy.target = tv->get<double>();
    }
    cfg.policy.minimize =
        prune_metric_from_name(string_at(p, "policy", "minimize", "params"));
  }

  if (const json* c = find(root, "controller")) {
    if (!c->is_object()) throw ConfigError("controller must be an object");
    check_keys(*c, "controller",
               {"t_init", "lambda_init", "max_rollbacks", "convergence_window",
                "convergence_epsilon_pct", "exponent_base"},
               unknown);
    cfg.controller.t_init =
        number_at<double>(*c, "controller", "t_init", cfg.controller.t_init);
    cfg.controller.lambda_init = number_at<double>(*c, "controller", "lambda_init",
                                                   cfg.controller.lambda_init);
    cfg.controller.max_rollbacks =
        number_at<int>(*c, "controller", "max_rollbacks", cfg.controller.max_rollbacks);
    cfg.controller.convergence_window = number_at<int>(
        *c, "controller", "convergence_window", cfg.controller.convergence_window);
    cfg.controller.convergence_epsilon_pct =
        number_at<double>(*c, "controller", "convergence_epsilon_pct",
                          cfg.controller.convergence_epsilon_pct);
    cfg.controller.exponent_base = number_at<double>(
        *c, "controller", "exponent_base", cfg.controller.exponent_base);
  }

  if (const json* a = find(root, "attention")) {
    if (!a->is_object()) throw ConfigError("attention must be an object");
    check_keys(*a, "attention",
               {"function", "p", "calibration_batches", "calibration_seed"},
               unknown);
    cfg.attention.function =
        attention_fn_from_name(string_at(*a, "attention", "function", "mean"));
    cfg.attention.p = number_at<double>(*a, "attention", "p", cfg.attention.p);
    cfg.attention.calibration_batches = number_at<int>(
        *a, "attention", "calibration_batches", cfg.attention.calibration_batches);
    cfg.attention.calibration_seed = number_at<uint64_t>(
        *a, "attention", "calibration_seed", cfg.attention.calibration_seed);
  }

  if (const json* pr = find(root, "pruning")) {
    if (!pr->is_object()) throw ConfigError("pruning must be an object");
    check_keys(*pr, "pruning", {"metric"}, unknown);
    cfg.prune_metric =
        prune_metric_from_name(string_at(*pr, "pruning", "metric", "params"));
  }

  cfg.seed = cfgdetail::number_at<uint64_t>(root, "", "seed", cfg.seed);
  cfg.max_rounds = cfgdetail::number_at<int>(root, "", "max_rounds", cfg.max_rounds);
  cfg.out_dir = cfgdetail::string_at(root, "", "out_dir", cfg.out_dir);

  if (!unknown.empty()) {
    std::string msg = "unknown config keys: ";
    for (size_t i = 0; i < unknown.size(); ++i)
      msg += (i ? ", " : "") + unknown[i];
    throw ConfigError(msg);
  }

  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(root);
}

// Effective configuration with every default resolved, for the run-dir echo.
inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["arch"] = cfg.arch;
  nlohmann::ordered_json d;
  d["source"] = cfg.dataset.source == DataSource::SyntheticBlobs
                    ? "synthetic_blobs"
                    : "cifar10_binary_dir";
  if (!cfg.dataset.dir.empty()) d["dir"] = cfg.dataset.dir;
  d["train_size"] = cfg.dataset.train_size;
  d["test_size"] = cfg.dataset.test_size;
  d["classes"] = cfg.dataset.classes;
  d["channels"] = cfg.dataset.channels;
  d["height"] = cfg.dataset.height;
  d["width"] = cfg.dataset.width;
  d["augment_crop"] = cfg.dataset.augment_crop;
  d["augment_flip"] = cfg.dataset.augment_flip;
  d["crop_pad"] = cfg.dataset.crop_pad;
  d["noise_sigma"] = cfg.dataset.noise_sigma;
  j["dataset"] = d;
  nlohmann::ordered_json t;
  t["total_epochs"] = cfg.total_epochs;
  t["batch_size"] = cfg.batch_size;
  nlohmann::ordered_json sched = nlohmann::ordered_json::array();
  for (const auto& [ep, lr] : cfg.sgd.lr_schedule)
    sched.push_back({ep, lr});
  t["lr_schedule"] = sched;
  t["momentum"] = cfg.sgd.momentum;
  t["weight_decay"] = cfg.sgd.weight_decay;
  t["nesterov"] = cfg.sgd.nesterov;
  j["train"] = t;
  j["rewind"] = {{"fraction", cfg.rewind_fraction}, {"weights", cfg.rewind_weights}};
  nlohmann::ordered_json p;
  p["kind"] = policy_kind_name(cfg.policy.kind);
  p["target"] = cfg.policy.target;
  p["minimize"] = prune_metric_name(cfg.policy.minimize);
  j["policy"] = p;
  nlohmann::ordered_json c;
  c["t_init"] = cfg.controller.t_init;
  c["lambda_init"] = cfg.controller.lambda_init;
  c["max_rollbacks"] = cfg.controller.max_rollbacks;
  c["convergence_window"] = cfg.controller.convergence_window;
  c["convergence_epsilon_pct"] = cfg.controller.convergence_epsilon_pct;
  c["exponent_base"] = cfg.controller.exponent_base;
  j["controller"] = c;
  nlohmann::ordered_json a;
  a["function"] = attention_fn_name(cfg.attention.function);
  a["p"] = cfg.attention.p;
  a["calibration_batches"] = cfg.attention.calibration_batches;
  a["calibration_seed"] = cfg.attention.calibration_seed;
  j["attention"] = a;
  j["pruning"] = {{"metric", prune_metric_name(cfg.prune_metric)}};
  j["seed"] = cfg.seed;
  j["max_rounds"] = cfg.max_rounds;
  j["out_dir"] = cfg.out_dir;
  return j;
}

}  // namespace prunekit
