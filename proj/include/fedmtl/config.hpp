#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedmtl/data.hpp"
#include "fedmtl/model.hpp"
#include "fedmtl/pipeline.hpp"

namespace fedmtl {

/// Parsed experiment description. `model.head_classes` stays at its default
/// until the dataset is loaded; resolve_model() derives the real head sizes
/// from the vocabulary.
struct ExperimentConfig {
  enum class DataKind { Synthetic, Csv };

  std::uint64_t seed = 0;
  std::string out_dir;
  std::string regime;
  ModelConfig model;
  DataKind data_kind = DataKind::Synthetic;
  SyntheticSpec synthetic;
  std::string csv_dir;
  bool use_default_label_maps = false;
  std::optional<LabelMap> activity_map;
  std::optional<LabelMap> position_map;
  DatasetOptions dataset;
  PipelineOptions train;
  std::string eval_checkpoint;
  std::uint64_t digest = 0;  // over the canonical JSON form
};

inline const std::vector<std::string>& known_regimes() {
  static const std::vector<std::string> regimes{
      "layered", "individual", "centralized", "federated_one_task",
      "federated_multi_task"};
  return regimes;
}

namespace detail {

inline void expect_keys(const nlohmann::json& obj,
                        const std::set<std::string>& allowed,
                        const std::string& ctx) {
  if (!obj.is_object()) throw ConfigError("config: " + ctx + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + ctx);
    }
  }
}

inline const nlohmann::json* find_key(const nlohmann::json& obj,
                                      const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline std::uint64_t as_uint(const nlohmann::json& v, const std::string& ctx) {
  // Accepts any integer representation as long as the value is non-negative;
  // in-memory construction yields signed numbers where parsing yields unsigned.
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError("config: " + ctx + " must be a non-negative integer");
}

inline double as_double(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_number()) throw ConfigError("config: " + ctx + " must be a number");
  return v.get<double>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_boolean()) throw ConfigError("config: " + ctx + " must be a boolean");
  return v.get<bool>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_string()) throw ConfigError("config: " + ctx + " must be a string");
  return v.get<std::string>();
}

inline LabelMap as_label_map(const nlohmann::json& v, const std::string& ctx) {
  if (!v.is_object()) {
    throw ConfigError("config: " + ctx + " must map raw labels to canonical ones");
  }
  LabelMap map;
  for (auto it = v.begin(); it != v.end(); ++it) {
    map.to_canonical[it.key()] = as_string(it.value(), ctx + "." + it.key());
  }
  // Canonical targets map to themselves so already-merged labels pass.
  for (const auto& [raw, canon] : map.to_canonical) {
    map.to_canonical.emplace(canon, canon);
  }
  return map;
}

inline void parse_model_section(const nlohmann::json& j, ModelConfig& model) {
  expect_keys(j, {"conv", "pretrained_conv", "lstm_hidden"}, "model");
  if (const auto* conv = find_key(j, "conv")) {
    if (!conv->is_array() || conv->empty()) {
      throw ConfigError("config: model.conv must be a non-empty array");
    }
    model.conv.clear();
    for (const auto& layer : *conv) {
      expect_keys(layer, {"filters", "kernel"}, "model.conv[]");
      ConvSpec spec;
      if (const auto* f = find_key(layer, "filters")) {
        spec.filters = as_uint(*f, "model.conv[].filters");
      }
      if (const auto* k = find_key(layer, "kernel")) {
        spec.kernel = as_uint(*k, "model.conv[].kernel");
      }
      if (spec.filters == 0 || spec.kernel == 0) {
        throw ConfigError("config: model.conv entries must be positive");
      }
      model.conv.push_back(spec);
    }
  }
  if (const auto* p = find_key(j, "pretrained_conv")) {
    model.pretrained_conv = as_uint(*p, "model.pretrained_conv");
  }
  if (const auto* h = find_key(j, "lstm_hidden")) {
    if (!h->is_array() || h->empty()) {
      throw ConfigError("config: model.lstm_hidden must be a non-empty array");
    }
    model.lstm_hidden.clear();
    for (const auto& v : *h) {
      const std::uint64_t n = as_uint(v, "model.lstm_hidden[]");
      if (n == 0) throw ConfigError("config: model.lstm_hidden entries must be positive");
      model.lstm_hidden.push_back(static_cast<std::size_t>(n));
    }
  }
  if (model.pretrained_conv == 0 || model.pretrained_conv >= model.conv.size()) {
    throw ConfigError(
        "config: model.pretrained_conv must leave at least one Common conv layer");
  }
}

inline void parse_data_section(const nlohmann::json& j, ExperimentConfig& cfg) {
  const std::set<std::string> common = {
      "kind",        "window_length", "stride",
      "split_ratio", "availability_min_classes", "normalize"};
  const auto* kind = find_key(j, "kind");
  if (!kind) throw ConfigError("config: data.kind is required");
  const std::string kind_s = as_string(*kind, "data.kind");

  std::set<std::string> allowed = common;
  if (kind_s == "synthetic") {
    cfg.data_kind = ExperimentConfig::DataKind::Synthetic;
    allowed.insert({"num_clients", "activity_classes", "position_classes",
                    "position_clients", "windows_per_class", "noise_sigma",
                    "rotate_labels"});
  } else if (kind_s == "csv") {
    cfg.data_kind = ExperimentConfig::DataKind::Csv;
    allowed.insert({"dir", "native_hz", "use_default_label_maps",
                    "activity_label_map", "position_label_map"});
  } else {
    throw ConfigError("config: data.kind must be \"synthetic\" or \"csv\"");
  }
  expect_keys(j, allowed, "data");

  if (const auto* v = find_key(j, "window_length")) {
    cfg.dataset.window_length = as_uint(*v, "data.window_length");
  }
  if (const auto* v = find_key(j, "stride")) {
    cfg.dataset.stride = as_uint(*v, "data.stride");
  }
  if (cfg.dataset.window_length == 0 || cfg.dataset.stride == 0) {
    throw ConfigError("config: data.window_length and data.stride must be positive");
  }
  if (const auto* v = find_key(j, "split_ratio")) {
    cfg.dataset.split_ratio = as_double(*v, "data.split_ratio");
  }
  if (!(cfg.dataset.split_ratio > 0.0) || !(cfg.dataset.split_ratio < 1.0)) {
    throw ConfigError("config: data.split_ratio must be in (0, 1)");
  }
  if (const auto* v = find_key(j, "availability_min_classes")) {
    cfg.dataset.availability_min_classes =
        as_uint(*v, "data.availability_min_classes");
  }
  if (const auto* v = find_key(j, "normalize")) {
    cfg.dataset.normalize = as_bool(*v, "data.normalize");
  }

  if (cfg.data_kind == ExperimentConfig::DataKind::Synthetic) {
    SyntheticSpec& s = cfg.synthetic;
    if (const auto* v = find_key(j, "num_clients")) {
      s.num_clients = as_uint(*v, "data.num_clients");
    }
    if (const auto* v = find_key(j, "activity_classes")) {
      s.activity_classes = as_uint(*v, "data.activity_classes");
    }
    if (const auto* v = find_key(j, "position_classes")) {
      s.position_classes = as_uint(*v, "data.position_classes");
    }
    if (const auto* v = find_key(j, "position_clients")) {
      s.position_clients = as_uint(*v, "data.position_clients");
    }
    if (const auto* v = find_key(j, "windows_per_class")) {
      s.windows_per_class = as_uint(*v, "data.windows_per_class");
    }
    if (const auto* v = find_key(j, "noise_sigma")) {
      s.noise_sigma = as_double(*v, "data.noise_sigma");
      if (s.noise_sigma < 0.0) {
        throw ConfigError("config: data.noise_sigma must be non-negative");
      }
    }
    if (const auto* v = find_key(j, "rotate_labels")) {
      s.rotate_labels = as_bool(*v, "data.rotate_labels");
    }
    s.window_length = cfg.dataset.window_length;
    s.stride = cfg.dataset.stride;
  } else {
    const auto* dir = find_key(j, "dir");
    if (!dir) throw ConfigError("config: data.dir is required for csv data");
    cfg.csv_dir = as_string(*dir, "data.dir");
    if (const auto* v = find_key(j, "native_hz")) {
      cfg.dataset.native_hz = as_double(*v, "data.native_hz");
    }
    if (const auto* v = find_key(j, "use_default_label_maps")) {
      cfg.use_default_label_maps = as_bool(*v, "data.use_default_label_maps");
    }
    if (const auto* v = find_key(j, "activity_label_map")) {
      cfg.activity_map = as_label_map(*v, "data.activity_label_map");
    }
    if (const auto* v = find_key(j, "position_label_map")) {
      cfg.position_map = as_label_map(*v, "data.position_label_map");
    }
  }
}

inline void parse_train_section(const nlohmann::json& j, PipelineOptions& t) {
  expect_keys(j,
              {"lr", "batch_size", "local_epochs", "common_rounds",
               "task_rounds", "personalize_epochs", "pretrain_epochs",
               "individual_epochs", "federated_rounds",
               "participation_fraction", "pretrain_client"},
              "train");
  if (const auto* v = find_key(j, "lr")) {
    t.lr = as_double(*v, "train.lr");
    if (!(t.lr > 0.0)) throw ConfigError("config: train.lr must be positive");
  }
  if (const auto* v = find_key(j, "batch_size")) {
    t.batch_size = as_uint(*v, "train.batch_size");
    if (t.batch_size == 0) throw ConfigError("config: train.batch_size must be positive");
  }
  if (const auto* v = find_key(j, "local_epochs")) {
    t.local_epochs = as_uint(*v, "train.local_epochs");
  }
  if (const auto* v = find_key(j, "common_rounds")) {
    t.common_rounds = as_uint(*v, "train.common_rounds");
  }
  if (const auto* v = find_key(j, "task_rounds")) {
    t.task_rounds = as_uint(*v, "train.task_rounds");
  }
  if (const auto* v = find_key(j, "personalize_epochs")) {
    t.personalize_epochs = as_uint(*v, "train.personalize_epochs");
  }
  if (const auto* v = find_key(j, "pretrain_epochs")) {
    t.pretrain_epochs = as_uint(*v, "train.pretrain_epochs");
  }
  if (const auto* v = find_key(j, "individual_epochs")) {
    t.individual_epochs = as_uint(*v, "train.individual_epochs");
  }
  if (const auto* v = find_key(j, "federated_rounds")) {
    t.federated_rounds = as_uint(*v, "train.federated_rounds");
  }
  if (const auto* v = find_key(j, "participation_fraction")) {
    t.participation_fraction = as_double(*v, "train.participation_fraction");
    if (!(t.participation_fraction > 0.0) || t.participation_fraction > 1.0) {
      throw ConfigError("config: train.participation_fraction must be in (0, 1]");
    }
  }
  if (const auto* v = find_key(j, "pretrain_client")) {
    t.pretrain_client = as_string(*v, "train.pretrain_client");
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  detail::expect_keys(
      j, {"seed", "out_dir", "regime", "model", "data", "train", "eval"},
      "top level");
  ExperimentConfig cfg;
  if (const auto* v = detail::find_key(j, "seed")) {
    cfg.seed = detail::as_uint(*v, "seed");
  }
  if (const auto* v = detail::find_key(j, "out_dir")) {
    cfg.out_dir = detail::as_string(*v, "out_dir");
  }
  const auto* regime = detail::find_key(j, "regime");
  if (!regime) throw ConfigError("config: regime is required");
  cfg.regime = detail::as_string(*regime, "regime");
  const auto& regimes = known_regimes();
  if (std::find(regimes.begin(), regimes.end(), cfg.regime) == regimes.end()) {
    std::string names;
    for (const std::string& r : regimes) {
      if (!names.empty()) names += ", ";
      names += r;
    }
    throw ConfigError("config: unknown regime \"" + cfg.regime +
                      "\" (expected one of: " + names + ")");
  }
  const auto* data = detail::find_key(j, "data");
  if (!data) throw ConfigError("config: data section is required");
  detail::parse_data_section(*data, cfg);
  if (const auto* v = detail::find_key(j, "model")) {
    detail::parse_model_section(*v, cfg.model);
  }
  if (const auto* v = detail::find_key(j, "train")) {
    detail::parse_train_section(*v, cfg.train);
  }
  if (const auto* v = detail::find_key(j, "eval")) {
    detail::expect_keys(*v, {"checkpoint"}, "eval");
    if (const auto* c = detail::find_key(*v, "checkpoint")) {
      cfg.eval_checkpoint = detail::as_string(*c, "eval.checkpoint");
    }
  }
  cfg.dataset.seed = cfg.seed;
  cfg.dataset.extend_maps_with_identity = cfg.use_default_label_maps;
  cfg.digest = fnv1a64(j.dump());
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " +
                      e.what());
  }
  return parse_config(j);
}

/// Raw sensor streams for the configured source, before windowing.
inline std::vector<RawRecord> load_raw_records(const ExperimentConfig& cfg) {
  if (cfg.data_kind == ExperimentConfig::DataKind::Synthetic) {
    return synthetic_records(cfg.synthetic, derive_seed(cfg.seed, "data"));
  }
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& entry :
       std::filesystem::directory_iterator(cfg.csv_dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  if (ec) throw ConfigError("cannot list csv directory " + cfg.csv_dir);
  if (files.empty()) throw ConfigError("no .csv files in " + cfg.csv_dir);
  std::sort(files.begin(), files.end());
  std::vector<RawRecord> records;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read " + file.string());
    std::vector<RawRecord> part = parse_csv(in);
    records.insert(records.end(), part.begin(), part.end());
  }
  return records;
}

/// Windowed, split, normalized per-client datasets for the configured source.
inline FederatedData load_experiment_data(const ExperimentConfig& cfg) {
  DatasetOptions opts = cfg.dataset;
  opts.seed = derive_seed(cfg.seed, "data");
  if (cfg.data_kind == ExperimentConfig::DataKind::Csv) {
    if (cfg.activity_map) {
      opts.activity_map = cfg.activity_map;
    } else if (cfg.use_default_label_maps) {
      opts.activity_map = LabelMap::default_activity();
    }
    if (cfg.position_map) {
      opts.position_map = cfg.position_map;
    } else if (cfg.use_default_label_maps) {
      opts.position_map = LabelMap::default_position();
    }
  }
  return build_datasets(ingest_records(load_raw_records(cfg)), opts);
}

/// Model description bound to the loaded data: window geometry from the
/// dataset options, head sizes from the vocabulary (minimum two classes so
/// heads stay well-formed for tasks the corpus never labels).
inline ModelConfig resolve_model(const ExperimentConfig& cfg,
                                 const FederatedData& data) {
  ModelConfig m = cfg.model;
  m.window_length = cfg.dataset.window_length;
  m.channels = 3;
  for (Task t : all_tasks()) {
    m.head_classes[t] = std::max<std::size_t>(2, data.vocab.count(t));
  }
  return m;
}

}  // namespace fedmtl
