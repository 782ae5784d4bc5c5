#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedmtl/params.hpp"
#include "fedmtl/util.hpp"

namespace fedmtl {

// ----------------------------------------------------------------- scalars

inline double accuracy(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy: need equal nonempty vectors");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// Client data sizes act as weights: sum(acc * n) / sum(n).
inline double weighted_average_accuracy(
    const std::vector<std::pair<double, std::size_t>>& entries) {
  if (entries.empty()) {
    throw std::invalid_argument("weighted_average_accuracy: empty input");
  }
  double num = 0;
  std::size_t den = 0;
  for (const auto& [acc, n] : entries) {
    if (n == 0) {
      throw std::invalid_argument("weighted_average_accuracy: weight must be >= 1");
    }
    num += acc * static_cast<double>(n);
    den += n;
  }
  return num / static_cast<double>(den);
}

// --------------------------------------------------------------- confusion

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::string> labels;  // class names; may be empty
  std::vector<std::size_t> counts;  // row-major C x C

  std::size_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * classes + pred];
  }
  std::size_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes + pred];
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
  }
  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < classes; ++i) n += at(i, i);
    return n;
  }
  bool operator==(const ConfusionMatrix& o) const {
    return classes == o.classes && labels == o.labels && counts == o.counts;
  }
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& predictions,
                                 const std::vector<std::size_t>& labels,
                                 std::size_t classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confusion: length mismatch");
  }
  ConfusionMatrix m;
  m.classes = classes;
  m.counts.assign(classes * classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] >= classes || labels[i] >= classes) {
      throw std::invalid_argument("confusion: class index out of range");
    }
    ++m.at(labels[i], predictions[i]);
  }
  return m;
}

// ------------------------------------------------------------------ report

struct ClientMetrics {
  std::string client_id;
  std::map<Task, double> accuracy;
  std::map<Task, std::size_t> n;  // test samples with the task's label
  std::map<Task, ConfusionMatrix> confusion;

  bool operator==(const ClientMetrics& o) const {
    return client_id == o.client_id && accuracy == o.accuracy && n == o.n &&
           confusion == o.confusion;
  }
};

// One evaluation snapshot: a pipeline stage or a baseline's final state.
struct StageMetrics {
  std::string stage;  // stage name, or "final" for baselines
  std::vector<ClientMetrics> clients;
  std::map<Task, double> weighted;
  std::map<Task, std::size_t> n_total;

  bool operator==(const StageMetrics& o) const {
    return stage == o.stage && clients == o.clients && weighted == o.weighted &&
           n_total == o.n_total;
  }
};

struct MetricsReport {
  std::string regime;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::vector<StageMetrics> stages;

  bool operator==(const MetricsReport& o) const {
    return regime == o.regime && seed == o.seed &&
           config_digest == o.config_digest && stages == o.stages;
  }
};

// Recomputes a stage's weighted averages from its per-client entries,
// skipping clients without the task.
inline void finalize_stage(StageMetrics& stage) {
  stage.weighted.clear();
  stage.n_total.clear();
  for (Task task : all_tasks()) {
    std::vector<std::pair<double, std::size_t>> entries;
    std::size_t total = 0;
    for (const ClientMetrics& c : stage.clients) {
      auto it = c.accuracy.find(task);
      if (it == c.accuracy.end()) continue;
      entries.emplace_back(it->second, c.n.at(task));
      total += c.n.at(task);
    }
    if (!entries.empty()) {
      stage.weighted[task] = weighted_average_accuracy(entries);
      stage.n_total[task] = total;
    }
  }
}

// ---------------------------------------------------------- serialization

inline void to_json(nlohmann::json& j, const ConfusionMatrix& m) {
  j = nlohmann::json{
      {"classes", m.classes}, {"labels", m.labels}, {"counts", m.counts}};
}

inline void from_json(const nlohmann::json& j, ConfusionMatrix& m) {
  j.at("classes").get_to(m.classes);
  j.at("labels").get_to(m.labels);
  j.at("counts").get_to(m.counts);
}

namespace detail {

template <typename V>
nlohmann::json task_map_to_json(const std::map<Task, V>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [task, v] : m) j[task_name(task)] = v;
  return j;
}

template <typename V>
std::map<Task, V> task_map_from_json(const nlohmann::json& j) {
  std::map<Task, V> m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    m.emplace(parse_task(it.key()), it.value().template get<V>());
  }
  return m;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ClientMetrics& c) {
  j = nlohmann::json{{"client_id", c.client_id},
                     {"accuracy", detail::task_map_to_json(c.accuracy)},
                     {"n", detail::task_map_to_json(c.n)},
                     {"confusion", detail::task_map_to_json(c.confusion)}};
}

inline void from_json(const nlohmann::json& j, ClientMetrics& c) {
  j.at("client_id").get_to(c.client_id);
  c.accuracy = detail::task_map_from_json<double>(j.at("accuracy"));
  c.n = detail::task_map_from_json<std::size_t>(j.at("n"));
  c.confusion = detail::task_map_from_json<ConfusionMatrix>(j.at("confusion"));
}

inline void to_json(nlohmann::json& j, const StageMetrics& s) {
  j = nlohmann::json{{"stage", s.stage},
                     {"clients", s.clients},
                     {"weighted", detail::task_map_to_json(s.weighted)},
                     {"n_total", detail::task_map_to_json(s.n_total)}};
}

inline void from_json(const nlohmann::json& j, StageMetrics& s) {
  j.at("stage").get_to(s.stage);
  s.clients = j.at("clients").get<std::vector<ClientMetrics>>();
  s.weighted = detail::task_map_from_json<double>(j.at("weighted"));
  s.n_total = detail::task_map_from_json<std::size_t>(j.at("n_total"));
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"regime", r.regime},
                     {"seed", r.seed},
                     {"config_digest", r.config_digest},
                     {"stages", r.stages}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("regime").get_to(r.regime);
  j.at("seed").get_to(r.seed);
  j.at("config_digest").get_to(r.config_digest);
  r.stages = j.at("stages").get<std::vector<StageMetrics>>();
}

// -------------------------------------------------------------- emitters

// One row per (stage, task), values at 4 decimals computed at full precision.
inline std::string summary_csv(const MetricsReport& report) {
  std::string out = "regime,stage,task,weighted_accuracy,n_total\n";
  char buf[64];
  for (const StageMetrics& s : report.stages) {
    for (const auto& [task, acc] : s.weighted) {
      std::snprintf(buf, sizeof buf, "%.4f", acc);
      out += report.regime + "," + s.stage + "," + task_name(task) + "," + buf +
             "," + std::to_string(s.n_total.at(task)) + "\n";
    }
  }
  return out;
}

// Human-readable stage x task table for stdout.
inline std::string summary_table(const MetricsReport& report) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-28s", ("regime: " + report.regime).c_str());
  out += buf;
  for (Task task : all_tasks()) {
    std::snprintf(buf, sizeof buf, "  %12s", task_name(task).c_str());
    out += buf;
  }
  out += "\n";
  for (const StageMetrics& s : report.stages) {
    std::snprintf(buf, sizeof buf, "%-28s", s.stage.c_str());
    out += buf;
    for (Task task : all_tasks()) {
      auto it = s.weighted.find(task);
      if (it == s.weighted.end()) {
        std::snprintf(buf, sizeof buf, "  %12s", "-");
      } else {
        std::snprintf(buf, sizeof buf, "  %12.4f", it->second);
      }
      out += buf;
    }
    out += "\n";
  }
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline std::string confusion_csv(const ConfusionMatrix& m) {
  auto name = [&](std::size_t i) {
    return i < m.labels.size() ? m.labels[i] : "class" + std::to_string(i);
  };
  std::string out = "true\\pred";
  for (std::size_t j = 0; j < m.classes; ++j) out += "," + name(j);
  out += "\n";
  for (std::size_t i = 0; i < m.classes; ++i) {
    out += name(i);
    for (std::size_t j = 0; j < m.classes; ++j) {
      out += "," + std::to_string(m.at(i, j));
    }
    out += "\n";
  }
  return out;
}

inline std::string sanitize_component(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace detail

// Writes report.json, summary.csv, and one confusion CSV per client and task
// from the final stage. Byte-stable for equal reports.
inline void emit_report(const MetricsReport& report,
                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = report;
  detail::write_file(dir / "report.json", j.dump(2) + "\n");
  detail::write_file(dir / "summary.csv", summary_csv(report));
  if (!report.stages.empty()) {
    const StageMetrics& last = report.stages.back();
    const std::filesystem::path cdir = dir / "confusion";
    std::filesystem::create_directories(cdir);
    for (const ClientMetrics& c : last.clients) {
      for (const auto& [task, matrix] : c.confusion) {
        const std::string fname = detail::sanitize_component(c.client_id) + "_" +
                                  task_name(task) + ".csv";
        detail::write_file(cdir / fname, detail::confusion_csv(matrix));
      }
    }
  }
}

inline MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  return j.get<MetricsReport>();
}

}  // namespace fedmtl
