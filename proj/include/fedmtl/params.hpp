#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmtl/tensor.hpp"

namespace fedmtl {

/// The two classification tasks a model can carry heads for.
enum class Task { Activity, Position };

inline std::string task_name(Task t) {
  return t == Task::Activity ? "activity" : "position";
}

inline Task parse_task(const std::string& s) {
  if (s == "activity") return Task::Activity;
  if (s == "position") return Task::Position;
  throw std::invalid_argument("unknown task: " + s);
}

inline const std::vector<Task>& all_tasks() {
  static const std::vector<Task> tasks{Task::Activity, Task::Position};
  return tasks;
}

/// Transfer-learning layer groups, ordered bottom-up. TaskSpecific and
/// (for heads) Personalized tensors additionally carry the task that owns
/// them, which drives task-foreign freezing.
enum class GroupKind : int {
  PreTrained = 0,
  Common = 1,
  TaskSpecific = 2,
  Personalized = 3,
};

struct LayerGroup {
  GroupKind kind = GroupKind::Common;
  std::optional<Task> task;  // owning task, when the tensor is task-bound

  bool operator==(const LayerGroup& o) const {
    return kind == o.kind && task == o.task;
  }
};

inline int group_rank(GroupKind k) { return static_cast<int>(k); }

inline std::string group_name(const LayerGroup& g) {
  switch (g.kind) {
    case GroupKind::PreTrained:
      return "pre_trained";
    case GroupKind::Common:
      return "common";
    case GroupKind::TaskSpecific:
      return "task_specific:" + task_name(g.task.value());
    case GroupKind::Personalized:
      return g.task ? "personalized:" + task_name(*g.task) : "personalized";
  }
  return "?";
}

struct ParamEntry {
  Tensor value;
  LayerGroup group;
};

/// Named, shape-tagged, group-tagged parameter tensors. std::map keeps the
/// iteration order sorted by name, which every deterministic reduction in
/// the federation layer relies on.
struct ParameterStore {
  std::map<std::string, ParamEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  Tensor& at(const std::string& name) { return entries.at(name).value; }
  const Tensor& at(const std::string& name) const {
    return entries.at(name).value;
  }

  bool has(const std::string& name) const { return entries.count(name) != 0; }

  void add(const std::string& name, Tensor t, LayerGroup g) {
    if (has(name)) {
      throw std::invalid_argument("parameter store: duplicate tensor " + name);
    }
    entries.emplace(name, ParamEntry{std::move(t), g});
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& [name, e] : entries) out.push_back(name);
    return out;
  }

  /// Same tensor names with the same shapes (group tags are not compared).
  bool congruent_with(const ParameterStore& other) const {
    if (entries.size() != other.entries.size()) return false;
    auto it = entries.begin();
    auto jt = other.entries.begin();
    for (; it != entries.end(); ++it, ++jt) {
      if (it->first != jt->first) return false;
      if (it->second.value.shape != jt->second.value.shape) return false;
    }
    return true;
  }

  bool bit_equal(const ParameterStore& other) const {
    if (entries.size() != other.entries.size()) return false;
    auto it = entries.begin();
    auto jt = other.entries.begin();
    for (; it != entries.end(); ++it, ++jt) {
      if (it->first != jt->first) return false;
      if (!it->second.value.bit_equal(jt->second.value)) return false;
    }
    return true;
  }
};

/// One gradient tensor per (trainable) parameter tensor, keyed by name.
using Gradients = std::map<std::string, Tensor>;

/// name -> trainable flag; false means frozen.
using TrainMask = std::map<std::string, bool>;

inline Gradients zero_gradients_like(const ParameterStore& params) {
  Gradients g;
  for (const auto& [name, e] : params.entries) {
    g.emplace(name, Tensor(e.value.shape));
  }
  return g;
}

inline void require_congruent(const ParameterStore& params, const Gradients& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("gradients not congruent with parameters");
  }
  for (const auto& [name, e] : params.entries) {
    auto it = grads.find(name);
    if (it == grads.end() || it->second.shape != e.value.shape) {
      throw std::invalid_argument("gradients not congruent with parameters: " + name);
    }
  }
}

inline void require_mask_congruent(const ParameterStore& params, const TrainMask& mask) {
  if (params.size() != mask.size()) {
    throw std::invalid_argument("mask not congruent with parameters");
  }
  for (const auto& [name, e] : params.entries) {
    if (mask.find(name) == mask.end()) {
      throw std::invalid_argument("mask not congruent with parameters: " + name);
    }
  }
}

}  // namespace fedmtl
