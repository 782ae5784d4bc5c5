#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedmtl/nn.hpp"
#include "fedmtl/params.hpp"
#include "fedmtl/tensor.hpp"
#include "fedmtl/util.hpp"

namespace fedmtl {

struct ConvSpec {
  std::size_t filters = 16;
  std::size_t kernel = 5;
};

// Architecture description. The network is a shared stack of 1-d convolutions
// over the window followed by one recurrent branch and one linear head per
// task. The first `pretrained_conv` convolution layers form the bottom layer
// group; the remaining convolutions form the common group.
struct ModelConfig {
  std::size_t window_length = 24;
  std::size_t channels = 3;
  std::vector<ConvSpec> conv = {{16, 5}, {16, 5}, {16, 5}, {16, 5}};
  std::size_t pretrained_conv = 2;
  std::vector<std::size_t> lstm_hidden = {32, 32};
  std::map<Task, std::size_t> head_classes = {{Task::Activity, 3},
                                              {Task::Position, 2}};

  std::size_t conv_output_length() const {
    std::size_t span = 0;
    for (const ConvSpec& c : conv) span += c.kernel - 1;
    if (span >= window_length) return 0;
    return window_length - span;
  }

  void validate() const {
    if (window_length == 0) throw ConfigError("model: window_length must be positive");
    if (channels == 0) throw ConfigError("model: channels must be positive");
    if (conv.empty()) throw ConfigError("model: at least one conv layer required");
    for (const ConvSpec& c : conv) {
      if (c.filters == 0 || c.kernel == 0) {
        throw ConfigError("model: conv filters and kernel must be positive");
      }
    }
    if (pretrained_conv == 0 || pretrained_conv >= conv.size()) {
      throw ConfigError(
          "model: pretrained_conv must leave at least one common conv layer");
    }
    if (conv_output_length() == 0) {
      throw ConfigError("model: window too short for the conv stack");
    }
    if (lstm_hidden.empty()) {
      throw ConfigError("model: at least one lstm layer required");
    }
    for (std::size_t h : lstm_hidden) {
      if (h == 0) throw ConfigError("model: lstm hidden size must be positive");
    }
    if (head_classes.size() != all_tasks().size()) {
      throw ConfigError("model: head_classes must cover every task");
    }
    for (const auto& [task, classes] : head_classes) {
      if (classes < 2) {
        throw ConfigError("model: head for " + task_name(task) +
                          " needs at least 2 classes");
      }
    }
  }

  // Stable fingerprint of the architecture, stored in checkpoints so a file
  // produced by one shape cannot be loaded into another.
  std::uint64_t digest() const {
    std::ostringstream os;
    os << "w=" << window_length << ";c=" << channels << ";conv=";
    for (std::size_t i = 0; i < conv.size(); ++i) {
      if (i) os << ',';
      os << conv[i].filters << 'x' << conv[i].kernel;
    }
    os << ";pre=" << pretrained_conv << ";lstm=";
    for (std::size_t i = 0; i < lstm_hidden.size(); ++i) {
      if (i) os << ',';
      os << lstm_hidden[i];
    }
    for (const auto& [task, classes] : head_classes) {
      os << ';' << task_name(task) << '=' << classes;
    }
    return fnv1a64(os.str());
  }
};

// Tensor name -> layer group for every tensor in the model, in the fixed
// naming scheme convN/{w,b}, <task>/lstmN/{w,u,b}, <task>/head/{w,b}.
inline std::map<std::string, LayerGroup> model_layout(const ModelConfig& cfg) {
  std::map<std::string, LayerGroup> layout;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const GroupKind kind =
        i < cfg.pretrained_conv ? GroupKind::PreTrained : GroupKind::Common;
    const std::string base = "conv" + std::to_string(i + 1);
    layout.emplace(base + "/w", LayerGroup{kind, {}});
    layout.emplace(base + "/b", LayerGroup{kind, {}});
  }
  for (Task task : all_tasks()) {
    const std::string prefix = task_name(task) + "/";
    for (std::size_t j = 0; j < cfg.lstm_hidden.size(); ++j) {
      const std::string base = prefix + "lstm" + std::to_string(j + 1);
      layout.emplace(base + "/w", LayerGroup{GroupKind::TaskSpecific, task});
      layout.emplace(base + "/u", LayerGroup{GroupKind::TaskSpecific, task});
      layout.emplace(base + "/b", LayerGroup{GroupKind::TaskSpecific, task});
    }
    layout.emplace(prefix + "head/w", LayerGroup{GroupKind::Personalized, task});
    layout.emplace(prefix + "head/b", LayerGroup{GroupKind::Personalized, task});
  }
  return layout;
}

inline std::vector<std::string> tensor_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& [name, group] : model_layout(cfg)) names.push_back(name);
  return names;
}

// Fresh parameters. Every tensor gets its own seed stream derived from the
// experiment seed and the tensor name, so initialization is independent of
// construction order. Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
// biases start at zero.
inline ParameterStore build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore store;
  auto add_weight = [&](const std::string& name, std::vector<std::size_t> shape,
                        std::size_t fan_in, const LayerGroup& group) {
    Tensor t(std::move(shape));
    Rng rng(derive_seed(seed, name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    store.add(name, std::move(t), group);
  };
  auto add_bias = [&](const std::string& name, std::size_t n,
                      const LayerGroup& group) {
    store.add(name, Tensor({n}), group);
  };

  const auto layout = model_layout(cfg);
  std::size_t in_ch = cfg.channels;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string base = "conv" + std::to_string(i + 1);
    const ConvSpec& c = cfg.conv[i];
    add_weight(base + "/w", {c.filters, in_ch, c.kernel}, in_ch * c.kernel,
               layout.at(base + "/w"));
    add_bias(base + "/b", c.filters, layout.at(base + "/b"));
    in_ch = c.filters;
  }
  for (Task task : all_tasks()) {
    const std::string prefix = task_name(task) + "/";
    std::size_t d = in_ch;
    for (std::size_t j = 0; j < cfg.lstm_hidden.size(); ++j) {
      const std::string base = prefix + "lstm" + std::to_string(j + 1);
      const std::size_t h = cfg.lstm_hidden[j];
      add_weight(base + "/w", {4 * h, d}, d, layout.at(base + "/w"));
      add_weight(base + "/u", {4 * h, h}, h, layout.at(base + "/u"));
      add_bias(base + "/b", 4 * h, layout.at(base + "/b"));
      d = h;
    }
    add_weight(prefix + "head/w", {cfg.head_classes.at(task), d}, d,
               layout.at(prefix + "head/w"));
    add_bias(prefix + "head/b", cfg.head_classes.at(task),
             layout.at(prefix + "head/b"));
  }
  return store;
}

// One step of the layered schedule. `unlocked` is the lowest layer group that
// still trains; groups below it are frozen. When `task` is set, tensors bound
// to the other task are frozen too.
struct TrainStage {
  GroupKind unlocked = GroupKind::PreTrained;
  std::optional<Task> task;
};

inline TrainStage stage_pretrain() { return {GroupKind::PreTrained, {}}; }
inline TrainStage stage_common() { return {GroupKind::Common, {}}; }
inline TrainStage stage_task_specific(Task t) {
  return {GroupKind::TaskSpecific, t};
}
inline TrainStage stage_personalize() { return {GroupKind::Personalized, {}}; }

inline std::string stage_name(const TrainStage& s) {
  switch (s.unlocked) {
    case GroupKind::PreTrained: return "pretrain";
    case GroupKind::Common: return "common";
    case GroupKind::TaskSpecific:
      return "task_specific:" + task_name(s.task.value());
    case GroupKind::Personalized: return "personalize";
  }
  throw std::logic_error("stage_name: bad stage");
}

inline TrainMask trainable_mask(const ParameterStore& params,
                                const TrainStage& stage) {
  TrainMask mask;
  for (const auto& [name, entry] : params.entries) {
    bool on = group_rank(entry.group.kind) >= group_rank(stage.unlocked);
    if (on && stage.task && entry.group.task &&
        *entry.group.task != *stage.task) {
      on = false;
    }
    mask.emplace(name, on);
  }
  return mask;
}

// Forward pass bookkeeping for backprop.
struct BranchCache {
  std::vector<nn::LstmCache> lstm;
  Tensor last_hidden;
  Tensor logits;
};

struct ModelCache {
  std::vector<Tensor> conv_inputs;  // input to conv layer i at index i
  Tensor trunk;                     // output of the last conv layer
  std::map<Task, BranchCache> branches;
};

inline ModelCache model_forward(const ParameterStore& params,
                                const ModelConfig& cfg, const Tensor& window) {
  require_shape(window, {cfg.window_length, cfg.channels}, "model input");
  ModelCache cache;
  Tensor cur = window;
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string base = "conv" + std::to_string(i + 1);
    cache.conv_inputs.push_back(cur);
    cur = nn::conv1d_forward(cur, params.at(base + "/w"), params.at(base + "/b"));
  }
  cache.trunk = cur;
  for (Task task : all_tasks()) {
    const std::string prefix = task_name(task) + "/";
    BranchCache branch;
    Tensor seq = cache.trunk;
    for (std::size_t j = 0; j < cfg.lstm_hidden.size(); ++j) {
      const std::string base = prefix + "lstm" + std::to_string(j + 1);
      branch.lstm.push_back(nn::lstm_forward(seq, params.at(base + "/w"),
                                             params.at(base + "/u"),
                                             params.at(base + "/b")));
      seq = branch.lstm.back().hidden;
    }
    const std::size_t t_len = seq.dim(0), h = seq.dim(1);
    branch.last_hidden = Tensor({h});
    for (std::size_t j = 0; j < h; ++j) {
      branch.last_hidden(j) = seq(t_len - 1, j);
    }
    branch.logits = nn::dense_forward(branch.last_hidden,
                                      params.at(prefix + "head/w"),
                                      params.at(prefix + "head/b"));
    cache.branches.emplace(task, std::move(branch));
  }
  return cache;
}

inline std::map<Task, Tensor> model_logits(const ParameterStore& params,
                                           const ModelConfig& cfg,
                                           const Tensor& window) {
  ModelCache cache = model_forward(params, cfg, window);
  std::map<Task, Tensor> out;
  for (auto& [task, branch] : cache.branches) {
    out.emplace(task, std::move(branch.logits));
  }
  return out;
}

namespace detail {
inline void add_into(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("add_into: shape mismatch");
  for (std::size_t i = 0; i < dst.numel(); ++i) dst(i) += src(i);
}
}  // namespace detail

// Backward pass for one example. `labels` holds the class index for every
// task included in the loss; tasks absent from it contribute nothing. The
// summed cross-entropy loss is returned and gradients are accumulated into
// `grads`, which must be congruent with `params`.
inline double model_backward(const ParameterStore& params,
                             const ModelConfig& cfg, const ModelCache& cache,
                             const std::map<Task, std::size_t>& labels,
                             Gradients& grads) {
  double loss = 0.0;
  Tensor trunk_grad(cache.trunk.shape);
  bool touched_trunk = false;
  for (const auto& [task, label] : labels) {
    const std::string prefix = task_name(task) + "/";
    const BranchCache& branch = cache.branches.at(task);
    nn::CrossEntropy ce = nn::softmax_cross_entropy(branch.logits, label);
    loss += ce.loss;
    nn::DenseGrads dg = nn::dense_backward(
        branch.last_hidden, params.at(prefix + "head/w"), ce.grad_logits);
    detail::add_into(grads.at(prefix + "head/w"), dg.weights);
    detail::add_into(grads.at(prefix + "head/b"), dg.bias);

    const Tensor& top_hidden = branch.lstm.back().hidden;
    Tensor grad_hidden(top_hidden.shape);
    for (std::size_t j = 0; j < top_hidden.dim(1); ++j) {
      grad_hidden(top_hidden.dim(0) - 1, j) = dg.input(j);
    }
    for (std::size_t j = cfg.lstm_hidden.size(); j-- > 0;) {
      const std::string base = prefix + "lstm" + std::to_string(j + 1);
      nn::LstmGrads lg =
          nn::lstm_backward(branch.lstm[j], params.at(base + "/w"),
                            params.at(base + "/u"), grad_hidden);
      detail::add_into(grads.at(base + "/w"), lg.w);
      detail::add_into(grads.at(base + "/u"), lg.u);
      detail::add_into(grads.at(base + "/b"), lg.b);
      grad_hidden = std::move(lg.input);
    }
    detail::add_into(trunk_grad, grad_hidden);
    touched_trunk = true;
  }
  if (touched_trunk) {
    Tensor grad = std::move(trunk_grad);
    for (std::size_t i = cfg.conv.size(); i-- > 0;) {
      const std::string base = "conv" + std::to_string(i + 1);
      nn::Conv1dGrads cg =
          nn::conv1d_backward(cache.conv_inputs[i], params.at(base + "/w"), grad);
      detail::add_into(grads.at(base + "/w"), cg.weights);
      detail::add_into(grads.at(base + "/b"), cg.bias);
      grad = std::move(cg.input);
    }
  }
  return loss;
}

// Argmax with ties resolved to the lowest class index.
inline std::size_t predict_class(const Tensor& logits) {
  if (logits.rank() != 1 || logits.numel() == 0) {
    throw std::invalid_argument("predict_class: logits must be a nonempty vector");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return best;
}

}  // namespace fedmtl
