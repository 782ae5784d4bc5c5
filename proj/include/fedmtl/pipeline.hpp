#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedmtl/data.hpp"
#include "fedmtl/federation.hpp"
#include "fedmtl/metrics.hpp"
#include "fedmtl/model.hpp"

namespace fedmtl {

/// Hyperparameters shared by every training regime. Federated regimes read
/// `local_epochs` per round; the single-model regimes read their own budget.
struct PipelineOptions {
  double lr = 0.05;
  std::size_t batch_size = 16;
  std::size_t local_epochs = 2;
  std::size_t common_rounds = 10;
  std::size_t task_rounds = 10;
  std::size_t personalize_epochs = 5;
  std::size_t pretrain_epochs = 15;
  std::size_t individual_epochs = 20;
  std::size_t federated_rounds = 10;
  double participation_fraction = 1.0;
  std::string pretrain_client;  // empty selects automatically
  std::size_t workers = 1;
};

namespace detail {

inline std::map<std::string, const ClientDataset*> index_clients(
    const FederatedData& data) {
  std::map<std::string, const ClientDataset*> index;
  for (const ClientDataset& c : data.clients) index.emplace(c.client_id, &c);
  return index;
}

inline const ClientDataset& client_by_id(const FederatedData& data,
                                         const std::string& id) {
  for (const ClientDataset& c : data.clients) {
    if (c.client_id == id) return c;
  }
  throw ConfigError("unknown client \"" + id + "\"");
}

inline void merge_client_metrics(std::map<std::string, ClientMetrics>& into,
                                 const ClientMetrics& cm) {
  ClientMetrics& dst = into[cm.client_id];
  dst.client_id = cm.client_id;
  for (const auto& [task, acc] : cm.accuracy) {
    dst.accuracy[task] = acc;
    dst.n[task] = cm.n.at(task);
    dst.confusion[task] = cm.confusion.at(task);
  }
}

inline std::set<Task> task_set() {
  return {all_tasks().begin(), all_tasks().end()};
}

}  // namespace detail

/// Clients whose label coverage makes them eligible to train `task`.
inline std::vector<std::string> task_cohort(const FederatedData& data, Task task) {
  std::vector<std::string> cohort;
  for (const ClientDataset& c : data.clients) {
    auto it = c.task_availability.find(task);
    if (it != c.task_availability.end() && it->second) {
      cohort.push_back(c.client_id);
    }
  }
  return cohort;
}

/// Default owner of the warm-up stage: the client exposing the most distinct
/// position classes across its splits, ties broken by lowest client id.
inline std::string default_pretrain_client(const FederatedData& data) {
  if (data.clients.empty()) throw ConfigError("no clients in dataset");
  std::string best;
  std::size_t best_count = 0;
  for (const ClientDataset& c : data.clients) {
    std::set<std::size_t> classes;
    for (const auto* split : {&c.train, &c.test}) {
      for (const WindowedSample& w : *split) {
        auto it = w.labels.find(Task::Position);
        if (it != w.labels.end()) classes.insert(it->second);
      }
    }
    if (best.empty() || classes.size() > best_count ||
        (classes.size() == best_count && c.client_id < best)) {
      best = c.client_id;
      best_count = classes.size();
    }
  }
  return best;
}

/// Deterministic per-round subsample: a seeded shuffle keeps the first
/// max(1, floor(fraction * n)) ids, returned sorted. fraction >= 1 keeps all.
inline std::vector<std::string> select_participants(
    const std::vector<std::string>& cohort, double fraction,
    std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ConfigError("participation fraction must be in (0, 1]");
  }
  if (fraction >= 1.0) return cohort;
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::floor(fraction * static_cast<double>(cohort.size()) + 1e-9)));
  std::vector<std::string> pool = cohort;
  Rng rng(seed);
  rng.shuffle(pool);
  pool.resize(keep);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// -------------------------------------------------------------- evaluation

/// Accuracy and confusion on the client's test split, one forward pass per
/// sample. Only tasks in `tasks` are scored; a task with no labeled test
/// samples is simply absent from the result.
inline ClientMetrics evaluate_client(const ParameterStore& params,
                                     const ModelConfig& cfg,
                                     const ClientDataset& client,
                                     const LabelVocab& vocab,
                                     const std::set<Task>& tasks) {
  std::map<Task, std::vector<std::size_t>> preds;
  std::map<Task, std::vector<std::size_t>> truth;
  for (const WindowedSample& w : client.test) {
    bool wanted = false;
    for (Task t : tasks) {
      if (w.labels.count(t)) wanted = true;
    }
    if (!wanted) continue;
    std::map<Task, Tensor> logits = model_logits(params, cfg, w.window);
    for (Task t : tasks) {
      auto it = w.labels.find(t);
      if (it == w.labels.end()) continue;
      preds[t].push_back(predict_class(logits.at(t)));
      truth[t].push_back(it->second);
    }
  }
  ClientMetrics m;
  m.client_id = client.client_id;
  for (const auto& [task, p] : preds) {
    const auto& y = truth.at(task);
    m.accuracy[task] = accuracy(p, y);
    m.n[task] = p.size();
    ConfusionMatrix cm = confusion(p, y, cfg.head_classes.at(task));
    auto names = vocab.classes.find(task);
    if (names != vocab.classes.end()) cm.labels = names->second;
    m.confusion[task] = cm;
  }
  return m;
}

/// Evaluate every client against its materialized view of the global state.
inline StageMetrics evaluate_global(const GlobalState& state,
                                    const ModelConfig& cfg,
                                    const FederatedData& data,
                                    const std::string& stage_label,
                                    std::size_t workers = 1) {
  std::vector<ClientMetrics> per_client(data.clients.size());
  parallel_for(data.clients.size(), workers, [&](std::size_t i) {
    const ClientDataset& client = data.clients[i];
    ParameterStore params = materialize(state, client.client_id);
    per_client[i] =
        evaluate_client(params, cfg, client, data.vocab, detail::task_set());
  });
  StageMetrics stage;
  stage.stage = stage_label;
  stage.clients = std::move(per_client);
  finalize_stage(stage);
  return stage;
}

/// Report for a saved state, as produced by the offline evaluation command.
inline MetricsReport evaluate_checkpoint(const GlobalState& state,
                                         const ModelConfig& cfg,
                                         const FederatedData& data,
                                         std::size_t workers = 1) {
  MetricsReport report;
  report.regime = "eval";
  report.stages.push_back(evaluate_global(state, cfg, data, "final", workers));
  return report;
}

// ----------------------------------------------------------- layered regime

struct LayeredResult {
  MetricsReport report;
  GlobalState state;
  std::vector<std::string> warnings;
};

/// The staged transfer-learning schedule:
///   1. pretrain            one rich client trains the full model
///   2. common              all clients refine Common and above
///   3. task_specific:T     the task's cohort refines its branch and head
///   4. personalize         every client adapts its own head copy
/// Evaluation runs after every stage; when `checkpoint_dir` is set each stage
/// also snapshots the global state.
inline LayeredResult run_layered(
    const FederatedData& data, const ModelConfig& cfg,
    const PipelineOptions& opts, std::uint64_t seed,
    std::uint64_t config_digest = 0,
    const std::optional<std::filesystem::path>& checkpoint_dir = {}) {
  if (data.clients.empty()) throw ConfigError("layered: no clients");
  const auto index = detail::index_clients(data);

  LayeredResult out;
  out.report.regime = "layered";
  out.report.seed = seed;
  out.report.config_digest = config_digest;
  out.state = partition_model(build_model(cfg, derive_seed(seed, "init")));
  const ParameterStore reference =
      materialize(out.state, data.clients.front().client_id);

  auto record_stage = [&](const std::string& name) {
    out.report.stages.push_back(
        evaluate_global(out.state, cfg, data, name, opts.workers));
    if (checkpoint_dir) {
      std::string file = "checkpoint_" + name + ".bin";
      std::replace(file.begin(), file.end(), ':', '_');
      std::filesystem::create_directories(*checkpoint_dir);
      save_checkpoint(out.state, cfg.digest(), *checkpoint_dir / file);
    }
  };

  // Stage 1: warm-up on a single client with broad position coverage.
  std::string pretrain_id = opts.pretrain_client.empty()
                                ? default_pretrain_client(data)
                                : opts.pretrain_client;
  if (!index.count(pretrain_id)) {
    throw ConfigError("layered: unknown pretrain client \"" + pretrain_id + "\"");
  }
  {
    RoundPlan plan;
    plan.participants = {pretrain_id};
    plan.mask = trainable_mask(reference, stage_pretrain());
    plan.loss_tasks = detail::task_set();
    plan.local_epochs = opts.pretrain_epochs;
    plan.lr = opts.lr;
    plan.batch_size = opts.batch_size;
    run_round(out.state, plan, index, cfg, derive_seed(seed, "pretrain", 0),
              opts.workers);
    record_stage(stage_name(stage_pretrain()));
  }

  // Stage 2: federated refinement of everything above the frozen trunk.
  {
    std::vector<std::string> cohort;
    for (const ClientDataset& c : data.clients) cohort.push_back(c.client_id);
    const TrainMask mask = trainable_mask(reference, stage_common());
    const std::string name = stage_name(stage_common());
    for (std::size_t r = 0; r < opts.common_rounds; ++r) {
      RoundPlan plan;
      plan.participants = select_participants(
          cohort, opts.participation_fraction,
          derive_seed(seed, name + "/participants", r));
      plan.mask = mask;
      plan.loss_tasks = detail::task_set();
      plan.local_epochs = opts.local_epochs;
      plan.lr = opts.lr;
      plan.batch_size = opts.batch_size;
      run_round(out.state, plan, index, cfg, derive_seed(seed, name, r),
                opts.workers);
    }
    record_stage(name);
  }

  // Stage 3: each task's cohort trains its branch; clients lacking the task
  // sit the stage out entirely.
  for (Task task : all_tasks()) {
    const std::string name = stage_name(stage_task_specific(task));
    std::vector<std::string> cohort = task_cohort(data, task);
    if (cohort.empty()) {
      out.warnings.push_back("stage " + name + " skipped: no eligible clients");
      continue;
    }
    const TrainMask mask = trainable_mask(reference, stage_task_specific(task));
    for (std::size_t r = 0; r < opts.task_rounds; ++r) {
      RoundPlan plan;
      plan.participants = select_participants(
          cohort, opts.participation_fraction,
          derive_seed(seed, name + "/participants", r));
      plan.mask = mask;
      plan.loss_tasks = {task};
      plan.local_epochs = opts.local_epochs;
      plan.lr = opts.lr;
      plan.batch_size = opts.batch_size;
      run_round(out.state, plan, index, cfg, derive_seed(seed, name, r),
                opts.workers);
    }
    record_stage(name);
  }

  // Stage 4: purely local adaptation of the Personalized group; the shared
  // state keeps the pre-adaptation tensors as the fallback for new clients.
  {
    const std::string name = stage_name(stage_personalize());
    const TrainMask mask = trainable_mask(reference, stage_personalize());
    const std::uint64_t stage_seed = derive_seed(seed, name, 0);
    std::vector<ParameterStore> adapted(data.clients.size());
    parallel_for(data.clients.size(), opts.workers, [&](std::size_t i) {
      const ClientDataset& client = data.clients[i];
      ParameterStore start = materialize(out.state, client.client_id);
      const std::uint64_t s =
          derive_seed(stage_seed, "local", fnv1a64(client.client_id));
      adapted[i] = local_train(client, cfg, start, mask, detail::task_set(),
                               opts.personalize_epochs, opts.lr,
                               opts.batch_size, s)
                       .params;
    });
    for (std::size_t i = 0; i < data.clients.size(); ++i) {
      adopt_personal(out.state, data.clients[i].client_id, adapted[i]);
    }
    record_stage(name);
  }
  return out;
}

// --------------------------------------------------------- baseline regimes

struct IndividualResult {
  MetricsReport report;
  std::map<Task, std::map<std::string, ParameterStore>> models;
  std::vector<std::string> warnings;
};

/// Every eligible client trains a private full model per task, no sharing.
inline IndividualResult run_individual(const FederatedData& data,
                                       const ModelConfig& cfg,
                                       const PipelineOptions& opts,
                                       std::uint64_t seed,
                                       std::uint64_t config_digest = 0) {
  IndividualResult out;
  out.report.regime = "individual";
  out.report.seed = seed;
  out.report.config_digest = config_digest;
  const ParameterStore init = build_model(cfg, derive_seed(seed, "init"));
  const TrainMask full = trainable_mask(init, stage_pretrain());
  std::map<std::string, ClientMetrics> merged;
  for (Task task : all_tasks()) {
    std::vector<std::string> cohort = task_cohort(data, task);
    if (cohort.empty()) {
      out.warnings.push_back("task " + task_name(task) +
                             " skipped: no eligible clients");
      continue;
    }
    const std::uint64_t round0 =
        derive_seed(seed, "one_task:" + task_name(task), 0);
    std::vector<ParameterStore> models(cohort.size());
    parallel_for(cohort.size(), opts.workers, [&](std::size_t i) {
      const ClientDataset& client = detail::client_by_id(data, cohort[i]);
      models[i] = local_train(client, cfg, init, full, {task},
                              opts.individual_epochs, opts.lr, opts.batch_size,
                              derive_seed(round0, "local", fnv1a64(cohort[i])))
                      .params;
    });
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const ClientDataset& client = detail::client_by_id(data, cohort[i]);
      detail::merge_client_metrics(
          merged, evaluate_client(models[i], cfg, client, data.vocab, {task}));
      out.models[task].emplace(cohort[i], std::move(models[i]));
    }
  }
  if (out.models.empty()) {
    throw ConfigError("individual: no task has an eligible cohort");
  }
  StageMetrics final_stage;
  final_stage.stage = "final";
  for (const auto& [id, cm] : merged) final_stage.clients.push_back(cm);
  finalize_stage(final_stage);
  out.report.stages.push_back(std::move(final_stage));
  return out;
}

struct CentralizedResult {
  MetricsReport report;
  std::map<Task, ParameterStore> models;
  std::vector<std::string> warnings;
};

/// One model per task over the pooled cohort data, ignoring client boundaries.
/// A single-member cohort reduces bit-exactly to that client's individual run.
inline CentralizedResult run_centralized_bulk(const FederatedData& data,
                                              const ModelConfig& cfg,
                                              const PipelineOptions& opts,
                                              std::uint64_t seed,
                                              std::uint64_t config_digest = 0) {
  CentralizedResult out;
  out.report.regime = "centralized";
  out.report.seed = seed;
  out.report.config_digest = config_digest;
  const ParameterStore init = build_model(cfg, derive_seed(seed, "init"));
  const TrainMask full = trainable_mask(init, stage_pretrain());
  std::map<std::string, ClientMetrics> merged;
  for (Task task : all_tasks()) {
    std::vector<std::string> cohort = task_cohort(data, task);
    if (cohort.empty()) {
      out.warnings.push_back("task " + task_name(task) +
                             " skipped: no eligible clients");
      continue;
    }
    ClientDataset pooled;
    pooled.client_id = cohort.size() == 1 ? cohort.front() : "pooled";
    pooled.task_availability[task] = true;
    for (const std::string& id : cohort) {
      const ClientDataset& client = detail::client_by_id(data, id);
      pooled.train.insert(pooled.train.end(), client.train.begin(),
                          client.train.end());
      pooled.test.insert(pooled.test.end(), client.test.begin(),
                         client.test.end());
    }
    const std::uint64_t round0 =
        derive_seed(seed, "one_task:" + task_name(task), 0);
    ParameterStore model =
        local_train(pooled, cfg, init, full, {task}, opts.individual_epochs,
                    opts.lr, opts.batch_size,
                    derive_seed(round0, "local", fnv1a64(pooled.client_id)))
            .params;
    for (const std::string& id : cohort) {
      const ClientDataset& client = detail::client_by_id(data, id);
      detail::merge_client_metrics(
          merged, evaluate_client(model, cfg, client, data.vocab, {task}));
    }
    out.models.emplace(task, std::move(model));
  }
  if (out.models.empty()) {
    throw ConfigError("centralized: no task has an eligible cohort");
  }
  StageMetrics final_stage;
  final_stage.stage = "final";
  for (const auto& [id, cm] : merged) final_stage.clients.push_back(cm);
  finalize_stage(final_stage);
  out.report.stages.push_back(std::move(final_stage));
  return out;
}

struct FedOneTaskResult {
  MetricsReport report;
  std::map<Task, GlobalState> states;
  std::vector<std::string> warnings;
};

/// Classic federated averaging of the full model, one federation per task,
/// loss restricted to that task.
inline FedOneTaskResult run_federated_one_task(const FederatedData& data,
                                               const ModelConfig& cfg,
                                               const PipelineOptions& opts,
                                               std::uint64_t seed,
                                               std::uint64_t config_digest = 0) {
  FedOneTaskResult out;
  out.report.regime = "federated_one_task";
  out.report.seed = seed;
  out.report.config_digest = config_digest;
  const auto index = detail::index_clients(data);
  const ParameterStore init = build_model(cfg, derive_seed(seed, "init"));
  const TrainMask full = trainable_mask(init, stage_pretrain());
  std::map<std::string, ClientMetrics> merged;
  for (Task task : all_tasks()) {
    std::vector<std::string> cohort = task_cohort(data, task);
    if (cohort.empty()) {
      out.warnings.push_back("task " + task_name(task) +
                             " skipped: no eligible clients");
      continue;
    }
    const std::string tag = "one_task:" + task_name(task);
    GlobalState state = partition_model(init);
    for (std::size_t r = 0; r < opts.federated_rounds; ++r) {
      RoundPlan plan;
      plan.participants = select_participants(
          cohort, opts.participation_fraction,
          derive_seed(seed, tag + "/participants", r));
      plan.mask = full;
      plan.loss_tasks = {task};
      plan.local_epochs = opts.local_epochs;
      plan.lr = opts.lr;
      plan.batch_size = opts.batch_size;
      run_round(state, plan, index, cfg, derive_seed(seed, tag, r),
                opts.workers);
    }
    for (const std::string& id : cohort) {
      const ClientDataset& client = detail::client_by_id(data, id);
      detail::merge_client_metrics(
          merged, evaluate_client(materialize(state, id), cfg, client,
                                  data.vocab, {task}));
    }
    out.states.emplace(task, std::move(state));
  }
  if (out.states.empty()) {
    throw ConfigError("federated_one_task: no task has an eligible cohort");
  }
  StageMetrics final_stage;
  final_stage.stage = "final";
  for (const auto& [id, cm] : merged) final_stage.clients.push_back(cm);
  finalize_stage(final_stage);
  out.report.stages.push_back(std::move(final_stage));
  return out;
}

struct FedMultiTaskResult {
  MetricsReport report;
  GlobalState state;
  std::vector<std::string> warnings;
};

/// Federated averaging of the full model with every client and both task
/// losses at once; no freezing, no personal copies.
inline FedMultiTaskResult run_federated_multi_task(
    const FederatedData& data, const ModelConfig& cfg,
    const PipelineOptions& opts, std::uint64_t seed,
    std::uint64_t config_digest = 0) {
  if (data.clients.empty()) throw ConfigError("federated_multi_task: no clients");
  FedMultiTaskResult out;
  out.report.regime = "federated_multi_task";
  out.report.seed = seed;
  out.report.config_digest = config_digest;
  const auto index = detail::index_clients(data);
  const ParameterStore init = build_model(cfg, derive_seed(seed, "init"));
  const TrainMask full = trainable_mask(init, stage_pretrain());
  std::vector<std::string> cohort;
  for (const ClientDataset& c : data.clients) cohort.push_back(c.client_id);
  out.state = partition_model(init);
  for (std::size_t r = 0; r < opts.federated_rounds; ++r) {
    RoundPlan plan;
    plan.participants = select_participants(
        cohort, opts.participation_fraction,
        derive_seed(seed, "multi_task/participants", r));
    plan.mask = full;
    plan.loss_tasks = detail::task_set();
    plan.local_epochs = opts.local_epochs;
    plan.lr = opts.lr;
    plan.batch_size = opts.batch_size;
    run_round(out.state, plan, index, cfg, derive_seed(seed, "multi_task", r),
              opts.workers);
  }
  out.report.stages.push_back(
      evaluate_global(out.state, cfg, data, "final", opts.workers));
  return out;
}

}  // namespace fedmtl
