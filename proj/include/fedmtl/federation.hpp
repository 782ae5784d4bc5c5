#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fedmtl/data.hpp"
#include "fedmtl/model.hpp"
#include "fedmtl/params.hpp"
#include "fedmtl/util.hpp"

namespace fedmtl {

// ------------------------------------------------------------ global state

// Server-side partition of the model. Personalized tensors live in
// `default_personal` until clients personalize; `per_client` holds only the
// personalized stores of clients that have trained their own copy. Clients
// never seen before therefore materialize with the shared default, which is
// what makes zero-shot evaluation of new clients possible.
struct GlobalState {
  ParameterStore shared;  // PreTrained + Common groups
  std::map<Task, ParameterStore> per_task;
  ParameterStore default_personal;
  std::map<std::string, ParameterStore> per_client;
};

inline GlobalState partition_model(const ParameterStore& full) {
  GlobalState state;
  for (const auto& [name, entry] : full.entries) {
    switch (entry.group.kind) {
      case GroupKind::PreTrained:
      case GroupKind::Common:
        state.shared.add(name, entry.value, entry.group);
        break;
      case GroupKind::TaskSpecific:
        state.per_task[entry.group.task.value()].add(name, entry.value,
                                                     entry.group);
        break;
      case GroupKind::Personalized:
        state.default_personal.add(name, entry.value, entry.group);
        break;
    }
  }
  return state;
}

inline ParameterStore materialize(const GlobalState& state,
                                  const std::string& client_id) {
  ParameterStore out;
  auto copy_all = [&](const ParameterStore& src) {
    for (const auto& [name, entry] : src.entries) {
      out.add(name, entry.value, entry.group);
    }
  };
  copy_all(state.shared);
  for (const auto& [task, store] : state.per_task) copy_all(store);
  auto it = state.per_client.find(client_id);
  copy_all(it == state.per_client.end() ? state.default_personal : it->second);
  return out;
}

// Writes the trainable tensors of an aggregated store back into their
// partitions. Personalized tensors go to the shared default; per-client
// stores are only ever written by personalization.
inline void absorb_aggregate(GlobalState& state, const ParameterStore& agg,
                             const TrainMask& mask) {
  for (const auto& [name, entry] : agg.entries) {
    if (!mask.at(name)) continue;
    switch (entry.group.kind) {
      case GroupKind::PreTrained:
      case GroupKind::Common:
        state.shared.entries.at(name).value = entry.value;
        break;
      case GroupKind::TaskSpecific:
        state.per_task.at(entry.group.task.value()).entries.at(name).value =
            entry.value;
        break;
      case GroupKind::Personalized:
        state.default_personal.entries.at(name).value = entry.value;
        break;
    }
  }
}

// Installs a client's own personalized tensors, taken from its locally
// trained full store.
inline void adopt_personal(GlobalState& state, const std::string& client_id,
                           const ParameterStore& trained) {
  ParameterStore personal;
  for (const auto& [name, entry] : trained.entries) {
    if (entry.group.kind == GroupKind::Personalized) {
      personal.add(name, entry.value, entry.group);
    }
  }
  state.per_client[client_id] = std::move(personal);
}

// ------------------------------------------------------------- local train

struct ClientUpdate {
  std::string client_id;
  ParameterStore params;
  std::size_t n_k = 0;
};

// Mini-batch SGD over the client's train split. Only samples labeled for at
// least one task in `loss_tasks` participate; each batch applies the mean
// gradient of its samples. Frozen tensors stay bit-identical to `start`.
inline ClientUpdate local_train(const ClientDataset& client,
                                const ModelConfig& cfg,
                                const ParameterStore& start,
                                const TrainMask& mask,
                                const std::set<Task>& loss_tasks,
                                std::size_t epochs, double lr,
                                std::size_t batch_size, std::uint64_t seed) {
  require_mask_congruent(start, mask);
  if (batch_size == 0) throw std::invalid_argument("local_train: batch_size must be positive");
  if (loss_tasks.empty()) throw std::invalid_argument("local_train: no loss tasks");

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < client.train.size(); ++i) {
    for (Task t : loss_tasks) {
      if (client.train[i].labels.count(t)) {
        usable.push_back(i);
        break;
      }
    }
  }
  if (usable.empty()) {
    throw std::invalid_argument("local_train: client " + client.client_id +
                                " has no trainable samples for the requested tasks");
  }

  ClientUpdate update;
  update.client_id = client.client_id;
  update.n_k = usable.size();
  update.params = start;

  Rng rng(seed);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(usable);
    for (std::size_t pos = 0; pos < usable.size(); pos += batch_size) {
      const std::size_t end = std::min(pos + batch_size, usable.size());
      Gradients grads = zero_gradients_like(update.params);
      for (std::size_t i = pos; i < end; ++i) {
        const WindowedSample& sample = client.train[usable[i]];
        std::map<Task, std::size_t> labels;
        for (Task t : loss_tasks) {
          auto it = sample.labels.find(t);
          if (it != sample.labels.end()) labels.emplace(t, it->second);
        }
        ModelCache cache = model_forward(update.params, cfg, sample.window);
        model_backward(update.params, cfg, cache, labels, grads);
      }
      const double scale = 1.0 / static_cast<double>(end - pos);
      for (auto& [name, g] : grads) {
        for (double& v : g.data) v *= scale;
      }
      update.params = nn::sgd_step(update.params, grads, lr, mask);
    }
  }
  return update;
}

// -------------------------------------------------------------- aggregation

// Sample-count-weighted mean over trainable tensors, summed in ascending
// client_id order so the result is bit-identical under any presentation
// order. Frozen tensors must agree bitwise across updates and are copied
// from the first client.
inline ParameterStore fedavg_aggregate(const std::vector<ClientUpdate>& updates,
                                       const TrainMask& mask) {
  if (updates.empty()) {
    throw std::invalid_argument("fedavg_aggregate: no updates");
  }
  std::vector<const ClientUpdate*> ordered;
  for (const ClientUpdate& u : updates) {
    if (u.n_k == 0) {
      throw std::invalid_argument("fedavg_aggregate: update with n_k = 0 from " +
                                  u.client_id);
    }
    ordered.push_back(&u);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->client_id == ordered[i - 1]->client_id) {
      throw std::invalid_argument("fedavg_aggregate: duplicate client " +
                                  ordered[i]->client_id);
    }
    if (!ordered[0]->params.congruent_with(ordered[i]->params)) {
      throw std::invalid_argument("fedavg_aggregate: updates not congruent (" +
                                  ordered[i]->client_id + ")");
    }
  }
  require_mask_congruent(ordered[0]->params, mask);

  double total = 0;
  for (const ClientUpdate* u : ordered) total += static_cast<double>(u->n_k);

  ParameterStore out;
  for (const auto& [name, first_entry] : ordered[0]->params.entries) {
    if (mask.at(name)) {
      Tensor acc(first_entry.value.shape);
      for (const ClientUpdate* u : ordered) {
        const double w = static_cast<double>(u->n_k) / total;
        const Tensor& t = u->params.at(name);
        for (std::size_t i = 0; i < acc.numel(); ++i) acc(i) += w * t(i);
      }
      out.add(name, std::move(acc), first_entry.group);
    } else {
      for (const ClientUpdate* u : ordered) {
        if (!u->params.at(name).bit_equal(first_entry.value)) {
          throw std::runtime_error("freeze violation: tensor " + name +
                                   " differs across updates (client " +
                                   u->client_id + ")");
        }
      }
      out.add(name, first_entry.value, first_entry.group);
    }
  }
  return out;
}

// ------------------------------------------------------------------ rounds

struct RoundPlan {
  std::vector<std::string> participants;
  TrainMask mask;
  std::set<Task> loss_tasks;
  std::size_t local_epochs = 1;
  double lr = 0.05;
  std::size_t batch_size = 16;
};

// One communication round: broadcast, train every participant (possibly in
// parallel), aggregate, absorb. Each participant's training seed depends
// only on (round_seed, client_id), so results are schedule-independent.
inline void run_round(GlobalState& state, const RoundPlan& plan,
                      const std::map<std::string, const ClientDataset*>& clients,
                      const ModelConfig& cfg, std::uint64_t round_seed,
                      std::size_t workers = 1) {
  if (plan.participants.empty()) {
    throw std::invalid_argument("run_round: no participants");
  }
  std::vector<std::string> ids = plan.participants;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<ClientUpdate> updates(ids.size());
  std::vector<ParameterStore> starts;
  starts.reserve(ids.size());
  for (const std::string& id : ids) {
    auto it = clients.find(id);
    if (it == clients.end() || it->second == nullptr) {
      throw std::invalid_argument("run_round: unknown participant " + id);
    }
    starts.push_back(materialize(state, id));
  }
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(round_seed, "local", fnv1a64(ids[i]));
    updates[i] = local_train(*clients.at(ids[i]), cfg, starts[i], plan.mask,
                             plan.loss_tasks, plan.local_epochs, plan.lr,
                             plan.batch_size, seed);
  });
  ParameterStore agg = fedavg_aggregate(updates, plan.mask);
  absorb_aggregate(state, agg, plan.mask);
}

// -------------------------------------------------------------- checkpoint

namespace detail {

constexpr char kCheckpointMagic[4] = {'F', 'M', 'T', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;

enum class Partition : std::uint8_t {
  Shared = 0,
  PerTask = 1,
  DefaultPersonal = 2,
  PerClient = 3,
};

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

struct ManifestEntry {
  Partition partition;
  std::string owner;  // task name or client id; empty otherwise
  std::string name;
  LayerGroup group;
  std::vector<std::size_t> shape;
  const Tensor* tensor = nullptr;  // writer side only
};

inline std::vector<ManifestEntry> checkpoint_manifest(const GlobalState& state) {
  std::vector<ManifestEntry> manifest;
  auto add_store = [&](const ParameterStore& store, Partition part,
                       const std::string& owner) {
    for (const auto& [name, entry] : store.entries) {
      manifest.push_back(
          {part, owner, name, entry.group, entry.value.shape, &entry.value});
    }
  };
  add_store(state.shared, Partition::Shared, "");
  for (const auto& [task, store] : state.per_task) {
    add_store(store, Partition::PerTask, task_name(task));
  }
  add_store(state.default_personal, Partition::DefaultPersonal, "");
  for (const auto& [id, store] : state.per_client) {
    add_store(store, Partition::PerClient, id);
  }
  return manifest;
}

}  // namespace detail

// Layout: magic, version, model digest, tensor count, manifest
// (partition, owner, name, group, shape), then every tensor's values as
// little-endian doubles in manifest order.
inline void save_checkpoint(const GlobalState& state, std::uint64_t model_digest,
                            const std::filesystem::path& path) {
  const auto manifest = detail::checkpoint_manifest(state);
  std::string out;
  out.append(detail::kCheckpointMagic, 4);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u64(out, model_digest);
  detail::put_u64(out, manifest.size());
  for (const auto& e : manifest) {
    out.push_back(static_cast<char>(e.partition));
    detail::put_str(out, e.owner);
    detail::put_str(out, e.name);
    out.push_back(static_cast<char>(static_cast<int>(e.group.kind)));
    out.push_back(e.group.task ? 1 : 0);
    if (e.group.task) detail::put_str(out, task_name(*e.group.task));
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) detail::put_u64(out, d);
  }
  for (const auto& e : manifest) {
    for (double v : e.tensor->data) detail::put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

inline GlobalState load_checkpoint(const std::filesystem::path& path,
                                   std::uint64_t expected_digest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  detail::ByteReader r{buf};
  r.need(4);
  if (buf.compare(0, 4, detail::kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint64_t digest = r.u64();
  if (digest != expected_digest) {
    throw std::runtime_error(
        "checkpoint digest mismatch: file has " + std::to_string(digest) +
        ", model config expects " + std::to_string(expected_digest));
  }
  const std::uint64_t count = r.u64();
  std::vector<detail::ManifestEntry> manifest;
  manifest.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    detail::ManifestEntry e;
    r.need(1);
    e.partition = static_cast<detail::Partition>(buf[r.pos++]);
    e.owner = r.str();
    e.name = r.str();
    r.need(2);
    const int kind = static_cast<unsigned char>(buf[r.pos++]);
    if (kind > 3) throw std::runtime_error("checkpoint: bad layer group tag");
    e.group.kind = static_cast<GroupKind>(kind);
    const bool has_task = buf[r.pos++] != 0;
    if (has_task) e.group.task = parse_task(r.str());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<std::size_t>(r.u64()));
    }
    manifest.push_back(std::move(e));
  }
  GlobalState state;
  for (const auto& e : manifest) {
    Tensor t(e.shape);
    for (double& v : t.data) v = r.f64();
    switch (e.partition) {
      case detail::Partition::Shared:
        state.shared.add(e.name, std::move(t), e.group);
        break;
      case detail::Partition::PerTask:
        state.per_task[parse_task(e.owner)].add(e.name, std::move(t), e.group);
        break;
      case detail::Partition::DefaultPersonal:
        state.default_personal.add(e.name, std::move(t), e.group);
        break;
      case detail::Partition::PerClient:
        state.per_client[e.owner].add(e.name, std::move(t), e.group);
        break;
      default:
        throw std::runtime_error("checkpoint: bad partition tag");
    }
  }
  if (r.pos != buf.size()) {
    throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  }
  return state;
}

}  // namespace fedmtl
