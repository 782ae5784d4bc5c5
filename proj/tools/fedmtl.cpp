// Command-line front end: gen-data | run | eval, each driven by a JSON
// config. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedmtl/config.hpp"

namespace fs = std::filesystem;
using namespace fedmtl;

namespace {

fs::path resolve_out(const ExperimentConfig& cfg, const std::string& cli_out,
                     const char* command) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  throw ConfigError(std::string(command) +
                    ": no output directory (set out_dir or pass --out)");
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
}

int cmd_gen_data(const std::string& config_path, const std::string& cli_out) {
  ExperimentConfig cfg = load_config(config_path);
  if (cfg.data_kind != ExperimentConfig::DataKind::Synthetic) {
    throw ConfigError("gen-data: config must use synthetic data");
  }
  const fs::path out = resolve_out(cfg, cli_out, "gen-data");
  fs::create_directories(out);
  std::vector<RawRecord> records = load_raw_records(cfg);
  std::map<std::string, std::vector<RawRecord>> by_user;
  for (RawRecord& r : records) by_user[r.user_id].push_back(std::move(r));
  for (const auto& [user, rows] : by_user) {
    const fs::path file = out / (user + ".csv");
    std::ofstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + file.string());
    write_csv(f, rows);
  }
  std::printf("wrote %zu client files to %s\n", by_user.size(),
              out.string().c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& cli_out,
            std::size_t workers) {
  ExperimentConfig cfg = load_config(config_path);
  const fs::path out = resolve_out(cfg, cli_out, "run");
  cfg.train.workers = workers;
  const FederatedData data = load_experiment_data(cfg);
  const ModelConfig model = resolve_model(cfg, data);
  const fs::path ckpt_dir = out / "checkpoints";

  MetricsReport report;
  if (cfg.regime == "layered") {
    LayeredResult r = run_layered(data, model, cfg.train, cfg.seed, cfg.digest,
                                  ckpt_dir);
    print_warnings(r.warnings);
    report = std::move(r.report);
  } else if (cfg.regime == "individual") {
    IndividualResult r =
        run_individual(data, model, cfg.train, cfg.seed, cfg.digest);
    print_warnings(r.warnings);
    report = std::move(r.report);
  } else if (cfg.regime == "centralized") {
    CentralizedResult r =
        run_centralized_bulk(data, model, cfg.train, cfg.seed, cfg.digest);
    print_warnings(r.warnings);
    report = std::move(r.report);
  } else if (cfg.regime == "federated_one_task") {
    FedOneTaskResult r =
        run_federated_one_task(data, model, cfg.train, cfg.seed, cfg.digest);
    print_warnings(r.warnings);
    fs::create_directories(ckpt_dir);
    for (const auto& [task, state] : r.states) {
      save_checkpoint(state, model.digest(),
                      ckpt_dir / ("checkpoint_final_" + task_name(task) + ".bin"));
    }
    report = std::move(r.report);
  } else if (cfg.regime == "federated_multi_task") {
    FedMultiTaskResult r =
        run_federated_multi_task(data, model, cfg.train, cfg.seed, cfg.digest);
    print_warnings(r.warnings);
    fs::create_directories(ckpt_dir);
    save_checkpoint(r.state, model.digest(), ckpt_dir / "checkpoint_final.bin");
    report = std::move(r.report);
  } else {
    throw ConfigError("run: unknown regime " + cfg.regime);
  }

  emit_report(report, out);
  std::fputs(summary_table(report).c_str(), stdout);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& cli_out,
             std::size_t workers) {
  ExperimentConfig cfg = load_config(config_path);
  if (cfg.eval_checkpoint.empty()) {
    throw ConfigError("eval: config has no eval.checkpoint");
  }
  const fs::path out = resolve_out(cfg, cli_out, "eval");
  const FederatedData data = load_experiment_data(cfg);
  const ModelConfig model = resolve_model(cfg, data);
  const GlobalState state = load_checkpoint(cfg.eval_checkpoint, model.digest());
  MetricsReport report = evaluate_checkpoint(state, model, data, workers);
  report.seed = cfg.seed;
  report.config_digest = cfg.digest;
  emit_report(report, out);
  std::fputs(summary_table(report).c_str(), stdout);
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated multi-task transfer learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::size_t workers = 1;

  auto add_common = [&](CLI::App* sub, bool with_workers) {
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    if (with_workers) {
      sub->add_option("--workers", workers, "worker threads")
          ->check(CLI::PositiveNumber);
    }
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic sensor CSVs");
  add_common(gen, false);
  CLI::App* run = app.add_subcommand("run", "train a regime and write reports");
  add_common(run, true);
  CLI::App* eval = app.add_subcommand("eval", "score a saved checkpoint");
  add_common(eval, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (app.got_subcommand(gen)) {
    return guarded([&] { return cmd_gen_data(config_path, out_dir); });
  }
  if (app.got_subcommand(run)) {
    return guarded([&] { return cmd_run(config_path, out_dir, workers); });
  }
  return guarded([&] { return cmd_eval(config_path, out_dir, workers); });
}
