#include "fedmtl/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedmtl/util.hpp"

using namespace fedmtl;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

MetricsReport sample_report() {
  MetricsReport r;
  r.regime = "individual";
  r.seed = 7;
  r.config_digest = 0xabcdef;
  StageMetrics s;
  s.stage = "final";
  ClientMetrics a;
  a.client_id = "c00";
  a.accuracy[Task::Activity] = 0.8;
  a.n[Task::Activity] = 100;
  a.confusion[Task::Activity] = confusion({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
  a.confusion[Task::Activity].labels = {"Running", "Walking"};
  ClientMetrics b;
  b.client_id = "c01";
  b.accuracy[Task::Activity] = 0.6;
  b.n[Task::Activity] = 300;
  b.accuracy[Task::Position] = 0.5;
  b.n[Task::Position] = 40;
  b.confusion[Task::Activity] = confusion({1, 1}, {1, 0}, 2);
  b.confusion[Task::Position] = confusion({0, 0}, {0, 1}, 2);
  s.clients = {a, b};
  finalize_stage(s);
  r.stages.push_back(std::move(s));
  return r;
}

}  // namespace

TEST(Accuracy, BasicCases) {
  EXPECT_DOUBLE_EQ(accuracy({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy({0, 1, 1}, {0, 0, 1}), 2.0 / 3.0);
  EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
  EXPECT_THROW(accuracy({1}, {1, 2}), std::invalid_argument);
}

TEST(Accuracy, MatchesCountingOracle) {
  Rng rng(17);
  std::vector<std::size_t> pred, truth;
  for (int i = 0; i < 500; ++i) {
    pred.push_back(rng.below(4));
    truth.push_back(rng.below(4));
  }
  std::size_t hits = 0;
  for (int i = 0; i < 500; ++i) hits += pred[i] == truth[i] ? 1 : 0;
  EXPECT_DOUBLE_EQ(accuracy(pred, truth), hits / 500.0);
}

TEST(WeightedAccuracy, HandComputedExamples) {
  EXPECT_DOUBLE_EQ(weighted_average_accuracy({{0.8, 100}, {0.6, 300}}), 0.65);
  EXPECT_DOUBLE_EQ(weighted_average_accuracy({{0.73, 999}}), 0.73);
}

TEST(WeightedAccuracy, UniformWeightsGiveMean) {
  Rng rng(5);
  std::vector<std::pair<double, std::size_t>> entries;
  double sum = 0;
  for (int i = 0; i < 9; ++i) {
    const double acc = rng.uniform01();
    entries.emplace_back(acc, 50);
    sum += acc;
  }
  EXPECT_NEAR(weighted_average_accuracy(entries), sum / 9.0, 1e-12);
}

TEST(WeightedAccuracy, InvariantUnderWeightScaling) {
  std::vector<std::pair<double, std::size_t>> a = {{0.9, 10}, {0.4, 30}, {0.7, 20}};
  std::vector<std::pair<double, std::size_t>> b;
  for (auto [acc, n] : a) b.emplace_back(acc, n * 7);
  EXPECT_DOUBLE_EQ(weighted_average_accuracy(a), weighted_average_accuracy(b));
}

TEST(WeightedAccuracy, Errors) {
  EXPECT_THROW(weighted_average_accuracy({}), std::invalid_argument);
  EXPECT_THROW(weighted_average_accuracy({{0.5, 0}}), std::invalid_argument);
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  std::vector<std::size_t> v = {0, 1, 2, 1, 0, 2, 2};
  ConfusionMatrix m = confusion(v, v, 3);
  EXPECT_EQ(m.total(), v.size());
  EXPECT_EQ(m.trace(), v.size());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) {
        EXPECT_EQ(m.at(i, j), 0u);
      }
    }
  }
}

TEST(Confusion, MatchesCountingOracleAndAccuracyIdentity) {
  Rng rng(23);
  std::vector<std::size_t> pred, truth;
  for (int i = 0; i < 400; ++i) {
    pred.push_back(rng.below(5));
    truth.push_back(rng.below(5));
  }
  ConfusionMatrix m = confusion(pred, truth, 5);
  EXPECT_EQ(m.total(), 400u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      std::size_t want = 0;
      for (int t = 0; t < 400; ++t) {
        if (truth[t] == i && pred[t] == j) ++want;
      }
      EXPECT_EQ(m.at(i, j), want);
    }
  }
  EXPECT_DOUBLE_EQ(static_cast<double>(m.trace()) / static_cast<double>(m.total()),
                   accuracy(pred, truth));
}

TEST(Confusion, IndexOutOfRangeThrows) {
  EXPECT_THROW(confusion({3}, {0}, 3), std::invalid_argument);
  EXPECT_THROW(confusion({0}, {3}, 3), std::invalid_argument);
}

TEST(Report, FinalizeRecomputesWeightedAverages) {
  MetricsReport r = sample_report();
  const StageMetrics& s = r.stages[0];
  EXPECT_DOUBLE_EQ(s.weighted.at(Task::Activity), 0.65);
  EXPECT_EQ(s.n_total.at(Task::Activity), 400u);
  // only c01 reports position
  EXPECT_DOUBLE_EQ(s.weighted.at(Task::Position), 0.5);
  EXPECT_EQ(s.n_total.at(Task::Position), 40u);
}

TEST(Report, JsonRoundTripIsLossless) {
  MetricsReport r = sample_report();
  nlohmann::json j = r;
  MetricsReport back = j.get<MetricsReport>();
  EXPECT_TRUE(back == r);
}

TEST(Report, SummaryCsvShape) {
  MetricsReport r = sample_report();
  const std::string csv = summary_csv(r);
  std::istringstream in(csv);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "regime,stage,task,weighted_accuracy,n_total");
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "individual,final,activity,0.6500,400");
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "individual,final,position,0.5000,40");
  EXPECT_FALSE(std::getline(in, line));
}

TEST(Report, EmitIsByteStableAndRoundTrips) {
  MetricsReport r = sample_report();
  const auto dir = std::filesystem::temp_directory_path() / "fedmtl_metrics_test";
  std::filesystem::remove_all(dir);
  emit_report(r, dir);
  const std::string json1 = slurp(dir / "report.json");
  const std::string csv1 = slurp(dir / "summary.csv");
  emit_report(r, dir);
  EXPECT_EQ(slurp(dir / "report.json"), json1);
  EXPECT_EQ(slurp(dir / "summary.csv"), csv1);

  MetricsReport back = load_report(dir / "report.json");
  EXPECT_TRUE(back == r);

  EXPECT_TRUE(std::filesystem::exists(dir / "confusion" / "c00_activity.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "confusion" / "c01_position.csv"));
  const std::string conf = slurp(dir / "confusion" / "c00_activity.csv");
  EXPECT_EQ(conf,
            "true\\pred,Running,Walking\n"
            "Running,2,1\n"
            "Walking,0,1\n");
  std::filesystem::remove_all(dir);
}

TEST(Report, SummaryTableListsEveryStage) {
  MetricsReport r = sample_report();
  StageMetrics extra = r.stages[0];
  extra.stage = "personalize";
  r.stages.push_back(extra);
  const std::string table = summary_table(r);
  EXPECT_NE(table.find("final"), std::string::npos);
  EXPECT_NE(table.find("personalize"), std::string::npos);
  EXPECT_NE(table.find("0.6500"), std::string::npos);
}
