#include "fedmtl/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace fedmtl;

namespace {

Segment constant_segment(std::size_t n, const std::string& act,
                         const std::string& pos = "") {
  Segment seg;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.t_ms = static_cast<std::int64_t>(100 * i);
    s.accel = {static_cast<double>(i), 0.0, 0.0};
    s.activity = act;
    s.position = pos;
    seg.push_back(s);
  }
  return seg;
}

RawRecord rec(const std::string& user, std::int64_t ts, double x,
              const std::string& act = "Walking",
              const std::string& pos = "") {
  RawRecord r;
  r.user_id = user;
  r.activity = act;
  r.position = pos;
  r.timestamp_ms = ts;
  r.x = x;
  r.y = 0;
  r.z = 0;
  return r;
}

}  // namespace

// ------------------------------------------------------------------- ingest

TEST(Csv, ParsesWellFormedRows) {
  std::istringstream in(
      "user_id,activity,position,timestamp_ms,x,y,z\n"
      "u1,Walking,Hand,0,0.100000,0.200000,0.300000\n"
      "u1,Walking,Hand,100,0.400000,0.500000,0.600000\n"
      "u1,,Hand,200,0.700000,0.800000,0.900000\n");
  auto records = parse_csv(in);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].user_id, "u1");
  EXPECT_EQ(records[0].activity, "Walking");
  EXPECT_DOUBLE_EQ(records[1].x, 0.4);
  EXPECT_EQ(records[2].activity, "");
  EXPECT_EQ(records[2].timestamp_ms, 200);
}

TEST(Csv, BadNumericValueNamesLine) {
  std::istringstream in(
      "user_id,activity,position,timestamp_ms,x,y,z\n"
      "u1,Walking,,0,0.1,0.2,0.3\n"
      "u1,Walking,,100,oops,0.2,0.3\n");
  try {
    parse_csv(in);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
  }
}

TEST(Csv, RejectsWrongHeader) {
  std::istringstream in("user,activity,position,ts,x,y,z\n");
  EXPECT_THROW(parse_csv(in), ConfigError);
}

TEST(Csv, QuotedLabelsWithCommasRoundTrip) {
  std::vector<RawRecord> records = {rec("u1", 0, 0.125, "Walking", "Foot, left")};
  std::ostringstream out;
  write_csv(out, records);
  std::istringstream in(out.str());
  auto back = parse_csv(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].position, "Foot, left");
  EXPECT_DOUBLE_EQ(back[0].x, 0.125);
}

TEST(Csv, QuantizedValuesRoundTripBitExactly) {
  Rng rng(99);
  std::vector<RawRecord> records;
  for (int i = 0; i < 200; ++i) {
    RawRecord r = rec("u1", 100 * i, 0);
    r.x = quantize6(rng.uniform(-5, 5));
    r.y = quantize6(rng.normal());
    r.z = quantize6(rng.uniform(-0.001, 0.001));
    records.push_back(r);
  }
  std::ostringstream out;
  write_csv(out, records);
  std::istringstream in(out.str());
  auto back = parse_csv(in);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(std::memcmp(&back[i].x, &records[i].x, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&back[i].y, &records[i].y, sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(&back[i].z, &records[i].z, sizeof(double)), 0);
  }
}

TEST(Ingest, InterleavedUsersSeparateIntoOrderedStreams) {
  std::vector<RawRecord> records = {rec("a", 0, 1), rec("b", 0, 2),
                                    rec("a", 100, 3), rec("b", 100, 4),
                                    rec("a", 200, 5)};
  IngestResult r = ingest_records(records);
  ASSERT_EQ(r.segments.size(), 2u);
  ASSERT_EQ(r.segments.at("a").size(), 1u);
  EXPECT_EQ(r.segments.at("a")[0].size(), 3u);
  EXPECT_EQ(r.segments.at("b")[0].size(), 2u);
  EXPECT_EQ(r.order_warnings, 0u);
  for (const auto& [user, segs] : r.segments) {
    for (const auto& seg : segs) {
      for (std::size_t i = 1; i < seg.size(); ++i) {
        EXPECT_GE(seg[i].timestamp_ms, seg[i - 1].timestamp_ms);
      }
    }
  }
}

TEST(Ingest, TimestampDecreaseSplitsStreamWithWarning) {
  std::vector<RawRecord> records = {rec("a", 0, 1), rec("a", 100, 2),
                                    rec("a", 50, 3), rec("a", 150, 4)};
  IngestResult r = ingest_records(records);
  ASSERT_EQ(r.segments.at("a").size(), 2u);
  EXPECT_EQ(r.segments.at("a")[0].size(), 2u);
  EXPECT_EQ(r.segments.at("a")[1].size(), 2u);
  EXPECT_EQ(r.order_warnings, 1u);
}

// ----------------------------------------------------------------- resample

TEST(Resample, TenHzStreamIsIdentity) {
  std::vector<RawRecord> stream;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    RawRecord r = rec("u", 100 * i, rng.uniform(-2, 2));
    stream.push_back(r);
  }
  auto segs = resample_to_10hz(stream, 10.0);
  ASSERT_EQ(segs.size(), 1u);
  ASSERT_EQ(segs[0].size(), stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    EXPECT_EQ(segs[0][i].t_ms, stream[i].timestamp_ms);
    EXPECT_DOUBLE_EQ(segs[0][i].accel[0], stream[i].x);
  }
}

TEST(Resample, TwentyHzConstantStaysConstant) {
  std::vector<RawRecord> stream;
  for (int i = 0; i < 40; ++i) stream.push_back(rec("u", 50 * i, 1.0));
  auto segs = resample_to_10hz(stream, 20.0);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].size(), 20u);
  for (const Sample& s : segs[0]) EXPECT_DOUBLE_EQ(s.accel[0], 1.0);
}

TEST(Resample, FiftyHzRampMatchesBinningOracle) {
  std::vector<RawRecord> stream;
  for (int i = 0; i < 50; ++i) {
    stream.push_back(rec("u", 20 * i, static_cast<double>(20 * i)));
  }
  auto segs = resample_to_10hz(stream, 50.0);
  ASSERT_EQ(segs.size(), 1u);
  ASSERT_EQ(segs[0].size(), 10u);
  for (std::size_t b = 0; b < 10; ++b) {
    double sum = 0;
    std::size_t n = 0;
    for (const RawRecord& r : stream) {
      if (r.timestamp_ms >= static_cast<std::int64_t>(100 * b) &&
          r.timestamp_ms < static_cast<std::int64_t>(100 * (b + 1))) {
        sum += r.x;
        ++n;
      }
    }
    EXPECT_NEAR(segs[0][b].accel[0], sum / static_cast<double>(n), 1e-12);
    EXPECT_EQ(segs[0][b].t_ms, static_cast<std::int64_t>(100 * b));
  }
}

TEST(Resample, EmptyBinSplitsSegment) {
  std::vector<RawRecord> stream = {rec("u", 0, 1), rec("u", 100, 2),
                                   rec("u", 200, 3), rec("u", 500, 4),
                                   rec("u", 600, 5)};
  auto segs = resample_to_10hz(stream, 10.0);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].size(), 3u);
  EXPECT_EQ(segs[1].size(), 2u);
  // second segment re-anchors at its first sample
  EXPECT_EQ(segs[1][0].t_ms, 500);
  EXPECT_EQ(segs[1][1].t_ms, 600);
}

TEST(Resample, TimestampsAreBinMultiplesFromAnchor) {
  std::vector<RawRecord> stream;
  Rng rng(8);
  std::int64_t t = 13;
  for (int i = 0; i < 120; ++i) {
    stream.push_back(rec("u", t, rng.normal()));
    t += 30 + static_cast<std::int64_t>(rng.below(40));  // 30..69 ms steps
  }
  auto segs = resample_to_10hz(stream, 25.0);
  for (const Segment& seg : segs) {
    ASSERT_FALSE(seg.empty());
    for (const Sample& s : seg) {
      EXPECT_EQ((s.t_ms - seg.front().t_ms) % 100, 0);
    }
  }
}

TEST(Resample, UpsamplingRejected) {
  std::vector<RawRecord> stream = {rec("u", 0, 1)};
  try {
    resample_to_10hz(stream, 5.0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("upsampling unsupported"),
              std::string::npos);
  }
}

// -------------------------------------------------------------------- merge

TEST(MergeLabels, DefaultMapsCanonicalize) {
  const LabelMap act = LabelMap::default_activity();
  EXPECT_EQ(act.apply("Walking stairs up"), "Walking");
  EXPECT_EQ(act.apply("Walking inc. stairs"), "Walking");
  EXPECT_EQ(act.apply("Walking stairs down"), "Walking");
  EXPECT_EQ(act.apply("Walking at stairs"), "Walking");
  EXPECT_EQ(act.apply("Walking"), "Walking");
  const LabelMap pos = LabelMap::default_position();
  EXPECT_EQ(pos.apply("Foot, left"), "Leg/Foot");
  EXPECT_EQ(pos.apply("Foot, right"), "Leg/Foot");
  EXPECT_EQ(pos.apply("Leg, left"), "Leg/Foot");
  EXPECT_EQ(pos.apply("Leg/Foot"), "Leg/Foot");
}

TEST(MergeLabels, UnknownLabelErrors) {
  try {
    LabelMap::default_activity().apply("Levitating");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("Levitating"), std::string::npos);
  }
}

TEST(MergeLabels, IdempotentOnSegments) {
  std::vector<Segment> segs = {constant_segment(5, "Walking stairs up", "Foot, left")};
  merge_labels(segs, LabelMap::default_activity(), LabelMap::default_position());
  EXPECT_EQ(segs[0][0].activity, "Walking");
  EXPECT_EQ(segs[0][0].position, "Leg/Foot");
  std::vector<Segment> again = segs;
  merge_labels(again, LabelMap::default_activity(), LabelMap::default_position());
  for (std::size_t i = 0; i < segs[0].size(); ++i) {
    EXPECT_EQ(again[0][i].activity, segs[0][i].activity);
    EXPECT_EQ(again[0][i].position, segs[0][i].position);
  }
}

// ---------------------------------------------------------------- windowing

TEST(Windowing, CountAndStartsMatchFormula) {
  Segment seg = constant_segment(100, "A");
  auto windows = make_windows(seg, 24, 12);
  ASSERT_EQ(windows.size(), 7u);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    // accel x of sample i was set to i, so the first cell reveals the start
    EXPECT_DOUBLE_EQ(windows[w].window(0, 0), static_cast<double>(12 * w));
  }
}

TEST(Windowing, ShortStreamYieldsNothing) {
  EXPECT_TRUE(make_windows(constant_segment(23, "A"), 24, 12).empty());
  EXPECT_TRUE(make_windows(Segment{}, 24, 12).empty());
}

TEST(Windowing, CountFormulaPropertySweep) {
  for (std::size_t t = 1; t <= 40; ++t) {
    Segment seg = constant_segment(t, "A");
    for (std::size_t l = 1; l <= 10; ++l) {
      for (std::size_t s = 1; s <= 5; ++s) {
        const std::size_t want = t >= l ? (t - l) / s + 1 : 0;
        EXPECT_EQ(make_windows(seg, l, s).size(), want)
            << "T=" << t << " L=" << l << " S=" << s;
      }
    }
  }
}

TEST(Windowing, MajorityLabelWins) {
  Segment seg = constant_segment(10, "A");
  for (std::size_t i = 6; i < 10; ++i) seg[i].activity = "B";
  auto windows = make_windows(seg, 10, 10);
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].labels.at(Task::Activity), "A");
}

TEST(Windowing, TiePrefersCenterSampleLabel) {
  Segment seg = constant_segment(10, "A");
  for (std::size_t i = 5; i < 10; ++i) seg[i].activity = "B";
  // 5 vs 5; center sample (index 5) carries "B"
  auto windows = make_windows(seg, 10, 10);
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].labels.at(Task::Activity), "B");
}

TEST(Windowing, TieWithoutCenterFallsBackLexicographically) {
  Segment seg = constant_segment(10, "A");
  seg[4].activity = "B";
  seg[6].activity = "B";
  seg[7].activity = "B";
  seg[9].activity = "B";
  seg[5].activity = "C";
  seg[8].activity = "C";
  // counts: A=4, B=4, C=2; center (index 5) is "C", not tied
  auto windows = make_windows(seg, 10, 10);
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].labels.at(Task::Activity), "A");
}

TEST(Windowing, UnlabeledTaskAbsent) {
  Segment seg = constant_segment(12, "A");  // no position labels
  auto windows = make_windows(seg, 12, 12);
  ASSERT_EQ(windows.size(), 1u);
  EXPECT_EQ(windows[0].labels.count(Task::Position), 0u);
  EXPECT_EQ(windows[0].labels.count(Task::Activity), 1u);
}

// -------------------------------------------------------------------- split

namespace {
std::vector<WindowDraft> tagged_drafts(std::size_t n, const std::string& label) {
  std::vector<WindowDraft> out;
  for (std::size_t i = 0; i < n; ++i) {
    WindowDraft d;
    d.window = Tensor({1, 3}, {static_cast<double>(i), 0, 0});
    d.labels.emplace(Task::Activity, label);
    out.push_back(std::move(d));
  }
  return out;
}
}  // namespace

TEST(Split, EightyTwentyCounts) {
  auto drafts = tagged_drafts(10, "A");
  auto [train, test] = split_train_test(drafts, 0.8, 1);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(test.size(), 2u);
}

TEST(Split, DeterministicAndPartitionsInput) {
  auto drafts = tagged_drafts(13, "A");
  auto a = split_train_test(drafts, 0.8, 42);
  auto b = split_train_test(drafts, 0.8, 42);
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i) {
    EXPECT_TRUE(a.first[i].window.bit_equal(b.first[i].window));
  }
  std::multiset<double> seen;
  for (const auto& d : a.first) seen.insert(d.window(0, 0));
  for (const auto& d : a.second) seen.insert(d.window(0, 0));
  ASSERT_EQ(seen.size(), 13u);
  double expect = 0;
  for (double v : seen) EXPECT_DOUBLE_EQ(v, expect++);
}

TEST(Split, StratifiedPerClassCounts) {
  auto drafts = tagged_drafts(10, "A");
  auto more = tagged_drafts(10, "B");
  drafts.insert(drafts.end(), more.begin(), more.end());
  auto [train, test] = split_train_test(drafts, 0.8, 7);
  std::map<std::string, std::size_t> train_counts;
  for (const auto& d : train) ++train_counts[d.labels.at(Task::Activity)];
  EXPECT_EQ(train_counts["A"], 8u);
  EXPECT_EQ(train_counts["B"], 8u);
}

TEST(Split, RatioOutOfRangeThrows) {
  auto drafts = tagged_drafts(4, "A");
  EXPECT_THROW(split_train_test(drafts, 0.0, 1), ConfigError);
  EXPECT_THROW(split_train_test(drafts, 1.0, 1), ConfigError);
}

TEST(Split, EmptyInputGivesEmptyOutputs) {
  auto [train, test] = split_train_test({}, 0.8, 1);
  EXPECT_TRUE(train.empty());
  EXPECT_TRUE(test.empty());
}

// ---------------------------------------------------------------- synthetic

TEST(Synthetic, DeterministicForSpecAndSeed) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.windows_per_class = 6;
  FederatedData a = generate_synthetic(spec, 7);
  FederatedData b = generate_synthetic(spec, 7);
  ASSERT_EQ(a.clients.size(), b.clients.size());
  for (std::size_t k = 0; k < a.clients.size(); ++k) {
    ASSERT_EQ(a.clients[k].train.size(), b.clients[k].train.size());
    for (std::size_t i = 0; i < a.clients[k].train.size(); ++i) {
      EXPECT_TRUE(a.clients[k].train[i].window.bit_equal(
          b.clients[k].train[i].window));
    }
  }
  FederatedData c = generate_synthetic(spec, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.clients[0].train.size(); ++i) {
    any_diff |= !c.clients[0].train[i].window.bit_equal(
        a.clients[0].train[i].window);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Synthetic, ClassWindowCountsMatchSpec) {
  SyntheticSpec spec;
  spec.num_clients = 4;
  spec.activity_classes = 3;
  spec.position_classes = 2;
  spec.position_clients = 1;
  spec.windows_per_class = 6;
  FederatedData data = generate_synthetic(spec, 11);
  ASSERT_EQ(data.clients.size(), 4u);
  ASSERT_EQ(data.vocab.count(Task::Activity), 3u);
  ASSERT_EQ(data.vocab.count(Task::Position), 2u);

  for (std::size_t k = 0; k < data.clients.size(); ++k) {
    const ClientDataset& c = data.clients[k];
    std::map<std::size_t, std::size_t> act_counts, pos_counts;
    for (const auto& set : {c.train, c.test}) {
      for (const WindowedSample& w : set) {
        auto a = w.labels.find(Task::Activity);
        if (a != w.labels.end()) ++act_counts[a->second];
        auto p = w.labels.find(Task::Position);
        if (p != w.labels.end()) ++pos_counts[p->second];
      }
    }
    const bool has_pos = k == 0;
    const std::size_t per_act =
        spec.windows_per_class * (has_pos ? spec.position_classes : 1);
    ASSERT_EQ(act_counts.size(), 3u);
    for (const auto& [cls, n] : act_counts) EXPECT_EQ(n, per_act);
    if (has_pos) {
      ASSERT_EQ(pos_counts.size(), 2u);
      for (const auto& [cls, n] : pos_counts) {
        EXPECT_EQ(n, spec.windows_per_class * spec.activity_classes);
      }
    } else {
      EXPECT_TRUE(pos_counts.empty());
    }
  }
}

TEST(Synthetic, AvailabilityFollowsDistinctClassCount) {
  SyntheticSpec spec;
  spec.num_clients = 3;
  spec.windows_per_class = 6;
  FederatedData data = generate_synthetic(spec, 5);
  EXPECT_TRUE(data.clients[0].task_availability.at(Task::Activity));
  EXPECT_TRUE(data.clients[0].task_availability.at(Task::Position));
  EXPECT_TRUE(data.clients[1].task_availability.at(Task::Activity));
  EXPECT_FALSE(data.clients[1].task_availability.at(Task::Position));
  // a threshold above the class count flips activity off too
  FederatedData strict = generate_synthetic(spec, 5, 0.8, 4);
  EXPECT_FALSE(strict.clients[1].task_availability.at(Task::Activity));
}

TEST(Synthetic, TrainStatisticsAreZeroMeanUnitVariance) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.windows_per_class = 8;
  spec.noise_sigma = 0.3;
  FederatedData data = generate_synthetic(spec, 19);
  for (const ClientDataset& c : data.clients) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double sum = 0, sq = 0;
      std::size_t n = 0;
      for (const WindowedSample& w : c.train) {
        for (std::size_t i = 0; i < w.window.dim(0); ++i) {
          sum += w.window(i, ch);
          sq += w.window(i, ch) * w.window(i, ch);
          ++n;
        }
      }
      const double mean = sum / static_cast<double>(n);
      const double var = sq / static_cast<double>(n) - mean * mean;
      EXPECT_NEAR(mean, 0.0, 1e-9);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

TEST(Synthetic, RotationChangesSignalUnderSameLabel) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.position_clients = 0;
  spec.windows_per_class = 2;
  spec.noise_sigma = 0.0;
  spec.rotate_labels = true;
  auto records = synthetic_records(spec, 3);
  auto first_running = [&](const std::string& client) {
    for (const RawRecord& r : records) {
      if (r.user_id == client && r.activity == "Running") return r;
    }
    throw std::runtime_error("no Running record");
  };
  RawRecord a = first_running("c00");
  RawRecord b = first_running("c01");
  EXPECT_NE(a.x, b.x);

  spec.rotate_labels = false;
  records = synthetic_records(spec, 3);
  a = first_running("c00");
  b = first_running("c01");
  EXPECT_DOUBLE_EQ(a.x, b.x);
}

TEST(Synthetic, NoiselessOneNearestNeighborIsPerfect) {
  SyntheticSpec spec;
  spec.num_clients = 3;
  spec.activity_classes = 3;
  spec.position_classes = 2;
  spec.position_clients = 1;
  spec.windows_per_class = 6;
  spec.noise_sigma = 0.0;
  FederatedData data = generate_synthetic(spec, 23);
  for (const ClientDataset& c : data.clients) {
    ASSERT_FALSE(c.train.empty());
    ASSERT_FALSE(c.test.empty());
    for (const WindowedSample& probe : c.test) {
      double best = std::numeric_limits<double>::infinity();
      const WindowedSample* hit = nullptr;
      for (const WindowedSample& cand : c.train) {
        double d2 = 0;
        for (std::size_t i = 0; i < probe.window.numel(); ++i) {
          const double d = probe.window(i) - cand.window(i);
          d2 += d * d;
        }
        if (d2 < best) {
          best = d2;
          hit = &cand;
        }
      }
      ASSERT_NE(hit, nullptr);
      for (const auto& [task, label] : probe.labels) {
        EXPECT_EQ(hit->labels.at(task), label);
      }
    }
  }
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec spec;
  spec.activity_classes = 1;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = SyntheticSpec{};
  spec.position_clients = 9;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = SyntheticSpec{};
  spec.noise_sigma = -0.1;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_NO_THROW(SyntheticSpec{}.validate());
}

// ------------------------------------------------------- pipeline assembly

TEST(BuildDatasets, VocabularyIsSortedAndShared) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.windows_per_class = 6;
  FederatedData data = generate_synthetic(spec, 2);
  const auto& acts = data.vocab.classes.at(Task::Activity);
  ASSERT_EQ(acts.size(), 3u);
  EXPECT_TRUE(std::is_sorted(acts.begin(), acts.end()));
  EXPECT_EQ(data.vocab.index_of(Task::Activity, acts[1]), 1u);
  EXPECT_THROW(data.vocab.index_of(Task::Activity, "Nope"), ConfigError);
}

TEST(BuildDatasets, CsvPathMatchesDirectPath) {
  SyntheticSpec spec;
  spec.num_clients = 2;
  spec.windows_per_class = 5;
  spec.noise_sigma = 0.2;
  const std::uint64_t seed = 31;
  auto records = synthetic_records(spec, seed);

  std::ostringstream csv;
  write_csv(csv, records);
  std::istringstream in(csv.str());
  IngestResult ingest = ingest_csv(in);

  DatasetOptions opts;
  opts.window_length = spec.window_length;
  opts.stride = spec.stride;
  opts.seed = seed;
  FederatedData via_csv = build_datasets(ingest, opts);
  FederatedData direct = generate_synthetic(spec, seed);

  ASSERT_EQ(via_csv.clients.size(), direct.clients.size());
  for (std::size_t k = 0; k < direct.clients.size(); ++k) {
    const ClientDataset& a = via_csv.clients[k];
    const ClientDataset& b = direct.clients[k];
    EXPECT_EQ(a.client_id, b.client_id);
    ASSERT_EQ(a.train.size(), b.train.size());
    ASSERT_EQ(a.test.size(), b.test.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      EXPECT_TRUE(a.train[i].window.bit_equal(b.train[i].window));
      EXPECT_EQ(a.train[i].labels, b.train[i].labels);
    }
  }
}

TEST(BuildDatasets, MergeAppliedWhenMapsProvided) {
  std::vector<RawRecord> records;
  for (int i = 0; i < 30; ++i) {
    records.push_back(rec("u", 100 * i, 0.1 * i, "Walking stairs up", "Foot, left"));
  }
  for (int i = 30; i < 60; ++i) {
    records.push_back(rec("u", 100 * i, -0.2 * i, "Walking", "Leg, right"));
  }
  DatasetOptions opts;
  opts.window_length = 10;
  opts.stride = 5;
  opts.seed = 1;
  opts.activity_map = LabelMap::default_activity();
  opts.position_map = LabelMap::default_position();
  FederatedData data = build_datasets(ingest_records(records), opts);
  ASSERT_EQ(data.clients.size(), 1u);
  EXPECT_EQ(data.vocab.classes.at(Task::Activity),
            std::vector<std::string>{"Walking"});
  EXPECT_EQ(data.vocab.classes.at(Task::Position),
            std::vector<std::string>{"Leg/Foot"});
}
