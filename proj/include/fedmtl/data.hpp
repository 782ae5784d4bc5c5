#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedmtl/params.hpp"
#include "fedmtl/tensor.hpp"
#include "fedmtl/util.hpp"

namespace fedmtl {

// ------------------------------------------------------------------- ingest

// One CSV row. Empty activity/position strings mean "no label for that task".
struct RawRecord {
  std::string user_id;
  std::string activity;
  std::string position;
  std::int64_t timestamp_ms = 0;
  double x = 0, y = 0, z = 0;
};

// Per-user streams, each split into segments wherever timestamps ran
// backwards in the input. Users are keyed in sorted order.
struct IngestResult {
  std::map<std::string, std::vector<std::vector<RawRecord>>> segments;
  std::size_t order_warnings = 0;
};

inline const char* csv_header() {
  return "user_id,activity,position,timestamp_ms,x,y,z";
}

namespace detail {

// Minimal RFC-4180 field splitter; labels may contain commas.
inline std::vector<std::string> csv_split(const std::string& line,
                                          std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) {
    throw ConfigError("csv line " + std::to_string(line_no) +
                      ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no,
                           const char* what) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size() || s.empty()) {
    throw ConfigError("csv line " + std::to_string(line_no) + ": bad " +
                      std::string(what) + " value \"" + s + "\"");
  }
  return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t line_no,
                              const char* what) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size() || s.empty()) {
    throw ConfigError("csv line " + std::to_string(line_no) + ": bad " +
                      std::string(what) + " value \"" + s + "\"");
  }
  return v;
}

}  // namespace detail

inline std::vector<RawRecord> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) {
    throw ConfigError("csv: expected header \"" + std::string(csv_header()) +
                      "\", got \"" + line + "\"");
  }
  std::vector<RawRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = detail::csv_split(line, line_no);
    if (f.size() != 7) {
      throw ConfigError("csv line " + std::to_string(line_no) + ": expected 7 fields, got " +
                        std::to_string(f.size()));
    }
    RawRecord r;
    r.user_id = f[0];
    r.activity = f[1];
    r.position = f[2];
    r.timestamp_ms = detail::parse_int(f[3], line_no, "timestamp_ms");
    r.x = detail::parse_double(f[4], line_no, "x");
    r.y = detail::parse_double(f[5], line_no, "y");
    r.z = detail::parse_double(f[6], line_no, "z");
    if (r.user_id.empty()) {
      throw ConfigError("csv line " + std::to_string(line_no) + ": empty user_id");
    }
    if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.z)) {
      throw ConfigError("csv line " + std::to_string(line_no) + ": non-finite accel value");
    }
    records.push_back(std::move(r));
  }
  return records;
}

// Groups records into per-user streams preserving file order, splitting a
// stream whenever its timestamp decreases; each split counts one warning.
inline IngestResult ingest_records(const std::vector<RawRecord>& records) {
  IngestResult out;
  for (const RawRecord& r : records) {
    auto& segs = out.segments[r.user_id];
    if (segs.empty()) {
      segs.emplace_back();
    } else if (!segs.back().empty() &&
               r.timestamp_ms < segs.back().back().timestamp_ms) {
      segs.emplace_back();
      ++out.order_warnings;
    }
    segs.back().push_back(r);
  }
  return out;
}

inline IngestResult ingest_csv(std::istream& in) {
  return ingest_records(parse_csv(in));
}

inline IngestResult ingest_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open csv file: " + path);
  try {
    return ingest_csv(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Accel values are quantized to 1e-6 before writing, so a %.6f round trip
// through write_csv / parse_csv reproduces doubles bit-exactly.
inline double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

inline void write_csv(std::ostream& out, const std::vector<RawRecord>& records) {
  out << csv_header() << '\n';
  char buf[64];
  for (const RawRecord& r : records) {
    out << detail::csv_quote(r.user_id) << ',' << detail::csv_quote(r.activity)
        << ',' << detail::csv_quote(r.position) << ',' << r.timestamp_ms;
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f", r.x, r.y, r.z);
    out << buf << '\n';
  }
}

// ----------------------------------------------------------------- resample

// One consolidated 10 Hz sample.
struct Sample {
  std::int64_t t_ms = 0;
  std::array<double, 3> accel{0, 0, 0};
  std::string activity;
  std::string position;
};

using Segment = std::vector<Sample>;

namespace detail {

// Majority label among non-empty labels, ties broken by earliest first
// occurrence. Empty string when no sample carries a label.
inline std::string bin_majority(const std::vector<const std::string*>& labels) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // count, first index
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string& l = *labels[i];
    if (l.empty()) continue;
    auto [it, fresh] = tally.emplace(l, std::make_pair(std::size_t{0}, i));
    ++it->second.first;
    if (fresh) it->second.second = i;
  }
  std::string best;
  std::size_t best_count = 0, best_first = 0;
  for (const auto& [label, cf] : tally) {
    if (cf.first > best_count ||
        (cf.first == best_count && cf.second < best_first)) {
      best = label;
      best_count = cf.first;
      best_first = cf.second;
    }
  }
  return best;
}

}  // namespace detail

// Consolidates one raw stream to 10 Hz using non-overlapping 100 ms bins
// anchored at the stream start. Each output sample is the bin mean with the
// bin-start timestamp; an empty bin closes the current segment and the next
// sample re-anchors a new one. Labels take the bin majority.
inline std::vector<Segment> resample_to_10hz(const std::vector<RawRecord>& stream,
                                             double native_hz) {
  if (native_hz < 10.0) {
    throw ConfigError("resample: upsampling unsupported (native rate " +
                      std::to_string(native_hz) + " Hz below 10 Hz)");
  }
  std::vector<Segment> out;
  if (stream.empty()) return out;

  Segment cur;
  std::int64_t anchor = stream.front().timestamp_ms;
  std::int64_t bin = 0;
  std::array<double, 3> sum{0, 0, 0};
  std::size_t count = 0;
  std::vector<const std::string*> acts, poss;

  auto flush_bin = [&]() {
    if (count == 0) return;
    Sample s;
    s.t_ms = anchor + 100 * bin;
    for (int d = 0; d < 3; ++d) s.accel[d] = sum[d] / static_cast<double>(count);
    s.activity = detail::bin_majority(acts);
    s.position = detail::bin_majority(poss);
    cur.push_back(std::move(s));
    sum = {0, 0, 0};
    count = 0;
    acts.clear();
    poss.clear();
  };

  for (const RawRecord& r : stream) {
    const std::int64_t b = (r.timestamp_ms - anchor) / 100;
    if (b != bin) {
      flush_bin();
      if (b > bin + 1) {
        // empty bin: terminate the contiguous segment
        if (!cur.empty()) out.push_back(std::move(cur));
        cur = Segment{};
        anchor = r.timestamp_ms;
        bin = 0;
      } else {
        bin = b;
      }
    }
    sum[0] += r.x;
    sum[1] += r.y;
    sum[2] += r.z;
    ++count;
    acts.push_back(&r.activity);
    poss.push_back(&r.position);
  }
  flush_bin();
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ------------------------------------------------------------ label merging

// Raw label -> canonical label. The map must cover every label it is applied
// to; canonical labels map to themselves, which makes application idempotent.
struct LabelMap {
  std::map<std::string, std::string> to_canonical;

  std::string apply(const std::string& raw) const {
    auto it = to_canonical.find(raw);
    if (it == to_canonical.end()) {
      throw ConfigError("merge_labels: no mapping for label \"" + raw + "\"");
    }
    return it->second;
  }

  static LabelMap default_activity() {
    LabelMap m;
    for (const char* v : {"Walking", "Walking inc. stairs", "Walking stairs up",
                          "Walking stairs down", "Walking at stairs"}) {
      m.to_canonical.emplace(v, "Walking");
    }
    return m;
  }

  static LabelMap default_position() {
    LabelMap m;
    for (const char* v :
         {"Foot, left", "Foot, right", "Leg, left", "Leg, right", "Leg/Foot"}) {
      m.to_canonical.emplace(v, "Leg/Foot");
    }
    return m;
  }
};

// Canonicalizes labels in place. Absent labels stay absent.
inline void merge_labels(std::vector<Segment>& segments,
                         const LabelMap& activity_map,
                         const LabelMap& position_map) {
  for (Segment& seg : segments) {
    for (Sample& s : seg) {
      if (!s.activity.empty()) s.activity = activity_map.apply(s.activity);
      if (!s.position.empty()) s.position = position_map.apply(s.position);
    }
  }
}

// ---------------------------------------------------------------- windowing

// A window before labels are resolved against the global vocabulary.
struct WindowDraft {
  Tensor window;  // [L x 3]
  std::map<Task, std::string> labels;
};

namespace detail {

// Majority vote over the window's non-empty labels for one task. Ties prefer
// the center sample's label when it is among the tied; otherwise the
// lexicographically smallest tied label wins. Empty when no sample is labeled.
inline std::string window_majority(const Segment& seg, std::size_t start,
                                   std::size_t len,
                                   const std::string Sample::*field) {
  std::map<std::string, std::size_t> tally;
  for (std::size_t i = 0; i < len; ++i) {
    const std::string& l = seg[start + i].*field;
    if (!l.empty()) ++tally[l];
  }
  if (tally.empty()) return "";
  std::size_t best = 0;
  for (const auto& [label, n] : tally) best = std::max(best, n);
  std::vector<std::string> tied;
  for (const auto& [label, n] : tally) {
    if (n == best) tied.push_back(label);
  }
  if (tied.size() == 1) return tied.front();
  const std::string& center = seg[start + len / 2].*field;
  for (const std::string& t : tied) {
    if (t == center) return t;
  }
  return *std::min_element(tied.begin(), tied.end());
}

}  // namespace detail

// Sliding windows of `length` samples advancing by `stride`. Yields
// floor((T - L)/S) + 1 windows for T >= L, none otherwise. Windows where no
// task ends up labeled are dropped.
inline std::vector<WindowDraft> make_windows(const Segment& seg,
                                             std::size_t length,
                                             std::size_t stride) {
  if (length == 0 || stride == 0) {
    throw ConfigError("windowing: length and stride must be positive");
  }
  std::vector<WindowDraft> out;
  if (seg.size() < length) return out;
  for (std::size_t start = 0; start + length <= seg.size(); start += stride) {
    WindowDraft d;
    d.window = Tensor({length, 3});
    for (std::size_t i = 0; i < length; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        d.window(i, c) = seg[start + i].accel[c];
      }
    }
    const std::string act =
        detail::window_majority(seg, start, length, &Sample::activity);
    const std::string pos =
        detail::window_majority(seg, start, length, &Sample::position);
    if (!act.empty()) d.labels.emplace(Task::Activity, act);
    if (!pos.empty()) d.labels.emplace(Task::Position, pos);
    if (!d.labels.empty()) out.push_back(std::move(d));
  }
  return out;
}

// -------------------------------------------------------------------- split

// Deterministic stratified split. Samples are grouped by their full label
// signature; strata smaller than 5 are pooled. Within each stratum a seeded
// shuffle picks ceil(ratio * n) samples for train. Outputs preserve input
// order.
inline std::pair<std::vector<WindowDraft>, std::vector<WindowDraft>>
split_train_test(const std::vector<WindowDraft>& samples, double ratio,
                 std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split: ratio must be in (0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string key;
    for (const auto& [task, label] : samples[i].labels) {
      key += task_name(task) + "=" + label + "|";
    }
    strata[key].push_back(i);
  }
  // pool small strata so the shuffle has something to stratify
  std::map<std::string, std::vector<std::size_t>> pooled;
  for (auto& [key, idx] : strata) {
    if (idx.size() < 5) {
      auto& rest = pooled[""];
      rest.insert(rest.end(), idx.begin(), idx.end());
    } else {
      pooled.emplace(key, std::move(idx));
    }
  }
  std::vector<bool> in_train(samples.size(), false);
  for (auto& [key, idx] : pooled) {
    std::sort(idx.begin(), idx.end());
    Rng rng(derive_seed(seed, "split", fnv1a64(key)));
    rng.shuffle(idx);
    const double want = ratio * static_cast<double>(idx.size());
    const std::size_t n_train =
        static_cast<std::size_t>(std::ceil(want - 1e-9));
    for (std::size_t i = 0; i < n_train && i < idx.size(); ++i) {
      in_train[idx[i]] = true;
    }
  }
  std::pair<std::vector<WindowDraft>, std::vector<WindowDraft>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (in_train[i] ? out.first : out.second).push_back(samples[i]);
  }
  return out;
}

// ----------------------------------------------------------------- datasets

// A window whose labels are class indices into the shared vocabulary.
struct WindowedSample {
  Tensor window;
  std::map<Task, std::size_t> labels;
};

// Canonical label list per task, sorted, shared across all clients.
struct LabelVocab {
  std::map<Task, std::vector<std::string>> classes;

  std::size_t count(Task t) const {
    auto it = classes.find(t);
    return it == classes.end() ? 0 : it->second.size();
  }

  std::size_t index_of(Task t, const std::string& label) const {
    const auto& v = classes.at(t);
    auto it = std::lower_bound(v.begin(), v.end(), label);
    if (it == v.end() || *it != label) {
      throw ConfigError("vocab: unknown " + task_name(t) + " label \"" + label + "\"");
    }
    return static_cast<std::size_t>(it - v.begin());
  }
};

struct ClientDataset {
  std::string client_id;
  std::vector<WindowedSample> train;
  std::vector<WindowedSample> test;
  std::map<Task, bool> task_availability;

  std::size_t n_k() const { return train.size(); }
};

struct FederatedData {
  std::vector<ClientDataset> clients;
  LabelVocab vocab;
  std::size_t order_warnings = 0;
};

struct DatasetOptions {
  std::size_t window_length = 24;
  std::size_t stride = 12;
  double split_ratio = 0.8;
  double native_hz = 10.0;
  std::uint64_t seed = 0;
  std::size_t availability_min_classes = 2;
  bool normalize = true;
  std::optional<LabelMap> activity_map;
  std::optional<LabelMap> position_map;
  // When set, observed labels missing from a map are added as self-maps, so
  // the default merge maps can be applied to corpora with a wider vocabulary.
  bool extend_maps_with_identity = false;
};

namespace detail {

inline void normalize_client(std::vector<WindowedSample>& train,
                             std::vector<WindowedSample>& test) {
  std::array<double, 3> mean{0, 0, 0}, var{0, 0, 0};
  std::size_t n = 0;
  for (const WindowedSample& w : train) {
    for (std::size_t i = 0; i < w.window.dim(0); ++i) {
      for (std::size_t c = 0; c < 3; ++c) mean[c] += w.window(i, c);
      ++n;
    }
  }
  if (n == 0) return;
  for (int c = 0; c < 3; ++c) mean[c] /= static_cast<double>(n);
  for (const WindowedSample& w : train) {
    for (std::size_t i = 0; i < w.window.dim(0); ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = w.window(i, c) - mean[c];
        var[c] += d * d;
      }
    }
  }
  std::array<double, 3> stdev;
  for (int c = 0; c < 3; ++c) {
    var[c] /= static_cast<double>(n);
    stdev[c] = std::sqrt(var[c]);
    if (stdev[c] < 1e-12) stdev[c] = 1.0;
  }
  auto apply = [&](std::vector<WindowedSample>& set) {
    for (WindowedSample& w : set) {
      for (std::size_t i = 0; i < w.window.dim(0); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
          w.window(i, c) = (w.window(i, c) - mean[c]) / stdev[c];
        }
      }
    }
  };
  apply(train);
  apply(test);
}

}  // namespace detail

// Full pipeline from ingested streams to per-client windowed datasets:
// resample, optional label merge, window, per-client stratified split,
// per-client z-score normalization from train statistics, then label
// indexing against the global vocabulary built from every client.
inline FederatedData build_datasets(const IngestResult& ingest,
                                    const DatasetOptions& opts) {
  FederatedData out;
  out.order_warnings = ingest.order_warnings;

  std::map<std::string, std::vector<WindowDraft>> drafts_by_user;
  std::map<Task, std::set<std::string>> seen;
  for (const auto& [user, raw_segments] : ingest.segments) {
    std::vector<Segment> segments;
    for (const auto& raw : raw_segments) {
      for (Segment& s : resample_to_10hz(raw, opts.native_hz)) {
        segments.push_back(std::move(s));
      }
    }
    if (opts.activity_map || opts.position_map) {
      LabelMap act = opts.activity_map.value_or(LabelMap{});
      LabelMap pos = opts.position_map.value_or(LabelMap{});
      // An absent map always degrades to identity; a present one is only
      // identity-extended when the caller opts in.
      const bool fill_act = !opts.activity_map || opts.extend_maps_with_identity;
      const bool fill_pos = !opts.position_map || opts.extend_maps_with_identity;
      for (const Segment& seg : segments) {
        for (const Sample& s : seg) {
          if (fill_act && !s.activity.empty()) {
            act.to_canonical.emplace(s.activity, s.activity);
          }
          if (fill_pos && !s.position.empty()) {
            pos.to_canonical.emplace(s.position, s.position);
          }
        }
      }
      merge_labels(segments, act, pos);
    }
    std::vector<WindowDraft> drafts;
    for (const Segment& seg : segments) {
      for (WindowDraft& d : make_windows(seg, opts.window_length, opts.stride)) {
        drafts.push_back(std::move(d));
      }
    }
    for (const WindowDraft& d : drafts) {
      for (const auto& [task, label] : d.labels) seen[task].insert(label);
    }
    if (!drafts.empty()) drafts_by_user.emplace(user, std::move(drafts));
  }

  for (const auto& [task, labels] : seen) {
    out.vocab.classes[task] = std::vector<std::string>(labels.begin(), labels.end());
  }

  for (auto& [user, drafts] : drafts_by_user) {
    auto [train_drafts, test_drafts] =
        split_train_test(drafts, opts.split_ratio,
                         derive_seed(opts.seed, "split", fnv1a64(user)));
    ClientDataset client;
    client.client_id = user;
    auto index_all = [&](const std::vector<WindowDraft>& src,
                         std::vector<WindowedSample>& dst) {
      for (const WindowDraft& d : src) {
        WindowedSample w;
        w.window = d.window;
        for (const auto& [task, label] : d.labels) {
          w.labels.emplace(task, out.vocab.index_of(task, label));
        }
        dst.push_back(std::move(w));
      }
    };
    index_all(train_drafts, client.train);
    index_all(test_drafts, client.test);
    if (opts.normalize) detail::normalize_client(client.train, client.test);
    for (Task task : all_tasks()) {
      std::set<std::size_t> classes;
      for (const auto& set : {client.train, client.test}) {
        for (const WindowedSample& w : set) {
          auto it = w.labels.find(task);
          if (it != w.labels.end()) classes.insert(it->second);
        }
      }
      client.task_availability[task] =
          classes.size() >= opts.availability_min_classes;
    }
    out.clients.push_back(std::move(client));
  }
  return out;
}

// ----------------------------------------------------------- synthetic data

// Desk-scale generator. Each class pairs a deterministic per-axis sinusoid
// signature with Gaussian noise; signature periods divide the default stride,
// so noiseless windows of one class are bit-identical. Clients listed first
// carry position labels; the rest only activity labels. With rotate_labels,
// client k's activity labels are rotated k places against the signatures, so
// the same label means different signals on different clients.
struct SyntheticSpec {
  std::size_t num_clients = 4;
  std::size_t activity_classes = 3;
  std::size_t position_classes = 2;
  std::size_t position_clients = 1;
  std::size_t windows_per_class = 40;
  double noise_sigma = 0.4;
  bool rotate_labels = true;
  std::size_t window_length = 24;
  std::size_t stride = 12;

  void validate() const {
    if (num_clients == 0) throw ConfigError("synthetic: num_clients must be positive");
    if (activity_classes < 2 || activity_classes > 8) {
      throw ConfigError("synthetic: activity_classes must be in [2, 8]");
    }
    if (position_classes < 2 || position_classes > 6) {
      throw ConfigError("synthetic: position_classes must be in [2, 6]");
    }
    if (position_clients > num_clients) {
      throw ConfigError("synthetic: position_clients exceeds num_clients");
    }
    if (windows_per_class == 0) {
      throw ConfigError("synthetic: windows_per_class must be positive");
    }
    if (noise_sigma < 0) throw ConfigError("synthetic: noise_sigma must be >= 0");
    if (window_length == 0 || stride == 0) {
      throw ConfigError("synthetic: window_length and stride must be positive");
    }
  }
};

namespace detail {

inline const std::vector<std::string>& synthetic_activity_names() {
  static const std::vector<std::string> names = {
      "Walking", "Running", "Sitting", "Standing",
      "Cycling", "Jogging", "Lying",   "Climbing"};
  return names;
}

inline const std::vector<std::string>& synthetic_position_names() {
  static const std::vector<std::string> names = {
      "Hand", "Leg/Foot", "Torso", "Upper arm", "Hip", "Chest"};
  return names;
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Signature periods all divide 12 samples, the default stride.
inline double activity_signal(std::size_t sig, std::size_t axis, std::size_t t) {
  static constexpr int periods[4] = {12, 6, 4, 3};
  const double p = periods[sig % 4];
  const double amp = 0.8 + 0.1 * static_cast<double>((sig + axis) % 3);
  const double phase = 0.7 * static_cast<double>(sig) + 0.5 * static_cast<double>(axis);
  return amp * std::sin(kTwoPi * static_cast<double>(t) / p + phase);
}

inline double position_signal(std::size_t sig, std::size_t axis, std::size_t t) {
  static constexpr int periods[4] = {6, 12, 3, 4};
  const double p = periods[sig % 4];
  const double phase = 1.1 * static_cast<double>(sig) +
                       0.3 * static_cast<double>(axis) + 0.25;
  return 0.6 * std::sin(kTwoPi * static_cast<double>(t) / p + phase);
}

}  // namespace detail

inline std::string synthetic_client_id(std::size_t k) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "c%02zu", k);
  return buf;
}

// Raw 10 Hz records for every client, one contiguous segment per class
// combination, separated by 300 ms gaps so consolidation re-splits them.
inline std::vector<RawRecord> synthetic_records(const SyntheticSpec& spec,
                                                std::uint64_t seed) {
  spec.validate();
  const auto& act_names = detail::synthetic_activity_names();
  const auto& pos_names = detail::synthetic_position_names();
  std::vector<RawRecord> out;
  const std::size_t seg_len =
      spec.window_length + (spec.windows_per_class - 1) * spec.stride;
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    const std::string client = synthetic_client_id(k);
    const bool has_position = k < spec.position_clients;
    const std::size_t shift = spec.rotate_labels ? k % spec.activity_classes : 0;
    std::int64_t t = static_cast<std::int64_t>(1000 * k);
    std::size_t seg_index = 0;
    const std::size_t pos_count = has_position ? spec.position_classes : 1;
    for (std::size_t p = 0; p < pos_count; ++p) {
      for (std::size_t a = 0; a < spec.activity_classes; ++a) {
        const std::size_t sig = (a + shift) % spec.activity_classes;
        Rng rng(derive_seed(seed, "noise", fnv1a64(client), seg_index));
        for (std::size_t i = 0; i < seg_len; ++i) {
          RawRecord r;
          r.user_id = client;
          r.activity = act_names[a];
          if (has_position) r.position = pos_names[p];
          r.timestamp_ms = t + static_cast<std::int64_t>(100 * i);
          double v[3];
          for (std::size_t d = 0; d < 3; ++d) {
            double s = detail::activity_signal(sig, d, i);
            if (has_position) s += detail::position_signal(p, d, i);
            if (spec.noise_sigma > 0) s += spec.noise_sigma * rng.normal();
            v[d] = quantize6(s);
          }
          r.x = v[0];
          r.y = v[1];
          r.z = v[2];
          out.push_back(std::move(r));
        }
        t += static_cast<std::int64_t>(100 * seg_len + 300);
        ++seg_index;
      }
    }
  }
  return out;
}

// Synthetic records run through the standard pipeline. Labels are already
// canonical, so no merge maps are applied.
inline FederatedData generate_synthetic(const SyntheticSpec& spec,
                                        std::uint64_t seed,
                                        double split_ratio = 0.8,
                                        std::size_t availability_min_classes = 2) {
  DatasetOptions opts;
  opts.window_length = spec.window_length;
  opts.stride = spec.stride;
  opts.split_ratio = split_ratio;
  opts.native_hz = 10.0;
  opts.seed = seed;
  opts.availability_min_classes = availability_min_classes;
  return build_datasets(ingest_records(synthetic_records(spec, seed)), opts);
}

}  // namespace fedmtl
