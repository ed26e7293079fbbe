#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/json_util.hpp"
#include "hpc_sentinel/log.hpp"

namespace hpcs {

struct WindowFeatures {
  int trace = 0;  // index of the source trace inside a dataset
  Pid pid = 0;
  int window_index = 0;
  std::vector<double> x;     // EventSet order
  std::optional<int> label;  // 1 = malicious; absent for live classification

  bool operator==(const WindowFeatures&) const = default;
};

// Turns the cumulative samples of one process into per-window deltas:
// window k = values(k+1) - values(k).
inline std::vector<WindowFeatures> windowize(std::span<const CounterSample> samples,
                                             const EventSet* set = nullptr) {
  std::vector<WindowFeatures> out;
  if (samples.size() < 2) return out;
  out.reserve(samples.size() - 1);
  const Pid pid = samples.front().pid;
  const std::size_t width = samples.front().values.size();
  auto event_name = [&](std::size_t e) {
    return set && e < set->size() ? std::string(to_string(set->events[e].id))
                                  : "event #" + std::to_string(e);
  };
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const CounterSample& a = samples[k];
    const CounterSample& b = samples[k + 1];
    if (b.pid != pid) throw DataError("windowize: samples mix pids " + std::to_string(pid) +
                                      " and " + std::to_string(b.pid));
    if (b.t <= a.t)
      throw DataError("windowize: pid " + std::to_string(pid) + " timestamps not increasing at t=" +
                      std::to_string(b.t));
    if (b.values.size() != width)
      throw DataError("windowize: pid " + std::to_string(pid) + " sample width changes");
    WindowFeatures w{0, pid, static_cast<int>(k), std::vector<double>(width), std::nullopt};
    for (std::size_t e = 0; e < width; ++e) {
      if (b.values[e] < a.values[e])
        throw DataError("windowize: pid " + std::to_string(pid) + " counter " + event_name(e) +
                        " decreased at t=" + std::to_string(b.t));
      w.x[e] = static_cast<double>(b.values[e] - a.values[e]);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// z-score normalisation

inline constexpr double kStddevFloor = 1e-12;

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t size() const noexcept { return mean.size(); }
  bool operator==(const NormStats&) const = default;
};

inline NormStats fit_norm(std::span<const WindowFeatures> windows) {
  if (windows.size() < 2) throw DataError("fit_norm: need at least 2 windows");
  const std::size_t d = windows.front().x.size();
  const double n = static_cast<double>(windows.size());
  NormStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& w : windows) {
    if (w.x.size() != d) throw DimensionError("fit_norm: inconsistent window width");
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] += w.x[j];
  }
  for (auto& m : stats.mean) m /= n;
  for (const auto& w : windows)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = w.x[j] - stats.mean[j];
      stats.stddev[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) {
    stats.stddev[j] = std::sqrt(stats.stddev[j] / n);
    if (!(stats.stddev[j] > kStddevFloor)) {
      warn("fit_norm: feature " + std::to_string(j) + " is constant; stddev floored at 1e-12");
      stats.stddev[j] = kStddevFloor;
    }
  }
  return stats;
}

inline void normalize_in_place(std::span<double> x, const NormStats& stats) {
  if (x.size() != stats.size())
    throw DimensionError("normalize: expected " + std::to_string(stats.size()) +
                         " features, got " + std::to_string(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - stats.mean[j]) / stats.stddev[j];
}

inline std::vector<WindowFeatures> apply_norm(std::span<const WindowFeatures> windows,
                                              const NormStats& stats) {
  std::vector<WindowFeatures> out(windows.begin(), windows.end());
  for (auto& w : out) normalize_in_place(w.x, stats);
  return out;
}

inline std::vector<WindowFeatures> invert_norm(std::span<const WindowFeatures> windows,
                                               const NormStats& stats) {
  std::vector<WindowFeatures> out(windows.begin(), windows.end());
  for (auto& w : out) {
    if (w.x.size() != stats.size()) throw DimensionError("invert_norm: width mismatch");
    for (std::size_t j = 0; j < w.x.size(); ++j) w.x[j] = w.x[j] * stats.stddev[j] + stats.mean[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

// Labelled windows in raw (delta) units plus normalisation statistics fitted on them.
struct TraceDataset {
  EventSet event_set;
  std::vector<WindowFeatures> windows;
  NormStats norm;

  Profile profile() const noexcept { return event_set.profile; }
  std::size_t size() const noexcept { return windows.size(); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(w.label.value_or(0));
    return out;
  }

  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count_if(
        windows.begin(), windows.end(), [&](const auto& w) { return w.label == label; }));
  }

  // Windows at `indices`, with normalisation refitted on them alone.
  TraceDataset subset(std::span<const std::size_t> indices) const {
    TraceDataset out{event_set, {}, {}};
    out.windows.reserve(indices.size());
    for (std::size_t i : indices) out.windows.push_back(windows.at(i));
    out.norm = fit_norm(out.windows);
    return out;
  }

  bool operator==(const TraceDataset&) const = default;
};

struct DatasetOptions {
  std::uint64_t seed = 0;
  // Undersample the majority class down to the minority count.
  bool rebalance = false;
};

// Groups a trace's samples by pid and windowizes each process, labelling every
// window with its process's ground truth.
inline std::vector<WindowFeatures> labelled_windows(const Trace& trace, int trace_index = 0) {
  std::map<Pid, std::vector<CounterSample>> by_pid;
  for (const auto& s : trace.samples) by_pid[s.pid].push_back(s);
  std::vector<WindowFeatures> out;
  for (const auto& [pid, samples] : by_pid) {
    auto it = trace.processes.find(pid);
    if (it == trace.processes.end())
      throw DataError("dataset: sample pid " + std::to_string(pid) + " not in processes");
    for (auto& w : windowize(samples, &trace.event_set)) {
      w.trace = trace_index;
      w.label = it->second.malicious() ? 1 : 0;
      out.push_back(std::move(w));
    }
  }
  return out;
}

inline TraceDataset build_dataset(std::span<const Trace> traces, const DatasetOptions& opt = {}) {
  if (traces.empty()) throw DataError("build_dataset: no traces");
  TraceDataset ds{traces.front().event_set, {}, {}};
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (traces[i].event_set != ds.event_set)
      throw DataError("build_dataset: traces mix event sets (" +
                      std::string(to_string(ds.event_set.profile)) + " vs " +
                      std::string(to_string(traces[i].event_set.profile)) + ")");
    for (auto& w : labelled_windows(traces[i], static_cast<int>(i)))
      ds.windows.push_back(std::move(w));
  }

  std::mt19937_64 rng(opt.seed);
  if (opt.rebalance) {
    std::vector<WindowFeatures> pos, neg;
    for (auto& w : ds.windows) (w.label == 1 ? pos : neg).push_back(std::move(w));
    auto& major = pos.size() > neg.size() ? pos : neg;
    const std::size_t keep = std::min(pos.size(), neg.size());
    std::shuffle(major.begin(), major.end(), rng);
    major.resize(keep);
    ds.windows.clear();
    for (auto* part : {&neg, &pos})
      for (auto& w : *part) ds.windows.push_back(std::move(w));
  }
  std::shuffle(ds.windows.begin(), ds.windows.end(), rng);
  ds.norm = fit_norm(ds.windows);
  return ds;
}

inline TraceDataset build_dataset(const Trace& trace, const DatasetOptions& opt = {}) {
  return build_dataset(std::span<const Trace>(&trace, 1), opt);
}

// ---------------------------------------------------------------------------
// Stratified k-fold

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Each class is shuffled and dealt round-robin across the folds; the deal for
// class 1 continues where class 0 stopped so fold sizes stay balanced.
inline std::vector<Fold> kfold_split(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k", "k-fold needs k >= 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("kfold_split: labels must be 0/1");
    by_class[labels[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < static_cast<std::size_t>(k))
      throw DataError("kfold_split: class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) + " windows, fewer than k=" +
                      std::to_string(k));

  std::mt19937_64 rng(seed);
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) {
      folds[next].validation.push_back(i);
      next = (next + 1) % folds.size();
    }
  }
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f)
        folds[f].train.insert(folds[f].train.end(), folds[g].validation.begin(),
                              folds[g].validation.end());
  }
  for (auto& f : folds) std::sort(f.train.begin(), f.train.end());
  return folds;
}

inline std::vector<Fold> kfold_split(const TraceDataset& ds, int k, std::uint64_t seed) {
  const auto labels = ds.labels();
  return kfold_split(std::span<const int>(labels), k, seed);
}

// ---------------------------------------------------------------------------
// Dataset JSONL
//   line 1: {"schema_version":1,"profile":..,"events":[..],"norm":{"mean":[..],"stddev":[..]}}
//   line n: {"trace":..,"pid":..,"window_index":..,"x":[..],"label":0|1}

inline constexpr int kDatasetSchemaVersion = 1;

inline void write_dataset(std::ostream& os, const TraceDataset& ds) {
  jsonu::ordered_json header;
  header["schema_version"] = kDatasetSchemaVersion;
  header["profile"] = to_string(ds.profile());
  header["events"] = jsonu::ordered_json::array();
  for (const auto& e : ds.event_set.events) header["events"].push_back(to_string(e.id));
  header["norm"]["mean"] = ds.norm.mean;
  header["norm"]["stddev"] = ds.norm.stddev;
  os << header.dump() << '\n';
  for (const auto& w : ds.windows) {
    jsonu::ordered_json line;
    line["trace"] = w.trace;
    line["pid"] = w.pid;
    line["window_index"] = w.window_index;
    line["x"] = w.x;
    line["label"] = w.label.value_or(0);
    os << line.dump() << '\n';
  }
}

inline TraceDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DecodeError("dataset: empty input");
  const auto header = jsonu::parse(line, "dataset header");
  jsonu::expect_exact_fields(header, {"schema_version", "profile", "events", "norm"},
                             "dataset header");
  if (jsonu::get_as<int>(header, "schema_version", "dataset header") != kDatasetSchemaVersion)
    throw DecodeError("dataset header: unsupported schema_version");
  auto profile = parse_profile(jsonu::get_as<std::string>(header, "profile", "dataset header"));
  if (!profile) throw DecodeError("dataset header: unknown profile");

  TraceDataset ds;
  ds.event_set.profile = *profile;
  for (const auto& e : jsonu::get_as<std::vector<std::string>>(header, "events", "dataset header")) {
    auto id = parse_event_id(e);
    if (!id) throw DecodeError("dataset header: unknown event " + e);
    ds.event_set.events.push_back(describe(*id));
  }
  const auto& norm = header.at("norm");
  jsonu::expect_exact_fields(norm, {"mean", "stddev"}, "dataset norm");
  ds.norm.mean = jsonu::get_as<std::vector<double>>(norm, "mean", "dataset norm");
  ds.norm.stddev = jsonu::get_as<std::vector<double>>(norm, "stddev", "dataset norm");
  if (ds.norm.mean.size() != ds.event_set.size() || ds.norm.stddev.size() != ds.event_set.size())
    throw DecodeError("dataset header: norm width does not match events");

  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string ctx = "dataset line " + std::to_string(lineno);
    const auto j = jsonu::parse(line, ctx);
    jsonu::expect_exact_fields(j, {"trace", "pid", "window_index", "x", "label"}, ctx);
    WindowFeatures w;
    w.trace = jsonu::get_as<int>(j, "trace", ctx);
    w.pid = jsonu::get_as<Pid>(j, "pid", ctx);
    w.window_index = jsonu::get_as<int>(j, "window_index", ctx);
    w.x = jsonu::get_as<std::vector<double>>(j, "x", ctx);
    const int label = jsonu::get_as<int>(j, "label", ctx);
    if (label != 0 && label != 1) throw DecodeError(ctx + ": label must be 0 or 1");
    if (w.x.size() != ds.event_set.size()) throw DecodeError(ctx + ": x width mismatch");
    w.label = label;
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

inline std::string encode_dataset(const TraceDataset& ds) {
  std::ostringstream os;
  write_dataset(os, ds);
  return os.str();
}

inline TraceDataset decode_dataset(const std::string& text) {
  std::istringstream is(text);
  return read_dataset(is);
}

inline void save_dataset(const std::string& path, const TraceDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
  if (!os) throw Error("failed writing '" + path + "'");
}

inline TraceDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace hpcs
