#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hpc_sentinel/collector.hpp"
#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/json_util.hpp"
#include "hpc_sentinel/models.hpp"
#include "hpc_sentinel/trace_io.hpp"

namespace hpcs {

struct AlertPolicy {
  enum class Kind { first_hit, m_of_n };

  Kind kind = Kind::m_of_n;
  int m = 3;
  int n = 5;

  static AlertPolicy first_hit() { return {Kind::first_hit, 1, 1}; }
  static AlertPolicy m_of_n(int m, int n) { return {Kind::m_of_n, m, n}; }

  // Number of most recent labels the policy looks at.
  int span() const noexcept { return kind == Kind::first_hit ? 1 : n; }

  void validate() const {
    if (kind == Kind::m_of_n && (m < 1 || n < 1 || m > n))
      throw ConfigError("policy", "m-of-n needs 1 <= m <= n");
  }
};

// `history` holds the most recent per-window labels, oldest first (1 = malicious).
inline bool alert_policy_decide(std::span<const int> history, const AlertPolicy& policy) {
  if (policy.kind == AlertPolicy::Kind::first_hit)
    return std::any_of(history.begin(), history.end(), [](int l) { return l == 1; });
  const std::size_t n = static_cast<std::size_t>(policy.n);
  const auto recent = history.size() > n ? history.subspan(history.size() - n) : history;
  return std::count(recent.begin(), recent.end(), 1) >= policy.m;
}

struct DetectionVerdict {
  Pid pid = 0;
  int window_index = 0;
  std::int64_t t = 0;  // timestamp of the sample closing the window
  double score = 0;
  int label = 0;  // 1 = malicious

  bool operator==(const DetectionVerdict&) const = default;
};

inline std::string encode_verdict(const DetectionVerdict& v) {
  jsonu::ordered_json j;
  j["pid"] = v.pid;
  j["window_index"] = v.window_index;
  j["t"] = v.t;
  j["score"] = v.score;
  j["label"] = v.label ? "malicious" : "benign";
  return j.dump();
}

inline DetectionVerdict decode_verdict(const std::string& line) {
  const auto j = jsonu::parse(line, "verdict");
  jsonu::expect_exact_fields(j, {"pid", "window_index", "t", "score", "label"}, "verdict");
  DetectionVerdict v;
  v.pid = jsonu::get_as<Pid>(j, "pid", "verdict");
  v.window_index = jsonu::get_as<int>(j, "window_index", "verdict");
  v.t = jsonu::get_as<std::int64_t>(j, "t", "verdict");
  v.score = jsonu::get_as<double>(j, "score", "verdict");
  const auto label = jsonu::get_as<std::string>(j, "label", "verdict");
  if (label != "benign" && label != "malicious") throw DecodeError("verdict: bad label");
  v.label = label == "malicious" ? 1 : 0;
  return v;
}

struct PidSummary {
  Pid pid = 0;
  int windows = 0;
  int malicious_windows = 0;
  bool alert = false;
  std::optional<int> first_malicious_window;
  std::optional<int> first_alert_window;
  // Windows elapsed from process start up to and including the alerting window.
  std::optional<int> latency_windows;
};

struct DetectionSummary {
  std::map<Pid, PidSummary> pids;
  std::size_t verdicts = 0;
  std::size_t ticks = 0;
  std::int64_t window_ms = 100;
  double compute_ns = 0;  // featurize + classify, summed over all verdicts
  bool failed = false;
  std::string error;

  std::size_t alerts() const {
    return static_cast<std::size_t>(
        std::count_if(pids.begin(), pids.end(), [](const auto& kv) { return kv.second.alert; }));
  }

  double per_window_us() const {
    return verdicts == 0 ? 0.0 : compute_ns / static_cast<double>(verdicts) / 1e3;
  }

  // Per-window pipeline compute as a share of the sampling window.
  double overhead_pct() const {
    return verdicts == 0 ? 0.0 : 100.0 * per_window_us() / (1e3 * static_cast<double>(window_ms));
  }
};

inline std::string encode_summary(const DetectionSummary& s) {
  jsonu::ordered_json j;
  j["verdicts"] = s.verdicts;
  j["alerts"] = s.alerts();
  j["window_ms"] = s.window_ms;
  j["compute_us_per_window"] = s.per_window_us();
  j["overhead_pct"] = s.overhead_pct();
  j["failed"] = s.failed;
  if (s.failed) j["error"] = s.error;
  j["pids"] = jsonu::ordered_json::array();
  for (const auto& [pid, p] : s.pids) {
    jsonu::ordered_json row;
    row["pid"] = pid;
    row["windows"] = p.windows;
    row["malicious_windows"] = p.malicious_windows;
    row["alert"] = p.alert;
    row["first_alert_window"] = p.first_alert_window ? jsonu::ordered_json(*p.first_alert_window)
                                                     : jsonu::ordered_json(nullptr);
    row["latency_windows"] =
        p.latency_windows ? jsonu::ordered_json(*p.latency_windows) : jsonu::ordered_json(nullptr);
    j["pids"].push_back(std::move(row));
  }
  return j.dump(1) + "\n";
}

// Streaming featurize -> classify -> alert stage. Consumes raw cumulative
// samples only; it has no access to ground-truth labels.
class Detector {
 public:
  Detector(const ClassifierModel& model, AlertPolicy policy, std::int64_t window_ms = 100)
      : model_(model), policy_(policy) {
    policy_.validate();
    summary_.window_ms = window_ms;
  }

  std::vector<DetectionVerdict> process(std::span<const CounterSample> batch) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    std::vector<DetectionVerdict> out;
    out.reserve(batch.size());
    const std::size_t d = model_.features();
    const std::size_t keep = static_cast<std::size_t>(model_.history_length());
    for (const CounterSample& s : batch) {
      if (s.values.size() != d)
        throw DimensionError("detector: pid " + std::to_string(s.pid) + " sample has " +
                             std::to_string(s.values.size()) + " values, model expects " +
                             std::to_string(d));
      State& st = state_[s.pid];
      if (!st.last) {
        st.last = s;
        summary_.pids[s.pid].pid = s.pid;
        continue;
      }
      if (s.t <= st.last->t)
        throw DataError("detector: pid " + std::to_string(s.pid) + " timestamps not increasing");
      std::vector<double> x(d);
      for (std::size_t e = 0; e < d; ++e) {
        if (s.values[e] < st.last->values[e])
          throw DataError("detector: pid " + std::to_string(s.pid) + " counter " +
                          std::string(to_string(model_.event_set.events[e].id)) + " decreased");
        x[e] = static_cast<double>(s.values[e] - st.last->values[e]);
      }
      st.last = s;
      st.history.push_back(std::move(x));
      if (st.history.size() > keep) st.history.pop_front();
      window_buf_.assign(st.history.begin(), st.history.end());
      const Prediction pred = predict_score(model_, window_buf_);

      const int index = st.next_window++;
      out.push_back({s.pid, index, s.t, pred.score, pred.label});

      PidSummary& ps = summary_.pids[s.pid];
      ++ps.windows;
      st.labels.push_back(pred.label);
      if (st.labels.size() > static_cast<std::size_t>(policy_.span())) st.labels.pop_front();
      if (pred.label == 1) {
        ++ps.malicious_windows;
        if (!ps.first_malicious_window) ps.first_malicious_window = index;
      }
      if (!ps.alert) {
        label_buf_.assign(st.labels.begin(), st.labels.end());
        if (alert_policy_decide(label_buf_, policy_)) {
          ps.alert = true;
          ps.first_alert_window = index;
          ps.latency_windows = index + 1;
        }
      }
    }
    summary_.verdicts += out.size();
    ++summary_.ticks;
    summary_.compute_ns +=
        std::chrono::duration<double, std::nano>(clock::now() - start).count();
    return out;
  }

  // Releases per-process state once the source reports the process gone.
  void end_process(Pid pid) { state_.erase(pid); }

  const DetectionSummary& summary() const noexcept { return summary_; }
  DetectionSummary& summary() noexcept { return summary_; }

 private:
  struct State {
    std::optional<CounterSample> last;
    int next_window = 0;
    std::deque<std::vector<double>> history;
    std::deque<int> labels;
  };

  const ClassifierModel& model_;
  AlertPolicy policy_;
  std::map<Pid, State> state_;
  DetectionSummary summary_;
  std::vector<std::vector<double>> window_buf_;
  std::vector<int> label_buf_;
};

using VerdictSink = std::function<void(const DetectionVerdict&)>;

inline void check_event_sets(const ClassifierModel& model, const EventSet& source) {
  if (model.event_set != source)
    throw ConfigError("event_set", "event-set mismatch: model is " +
                                       std::string(to_string(model.event_set.profile)) + " (" +
                                       std::to_string(model.event_set.size()) +
                                       " events), source is " +
                                       std::string(to_string(source.profile)) + " (" +
                                       std::to_string(source.size()) + " events)");
}

// Drives `source` to exhaustion. Every complete window of every pid yields one
// verdict. A failing source ends the run with a partial summary.
inline DetectionSummary run_detector(CounterSource& source, const ClassifierModel& model,
                                     const AlertPolicy& policy, const VerdictSink& sink = {}) {
  check_event_sets(model, source.event_set());
  Detector det(model, policy, source.window_ms());
  try {
    while (true) {
      const auto batch = source.next_batch();
      if (batch.empty()) break;
      for (const auto& v : det.process(batch))
        if (sink) sink(v);
      for (const auto& ev : source.take_process_events())
        if (ev.kind == ProcessEvent::Kind::stopped) det.end_process(ev.pid);
    }
  } catch (const Error& e) {
    det.summary().failed = true;
    det.summary().error = e.what();
  }
  return det.summary();
}

// ---------------------------------------------------------------------------
// Configured runs

enum class Granularity { fine, coarse };

struct SourceSpec {
  enum class Kind { replay, sim, os };

  Kind kind = Kind::replay;
  std::string trace_path;  // replay
  ReplaySpeed speed;       // replay
  SimConfig sim;           // sim
  std::set<Pid> pids;      // os
};

struct DetectorConfig {
  std::string model_path;
  SourceSpec source;
  Granularity granularity = Granularity::coarse;
  std::int64_t window_ms = 100;  // sampling period for sim/os sources
  AlertPolicy policy;

  void validate() const {
    if (window_ms < 1) throw ConfigError("window_ms", "must be >= 1");
    if (granularity == Granularity::coarse && window_ms != 100)
      throw ConfigError("window_ms", "coarse granularity samples every 100 ms; use fine");
    policy.validate();
  }
};

inline std::unique_ptr<CounterSource> make_source(const SourceSpec& spec, const EventSet& set,
                                                  std::int64_t window_ms) {
  switch (spec.kind) {
    case SourceSpec::Kind::replay:
      return std::make_unique<ReplaySource>(load_trace(spec.trace_path), spec.speed);
    case SourceSpec::Kind::sim: {
      SimConfig cfg = spec.sim;
      cfg.window_ms = window_ms;
      return std::make_unique<LiveSimSource>(cfg);
    }
    case SourceSpec::Kind::os:
      return std::make_unique<OsSource>(set, spec.pids, window_ms);
  }
  return nullptr;
}

inline DetectionSummary run_detector(const DetectorConfig& cfg, const VerdictSink& sink = {}) {
  cfg.validate();
  const ClassifierModel model = load_model(cfg.model_path);
  auto source = make_source(cfg.source, model.event_set, cfg.window_ms);
  return run_detector(*source, model, cfg.policy, sink);
}

struct OverheadEstimate {
  std::size_t windows = 0;
  double per_window_us = 0;
  double overhead_pct = 0;
};

// Pipeline compute per window (featurize + classify) against the window budget,
// measured by replaying `trace` instantly. Takes the fastest of `repeats` passes.
inline OverheadEstimate measure_overhead(const ClassifierModel& model, const Trace& trace,
                                         int repeats = 3) {
  OverheadEstimate best;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    ReplaySource src(trace);
    const auto s = run_detector(src, model, AlertPolicy::first_hit());
    if (s.failed) throw Error("measure_overhead: " + s.error);
    const OverheadEstimate est{s.verdicts, s.per_window_us(), s.overhead_pct()};
    if (r == 0 || est.per_window_us < best.per_window_us) best = est;
  }
  return best;
}

}  // namespace hpcs
