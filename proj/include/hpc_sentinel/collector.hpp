#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/json_util.hpp"
#include "hpc_sentinel/simgen.hpp"

#if defined(__linux__)
#include <cerrno>
#include <cstring>
#include <linux/perf_event.h>
#include <signal.h>
#include <sys/ioctl.h>
#include <sys/syscall.h>
#include <unistd.h>
#endif

namespace hpcs {

struct ProcessEvent {
  enum class Kind { started, stopped };

  Pid pid = 0;
  Kind kind = Kind::started;
  std::int64_t t = 0;
  // Ground truth. Only simulated and replayed sources know it; evaluation code is
  // the sole consumer.
  std::optional<ProcessLabel> label;

  bool operator==(const ProcessEvent&) const = default;
};

// Pull-based stream of cumulative counter samples. Each batch holds every
// sample of one sampling tick; an empty batch means the source is exhausted.
class CounterSource {
 public:
  virtual ~CounterSource() = default;

  virtual const EventSet& event_set() const = 0;
  virtual std::int64_t window_ms() const = 0;
  virtual std::vector<CounterSample> next_batch() = 0;
  virtual std::set<Pid> active_pids() const = 0;
  virtual bool exhausted() const = 0;

  // Restricts output to `pids`. An empty set means every pid the source knows.
  virtual void subscribe(std::set<Pid> pids) { filter_ = std::move(pids); }

  std::vector<ProcessEvent> take_process_events() { return std::exchange(events_, {}); }

 protected:
  bool wanted(Pid pid) const { return filter_.empty() || filter_.contains(pid); }
  void emit(ProcessEvent ev) { events_.push_back(std::move(ev)); }

  std::set<Pid> filter_;

 private:
  std::vector<ProcessEvent> events_;
};

// 0 replays instantly; otherwise a real-time multiplier (1 = wall-clock speed).
struct ReplaySpeed {
  double multiplier = 0;

  static ReplaySpeed instant() { return {0}; }
  bool is_instant() const { return multiplier <= 0; }
};

class ReplaySource final : public CounterSource {
 public:
  ReplaySource(Trace trace, ReplaySpeed speed = ReplaySpeed::instant())
      : trace_(std::move(trace)), speed_(speed) {
    const auto violations = validate_trace(trace_);
    if (!violations.empty())
      throw DataError("replay: invalid trace (" + std::to_string(violations.size()) +
                      " violations, first: pid " + std::to_string(violations.front().pid) +
                      " " + violations.front().field + ": " + violations.front().message + ")");
    for (std::size_t i = 0; i < trace_.samples.size(); ++i) last_index_[trace_.samples[i].pid] = i;
  }

  const EventSet& event_set() const override { return trace_.event_set; }
  std::int64_t window_ms() const override { return trace_.window_ms; }
  bool exhausted() const override { return cursor_ >= trace_.samples.size(); }
  std::set<Pid> active_pids() const override { return active_; }

  std::vector<CounterSample> next_batch() override {
    std::vector<CounterSample> out;
    while (!exhausted() && out.empty()) {
      if (!speed_.is_instant() && cursor_ > 0)
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(
            static_cast<double>(trace_.window_ms) / speed_.multiplier));
      const std::int64_t t = trace_.samples[cursor_].t;
      while (!exhausted() && trace_.samples[cursor_].t == t) {
        const std::size_t i = cursor_++;
        const CounterSample& s = trace_.samples[i];
        if (!wanted(s.pid)) continue;
        if (!seen_.contains(s.pid)) {
          seen_.insert(s.pid);
          active_.insert(s.pid);
          emit({s.pid, ProcessEvent::Kind::started, s.t, trace_.processes.at(s.pid)});
        }
        out.push_back(s);
        if (last_index_.at(s.pid) == i) {
          active_.erase(s.pid);
          emit({s.pid, ProcessEvent::Kind::stopped, s.t, trace_.processes.at(s.pid)});
        }
      }
    }
    return out;
  }

 private:
  Trace trace_;
  ReplaySpeed speed_;
  std::size_t cursor_ = 0;
  std::map<Pid, std::size_t> last_index_;
  std::set<Pid> seen_, active_;
};

// Runs the simulator live, one tick per batch.
class LiveSimSource final : public CounterSource {
 public:
  explicit LiveSimSource(const SimConfig& cfg) : gen_(cfg) {
    for (const auto& [pid, _] : gen_.processes()) configured_.insert(pid);
  }

  const EventSet& event_set() const override { return gen_.event_set(); }
  std::int64_t window_ms() const override { return gen_.config().window_ms; }
  bool exhausted() const override { return stopped_ || gen_.done(); }

  std::set<Pid> active_pids() const override {
    if (exhausted()) return {};
    std::set<Pid> out;
    for (Pid p : configured_)
      if (wanted(p)) out.insert(p);
    return out;
  }

  std::vector<CounterSample> next_batch() override {
    if (exhausted()) return {};
    const bool first = gen_.ticks_emitted() == 0;
    auto tick = gen_.next_tick();
    std::vector<CounterSample> out;
    out.reserve(tick.size());
    for (auto& s : tick) {
      if (!wanted(s.pid)) continue;
      if (first) emit({s.pid, ProcessEvent::Kind::started, s.t, gen_.processes().at(s.pid)});
      if (gen_.done())
        emit({s.pid, ProcessEvent::Kind::stopped, s.t, gen_.processes().at(s.pid)});
      out.push_back(std::move(s));
    }
    return out;
  }

  // Ends the stream early; every configured process is reported stopped.
  void stop() {
    if (exhausted()) return;
    stopped_ = true;
    const std::int64_t t = gen_.next_timestamp() - gen_.config().window_ms;
    for (Pid p : configured_)
      if (wanted(p)) emit({p, ProcessEvent::Kind::stopped, t, gen_.processes().at(p)});
  }

  const std::map<Pid, ProcessLabel>& processes() const { return gen_.processes(); }

 private:
  TraceGenerator gen_;
  std::set<Pid> configured_;
  bool stopped_ = false;
};

// ---------------------------------------------------------------------------
// Native counters.

// EventId -> platform counter name (perf generic event names).
struct CounterMap {
  std::map<EventId, std::string> names;

  static CounterMap defaults() {
    return {{{EventId::L3_TCM, "cache-misses"},
             {EventId::L3_TCA, "cache-references"},
             {EventId::BR_INS, "branches"},
             {EventId::BR_MSP, "branch-misses"},
             {EventId::TOT_INS, "instructions"},
             {EventId::PAGE_FAULTS, "page-faults"}}};
  }

  // JSON object {"L3_TCM": "cache-misses", ...}; listed ids override defaults.
  static CounterMap load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("counter_map", "cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto j = jsonu::parse(text, "counter map");
    if (!j.is_object()) throw DecodeError("counter map: expected a JSON object");
    CounterMap map = defaults();
    for (const auto& [key, value] : j.items()) {
      auto id = parse_event_id(key);
      if (!id) throw DecodeError("counter map: unknown event id '" + key + "'");
      if (!value.is_string()) throw DecodeError("counter map: value for " + key + " not a string");
      map.names[*id] = value.get<std::string>();
    }
    return map;
  }

  // Honours HPC_SENTINEL_COUNTER_MAP when set.
  static CounterMap from_environment() {
    if (const char* path = std::getenv("HPC_SENTINEL_COUNTER_MAP"); path && *path)
      return load(path);
    return defaults();
  }
};

#if defined(__linux__)

// Attaches per-process counters through perf_event_open and reports cumulative
// readings every window. Pids in the filter that are not yet running are retried
// on every tick, so the discovery poll interval equals window_ms.
class OsSource final : public CounterSource {
 public:
  OsSource(EventSet set, std::set<Pid> pids, std::int64_t window_ms = 100,
           CounterMap map = CounterMap::from_environment())
      : set_(std::move(set)), window_ms_(window_ms), map_(std::move(map)) {
    if (window_ms_ < 1) throw ConfigError("window_ms", "must be >= 1");
    if (pids.empty()) throw ConfigError("pids", "os source needs an explicit pid list");
    filter_ = std::move(pids);
    for (const auto& e : set_.events)
      if (!map_.names.contains(e.id) || !resolve(map_.names.at(e.id)))
        throw ConfigError("counter_map", "no platform counter for " + std::string(to_string(e.id)));
    for (Pid p : filter_) try_attach(p, /*strict=*/true);
    if (attached_.empty()) throw CapabilityError("os source: none of the requested pids is running");
    start_ = std::chrono::steady_clock::now();
  }

  ~OsSource() override {
    for (auto& [_, fds] : attached_) close_all(fds);
  }
  OsSource(const OsSource&) = delete;
  OsSource& operator=(const OsSource&) = delete;

  const EventSet& event_set() const override { return set_; }
  std::int64_t window_ms() const override { return window_ms_; }
  bool exhausted() const override { return attached_.empty() && ticks_ > 0; }
  std::set<Pid> active_pids() const override {
    std::set<Pid> out;
    for (const auto& [p, _] : attached_) out.insert(p);
    return out;
  }

  std::size_t counters_attached(Pid pid) const {
    auto it = attached_.find(pid);
    return it == attached_.end() ? 0 : it->second.size();
  }

  std::vector<CounterSample> next_batch() override {
    if (exhausted()) return {};
    const auto due = start_ + std::chrono::milliseconds(ticks_ * window_ms_);
    std::this_thread::sleep_until(due);
    const std::int64_t t = ticks_ * window_ms_;
    ++ticks_;
    for (Pid p : filter_)
      if (!attached_.contains(p) && !finished_.contains(p)) try_attach(p, false);

    std::vector<CounterSample> out;
    for (auto it = attached_.begin(); it != attached_.end();) {
      const Pid pid = it->first;
      CounterSample s{pid, t, {}};
      bool ok = ::kill(static_cast<pid_t>(pid), 0) == 0 || errno != ESRCH;
      for (int fd : it->second) {
        std::uint64_t v = 0;
        if (!ok || ::read(fd, &v, sizeof v) != static_cast<ssize_t>(sizeof v)) {
          ok = false;
          break;
        }
        s.values.push_back(v);
      }
      if (ok) {
        out.push_back(std::move(s));
        ++it;
      } else {
        emit({pid, ProcessEvent::Kind::stopped, t, std::nullopt});
        close_all(it->second);
        finished_.insert(pid);
        it = attached_.erase(it);
      }
    }
    return out;
  }

 private:
  struct PerfEvent {
    std::uint32_t type;
    std::uint64_t config;
  };

  static std::optional<PerfEvent> resolve(const std::string& name) {
    static const std::map<std::string, PerfEvent> table = {
        {"cache-misses", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_MISSES}},
        {"cache-references", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_REFERENCES}},
        {"branches", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_BRANCH_INSTRUCTIONS}},
        {"branch-instructions", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_BRANCH_INSTRUCTIONS}},
        {"branch-misses", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_BRANCH_MISSES}},
        {"instructions", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS}},
        {"cycles", {PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES}},
        {"page-faults", {PERF_TYPE_SOFTWARE, PERF_COUNT_SW_PAGE_FAULTS}},
        {"faults", {PERF_TYPE_SOFTWARE, PERF_COUNT_SW_PAGE_FAULTS}},
        {"LLC-load-misses",
         {PERF_TYPE_HW_CACHE, PERF_COUNT_HW_CACHE_LL | (PERF_COUNT_HW_CACHE_OP_READ << 8) |
                                  (PERF_COUNT_HW_CACHE_RESULT_MISS << 16)}},
        {"LLC-loads",
         {PERF_TYPE_HW_CACHE, PERF_COUNT_HW_CACHE_LL | (PERF_COUNT_HW_CACHE_OP_READ << 8) |
                                  (PERF_COUNT_HW_CACHE_RESULT_ACCESS << 16)}},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
  }

  static void close_all(std::vector<int>& fds) {
    for (int fd : fds) ::close(fd);
    fds.clear();
  }

  void try_attach(Pid pid, bool strict) {
    std::vector<int> fds;
    std::vector<std::pair<EventId, int>> failed;
    for (const auto& e : set_.events) {
      const PerfEvent pe = *resolve(map_.names.at(e.id));
      perf_event_attr attr{};
      attr.size = sizeof attr;
      attr.type = pe.type;
      attr.config = pe.config;
      attr.exclude_kernel = 1;
      attr.exclude_hv = 1;
      attr.inherit = 1;
      const long fd = ::syscall(__NR_perf_event_open, &attr, static_cast<pid_t>(pid), -1, -1, 0);
      if (fd >= 0)
        fds.push_back(static_cast<int>(fd));
      else
        failed.emplace_back(e.id, errno);
    }
    if (failed.empty()) {
      attached_[pid] = std::move(fds);
      emit({pid, ProcessEvent::Kind::started, ticks_ * window_ms_, std::nullopt});
      return;
    }
    close_all(fds);
    if (!strict) return;
    for (auto [id, err] : failed) {
      if (err == ESRCH) return;  // not running (yet); retried every tick
      if (err == EACCES || err == EPERM)
        throw PrivilegeError("os source: permission denied opening " +
                             std::string(to_string(id)) +
                             " (check /proc/sys/kernel/perf_event_paranoid)");
      if (err == ENOSYS)
        throw CapabilityError("os source: perf_event_open is not available on this kernel");
    }
    std::string list;
    for (auto [id, err] : failed)
      list += (list.empty() ? "" : ", ") + std::string(to_string(id)) + " (" +
              std::strerror(err) + ")";
    if (failed.size() == set_.size())
      throw CapabilityError("os source: platform exposes none of the requested counters: " +
                            list);
    throw ConfigError("events", "os source: counters unavailable: " + list);
  }

  EventSet set_;
  std::int64_t window_ms_;
  CounterMap map_;
  std::map<Pid, std::vector<int>> attached_;
  std::set<Pid> finished_;
  std::int64_t ticks_ = 0;
  std::chrono::steady_clock::time_point start_;
};

#else

class OsSource final : public CounterSource {
 public:
  OsSource(EventSet, std::set<Pid>, std::int64_t = 100, CounterMap = {}) {
    throw CapabilityError("os source: per-process counters are only supported on Linux");
  }
  const EventSet& event_set() const override { return set_; }
  std::int64_t window_ms() const override { return 100; }
  bool exhausted() const override { return true; }
  std::set<Pid> active_pids() const override { return {}; }
  std::vector<CounterSample> next_batch() override { return {}; }
  std::size_t counters_attached(Pid) const { return 0; }

 private:
  EventSet set_;
};

#endif

}  // namespace hpcs
