#include <gtest/gtest.h>

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>

#include "hpc_sentinel/collector.hpp"
#include "hpc_sentinel/simgen.hpp"

using namespace hpcs;

namespace {

SimConfig cfg(std::uint64_t seed = 4) {
  SimConfig c;
  c.seed = seed;
  c.duration_windows = 25;
  c.n_benign = 2;
  return c;
}

std::vector<CounterSample> drain(CounterSource& src, std::vector<ProcessEvent>* events = nullptr) {
  std::vector<CounterSample> all;
  while (true) {
    auto b = src.next_batch();
    if (events)
      for (auto& e : src.take_process_events()) events->push_back(e);
    if (b.empty()) break;
    const auto t = b.front().t;
    for (const auto& s : b) EXPECT_EQ(s.t, t);
    all.insert(all.end(), b.begin(), b.end());
  }
  return all;
}

}  // namespace

TEST(ReplaySource, ReproducesTheTraceSampleForSample) {
  const Trace t = generate_trace(cfg());
  ReplaySource src(t);
  EXPECT_EQ(src.event_set(), t.event_set);
  EXPECT_EQ(drain(src), t.samples);
  EXPECT_TRUE(src.exhausted());
  EXPECT_TRUE(src.next_batch().empty());
}

TEST(ReplaySource, EmitsStartAndStopWithLabels) {
  const Trace t = generate_trace(cfg());
  ReplaySource src(t);
  std::vector<ProcessEvent> ev;
  drain(src, &ev);
  std::map<Pid, int> started, stopped;
  for (const auto& e : ev) {
    ASSERT_TRUE(e.label.has_value());
    EXPECT_EQ(*e.label, t.processes.at(e.pid));
    if (e.kind == ProcessEvent::Kind::started) {
      ++started[e.pid];
      EXPECT_EQ(e.t, 0);
    } else {
      ++stopped[e.pid];
      EXPECT_EQ(e.t, 24 * 100);
    }
  }
  EXPECT_EQ(started.size(), t.processes.size());
  EXPECT_EQ(stopped.size(), t.processes.size());
  EXPECT_TRUE(src.active_pids().empty());
}

TEST(ReplaySource, SubscriptionFiltersPids) {
  const Trace t = generate_trace(cfg());
  const Pid keep = t.processes.begin()->first;
  ReplaySource src(t);
  src.subscribe({keep});
  const auto all = drain(src);
  EXPECT_EQ(all.size(), 25u);
  for (const auto& s : all) EXPECT_EQ(s.pid, keep);
}

TEST(ReplaySource, RejectsInvalidTrace) {
  Trace t = generate_trace(cfg());
  t.samples.back().values[0] = 0;
  EXPECT_THROW(ReplaySource{t}, DataError);
}

TEST(ReplaySource, PacedReplayWaitsBetweenTicks) {
  auto c = cfg();
  c.duration_windows = 4;
  c.window_ms = 20;
  ReplaySource src(generate_trace(c), ReplaySpeed{1.0});
  const auto start = std::chrono::steady_clock::now();
  drain(src);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GE(ms, 3 * 20 * 0.9);
}

TEST(LiveSimSource, MatchesReplayOfTheSameConfig) {
  const auto c = cfg(7);
  LiveSimSource live(c);
  ReplaySource replay(generate_trace(c));
  EXPECT_EQ(drain(live), drain(replay));
}

TEST(LiveSimSource, StopEndsTheStream) {
  LiveSimSource live(cfg());
  live.next_batch();
  live.next_batch();
  live.take_process_events();
  live.stop();
  EXPECT_TRUE(live.exhausted());
  EXPECT_TRUE(live.next_batch().empty());
  const auto ev = live.take_process_events();
  EXPECT_EQ(ev.size(), live.processes().size());
  for (const auto& e : ev) EXPECT_EQ(e.kind, ProcessEvent::Kind::stopped);
}

TEST(CounterMap, DefaultsCoverEveryEventAndFileOverrides) {
  const auto d = CounterMap::defaults();
  for (EventId id : kAllEvents) EXPECT_TRUE(d.names.contains(id));

  const std::string path = ::testing::TempDir() + "counter_map.json";
  {
    std::ofstream os(path);
    os << R"({"L3_TCM": "LLC-load-misses"})";
  }
  const auto m = CounterMap::load(path);
  EXPECT_EQ(m.names.at(EventId::L3_TCM), "LLC-load-misses");
  EXPECT_EQ(m.names.at(EventId::TOT_INS), "instructions");

  {
    std::ofstream os(path);
    os << R"({"L9_TCM": "x"})";
  }
  EXPECT_THROW(CounterMap::load(path), DecodeError);
  std::remove(path.c_str());
}

TEST(OsSource, RequiresPids) {
  EXPECT_THROW(OsSource(make_event_set(Profile::spectre), {}, 100, CounterMap::defaults()),
               ConfigError);
}

// Native counters depend on kernel settings and virtualisation; absent support is
// reported through typed errors rather than a crash.
TEST(OsSource, SamplesOwnProcessWhenCountersAreAvailable) {
  const Pid self = ::getpid();
  try {
    OsSource src(make_event_set(Profile::spectre), {self}, 10, CounterMap::defaults());
    EXPECT_EQ(src.counters_attached(self), 5u);
    volatile double sink = 0;
    std::vector<std::uint64_t> prev;
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 200000; ++k) sink = sink + k * 0.5;
      const auto b = src.next_batch();
      ASSERT_EQ(b.size(), 1u);
      if (!prev.empty())
        for (std::size_t e = 0; e < prev.size(); ++e) EXPECT_GE(b[0].values[e], prev[e]);
      prev = b[0].values;
    }
  } catch (const CapabilityError& e) {
    GTEST_SKIP() << "counters unavailable: " << e.what();
  } catch (const PrivilegeError& e) {
    GTEST_SKIP() << "insufficient privilege: " << e.what();
  } catch (const ConfigError& e) {
    GTEST_SKIP() << "partial counter support: " << e.what();
  }
}
