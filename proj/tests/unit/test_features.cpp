#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hpc_sentinel/features.hpp"
#include "hpc_sentinel/log.hpp"
#include "hpc_sentinel/simgen.hpp"

using namespace hpcs;

namespace {

Trace trace_for(std::uint64_t seed, Load load = Load::NL, int windows = 80) {
  SimConfig c;
  c.seed = seed;
  c.load = load_condition(load);
  c.duration_windows = windows;
  return generate_trace(c);
}

// Captures warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  WarningSink previous;
  WarningCapture() {
    previous = set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink(previous); }
};

}  // namespace

TEST(Windowize, DeltasOfConsecutiveSamples) {
  const std::vector<CounterSample> s = {
      {7, 0, {0, 0}}, {7, 100, {10, 4}}, {7, 200, {25, 4}}, {7, 300, {25, 9}}};
  const auto w = windowize(s);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].x, (std::vector<double>{10, 4}));
  EXPECT_EQ(w[1].x, (std::vector<double>{15, 0}));
  EXPECT_EQ(w[2].x, (std::vector<double>{0, 5}));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(w[static_cast<std::size_t>(i)].window_index, i);
    EXPECT_EQ(w[static_cast<std::size_t>(i)].pid, 7);
    EXPECT_FALSE(w[static_cast<std::size_t>(i)].label.has_value());
  }
  EXPECT_TRUE(windowize(std::span<const CounterSample>(s.data(), 1)).empty());
}

TEST(Windowize, RejectsBrokenStreams) {
  const auto set = make_event_set(Profile::meltdown);
  std::vector<CounterSample> s = {{7, 0, {5, 5, 5, 5}}, {7, 100, {6, 6, 4, 6}}};
  try {
    windowize(s, &set);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("PAGE_FAULTS"), std::string::npos);
  }
  s = {{7, 0, {1}}, {8, 100, {2}}};
  EXPECT_THROW(windowize(s), DataError);
  s = {{7, 100, {1}}, {7, 100, {2}}};
  EXPECT_THROW(windowize(s), DataError);
  s = {{7, 0, {1}}, {7, 100, {2, 3}}};
  EXPECT_THROW(windowize(s), DataError);
}

TEST(Windowize, SumOfDeltasTelescopes) {
  const Trace t = trace_for(3, Load::FL);
  std::map<Pid, std::vector<CounterSample>> by;
  for (const auto& s : t.samples) by[s.pid].push_back(s);
  for (const auto& [pid, ss] : by) {
    const auto w = windowize(ss);
    for (std::size_t e = 0; e < t.event_set.size(); ++e) {
      std::uint64_t sum = 0;
      for (const auto& x : w) sum += static_cast<std::uint64_t>(x.x[e]);
      EXPECT_EQ(sum, ss.back().values[e] - ss.front().values[e]);
    }
  }
}

TEST(Normalization, ZeroMeanUnitVarianceAndInverse) {
  const auto ds = build_dataset(trace_for(5));
  const auto z = apply_norm(ds.windows, ds.norm);
  const std::size_t d = ds.event_set.size();
  for (std::size_t e = 0; e < d; ++e) {
    double m = 0, v = 0;
    for (const auto& w : z) m += w.x[e];
    m /= static_cast<double>(z.size());
    for (const auto& w : z) v += (w.x[e] - m) * (w.x[e] - m);
    v /= static_cast<double>(z.size());
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
  const auto back = invert_norm(z, ds.norm);
  for (std::size_t i = 0; i < back.size(); ++i)
    for (std::size_t e = 0; e < d; ++e)
      EXPECT_NEAR(back[i].x[e], ds.windows[i].x[e], 1e-6 * std::max(1.0, ds.windows[i].x[e]));
}

TEST(Normalization, ConstantFeatureIsFlooredWithWarning) {
  std::vector<WindowFeatures> w;
  for (int i = 0; i < 5; ++i) w.push_back({0, 1, i, {3.0, static_cast<double>(i)}, 0});
  WarningCapture cap;
  const auto n = fit_norm(w);
  EXPECT_EQ(n.stddev[0], kStddevFloor);
  EXPECT_FALSE(cap.messages.empty());
  EXPECT_THROW(fit_norm(std::span<const WindowFeatures>(w.data(), 1)), DataError);
}

TEST(Dataset, LabelsFollowGroundTruthAndSeedShuffles) {
  const Trace t = trace_for(8);
  const auto a = build_dataset(t, {1, false});
  const auto b = build_dataset(t, {1, false});
  const auto c = build_dataset(t, {2, false});
  EXPECT_EQ(a, b);
  EXPECT_NE(a.windows, c.windows);
  EXPECT_EQ(a.size(), (79u) * t.processes.size());
  for (const auto& w : a.windows) EXPECT_EQ(*w.label, t.processes.at(w.pid).malicious() ? 1 : 0);
  EXPECT_EQ(a.count_label(1), 79u);
}

TEST(Dataset, RebalanceEqualisesClasses) {
  const auto ds = build_dataset(trace_for(8, Load::FL), {3, true});
  EXPECT_EQ(ds.count_label(0), ds.count_label(1));
  EXPECT_EQ(ds.count_label(1), 79u);
}

TEST(Dataset, MixedEventSetsAreRejected) {
  SimConfig m;
  m.profile = Profile::meltdown;
  m.attack = Category::meltdown;
  m.duration_windows = 10;
  const std::vector<Trace> traces = {trace_for(1, Load::NL, 10), generate_trace(m)};
  EXPECT_THROW(build_dataset(traces), DataError);
}

TEST(Dataset, MultipleTracesKeepPidsApart) {
  const std::vector<Trace> traces = {trace_for(1, Load::NL, 10), trace_for(1, Load::NL, 10)};
  const auto ds = build_dataset(traces);
  std::set<std::pair<int, Pid>> keys;
  for (const auto& w : ds.windows) keys.insert({w.trace, w.pid});
  EXPECT_EQ(keys.size(), 2 * traces[0].processes.size());
}

TEST(Dataset, JsonlRoundTripIsExact) {
  const auto ds = build_dataset(trace_for(12, Load::AL, 30), {4, false});
  const auto text = encode_dataset(ds);
  const auto back = decode_dataset(text);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(encode_dataset(back), text);
  EXPECT_THROW(decode_dataset(text.substr(0, text.find('\n')) + "\n{\"pid\":1}\n"), DecodeError);
}

TEST(KFold, StratifiedWithinOneWindowPerFold) {
  for (int k : {2, 3, 5, 10}) {
    for (std::size_t pos : {7u, 50u, 333u}) {
      std::vector<int> labels(1000, 0);
      for (std::size_t i = 0; i < pos; ++i) labels[i * 3 % 1000] = 1;
      const std::size_t n1 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
      if (n1 < static_cast<std::size_t>(k)) continue;
      const auto folds = kfold_split(labels, k, 99);
      ASSERT_EQ(folds.size(), static_cast<std::size_t>(k));
      std::vector<int> seen(labels.size(), 0);
      std::size_t min_size = labels.size(), max_size = 0;
      for (const auto& f : folds) {
        std::size_t c1 = 0;
        for (auto i : f.validation) {
          ++seen[i];
          c1 += static_cast<std::size_t>(labels[i]);
        }
        const double c0 = static_cast<double>(f.validation.size() - c1);
        EXPECT_LE(std::abs(static_cast<double>(c1) - static_cast<double>(n1) / k), 1.0);
        EXPECT_LE(std::abs(c0 - static_cast<double>(1000 - n1) / k), 1.0);
        EXPECT_EQ(f.train.size() + f.validation.size(), labels.size());
        min_size = std::min(min_size, f.validation.size());
        max_size = std::max(max_size, f.validation.size());
      }
      EXPECT_LE(max_size - min_size, 1u);
      for (int s : seen) EXPECT_EQ(s, 1);
    }
  }
}

TEST(KFold, RejectsDegenerateRequests) {
  std::vector<int> labels = {0, 0, 0, 1, 1};
  EXPECT_THROW(kfold_split(labels, 1, 0), ConfigError);
  EXPECT_THROW(kfold_split(labels, 3, 0), DataError);
  EXPECT_NO_THROW(kfold_split(labels, 2, 0));
}

TEST(KFold, SubsetRefitsNormalisation) {
  const auto ds = build_dataset(trace_for(2));
  const auto folds = kfold_split(ds, 4, 1);
  const auto sub = ds.subset(folds[0].train);
  EXPECT_EQ(sub.size(), folds[0].train.size());
  EXPECT_EQ(sub.norm, fit_norm(sub.windows));
  EXPECT_NE(sub.norm, ds.norm);
}
