#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"

namespace hpcs {

// Mean count per 100 ms window and coefficient of variation for one event.
struct EventRate {
  double mean = 0;
  double cv = 0;

  bool operator==(const EventRate&) const = default;
};

struct BehaviorProfile {
  Category category = Category::benign;
  Profile profile = Profile::spectre;
  std::vector<EventRate> rates;  // make_event_set(profile) order

  EventRate& rate(EventId id) { return rates.at(*make_event_set(profile).index_of(id)); }
  const EventRate& rate(EventId id) const {
    return rates.at(*make_event_set(profile).index_of(id));
  }
  double mean(EventId id) const { return rate(id).mean; }

  bool operator==(const BehaviorProfile&) const = default;
};

// Bounds on the within-profile branch-miss ratio.
inline constexpr double kBenignMaxMissRatio = 0.05;
inline constexpr double kSpectreMinMissRatio = 0.5;

struct LoadCondition {
  Load name = Load::NL;
  double noise_scale = 1.0;

  bool operator==(const LoadCondition&) const = default;
};

inline LoadCondition load_condition(Load load) {
  switch (load) {
    case Load::NL: return {Load::NL, 1.0};
    case Load::AL: return {Load::AL, 2.0};
    case Load::FL: return {Load::FL, 3.0};
  }
  return {};
}

// Benign behaviour families. `general` is the canonical benign profile.
enum class BenignKind { general, compute, memory, branchy, interactive };

namespace detail {

struct RateRow {
  EventId id;
  double mean;
  double cv;
};

inline BehaviorProfile make_profile(Category c, Profile p, std::initializer_list<RateRow> rows) {
  BehaviorProfile prof{c, p, {}};
  const EventSet set = make_event_set(p);
  prof.rates.resize(set.size());
  for (const auto& r : rows)
    if (auto idx = set.index_of(r.id)) prof.rates[*idx] = {r.mean, r.cv};
  return prof;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

inline BehaviorProfile benign_archetype(BenignKind kind, Profile profile) {
  using E = EventId;
  const Category b = Category::benign;
  switch (kind) {
    case BenignKind::general:
      return detail::make_profile(b, profile,
                                  {{E::TOT_INS, 1.5e8, 0.15}, {E::BR_INS, 2.5e7, 0.15},
                                   {E::BR_MSP, 5.0e5, 0.20},  {E::L3_TCA, 1.2e6, 0.20},
                                   {E::L3_TCM, 1.5e5, 0.25},  {E::PAGE_FAULTS, 200, 0.50}});
    case BenignKind::compute:
      return detail::make_profile(b, profile,
                                  {{E::TOT_INS, 3.0e8, 0.08}, {E::BR_INS, 4.0e7, 0.10},
                                   {E::BR_MSP, 4.0e5, 0.15},  {E::L3_TCA, 6.0e5, 0.20},
                                   {E::L3_TCM, 4.0e4, 0.25},  {E::PAGE_FAULTS, 20, 0.50}});
    case BenignKind::memory:
      return detail::make_profile(b, profile,
                                  {{E::TOT_INS, 2.5e8, 0.10}, {E::BR_INS, 2.0e7, 0.10},
                                   {E::BR_MSP, 3.0e5, 0.20},  {E::L3_TCA, 3.0e6, 0.15},
                                   {E::L3_TCM, 4.0e5, 0.20},  {E::PAGE_FAULTS, 800, 0.40}});
    case BenignKind::branchy:
      return detail::make_profile(b, profile,
                                  {{E::TOT_INS, 2.0e8, 0.12}, {E::BR_INS, 4.5e7, 0.12},
                                   {E::BR_MSP, 1.6e6, 0.15},  {E::L3_TCA, 8.0e5, 0.20},
                                   {E::L3_TCM, 8.0e4, 0.25},  {E::PAGE_FAULTS, 100, 0.50}});
    case BenignKind::interactive:
      return detail::make_profile(b, profile,
                                  {{E::TOT_INS, 6.0e6, 0.60}, {E::BR_INS, 1.0e6, 0.60},
                                   {E::BR_MSP, 3.0e4, 0.60},  {E::L3_TCA, 8.0e4, 0.60},
                                   {E::L3_TCM, 1.0e4, 0.60},  {E::PAGE_FAULTS, 150, 0.80}});
  }
  return {};
}

// Fully parameterised behaviour for a category under an attack family's event set.
// Attack processes run a short hot loop: few instructions, many misses.
inline BehaviorProfile builtin_profile(Category category, Profile profile) {
  if (!category_matches(category, profile))
    throw ConfigError("category", std::string(to_string(category)) +
                                      " has no profile under " +
                                      std::string(to_string(profile)));
  using E = EventId;
  switch (category) {
    case Category::benign: return benign_archetype(BenignKind::general, profile);
    case Category::spectre_v1:
      return detail::make_profile(category, profile,
                                  {{E::TOT_INS, 1.2e7, 0.15}, {E::BR_INS, 2.4e6, 0.15},
                                   {E::BR_MSP, 1.5e6, 0.18},  {E::L3_TCA, 6.0e5, 0.20},
                                   {E::L3_TCM, 4.5e5, 0.20}});
    case Category::spectre_v2:
      return detail::make_profile(category, profile,
                                  {{E::TOT_INS, 1.5e7, 0.15}, {E::BR_INS, 2.0e6, 0.15},
                                   {E::BR_MSP, 1.3e6, 0.18},  {E::L3_TCA, 5.0e5, 0.20},
                                   {E::L3_TCM, 3.8e5, 0.20}});
    case Category::meltdown:
      return detail::make_profile(category, profile,
                                  {{E::TOT_INS, 2.0e7, 0.15}, {E::L3_TCA, 7.0e5, 0.20},
                                   {E::L3_TCM, 5.0e5, 0.20},  {E::PAGE_FAULTS, 2.5e4, 0.20}});
  }
  return {};
}

// Lists the invariants `p` violates. Cross-profile ratios are checked against
// `benign_ref` (the canonical benign profile when omitted).
inline std::vector<std::string> profile_violations(
    const BehaviorProfile& p, std::optional<BehaviorProfile> benign_ref = std::nullopt) {
  std::vector<std::string> out;
  for (const auto& r : p.rates) {
    if (!(r.mean >= 0)) out.push_back("negative mean rate");
    if (!(r.cv >= 0)) out.push_back("negative dispersion");
  }
  const EventSet set = make_event_set(p.profile);
  if (p.rates.size() != set.size()) {
    out.push_back("rate count does not match event set");
    return out;
  }
  const bool has_branches = set.contains(EventId::BR_MSP);
  const double miss_ratio =
      has_branches && p.mean(EventId::BR_INS) > 0
          ? p.mean(EventId::BR_MSP) / p.mean(EventId::BR_INS)
          : 0.0;
  if (p.category == Category::benign) {
    if (has_branches && miss_ratio > kBenignMaxMissRatio + 1e-12)
      out.push_back("benign BR_MSP/BR_INS above 0.05");
    return out;
  }

  const BehaviorProfile ref = benign_ref ? *benign_ref : builtin_profile(Category::benign, p.profile);
  if (p.category != Category::meltdown && miss_ratio < kSpectreMinMissRatio - 1e-12)
    out.push_back("spectre BR_MSP/BR_INS below 0.5");
  const double ratio = p.mean(EventId::L3_TCM) / p.mean(EventId::TOT_INS);
  const double ref_ratio = ref.mean(EventId::L3_TCM) / ref.mean(EventId::TOT_INS);
  if (ratio < 10 * ref_ratio) out.push_back("L3_TCM/TOT_INS not 10x the benign ratio");
  if (p.mean(EventId::TOT_INS) > ref.mean(EventId::TOT_INS))
    out.push_back("attack TOT_INS above benign");
  if (p.category == Category::meltdown &&
      p.mean(EventId::PAGE_FAULTS) < 10 * ref.mean(EventId::PAGE_FAULTS))
    out.push_back("meltdown PAGE_FAULTS not 10x benign");
  return out;
}

namespace detail {

inline void clamp_miss_ratio(BehaviorProfile& p) {
  const EventSet set = make_event_set(p.profile);
  if (!set.contains(EventId::BR_MSP)) return;
  const double br = p.mean(EventId::BR_INS);
  double& msp = p.rate(EventId::BR_MSP).mean;
  if (p.category == Category::benign)
    msp = std::min(msp, kBenignMaxMissRatio * br);
  else if (p.category != Category::meltdown)
    msp = std::max(msp, kSpectreMinMissRatio * br);
}

}  // namespace detail

// Multiplies each mean by an independent factor in [1-jitter, 1+jitter], then
// re-clamps the branch-miss ratio into its category's band.
inline BehaviorProfile perturb_rates(const BehaviorProfile& profile, double jitter,
                                     std::uint64_t seed) {
  if (!(jitter >= 0.0 && jitter <= 0.5))
    throw ConfigError("jitter", "must lie in [0, 0.5]");
  if (jitter == 0.0) return profile;
  BehaviorProfile out = profile;
  std::mt19937_64 rng(detail::splitmix64(seed));
  std::uniform_real_distribution<double> factor(1.0 - jitter, 1.0 + jitter);
  for (auto& r : out.rates) r.mean *= factor(rng);
  detail::clamp_miss_ratio(out);
  return out;
}

struct SimConfig {
  Profile profile = Profile::spectre;
  Category attack = Category::spectre_v1;
  LoadCondition load = load_condition(Load::NL);
  int n_benign = 3;
  int n_attack = 1;
  int duration_windows = 100;  // samples per process
  std::int64_t window_ms = 100;
  std::uint64_t seed = 1;
  double counter_noise = 0.03;
  double benign_jitter = 0.25;
  double attack_jitter = 0.10;

  void validate() const {
    if (n_benign < 1) throw ConfigError("n_benign", "must be >= 1");
    if (n_attack < 0) throw ConfigError("n_attack", "must be >= 0");
    if (duration_windows < 1) throw ConfigError("duration_windows", "must be >= 1");
    if (window_ms < 1) throw ConfigError("window_ms", "must be >= 1");
    if (!(counter_noise >= 0.0 && counter_noise <= 0.10))
      throw ConfigError("counter_noise", "must lie in [0, 0.10]");
    if (!(benign_jitter >= 0.0 && benign_jitter <= 0.5))
      throw ConfigError("benign_jitter", "must lie in [0, 0.5]");
    if (!(attack_jitter >= 0.0 && attack_jitter <= 0.5))
      throw ConfigError("attack_jitter", "must lie in [0, 0.5]");
    if (!(load.noise_scale >= 1.0)) throw ConfigError("load", "noise_scale must be >= 1");
    if (attack == Category::benign || !category_matches(attack, profile))
      throw ConfigError("attack", std::string(to_string(attack)) + " is not an attack under " +
                                      std::string(to_string(profile)));
  }
};

// Applies relative counter noise to a pre-noise count. The result always lies in
// [v(1-c), v(1+c)] even after rounding to an integer.
template <typename Rng>
std::uint64_t apply_counter_noise(std::uint64_t v, double c, Rng& rng) {
  if (c <= 0 || v == 0) return v;
  std::uniform_real_distribution<double> factor(1.0 - c, 1.0 + c);
  const double x = static_cast<double>(v);
  const double lo = std::ceil(x * (1.0 - c));
  const double hi = std::floor(x * (1.0 + c));
  const double noisy = std::clamp(std::round(x * factor(rng)), lo, hi);
  return static_cast<std::uint64_t>(noisy);
}

// Streams a synthetic trace one sampling tick at a time. generate_trace and the
// live simulator source are both built on this, so they agree sample for sample.
class TraceGenerator {
 public:
  struct Process {
    Pid pid = 0;
    ProcessLabel label;
    BehaviorProfile profile;
    std::mt19937_64 rng;
    std::vector<std::uint64_t> cumulative;
  };

  explicit TraceGenerator(const SimConfig& cfg) : cfg_(cfg), set_(make_event_set(cfg.profile)) {
    cfg_.validate();
    std::mt19937_64 pid_rng(detail::splitmix64(cfg_.seed ^ 0x5049445F53454544ull));
    std::uniform_int_distribution<Pid> pid_dist(1000, 60999);
    std::set<Pid> used;
    auto fresh_pid = [&] {
      Pid p;
      do p = pid_dist(pid_rng);
      while (!used.insert(p).second);
      return p;
    };

    std::uint64_t stream = 0;
    auto add = [&](Category cat, const BehaviorProfile& base, double jitter) {
      Process proc;
      proc.pid = fresh_pid();
      proc.label = {cat};
      const std::uint64_t s = detail::splitmix64(cfg_.seed + 0x9E3779B97F4A7C15ull * ++stream);
      proc.profile = perturb_rates(base, jitter, s ^ 0xA5A5A5A5ull);
      proc.rng.seed(s);
      proc.cumulative.assign(set_.size(), 0);
      procs_.push_back(std::move(proc));
    };

    for (int i = 0; i < cfg_.n_attack; ++i)
      add(cfg_.attack, builtin_profile(cfg_.attack, cfg_.profile), cfg_.attack_jitter);
    static constexpr BenignKind kDesktop[] = {BenignKind::general, BenignKind::memory,
                                              BenignKind::branchy, BenignKind::interactive,
                                              BenignKind::compute};
    static constexpr BenignKind kBackground[] = {BenignKind::memory, BenignKind::compute,
                                                 BenignKind::memory, BenignKind::branchy};
    const int population =
        static_cast<int>(std::lround(cfg_.n_benign * cfg_.load.noise_scale));
    for (int i = 0; i < population; ++i) {
      const BenignKind kind = i < cfg_.n_benign ? kDesktop[i % 5] : kBackground[i % 4];
      add(Category::benign, benign_archetype(kind, cfg_.profile), cfg_.benign_jitter);
    }
    std::sort(procs_.begin(), procs_.end(),
              [](const Process& a, const Process& b) { return a.pid < b.pid; });
    for (const auto& p : procs_) labels_[p.pid] = p.label;
  }

  const SimConfig& config() const noexcept { return cfg_; }
  const EventSet& event_set() const noexcept { return set_; }
  const std::map<Pid, ProcessLabel>& processes() const noexcept { return labels_; }
  const std::vector<Process>& process_states() const noexcept { return procs_; }
  int ticks_emitted() const noexcept { return ticks_; }
  bool done() const noexcept { return ticks_ >= cfg_.duration_windows; }
  std::int64_t next_timestamp() const noexcept { return ticks_ * cfg_.window_ms; }

  // Window deltas of the most recent tick, before and after counter noise, one
  // row per process in pid order. Empty after the first tick.
  const std::vector<std::vector<std::uint64_t>>& last_pre_noise() const noexcept {
    return pre_noise_;
  }
  const std::vector<std::vector<std::uint64_t>>& last_noisy() const noexcept { return noisy_; }

  // Cumulative readings of every process at the next tick, in pid order.
  std::vector<CounterSample> next_tick() {
    if (done()) throw Error("trace generator exhausted");
    pre_noise_.clear();
    noisy_.clear();
    std::vector<CounterSample> out;
    out.reserve(procs_.size());
    const std::int64_t t = next_timestamp();
    for (auto& p : procs_) {
      if (ticks_ > 0) {
        auto [pre, noisy] = draw_window(p);
        for (std::size_t e = 0; e < noisy.size(); ++e) p.cumulative[e] += noisy[e];
        pre_noise_.push_back(std::move(pre));
        noisy_.push_back(std::move(noisy));
      }
      out.push_back({p.pid, t, p.cumulative});
    }
    ++ticks_;
    return out;
  }

 private:
  // Share of the window the process was scheduled for; background load squeezes
  // it and occasionally starves the process almost completely.
  double run_share(std::mt19937_64& rng) const {
    const double extra = cfg_.load.noise_scale - 1.0;
    const double starve_p = std::min(0.5, 0.025 * extra);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (starve_p > 0 && unit(rng) < starve_p)
      return std::uniform_real_distribution<double>(0.03, 0.4)(rng);
    const double low = std::max(0.05, 0.97 - 0.17 * extra);
    return std::uniform_real_distribution<double>(low, 1.0)(rng);
  }

  static std::uint64_t draw_count(double mean, double cv, std::mt19937_64& rng) {
    if (mean <= 0) return 0;
    double lambda = mean;
    if (cv > 0) {
      const double shape = 1.0 / (cv * cv);
      lambda = std::gamma_distribution<double>(shape, mean / shape)(rng);
    }
    if (lambda <= 0) return 0;
    return static_cast<std::uint64_t>(std::poisson_distribution<long long>(lambda)(rng));
  }

  std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>> draw_window(Process& p) {
    const double extra = cfg_.load.noise_scale - 1.0;
    const double time_scale = static_cast<double>(cfg_.window_ms) / 100.0;
    const double share = run_share(p.rng);
    const double tca = p.profile.mean(EventId::L3_TCA);

    std::vector<std::uint64_t> pre(set_.size()), noisy(set_.size());
    for (std::size_t e = 0; e < set_.size(); ++e) {
      const EventId id = set_.events[e].id;
      const EventRate& r = p.profile.rates[e];
      double mean = r.mean * share;
      // Shared-cache contention from co-running load evicts this process's lines.
      if (id == EventId::L3_TCM) mean += 0.04 * extra * tca * share;
      if (id == EventId::L3_TCA) mean += 0.10 * extra * tca * share;
      const double cv = r.cv * (1.0 + 0.2 * extra);
      pre[e] = draw_count(mean * time_scale, cv, p.rng);
      noisy[e] = apply_counter_noise(pre[e], cfg_.counter_noise, p.rng);
    }
    return {std::move(pre), std::move(noisy)};
  }

  SimConfig cfg_;
  EventSet set_;
  std::vector<Process> procs_;
  std::map<Pid, ProcessLabel> labels_;
  std::vector<std::vector<std::uint64_t>> pre_noise_, noisy_;
  int ticks_ = 0;
};

inline Trace generate_trace(const SimConfig& cfg) {
  TraceGenerator gen(cfg);
  Trace trace;
  trace.event_set = gen.event_set();
  trace.load = cfg.load.name;
  trace.window_ms = cfg.window_ms;
  trace.processes = gen.processes();
  trace.samples.reserve(static_cast<std::size_t>(cfg.duration_windows) * trace.processes.size());
  while (!gen.done())
    for (auto& s : gen.next_tick()) trace.samples.push_back(std::move(s));
  return trace;
}

}  // namespace hpcs
