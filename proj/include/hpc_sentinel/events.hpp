#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hpc_sentinel/error.hpp"

namespace hpcs {

using Pid = std::int64_t;

enum class EventId { L3_TCM, L3_TCA, BR_INS, BR_MSP, TOT_INS, PAGE_FAULTS };
enum class EventKind { hardware, software };
enum class Profile { spectre, meltdown };
enum class Category { benign, spectre_v1, spectre_v2, meltdown };
enum class Load { NL, AL, FL };

inline constexpr std::array<EventId, 6> kAllEvents = {
    EventId::L3_TCM, EventId::L3_TCA,  EventId::BR_INS,
    EventId::BR_MSP, EventId::TOT_INS, EventId::PAGE_FAULTS};

inline constexpr std::array<Load, 3> kAllLoads = {Load::NL, Load::AL, Load::FL};

// ---------------------------------------------------------------------------
// Names. Every enum has a canonical spelling used by all file formats.

inline std::string_view to_string(EventId id) {
  switch (id) {
    case EventId::L3_TCM: return "L3_TCM";
    case EventId::L3_TCA: return "L3_TCA";
    case EventId::BR_INS: return "BR_INS";
    case EventId::BR_MSP: return "BR_MSP";
    case EventId::TOT_INS: return "TOT_INS";
    case EventId::PAGE_FAULTS: return "PAGE_FAULTS";
  }
  return "?";
}

inline std::string_view to_string(EventKind k) {
  return k == EventKind::hardware ? "hardware" : "software";
}

inline std::string_view to_string(Profile p) {
  return p == Profile::spectre ? "spectre" : "meltdown";
}

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::benign: return "benign";
    case Category::spectre_v1: return "spectre_v1";
    case Category::spectre_v2: return "spectre_v2";
    case Category::meltdown: return "meltdown";
  }
  return "?";
}

inline std::string_view to_string(Load l) {
  switch (l) {
    case Load::NL: return "NL";
    case Load::AL: return "AL";
    case Load::FL: return "FL";
  }
  return "?";
}

namespace detail {
template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& all) {
  for (Enum e : all)
    if (to_string(e) == s) return e;
  return std::nullopt;
}
}  // namespace detail

inline std::optional<EventId> parse_event_id(std::string_view s) {
  return detail::parse_enum(s, kAllEvents);
}

inline std::optional<Profile> parse_profile(std::string_view s) {
  return detail::parse_enum(s, std::array{Profile::spectre, Profile::meltdown});
}

inline std::optional<Category> parse_category(std::string_view s) {
  return detail::parse_enum(s, std::array{Category::benign, Category::spectre_v1,
                                          Category::spectre_v2, Category::meltdown});
}

// Accepts "NL"/"nl" etc.
inline std::optional<Load> parse_load(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return detail::parse_enum(std::string_view(up), kAllLoads);
}

// ---------------------------------------------------------------------------

struct EventDescriptor {
  EventId id;
  EventKind kind;

  bool operator==(const EventDescriptor&) const = default;
};

inline EventDescriptor describe(EventId id) {
  return {id, id == EventId::PAGE_FAULTS ? EventKind::software : EventKind::hardware};
}

struct EventSet {
  Profile profile = Profile::spectre;
  std::vector<EventDescriptor> events;

  std::size_t size() const noexcept { return events.size(); }

  std::optional<std::size_t> index_of(EventId id) const {
    for (std::size_t i = 0; i < events.size(); ++i)
      if (events[i].id == id) return i;
    return std::nullopt;
  }

  bool contains(EventId id) const { return index_of(id).has_value(); }

  std::vector<EventId> ids() const {
    std::vector<EventId> out;
    out.reserve(events.size());
    for (const auto& e : events) out.push_back(e.id);
    return out;
  }

  bool operator==(const EventSet&) const = default;
};

// Canonical ordered event set monitored for each attack family.
inline EventSet make_event_set(Profile profile) {
  EventSet set{profile, {}};
  if (profile == Profile::spectre) {
    for (EventId id : {EventId::L3_TCM, EventId::L3_TCA, EventId::BR_INS, EventId::BR_MSP,
                       EventId::TOT_INS})
      set.events.push_back(describe(id));
  } else {
    for (EventId id : {EventId::L3_TCM, EventId::L3_TCA, EventId::PAGE_FAULTS, EventId::TOT_INS})
      set.events.push_back(describe(id));
  }
  return set;
}

// The attack family a category belongs to; benign belongs to both.
// Profile an attack category is detected under. Benign belongs to every profile.
inline Profile profile_of(Category attack) {
  if (attack == Category::benign) throw ConfigError("category", "benign has no attack profile");
  return attack == Category::meltdown ? Profile::meltdown : Profile::spectre;
}

inline bool category_matches(Category c, Profile p) {
  switch (c) {
    case Category::benign: return true;
    case Category::spectre_v1:
    case Category::spectre_v2: return p == Profile::spectre;
    case Category::meltdown: return p == Profile::meltdown;
  }
  return false;
}

struct CounterSample {
  Pid pid = 0;
  std::int64_t t = 0;  // ms since trace start
  std::vector<std::uint64_t> values;  // cumulative, EventSet order

  bool operator==(const CounterSample&) const = default;
};

struct ProcessLabel {
  Category category = Category::benign;

  bool malicious() const noexcept { return category != Category::benign; }
  bool operator==(const ProcessLabel&) const = default;
};

struct Trace {
  EventSet event_set;
  Load load = Load::NL;
  std::map<Pid, ProcessLabel> processes;
  std::vector<CounterSample> samples;
  std::int64_t window_ms = 100;

  bool operator==(const Trace&) const = default;
};

struct Violation {
  Pid pid = 0;
  std::optional<std::int64_t> t;
  std::string field;
  std::string message;
};

// Reports every invariant violation in `trace`. An empty result means valid.
inline std::vector<Violation> validate_trace(const Trace& trace) {
  std::vector<Violation> out;
  const std::size_t width = trace.event_set.size();

  if (trace.event_set != make_event_set(trace.event_set.profile))
    out.push_back({0, std::nullopt, "event_set",
                   "event set is not the canonical set for profile " +
                       std::string(to_string(trace.event_set.profile))});
  if (trace.window_ms < 1)
    out.push_back({0, std::nullopt, "window_ms", "window_ms must be >= 1"});
  for (const auto& [pid, label] : trace.processes)
    if (!category_matches(label.category, trace.event_set.profile))
      out.push_back({pid, std::nullopt, "processes",
                     "category " + std::string(to_string(label.category)) +
                         " does not belong to profile " +
                         std::string(to_string(trace.event_set.profile))});

  std::map<Pid, const CounterSample*> last;
  std::optional<std::int64_t> prev_t;
  for (const auto& s : trace.samples) {
    if (prev_t && s.t < *prev_t)
      out.push_back({s.pid, s.t, "t", "samples are not time-ordered"});
    prev_t = s.t;

    if (!trace.processes.contains(s.pid)) {
      out.push_back({s.pid, s.t, "pid", "sample pid not listed in processes"});
      continue;
    }
    if (s.values.size() != width) {
      out.push_back({s.pid, s.t, "values",
                     "expected " + std::to_string(width) + " values, got " +
                         std::to_string(s.values.size())});
      continue;
    }
    auto it = last.find(s.pid);
    if (it != last.end()) {
      const CounterSample& p = *it->second;
      if (s.t <= p.t)
        out.push_back({s.pid, s.t, "t", "timestamps not strictly increasing for pid"});
      else if (s.t - p.t != trace.window_ms)
        out.push_back({s.pid, s.t, "t",
                       "sample spacing " + std::to_string(s.t - p.t) + " ms != window_ms"});
      for (std::size_t e = 0; e < width; ++e)
        if (s.values[e] < p.values[e])
          out.push_back({s.pid, s.t, std::string(to_string(trace.event_set.events[e].id)),
                         "cumulative counter decreased"});
    }
    last[s.pid] = &s;
  }
  return out;
}

}  // namespace hpcs
