#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/json_util.hpp"

namespace hpcs {

inline constexpr int kTraceSchemaVersion = 1;

// JSONL trace layout:
//   line 1: {"schema_version":1,"profile":..,"load":..,"window_ms":..,"events":[..],
//            "processes":{"<pid>":"<category>",...}}
//   line n: {"pid":..,"t":..,"values":[..]}
inline void write_trace(std::ostream& os, const Trace& trace) {
  jsonu::ordered_json header;
  header["schema_version"] = kTraceSchemaVersion;
  header["profile"] = to_string(trace.event_set.profile);
  header["load"] = to_string(trace.load);
  header["window_ms"] = trace.window_ms;
  header["events"] = jsonu::ordered_json::array();
  for (const auto& e : trace.event_set.events) header["events"].push_back(to_string(e.id));
  header["processes"] = jsonu::ordered_json::object();
  for (const auto& [pid, label] : trace.processes)
    header["processes"][std::to_string(pid)] = to_string(label.category);
  os << header.dump() << '\n';

  for (const auto& s : trace.samples) {
    jsonu::ordered_json line;
    line["pid"] = s.pid;
    line["t"] = s.t;
    line["values"] = s.values;
    os << line.dump() << '\n';
  }
}

inline std::string encode_trace(const Trace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

namespace detail {

inline std::int64_t strict_int(const jsonu::json& j, std::string_view key, std::string_view ctx) {
  const auto& v = j.at(std::string(key));
  if (!v.is_number_integer())
    throw DecodeError(std::string(ctx) + ": field '" + std::string(key) + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::string strict_string(const jsonu::json& j, std::string_view key,
                                 std::string_view ctx) {
  const auto& v = j.at(std::string(key));
  if (!v.is_string())
    throw DecodeError(std::string(ctx) + ": field '" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

// Decodes a JSONL trace. Structural problems raise DecodeError; semantic invariants
// are left to validate_trace.
inline Trace read_trace(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DecodeError("trace: empty input");

  const auto header = jsonu::parse(line, "trace header");
  jsonu::expect_exact_fields(
      header, {"schema_version", "profile", "load", "window_ms", "events", "processes"},
      "trace header");
  if (detail::strict_int(header, "schema_version", "trace header") != kTraceSchemaVersion)
    throw DecodeError("trace header: unsupported schema_version");

  Trace trace;
  auto profile = parse_profile(detail::strict_string(header, "profile", "trace header"));
  if (!profile) throw DecodeError("trace header: unknown profile");
  auto load = parse_load(detail::strict_string(header, "load", "trace header"));
  if (!load) throw DecodeError("trace header: unknown load");
  trace.load = *load;
  trace.window_ms = detail::strict_int(header, "window_ms", "trace header");

  trace.event_set.profile = *profile;
  const auto& events = header.at("events");
  if (!events.is_array()) throw DecodeError("trace header: events must be an array");
  for (const auto& e : events) {
    auto id = e.is_string() ? parse_event_id(e.get<std::string>()) : std::nullopt;
    if (!id) throw DecodeError("trace header: unknown event " + e.dump());
    trace.event_set.events.push_back(describe(*id));
  }

  const auto& procs = header.at("processes");
  if (!procs.is_object()) throw DecodeError("trace header: processes must be an object");
  for (const auto& [key, value] : procs.items()) {
    Pid pid = 0;
    auto res = std::from_chars(key.data(), key.data() + key.size(), pid);
    if (res.ec != std::errc{} || res.ptr != key.data() + key.size())
      throw DecodeError("trace header: bad pid key '" + key + "'");
    auto cat = value.is_string() ? parse_category(value.get<std::string>()) : std::nullopt;
    if (!cat) throw DecodeError("trace header: unknown category for pid " + key);
    trace.processes[pid] = ProcessLabel{*cat};
  }

  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string ctx = "trace line " + std::to_string(lineno);
    const auto j = jsonu::parse(line, ctx);
    jsonu::expect_exact_fields(j, {"pid", "t", "values"}, ctx);
    CounterSample s;
    s.pid = detail::strict_int(j, "pid", ctx);
    s.t = detail::strict_int(j, "t", ctx);
    const auto& vals = j.at("values");
    if (!vals.is_array()) throw DecodeError(ctx + ": values must be an array");
    s.values.reserve(vals.size());
    for (const auto& v : vals) {
      if (!v.is_number_unsigned())
        throw DecodeError(ctx + ": values must be non-negative integers");
      s.values.push_back(v.get<std::uint64_t>());
    }
    trace.samples.push_back(std::move(s));
  }
  return trace;
}

inline Trace decode_trace(const std::string& text) {
  std::istringstream is(text);
  return read_trace(is);
}

inline void save_trace(const std::string& path, const Trace& trace) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_trace(os, trace);
  if (!os) throw Error("failed writing '" + path + "'");
}

inline Trace load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DecodeError("cannot open trace '" + path + "'");
  return read_trace(is);
}

}  // namespace hpcs
