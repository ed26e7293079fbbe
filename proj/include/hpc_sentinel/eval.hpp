#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hpc_sentinel/collector.hpp"
#include "hpc_sentinel/detector.hpp"
#include "hpc_sentinel/error.hpp"
#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/features.hpp"
#include "hpc_sentinel/models.hpp"
#include "hpc_sentinel/numfmt.hpp"
#include "hpc_sentinel/simgen.hpp"

namespace hpcs {

// Accepts "spectre-v1", "spectre_v1", "meltdown".
inline std::optional<Category> parse_attack(std::string_view s) {
  std::string norm(s);
  std::replace(norm.begin(), norm.end(), '-', '_');
  auto c = parse_category(norm);
  if (!c || *c == Category::benign) return std::nullopt;
  return c;
}

struct ExperimentSpec {
  Category attack = Category::spectre_v1;
  std::vector<Load> loads = {Load::NL, Load::AL, Load::FL};
  std::vector<ModelKind> models = {kAllModels.begin(), kAllModels.end()};
  int windows = 10000;  // per trace, train and test alike
  int k = 0;            // k-fold cross-validation on the training set; 0 skips it
  std::uint64_t seed = 1;
  int n_benign = 3;
  bool measure_timing = true;
  Hyperparams hp;

  void validate() const {
    if (attack == Category::benign) throw ConfigError("attack", "must be an attack category");
    if (loads.empty()) throw ConfigError("loads", "at least one load required");
    if (models.empty()) throw ConfigError("models", "at least one model required");
    if (windows < 8) throw ConfigError("windows", "must be >= 8");
    if (k == 1 || k < 0) throw ConfigError("k", "must be 0 (skip) or >= 2");
    if (n_benign < 1) throw ConfigError("n_benign", "must be >= 1");
  }
};

struct ResultRow {
  ModelKind model = ModelKind::LDA;
  Load load = Load::NL;
  double accuracy = 0;             // %
  std::optional<double> speed_ms;  // median first-alert latency
  double fp = 0;                   // %
  double fn = 0;                   // %
  std::optional<double> overhead;  // % of the window budget

  bool operator==(const ResultRow&) const = default;
};

struct ResultTable {
  Category attack = Category::spectre_v1;
  std::vector<ResultRow> rows;

  const ResultRow* find(ModelKind m, Load l) const {
    for (const auto& r : rows)
      if (r.model == m && r.load == l) return &r;
    return nullptr;
  }

  bool operator==(const ResultTable&) const = default;
};

struct CvRow {
  ModelKind model = ModelKind::LDA;
  Load load = Load::NL;
  int k = 0;
  double mean_accuracy = 0;
  double stddev_accuracy = 0;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<CvRow> cross_validation;
  // Seeds of the (train, test) traces for each load.
  std::map<Load, std::pair<std::uint64_t, std::uint64_t>> trace_seeds;
};

// Simulation config whose trace holds at least `windows` labelled windows.
inline SimConfig sim_config_for(Category attack, Load load, int windows, int n_benign,
                                 std::uint64_t seed) {
  SimConfig cfg;
  cfg.profile = profile_of(attack);
  cfg.attack = attack;
  cfg.load = load_condition(load);
  cfg.n_benign = n_benign;
  cfg.n_attack = 1;
  cfg.seed = seed;
  const int procs =
      cfg.n_attack + static_cast<int>(std::lround(n_benign * cfg.load.noise_scale));
  cfg.duration_windows = (windows + procs - 1) / procs + 1;
  return cfg;
}

// Distinct, deterministic seeds for the train and test traces of one cell.
inline std::pair<std::uint64_t, std::uint64_t> trace_seeds(std::uint64_t seed, Category attack,
                                                           Load load) {
  const std::uint64_t base = detail::splitmix64(seed ^ (static_cast<std::uint64_t>(attack) << 8) ^
                                                (static_cast<std::uint64_t>(load) << 16));
  const std::uint64_t train = detail::splitmix64(base ^ 0x7472616Eull);
  std::uint64_t test = detail::splitmix64(base ^ 0x74657374ull);
  while (test == train) test = detail::splitmix64(test);
  return {train, test};
}

// Per-window metrics from a detector pass, scored against the trace's ground truth.
struct ReplayScore {
  Metrics metrics;
  std::optional<double> median_latency_windows;
  DetectionSummary summary;
};

inline ReplayScore score_replay(const ClassifierModel& model, const Trace& test,
                                const AlertPolicy& policy = AlertPolicy::first_hit()) {
  ReplaySource src(test);
  std::vector<int> labels, predicted;
  const auto summary = run_detector(src, model, policy, [&](const DetectionVerdict& v) {
    labels.push_back(test.processes.at(v.pid).malicious() ? 1 : 0);
    predicted.push_back(v.label);
  });
  if (summary.failed) throw Error("replay failed: " + summary.error);
  ReplayScore out{metrics_from(labels, predicted), std::nullopt, summary};
  std::vector<int> latencies;
  for (const auto& [pid, ps] : summary.pids)
    if (test.processes.at(pid).malicious() && ps.latency_windows)
      latencies.push_back(*ps.latency_windows);
  if (!latencies.empty()) {
    std::sort(latencies.begin(), latencies.end());
    const std::size_t n = latencies.size();
    out.median_latency_windows =
        n % 2 ? latencies[n / 2] : 0.5 * (latencies[n / 2 - 1] + latencies[n / 2]);
  }
  return out;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult result;
  result.table.attack = spec.attack;
  for (Load load : spec.loads) {
    const auto [train_seed, test_seed] = trace_seeds(spec.seed, spec.attack, load);
    result.trace_seeds[load] = {train_seed, test_seed};
    const Trace train = generate_trace(
        sim_config_for(spec.attack, load, spec.windows, spec.n_benign, train_seed));
    const Trace test = generate_trace(
        sim_config_for(spec.attack, load, spec.windows, spec.n_benign, test_seed));
    const TraceDataset ds = build_dataset(train, {train_seed, false});

    for (ModelKind kind : spec.models) {
      const ClassifierModel model = fit(kind, ds, spec.hp, train_seed);
      const ReplayScore rs = score_replay(model, test);
      ResultRow row;
      row.model = kind;
      row.load = load;
      row.accuracy = rs.metrics.accuracy;
      row.fp = rs.metrics.fp_pct;
      row.fn = rs.metrics.fn_pct;
      if (rs.median_latency_windows)
        row.speed_ms = *rs.median_latency_windows * static_cast<double>(test.window_ms);
      if (spec.measure_timing) row.overhead = measure_overhead(model, test, 1).overhead_pct;
      result.table.rows.push_back(row);

      if (spec.k >= 2) {
        const auto cv = cross_validate(kind, ds, spec.k, train_seed, spec.hp);
        result.cross_validation.push_back(
            {kind, load, spec.k, cv.mean_accuracy, cv.stddev_accuracy});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { text, markdown, csv };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
  if (s == "text" || s == "txt") return ReportFormat::text;
  if (s == "md" || s == "markdown") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  return std::nullopt;
}

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {"Model", "Loads", "Accuracy", "Speed",
                                                "FP",    "FN",    "Overhead"};
  return cols;
}

inline std::string speed_note() {
  return "Speed is the median first-alert latency of attack processes under the first-hit "
         "policy, not the sampling period.";
}

namespace detail {

inline std::vector<std::string> display_cells(const ResultRow& r) {
  return {std::string(to_string(r.model)),
          std::string(to_string(r.load)),
          format_fixed(r.accuracy, 2),
          r.speed_ms ? format_fixed(*r.speed_ms, 0) : "-",
          format_fixed(r.fp, 2),
          format_fixed(r.fn, 2),
          r.overhead ? format_fixed(*r.overhead, 4) : "-"};
}

inline std::string opt_csv(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::string render_report(const ResultTable& t, ReportFormat fmt) {
  std::ostringstream os;
  const auto& cols = report_columns();
  switch (fmt) {
    case ReportFormat::csv: {
      os << "# attack=" << to_string(t.attack) << '\n';
      for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
      os << '\n';
      for (const auto& r : t.rows)
        os << to_string(r.model) << ',' << to_string(r.load) << ',' << format_double(r.accuracy)
           << ',' << detail::opt_csv(r.speed_ms) << ',' << format_double(r.fp) << ','
           << format_double(r.fn) << ',' << detail::opt_csv(r.overhead) << '\n';
      break;
    }
    case ReportFormat::markdown: {
      os << "### Detection results: " << to_string(t.attack) << "\n\n";
      os << "| Model | Loads | Accuracy (%) | Speed (ms) | FP (%) | FN (%) | Overhead (%) |\n";
      os << "|---|---|---:|---:|---:|---:|---:|\n";
      for (const auto& r : t.rows) {
        os << '|';
        for (const auto& c : detail::display_cells(r)) os << ' ' << c << " |";
        os << '\n';
      }
      os << '\n' << speed_note() << '\n';
      break;
    }
    case ReportFormat::text: {
      const std::vector<std::string> units = {"", "", "(%)", "ms", "(%)", "(%)", "(%)"};
      std::vector<std::vector<std::string>> lines = {cols, units};
      for (const auto& r : t.rows) lines.push_back(detail::display_cells(r));
      std::vector<std::size_t> width(cols.size(), 0);
      for (const auto& l : lines)
        for (std::size_t i = 0; i < l.size(); ++i) width[i] = std::max(width[i], l[i].size());
      os << "Detection results: " << to_string(t.attack) << '\n';
      for (const auto& l : lines) {
        for (std::size_t i = 0; i < l.size(); ++i)
          os << (i ? "  " : "") << std::setw(static_cast<int>(width[i]))
             << (i < 2 ? std::left : std::right) << l[i];
        os << '\n';
      }
      os << speed_note() << '\n';
      break;
    }
  }
  return os.str();
}

inline ResultTable parse_csv_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  ResultTable t;
  bool header_seen = false, attack_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# attack=", 0) == 0) {
      auto a = parse_category(line.substr(9));
      if (!a) throw DecodeError("report csv: unknown attack");
      t.attack = *a;
      attack_seen = true;
      continue;
    }
    const auto cells = detail::split(line, ',');
    if (!header_seen) {
      if (cells != report_columns()) throw DecodeError("report csv: unexpected header");
      header_seen = true;
      continue;
    }
    if (cells.size() != 7) throw DecodeError("report csv: expected 7 cells");
    ResultRow r;
    auto model = parse_model_kind(cells[0]);
    auto load = parse_load(cells[1]);
    if (!model || !load) throw DecodeError("report csv: bad model or load");
    r.model = *model;
    r.load = *load;
    r.accuracy = parse_double(cells[2]);
    if (!cells[3].empty()) r.speed_ms = parse_double(cells[3]);
    r.fp = parse_double(cells[4]);
    r.fn = parse_double(cells[5]);
    if (!cells[6].empty()) r.overhead = parse_double(cells[6]);
    t.rows.push_back(r);
  }
  if (!header_seen || !attack_seen) throw DecodeError("report csv: missing header");
  return t;
}

inline std::string render_cross_validation(const std::vector<CvRow>& rows) {
  std::ostringstream os;
  if (rows.empty()) return {};
  os << "Cross-validation on training data (k=" << rows.front().k << ")\n";
  for (const auto& r : rows)
    os << "  " << std::left << std::setw(4) << to_string(r.model) << ' ' << to_string(r.load)
       << "  mean " << format_fixed(r.mean_accuracy, 2) << " %  sd "
       << format_fixed(r.stddev_accuracy, 2) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Published reference values

struct ReferenceCell {
  double accuracy, fp, fn;
};

struct ReferenceModel {
  ReferenceCell nl, al, fl;
  double overhead;
};

// Accuracy / FP / FN (%) per load and overhead (%) per model, as published for
// real hardware.
inline const std::map<std::pair<Category, ModelKind>, ReferenceModel>& reference_models() {
  static const std::map<std::pair<Category, ModelKind>, ReferenceModel> table = {
      {{Category::spectre_v1, ModelKind::LDA}, {{99.93, 0.07, 0}, {99.06, 0.57, 0.37}, {98.03, 1.18, 0.79}, 1.67}},
      {{Category::spectre_v1, ModelKind::LR}, {{99.97, 0.03, 0}, {98.40, 1.27, 0.33}, {97.36, 1.98, 0.66}, 1.83}},
      {{Category::spectre_v1, ModelKind::SVM}, {{99.25, 0.69, 0.06}, {97.29, 2.02, 0.69}, {95.87, 2.87, 1.26}, 1.89}},
      {{Category::spectre_v1, ModelKind::CNN}, {{99.80, 0.17, 0.03}, {98.13, 0.57, 0.29}, {97.43, 1.56, 1.01}, 3.51}},
      {{Category::spectre_v2, ModelKind::LDA}, {{99.92, 0.08, 0}, {98.13, 1.14, 0.73}, {98.23, 1.00, 0.77}, 1.89}},
      {{Category::spectre_v2, ModelKind::LR}, {{99.98, 0.02, 0}, {98.69, 1.04, 0.27}, {98.13, 1.41, 0.46}, 1.67}},
      {{Category::spectre_v2, ModelKind::SVM}, {{99.38, 0.57, 0.05}, {98.29, 1.28, 0.43}, {96.67, 2.30, 1.03}, 1.83}},
      {{Category::spectre_v2, ModelKind::CNN}, {{99.43, 0.48, 0.09}, {99.17, 0.55, 0.28}, {98.69, 0.79, 0.52}, 3.51}},
      {{Category::meltdown, ModelKind::LDA}, {{99.95, 0.05, 0}, {99.83, 0.13, 0.04}, {98.27, 1.24, 0.49}, 1.79}},
      {{Category::meltdown, ModelKind::LR}, {{99.35, 0.65, 0}, {97.39, 1.98, 0.63}, {94.67, 3.43, 1.90}, 1.83}},
      {{Category::meltdown, ModelKind::SVM}, {{99.97, 0.03, 0}, {99.17, 0.67, 0.16}, {98.24, 1.39, 0.37}, 1.91}},
      {{Category::meltdown, ModelKind::CNN}, {{99.43, 0.48, 0.09}, {98.17, 0.55, 0.28}, {98.69, 0.79, 0.52}, 3.67}},
  };
  return table;
}

inline std::optional<ReferenceCell> published_reference(Category attack, ModelKind model, Load load) {
  const auto& table = reference_models();
  auto it = table.find({attack, model});
  if (it == table.end()) return std::nullopt;
  switch (load) {
    case Load::NL: return it->second.nl;
    case Load::AL: return it->second.al;
    case Load::FL: return it->second.fl;
  }
  return std::nullopt;
}

// Overhead is reported once per model, the same for every load.
inline std::optional<double> published_overhead(Category attack, ModelKind model) {
  const auto& table = reference_models();
  auto it = table.find({attack, model});
  if (it == table.end()) return std::nullopt;
  return it->second.overhead;
}

// The published grid for `attack`, with overhead filled per model and speed at
// its constant 100 ms.
inline ResultTable published_table(Category attack) {
  ResultTable t{attack, {}};
  for (ModelKind m : kAllModels)
    for (Load l : kAllLoads)
      if (auto ref = published_reference(attack, m, l))
        t.rows.push_back({m, l, ref->accuracy, 100.0, ref->fp, ref->fn, published_overhead(attack, m)});
  return t;
}

struct Deviation {
  ModelKind model;
  Load load;
  std::string metric;  // Accuracy | FP | FN
  double ours = 0;
  double reference = 0;
  double delta = 0;  // ours - reference
  bool within_tolerance = true;
};

struct DeviationReport {
  std::vector<Deviation> cells;
  std::vector<std::string> absent;  // "<model>/<load>" cells missing from the table

  std::size_t flagged() const {
    return static_cast<std::size_t>(std::count_if(
        cells.begin(), cells.end(), [](const Deviation& d) { return !d.within_tolerance; }));
  }
  std::size_t nonzero() const {
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const Deviation& d) { return d.delta != 0; }));
  }
};

struct ToleranceBands {
  double accuracy = 2.0;
  double fp = 2.0;
  double fn = 1.0;
};

inline DeviationReport compare_to_published(const ResultTable& table, Category attack,
                                        const ToleranceBands& bands = {}) {
  DeviationReport rep;
  for (ModelKind m : kAllModels)
    for (Load l : kAllLoads) {
      const auto ref = published_reference(attack, m, l);
      if (!ref) continue;
      const ResultRow* row = table.find(m, l);
      if (!row) {
        rep.absent.push_back(std::string(to_string(m)) + "/" + std::string(to_string(l)));
        continue;
      }
      auto add = [&](const char* metric, double ours, double theirs, double band) {
        const double delta = ours - theirs;
        rep.cells.push_back({m, l, metric, ours, theirs, delta, std::abs(delta) <= band + 1e-9});
      };
      add("Accuracy", row->accuracy, ref->accuracy, bands.accuracy);
      add("FP", row->fp, ref->fp, bands.fp);
      add("FN", row->fn, ref->fn, bands.fn);
    }
  return rep;
}

inline std::string render_deviations(const DeviationReport& rep) {
  std::ostringstream os;
  os << "Deviation from published values (informational; synthetic data)\n";
  for (const auto& d : rep.cells)
    os << "  " << std::left << std::setw(4) << to_string(d.model) << ' ' << to_string(d.load)
       << ' ' << std::setw(9) << d.metric << std::right << " ours " << std::setw(6)
       << format_fixed(d.ours, 2) << "  published " << std::setw(6) << format_fixed(d.reference, 2)
       << "  delta " << std::setw(6) << format_fixed(d.delta, 2)
       << (d.within_tolerance ? "" : "  OUTSIDE BAND") << '\n';
  for (const auto& a : rep.absent) os << "  absent: " << a << '\n';
  return os.str();
}

}  // namespace hpcs
