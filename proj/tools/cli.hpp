#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hpc_sentinel/app_config.hpp"
#include "hpc_sentinel/collector.hpp"
#include "hpc_sentinel/detector.hpp"
#include "hpc_sentinel/eval.hpp"
#include "hpc_sentinel/features.hpp"
#include "hpc_sentinel/log.hpp"
#include "hpc_sentinel/models.hpp"
#include "hpc_sentinel/simgen.hpp"
#include "hpc_sentinel/trace_io.hpp"

namespace hpcs::cli {

enum ExitCode { kOk = 0, kUsage = 1, kAlerts = 2, kRuntime = 3 };

// Edit distance, for "did you mean" hints.
inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::optional<std::string> closest(std::string_view word,
                                          const std::vector<std::string>& candidates) {
  std::optional<std::string> best;
  std::size_t best_d = std::max<std::size_t>(2, word.size() / 2) + 1;
  for (const auto& c : candidates) {
    const std::size_t d = edit_distance(word, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// One subcommand: CLI11 options mirrored into a layered AppConfig.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : app_(parent.add_subcommand(name, description)), cfg_(name) {}

  void option(const std::string& key, const std::string& def, const std::string& help) {
    cfg_.declare(key, def, help);
    auto* opt = app_->add_option("--" + key, values_[key],
                                 help + (def.empty() ? "" : " [default: " + def + "]"));
    opts_.emplace_back(key, opt);
  }

  void flag(const std::string& key, const std::string& help) {
    cfg_.declare(key, "false", help);
    auto* opt = app_->add_flag("--" + key, flags_[key], help);
    opts_.emplace_back(key, opt);
  }

  // Layers file < env < flags over the declared defaults.
  void resolve(const std::string& config_path, const AppConfig::Getenv& getenv) {
    if (!config_path.empty()) cfg_.load_file(config_path);
    cfg_.load_env(getenv);
    for (const auto& [key, opt] : opts_) {
      if (opt->count() == 0) continue;
      if (flags_.count(key))
        cfg_.set_flag(key, flags_.at(key) ? "true" : "false");
      else
        cfg_.set_flag(key, values_.at(key));
    }
  }

  CLI::App* app() const { return app_; }
  const AppConfig& config() const { return cfg_; }
  std::vector<std::string> long_names() const {
    std::vector<std::string> out;
    for (const auto& [key, _] : opts_) out.push_back("--" + key);
    return out;
  }

 private:
  CLI::App* app_;
  AppConfig cfg_;
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> flags_;
  std::vector<std::pair<std::string, CLI::Option*>> opts_;
};

// Writes to `out` for "-", otherwise to a file.
inline void write_output(const std::string& path, std::ostream& out,
                         const std::function<void(std::ostream&)>& fn) {
  if (path == "-" || path.empty()) {
    fn(out);
    out.flush();
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  fn(os);
  if (!os) throw Error("write failed: " + path);
}

inline Category attack_from(const AppConfig& c) {
  const auto profile = parse_profile(c.get("profile"));
  if (!profile) throw ConfigError("profile", "expected spectre or meltdown, got '" + c.get("profile") + "'");
  if (*profile == Profile::meltdown) return Category::meltdown;
  const auto& v = c.get("variant");
  if (v == "v1" || v == "1") return Category::spectre_v1;
  if (v == "v2" || v == "2") return Category::spectre_v2;
  throw ConfigError("variant", "expected v1 or v2, got '" + v + "'");
}

inline Load load_from(const AppConfig& c) {
  const auto l = parse_load(c.get("load"));
  if (!l) throw ConfigError("load", "expected nl, al or fl, got '" + c.get("load") + "'");
  return *l;
}

inline int int_in(const AppConfig& c, const std::string& key, long long lo, long long hi) {
  const long long v = c.get_int(key);
  if (v < lo || v > hi)
    throw ConfigError(key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int>(v);
}

// Shared by simulate and detect --sim. `windows` counts windows per process.
inline SimConfig sim_from(const AppConfig& c) {
  SimConfig cfg;
  cfg.attack = attack_from(c);
  cfg.profile = profile_of(cfg.attack);
  cfg.load = load_condition(load_from(c));
  cfg.n_benign = int_in(c, "benign", 0, 10000);
  cfg.n_attack = int_in(c, "attackers", 0, 10000);
  cfg.duration_windows = int_in(c, "windows", 1, 100000000) + 1;
  cfg.window_ms = int_in(c, "window-ms", 1, 3600000);
  cfg.seed = c.get_u64("seed");
  cfg.counter_noise = c.get_double("noise");
  cfg.validate();
  return cfg;
}

inline void declare_sim_options(Command& cmd) {
  cmd.option("profile", "spectre", "attack profile: spectre|meltdown");
  cmd.option("variant", "v1", "spectre variant: v1|v2 (ignored for meltdown)");
  cmd.option("load", "nl", "background load: nl|al|fl");
  cmd.option("benign", "3", "benign processes before load scaling");
  cmd.option("attackers", "1", "attack processes");
  cmd.option("windows", "100", "windows per process");
  cmd.option("window-ms", "100", "sampling period in ms");
  cmd.option("seed", "1", "random seed");
  cmd.option("noise", "0.03", "multiplicative counter noise bound");
}

inline int cmd_simulate(const AppConfig& c, std::ostream& out, std::ostream&) {
  const Trace trace = generate_trace(sim_from(c));
  write_output(c.get("out"), out, [&](std::ostream& os) { write_trace(os, trace); });
  return kOk;
}

inline int cmd_features(const AppConfig& c, std::ostream& out, std::ostream& err) {
  const auto paths = split_list(c.get("in"));
  if (paths.empty()) throw ConfigError("in", "at least one trace file required");
  std::vector<Trace> traces;
  for (const auto& p : paths) traces.push_back(load_trace(p));
  const TraceDataset ds = build_dataset(traces, {c.get_u64("seed"), c.get_bool("rebalance")});
  write_output(c.get("out"), out, [&](std::ostream& os) { write_dataset(os, ds); });
  err << "features: " << ds.size() << " windows (" << ds.count_label(1) << " malicious)\n";
  return kOk;
}

inline Hyperparams hyperparams_from(const AppConfig& c) {
  Hyperparams hp;
  hp.epochs = int_in(c, "epochs", 1, 1000000);
  hp.learning_rate = c.get_double("lr");
  hp.svm_lambda = c.get_double("svm-lambda");
  hp.cnn_epochs = int_in(c, "cnn-epochs", 1, 1000000);
  hp.cnn_window = int_in(c, "cnn-window", 1, 1024);
  hp.cnn_learning_rate = c.get_double("cnn-lr");
  hp.threshold = c.get_double("threshold");
  if (!(hp.learning_rate > 0)) throw ConfigError("lr", "must be > 0");
  if (!(hp.cnn_learning_rate > 0)) throw ConfigError("cnn-lr", "must be > 0");
  if (!(hp.svm_lambda >= 0)) throw ConfigError("svm-lambda", "must be >= 0");
  if (!(hp.threshold > 0 && hp.threshold < 1)) throw ConfigError("threshold", "must be in (0, 1)");
  return hp;
}

inline int cmd_train(const AppConfig& c, std::ostream& out, std::ostream& err) {
  const auto kind = parse_model_kind(c.get("model"));
  if (!kind) throw ConfigError("model", "expected lda|lr|svm|cnn, got '" + c.get("model") + "'");
  if (c.get("data").empty()) throw ConfigError("data", "dataset path required");
  const Hyperparams hp = hyperparams_from(c);
  const TraceDataset ds = load_dataset(c.get("data"));
  const std::uint64_t seed = c.get_u64("seed");
  const int k = int_in(c, "kfold", 0, 1000);
  if (k == 1) throw ConfigError("kfold", "must be 0 (skip) or >= 2");
  if (k >= 2) {
    const auto cv = cross_validate(*kind, ds, k, seed, hp);
    err << "cross-validation k=" << k << ": mean accuracy " << format_fixed(cv.mean_accuracy, 2)
        << " %, sd " << format_fixed(cv.stddev_accuracy, 2) << '\n';
  }
  const ClassifierModel model = fit(*kind, ds, hp, seed);
  for (const auto& w : model.report.warnings) warn(w);
  write_output(c.get("out"), out, [&](std::ostream& os) { os << encode_model(model); });
  return kOk;
}

inline int cmd_detect(const AppConfig& c, std::ostream& out, std::ostream& err) {
  if (c.get("model").empty()) throw ConfigError("model", "model path required");
  DetectorConfig dc;
  dc.model_path = c.get("model");
  const bool replay = !c.get("replay").empty(), sim = c.get_bool("sim"), os = c.get_bool("os");
  if (replay + sim + os != 1) throw ConfigError("source", "choose exactly one of --replay, --sim, --os");

  const auto& g = c.get("granularity");
  if (g == "coarse") dc.granularity = Granularity::coarse;
  else if (g == "fine") dc.granularity = Granularity::fine;
  else throw ConfigError("granularity", "expected coarse or fine, got '" + g + "'");
  dc.window_ms = int_in(c, "window-ms", 1, 3600000);

  const auto& policy = c.get("policy");
  if (policy == "first-hit") dc.policy = AlertPolicy::first_hit();
  else if (policy == "m-of-n") dc.policy = AlertPolicy::m_of_n(int_in(c, "m", 1, 1000), int_in(c, "n", 1, 1000));
  else throw ConfigError("policy", "expected first-hit or m-of-n, got '" + policy + "'");

  if (replay) {
    dc.source.kind = SourceSpec::Kind::replay;
    dc.source.trace_path = c.get("replay");
    const auto& sp = c.get("speed");
    if (sp == "instant") {
      dc.source.speed = ReplaySpeed::instant();
    } else {
      double m = 0;
      try {
        m = parse_double(sp);
      } catch (const DecodeError&) {
        throw ConfigError("speed", "expected 'instant' or a multiplier, got '" + sp + "'");
      }
      if (!(m > 0)) throw ConfigError("speed", "multiplier must be > 0");
      dc.source.speed = ReplaySpeed{m};
    }
  } else if (sim) {
    dc.source.kind = SourceSpec::Kind::sim;
    dc.source.sim = sim_from(c);
  } else {
    dc.source.kind = SourceSpec::Kind::os;
    for (const auto& p : split_list(c.get("pids"))) {
      try {
        dc.source.pids.insert(std::stoll(p));
      } catch (const std::exception&) {
        throw ConfigError("pids", "not a pid: '" + p + "'");
      }
    }
  }

  const std::string verdicts = c.get("verdicts");
  std::unique_ptr<std::ofstream> file;
  std::ostream* sink_os = nullptr;
  if (verdicts == "-") {
    sink_os = &out;
  } else if (verdicts != "none") {
    file = std::make_unique<std::ofstream>(verdicts, std::ios::binary);
    if (!*file) throw Error("cannot write " + verdicts);
    sink_os = file.get();
  }
  VerdictSink sink;
  if (sink_os) sink = [&](const DetectionVerdict& v) { *sink_os << encode_verdict(v) << '\n'; };

  const DetectionSummary s = run_detector(dc, sink);
  if (sink_os) sink_os->flush();
  if (!c.get("summary").empty())
    write_output(c.get("summary"), out, [&](std::ostream& os) { os << encode_summary(s); });

  err << "detect: " << s.pids.size() << " processes, " << s.verdicts << " windows, "
      << s.alerts() << " alerts, overhead " << format_fixed(s.overhead_pct(), 4) << " %\n";
  if (s.failed) {
    err << "error: source failed: " << s.error << '\n';
    return kRuntime;
  }
  return s.alerts() > 0 ? kAlerts : kOk;
}

inline int cmd_bench(const AppConfig& c, std::ostream& out, std::ostream& err) {
  ExperimentSpec spec;
  const auto attack = parse_attack(c.get("attack"));
  if (!attack)
    throw ConfigError("attack", "expected spectre-v1|spectre-v2|meltdown, got '" + c.get("attack") + "'");
  spec.attack = *attack;

  if (c.get("models") != "all") {
    spec.models.clear();
    for (const auto& m : split_list(c.get("models"))) {
      const auto k = parse_model_kind(m);
      if (!k) throw ConfigError("models", "unknown model '" + m + "'");
      spec.models.push_back(*k);
    }
  }
  if (c.get("loads") != "all") {
    spec.loads.clear();
    for (const auto& l : split_list(c.get("loads"))) {
      const auto ld = parse_load(l);
      if (!ld) throw ConfigError("loads", "unknown load '" + l + "'");
      spec.loads.push_back(*ld);
    }
  }
  spec.windows = c.get_bool("full-scale") ? 100000 : int_in(c, "windows", 8, 100000000);
  spec.seed = c.get_u64("seed");
  spec.k = int_in(c, "kfold", 0, 1000);
  spec.measure_timing = !c.get_bool("no-timing");
  const auto fmt = parse_report_format(c.get("format"));
  if (!fmt) throw ConfigError("format", "expected md, text or csv, got '" + c.get("format") + "'");

  const ExperimentResult r = run_experiment(spec);
  std::string extra = render_cross_validation(r.cross_validation);
  if (c.get_bool("compare")) extra += render_deviations(compare_to_published(r.table, spec.attack));
  write_output(c.get("out"), out, [&](std::ostream& os) {
    os << render_report(r.table, *fmt);
    if (*fmt != ReportFormat::csv && !extra.empty()) os << '\n' << extra;
  });
  if (*fmt == ReportFormat::csv && !extra.empty()) err << extra;
  return kOk;
}

// Runs the tool. `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                   const AppConfig::Getenv& getenv = [](const char* n) { return std::getenv(n); }) {
  CLI::App app{"hpc-sentinel: detect cache side-channel attacks from per-process counters",
               "hpc-sentinel"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_flag("--print-config", print_config, "print effective settings and their sources, then exit");

  std::vector<std::unique_ptr<Command>> cmds;
  std::map<std::string, std::function<int(const AppConfig&, std::ostream&, std::ostream&)>> run;

  auto& sim = *cmds.emplace_back(std::make_unique<Command>(app, "simulate", "generate a labelled counter trace"));
  declare_sim_options(sim);
  sim.option("out", "-", "output trace (JSONL), - for stdout");
  run["simulate"] = cmd_simulate;

  auto& feat = *cmds.emplace_back(std::make_unique<Command>(app, "features", "turn traces into a labelled dataset"));
  feat.option("in", "", "input trace file(s), comma separated");
  feat.option("out", "-", "output dataset (JSONL), - for stdout");
  feat.option("seed", "0", "shuffle seed");
  feat.flag("rebalance", "undersample the majority class");
  run["features"] = cmd_features;

  auto& train = *cmds.emplace_back(std::make_unique<Command>(app, "train", "fit a classifier on a dataset"));
  train.option("model", "lda", "lda|lr|svm|cnn");
  train.option("data", "", "dataset file (JSONL)");
  train.option("out", "-", "output model (JSON), - for stdout");
  train.option("seed", "0", "initialisation and shuffle seed");
  train.option("epochs", "500", "LR/SVM epochs");
  train.option("lr", "0.1", "LR/SVM learning rate");
  train.option("svm-lambda", "0.001", "SVM L2 penalty");
  train.option("cnn-epochs", "50", "CNN epochs");
  train.option("cnn-window", "8", "CNN stacked windows");
  train.option("cnn-lr", "0.01", "CNN learning rate");
  train.option("threshold", "0.5", "decision threshold on the score");
  train.option("kfold", "0", "report k-fold cross-validation first (0 skips)");
  run["train"] = cmd_train;

  auto& det = *cmds.emplace_back(std::make_unique<Command>(app, "detect", "stream verdicts from a counter source"));
  det.option("model", "", "model file (JSON)");
  det.option("replay", "", "replay a trace file");
  det.flag("sim", "run a live simulated source");
  det.flag("os", "sample live processes through the OS");
  det.option("pids", "", "pids for --os, comma separated");
  det.option("speed", "instant", "replay speed: instant or a multiplier");
  declare_sim_options(det);
  det.option("granularity", "coarse", "coarse (100 ms) or fine");
  det.option("policy", "m-of-n", "alert policy: first-hit|m-of-n");
  det.option("m", "3", "m for m-of-n");
  det.option("n", "5", "n for m-of-n");
  det.option("verdicts", "-", "verdict JSONL destination, - for stdout, none to drop");
  det.option("summary", "", "write summary JSON here");
  run["detect"] = cmd_detect;

  auto& bench = *cmds.emplace_back(std::make_unique<Command>(app, "bench", "reproduce the detection tables on simulated data"));
  bench.option("attack", "spectre-v1", "spectre-v1|spectre-v2|meltdown");
  bench.option("models", "all", "all or a list of lda,lr,svm,cnn");
  bench.option("loads", "all", "all or a list of nl,al,fl");
  bench.option("windows", "10000", "windows per trace");
  bench.flag("full-scale", "use 100000 windows per trace");
  bench.option("seed", "1", "experiment seed");
  bench.option("format", "md", "md|text|csv");
  bench.option("kfold", "0", "k-fold cross-validation on training data (0 skips)");
  bench.flag("no-timing", "skip overhead timing so output is fully deterministic");
  bench.flag("compare", "append deviations from the published values");
  bench.option("out", "-", "report destination, - for stdout");
  run["bench"] = cmd_bench;

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    Command* chosen = nullptr;
    for (auto& c : cmds)
      if (c->app()->parsed()) chosen = c.get();
    out << (chosen ? chosen->app()->help() : app.help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    std::vector<std::string> known = {"--config", "--print-config", "--help"};
    std::vector<std::string> names;
    Command* chosen = nullptr;
    for (auto& c : cmds) {
      names.push_back(c->app()->get_name());
      if (c->app()->parsed()) chosen = c.get();
    }
    if (chosen)
      for (const auto& n : chosen->long_names()) known.push_back(n);
    for (const auto& a : args) {
      if (a.rfind("--", 0) == 0) {
        const std::string name = a.substr(0, a.find('='));
        if (std::find(known.begin(), known.end(), name) != known.end()) continue;
        if (auto s = closest(name, known)) err << "unknown option " << name << "; did you mean " << *s << "?\n";
      } else if (!chosen && std::find(names.begin(), names.end(), a) == names.end()) {
        if (auto s = closest(a, names)) err << "unknown subcommand " << a << "; did you mean " << *s << "?\n";
        break;
      }
    }
    err << "run with --help for usage\n";
    return kUsage;
  }

  Command* chosen = nullptr;
  for (auto& c : cmds)
    if (c->app()->parsed()) chosen = c.get();
  const std::string name = chosen->app()->get_name();

  const WarningSink previous = set_warning_sink([&err](const std::string& m) { err << "warning: " << m << '\n'; });
  struct Restore {
    WarningSink s;
    ~Restore() { set_warning_sink(std::move(s)); }
  } restore{previous};

  try {
    chosen->resolve(config_path, getenv);
    if (print_config) {
      out << chosen->config().print();
      return kOk;
    }
    return run.at(name)(chosen->config(), out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace hpcs::cli
