// tan: generate data, train, evaluate, sample, score anomalies and run the
// ablation grid.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tan/tan.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tanflow;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Bad arguments or inputs, detected before any training work starts.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::mutex log_mutex;
bool quiet = false;

template <class... Parts>
void log(const Parts&... parts) {
  if (quiet) return;
  std::lock_guard lock(log_mutex);
  (std::cerr << ... << parts) << '\n';
}

struct Globals {
  std::string output_root = ".";
  std::size_t workers = 1;
};

fs::path under_root(const Globals& g, const std::string& out) {
  const fs::path p(out);
  return p.is_absolute() ? p : fs::path(g.output_root) / p;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
    if (!f) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Runs the preparation step; anything it throws is a usage error.
template <class F>
auto prepare(F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const FormatError&) {
    throw;  // damaged input is a runtime failure
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------- options

struct ModelFlags {
  std::string preset = "None";
  std::string conditional = "SingleInd";
  std::uint64_t seed = 0;
  TransformOptions transform;
  ConditionalOptions cond;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f, bool names) {
  if (names) {
    cmd->add_option("--preset", f.preset, "Transformation preset, e.g. \"L RNN+4xAdd+Re\"")->capture_default_str();
    cmd->add_option("--conditional", f.conditional, "LAM, RAM, TIED, MultiInd or SingleInd")->capture_default_str();
  }
  cmd->add_option("--model-seed", f.seed, "Initialization seed")->capture_default_str();
  cmd->add_option("--components", f.cond.components, "Mixture components per dimension")->capture_default_str();
  cmd->add_option("--hidden", f.cond.hidden, "Conditional hidden-state width")->capture_default_str();
  cmd->add_option("--head-hidden", f.cond.head_hidden, "Mixture head hidden units")->capture_default_str();
  cmd->add_option("--ram-units", f.cond.ram_units, "RAM recurrent state width")->capture_default_str();
  cmd->add_option("--leak", f.transform.leak, "Leaky unit slope")->capture_default_str();
  cmd->add_option("--rnn-hidden", f.transform.rnn_hidden, "Recurrent transform state width")->capture_default_str();
  cmd->add_option("--coupling-hidden", f.transform.coupling_hidden, "Coupling network hidden units")
      ->capture_default_str();
  cmd->add_option("--shift-hidden", f.transform.shift_hidden, "Recurrent shift hidden units")->capture_default_str();
  cmd->add_option("--shift-state", f.transform.shift_state, "Recurrent shift state width")->capture_default_str();
  cmd->add_option("--init-noise", f.transform.init_noise, "Initialization noise scale")->capture_default_str();
}

struct TrainFlags {
  TrainConfig cfg;
  std::string decay = "auto";
  std::string profile = "standard";
  CLI::Option* iterations = nullptr;
  CLI::Option* batch = nullptr;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  f.iterations = cmd->add_option("--iterations", f.cfg.iterations, "Optimizer steps")->capture_default_str();
  f.batch = cmd->add_option("--batch-size", f.cfg.batch_size, "Minibatch size")->capture_default_str();
  cmd->add_option("--lr", f.cfg.learning_rate, "Initial learning rate")->capture_default_str();
  cmd->add_option("--decay", f.decay, "Learning-rate decay factor, or auto to pick 0.1 or 0.5 on validation")
      ->capture_default_str();
  cmd->add_option("--decay-period", f.cfg.decay_period, "Steps between decays")->capture_default_str();
  cmd->add_option("--clip", f.cfg.clip_norm, "Global gradient-norm bound")->capture_default_str();
  cmd->add_option("--validation-period", f.cfg.validation_period, "Steps between validations")
      ->capture_default_str();
  cmd->add_option("--seed", f.cfg.seed, "Minibatch seed")->capture_default_str();
  cmd->add_option("--profile", f.profile, "standard, or large for big datasets")
      ->check(CLI::IsMember({"standard", "large"}))
      ->capture_default_str();
}

/// Resolves the profile and the decay choice into concrete configs.
std::vector<double> resolve_train(TrainFlags& f) {
  if (f.profile == "large") {
    const TrainConfig big = large_data_profile();
    if (f.iterations->count() == 0) f.cfg.iterations = big.iterations;
    if (f.batch->count() == 0) f.cfg.batch_size = big.batch_size;
  }
  std::vector<double> decays;
  if (f.decay == "auto") {
    decays = {0.1, 0.5};
  } else {
    decays = {parse_real(f.decay, "--decay")};
  }
  for (double d : decays) {
    TrainConfig c = f.cfg;
    c.decay = d;
    c.validate();
  }
  return decays;
}

ModelConfig model_config(const ModelFlags& f, std::size_t dim) {
  ModelConfig mc;
  mc.preset = f.preset;
  mc.conditional = canonical_conditional(f.conditional);
  mc.dim = dim;
  mc.seed = f.seed;
  mc.transform = f.transform;
  mc.cond = f.cond;
  return mc;
}

json to_json(const ModelConfig& mc) {
  json j;
  for (const auto& [k, v] : config_fields(mc)) j[k] = v;
  return j;
}

json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},     {"batch_size", c.batch_size},     {"learning_rate", c.learning_rate},
          {"decay", c.decay},               {"decay_period", c.decay_period}, {"clip_norm", c.clip_norm},
          {"validation_period", c.validation_period}, {"seed", c.seed},   {"workers", c.workers}};
}

json to_json(const EvalReport& r) {
  return {{"model", r.model}, {"dataset", r.dataset}, {"mean", r.mean}, {"two_se", r.two_se}, {"n", r.n}};
}

Dataset load_dataset_checked(const std::string& dir) {
  Dataset ds = load_dataset(dir);
  if (ds.train.rows() == 0 || ds.validation.rows() == 0) throw FormatError(dir + ": empty train or validation split");
  return ds;
}

void check_dim(std::size_t model_dim, std::size_t data_dim, const std::string& what) {
  if (model_dim != data_dim) {
    throw UsageError("dimension mismatch: model expects " + std::to_string(model_dim) + " columns but " + what +
                     " has " + std::to_string(data_dim));
  }
}

std::string model_label(const ModelConfig& mc) { return mc.preset + " & " + mc.conditional; }

// ---------------------------------------------------------------- fitting

struct FitOutcome {
  std::optional<TanModel> model;
  TrainResult result;
  TrainConfig config;
  std::vector<std::pair<double, TrainHistory>> runs;  // one per decay tried
};

/// Trains once per decay choice and keeps the run with the lower best
/// validation NLL (the first on ties).
FitOutcome fit(const ModelConfig& mc, const Dataset& ds, TrainConfig cfg, const std::vector<double>& decays,
               const std::string& tag) {
  FitOutcome best;
  for (double d : decays) {
    cfg.decay = d;
    TanModel model(mc);
    log(tag, " decay ", d, ": ", model.parameter_count(), " parameters, ", cfg.iterations, " iterations");
    TrainResult r = train(model, ds.train, ds.validation, cfg, [&](const ValidationRecord& rec) {
      log(tag, " it ", rec.iteration, " train ", rec.train_nll, " valid ", rec.validation_nll, " lr ", rec.lr);
    });
    best.runs.emplace_back(d, r.history);
    if (!best.model || r.best_meta.validation_nll < best.result.best_meta.validation_nll) {
      best.model.emplace(std::move(model));
      best.result = std::move(r);
      best.config = cfg;
    }
  }
  return best;
}

std::string decay_suffix(double d) { return "decay_" + format_real(d); }

/// Writes the checkpoint and histories of a fit into `dir`; returns the
/// artifact map for the manifest.
json write_fit(FitOutcome& fit, const fs::path& dir) {
  json artifacts;
  const fs::path ckpt = dir / "checkpoint.tan";
  save_checkpoint(*fit.model, ckpt, fit.result.best_meta);
  artifacts["checkpoint"] = ckpt.string();
  write_file(dir / "history.csv", history_table(fit.result.history));
  write_file(dir / "loss_curve.csv", loss_curve_table(fit.result.history));
  artifacts["history"] = (dir / "history.csv").string();
  artifacts["loss_curve"] = (dir / "loss_curve.csv").string();
  if (fit.runs.size() > 1) {
    for (const auto& [d, h] : fit.runs) {
      const fs::path p = dir / ("history_" + decay_suffix(d) + ".csv");
      write_file(p, history_table(h));
      artifacts["history_" + decay_suffix(d)] = p.string();
    }
  }
  return artifacts;
}

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  GeneratorSpec spec;
  std::string from;
  PreprocessOptions pre;
  std::string out = "data";
};

int run_generate(GenerateCmd& c, const Globals& g) {
  const fs::path dir = under_root(g, c.out);
  const bool from_file = !c.from.empty();
  Dataset ds = prepare([&] {
    if (!from_file) {
      c.spec.validate();
      return Dataset{};
    }
    c.pre.seed = c.spec.seed;
    return preprocess(load_delimited(c.from), c.pre);
  });
  if (!from_file) ds = generate(c.spec);
  save_dataset(ds, dir);
  std::cout << "wrote " << dir.string() << ": train " << ds.train.rows() << "x" << ds.dim() << ", validation "
            << ds.validation.rows() << "x" << ds.dim() << ", test " << ds.test.rows() << "x" << ds.dim() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainCmd {
  std::string data;
  ModelFlags model;
  TrainFlags train;
  std::string out = "run";
};

std::string quoted(const std::string& v) { return json(v).dump(); }

/// Config file that reproduces a resolved train command.
std::string replay_ini(const TrainCmd& c, const ModelConfig& mc, const TrainConfig& cfg, const fs::path& dir) {
  std::ostringstream s;
  s << "[train]\n"
    << "data=" << quoted(fs::absolute(c.data).lexically_normal().string()) << "\n"
    << "out=" << quoted(fs::absolute(dir).lexically_normal().string()) << "\n"
    << "preset=" << quoted(mc.preset) << "\n"
    << "conditional=" << quoted(mc.conditional) << "\n"
    << "model-seed=" << mc.seed << "\n"
    << "components=" << mc.cond.components << "\n"
    << "hidden=" << mc.cond.hidden << "\n"
    << "head-hidden=" << mc.cond.head_hidden << "\n"
    << "ram-units=" << mc.cond.ram_units << "\n"
    << "leak=" << format_real(mc.transform.leak) << "\n"
    << "rnn-hidden=" << mc.transform.rnn_hidden << "\n"
    << "coupling-hidden=" << mc.transform.coupling_hidden << "\n"
    << "shift-hidden=" << mc.transform.shift_hidden << "\n"
    << "shift-state=" << mc.transform.shift_state << "\n"
    << "init-noise=" << format_real(mc.transform.init_noise) << "\n"
    << "iterations=" << cfg.iterations << "\n"
    << "batch-size=" << cfg.batch_size << "\n"
    << "lr=" << format_real(cfg.learning_rate) << "\n"
    << "decay=" << quoted(c.train.decay) << "\n"
    << "decay-period=" << cfg.decay_period << "\n"
    << "clip=" << format_real(cfg.clip_norm) << "\n"
    << "validation-period=" << cfg.validation_period << "\n"
    << "seed=" << cfg.seed << "\n";
  return s.str();
}

int run_train(TrainCmd& c, const Globals& g) {
  const fs::path dir = under_root(g, c.out);
  struct Prepared {
    Dataset ds;
    ModelConfig mc;
    std::vector<double> decays;
  };
  Prepared p = prepare([&] {
    Prepared r;
    r.decays = resolve_train(c.train);
    parse_preset(c.model.preset);
    r.ds = load_dataset_checked(c.data);
    r.mc = model_config(c.model, r.ds.dim());
    TanModel probe(r.mc);  // surfaces option errors before training
    return r;
  });
  TrainConfig cfg = c.train.cfg;
  cfg.workers = g.workers;

  fs::create_directories(dir);
  json manifest;
  manifest["command"] = "train";
  manifest["status"] = "running";
  manifest["started"] = utc_now();
  manifest["seed"] = {{"model", p.mc.seed}, {"train", cfg.seed}};
  manifest["config"] = {{"data", fs::absolute(c.data).string()},
                        {"model", to_json(p.mc)},
                        {"train", to_json(cfg)},
                        {"decay_choices", p.decays},
                        {"profile", c.train.profile}};
  manifest["replay"] = {{"config_file", (dir / "replay.ini").string()},
                        {"command", "tan --config " + (dir / "replay.ini").string() + " train"}};
  write_file(dir / "replay.ini", replay_ini(c, p.mc, cfg, dir));
  write_json(dir / "manifest.json", manifest);

  FitOutcome f = fit(p.mc, p.ds, cfg, p.decays, "[train]");
  json artifacts = write_fit(f, dir);
  const EvalReport rep = mean_ll_report(*f.model, p.ds.test, model_label(p.mc), fs::path(c.data).filename().string(),
                                        g.workers);
  write_file(dir / "report.csv", std::string(kReportHeader) + "\n" + report_row(rep) + "\n");
  artifacts["report"] = (dir / "report.csv").string();

  const ValidationRecord& best = f.result.history.best_record();
  manifest["status"] = "complete";
  manifest["finished"] = utc_now();
  manifest["artifacts"] = artifacts;
  manifest["results"] = {{"chosen_decay", f.config.decay},
                         {"best_iteration", best.iteration},
                         {"validation_nll", best.validation_nll},
                         {"test", to_json(rep)}};
  write_json(dir / "manifest.json", manifest);
  std::cout << "best validation NLL " << best.validation_nll << " at iteration " << best.iteration << " (decay "
            << f.config.decay << ")\n"
            << report_text(rep) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval / sample / anomaly

struct InputFlags {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string input;
  std::string labels;
};

void add_input_flags(CLI::App* cmd, InputFlags& f) {
  cmd->add_option("--checkpoint", f.checkpoint, "Trained checkpoint")->required();
  cmd->add_option("--data", f.data, "Dataset directory");
  cmd->add_option("--split", f.split, "Split of the dataset directory")
      ->check(CLI::IsMember({"train", "validation", "test"}))
      ->capture_default_str();
  cmd->add_option("--input", f.input, "Delimited matrix to score instead of a dataset split");
}

struct Scored {
  LoadedCheckpoint ck;
  Array x;
  std::vector<int> labels;
  std::string name;
};

Scored load_scored(const InputFlags& f) {
  if (f.data.empty() == f.input.empty()) throw UsageError("give exactly one of --data or --input");
  LoadedCheckpoint ck = load_checkpoint(f.checkpoint);
  Scored s{std::move(ck), Array{}, {}, {}};
  if (!f.input.empty()) {
    s.x = load_delimited(f.input);
    s.name = fs::path(f.input).filename().string();
    if (!f.labels.empty()) s.labels = detail::read_labels(f.labels);
  } else {
    Dataset ds = load_dataset(f.data);
    s.x = f.split == "train" ? ds.train : f.split == "validation" ? ds.validation : ds.test;
    s.labels = f.split == "train" ? ds.train_labels : f.split == "validation" ? ds.validation_labels : ds.test_labels;
    s.name = fs::path(f.data).filename().string();
    if (!f.labels.empty()) s.labels = detail::read_labels(f.labels);
  }
  if (s.x.rows() == 0) throw UsageError(s.name + ": no rows to score");
  check_dim(s.ck.model.dim(), s.x.cols(), s.name);
  if (!s.labels.empty() && s.labels.size() != s.x.rows())
    throw UsageError("label count " + std::to_string(s.labels.size()) + " differs from row count " +
                     std::to_string(s.x.rows()));
  return s;
}

struct EvalCmd {
  InputFlags in;
  std::string out = "eval";
};

int run_eval(EvalCmd& c, const Globals& g) {
  Scored s = prepare([&] { return load_scored(c.in); });
  const fs::path dir = under_root(g, c.out);
  fs::create_directories(dir);
  const EvalReport rep = mean_ll_report(s.ck.model, s.x, model_label(s.ck.model.config()), s.name, g.workers);
  write_file(dir / "report.csv", std::string(kReportHeader) + "\n" + report_row(rep) + "\n");
  std::cout << report_text(rep) << "\n";
  return 0;
}

struct SampleCmd {
  std::string checkpoint;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out = "samples";
};

int run_sample(SampleCmd& c, const Globals& g) {
  LoadedCheckpoint ck = prepare([&] { return load_checkpoint(c.checkpoint); });
  const fs::path dir = under_root(g, c.out);
  fs::create_directories(dir);
  const Array x = c.n == 0 ? Array(Shape{0, ck.model.dim()}) : ck.model.sample(c.n, c.seed);
  export_delimited(x, dir / "samples.csv");
  std::cout << "wrote " << x.rows() << " samples to " << (dir / "samples.csv").string() << "\n";
  return 0;
}

struct AnomalyCmd {
  InputFlags in;
  std::string out = "anomaly";
};

int run_anomaly(AnomalyCmd& c, const Globals& g) {
  Scored s = prepare([&] { return load_scored(c.in); });
  const fs::path dir = under_root(g, c.out);
  fs::create_directories(dir);
  const std::vector<double> scores = anomaly_scores(s.ck.model, s.x, g.workers);
  std::string text;
  for (double v : scores) text += format_real(v) + "\n";
  write_file(dir / "scores.csv", text);
  std::cout << "wrote " << scores.size() << " scores to " << (dir / "scores.csv").string() << "\n";
  if (s.labels.empty()) return 0;
  const double ap = average_precision(scores, s.labels);
  write_file(dir / "average_precision.txt", format_real(ap) + "\n");
  std::cout << "average precision " << ap << "\n";
  return 0;
}

// ---------------------------------------------------------------- grid

struct GridCmd {
  std::vector<std::string> data;
  std::vector<std::string> presets;
  std::vector<std::string> conditionals;
  ModelFlags model;
  TrainFlags train;
  std::string out = "grid";
};

struct Cell {
  std::size_t dataset;
  std::string preset;
  std::string conditional;
  std::string key;
  fs::path dir;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

json read_cell(const Cell& cell) {
  const fs::path m = cell.dir / "manifest.json";
  if (!fs::exists(m)) return {};
  try {
    return json::parse(read_file(m));
  } catch (const std::exception&) {
    return {};
  }
}

void run_cell(const Cell& cell, const Dataset& ds, const std::string& dataset_name, const ModelFlags& mf,
              const TrainConfig& cfg, const std::vector<double>& decays) {
  fs::create_directories(cell.dir);
  ModelFlags flags = mf;
  flags.preset = cell.preset;
  flags.conditional = cell.conditional;
  const ModelConfig mc = model_config(flags, ds.dim());
  json manifest;
  manifest["command"] = "grid-cell";
  manifest["key"] = cell.key;
  manifest["dataset"] = dataset_name;
  manifest["preset"] = cell.preset;
  manifest["conditional"] = mc.conditional;
  manifest["seed"] = {{"model", mc.seed}, {"train", cfg.seed}};
  manifest["config"] = {{"model", to_json(mc)}, {"train", to_json(cfg)}, {"decay_choices", decays}};
  manifest["status"] = "running";
  manifest["started"] = utc_now();
  write_json(cell.dir / "manifest.json", manifest);
  try {
    FitOutcome f = fit(mc, ds, cfg, decays, "[" + dataset_name + " | " + model_label(mc) + "]");
    manifest["artifacts"] = write_fit(f, cell.dir);
    const EvalReport rep = mean_ll_report(*f.model, ds.test, model_label(mc), dataset_name);
    manifest["results"] = {{"chosen_decay", f.config.decay},
                           {"validation_nll", f.result.history.best_record().validation_nll},
                           {"test", to_json(rep)}};
    manifest["status"] = "complete";
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    log("[grid] cell ", dataset_name, " | ", model_label(mc), " failed: ", e.what());
  }
  manifest["finished"] = utc_now();
  write_json(cell.dir / "manifest.json", manifest);
}

std::string table_cell(const json& m) {
  if (m.is_null() || m.value("status", "") != "complete") return "";
  return format_real(m["results"]["test"]["mean"].get<double>());
}

int run_grid(GridCmd& c, const Globals& g) {
  struct Prepared {
    std::vector<Dataset> datasets;
    std::vector<std::string> names;
    std::vector<std::string> conditionals;
    std::vector<double> decays;
  };
  Prepared p = prepare([&] {
    Prepared r;
    if (c.data.empty() || c.presets.empty() || c.conditionals.empty())
      throw UsageError("grid needs at least one dataset, preset and conditional");
    r.decays = resolve_train(c.train);
    for (const auto& preset : c.presets) parse_preset(preset);
    for (const auto& m : c.conditionals) r.conditionals.push_back(canonical_conditional(m));
    for (const auto& d : c.data) {
      r.datasets.push_back(load_dataset_checked(d));
      r.names.push_back(fs::path(d).filename().string());
    }
    return r;
  });
  TrainConfig cfg = c.train.cfg;
  cfg.workers = 1;
  const fs::path dir = under_root(g, c.out);
  fs::create_directories(dir / "cells");

  std::vector<Cell> cells;
  for (std::size_t d = 0; d < c.data.size(); ++d)
    for (const auto& preset : c.presets)
      for (const auto& m : p.conditionals) {
        ModelFlags flags = c.model;
        flags.preset = preset;
        flags.conditional = m;
        const std::string key = fs::absolute(c.data[d]).lexically_normal().string() + "\n" +
                                to_json(model_config(flags, p.datasets[d].dim())).dump() + "\n" + to_text(cfg) +
                                json(p.decays).dump();
        const std::string h = hex64(detail::fnv1a(key));
        cells.push_back({d, preset, m, h, dir / "cells" / h});
      }

  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const json m = read_cell(cells[k]);
    if (!m.is_null() && m.value("status", "") == "complete") continue;
    todo.push_back(k);
  }
  log("[grid] ", cells.size(), " cells, ", cells.size() - todo.size(), " already complete, ", todo.size(), " to run");

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const Cell& cell = cells[todo[k]];
      run_cell(cell, p.datasets[cell.dataset], p.names[cell.dataset], c.model, cfg, p.decays);
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n = std::max<std::size_t>(1, std::min(g.workers, todo.size()));
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
    worker();
  }

  // Aggregate from the manifests on disk.
  GridResults lls;
  std::size_t failed = 0;
  std::vector<std::vector<std::vector<std::string>>> table(
      c.data.size(), std::vector<std::vector<std::string>>(c.presets.size(), std::vector<std::string>(p.conditionals.size())));
  json summary = json::array();
  std::size_t k = 0;
  for (std::size_t d = 0; d < c.data.size(); ++d)
    for (std::size_t t = 0; t < c.presets.size(); ++t)
      for (std::size_t m = 0; m < p.conditionals.size(); ++m, ++k) {
        const json man = read_cell(cells[k]);
        const std::string status = man.is_null() ? "missing" : man.value("status", "missing");
        table[d][t][m] = table_cell(man);
        if (status == "complete") {
          lls[{c.presets[t], p.conditionals[m], p.names[d]}] = man["results"]["test"]["mean"].get<double>();
        } else {
          ++failed;
        }
        summary.push_back({{"dataset", p.names[d]},
                           {"preset", c.presets[t]},
                           {"conditional", p.conditionals[m]},
                           {"key", cells[k].key},
                           {"status", status},
                           {"dir", cells[k].dir.string()}});
      }

  auto header = [&] {
    std::string h = "transformation";
    for (const auto& m : p.conditionals) h += "," + m;
    return h + "\n";
  };
  fs::create_directories(dir / "tables");
  for (std::size_t d = 0; d < c.data.size(); ++d) {
    std::string text = header();
    for (std::size_t t = 0; t < c.presets.size(); ++t) {
      text += c.presets[t];
      for (const auto& v : table[d][t]) text += "," + v;
      text += "\n";
    }
    write_file(dir / "tables" / (p.names[d] + ".csv"), text);
    std::cout << "test log-likelihood on " << p.names[d] << "\n" << text << "\n";
  }
  if (failed == 0) {
    const auto s = grid_score(lls, c.presets, p.conditionals, p.names);
    std::string text = header();
    for (std::size_t t = 0; t < c.presets.size(); ++t) {
      text += c.presets[t];
      for (double v : s[t]) text += "," + format_real(v);
      text += "\n";
    }
    write_file(dir / "tables" / "score.csv", text);
    std::cout << "S(t, m)\n" << text;
  }
  write_json(dir / "grid.json", {{"command", "grid"},
                                 {"finished", utc_now()},
                                 {"datasets", c.data},
                                 {"presets", c.presets},
                                 {"conditionals", p.conditionals},
                                 {"train", to_json(cfg)},
                                 {"decay_choices", p.decays},
                                 {"cells", summary}});
  if (failed > 0) {
    std::cerr << "error: " << failed << " of " << cells.size() << " grid cells did not complete\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Transformation autoregressive networks: density estimation tools"};
  app.set_config("--config", "", "Read options from an INI/TOML file");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--output-root", g.output_root, "Directory that relative --out paths are resolved against")
      ->envname("TAN_OUTPUT_ROOT")
      ->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads for evaluation and grid cells")
      ->envname("TAN_WORKERS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--quiet", quiet, "Suppress progress output");
  app.fallthrough();

  GenerateCmd gen;
  CLI::App* generate = app.add_subcommand("generate", "Write a synthetic or preprocessed dataset");
  generate->add_option("--kind", gen.spec.kind, "markov, star or trimodal")->capture_default_str();
  generate->add_option("--dim,-d", gen.spec.dim, "Dimensions")->capture_default_str();
  generate->add_option("--n,-n", gen.spec.n, "Instances")->capture_default_str();
  generate->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  generate->add_option("--sigma", gen.spec.sigma, "Markov walk / star fringe noise")->capture_default_str();
  generate->add_option("--epsilon", gen.spec.epsilon, "Trimodal noise")->capture_default_str();
  generate->add_option("--outliers", gen.spec.outlier_fraction, "Fraction of rows replaced by labelled outliers")
      ->capture_default_str();
  generate->add_flag("!--no-permute", gen.spec.permute, "Keep the natural column order");
  generate->add_option("--from", gen.from, "Preprocess this delimited file instead of generating");
  generate->add_option("--noise", gen.pre.noise, "Train-split noise for --from")->capture_default_str();
  generate->add_option("--distinct-threshold", gen.pre.distinct_threshold,
                       "Drop --from columns with at most this many distinct values")
      ->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->capture_default_str();

  TrainCmd tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, histories and manifest");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  add_model_flags(train_cmd, tr.model, true);
  add_train_flags(train_cmd, tr.train);
  train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();

  EvalCmd ev;
  CLI::App* eval = app.add_subcommand("eval", "Mean test log-likelihood with two standard errors");
  add_input_flags(eval, ev.in);
  eval->add_option("--out", ev.out, "Output directory")->capture_default_str();

  SampleCmd sm;
  CLI::App* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample->add_option("--checkpoint", sm.checkpoint, "Trained checkpoint")->required();
  sample->add_option("--n,-n", sm.n, "Number of samples")->capture_default_str();
  sample->add_option("--seed", sm.seed, "Sampling seed")->capture_default_str();
  sample->add_option("--out", sm.out, "Output directory")->capture_default_str();

  AnomalyCmd an;
  CLI::App* anomaly = app.add_subcommand("anomaly", "Score instances by negative log-likelihood");
  add_input_flags(anomaly, an.in);
  anomaly->add_option("--labels", an.in.labels, "0/1 labels, one per line");
  anomaly->add_option("--out", an.out, "Output directory")->capture_default_str();

  GridCmd gr;
  CLI::App* grid = app.add_subcommand("grid", "Train every transformation x conditional cell on each dataset");
  grid->add_option("--data", gr.data, "Dataset directories")->required()->delimiter(',');
  grid->add_option("--presets", gr.presets, "Transformation presets, comma separated")->required()->delimiter(',');
  grid->add_option("--conditionals", gr.conditionals, "Conditionals, comma separated")->required()->delimiter(',');
  add_model_flags(grid, gr.model, false);
  add_train_flags(grid, gr.train);
  grid->add_option("--out", gr.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*generate) return run_generate(gen, g);
    if (*train_cmd) return run_train(tr, g);
    if (*eval) return run_eval(ev, g);
    if (*sample) return run_sample(sm, g);
    if (*anomaly) return run_anomaly(an, g);
    if (*grid) return run_grid(gr, g);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
