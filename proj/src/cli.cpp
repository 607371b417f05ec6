#include "patchformer/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "patchformer/checkpoint.hpp"
#include "patchformer/errors.hpp"
#include "patchformer/gradcheck.hpp"
#include "patchformer/results_table.hpp"

namespace patchformer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelName = "Patchformer";
constexpr const char* kBaselineName = "RepeatLast";

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

json config_json(const RunConfig& c) {
  return {
      {"data", c.data},
      {"synth_spec", c.synth_spec},
      {"synth_channels", c.synth_channels},
      {"synth_length", c.synth_length},
      {"synth_seed", c.synth_seed},
      {"target", c.target},
      {"targets", c.targets},
      {"seq_len", c.seq_len},
      {"pred_len", c.pred_len},
      {"patch_len", c.patch_len},
      {"stride", c.stride},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"d_k", c.d_k},
      {"d_v", c.d_v},
      {"e_layers", c.e_layers},
      {"d_layers", c.d_layers},
      {"d_ff", c.d_ff},
      {"dropout", c.dropout},
      {"norm_scope", c.norm_scope},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"seed", c.seed},
      {"mode", c.mode},
      {"output_dir", c.output_dir},
  };
}

void write_manifest(const RunConfig& cfg, const std::string& command, const std::vector<std::string>& args,
                    json extra) {
  fs::create_directories(cfg.output_dir);
  json m;
  m["command"] = command;
  m["version"] = PATCHFORMER_VERSION;
  m["arguments"] = args;
  m["seed"] = cfg.seed;
  m["config"] = config_json(cfg);
  m["training"] = {{"optimiser", "adam"},     {"loss", "mse"},          {"epochs", cfg.epochs},
                   {"batch_size", cfg.batch_size}, {"lr", cfg.lr},     {"adam_beta1", 0.9},
                   {"adam_beta2", 0.999},     {"adam_epsilon", 1e-8}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  const std::string path = (fs::path(cfg.output_dir) / ("manifest_" + command + ".json")).string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest '" + path + "'");
  out << m.dump(2) << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::int64_t sampling_interval(const TimeSeriesTable& table, std::int64_t fallback) {
  if (table.length() < 2) return fallback;
  auto a = parse_timestamp(table.timestamps[table.length() - 2]);
  auto b = parse_timestamp(table.timestamps.back());
  if (!a || !b || *b <= *a) return fallback;
  return *b - *a;
}

bool integer_stamps(const TimeSeriesTable& table) {
  for (const auto& s : table.timestamps) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
  }
  return true;
}

std::string tag_for(const std::vector<std::string>& channels, std::size_t sets) {
  return sets > 1 ? "_" + join(channels, "+") : "";
}

// One trained model on one channel set.
struct Fit {
  PreparedData data;
  PatchformerModel model;
  TrainResult result;
};

Fit fit_channels(const TimeSeriesTable& table, const std::vector<std::string>& channels, const RunConfig& cfg,
                 std::ostream& out) {
  PreparedData data = prepare_data(table, channels, cfg.seq_len, cfg.pred_len);
  PatchformerModel model(cfg.model_config(channels.size()));
  out << "training on [" << join(channels, ", ") << "]: " << model.parameters().total_elements()
      << " parameters, " << window_count(data.scaled.train.length(), cfg.seq_len, cfg.pred_len)
      << " training windows\n";
  TrainResult result = train(model, data.scaled, cfg.train_config(), [&](const EpochRecord& r) {
    out << "  epoch " << r.epoch << "/" << cfg.epochs << "  train_mse " << fmt(r.train_mse) << "  val_mse "
        << fmt(r.val_mse) << "  val_mae " << fmt(r.val_mae) << "\n";
  });
  return {std::move(data), std::move(model), std::move(result)};
}

struct Scores {
  MetricReport model;
  MetricReport baseline;
};

Scores score(const Fit& fit, const RunConfig& cfg) {
  return {evaluate(fit.model, fit.data.scaled.test),
          evaluate(repeat_last_predictor(cfg.pred_len), fit.data.scaled.test, cfg.seq_len, cfg.pred_len)};
}

ResultRow make_row(const RunConfig& cfg, const std::string& model, const std::string& mode, const MetricReport& r) {
  return {cfg.dataset_name(), model, cfg.seq_len, cfg.pred_len, mode, r.mse, r.mae, cfg.seed};
}

// Trains and scores every model the mode needs and returns model and
// baseline rows. Average mode also yields one row per target channel.
std::vector<ResultRow> run_mode(const TimeSeriesTable& table, const RunConfig& cfg, Mode mode, std::ostream& out) {
  const auto sets = mode_channel_sets(table, mode, cfg.targets.empty() && !cfg.target.empty()
                                                      ? std::vector<std::string>{cfg.target}
                                                      : cfg.targets);
  std::vector<ResultRow> rows;
  std::vector<MetricReport> model_reports;
  std::vector<MetricReport> base_reports;
  for (const auto& channels : sets) {
    const Fit fit = fit_channels(table, channels, cfg, out);
    const Scores s = score(fit, cfg);
    model_reports.push_back(s.model);
    base_reports.push_back(s.baseline);
    if (mode == Mode::average) {
      rows.push_back(make_row(cfg, kModelName, channels.front(), s.model));
      rows.push_back(make_row(cfg, kBaselineName, channels.front(), s.baseline));
    }
  }
  const std::string label = to_string(mode);
  rows.push_back(make_row(cfg, kModelName, label, average_reports(model_reports)));
  rows.push_back(make_row(cfg, kBaselineName, label, average_reports(base_reports)));
  return rows;
}

std::vector<std::string> resolved_targets(const RunConfig& cfg, const TimeSeriesTable& table) {
  if (!cfg.targets.empty()) return cfg.targets;
  std::vector<std::string> defaults = {"electricity", "gas", "ghg"};
  for (const auto& d : defaults) {
    if (std::find(table.channel_names.begin(), table.channel_names.end(), d) == table.channel_names.end()) {
      throw ConfigError("--targets is required: table has no '" + d + "' channel");
    }
  }
  return defaults;
}

void emit_results(const ResultsTable& fresh, const std::string& results_path,
                  std::ostream& out) {
  ResultsTable table = ResultsTable::read_csv(results_path);
  table.merge(fresh);
  table.write_csv(results_path);
  const std::string rendered = table.render();
  write_text((fs::path(results_path).replace_extension(".txt")).string(), rendered);
  out << rendered;
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, bool dry_run, const std::vector<std::string>& args, std::ostream& out) {
  const TimeSeriesTable table = load_dataset(cfg);
  const Mode mode = parse_mode(cfg.mode);
  std::vector<std::string> targets = cfg.targets;
  if (targets.empty() && !cfg.target.empty()) targets = {cfg.target};
  const auto sets = mode_channel_sets(table, mode, targets);

  json extra;
  extra["dataset"] = {{"name", cfg.dataset_name()}, {"rows", table.length()}, {"channels", table.channels()}};
  extra["model"] = cfg.model_config(sets.front().size()).record();
  extra["channel_sets"] = sets;
  write_manifest(cfg, "train", args, extra);
  if (dry_run) {
    out << "dry run: manifest written to " << cfg.output_dir << "\n";
    return 0;
  }

  const std::int64_t interval = sampling_interval(table, 3600);
  std::vector<MetricReport> val_reports;
  for (const auto& channels : sets) {
    Fit fit = fit_channels(table, channels, cfg, out);
    const std::string tag = tag_for(channels, sets.size());
    std::map<std::string, std::string> meta = {{"dataset", cfg.dataset_name()},
                                               {"mode", cfg.mode},
                                               {"interval_seconds", std::to_string(interval)},
                                               {"train_seed", std::to_string(cfg.seed)}};

    std::string trace = "epoch,split,mse,mae\n";
    trace += "0,train," + format_real(fit.result.initial_train_mse) + "," +
             format_real(fit.result.initial_train_mae) + "\n";
    for (const auto& r : fit.result.epochs) {
      trace += std::to_string(r.epoch) + ",train," + format_real(r.train_mse) + "," + format_real(r.train_mae) + "\n";
      trace += std::to_string(r.epoch) + ",val," + format_real(r.val_mse) + "," + format_real(r.val_mae) + "\n";
    }
    write_text((fs::path(cfg.output_dir) / ("loss_trace" + tag + ".csv")).string(), trace);

    meta["weights"] = "final";
    const auto final_path = (fs::path(cfg.output_dir) / ("model" + tag + ".ckpt")).string();
    save_checkpoint(final_path, make_checkpoint(fit.model, fit.data.scaler, fit.data.channels, meta));

    const auto final_values = fit.model.parameters().snapshot();
    fit.model.parameters().restore(fit.result.best_params);
    meta["weights"] = "best_val";
    meta["epoch"] = std::to_string(fit.result.best_epoch);
    const auto best_path = (fs::path(cfg.output_dir) / ("model_best" + tag + ".ckpt")).string();
    save_checkpoint(best_path, make_checkpoint(fit.model, fit.data.scaler, fit.data.channels, meta));
    fit.model.parameters().restore(final_values);

    const MetricReport val = evaluate(fit.model, fit.data.scaled.val);
    val_reports.push_back(val);
    out << "checkpoint " << final_path << "\n";
  }
  const MetricReport val = average_reports(val_reports);
  out << "final validation (scaled): mse " << fmt(val.mse) << "  mae " << fmt(val.mae) << "\n";
  return 0;
}

struct Explicit {
  const CLI::App* app;
  bool operator()(const std::string& name) const { return app->get_option("--" + name)->count() > 0; }
};

void check_compatible(const ModelConfig& ck, const RunConfig& cfg, const Explicit& given) {
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> fields[] = {
      {"seq_len", {ck.seq_len, cfg.seq_len}},     {"pred_len", {ck.pred_len, cfg.pred_len}},
      {"patch_len", {ck.patch_len, cfg.patch_len}}, {"stride", {ck.stride, cfg.stride}},
      {"d_model", {ck.d_model, cfg.d_model}},     {"n_heads", {ck.n_heads, cfg.n_heads}},
      {"e_layers", {ck.e_layers, cfg.e_layers}},   {"d_layers", {ck.d_layers, cfg.d_layers}},
      {"d_ff", {ck.d_ff, cfg.d_ff}},
  };
  for (const auto& [name, values] : fields) {
    if (given(name) && values.first != values.second) {
      throw ConfigError("checkpoint has " + std::string(name) + "=" + std::to_string(values.first) +
                        " but the configuration requests " + std::to_string(values.second));
    }
  }
}

int cmd_evaluate(RunConfig cfg, const std::vector<std::string>& checkpoints, const std::string& split,
                 const std::string& results_path, const Explicit& given, const std::vector<std::string>& args,
                 std::ostream& out) {
  if (checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  if (split != "val" && split != "test") throw ConfigError("--split must be 'val' or 'test'");
  const TimeSeriesTable table = load_dataset(cfg);

  std::vector<MetricReport> model_reports, base_reports, model_raw, base_raw;
  std::string mode_label;
  for (const auto& path : checkpoints) {
    const Checkpoint ckpt = load_checkpoint(path);
    check_compatible(ckpt.config, cfg, given);
    const PatchformerModel model = ckpt.build_model();
    const ModelConfig& mc = ckpt.config;
    if (ckpt.channel_names.size() != mc.channels) throw ConfigError("checkpoint '" + path + "' channel list is inconsistent");

    const TimeSeriesTable selected = select_channels(table, ckpt.channel_names);
    const DataSplits raw = chronological_split(selected, {}, mc.seq_len + mc.pred_len);
    if (!(Scaler::fit(raw.train) == ckpt.scaler)) {
      out << "warning: data statistics differ from those stored in " << path << "\n";
    }
    const TimeSeriesTable scaled = ckpt.scaler.apply(split == "test" ? raw.test : raw.val);

    EvalOptions raw_opts;
    raw_opts.unscale = &ckpt.scaler;
    const Predictor baseline = repeat_last_predictor(mc.pred_len);
    model_reports.push_back(evaluate(model, scaled));
    base_reports.push_back(evaluate(baseline, scaled, mc.seq_len, mc.pred_len));
    model_raw.push_back(evaluate(model, scaled, raw_opts));
    base_raw.push_back(evaluate(baseline, scaled, mc.seq_len, mc.pred_len, raw_opts));

    cfg.seq_len = mc.seq_len;
    cfg.pred_len = mc.pred_len;
    if (auto it = ckpt.metadata.find("train_seed"); it != ckpt.metadata.end()) cfg.seed = std::stoull(it->second);
    auto mode_it = ckpt.metadata.find("mode");
    mode_label = mode_it == ckpt.metadata.end() ? "multivariate" : mode_it->second;
    out << path << " [" << join(ckpt.channel_names, ", ") << "]: mse " << fmt(model_reports.back().mse) << "  mae "
        << fmt(model_reports.back().mae) << "\n";
  }
  if (checkpoints.size() > 1) mode_label = "average";

  const MetricReport m = average_reports(model_reports);
  const MetricReport b = average_reports(base_reports);
  const MetricReport mr = average_reports(model_raw);
  const MetricReport br = average_reports(base_raw);
  out << split << " metrics (scaled):   " << kModelName << " mse " << fmt(m.mse) << " mae " << fmt(m.mae) << " | "
      << kBaselineName << " mse " << fmt(b.mse) << " mae " << fmt(b.mae) << "\n";
  out << split << " metrics (raw units): " << kModelName << " mse " << fmt(mr.mse) << " mae " << fmt(mr.mae)
      << " | " << kBaselineName << " mse " << fmt(br.mse) << " mae " << fmt(br.mae) << "\n";

  ResultsTable fresh;
  fresh.upsert(make_row(cfg, kModelName, mode_label, m));
  fresh.upsert(make_row(cfg, kBaselineName, mode_label, b));
  json extra;
  extra["checkpoints"] = checkpoints;
  extra["split"] = split;
  write_manifest(cfg, "evaluate", args, extra);
  emit_results(fresh, results_path, out);
  return 0;
}

int cmd_forecast(const RunConfig& cfg, const std::string& checkpoint, const std::string& window_path,
                 std::string output, const std::vector<std::string>& args, std::ostream& out) {
  if (checkpoint.empty()) throw ConfigError("forecast needs --checkpoint");
  if (window_path.empty()) throw ConfigError("forecast needs --window");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const TimeSeriesTable window = load_csv(window_path);
  const ModelConfig& mc = ckpt.config;
  if (window.length() != mc.seq_len) {
    throw DataError("window '" + window_path + "' has " + std::to_string(window.length()) +
                    " rows; the model needs exactly seq_len I = " + std::to_string(mc.seq_len));
  }
  if (window.channel_names != ckpt.channel_names) {
    throw DataError("window channels [" + join(window.channel_names, ", ") + "] do not match checkpoint channels [" +
                    join(ckpt.channel_names, ", ") + "]");
  }
  const PatchformerModel model = ckpt.build_model();
  const TimeSeriesTable scaled = ckpt.scaler.apply(window);
  Tensor pred;
  {
    NoGradGuard no_grad;
    pred = model.forward(scaled.values.to_tensor());
  }

  TimeSeriesTable result;
  result.channel_names = ckpt.channel_names;
  result.values = Matrix(mc.pred_len, mc.channels);
  std::copy(pred.values().begin(), pred.values().end(), result.values.data.begin());
  result = ckpt.scaler.invert(result);

  std::int64_t fallback = 3600;
  if (auto it = ckpt.metadata.find("interval_seconds"); it != ckpt.metadata.end()) fallback = std::stoll(it->second);
  const std::int64_t step = sampling_interval(window, fallback);
  const bool as_index = integer_stamps(window);
  const auto last = parse_timestamp(window.timestamps.back());
  if (!last) throw DataError("cannot extrapolate from timestamp '" + window.timestamps.back() + "'");
  for (std::size_t o = 1; o <= mc.pred_len; ++o) {
    const std::int64_t t = *last + static_cast<std::int64_t>(o) * (as_index ? std::max<std::int64_t>(step, 1) : step);
    result.timestamps.push_back(as_index ? std::to_string(t) : format_timestamp(t));
  }

  if (output.empty()) output = (fs::path(cfg.output_dir) / "forecast.csv").string();
  if (auto parent = fs::path(output).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_csv(output, result);
  write_manifest(cfg, "forecast", args, json{{"checkpoint", checkpoint}, {"window", window_path}, {"output", output}});
  out << "wrote " << mc.pred_len << "-step forecast for " << mc.channels << " channels to " << output << "\n";
  return 0;
}

struct GradcheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  bool corrupt = false;
  std::size_t max_elements = 20000;
};

int cmd_gradcheck(const RunConfig& cfg, const GradcheckOptions& opts, const Explicit& given, std::size_t channels,
                  const std::vector<std::string>& args, std::ostream& out) {
  // Tiny defaults; any flag given on the command line or in a config file wins.
  ModelConfig mc;
  mc.seq_len = given("seq_len") ? cfg.seq_len : 16;
  mc.pred_len = given("pred_len") ? cfg.pred_len : 8;
  mc.channels = channels;
  mc.patch_len = given("patch_len") ? cfg.patch_len : 4;
  mc.stride = given("stride") ? cfg.stride : 2;
  mc.d_model = given("d_model") ? cfg.d_model : 8;
  mc.n_heads = given("n_heads") ? cfg.n_heads : 2;
  mc.d_k = cfg.d_k;
  mc.d_v = cfg.d_v;
  mc.e_layers = given("e_layers") ? cfg.e_layers : 1;
  mc.d_layers = given("d_layers") ? cfg.d_layers : 1;
  mc.d_ff = given("d_ff") ? cfg.d_ff : 16;
  mc.dropout = 0.0;
  mc.norm_scope = parse_norm_scope(cfg.norm_scope);
  mc.seed = cfg.seed;

  PatchformerModel model(mc);
  const std::size_t elements = model.parameters().total_elements();
  if (elements > opts.max_elements) {
    throw ConfigError("gradcheck model has " + std::to_string(elements) + " parameter elements, above the cap of " +
                      std::to_string(opts.max_elements));
  }
  Rng rng = Rng(cfg.seed).fork(7);
  std::vector<double> xs(mc.seq_len * mc.channels), ys(mc.pred_len * mc.channels);
  for (auto& v : xs) v = rng.normal();
  for (auto& v : ys) v = rng.normal();
  const Tensor x({mc.seq_len, mc.channels}, xs);
  const Tensor y({mc.pred_len, mc.channels}, ys);

  write_manifest(cfg, "gradcheck", args,
                 json{{"model", mc.record()}, {"eps", opts.eps}, {"tol", opts.tol}, {"corrupt", opts.corrupt}});
  const auto started = std::chrono::steady_clock::now();
  set_matmul_grad_fault(opts.corrupt ? 1.5 : 1.0);
  GradCheckReport report;
  try {
    report = finite_diff_check([&] { return mse_loss(model.forward(x), y); }, model.parameters(), opts.eps, opts.tol);
  } catch (...) {
    set_matmul_grad_fault(1.0);
    throw;
  }
  set_matmul_grad_fault(1.0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::size_t width = 9;
  for (const auto& e : report.entries) width = std::max(width, e.name.size());
  for (const auto& e : report.entries) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s  %.3e  %s", static_cast<int>(width), e.name.c_str(), e.max_rel_error,
                  e.passed ? "ok" : "FAIL");
    out << line;
    if (!e.passed) {
      std::snprintf(line, sizeof(line), "  [%zu] analytic %.9e numeric %.9e", e.worst_index, e.analytic, e.numeric);
      out << line;
    }
    out << "\n";
  }
  out << "parameters " << report.entries.size() << ", elements " << elements << ", max relative error "
      << report.max_rel_error() << " (tol " << opts.tol << ", eps " << opts.eps << "), " << fmt(seconds) << " s\n";
  if (!report.passed()) {
    throw NumericalError("gradient check failed for: " + join(report.failures(), ", "));
  }
  out << "gradcheck passed\n";
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::string output, const std::vector<std::string>& args, std::ostream& out) {
  const TimeSeriesTable table = load_dataset(cfg);
  if (output.empty()) output = (fs::path(cfg.output_dir) / "synthetic.csv").string();
  if (auto parent = fs::path(output).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_csv(output, table);
  write_manifest(cfg, "synth", args, json{{"output", output}});
  out << "wrote " << table.length() << " rows x " << table.channels() << " channels to " << output << "\n";
  return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& over, std::vector<std::size_t> values,
              std::vector<std::size_t> pred_lens, const std::vector<std::string>& args, std::ostream& out) {
  const TimeSeriesTable table = load_dataset(cfg);
  ResultsTable fresh;
  json grid;
  if (over == "pred_len") {
    if (values.empty()) values = {96, 192, 336, 720};
    const Mode mode = parse_mode(cfg.mode);
    for (std::size_t o : values) {
      cfg.pred_len = o;
      for (const auto& row : run_mode(table, cfg, mode, out)) fresh.upsert(row);
    }
    grid = {{"pred_len", values}};
  } else if (over == "seq_len") {
    if (values.empty()) values = {24, 48, 96, 192, 336};
    if (pred_lens.empty()) pred_lens = {96, 720};
    const Mode mode = parse_mode(cfg.mode);
    for (std::size_t o : pred_lens) {
      for (std::size_t i : values) {
        cfg.pred_len = o;
        cfg.seq_len = i;
        for (const auto& row : run_mode(table, cfg, mode, out)) fresh.upsert(row);
      }
    }
    grid = {{"seq_len", values}, {"pred_len", pred_lens}};
  } else if (over == "protocol") {
    if (values.empty()) values = pred_lens.empty() ? std::vector<std::size_t>{96, 192, 336, 720} : pred_lens;
    cfg.targets = resolved_targets(cfg, table);
    for (std::size_t o : values) {
      cfg.pred_len = o;
      for (const auto& row : run_mode(table, cfg, Mode::all_at_once, out)) fresh.upsert(row);
      for (const auto& row : run_mode(table, cfg, Mode::average, out)) fresh.upsert(row);
    }
    grid = {{"protocol", {"all_at_once", "average"}}, {"pred_len", values}, {"targets", cfg.targets}};
  } else {
    throw ConfigError("--over must be pred_len, seq_len or protocol");
  }
  write_manifest(cfg, "sweep", args, json{{"grid", grid}, {"rows", fresh.size()}});
  emit_results(fresh, (fs::path(cfg.output_dir) / "results.csv").string(), out);
  return 0;
}

}  // namespace

ModelConfig RunConfig::model_config(std::size_t channels) const {
  ModelConfig mc;
  mc.seq_len = seq_len;
  mc.pred_len = pred_len;
  mc.channels = channels;
  mc.patch_len = patch_len;
  mc.stride = stride;
  mc.d_model = d_model;
  mc.n_heads = n_heads;
  mc.d_k = d_k;
  mc.d_v = d_v;
  mc.e_layers = e_layers;
  mc.d_layers = d_layers;
  mc.d_ff = d_ff;
  mc.dropout = dropout;
  mc.norm_scope = parse_norm_scope(norm_scope);
  mc.seed = seed;
  mc.validate();
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.lr = lr;
  tc.seed = seed;
  return tc;
}

std::string RunConfig::dataset_name() const {
  if (!data.empty()) return fs::path(data).stem().string();
  if (!synth_spec.empty()) return "synthetic-" + fs::path(synth_spec).stem().string();
  return "synthetic";
}

TimeSeriesTable load_dataset(const RunConfig& cfg) {
  if (!cfg.data.empty()) {
    TimeSeriesTable table = load_csv(cfg.data);
    if (!cfg.target.empty()) {
      table.channel_index(cfg.target);
      table.target_channel = cfg.target;
    }
    return table;
  }
  SyntheticSpec spec;
  if (!cfg.synth_spec.empty()) {
    spec = SyntheticSpec::from_file(cfg.synth_spec);
  } else {
    spec.channels = cfg.synth_channels;
    spec.length = cfg.synth_length;
    spec.seed = cfg.synth_seed;
    spec.validate();
  }
  TimeSeriesTable table = generate_synthetic_multienergy(spec);
  if (!cfg.target.empty()) {
    table.channel_index(cfg.target);
    table.target_channel = cfg.target;
  }
  return table;
}

PreparedData prepare_data(const TimeSeriesTable& table, const std::vector<std::string>& channels,
                          std::size_t seq_len, std::size_t pred_len) {
  PreparedData p;
  p.channels = channels;
  const DataSplits raw = chronological_split(select_channels(table, channels), {}, seq_len + pred_len);
  p.scaler = Scaler::fit(raw.train);
  p.scaled = {p.scaler.apply(raw.train), p.scaler.apply(raw.val), p.scaler.apply(raw.test)};
  return p;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Patch-based transformer forecaster for multivariate time series", "patchformer"};
  app.set_version_flag("--version", PATCHFORMER_VERSION);
  app.set_config("--config", "", "Flat key = value file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);
  app.fallthrough();

  app.add_option("--data", cfg.data, "CSV file (first column 'date'); synthetic data when omitted");
  app.add_option("--synth_spec", cfg.synth_spec, "Synthetic generator spec file (key = value)");
  app.add_option("--synth_channels", cfg.synth_channels, "Synthetic channel count")->capture_default_str();
  app.add_option("--synth_length", cfg.synth_length, "Synthetic series length")->capture_default_str();
  app.add_option("--synth_seed", cfg.synth_seed, "Synthetic generator seed")->capture_default_str();
  app.add_option("--target", cfg.target, "Target channel for univariate mode");
  app.add_option("--targets", cfg.targets, "Channel subset for all_at_once / average")->delimiter(',');
  app.add_option("--seq_len", cfg.seq_len, "Lookback length I")->capture_default_str();
  app.add_option("--pred_len", cfg.pred_len, "Prediction length O")->capture_default_str();
  app.add_option("--patch_len", cfg.patch_len, "Patch length P")->capture_default_str();
  app.add_option("--stride", cfg.stride, "Patch stride S")->capture_default_str();
  app.add_option("--d_model", cfg.d_model, "Model width D")->capture_default_str();
  app.add_option("--n_heads", cfg.n_heads, "Attention heads H")->capture_default_str();
  app.add_option("--d_k", cfg.d_k, "Query/key width per head (0: d_model / n_heads)")->capture_default_str();
  app.add_option("--d_v", cfg.d_v, "Value width per head (0: d_model)")->capture_default_str();
  app.add_option("--e_layers", cfg.e_layers, "Encoder layers")->capture_default_str();
  app.add_option("--d_layers", cfg.d_layers, "Decoder layers")->capture_default_str();
  app.add_option("--d_ff", cfg.d_ff, "Feed-forward width")->capture_default_str();
  app.add_option("--dropout", cfg.dropout, "Dropout rate")->capture_default_str();
  app.add_option("--norm_scope", cfg.norm_scope, "Layer norm statistics: global or per_row")->capture_default_str();
  app.add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  app.add_option("--batch_size", cfg.batch_size, "Windows per batch")->capture_default_str();
  app.add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed for initialization, shuffling and dropout")->capture_default_str();
  app.add_option("--mode", cfg.mode, "multivariate, univariate, all_at_once or average")->capture_default_str();
  app.add_option("--output_dir", cfg.output_dir, "Directory for run artifacts")
      ->envname("PATCHFORMER_OUTPUT_DIR")
      ->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints and a loss trace");
  bool dry_run = false;
  train_cmd->add_flag("--dry_run", dry_run, "Resolve the configuration and write the manifest only");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score checkpoints against the repeat-last baseline");
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::string results_path;
  eval_cmd->add_option("--checkpoint", checkpoints, "Checkpoint file; several average per-channel runs")
      ->required();
  eval_cmd->add_option("--split", split, "val or test")->capture_default_str();
  eval_cmd->add_option("--results", results_path, "Results CSV (default <output_dir>/results.csv)");

  auto* fc_cmd = app.add_subcommand("forecast", "Forecast O steps from a window of I rows");
  std::string fc_checkpoint, window, fc_output;
  fc_cmd->add_option("--checkpoint", fc_checkpoint, "Checkpoint file")->required();
  fc_cmd->add_option("--window", window, "CSV with exactly seq_len rows")->required();
  fc_cmd->add_option("--output", fc_output, "Forecast CSV (default <output_dir>/forecast.csv)");

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every model gradient");
  GradcheckOptions gc;
  std::size_t gc_channels = 2;
  gc_cmd->add_option("--eps", gc.eps, "Central difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
  gc_cmd->add_option("--channels", gc_channels, "Input channels")->capture_default_str();
  gc_cmd->add_option("--max_elements", gc.max_elements, "Parameter element cap")->capture_default_str();
  gc_cmd->add_flag("--debug_corrupt_grad", gc.corrupt, "Scale weight gradients by 1.5 (negative control)");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic multi-energy dataset");
  std::string synth_output;
  synth_cmd->add_option("--output", synth_output, "CSV path (default <output_dir>/synthetic.csv)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Train and score a grid of runs into a results table");
  std::string over = "pred_len";
  std::vector<std::size_t> values, pred_lens;
  sweep_cmd->add_option("--over", over, "pred_len, seq_len or protocol")->capture_default_str();
  sweep_cmd->add_option("--values", values, "Grid values for the swept setting")->delimiter(',');
  sweep_cmd->add_option("--pred_lens", pred_lens, "Prediction lengths for seq_len and protocol sweeps")
      ->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const std::vector<std::string> argv_copy(args.begin() + (args.empty() ? 0 : 1), args.end());
  const Explicit given{&app};
  try {
    if (*train_cmd) return cmd_train(cfg, dry_run, argv_copy, out);
    if (*eval_cmd) {
      if (results_path.empty()) results_path = (fs::path(cfg.output_dir) / "results.csv").string();
      return cmd_evaluate(cfg, checkpoints, split, results_path, given, argv_copy, out);
    }
    if (*fc_cmd) return cmd_forecast(cfg, fc_checkpoint, window, fc_output, argv_copy, out);
    if (*gc_cmd) return cmd_gradcheck(cfg, gc, given, gc_channels, argv_copy, out);
    if (*synth_cmd) return cmd_synth(cfg, synth_output, argv_copy, out);
    if (*sweep_cmd) return cmd_sweep(cfg, over, values, pred_lens, argv_copy, out);
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace patchformer::cli
