#include "tpred/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "tpred/arima.hpp"
#include "tpred/burst.hpp"
#include "tpred/classify.hpp"
#include "tpred/csv.hpp"
#include "tpred/eval.hpp"
#include "tpred/ingest.hpp"
#include "tpred/log.hpp"
#include "tpred/netsim.hpp"
#include "tpred/recurrent.hpp"
#include "tpred/serialize.hpp"
#include "tpred/synth.hpp"

namespace tpred::cli {

namespace fs = std::filesystem;
using io::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

fs::path manifest_path(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

namespace {

// What a finished command read and wrote; the first output anchors the manifest.
struct RunRecord {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::uint64_t seed = 0;
};

using Handler = std::function<RunRecord()>;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  auto out = open_out(path);
  body(out);
  out.flush();
  if (!out) throw Error("failed writing " + path.string());
}

void write_manifest(const std::string& command, const std::vector<std::string>& argv, const json& config,
                    const RunRecord& rec) {
  if (rec.outputs.empty()) return;
  json inputs = json::array(), outputs = json::array();
  for (const auto& p : rec.inputs) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  for (const auto& p : rec.outputs) outputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  json m{{"tool", "tpred"}, {"version", kVersion}, {"command", command}, {"argv", argv},
         {"config", config}, {"seed", rec.seed},   {"inputs", inputs},   {"outputs", outputs}};
  io::write_json_file(manifest_path(rec.outputs.front()), m);
}

// Resolved option values of one subcommand, defaults included.
json resolved_config(const CLI::App* sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_expected_max() == 0) cfg[name] = true;
      else if (res.size() == 1) cfg[name] = res.front();
      else cfg[name] = res;
    } else {
      const std::string def = opt->get_default_str();
      if (opt->get_expected_max() == 0) cfg[name] = false;
      else if (!def.empty()) cfg[name] = def;
    }
  }
  return cfg;
}

void check_no_clobber(const RunRecord& rec) {
  for (const auto& out : rec.outputs)
    for (const auto& in : rec.inputs)
      if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in))
        throw Error("output " + out.string() + " would overwrite an input");
}

// Options shared by the recurrent commands.
struct RnnOptions {
  Index hidden = 100;
  int epochs = 50;
  double lr = 1e-3;
  int batch = 32;
  int truncation = 0;
  int patience = 0;

  void add(CLI::App* sub) {
    sub->add_option("--hidden", hidden, "GRU hidden units")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--epochs", epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    sub->add_option("--batch", batch, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--truncation", truncation, "BPTT truncation (0 = whole window)")->capture_default_str();
    sub->add_option("--patience", patience, "Early-stopping patience in epochs (0 = off)")->capture_default_str();
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.batch_size = batch;
    c.truncation = truncation;
    c.patience = patience;
    c.seed = seed;
    return c;
  }
};

struct SplitOptions {
  double train = 0.6;
  double valid = 0.2;

  void add(CLI::App* sub) {
    sub->add_option("--train-frac", train, "Training fraction")->capture_default_str();
    sub->add_option("--valid-frac", valid, "Validation fraction")->capture_default_str();
  }
};

struct GridOptions {
  int p_max, d_max, q_max;

  void add(CLI::App* sub) {
    sub->add_option("--p-max", p_max, "Largest AR order")->capture_default_str();
    sub->add_option("--d-max", d_max, "Largest differencing order")->capture_default_str();
    sub->add_option("--q-max", q_max, "Largest MA order")->capture_default_str();
  }
  ArimaGrid grid() const { return ArimaGrid::ranges(p_max, d_max, q_max); }
};

std::vector<FeatureMask> parse_masks(const std::vector<std::string>& names) {
  std::vector<FeatureMask> out;
  for (const auto& n : names) out.push_back(FeatureMask::parse(n));
  return out;
}

double series_sd(const LabeledSeries& s) {
  const VectorXd f1 = s.features.row(kUplinkPackets).transpose();
  if (f1.size() < 2) throw Error("series too short for an SD");
  return std::sqrt((f1.array() - f1.mean()).square().sum() / static_cast<double>(f1.size() - 1));
}

// `label=path` pairs for classification commands.
struct TraceArgs {
  std::vector<std::string> specs;
  std::vector<std::string> classes = default_app_classes();

  void add(CLI::App* sub) {
    sub->add_option("--trace", specs, "Labelled packet trace as class=path (repeatable)")->required();
    sub->add_option("--classes", classes, "Class names in label-index order")->delimiter(',')->capture_default_str();
  }

  std::vector<AppTrace> load(RunRecord& rec) const {
    std::vector<AppTrace> traces;
    for (const auto& spec : specs) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw Error("--trace expects class=path, got '" + spec + "'");
      const std::string name = spec.substr(0, eq);
      const fs::path path = spec.substr(eq + 1);
      const auto it = std::find(classes.begin(), classes.end(), name);
      if (it == classes.end()) throw Error("unknown class '" + name + "'");
      rec.inputs.push_back(path);
      traces.push_back({static_cast<int>(it - classes.begin()), parse_packet_log(path)});
    }
    return traces;
  }
};

void write_curve(const fs::path& path, const TrainResult& curves) {
  write_file(path, [&](std::ostream& out) {
    csv::Writer w(out);
    w.header({"epoch", "train_loss", "valid_loss"});
    for (std::size_t e = 0; e < curves.loss_curve.size(); ++e) {
      w.cell(static_cast<long long>(e + 1)).cell(curves.loss_curve[e]);
      if (e < curves.valid_curve.size()) w.cell(curves.valid_curve[e]);
      else w.cell("");
      w.end_row();
    }
  });
}

// Indices [from, to] clipped to the valid range; negative means "unset".
std::vector<Index> anchor_range(Index lo, Index hi, long long from, long long to) {
  const Index a = from >= 0 ? std::max<Index>(lo, from) : lo;
  const Index b = to >= 0 ? std::min<Index>(hi, to) : hi;
  std::vector<Index> out;
  for (Index t = a; t <= b; ++t) out.push_back(t);
  if (out.empty()) throw Error("no forecast anchors in range");
  return out;
}

int usage_error(const CLI::App& app, const std::string& what) {
  std::cerr << "error: " << what << "\n\n" << app.help();
  return 2;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Per-user cellular traffic prediction, burst detection, app classification and prefetch simulation",
               "tpred"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(kVersion));
  bool quiet = false, verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only report errors");
  app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

  std::map<const CLI::App*, Handler> handlers;
  std::uint64_t seed = 1;
  int jobs = 1;
  double tau = 10.0;
  fs::path in, out;

  const auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for all randomness")->capture_default_str();
  };
  const auto add_jobs = [&](CLI::App* sub) {
    sub->add_option("--jobs", jobs, "Worker threads; results do not depend on it")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  };
  const auto add_series = [&](CLI::App* sub) {
    sub->add_option("--in", in, "Series CSV")->required();
    sub->add_option("--tau", tau, "Interval length in seconds")->capture_default_str()->check(CLI::PositiveNumber);
  };
  const auto add_out = [&](CLI::App* sub, const char* what) { sub->add_option("--out", out, what)->required(); };

  // featurize
  std::optional<double> burst_threshold, burst_sd;
  {
    auto* sub = app.add_subcommand("featurize", "Aggregate a packet trace into per-interval features");
    sub->add_option("--in", in, "Packet CSV (timestamp_s,direction,size_bytes,protocol)")->required();
    sub->add_option("--tau", tau, "Interval length in seconds")->capture_default_str()->check(CLI::PositiveNumber);
    add_out(sub, "Series CSV");
    auto* t = sub->add_option("--burst-threshold", burst_threshold, "Also label bursts: f1 above this count");
    sub->add_option("--burst-sd", burst_sd, "Also label bursts: f1 above this multiple of its SD")->excludes(t);
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, 0};
      check_no_clobber(rec);
      auto series = featurize(parse_packet_log(in), tau);
      if (burst_threshold) series = label_bursts(std::move(series), *burst_threshold);
      else if (burst_sd) series = label_bursts(std::move(series), *burst_sd * series_sd(series));
      write_file(out, [&](std::ostream& o) { write_series_csv(o, series); });
      log::info("wrote " + std::to_string(series.size()) + " intervals");
      return rec;
    };
  }

  // label-bursts
  std::optional<double> threshold, sd_multiple;
  {
    auto* sub = app.add_subcommand("label-bursts", "Add burst labels (f1 above a threshold) to a series");
    add_series(sub);
    add_out(sub, "Labelled series CSV");
    auto* t = sub->add_option("--threshold", threshold, "Absolute f1 threshold");
    auto* s = sub->add_option("--sd-multiple", sd_multiple, "Threshold as a multiple of the series SD of f1");
    t->excludes(s);
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, 0};
      check_no_clobber(rec);
      if (!threshold && !sd_multiple) throw Error("one of --threshold or --sd-multiple is required");
      auto series = read_series_csv(in, tau);
      const double th = threshold ? *threshold : *sd_multiple * series_sd(series);
      series = label_bursts(std::move(series), th);
      write_file(out, [&](std::ostream& o) { write_series_csv(o, series); });
      log::info("burst threshold " + csv::format(th));
      return rec;
    };
  }

  // train-arima
  GridOptions grid{5, 2, 5};
  SplitOptions split;
  std::optional<fs::path> scores_path;
  {
    auto* sub = app.add_subcommand("train-arima", "Grid-search an ARIMA model for f1 by validation RMSE");
    add_series(sub);
    add_out(sub, "Model JSON");
    grid.add(sub);
    split.add(sub);
    add_jobs(sub);
    sub->add_option("--scores", scores_path, "Per-candidate validation RMSE CSV");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, 0};
      if (scores_path) rec.outputs.push_back(*scores_path);
      check_no_clobber(rec);
      const auto parts = split_series(read_series_csv(in, tau), split.train, split.valid);
      const VectorXd train = parts.train.features.row(kUplinkPackets).transpose();
      const VectorXd valid = parts.valid.features.row(kUplinkPackets).transpose();
      const auto result = arima_grid_search(train, valid, grid.grid(), jobs);
      io::write_json_file(out, io::to_json(result.model));
      if (scores_path)
        write_file(*scores_path, [&](std::ostream& o) {
          csv::Writer w(o);
          w.header({"p", "d", "q", "valid_rmse", "status"});
          for (const auto& c : result.candidates) {
            w.cell(c.order.p).cell(c.order.d).cell(c.order.q);
            if (c.valid_rmse) w.cell(*c.valid_rmse).cell("ok");
            else w.cell("").cell(std::string_view(c.failure));
            w.end_row();
          }
        });
      log::info("selected ARIMA" + to_string(result.model.order()) + " valid rmse " + csv::format(result.valid_rmse));
      return rec;
    };
  }

  // train-rnn
  Index m = 10, n = 0;
  std::string mask_name = "FS-3";
  RnnOptions rnn;
  std::optional<fs::path> curve_path;
  {
    auto* sub = app.add_subcommand("train-rnn", "Train a GRU forecaster for the next n + 1 intervals");
    add_series(sub);
    add_out(sub, "Model JSON");
    sub->add_option("--m", m, "Observation window length")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--n", n, "Horizon: forecast intervals t..t+n")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--mask", mask_name, "Feature set (FS-1..FS-6 or a 6-bit string)")->capture_default_str();
    rnn.add(sub);
    split.add(sub);
    add_seed(sub);
    sub->add_option("--curve", curve_path, "Per-epoch loss CSV");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, seed};
      if (curve_path) rec.outputs.push_back(*curve_path);
      check_no_clobber(rec);
      const auto mask = FeatureMask::parse(mask_name);
      const auto parts = split_series(read_series_csv(in, tau), split.train, split.valid);
      const MatrixXd tr = apply_mask(parts.train, mask), va = apply_mask(parts.valid, mask);
      TrainResult curves;
      const auto f = train_recurrent_forecaster(tr, &va, {m, n, mask, tau}, rnn.hidden, rnn.config(seed), &curves);
      io::write_json_file(out, io::to_json(f));
      if (curve_path) write_curve(*curve_path, curves);
      return rec;
    };
  }

  // forecast
  std::string model_arg;
  long long from = -1, to = -1;
  {
    auto* sub = app.add_subcommand("forecast", "Forecast from a trained model (or persistence) over a series");
    add_series(sub);
    add_out(sub, "Forecast CSV (anchor_index,horizon_step,feature,predicted,actual)");
    sub->add_option("--model", model_arg, "Model JSON, or 'persistence'")->required();
    sub->add_option("--n", n, "Horizon for persistence")->capture_default_str();
    sub->add_option("--from", from, "First anchor interval");
    sub->add_option("--to", to, "Last anchor interval");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, 0};
      if (model_arg != "persistence") rec.inputs.push_back(model_arg);
      check_no_clobber(rec);
      const auto series = read_series_csv(in, tau);
      const Index T = series.size();
      // rows: anchor, step, feature index, forecast
      struct Row {
        Index anchor, step, feature;
        double value;
      };
      std::vector<Row> rows;
      Index horizon = n;
      if (model_arg == "persistence") {
        const auto anchors = anchor_range(1, T - n - 1, from, to);
        for (Index a : anchors)
          for (Index s = 0; s <= n; ++s)
            for (Index f = 0; f < kNumFeatures; ++f) rows.push_back({a, s, f, series.features(f, a - 1)});
      } else {
        const auto doc = io::read_json_file(model_arg);
        const auto kind = io::model_kind(doc);
        if (kind == "arima") {
          const auto model = io::arima_from_json(doc);
          const ArimaRollingForecaster roll(model, series.features.row(kUplinkPackets).transpose());
          const auto anchors = anchor_range(roll.min_anchor(), T - n - 1, from, to);
          for (Index a : anchors) {
            const VectorXd fc = roll.forecast(a, static_cast<int>(n));
            for (Index s = 0; s <= n; ++s) rows.push_back({a, s, kUplinkPackets, fc(s)});
          }
        } else if (kind == "recurrent_forecaster") {
          const auto f = io::forecaster_from_json(doc);
          horizon = f.shape.n;
          const auto sel = f.shape.mask.selected();
          const auto anchors = anchor_range(f.shape.m, T - horizon - 1, from, to);
          const MatrixXd flat = gru_forecast_batch(f, apply_mask(series, f.shape.mask), anchors);
          const auto F = static_cast<Index>(sel.size());
          for (std::size_t j = 0; j < anchors.size(); ++j)
            for (Index s = 0; s <= horizon; ++s)
              for (Index k = 0; k < F; ++k)
                rows.push_back({anchors[j], s, sel[static_cast<std::size_t>(k)], flat(s * F + k, static_cast<Index>(j))});
        } else {
          throw Error("cannot forecast with a " + kind + " model");
        }
      }
      write_file(out, [&](std::ostream& o) {
        csv::Writer w(o);
        w.header({"anchor_index", "horizon_step", "feature", "predicted", "actual"});
        for (const auto& r : rows)
          w.cell(r.anchor)
              .cell(r.step)
              .cell("f" + std::to_string(r.feature + 1))
              .cell(r.value)
              .cell(series.features(r.feature, r.anchor + r.step))
              .end_row();
      });
      return rec;
    };
  }

  // eval-sd-buckets
  std::vector<std::string> mask_names = {"FS-3", "FS-5"};
  bool no_arima = false;
  std::vector<double> edges;
  std::optional<fs::path> summary_path;
  GridOptions small_grid{2, 1, 2};
  {
    auto* sub = app.add_subcommand("eval-sd-buckets", "Score schemes per window-SD bucket on the test partition");
    add_series(sub);
    add_out(sub, "Bucket CSV (scheme,sd_fraction_lo,sd_fraction_hi,rmse)");
    sub->add_option("--m", m, "Observation window length")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--n", n, "Horizon")->capture_default_str()->check(CLI::NonNegativeNumber);
    sub->add_option("--masks", mask_names, "Feature sets for the recurrent predictor")->delimiter(',')->capture_default_str();
    sub->add_flag("--no-arima", no_arima, "Skip the ARIMA baseline");
    sub->add_option("--edges", edges, "Bucket edges of the SD fraction (default 0,0.2,...,2,inf)")->delimiter(',');
    small_grid.add(sub);
    rnn.add(sub);
    split.add(sub);
    add_seed(sub);
    add_jobs(sub);
    sub->add_option("--summary", summary_path, "Overall RMSE CSV");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, seed};
      if (summary_path) rec.outputs.push_back(*summary_path);
      check_no_clobber(rec);
      BucketExperimentConfig cfg;
      cfg.m = m;
      cfg.n = n;
      cfg.masks = parse_masks(mask_names);
      cfg.include_arima = !no_arima;
      cfg.hidden_dim = rnn.hidden;
      cfg.train = rnn.config(seed);
      cfg.arima_grid = small_grid.grid();
      cfg.train_frac = split.train;
      cfg.valid_frac = split.valid;
      if (!edges.empty()) cfg.edges = edges;
      cfg.jobs = jobs;
      const auto result = sd_bucket_experiment(read_series_csv(in, tau), cfg);
      write_file(out, [&](std::ostream& o) { write_bucket_csv(o, result.buckets); });
      if (summary_path) write_file(*summary_path, [&](std::ostream& o) { write_eval_csv(o, result.reports); });
      return rec;
    };
  }

  // eval-sweep
  std::vector<Index> m_values = {1, 2, 4, 8, 16}, n_values = {5, 20, 60};
  std::vector<std::string> scheme_names = {"persistence", "recurrent"};
  std::optional<fs::path> thresholds_path;
  {
    auto* sub = app.add_subcommand("eval-sweep", "RMSE over observation lengths m and horizons n");
    add_series(sub);
    add_out(sub, "Grid CSV (scheme,tau,m,n,feature_set,rmse,relative_gain_pct)");
    sub->add_option("--m-values", m_values, "Observation lengths")->delimiter(',')->capture_default_str();
    sub->add_option("--n-values", n_values, "Horizons")->delimiter(',')->capture_default_str();
    sub->add_option("--schemes", scheme_names, "persistence, arima, recurrent")->delimiter(',')->capture_default_str();
    sub->add_option("--mask", mask_name, "Feature set of the recurrent predictor")->capture_default_str();
    small_grid.add(sub);
    rnn.add(sub);
    split.add(sub);
    add_seed(sub);
    add_jobs(sub);
    sub->add_option("--thresholds", thresholds_path, "Per-n threshold m* CSV");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, seed};
      if (thresholds_path) rec.outputs.push_back(*thresholds_path);
      check_no_clobber(rec);
      SweepConfig cfg;
      cfg.m_values = m_values;
      cfg.n_values = n_values;
      cfg.schemes.clear();
      for (const auto& s : scheme_names) cfg.schemes.push_back(parse_scheme(s));
      cfg.mask = FeatureMask::parse(mask_name);
      cfg.hidden_dim = rnn.hidden;
      cfg.train = rnn.config(seed);
      cfg.arima_grid = small_grid.grid();
      cfg.train_frac = split.train;
      cfg.valid_frac = split.valid;
      cfg.jobs = jobs;
      const auto result = observation_horizon_sweep(read_series_csv(in, tau), cfg);
      write_file(out, [&](std::ostream& o) { write_eval_csv(o, result.cells); });
      if (thresholds_path) write_file(*thresholds_path, [&](std::ostream& o) { write_threshold_csv(o, result.thresholds); });
      return rec;
    };
  }

  // burst-sweep
  int points = 200;
  double lo = 1e-3, hi = 1.0;
  std::string loss_name = "squared";
  {
    auto* sub = app.add_subcommand("burst-sweep", "Train a burst predictor and sweep its decision threshold");
    add_series(sub);
    add_out(sub, "Sweep CSV (threshold,recall_burst,recall_nonburst,accuracy)");
    auto* t = sub->add_option("--threshold", threshold, "Relabel bursts with this f1 threshold");
    sub->add_option("--sd-multiple", sd_multiple, "Relabel bursts at this multiple of the training-partition SD")
        ->excludes(t);
    sub->add_option("--m", m, "Observation window length")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--mask", mask_name, "Feature set")->capture_default_str();
    sub->add_option("--loss", loss_name, "squared or cross-entropy")
        ->capture_default_str()
        ->check(CLI::IsMember({"squared", "cross-entropy"}));
    sub->add_option("--points", points, "Number of thresholds")->capture_default_str()->check(CLI::Range(2, 100000));
    sub->add_option("--lo", lo, "Smallest threshold")->capture_default_str();
    sub->add_option("--hi", hi, "Largest threshold")->capture_default_str();
    rnn.add(sub);
    split.add(sub);
    add_seed(sub);
    sub->add_option("--summary", summary_path, "Crossover and persistence baseline CSV");
    handlers[sub] = [&] {
      RunRecord rec{{in}, {out}, seed};
      if (summary_path) rec.outputs.push_back(*summary_path);
      check_no_clobber(rec);
      auto series = read_series_csv(in, tau);
      if (threshold) series = label_bursts(std::move(series), *threshold);
      else if (sd_multiple) {
        // Only the training partition may inform the labelling rule.
        const auto train = split_series(series, split.train, split.valid).train;
        series = label_bursts(std::move(series), *sd_multiple * series_sd(train));
      }
      if (series.burst_labels.empty()) throw Error("series has no burst labels; pass --threshold or --sd-multiple");
      const auto parts = split_series(series, split.train, split.valid);
      BurstTrainOptions opt;
      opt.m = m;
      opt.mask = FeatureMask::parse(mask_name);
      opt.hidden_dim = rnn.hidden;
      opt.train = rnn.config(seed);
      opt.loss = loss_name == "squared" ? LossKind::squared_error : LossKind::cross_entropy;
      const MatrixXd va = apply_mask(parts.valid, opt.mask);
      const auto predictor = train_burst_predictor(apply_mask(parts.train, opt.mask), parts.train.burst_labels, opt,
                                                   &va, parts.valid.burst_labels);
      const MatrixXd test = apply_mask(parts.test, opt.mask);
      std::vector<Index> anchors;
      std::vector<int> labels, persist;
      for (Index a = m; a < parts.test.size(); ++a) {
        anchors.push_back(a);
        labels.push_back(parts.test.burst_labels[static_cast<std::size_t>(a)]);
        persist.push_back(parts.test.burst_labels[static_cast<std::size_t>(a - 1)]);
      }
      if (anchors.empty()) throw Error("test partition shorter than the window");
      const VectorXd probs = burst_probabilities(predictor, test, anchors);
      const auto sweep = sweep_thresholds(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
                                          labels, log_spaced_thresholds(points, lo, hi));
      write_file(out, [&](std::ostream& o) { write_sweep_csv(o, sweep); });
      if (summary_path)
        write_file(*summary_path, [&](std::ostream& o) {
          csv::Writer w(o);
          w.header({"scheme", "threshold", "recall_burst", "recall_nonburst", "accuracy"});
          const auto c = confusion(persist, labels);
          w.cell("persistence").cell("").cell(c.recall_burst()).cell(c.recall_nonburst()).cell(c.accuracy()).end_row();
          try {
            const auto x = find_crossover(sweep);
            w.cell("recurrent_crossover").cell(x.threshold).cell(x.recall).cell(x.recall).cell("").end_row();
          } catch (const Error&) {
            w.cell("recurrent_crossover").cell("none").cell("").cell("").cell("").end_row();
          }
        });
      return rec;
    };
  }

  // train-forest
  TraceArgs traces;
  ForestConfig forest_cfg;
  bool no_bootstrap = false;
  std::optional<fs::path> report_path;
  {
    auto* sub = app.add_subcommand("train-forest", "Train a random forest on per-interval features of labelled traces");
    traces.add(sub);
    sub->add_option("--tau", tau, "Interval length in seconds")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--mask", mask_name, "Feature set")->capture_default_str();
    add_out(sub, "Forest JSON");
    sub->add_option("--trees", forest_cfg.num_trees, "Number of trees")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--features-per-split", forest_cfg.features_per_split, "0 = ceil(sqrt(F))")->capture_default_str();
    sub->add_option("--max-depth", forest_cfg.limits.max_depth, "Depth limit")->capture_default_str();
    sub->add_option("--min-leaf", forest_cfg.limits.min_samples_leaf, "Minimum samples per leaf")->capture_default_str();
    sub->add_flag("--no-bootstrap", no_bootstrap, "Fit every tree on the full training set");
    split.add(sub);
    add_seed(sub);
    add_jobs(sub);
    sub->add_option("--report", report_path, "Held-out accuracy CSV");
    handlers[sub] = [&] {
      RunRecord rec{{}, {out}, seed};
      const auto loaded = traces.load(rec);
      if (report_path) rec.outputs.push_back(*report_path);
      check_no_clobber(rec);
      const auto mask = FeatureMask::parse(mask_name);
      std::vector<MatrixXd> tr, te;
      std::vector<int> ytr, yte;
      for (const auto& t : loaded) {
        const auto parts = split_series(featurize(t.records, tau), split.train, split.valid);
        tr.push_back(apply_mask(parts.train, mask));
        te.push_back(apply_mask(parts.test, mask));
        ytr.insert(ytr.end(), static_cast<std::size_t>(tr.back().cols()), t.label);
        yte.insert(yte.end(), static_cast<std::size_t>(te.back().cols()), t.label);
      }
      const auto cat = [&](const std::vector<MatrixXd>& parts) {
        Index cols = 0;
        for (const auto& p : parts) cols += p.cols();
        MatrixXd x(mask.count(), cols);
        Index at = 0;
        for (const auto& p : parts) {
          x.middleCols(at, p.cols()) = p;
          at += p.cols();
        }
        return x;
      };
      forest_cfg.bootstrap = !no_bootstrap;
      forest_cfg.seed = seed;
      const MatrixXd xtr = cat(tr), xte = cat(te);
      const int classes = static_cast<int>(traces.classes.size());
      const auto forest = forest_fit(xtr, ytr, classes, forest_cfg, jobs);
      io::write_json_file(out, io::to_json(forest));
      if (report_path)
        write_file(*report_path, [&](std::ostream& o) {
          AccuracyCell cell{"forest", mask.label(), tau, accuracy(forest_predict_all(forest, xte), yte), xtr.cols(),
                            xte.cols(), true};
          write_accuracy_csv(o, std::span<const AccuracyCell>(&cell, 1));
        });
      return rec;
    };
  }

  // classify-grid
  std::vector<double> taus = {1.0, 10.0};
  std::vector<std::string> grid_masks = {"FS-1", "FS-2", "FS-3", "FS-4", "FS-5", "FS-6"};
  std::vector<std::string> classifier_names = {"forest", "recurrent"};
  Index window = 5;
  {
    auto* sub = app.add_subcommand("classify-grid", "Accuracy of each classifier over feature sets and intervals");
    traces.add(sub);
    add_out(sub, "Grid CSV (classifier,feature_set,tau,accuracy,n_train,n_test)");
    sub->add_option("--taus", taus, "Interval lengths")->delimiter(',')->capture_default_str();
    sub->add_option("--masks", grid_masks, "Feature sets")->delimiter(',')->capture_default_str();
    sub->add_option("--classifiers", classifier_names, "forest, recurrent")
        ->delimiter(',')
        ->capture_default_str()
        ->check(CLI::IsMember({"forest", "recurrent"}));
    sub->add_option("--window", window, "Recurrent classifier window")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--trees", forest_cfg.num_trees, "Number of trees")->capture_default_str()->check(CLI::PositiveNumber);
    rnn.add(sub);
    split.add(sub);
    add_seed(sub);
    add_jobs(sub);
    handlers[sub] = [&] {
      RunRecord rec{{}, {out}, seed};
      const auto loaded = traces.load(rec);
      check_no_clobber(rec);
      ClassificationExperimentConfig cfg;
      cfg.classifiers.clear();
      for (const auto& c : classifier_names)
        cfg.classifiers.push_back(c == "forest" ? ClassifierKind::forest : ClassifierKind::recurrent);
      cfg.feature_sets = parse_masks(grid_masks);
      cfg.taus = taus;
      cfg.train_frac = split.train;
      cfg.valid_frac = split.valid;
      cfg.forest = forest_cfg;
      cfg.forest.seed = seed;
      cfg.window = window;
      cfg.hidden_dim = rnn.hidden;
      cfg.train = rnn.config(seed);
      cfg.jobs = jobs;
      const auto cells = run_classification_experiment(loaded, static_cast<int>(traces.classes.size()), cfg);
      write_file(out, [&](std::ostream& o) { write_accuracy_csv(o, cells); });
      return rec;
    };
  }

  // simulate
  std::optional<fs::path> config_path, chunk_log;
  std::vector<double> sweep_p;
  int seeds = 1;
  std::optional<std::uint64_t> sim_seed;
  std::optional<double> duration, lead, horizon;
  fs::path sim_out = "delays.csv";
  {
    auto* sub = app.add_subcommand("simulate", "Type-2 delay under burst-triggered prefetching");
    sub->add_option("--config", config_path, "Scenario JSON (missing keys keep the defaults)");
    sub->add_option("--sweep-p", sweep_p, "Prediction probabilities (default: the config's)")->delimiter(',');
    sub->add_option("--seeds", seeds, "Number of consecutive seeds per p")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", sim_seed, "First seed (default: the config's)");
    sub->add_option("--duration", duration, "Override simulated seconds");
    sub->add_option("--lead", lead, "Override the prediction lead in seconds");
    sub->add_option("--horizon", horizon, "Override the prefetch horizon in seconds");
    sub->add_option("--out", sim_out, "Delay CSV")->capture_default_str();
    sub->add_option("--chunk-log", chunk_log, "Per-chunk delay CSV (single run only)");
    add_jobs(sub);
    handlers[sub] = [&] {
      const fs::path& out = sim_out;
      RunRecord rec{{}, {out}, 0};
      SimConfig cfg;
      if (config_path) {
        rec.inputs.push_back(*config_path);
        cfg = io::sim_config_from_json(io::read_json_file(*config_path));
      }
      if (chunk_log) rec.outputs.push_back(*chunk_log);
      check_no_clobber(rec);
      if (duration) cfg.sim_duration_s = *duration;
      if (lead) cfg.prediction_lead_s = *lead;
      if (horizon) cfg.prefetch_horizon_s = *horizon;
      if (sim_seed) cfg.seed = *sim_seed;
      cfg.validate();
      rec.seed = cfg.seed;
      if (sweep_p.empty()) sweep_p = {cfg.prediction_prob};
      std::vector<std::uint64_t> seed_list;
      for (int s = 0; s < seeds; ++s) seed_list.push_back(cfg.seed + static_cast<std::uint64_t>(s));
      if (chunk_log) {
        if (sweep_p.size() != 1 || seeds != 1) throw Error("--chunk-log needs a single p and a single seed");
        cfg.prediction_prob = sweep_p.front();
        const auto result = run_simulation(cfg);
        const SweepRow row{cfg.prediction_prob, cfg.seed, result.stats};
        write_file(out, [&](std::ostream& o) { write_delay_csv(o, std::span<const SweepRow>(&row, 1)); });
        write_file(*chunk_log, [&](std::ostream& o) { write_chunk_log_csv(o, result.log.chunks); });
      } else {
        const auto rows = simulate_sweep(cfg, sweep_p, seed_list, jobs);
        write_file(out, [&](std::ostream& o) { write_delay_csv(o, rows); });
      }
      return rec;
    };
  }

  // synth
  std::string profile = "bursty";
  double synth_duration = 3600.0;
  {
    auto* sub = app.add_subcommand("synth", "Generate a synthetic packet trace");
    sub->add_option("--profile", profile, "bursty, surfing, video_call, voice_call or video_streaming")
        ->capture_default_str();
    sub->add_option("--duration", synth_duration, "Seconds of traffic")->capture_default_str()->check(CLI::PositiveNumber);
    add_seed(sub);
    add_out(sub, "Packet CSV");
    handlers[sub] = [&] {
      RunRecord rec{{}, {out}, seed};
      std::optional<synth::TrafficProfile> chosen;
      if (profile == "bursty") chosen = synth::bursty_user_profile();
      for (const auto& p : synth::app_profiles())
        if (p.name == profile) chosen = p;
      if (!chosen) throw Error("unknown profile '" + profile + "'");
      const auto records = synth::generate_trace(*chosen, synth_duration, seed);
      write_file(out, [&](std::ostream& o) { write_packet_csv(o, records); });
      return rec;
    };
  }

  // replay
  fs::path manifest;
  {
    auto* sub = app.add_subcommand("replay", "Re-run the command recorded in a manifest and verify its outputs");
    sub->add_option("--manifest", manifest, "Manifest JSON")->required();
    handlers[sub] = [&] {
      const auto doc = io::read_json_file(manifest);
      for (const auto& i : doc.at("inputs")) {
        const fs::path p = i.at("path").get<std::string>();
        if (sha256_file(p) != i.at("sha256").get<std::string>()) throw Error("input changed since the run: " + p.string());
      }
      const auto argv = doc.at("argv").get<std::vector<std::string>>();
      if (!argv.empty() && argv.front() == "replay") throw Error("manifest records a replay");
      const int code = dispatch(argv);
      if (code != 0) throw Error("replayed command failed with exit code " + std::to_string(code));
      int mismatched = 0;
      for (const auto& o : doc.at("outputs")) {
        const fs::path p = o.at("path").get<std::string>();
        if (sha256_file(p) != o.at("sha256").get<std::string>()) {
          std::cerr << "mismatch: " << p.string() << '\n';
          ++mismatched;
        }
      }
      if (mismatched) throw Error(std::to_string(mismatched) + " output(s) differ from the manifest");
      log::info("reproduced " + std::to_string(doc.at("outputs").size()) + " output(s)");
      return RunRecord{};
    };
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    return usage_error(subs.empty() ? app : *subs.front(), e.what());
  }

  log::level() = quiet ? log::Level::quiet : verbose ? log::Level::info : log::Level::warning;
  const CLI::App* sub = app.get_subcommands().front();
  try {
    const RunRecord rec = handlers.at(sub)();
    if (sub->get_name() != "replay") write_manifest(sub->get_name(), args, resolved_config(sub), rec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace tpred::cli
