#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "apgl/checkpoint.hpp"
#include "apgl/error.hpp"
#include "apgl/evaluation.hpp"
#include "apgl/graph.hpp"
#include "apgl/training.hpp"
#include "config.hpp"

namespace apgl::cli {

namespace fs = std::filesystem;

namespace {

// Flags of every config key plus --config, attached to one subcommand.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "flat key = value config file");
    for (const auto& k : config_keys()) {
      options[k.name] = app.add_option(flag_name(k.name), raw[k.name],
                                       k.help + " [" + k.default_value + "]");
    }
  }

  Settings resolve() const {
    Settings s;
    if (!config_path.empty()) s.merge_file(config_path);
    for (const auto& [name, opt] : options)
      if (opt->count() > 0) s.set(name, raw.at(name));
    return s;
  }
};

fs::path output_dir(const Settings& s) {
  if (s.is_set("output_dir")) return s.get("output_dir");
  if (const char* root = std::getenv("APGL_OUTPUT_ROOT"); root && *root)
    return fs::path(root) / "run";
  return fs::path("runs") / "run";
}

void require_dataset(const Settings& s) {
  if (!s.is_set("dataset")) throw UsageError("--dataset is required");
}

data::SplitDataset load_split(const Settings& s) {
  const auto ds = data::ingest(s.get("dataset"), s.min_count(), s.delimiter());
  return data::leave_one_out(ds);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

struct TrainOutcome {
  training::TrainState state;
  eval::MetricsReport valid;
  eval::MetricsReport test;
};

TrainOutcome run_training(Settings settings, const data::SplitDataset& split,
                          const fs::path& dir, std::ostream& out) {
  fs::create_directories(dir);
  settings.set("output_dir", dir.string());
  const auto config = settings.train_config();
  {
    auto f = open_out(dir / "config.resolved");
    f << settings.resolved();
  }
  auto metrics = open_out(dir / "metrics.log");
  auto timing = open_out(dir / "timing.log");

  auto rt = training::make_runtime(split, config);
  ad::Adam adam(rt.model.params, {.lr = config.lr});
  training::TrainHooks hooks;
  hooks.on_epoch = [&](const training::EpochRecord& r) {
    const auto line = training::format_epoch(r);
    metrics << line << '\n' << std::flush;
    timing << "epoch=" << r.epoch << " seconds=" << std::setprecision(6)
           << r.seconds << '\n' << std::flush;
    out << line << '\n';
  };
  hooks.on_improve = [&](const training::Runtime& current, const ad::Adam& opt) {
    ad::save_checkpoint(dir / "checkpoint.best", current.model.params, &opt);
  };

  TrainOutcome outcome;
  outcome.state = training::train(rt, adam, hooks);
  ad::save_checkpoint(dir / "checkpoint.final", rt.model.params, &adam);
  outcome.valid = training::evaluate_split(rt, eval::Split::Valid);
  outcome.test = training::evaluate_split(rt, eval::Split::Test);
  const auto valid_line = "final split=valid best_epoch=" +
                          std::to_string(outcome.state.best_epoch) + ' ' +
                          eval::format_metrics(outcome.valid);
  const auto test_line = "final split=test " + eval::format_metrics(outcome.test);
  metrics << valid_line << '\n' << test_line << '\n';
  out << valid_line << '\n' << test_line << '\n';
  return outcome;
}

int cmd_train(const ConfigFlags& flags, std::ostream& out) {
  const auto settings = flags.resolve();
  require_dataset(settings);
  settings.train_config();  // surface bad values as usage errors up front
  const auto split = load_split(settings);
  run_training(settings, split, output_dir(settings), out);
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "test";
  bool spectrum = false;
};

int cmd_eval(const ConfigFlags& flags, const EvalArgs& args, std::ostream& out) {
  auto settings = flags.resolve();
  require_dataset(settings);
  if (args.checkpoint.empty()) throw UsageError("--checkpoint is required");
  eval::Split which;
  if (args.split == "valid") {
    which = eval::Split::Valid;
  } else if (args.split == "test") {
    which = eval::Split::Test;
  } else {
    throw UsageError("--split: expected valid or test, got '" + args.split + "'");
  }
  const auto config = settings.train_config();
  const auto split = load_split(settings);
  auto rt = training::make_runtime(split, config);
  ad::load_checkpoint(args.checkpoint, rt.model.params, nullptr);
  const auto report = training::evaluate_split(rt, which);
  out << "split=" << args.split << ' ' << eval::format_metrics(report) << '\n';
  if (args.spectrum) {
    const auto dir = output_dir(settings);
    fs::create_directories(dir);
    const auto& table = rt.model.encoder.item_embeddings;
    const std::size_t d = table.dim(1);
    const auto rows = table.values().subspan(d);  // drop the padding row
    const auto report_s = eval::spectrum(rows, table.dim(0) - 1, d);
    auto csv = open_out(dir / "spectrum.csv");
    eval::write_spectrum_csv(csv, report_s);
    auto sv = open_out(dir / "spectrum.singular_values");
    eval::write_singular_values(sv, report_s);
    out << "spectrum written to " << (dir / "spectrum.csv").string() << '\n';
  }
  return kExitOk;
}

struct SynthArgs {
  data::SynthParams params;
  std::string out_path;
};

int cmd_synth(const SynthArgs& args, std::ostream& out) {
  if (args.out_path.empty()) throw UsageError("--out is required");
  const auto log = data::synth_generate(args.params);
  const fs::path path(args.out_path);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  auto f = open_out(path);
  data::write_log(f, log);
  if (!f.flush()) throw Error("cannot write " + path.string());
  out << "wrote " << log.size() << " interactions to " << path.string() << '\n';
  return kExitOk;
}

struct GridArgs {
  std::string lambdas = "0.05,0.1,0.2,0.4";
  std::string layers = "1,2,3";
};

int cmd_gridsearch(const ConfigFlags& flags, const GridArgs& args,
                   std::ostream& out, std::ostream& err) {
  const auto base = flags.resolve();
  require_dataset(base);
  base.train_config();
  const auto lambdas = split_list(args.lambdas);
  const auto layers = split_list(args.layers);
  if (lambdas.empty() || layers.empty()) {
    throw UsageError("--grid-lambda-gce and --grid-layers must be non-empty");
  }
  for (const auto& l : lambdas) parse_double("lambda_gce", l);
  for (const auto& l : layers) parse_size("layers", l);

  const auto split = load_split(base);
  const auto root = output_dir(base);
  fs::create_directories(root);

  struct Row {
    std::string cell, lambda, layers, status;
    double valid_ndcg20 = -1.0;
    std::size_t best_epoch = 0;
    eval::MetricsReport test;
  };
  std::vector<Row> rows;
  for (const auto& lam : lambdas) {
    for (const auto& lay : layers) {
      Row row;
      row.cell = "lambda_gce=" + lam + ",layers=" + lay;
      row.lambda = lam;
      row.layers = lay;
      row.status = "ok";
      Settings cell = base;
      cell.set("lambda_gce", lam);
      cell.set("layers", lay);
      const auto dir = root / ("cell_lambda" + lam + "_layers" + lay);
      try {
        std::ostringstream quiet;
        const auto outcome = run_training(cell, split, dir, quiet);
        row.valid_ndcg20 = outcome.state.best_ndcg20;
        row.best_epoch = outcome.state.best_epoch;
        row.test = outcome.test;
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
        err << "cell " << row.cell << " failed: " << e.what() << '\n';
      }
      out << row.cell << ' ' << row.status << '\n';
      rows.push_back(std::move(row));
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.valid_ndcg20 > b.valid_ndcg20;
  });
  auto f = open_out(root / "grid_summary.tsv");
  f << std::setprecision(10)
    << "lambda_gce\tlayers\tbest_epoch\tvalid_ndcg@20\ttest_hr@10\ttest_ndcg@10"
       "\ttest_hr@20\ttest_ndcg@20\tstatus\n";
  bool failed = false;
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    failed |= !ok;
    f << r.lambda << '\t' << r.layers << '\t' << r.best_epoch << '\t'
      << r.valid_ndcg20 << '\t' << (ok ? r.test.hr_at(10) : 0.0) << '\t'
      << (ok ? r.test.ndcg_at(10) : 0.0) << '\t' << (ok ? r.test.hr_at(20) : 0.0)
      << '\t' << (ok ? r.test.ndcg_at(20) : 0.0) << '\t' << r.status << '\n';
  }
  return failed ? kExitRuntime : kExitOk;
}

struct GraphArgs {
  std::string dataset;
  std::string delimiter = "auto";
  int min_count = 5;
  std::size_t window = 2;
  std::string degree_mode = "weighted";
  std::string out_path;
};

int cmd_build_graph(const GraphArgs& args, std::ostream& out) {
  if (args.dataset.empty()) throw UsageError("--dataset is required");
  Settings s;
  s.set("delimiter", args.delimiter);
  if (args.min_count < 1) throw UsageError("--min-count: must be at least 1");
  graph::DegreeMode mode;
  if (args.degree_mode == "weighted") {
    mode = graph::DegreeMode::Weighted;
  } else if (args.degree_mode == "count") {
    mode = graph::DegreeMode::Count;
  } else {
    throw UsageError("--degree-mode: expected weighted or count, got '" +
                     args.degree_mode + "'");
  }
  if (args.window < 1) throw UsageError("--window: must be at least 1");
  const auto split = data::leave_one_out(
      data::ingest(args.dataset, args.min_count, s.delimiter()));
  std::vector<std::vector<data::ItemId>> seqs;
  for (const auto& u : split.users) seqs.push_back(u.train);
  const auto g =
      graph::build_global_graph(seqs, split.num_items, args.window, mode);
  if (args.out_path.empty()) {
    graph::write_graph(out, g);
  } else {
    auto f = open_out(args.out_path);
    graph::write_graph(f, g);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Sequential recommendation with an adaptive global item graph",
               "apgl"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, grid_flags;
  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  train_flags.attach(*train);

  EvalArgs eval_args;
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_flags.attach(*evalc);
  evalc->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file");
  evalc->add_option("--split", eval_args.split, "valid | test");
  evalc->add_flag("--spectrum", eval_args.spectrum,
                  "write spectrum.csv of the item embeddings to the output dir");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a planted-chain interaction log");
  synth->add_option("--num-users", synth_args.params.num_users);
  synth->add_option("--num-items", synth_args.params.num_items);
  synth->add_option("--seq-len", synth_args.params.seq_len);
  synth->add_option("--markov-order", synth_args.params.markov_order);
  synth->add_option("--noise", synth_args.params.noise);
  synth->add_option("--seed", synth_args.params.seed);
  synth->add_option("--out", synth_args.out_path, "output log path");

  GridArgs grid_args;
  auto* grid = app.add_subcommand("gridsearch", "train every grid cell and rank them");
  grid_flags.attach(*grid);
  grid->add_option("--grid-lambda-gce", grid_args.lambdas, "comma-separated");
  grid->add_option("--grid-layers", grid_args.layers, "comma-separated");

  GraphArgs graph_args;
  auto* bg = app.add_subcommand("build-graph", "dump the finalized item graph");
  bg->add_option("--dataset", graph_args.dataset);
  bg->add_option("--delimiter", graph_args.delimiter);
  bg->add_option("--min-count", graph_args.min_count);
  bg->add_option("--window", graph_args.window);
  bg->add_option("--degree-mode", graph_args.degree_mode, "weighted | count");
  bg->add_option("--out", graph_args.out_path, "output path (default stdout)");

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags, out);
    if (evalc->parsed()) return cmd_eval(eval_flags, eval_args, out);
    if (synth->parsed()) return cmd_synth(synth_args, out);
    if (grid->parsed()) return cmd_gridsearch(grid_flags, grid_args, out, err);
    if (bg->parsed()) return cmd_build_graph(graph_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace apgl::cli
