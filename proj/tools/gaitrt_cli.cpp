#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "gaitrt/features.hpp"
#include "gaitrt/pipeline.hpp"

using namespace gaitrt;
namespace fs = std::filesystem;

namespace {

void set_log_level() {
  const char* env = std::getenv("GAITRT_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else fail(ErrorCode::Usage, "GAITRT_LOG_LEVEL must be error, warn, info or debug, got '" + level + "'");
  spdlog::set_pattern("[%l] %v");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot create " + path.string());
  os << text;
  if (!os) fail(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TrainedModel load_model(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  return read_model(is);
}

// The three chained models in any order: GRF, a window-1 angle model and a
// windowed moment model.
ModelBundle load_bundle(const std::vector<std::string>& paths) {
  if (paths.size() != 3) fail(ErrorCode::Usage, "give --model three times: GRF, angle and moment models");
  ModelBundle b;
  int seen = 0;
  for (const auto& p : paths) {
    TrainedModel m = load_model(p);
    if (m.config.name == "GRF") b.grf = std::move(m), seen |= 1;
    else if (m.config.uses_resnet()) b.moments = std::move(m), seen |= 4;
    else b.angles = std::move(m), seen |= 2;
  }
  if (seen != 7) fail(ErrorCode::ModelMismatch, "need one GRF, one angle and one moment model");
  check_chain(b);
  return b;
}

SessionConfig load_session_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path);
  return read_session_config(is, path);
}

ProtocolConfig load_protocol_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path);
  return read_protocol_config(is, path);
}

std::vector<Trial> pick_trials(const Dataset& ds, int subject, int trial) {
  std::vector<Trial> out;
  for (const auto& t : ds.trials)
    if ((subject < 0 || t.subject_id == subject) && (trial < 0 || t.trial_id == trial)) out.push_back(t);
  if (out.empty()) fail(ErrorCode::DataError, "no trial matches the subject/trial selection");
  return out;
}

SessionResult session_and_logs(PacketSource& src, const ModelBundle& models, SessionConfig cfg, const fs::path& out) {
  cfg.out_dir = out;
  cfg.keep_logs = false;
  ModelPredictor predictor(models);
  SessionResult r = run_session(src, predictor, cfg);
  const std::string lat = latency_report(r);
  write_text(out / "latency.txt", lat);
  std::cout << lat;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wearable gait estimation: synthetic data, model training and the real-time pipeline"};
  app.require_subcommand(1);

  std::string config, dataset, out, listen;
  std::vector<std::string> models;
  std::uint64_t seed = 0;
  bool fast = false;

  // generate
  auto* gen = app.add_subcommand("generate", "synthetic cohort to a dataset directory");
  int subjects = 8, trials = 10;
  double duration = 20.0;
  gen->add_option("--out", out, "dataset directory")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--subjects", subjects, "number of subjects")->check(CLI::PositiveNumber);
  gen->add_option("--trials", trials, "trials per subject")->check(CLI::PositiveNumber);
  gen->add_option("--duration", duration, "trial length in seconds")->check(CLI::PositiveNumber);

  // train
  auto* train = app.add_subcommand("train", "evaluate a protocol, then fit the final model on all rows");
  train->add_option("--config", config, "protocol config (key=value)")->required();
  train->add_option("--dataset", dataset, "dataset directory (overrides the config)");
  train->add_option("--seed", seed, "seed (overrides the config)");
  train->add_option("--out", out, "output directory for the model and report")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "per-fold and aggregate metrics, or a saved model on a dataset");
  eval->add_option("--config", config, "protocol config; runs the protocol");
  eval->add_option("--model", models, "saved model; evaluates it on --dataset");
  eval->add_option("--dataset", dataset, "dataset directory");
  eval->add_option("--seed", seed, "seed (overrides the config)");
  eval->add_option("--out", out, "write the report here as well");

  // run
  auto* run = app.add_subcommand("run", "live UDP session");
  double run_s = 20.0;
  run->add_option("--listen", listen, "addr:port")->required();
  run->add_option("--model", models, "GRF, angle and moment models")->required();
  run->add_option("--config", config, "session config (key=value)");
  run->add_option("--duration", run_s, "session length in seconds")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "log directory")->required();

  // replay
  auto* replay = app.add_subcommand("replay", "replay a dump file through the pipeline");
  std::string dump_path;
  replay->add_option("dump", dump_path, "dump file")->required();
  replay->add_option("--model", models, "GRF, angle and moment models")->required();
  replay->add_option("--config", config, "session config (key=value)");
  replay->add_option("--out", out, "log directory")->required();
  replay->add_flag("--as-fast-as-possible", fast, "ignore recorded packet timing");

  // dump
  auto* dump = app.add_subcommand("dump", "record UDP packets, or synthesize them from a dataset trial");
  int subject = -1, trial = -1;
  double dump_s = 20.0, jitter = 0.0, drop = 0.0;
  dump->add_option("--out", out, "dump file")->required();
  dump->add_option("--listen", listen, "record from addr:port");
  dump->add_option("--duration", dump_s, "recording length in seconds")->check(CLI::PositiveNumber);
  dump->add_option("--dataset", dataset, "synthesize from this dataset");
  dump->add_option("--subject", subject, "subject id of the trial");
  dump->add_option("--trial", trial, "trial id");
  dump->add_option("--jitter", jitter, "arrival jitter bound in ms")->check(CLI::NonNegativeNumber);
  dump->add_option("--drop", drop, "packet drop probability")->check(CLI::Range(0.0, 1.0));
  dump->add_option("--seed", seed, "jitter and drop seed");

  // report
  auto* report = app.add_subcommand("report", "compare session logs with reference ground truth");
  std::string logs_dir;
  report->add_option("logs", logs_dir, "log directory of a session")->required();
  report->add_option("--dataset", dataset, "reference dataset")->required();
  report->add_option("--subject", subject, "restrict the reference to a subject");
  report->add_option("--trial", trial, "restrict the reference to a trial id");
  report->add_option("--out", out, "directory for comparison.csv and profiles.csv")->required();
  bool filtered = false;
  report->add_flag("--filtered", filtered, "compare the smoothed angle and moment logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "error: " << error_code_name(ErrorCode::Usage) << '\n';
    return static_cast<int>(ErrorCode::Usage);
  }

  try {
    set_log_level();
    if (*gen) {
      CohortOptions opt;
      opt.trials_per_subject = trials;
      opt.trial.duration_s = duration;
      const Cohort c = generate_cohort(subjects, seed, opt);
      write_dataset(out, c.dataset);
      spdlog::info("wrote {} trials of {} subjects to {}", c.dataset.trials.size(), subjects, out);
    } else if (*train) {
      ProtocolConfig pc = load_protocol_config(config);
      if (!dataset.empty()) pc.dataset = dataset;
      if (train->count("--seed")) pc.protocol.seed = seed;
      if (pc.dataset.empty()) fail(ErrorCode::Usage, "no dataset: set 'dataset' in the config or pass --dataset");
      const auto frames = preprocess_dataset(read_dataset(pc.dataset));
      const FeatureTable table = build_table(pc.model, frames, pc.table);
      const ProtocolResult res = run_protocol(pc.protocol, table, pc.spec);
      const std::string text = protocol_report(res);
      std::vector<std::size_t> rows(table.rows());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      TrainedModel model = train_model(table, rows, pc.spec, pc.protocol.seed);
      fs::create_directories(out);
      const fs::path model_path = fs::path(out) / (pc.model.name + ".grtm");
      {
        std::ofstream os(model_path, std::ios::binary);
        if (!os) fail(ErrorCode::IoError, "cannot create " + model_path.string());
        write_model(os, model);
      }
      write_text(fs::path(out) / (pc.model.name + "_report.txt"), text);
      std::cout << text;
      spdlog::info("model written to {}", model_path.string());
    } else if (*eval) {
      if (config.empty() == models.empty()) fail(ErrorCode::Usage, "eval takes either --config or one --model");
      std::string text;
      if (!config.empty()) {
        ProtocolConfig pc = load_protocol_config(config);
        if (!dataset.empty()) pc.dataset = dataset;
        if (eval->count("--seed")) pc.protocol.seed = seed;
        if (pc.dataset.empty()) fail(ErrorCode::Usage, "no dataset: set 'dataset' in the config or pass --dataset");
        const auto frames = preprocess_dataset(read_dataset(pc.dataset));
        text = protocol_report(run_protocol(pc.protocol, build_table(pc.model, frames, pc.table), pc.spec));
      } else {
        if (models.size() != 1) fail(ErrorCode::Usage, "eval takes one --model");
        if (dataset.empty()) fail(ErrorCode::Usage, "eval --model needs --dataset");
        TrainedModel m = load_model(models[0]);
        const auto frames = preprocess_dataset(read_dataset(dataset));
        const FeatureTable table = build_table(m.config, frames);
        const Matrix pred = m.predict(table.X);
        const auto names = m.config.output_names();
        for (std::size_t o = 0; o < names.size(); ++o)
          text += to_key_value(compute_report(table.Y.column(o), pred.column(o)), names[o] + ".");
      }
      std::cout << text;
      if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "eval.txt", text);
      }
    } else if (*run) {
      const ModelBundle b = load_bundle(models);
      auto src = udp_source(listen, run_s);
      spdlog::info("listening on {} for {} s", listen, run_s);
      session_and_logs(*src, b, load_session_config(config), out);
    } else if (*replay) {
      const ModelBundle b = load_bundle(models);
      SessionConfig cfg = load_session_config(config);
      cfg.as_fast_as_possible = fast;
      auto src = replay_source(read_dump_file(dump_path), fast);
      session_and_logs(*src, b, cfg, out);
    } else if (*dump) {
      std::vector<DumpRecord> recs;
      if (!listen.empty() == !dataset.empty()) fail(ErrorCode::Usage, "dump takes either --listen or --dataset");
      if (!listen.empty()) {
        auto src = udp_source(listen, dump_s);
        src->start();
        for (DumpRecord r; src->next(r);) recs.push_back(r);
      } else {
        const auto picked = pick_trials(read_dataset(dataset), subject, trial);
        SessionSimOptions opt;
        opt.jitter_ms = jitter;
        opt.drop_rate = drop;
        opt.seed = seed;
        recs = session_from_trial(picked.front(), opt);
      }
      write_dump_file(out, recs);
      spdlog::info("{} packets written to {}", recs.size(), out);
    } else if (*report) {
      const auto logs = read_logs(logs_dir);
      const auto ref = pick_trials(read_dataset(dataset), subject, trial);
      ComparisonOptions opt;
      opt.filtered = filtered;
      const auto rows = compare_to_reference(logs, ref, opt);
      fs::create_directories(out);
      const std::string text = comparison_report(rows);
      write_text(fs::path(out) / "comparison.csv", text);
      std::ofstream prof(fs::path(out) / "profiles.csv");
      write_profiles_csv(prof, rows);
      std::cout << text;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
