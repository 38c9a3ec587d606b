#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "biqa/distort.hpp"
#include "biqa/ensemble.hpp"
#include "biqa/error.hpp"
#include "biqa/harness.hpp"
#include "biqa/manifest.hpp"
#include "biqa/metrics.hpp"
#include "biqa/mos.hpp"
#include "biqa/rating_http.hpp"
#include "biqa/rating_service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace biqa;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3;

struct Run {
  fs::path config_path;
  json config = json::object();
  fs::path base;  // directory of the config file
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out = "out";

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_relative() ? (base / path).lexically_normal() : path;
  }
  fs::path require_path(const std::string& key) const {
    if (!config.contains(key)) fail(ErrorCode::invalid_config, "config is missing '" + key + "'");
    return resolve(config.at(key).get<std::string>());
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void ensure_out(const Run& run) {
  std::error_code ec;
  fs::create_directories(run.out, ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory " + run.out.string());
}

// "path" or {"path", "range": [lo, hi], "invert"}
Manifest manifest_from(const Run& run, const json& j) {
  if (j.is_string()) return load_manifest(run.resolve(j.get<std::string>()));
  ScoreRange range;
  if (j.contains("range")) {
    range.lo = j.at("range").at(0).get<double>();
    range.hi = j.at("range").at(1).get<double>();
  }
  auto m = load_manifest(run.resolve(j.at("path").get<std::string>()), range, j.value("invert", false));
  if (j.contains("id")) m.dataset_id = j.at("id").get<std::string>();
  return m;
}

EnsembleConfig model_config(const Run& run) {
  return config_from_json(run.config.value("model", json::object()));
}

TrainOptions train_options(const Run& run) {
  const json t = run.config.value("train", json::object());
  TrainOptions o;
  o.epochs = t.value("epochs", o.epochs);
  o.batch_size = t.value("batch_size", o.batch_size);
  o.schedule.base_lr = t.value("base_lr", o.schedule.base_lr);
  o.schedule.drop_factor = t.value("drop_factor", o.schedule.drop_factor);
  o.schedule.drop_period = t.value("drop_period", o.schedule.drop_period);
  o.adam.beta1 = t.value("adam_beta1", o.adam.beta1);
  o.adam.beta2 = t.value("adam_beta2", o.adam.beta2);
  o.adam.epsilon = t.value("adam_epsilon", o.adam.epsilon);
  o.augment = t.value("augment", o.augment);
  o.val_crops = t.value("val_crops", o.val_crops);
  if (o.epochs < 0 || o.batch_size < 1 || !(o.schedule.base_lr > 0.0))
    fail(ErrorCode::invalid_config, "invalid training options");
  return o;
}

net::LossSpec loss_spec(const Run& run) {
  const json l = run.config.value("loss", json::object());
  net::LossSpec s;
  s.kind = net::loss_kind_from_string(l.value("kind", std::string("mse")));
  s.huber_delta = l.value("huber_delta", s.huber_delta);
  s.validate();
  return s;
}

ExperimentOptions experiment_options(const Run& run) {
  ExperimentOptions o;
  o.repeats = run.config.value("repeats", 10);
  o.train_fraction = run.config.value("train_fraction", 0.8);
  o.base_seed = run.seed;
  o.threads = run.threads;
  o.train = train_options(run);
  o.loss = loss_spec(run);
  o.eval_crops = run.config.value("crops", kDefaultCrops);
  o.retain_weights = run.config.value("retain_weights", true);
  if (run.config.contains("checkpoint"))
    o.initial = std::make_shared<const EnsembleModel>(load_model(run.require_path("checkpoint")));
  return o;
}

void write_residuals(const std::vector<Residual>& residuals, const fs::path& dir) {
  SplitReport r;
  r.residuals = residuals;
  const SplitReport reports[] = {r};
  residual_report(reports, 0, dir);
}

int cmd_distort(const Run& run) {
  std::vector<DistortionSpec> specs;
  if (run.config.contains("classes")) {
    for (const auto& c : run.config.at("classes")) specs.push_back(parse_label(c.get<std::string>()));
  } else {
    const auto types = run.config.value("types", std::vector<int>{});
    const auto levels = run.config.value("levels", std::vector<int>{1, 2, 3, 4, 5});
    for (const auto& s : full_sweep())
      if ((types.empty() || std::find(types.begin(), types.end(), s.type_id) != types.end()) &&
          std::find(levels.begin(), levels.end(), s.level) != levels.end())
        specs.push_back(s);
  }
  ensure_out(run);
  const auto corpus = generate_corpus(run.require_path("sources"), run.out, specs, run.seed);
  json failures = json::array();
  for (const auto& f : corpus.failures)
    failures.push_back({{"source", f.source.string()}, {"class", label(f.spec)}, {"message", f.message}});
  write_json(run.out / "distort_report.json",
             {{"generated", corpus.entries.size()}, {"classes", corpus.class_count()}, {"failures", failures}});
  std::cout << "generated " << corpus.entries.size() << " images (" << corpus.failures.size() << " failures)\n";
  return corpus.entries.empty() ? kExitData : kExitOk;
}

int cmd_pretrain(const Run& run) {
  const auto corpus = read_corpus_manifest(run.require_path("corpus"));
  auto config = model_config(run);
  config.n_classes_pretrain = corpus.class_count();
  auto model = EnsembleModel::build(config, run.seed, HeadKind::classifier);
  const auto log = pretrain(model, corpus, train_options(run), RngStream(run.seed, 1),
                            run.config.at("corpus").get<std::string>());
  ensure_out(run);
  save_model(model, run.out / "model.ckpt");
  log.write_jsonl(run.out / "train_log.jsonl");
  std::cout << "pretrained " << model.parameter_count() << " parameters, final loss "
            << log.epochs.back().train_loss << "\n";
  return kExitOk;
}

int cmd_transfer(const Run& run) {
  const auto model = transfer_to_regressor(load_model(run.require_path("checkpoint")), run.seed);
  ensure_out(run);
  save_model(model, run.out / "model.ckpt");
  return kExitOk;
}

int cmd_finetune(const Run& run) {
  EnsembleModel model = run.config.contains("checkpoint")
                            ? load_model(run.require_path("checkpoint"))
                            : EnsembleModel::build(model_config(run), run.seed, HeadKind::regressor);
  if (model.head_kind() == HeadKind::classifier) model = transfer_to_regressor(model, run.seed);
  if (!run.config.contains("train_manifest")) fail(ErrorCode::invalid_config, "config is missing 'train_manifest'");
  const auto train = manifest_from(run, run.config.at("train_manifest"));
  std::optional<Manifest> validation;
  if (run.config.contains("validation_manifest"))
    validation = manifest_from(run, run.config.at("validation_manifest"));
  const auto log = finetune(model, train, validation ? &*validation : nullptr, loss_spec(run), train_options(run),
                            RngStream(run.seed, 1));
  ensure_out(run);
  save_model(model, run.out / "model.ckpt");
  log.write_jsonl(run.out / "train_log.jsonl");
  return kExitOk;
}

int cmd_evaluate(const Run& run) {
  const auto model = load_model(run.require_path("checkpoint"));
  if (!run.config.contains("manifest")) fail(ErrorCode::invalid_config, "config is missing 'manifest'");
  const auto manifest = manifest_from(run, run.config.at("manifest"));
  const auto [scores, ids] = predict_manifest(model, manifest, run.config.value("crops", kDefaultCrops), run.seed);
  const auto report = evaluate(scores);
  ensure_out(run);
  write_json(run.out / "metrics.json", to_json(report));
  write_pwrc_curve(report, run.out / "pwrc_curve.csv");
  std::vector<Residual> residuals;
  for (std::size_t i = 0; i < ids.size(); ++i)
    residuals.push_back({ids[i], scores.subjective[i], scores.predicted[i], scores.predicted[i] - scores.subjective[i]});
  write_residuals(residuals, run.out);
  std::cout << to_json(report).dump() << "\n";
  return kExitOk;
}

int cmd_experiment(const Run& run) {
  if (!run.config.contains("manifest")) fail(ErrorCode::invalid_config, "config is missing 'manifest'");
  const auto manifest = manifest_from(run, run.config.at("manifest"));
  const auto result = run_experiment(manifest, model_config(run), experiment_options(run));
  write_experiment(result, run.out);
  std::cout << to_json(result.summary).at("metrics").dump() << "\n";
  return result.summary.completed > 0 ? kExitOk : kExitNumeric;
}

int cmd_crossval(const Run& run) {
  std::vector<Manifest> train;
  for (const auto& j : run.config.at("train_manifests")) train.push_back(manifest_from(run, j));
  const auto test = manifest_from(run, run.config.at("test_manifest"));
  const auto result = cross_dataset(train, test, model_config(run), experiment_options(run), run.seed);
  ensure_out(run);
  write_json(run.out / "metrics.json", to_json(result.metrics));
  write_pwrc_curve(result.metrics, run.out / "pwrc_curve.csv");
  write_residuals(result.residuals, run.out);
  result.log.write_jsonl(run.out / "train_log.jsonl");
  std::cout << to_json(result.metrics).dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const Run& run) {
  const auto manifest = manifest_from(run, run.config.at("manifest"));
  std::vector<AblationVariant> variants;
  for (const auto& v : run.config.value("variants", std::vector<std::string>{"full", "drop_branch_a", "drop_branch_b",
                                                                                "drop_head"}))
    variants.push_back(ablation_from_string(v));
  const auto results = ablation_sweep(manifest, model_config(run), variants, experiment_options(run));
  json summary = json::object();
  for (const auto& [variant, result] : results) {
    write_experiment(result, run.out / to_string(variant));
    summary[to_string(variant)] = to_json(result.summary);
  }
  write_json(run.out / "ablation.json", summary);
  return kExitOk;
}

int cmd_mos(const Run& run) {
  auto table = read_ratings(run.require_path("ratings"));
  json report = json::object();
  if (run.config.value("screen", true)) {
    ScreeningOptions o;
    o.z_threshold = run.config.value("z_threshold", o.z_threshold);
    o.correlation_floor = run.config.value("correlation_floor", o.correlation_floor);
    o.max_outlier_fraction = run.config.value("max_outlier_fraction", o.max_outlier_fraction);
    auto screened = screen_outliers(table, o);
    report["rejected"] = screened.rejected;
    report["z_threshold"] = o.z_threshold;
    report["correlation_floor"] = o.correlation_floor;
    report["max_outlier_fraction"] = o.max_outlier_fraction;
    table = std::move(screened.table);
  }
  const bool population = run.config.value("population_variance", true);
  const auto records = aggregate(table, population);
  const int bins = run.config.value("bins", kDefaultHistogramBins);
  ensure_out(run);
  write_mos(records, run.out / "mos.csv");
  write_histogram(mos_histogram(records, bins), run.out / "histogram.csv");
  report["images"] = records.size();
  report["population_variance"] = population;
  report["bins"] = bins;
  write_json(run.out / "mos_report.json", report);
  return kExitOk;
}

RatingServer* g_server = nullptr;

int cmd_serve(const Run& run) {
  const fs::path state = run.config.contains("state_dir") ? run.require_path("state_dir") : run.out / "state";
  RatingService service(state, {}, run.config.value("snapshot_every", std::size_t{256}));
  for (const auto& [name, dir] : run.config.value("image_sets", json::object()).items())
    service.register_image_set(image_set_from_directory(name, run.resolve(dir.get<std::string>())));
  RatingServer server(service);
  const int port = server.bind(run.config.value("host", std::string("127.0.0.1")), run.config.value("port", 8080));
  if (port < 0) fail(ErrorCode::io, "cannot bind the rating server");
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::cout << "listening on port " << port << std::endl;
  server.serve();
  service.snapshot();
  return kExitOk;
}

int cmd_gradcheck(const Run& run) {
  const int cases = run.config.value("cases", 100);
  const double tolerance = run.config.value("tolerance", 1e-4);
  json layers = json::array();
  bool ok = true;
  for (const auto& s : net::fuzz_grad_checks(cases, run.seed, tolerance)) {
    layers.push_back({{"name", s.name}, {"cases", s.cases}, {"failures", s.failures}, {"max_rel_error", s.max_rel_error}});
    ok = ok && s.failures == 0;
  }
  const auto model = model_grad_check(model_config(run), run.seed, 2, run.config.value("max_entries_per_tensor", 64));
  ok = ok && model.passed(tolerance);
  ensure_out(run);
  write_json(run.out / "gradcheck.json",
             {{"tolerance", tolerance}, {"layers", layers}, {"model_max_rel_error", model.max_rel_error()}, {"passed", ok}});
  std::cout << (ok ? "gradient check passed" : "gradient check FAILED") << ", model max relative error "
            << model.max_rel_error() << "\n";
  return ok ? kExitOk : kExitNumeric;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_config:
    case ErrorCode::invalid_argument: return kExitUsage;
    case ErrorCode::numeric: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind image-quality assessment workbench"};
  app.require_subcommand(1);
  Run run;
  std::string config_file;
  const std::map<std::string, std::pair<std::string, int (*)(const Run&)>> commands{
      {"distort", {"generate a synthetic distortion corpus", cmd_distort}},
      {"pretrain", {"train the ensemble as a distortion classifier", cmd_pretrain}},
      {"transfer", {"swap the classification head for a regression head", cmd_transfer}},
      {"finetune", {"fine-tune a quality regressor on a manifest", cmd_finetune}},
      {"evaluate", {"score a manifest with a trained model", cmd_evaluate}},
      {"experiment", {"repeated random-split experiment", cmd_experiment}},
      {"crossval", {"cross-dataset training and testing", cmd_crossval}},
      {"ablate", {"ablation sweep with paired splits", cmd_ablate}},
      {"mos", {"aggregate, screen and histogram subjective ratings", cmd_mos}},
      {"serve", {"run the rating HTTP service", cmd_serve}},
      {"gradcheck", {"finite-difference gradient checks", cmd_gradcheck}},
  };
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->add_option("config", config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", run.seed, "base seed");
    sub->add_option("--threads", run.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", run.out, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (!config_file.empty()) {
      run.config_path = config_file;
      run.base = run.config_path.parent_path();
      std::ifstream in(config_file);
      try {
        run.config = json::parse(in, nullptr, true, true);
      } catch (const json::exception& e) {
        std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
        return kExitUsage;
      }
      if (!run.config.is_object()) {
        std::cerr << "error: config must be a JSON object\n";
        return kExitUsage;
      }
    }
    const auto* sub = app.get_subcommands().front();
    return commands.at(sub->get_name()).second(run);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
