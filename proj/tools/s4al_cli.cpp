#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "s4al/acquire.hpp"
#include "s4al/config.hpp"
#include "s4al/dataset_io.hpp"
#include "s4al/experiment.hpp"
#include "s4al/jsonl.hpp"
#include "s4al/losses.hpp"

using namespace s4al;
using nlohmann::json;

namespace {

json iou_to_json(const IouResult& r) {
  json per = json::array();
  for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"per_class", per}, {"miou", r.miou}};
}

int cmd_synth(const std::string& config_path, const std::string& out) {
  const ExperimentConfig cfg = load_config(config_path);
  save_dataset(generate_synthetic(cfg.synthetic), out);
  return 0;
}

int cmd_split(const std::string& config_path, const std::string& out) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset ds = load_experiment_dataset(cfg);
  const PoolState pool = initial_pool(cfg, ds);
  save_pool(pool, out);
  std::cout << json{{"images", pool.size()},
                    {"labeled", pool.count(ImageStatus::kLabeled)},
                    {"labeled_fraction", labeled_fraction(pool)}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out, const RunOptions& options) {
  const ExperimentConfig cfg = load_config(config_path);
  const ExperimentReport report = run_experiment(cfg, out, options);
  for (const CycleSummary& c : report.cycles) {
    json row{{"cycle", c.cycle}, {"labeled_fraction", c.labeled_fraction}, {"acquired_pixels", c.acquired_pixels}};
    if (c.teacher) row["miou_teacher"] = c.teacher->miou;
    if (c.student) row["miou_student"] = c.student->miou;
    std::cout << row.dump() << '\n';
  }
  if (!report.complete) std::cout << json{{"complete", false}}.dump() << '\n';
  return 0;
}

int cmd_train_cycle(const std::string& config_path, const std::string& pool_path, int cycle, bool final_stage,
                    const std::string& init, const std::string& out, const std::string& metrics) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset ds = load_experiment_dataset(cfg);
  const PoolState pool = load_pool(pool_path);
  TrainingSnapshot snap{std::nullopt, ReplayBuffer(cfg.cycle.replay_capacity), std::nullopt};
  if (!init.empty()) snap = load_training_checkpoint(init, cfg, ds.num_classes);
  else snap.pair.emplace(make_model(cfg, ds.num_classes, Rng::derive(cfg.cycle.seed, {2}).engine()()));
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    if (!metrics.empty()) append_jsonl(metrics, r.to_json());
    std::cout << r.to_json().dump() << '\n';
  };
  Rng rng = Rng::derive(cfg.cycle.seed, {3, static_cast<std::uint64_t>(cycle)});
  const CycleProgress progress = train_cycle(pool, ds, *snap.pair, cfg.train, snap.replay, cycle, final_stage, rng,
                                             hooks, snap.progress ? &*snap.progress : nullptr);
  save_training_checkpoint(out, *snap.pair, snap.replay, progress, cfg, false);
  return 0;
}

int cmd_score(const std::string& config_path, const std::string& ckpt, const std::string& network,
              const std::string& pool_path, const std::string& metric, const std::string& out) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset ds = load_experiment_dataset(cfg);
  const PoolState pool = load_pool(pool_path);
  require(pool.size() == ds.train.size(), "pool does not match the dataset");
  const auto model = load_network(ckpt, cfg, ds.num_classes, network);
  const AcquisitionMetric m = parse_metric(metric.empty() ? metric_name(cfg.cycle.metric) : metric);
  Rng rng = Rng::derive(cfg.cycle.seed, {4});
  std::vector<json> rows;
  for (std::size_t i : pool.unlabeled_stream()) {
    const Image* one[] = {&ds.train[i].image};
    const Tensor probs = softmax(model->infer(stack_images(one)));
    const ScoreMap scores = pixel_scores({probs.sample(0), probs.sample_size()}, probs.c, probs.h, probs.w, m, &rng);
    for (const RegionScore& r : region_scores(scores, pool.grid(), pool.known_mask(i), i))
      rows.push_back({{"image_id", pool.id(i)},
                      {"row", r.region.row},
                      {"col", r.region.col},
                      {"score", r.score},
                      {"unlabeled_pixels", r.unlabeled_pixels},
                      {"metric", metric_name(m)}});
  }
  write_jsonl(out, rows);
  return 0;
}

int cmd_select(const std::string& pool_path, const std::string& scores_path, int cycle, int k, long budget,
               const std::string& out, const std::string& pool_out) {
  PoolState pool = load_pool(pool_path);
  std::map<std::size_t, std::vector<RegionScore>> grouped;
  AcquisitionMetric metric = AcquisitionMetric::kEntropy;
  for (const json& j : read_jsonl(scores_path)) {
    const std::size_t image = pool.index_of(j.at("image_id"));
    grouped[image].push_back({image, {j.at("row"), j.at("col")}, j.at("score"), j.at("unlabeled_pixels")});
    metric = parse_metric(j.at("metric"));
  }
  std::vector<std::vector<RegionScore>> per_image;
  for (auto& [image, regions] : grouped) per_image.push_back(std::move(regions));
  const std::vector<Selection> sels = budget > 0 ? select_regions_global(per_image, static_cast<std::size_t>(budget))
                                                 : select_regions(per_image, k);
  std::map<Selection, double> score_of;
  for (const auto& regions : per_image)
    for (const RegionScore& r : regions) score_of[{r.image, r.region}] = r.score;
  std::vector<std::string> lines;
  std::string text;
  for (const Selection& s : sels)
    text += to_json_line({cycle, pool.id(s.image), s.region, score_of.at(s), metric}) + "\n";
  write_text_atomic(out, text);
  if (!pool_out.empty()) save_pool(reveal_regions(std::move(pool), sels, cycle), pool_out);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& network,
             const std::string& split) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset ds = load_experiment_dataset(cfg);
  const auto model = load_network(ckpt, cfg, ds.num_classes, network);
  require(split == "test" || split == "val", "split must be test or val");
  const EvalResult r = evaluate(*model, split == "test" ? ds.test : ds.val, ds.ignore_index);
  json out = iou_to_json(r.iou);
  out["loss"] = r.loss;
  out["network"] = network;
  out["split"] = split;
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning with semi-supervised segmentation training"};
  app.require_subcommand(1);

  std::string config, out, pool, ckpt, network = "best", metric, scores, pool_out, init, metrics, run_dir,
                                     split = "test";
  int cycle = 0, k = 4, stop_after = -1;
  long budget = 0;
  bool final_stage = false, verbose = false;
  RunOptions run_opts;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset described by [synthetic]");
  synth->add_option("--config", config, "Config file")->required();
  synth->add_option("--out", out, "Dataset directory")->required();

  auto* split_cmd = app.add_subcommand("split", "Write the initial labeled/unlabeled pool");
  split_cmd->add_option("--config", config, "Config file")->required();
  split_cmd->add_option("--out", out, "Pool JSON file")->required();

  auto* run = app.add_subcommand("run", "Run the full active learning loop");
  run->add_option("--config", config, "Config file")->required();
  run->add_option("--out", out, "Run directory")->required();
  run->add_flag("--resume", run_opts.resume, "Continue an interrupted run");
  run->add_flag("--deterministic", run_opts.deterministic, "Single-threaded, reproducible execution");
  run->add_flag("--dry-run", run_opts.dry_run, "Pool bookkeeping only with random acquisition");
  run->add_flag("--verbose", verbose, "Print per-epoch progress");
  run->add_option("--stop-after-cycle", stop_after, "Stop once this cycle's acquisition is saved");

  auto* train = app.add_subcommand("train-cycle", "Train one stage on a pool");
  train->add_option("--config", config, "Config file")->required();
  train->add_option("--pool", pool, "Pool JSON file")->required();
  train->add_option("--cycle", cycle, "Cycle index");
  train->add_flag("--final", final_stage, "Use final_cycle_epochs");
  train->add_option("--init", init, "Checkpoint to start from");
  train->add_option("--out", out, "Checkpoint to write")->required();
  train->add_option("--metrics", metrics, "Append epoch records to this file");

  auto* score = app.add_subcommand("score", "Score unknown regions with a trained network");
  score->add_option("--config", config, "Config file")->required();
  score->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  score->add_option("--network", network, "teacher, student or best");
  score->add_option("--pool", pool, "Pool JSON file")->required();
  score->add_option("--metric", metric, "random, least_confidence, entropy or margin");
  score->add_option("--out", out, "Region scores (JSON lines)")->required();

  auto* select = app.add_subcommand("select", "Pick regions from scores and optionally reveal them");
  select->add_option("--pool", pool, "Pool JSON file")->required();
  select->add_option("--scores", scores, "Region scores from `score`")->required();
  select->add_option("--cycle", cycle, "Cycle index recorded with the acquisitions");
  select->add_option("--k", k, "Regions per image");
  select->add_option("--budget", budget, "Rank all regions together and take this many");
  select->add_option("--out", out, "Acquisition records (JSON lines)")->required();
  select->add_option("--pool-out", pool_out, "Write the pool with the selection revealed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", config, "Config file")->required();
  eval->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  eval->add_option("--network", network, "teacher, student or best");
  eval->add_option("--split", split, "test or val");

  auto* report = app.add_subcommand("report", "Write CSV tables for a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::kInvalidArgument);
  }

  try {
    if (*synth) return cmd_synth(config, out);
    if (*split_cmd) return cmd_split(config, out);
    if (*run) {
      run_opts.quiet = !verbose;
      if (stop_after >= 0) run_opts.stop_after_cycle = stop_after;
      return cmd_run(config, out, run_opts);
    }
    if (*train) return cmd_train_cycle(config, pool, cycle, final_stage, init, out, metrics);
    if (*score) return cmd_score(config, ckpt, network, pool, metric, out);
    if (*select) return cmd_select(pool, scores, cycle, k, budget, out, pool_out);
    if (*eval) return cmd_eval(config, ckpt, network, split);
    if (*report) {
      write_report(run_dir);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << error_kind_name(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
