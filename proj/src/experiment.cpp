#include "s4al/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <Eigen/Core>

#include "s4al/dataset_io.hpp"
#include "s4al/jsonl.hpp"

namespace s4al {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitKey = 1;
constexpr std::uint64_t kModelKey = 2;
constexpr std::uint64_t kTrainKey = 3;
constexpr std::uint64_t kAcquireKey = 4;

class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) fail(ErrorKind::kIo, "run directory is locked (" + path_.string() + " exists)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

std::string cycle_name(int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cycle_%03d", c);
  return buf;
}

json iou_json(const IouResult& r) {
  json per = json::array();
  for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"per_class", per}, {"miou", r.miou}};
}

IouResult iou_from_json(const json& j) {
  IouResult r;
  for (const json& v : j.at("per_class"))
    r.per_class.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  r.miou = j.at("miou");
  return r;
}

CycleSummary summary_from_json(const json& j) {
  CycleSummary s;
  s.cycle = j.at("cycle");
  s.labeled_fraction = j.at("labeled_fraction");
  s.acquired_pixels = j.value("acquired_pixels", std::size_t{0});
  if (j.contains("teacher") && !j.at("teacher").is_null()) s.teacher = iou_from_json(j.at("teacher"));
  if (j.contains("student") && !j.at("student").is_null()) s.student = iou_from_json(j.at("student"));
  s.seconds = j.value("seconds", 0.0);
  return s;
}

void write_state(const fs::path& dir, int next_cycle, const std::string& checkpoint, bool complete) {
  write_text_atomic(dir / "state.json",
                    json{{"next_cycle", next_cycle}, {"checkpoint", checkpoint}, {"complete", complete}}.dump(2) + "\n");
}

// Drops log records that belong to work the resumed run will redo.
void truncate_logs(const fs::path& dir, int next_cycle, int next_epoch) {
  auto keep = [&](const char* name, auto pred) {
    std::vector<json> rows = read_jsonl(dir / name);
    std::erase_if(rows, [&](const json& j) { return !pred(j); });
    write_jsonl(dir / name, rows);
  };
  keep("metrics.jsonl", [&](const json& j) {
    const int c = j.at("cycle");
    return c < next_cycle || (c == next_cycle && j.at("epoch").get<int>() < next_epoch);
  });
  for (const char* name : {"eval.jsonl", "acquisitions.jsonl", "acquired_classes.jsonl"})
    keep(name, [&](const json& j) { return j.at("cycle").get<int>() < next_cycle; });
}

}  // namespace

std::unique_ptr<SegmentationModel> make_model(const ExperimentConfig& config, int num_classes, std::uint64_t seed) {
  EncoderDecoderConfig mc = config.model;
  mc.num_classes = num_classes;
  return std::make_unique<EncoderDecoder>(mc, seed);
}

void save_training_checkpoint(const std::string& path, const ModelPair& pair, const ReplayBuffer& replay,
                              const CycleProgress& progress, const ExperimentConfig& config, bool mid) {
  Checkpoint ck;
  ck.meta = {{"kind", mid ? "mid" : "end"},
             {"architecture", pair.student->architecture()},
             {"config_hash", config_hash(config)},
             {"schedule", config.train.to_json()},
             {"progress", progress.meta_json()},
             {"rng", {{"cycle_seed", progress.seed}, {"root_seed", config.cycle.seed}}},
             {"replay", {{"capacity", replay.capacity()}, {"items", replay.items()}, {"insertions", replay.insertions()}}}};
  ck.tensors["student"] = export_state(*pair.student);
  ck.tensors["teacher"] = export_state(*pair.teacher);
  ck.tensors["best_teacher"] = progress.best_teacher;
  for (std::size_t i = 0; i < progress.velocity.size(); ++i)
    ck.tensors["velocity." + std::to_string(i)] = progress.velocity[i];
  save_checkpoint(ck, path);
}

TrainingSnapshot load_training_checkpoint(const std::string& path, const ExperimentConfig& config, int num_classes) {
  const Checkpoint ck = load_checkpoint(path);
  TrainingSnapshot s{ModelPair(make_model(config, num_classes, 0)), ReplayBuffer(config.cycle.replay_capacity), std::nullopt};
  if (ck.meta.at("architecture") != s.pair->student->architecture())
    fail(ErrorKind::kFormat, "checkpoint architecture does not match the config");
  import_state(*s.pair->student, ck.tensors.at("student"));
  import_state(*s.pair->teacher, ck.tensors.at("teacher"));
  const json& rp = ck.meta.at("replay");
  s.replay.restore(rp.at("items").get<std::vector<std::size_t>>(), rp.at("insertions").get<std::uint64_t>());
  if (ck.meta.at("kind") == "mid") {
    CycleProgress p = CycleProgress::from_meta_json(ck.meta.at("progress"));
    p.best_teacher = ck.tensors.at("best_teacher");
    for (std::size_t i = 0;; ++i) {
      const auto it = ck.tensors.find("velocity." + std::to_string(i));
      if (it == ck.tensors.end()) break;
      p.velocity.push_back(it->second);
    }
    s.progress = std::move(p);
  }
  return s;
}

std::unique_ptr<SegmentationModel> load_network(const std::string& path, const ExperimentConfig& config,
                                                int num_classes, const std::string& which) {
  require(which == "teacher" || which == "student" || which == "best", "network must be teacher, student or best");
  const Checkpoint ck = load_checkpoint(path);
  auto model = make_model(config, num_classes, 0);
  if (ck.meta.at("architecture") != model->architecture())
    fail(ErrorKind::kFormat, "checkpoint architecture does not match the config");
  const std::string key = which == "best" ? "best_teacher" : which;
  const auto it = ck.tensors.find(key);
  if (it == ck.tensors.end() || it->second.empty()) fail(ErrorKind::kFormat, "checkpoint has no " + key + " weights");
  import_state(*model, it->second);
  return model;
}

std::string resolve_device() {
  const char* env = std::getenv("S4AL_DEVICE");
  const std::string v = env ? env : "";
  if (v.empty() || v == "auto" || v == "cpu") return "cpu";
  fail(ErrorKind::kInvalidArgument, "S4AL_DEVICE=" + v + " is not available; this build supports cpu only");
}

Dataset load_experiment_dataset(const ExperimentConfig& config) {
  const DatasetConfig& dc = config.dataset;
  if (dc.source == "synthetic") return generate_synthetic(config.synthetic);
  if (dc.source == "directory") {
    Dataset ds = load_dataset(dc.path);
    if (dc.num_classes > 0 && dc.num_classes != ds.num_classes)
      fail(ErrorKind::kInvalidArgument, "dataset.num_classes does not match the manifest");
    return ds;
  }
  Dataset ds;
  ds.num_classes = dc.num_classes;
  ds.height = dc.height;
  ds.width = dc.width;
  for (int i = 0; i < dc.train_count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img_%05d", i);
    ds.train.push_back({id, {}, {}});
  }
  return ds;
}

PoolState initial_pool(const ExperimentConfig& config, const Dataset& dataset) {
  const RegionGrid grid = build_region_grid(dataset.height, dataset.width, config.cycle.region_h, config.cycle.region_w);
  return init_split(dataset.train_ids(), grid, config.cycle.initial_fraction,
                    Rng::derive(config.cycle.seed, {kSplitKey}).engine()());
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::string& run_dir, const RunOptions& options) {
  return run_experiment(config, load_experiment_dataset(config), run_dir, options);
}

ExperimentReport run_experiment(const ExperimentConfig& config, const Dataset& dataset, const std::string& run_dir,
                                const RunOptions& options) {
  config.validate();
  resolve_device();
  const bool has_pixels = config.dataset.source != "layout";
  if (!options.dry_run) {
    require(has_pixels, "layout datasets only support dry runs");
    dataset.validate();
  }
  if (options.deterministic) Eigen::setNbThreads(1);
  const auto t_start = std::chrono::steady_clock::now();
  const fs::path dir(run_dir);
  const std::string hash = config_hash(config);

  fs::create_directories(dir);
  if (options.resume) {
    if (!fs::exists(dir / "config.hash") || !fs::exists(dir / "state.json"))
      fail(ErrorKind::kIncompleteRun, "nothing to resume in " + run_dir);
    if (read_text(dir / "config.hash") != hash + "\n")
      fail(ErrorKind::kConfigConflict, "config hash differs from the run being resumed");
  } else {
    if (fs::exists(dir / "state.json"))
      fail(ErrorKind::kConfigConflict, run_dir + " already holds a run; pass --resume to continue it");
  }
  RunLock lock(dir / "run.lock");
  if (!options.resume) {
    fs::create_directories(dir / "pool");
    fs::create_directories(dir / "checkpoints");
    write_text_atomic(dir / "config.ini", canonical_config(config));
    write_text_atomic(dir / "config.hash", hash + "\n");
    for (const char* name : {"metrics.jsonl", "acquisitions.jsonl", "acquired_classes.jsonl", "eval.jsonl"})
      write_jsonl(dir / name, {});
    write_state(dir, 0, "", false);
  }

  const json state = json::parse(read_text(dir / "state.json"));
  const int first_cycle = state.at("next_cycle");
  const std::string ckpt_name = state.at("checkpoint");
  const int num_cycles = config.cycle.num_cycles;
  const int k = dataset.num_classes;

  ExperimentReport report;
  report.config_hash = hash;
  if (state.at("complete").get<bool>()) {
    for (const json& j : read_jsonl(dir / "eval.jsonl")) report.cycles.push_back(summary_from_json(j));
    report.complete = true;
    return report;
  }

  TrainingSnapshot snap{std::nullopt, ReplayBuffer(config.cycle.replay_capacity), std::nullopt};
  if (!options.dry_run) {
    if (!ckpt_name.empty()) {
      snap = load_training_checkpoint((dir / ckpt_name).string(), config, k);
    } else {
      snap.pair.emplace(make_model(config, k, Rng::derive(config.cycle.seed, {kModelKey}).engine()()));
    }
  }
  truncate_logs(dir, first_cycle, snap.progress ? snap.progress->next_epoch : 0);
  for (const json& j : read_jsonl(dir / "eval.jsonl")) report.cycles.push_back(summary_from_json(j));

  const fs::path first_pool = dir / "pool" / (cycle_name(first_cycle) + ".json");
  PoolState pool = fs::exists(first_pool) ? load_pool(first_pool.string()) : initial_pool(config, dataset);
  if (!fs::exists(first_pool)) save_pool(pool, first_pool.string());
  if (pool.size() != dataset.train.size()) fail(ErrorKind::kFormat, "pool file does not match the dataset");

  AcquireOptions acq;
  acq.metric = config.cycle.metric;
  acq.per_image_k = config.cycle.per_image_k;
  acq.global_budget = config.cycle.global_budget;
  acq.budget_regions = static_cast<std::size_t>(config.cycle.budget_regions);

  for (int c = first_cycle; c <= num_cycles; ++c) {
    const auto t_cycle = std::chrono::steady_clock::now();
    CycleSummary summary;
    summary.cycle = c;
    summary.labeled_fraction = labeled_fraction(pool);
    std::unique_ptr<SegmentationModel> scorer;
    std::string end_ckpt;

    if (!options.dry_run) {
      ModelPair& pair = *snap.pair;
      const std::optional<CycleProgress> resume = std::move(snap.progress);
      snap.progress.reset();
      if (!resume && config.reinit_each_cycle && c > 0)
        pair = ModelPair(make_model(config, k, Rng::derive(config.cycle.seed, {kModelKey, static_cast<std::uint64_t>(c)}).engine()()));

      TrainHooks hooks;
      hooks.on_epoch = [&](const EpochRecord& r) {
        append_jsonl(dir / "metrics.jsonl", r.to_json());
        if (!options.quiet) {
          std::cerr << "cycle " << c << " epoch " << r.epoch << " L_total " << r.loss.total;
          if (r.val_miou_teacher) std::cerr << " val_mIoU " << *r.val_miou_teacher;
          std::cerr << '\n';
        }
      };
      auto mid_checkpoint = [&](const CycleProgress& p, const ModelPair& mp, const ReplayBuffer& rb) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoints/%s_epoch_%04d.ckpt", cycle_name(c).c_str(), p.next_epoch);
        save_training_checkpoint((dir / name).string(), mp, rb, p, config, true);
        write_state(dir, c, name, false);
      };
      hooks.on_checkpoint = mid_checkpoint;
      hooks.stop_after_epoch = [&](const CycleProgress& p) {
        if (!options.stop_at_epoch || options.stop_at_epoch->first != c || options.stop_at_epoch->second != p.next_epoch)
          return false;
        mid_checkpoint(p, pair, snap.replay);
        return true;
      };
      Rng cycle_rng = Rng::derive(config.cycle.seed, {kTrainKey, static_cast<std::uint64_t>(c)});
      const CycleProgress progress = train_cycle(pool, dataset, pair, config.train, snap.replay, c, c == num_cycles,
                                                 cycle_rng, hooks, resume ? &*resume : nullptr);
      if (!progress.done()) {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return report;
      }
      scorer = pair.teacher->clone();
      import_state(*scorer, progress.best_teacher);
      if (!dataset.test.empty()) {
        summary.teacher = evaluate(*scorer, dataset.test, dataset.ignore_index).iou;
        summary.student = evaluate(*pair.student, dataset.test, dataset.ignore_index).iou;
      }
      end_ckpt = "checkpoints/" + cycle_name(c) + ".ckpt";
      save_training_checkpoint((dir / end_ckpt).string(), pair, snap.replay, progress, config, false);
    }

    std::vector<AcquisitionRecord> records;
    json class_row;
    if (c < num_cycles) {
      Rng acq_rng = Rng::derive(config.cycle.seed, {kAcquireKey, static_cast<std::uint64_t>(c)});
      records = options.dry_run ? acquire_random(pool, acq, c, acq_rng)
                                : acquire(*scorer, dataset.train, pool, acq, c, acq_rng);
      const std::vector<Selection> sels = to_selections(records, pool);
      std::vector<std::uint64_t> per_class(std::max(k, 0), 0);
      std::uint64_t ignored = 0;
      for (const Selection& s : sels) {
        const RegionExtent e = pool.grid().extent(s.region);
        summary.acquired_pixels += e.pixels();
        if (!has_pixels) continue;
        const LabelMap& label = dataset.train[s.image].label;
        for (int y = e.y0; y < e.y0 + e.h; ++y)
          for (int x = e.x0; x < e.x0 + e.w; ++x) {
            const int v = label.at(y, x);
            if (v < k) ++per_class[v];
            else ++ignored;
          }
      }
      class_row = {{"cycle", c}, {"regions", sels.size()}, {"pixels", summary.acquired_pixels}};
      if (has_pixels) {
        class_row["class_pixels"] = per_class;
        class_row["ignore_pixels"] = ignored;
      }
      pool = reveal_regions(std::move(pool), sels, c);
    }

    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_cycle).count();
    append_jsonl(dir / "eval.jsonl",
                 {{"cycle", c},
                  {"labeled_fraction", summary.labeled_fraction},
                  {"acquired_pixels", summary.acquired_pixels},
                  {"teacher", summary.teacher ? iou_json(*summary.teacher) : json(nullptr)},
                  {"student", summary.student ? iou_json(*summary.student) : json(nullptr)},
                  {"seconds", summary.seconds}});
    for (const AcquisitionRecord& r : records) append_line(dir / "acquisitions.jsonl", to_json_line(r));
    if (!class_row.is_null()) append_jsonl(dir / "acquired_classes.jsonl", class_row);
    report.cycles.push_back(summary);

    if (c < num_cycles) {
      save_pool(pool, (dir / "pool" / (cycle_name(c + 1) + ".json")).string());
      write_state(dir, c + 1, end_ckpt, false);
      if (options.stop_after_cycle && *options.stop_after_cycle == c) {
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return report;
      }
    } else {
      write_state(dir, c + 1, end_ckpt, true);
    }
  }
  report.complete = true;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  write_report(run_dir);
  return report;
}

}  // namespace s4al
