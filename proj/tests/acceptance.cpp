// Acceptance run: one PASS/FAIL line per top-level criterion.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "s4al/acquire.hpp"
#include "s4al/augment.hpp"
#include "s4al/config.hpp"
#include "s4al/datapool.hpp"
#include "s4al/experiment.hpp"
#include "s4al/jsonl.hpp"
#include "s4al/losses.hpp"
#include "s4al/metrics.hpp"
#include "s4al/model.hpp"
#include "s4al/replay.hpp"
#include "s4al/synthetic.hpp"

using namespace s4al;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << " | " << detail << std::endl;
  if (!pass) ++failures;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = "img" + std::to_string(i);
  return ids;
}

// ---------------------------------------------------------------------------
// worked examples, each against an oracle computed here

struct OracleSuite {
  std::vector<std::string> failed;
  int total = 0;

  void expect(const std::string& what, bool ok) {
    ++total;
    if (!ok) failed.push_back(what);
  }
  static bool near(double a, double b) { return std::abs(a - b) <= 1e-6; }

  void run(const ExperimentConfig& desk) {
    // region grids
    for (auto [h, w, r] : {std::tuple{360, 480, 30}, std::tuple{688, 688, 43}}) {
      const RegionGrid g = build_region_grid(h, w, r, r);
      expect("grid " + std::to_string(h) + "x" + std::to_string(w),
             g.rows() == h / r && g.cols() == w / r && g.count() == (h / r) * (w / r));
    }

    // initial split, half-up rounding
    const RegionGrid camvid = build_region_grid(360, 480, 30, 30);
    const PoolState p367 = init_split(make_ids(367), camvid, 0.1, 0);
    const auto labeled_367 = static_cast<std::size_t>(std::floor(367 * 0.1 + 0.5));
    expect("init_split 367", p367.count(ImageStatus::kLabeled) == labeled_367 &&
                                 p367.count(ImageStatus::kUnlabeled) == 367 - labeled_367);
    const PoolState p2675 = init_split(make_ids(2675), build_region_grid(688, 688, 43, 43), 0.1, 0);
    expect("init_split 2675", p2675.count(ImageStatus::kLabeled) == static_cast<std::size_t>(std::floor(267.5 + 0.5)));

    // one revealed region
    {
      PoolState pool = init_split(make_ids(20), camvid, 0.1, 0);
      const std::size_t img = pool.unlabeled_stream().front();
      const Selection sel{img, {4, 7}};
      pool.reveal(std::span(&sel, 1), 0);
      const Mask m = pool.known_mask(img);
      std::size_t counted = 0;
      for (auto v : m.data) counted += v;
      expect("reveal one region", pool.status(img) == ImageStatus::kPartial && counted == 30 * 30 &&
                                      pool.known_pixels(img) == counted);
    }

    // labeled fraction by pixel counting
    {
      const double pixels = 360.0 * 480.0;
      double known = 0;
      for (std::size_t i = 0; i < p367.size(); ++i)
        for (auto v : p367.known_mask(i).data) known += v;
      expect("labeled fraction", near(labeled_fraction(p367), known / (367 * pixels)) &&
                                     std::abs(labeled_fraction(p367) - 0.1008) < 5e-5);
    }

    // classmix class choice
    {
      const std::set<int> head{0, 1}, tail{2, 3};
      const std::vector<int> present{0, 1, 2, 3};
      Rng rng(11);
      bool ok = true;
      for (int i = 0; i < 100; ++i) ok &= select_mix_classes(present, head, tail, true, rng) == std::vector<int>{2, 3};
      expect("balanced class choice", ok);

      const int draws = 10000;
      std::vector<int> hits(4, 0);
      for (int i = 0; i < draws; ++i)
        for (int c : select_mix_classes(present, head, tail, false, rng)) ++hits[c];
      // each draw takes 2 of 4, so each class is in with p = 1/2
      const double sigma = std::sqrt(draws * 0.25);
      ok = true;
      for (int c = 0; c < 4; ++c) ok &= std::abs(hits[c] - draws * 0.5) <= 3 * sigma;
      expect("uniform class choice", ok);
    }

    // classmix 2x2 toy, pixel by pixel
    {
      LabelMap src(1, 2, 2), tgt(1, 2, 2);
      src.data = {1, 0, 0, 1};
      tgt.data = {5, 6, 7, 8};
      Image si(3, 2, 2, 1.0f), ti(3, 2, 2, 0.0f);
      ScalarMap sc(1, 2, 2, 0.9f), tc(1, 2, 2, 0.2f);
      const std::vector<int> classes{1};
      const MixedSample m = classmix(si, src, sc, ti, tgt, tc, classes);
      bool ok = true;
      for (std::size_t i = 0; i < 4; ++i) {
        const bool from_src = src.data[i] == 1;
        ok &= m.label.data[i] == (from_src ? src.data[i] : tgt.data[i]);
      }
      expect("classmix toy", ok);
    }

    // replay buffer
    {
      ReplayBuffer buf(2);
      buf.push(1);
      buf.push(2);
      buf.push(3);
      expect("fifo trace", buf.items() == std::vector<std::size_t>{2, 3});
      Rng rng(12);
      const auto draws = buf.sample(10000, rng);
      const auto twos = std::count(draws.begin(), draws.end(), std::size_t{2});
      expect("replay sampling", std::abs(twos - 5000.0) <= 3 * std::sqrt(10000 * 0.25));
    }

    // EMA closed form
    {
      Rng rng(13);
      std::vector<float> t(32), s(32);
      for (auto& v : t) v = static_cast<float>(rng.normal(0, 1));
      for (auto& v : s) v = static_cast<float>(rng.normal(0, 1));
      const auto t0 = t;
      bool ok = true;
      for (int n = 1; n <= 100; ++n) {
        ema_update(t, s, 0.99);
        for (std::size_t i = 0; i < t.size(); ++i) ok &= near(t[i], s[i] + (double(t0[i]) - s[i]) * std::pow(0.99, n));
      }
      expect("ema closed form", ok);
    }

    // cross entropy, plain and weighted
    {
      const std::vector<double> logits{std::log(0.8), std::log(0.2)};
      const LabelMap zero(1, 1, 1, 0);
      expect("ce", near(supervised_loss<double>(logits, 2, zero, 255), -std::log(0.8)));
      const ScalarMap conf(1, 1, 1, 0.9f);
      const Mask valid(1, 1, 1, 1);
      expect("weighted ce", near(weighted_unsup_loss<double>(logits, 2, zero, conf, valid), double(0.9f) * -std::log(0.8)));
    }

    // acquisition formulas
    {
      const std::vector<float> probs{0.7f, 0.2f, 0.1f};
      const std::vector<double> p{0.7f, 0.2f, 0.1f};
      double h = 0;
      for (double v : p) h -= v * std::log(v);
      auto score = [&](AcquisitionMetric m) { return double(pixel_scores(probs, 3, 1, 1, m).scores.data[0]); };
      expect("entropy", near(score(AcquisitionMetric::kEntropy), h) && std::abs(h - 0.8018) < 5e-5);
      expect("least confidence", near(score(AcquisitionMetric::kLeastConfidence), 1 - p[0]));
      expect("margin", near(score(AcquisitionMetric::kMargin), 1 - (p[0] - p[1])));

      ScoreMap s;
      s.scores = ScalarMap(1, 2, 2);
      s.scores.data = {0.2f, 0.6f, 0.4f, 0.8f};
      Mask known(1, 2, 2);
      known.data = {1, 0, 1, 0};
      const auto r = region_scores(s, build_region_grid(2, 2, 2, 2), known);
      expect("half-known region", r.size() == 1 && near(r[0].score, (double(0.6f) + double(0.8f)) / 2));
    }

    // selection against a full sort
    {
      bool ok = true;
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const RegionGrid g = build_region_grid(4, 4, 1, 1);
        ScoreMap s;
        s.scores = ScalarMap(1, 4, 4);
        for (auto& v : s.scores.data) v = static_cast<float>(rng.uniform());
        Mask known(1, 4, 4);
        for (auto& v : known.data) v = rng.bernoulli(0.2);
        const int k = 1 + static_cast<int>(rng.index(6));
        std::vector<std::pair<double, RegionId>> all;
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x)
            if (!known.at(y, x)) all.push_back({-double(s.scores.at(y, x)), RegionId{y, x}});
        std::sort(all.begin(), all.end());
        std::vector<Selection> oracle;
        for (std::size_t j = 0; j < std::min<std::size_t>(k, all.size()); ++j) oracle.push_back({0, all[j].second});
        const std::vector<std::vector<RegionScore>> per{region_scores(s, g, known)};
        auto got = select_regions(per, k);
        std::sort(got.begin(), got.end());
        std::sort(oracle.begin(), oracle.end());
        ok &= got == oracle;
      }
      expect("selection vs sort", ok);
    }

    // confusion matrix and IoU
    {
      LabelMap gt(1, 1, 2), pred(1, 1, 2);
      gt.data = {0, 1};
      pred.data = {0, 0};
      ConfusionMatrix cm(2);
      cm.accumulate(pred, gt, 255);
      expect("confusion counts", cm.at(0, 0) == 1 && cm.at(0, 1) == 0 && cm.at(1, 0) == 1 && cm.at(1, 1) == 0);
      const IouResult r = iou(cm);
      // tp / (tp + fp + fn)
      const double iou0 = 1.0 / (1 + 1 + 0), iou1 = 0.0 / (0 + 0 + 1);
      expect("iou", near(*r.per_class[0], iou0) && near(*r.per_class[1], iou1) && near(r.miou, (iou0 + iou1) / 2));
    }

    // synthetic class shares by pixel counting
    {
      const Dataset ds = generate_synthetic(desk.synthetic);
      std::vector<double> counts(desk.synthetic.num_classes, 0);
      double total = 0;
      for (const Sample& s : ds.train)
        for (auto v : s.label.data) counts[v] += 1, total += 1;
      bool ok = ds.train.size() == 200;
      for (std::size_t c = 0; c < counts.size(); ++c) ok &= std::abs(counts[c] / total - desk.synthetic.shares[c]) <= 0.03;
      expect("synthetic shares", ok);
    }
  }
};

void check_oracles(const ExperimentConfig& desk) {
  const auto t0 = Clock::now();
  OracleSuite suite;
  try {
    suite.run(desk);
  } catch (const std::exception& e) {
    suite.failed.push_back(std::string("threw: ") + e.what());
  }
  const double secs = since(t0);
  std::string detail = std::to_string(suite.total - static_cast<int>(suite.failed.size())) + "/" +
                       std::to_string(suite.total) + " examples, " + fmt(secs, 1) + " s";
  for (const auto& f : suite.failed) detail += "; failed: " + f;
  verdict("unit-oracle suite", suite.failed.empty() && secs < 60, detail);
}

// ---------------------------------------------------------------------------

void check_gradient() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const int k = 2 + static_cast<int>(rng.index(5)), hw = 16;
    std::vector<double> logits(static_cast<std::size_t>(k) * hw);
    for (auto& v : logits) v = rng.normal(0, 2);
    LabelMap pseudo(1, 4, 4);
    ScalarMap conf(1, 4, 4);
    Mask valid(1, 4, 4);
    for (int i = 0; i < hw; ++i) {
      pseudo.data[i] = static_cast<std::uint8_t>(rng.index(k));
      conf.data[i] = static_cast<float>(rng.uniform(1.0 / k, 1.0));
      valid.data[i] = rng.bernoulli(0.8);
    }
    valid.data[0] = 1;
    std::vector<double> grad(logits.size(), 0.0);
    weighted_unsup_loss<double>(logits, k, pseudo, conf, valid, true, grad);
    const double h = 1e-5;
    std::vector<double> num(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
      const double orig = logits[j];
      logits[j] = orig + h;
      const double lp = weighted_unsup_loss<double>(logits, k, pseudo, conf, valid);
      logits[j] = orig - h;
      const double lm = weighted_unsup_loss<double>(logits, k, pseudo, conf, valid);
      logits[j] = orig;
      num[j] = (lp - lm) / (2 * h);
    }
    double diff = 0, scale = 0;
    for (std::size_t j = 0; j < num.size(); ++j) {
      diff += (num[j] - grad[j]) * (num[j] - grad[j]);
      scale += num[j] * num[j] + grad[j] * grad[j];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(1e-12, std::sqrt(scale)));
  }
  const double secs = since(t0);
  std::ostringstream d;
  d << "20 trials, worst relative error " << std::scientific << std::setprecision(2) << worst << ", " << fmt(secs, 2)
    << " s";
  verdict("weighted-loss gradient check", worst < 1e-3 && secs < 60, d.str());
}

// ---------------------------------------------------------------------------

void check_loss_decomposition(ExperimentConfig c, const fs::path& work) {
  // one stage without replay, one with, five epochs each, pseudo-label terms
  // active after the first epoch
  c.cycle.num_cycles = 1;
  c.train.epochs = 5;
  c.train.final_cycle_epochs = 5;
  c.train.warmup_epochs = 1;
  const fs::path dir = work / "loss_audit";
  fs::remove_all(dir);
  RunOptions opt;
  opt.deterministic = true;
  run_experiment(c, dir.string(), opt);

  int lines = 0, exact = 0, with_replay = 0, with_unsup = 0;
  for (const auto& j : read_jsonl(dir / "metrics.jsonl")) {
    ++lines;
    const double sup = j.at("L_sup"), u1 = j.at("L_unsup1"), u2 = j.at("L_unsup2");
    const double e1 = j.at("eta1"), e2 = j.at("eta2");
    const bool replay = j.at("replay_active");
    const double rebuilt = replay ? sup + e1 * u1 + e2 * u2 : sup + e1 * u1;
    exact += rebuilt == j.at("L_total").get<double>();
    with_replay += replay;
    with_unsup += e1 > 0;
  }
  verdict("loss decomposition audit", lines == 10 && exact == lines && with_replay > 0 && with_unsup > 0,
          std::to_string(exact) + "/" + std::to_string(lines) + " epochs reconstruct exactly (" +
              std::to_string(with_replay) + " with replay term, " + std::to_string(with_unsup) +
              " with eta1 > 0)");
}

// ---------------------------------------------------------------------------

void check_balanced_classmix(const ExperimentConfig& desk) {
  const Dataset ds = generate_synthetic(desk.synthetic);
  std::vector<std::uint64_t> counts(ds.num_classes, 0);
  for (const Sample& s : ds.train)
    for (auto v : s.label.data) ++counts[v];
  const ClassDistribution dist = distribution_from_counts(counts);
  const std::set<int> head(dist.head.begin(), dist.head.end()), tail(dist.tail.begin(), dist.tail.end());

  std::vector<std::vector<int>> present;
  for (const Sample& s : ds.train) present.push_back(present_classes(s.label));

  auto tail_share = [&](bool balanced) {
    Rng rng(Rng::derive(desk.cycle.seed, {0x6d6978, balanced}));
    double tail_px = 0, mask_px = 0;
    for (int draw = 0; draw < 10000; ++draw) {
      const std::size_t i = rng.index(ds.train.size());
      const auto classes = select_mix_classes(present[i], head, tail, balanced, rng);
      const Mask m = class_mask(ds.train[i].label, classes);
      for (std::size_t p = 0; p < m.data.size(); ++p) {
        if (!m.data[p]) continue;
        mask_px += 1;
        tail_px += tail.contains(ds.train[i].label.data[p]);
      }
    }
    return tail_px / mask_px;
  };
  const double bal = tail_share(true), unbal = tail_share(false);
  const double factor = bal / unbal;
  verdict("balanced classmix tail share", factor >= 1.5,
          "tail share " + fmt(bal) + " balanced vs " + fmt(unbal) + " plain, factor " + fmt(factor, 2) +
              " over 10000 masks");
}

// ---------------------------------------------------------------------------

struct E2eRun {
  std::string variant;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  fs::path dir;
  double miou_first = 0;
  double miou_last = 0;
  double seconds = 0;
  std::string error;
};

double diff_variance(const std::vector<double>& v) {
  std::vector<double> d;
  for (std::size_t i = 1; i < v.size(); ++i) d.push_back(v[i] - v[i - 1]);
  if (d.size() < 2) return 0;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
  double s = 0;
  for (double x : d) s += (x - mean) * (x - mean);
  return s / (d.size() - 1);
}

void check_end_to_end(const ExperimentConfig& desk, const fs::path& work, int seeds, unsigned jobs) {
  const auto t0 = Clock::now();
  const Dataset ds = load_experiment_dataset(desk);
  std::vector<E2eRun> runs;
  for (const char* variant : {"entropy", "random", "plain"}) {
    for (int s = 0; s < seeds; ++s) {
      E2eRun r;
      r.variant = variant;
      r.seed = static_cast<std::uint64_t>(s);
      r.config = desk;
      r.config.cycle.seed = r.seed;
      if (r.variant == "random") r.config.cycle.metric = AcquisitionMetric::kRandom;
      if (r.variant == "plain") {
        r.config.train.confidence_weighting = false;
        r.config.train.balanced_classmix = false;
      }
      r.dir = work / "e2e" / (r.variant + "_s" + std::to_string(s));
      runs.push_back(std::move(r));
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex out;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < runs.size();) {
      E2eRun& r = runs[i];
      const auto start = Clock::now();
      try {
        fs::remove_all(r.dir);
        const ExperimentReport rep = run_experiment(r.config, ds, r.dir.string(), {});
        r.miou_first = rep.cycles.front().teacher->miou;
        r.miou_last = rep.cycles.back().teacher->miou;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      r.seconds = since(start);
      std::lock_guard lock(out);
      std::cout << "    " << r.variant << " seed " << r.seed << ": cycle0 " << fmt(r.miou_first) << " -> final "
                << fmt(r.miou_last) << " (" << fmt(r.seconds, 0) << " s)" << (r.error.empty() ? "" : " " + r.error)
                << std::endl;
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < std::max(1u, jobs); ++t) pool.emplace_back(worker);
  }
  const double secs = since(t0);

  bool ok = true;
  std::map<std::string, double> mean;
  int improved = 0, entropy_runs = 0;
  for (const E2eRun& r : runs) {
    ok &= r.error.empty();
    mean[r.variant] += r.miou_last / seeds;
    if (r.variant == "entropy") {
      ++entropy_runs;
      improved += r.miou_last > r.miou_first;
    }
  }
  const bool a = improved == entropy_runs;
  const double gap = 100 * (mean["entropy"] - mean["random"]);
  const bool b = gap >= 2.0;
  const bool c = mean["entropy"] >= mean["plain"];
  const bool fast = secs < 30 * 60;
  std::ostringstream d;
  d << "(a) " << improved << "/" << entropy_runs << " seeds improve " << (a ? "ok" : "NO") << "; (b) entropy "
    << fmt(mean["entropy"]) << " vs random " << fmt(mean["random"]) << " = " << fmt(gap, 2) << " points "
    << (b ? "ok" : "NO") << "; (c) CW+BCM " << fmt(mean["entropy"]) << " vs plain " << fmt(mean["plain"]) << " "
    << (c ? "ok" : "NO") << "; " << fmt(secs / 60, 1) << " min on " << jobs << " thread(s)" << (fast ? "" : " TOO SLOW");
  verdict("end-to-end desk experiment", ok && a && b && c && fast, d.str());

  // teacher vs student validation loss smoothness; reported, not asserted
  int smoother = 0, series = 0;
  for (const E2eRun& r : runs) {
    if (!r.error.empty()) continue;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_cycle;
    for (const auto& j : read_jsonl(r.dir / "metrics.jsonl")) {
      if (!j.contains("val_loss_teacher")) continue;
      auto& [t, s] = by_cycle[j.at("cycle").get<int>()];
      t.push_back(j.at("val_loss_teacher"));
      s.push_back(j.at("val_loss_student"));
    }
    for (const auto& [cycle, ts] : by_cycle) {
      ++series;
      smoother += diff_variance(ts.first) < diff_variance(ts.second);
    }
  }
  std::cout << "[INFO] ema teacher smoothness | variance of successive teacher validation-loss differences below the student's in "
            << smoother << "/" << series << " (run, cycle) series" << std::endl;
}

// ---------------------------------------------------------------------------

void check_budget(const fs::path& configs, const fs::path& work) {
  struct Preset {
    const char* file;
    double target;
  };
  for (const Preset p : {Preset{"camvid.ini", 0.138}, Preset{"cityscapes.ini", 0.16}}) {
    const auto t0 = Clock::now();
    const ExperimentConfig c = load_config((configs / p.file).string());
    const fs::path dir = work / ("dry_" + c.name);
    fs::remove_all(dir);
    RunOptions opt;
    opt.dry_run = true;
    const ExperimentReport r = run_experiment(c, dir.string(), opt);
    const double got = r.cycles.back().labeled_fraction;
    const double secs = since(t0);
    verdict("budget arithmetic " + c.name,
            std::abs(got - p.target) <= 0.005 && secs < 10,
            "final labeled fraction " + fmt(100 * got, 2) + "% vs " + fmt(100 * p.target, 1) + "% +-0.5, " +
                std::to_string(r.cycles.size() - 1) + " acquisitions, " + fmt(secs, 2) + " s");
  }
}

// ---------------------------------------------------------------------------

void check_resume(ExperimentConfig c, const fs::path& work) {
  c.train.epochs = 2;
  c.train.final_cycle_epochs = 2;
  c.train.warmup_epochs = 1;
  c.train.iters_per_epoch = 5;
  c.train.checkpoint_every = 1;
  const Dataset ds = load_experiment_dataset(c);
  RunOptions det;
  det.deterministic = true;

  const fs::path full = work / "resume_full", cut = work / "resume_cycle", mid = work / "resume_epoch";
  for (const auto& d : {full, cut, mid}) fs::remove_all(d);
  run_experiment(c, ds, full.string(), det);

  RunOptions stop = det;
  stop.stop_after_cycle = 0;
  run_experiment(c, ds, cut.string(), stop);
  RunOptions resume = det;
  resume.resume = true;
  run_experiment(c, ds, cut.string(), resume);

  RunOptions at_epoch = det;
  at_epoch.stop_at_epoch = std::make_pair(1, 1);
  run_experiment(c, ds, mid.string(), at_epoch);
  run_experiment(c, ds, mid.string(), resume);

  const std::string ref = read_text(full / "acquisitions.jsonl");
  const bool same_cycle = read_text(cut / "acquisitions.jsonl") == ref;
  const bool same_epoch = read_text(mid / "acquisitions.jsonl") == ref;
  auto evals = [](const fs::path& d) {
    auto rows = read_jsonl(d / "eval.jsonl");
    for (auto& r : rows) r.erase("seconds");
    return rows;
  };
  const bool same_eval = evals(cut) == evals(full) && evals(mid) == evals(full);
  const auto lines = std::count(ref.begin(), ref.end(), '\n');
  verdict("resume equivalence", same_cycle && same_epoch && !ref.empty(),
          std::to_string(lines) + " acquisitions; resumed between cycles " + (same_cycle ? "identical" : "DIFFERENT") +
              ", mid-cycle " + (same_epoch ? "identical" : "DIFFERENT") + "; eval logs " +
              (same_eval ? "identical" : "differ"));
}

template <class F>
void guarded(const std::string& name, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    verdict(name, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string configs = S4AL_CONFIG_DIR;
  std::string work = (fs::temp_directory_path() / "s4al_acceptance").string();
  int seeds = 5;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  bool skip_e2e = false;
  app.add_option("--configs", configs, "Directory with the preset configs");
  app.add_option("--work", work, "Scratch directory for runs");
  app.add_option("--seeds", seeds, "Seeds for the end-to-end experiment");
  app.add_option("--jobs", jobs, "Concurrent end-to-end runs");
  app.add_flag("--skip-e2e", skip_e2e, "Leave out the end-to-end experiment");
  CLI11_PARSE(app, argc, argv);

  const fs::path work_dir(work);
  fs::create_directories(work_dir);
  const ExperimentConfig desk = load_config((fs::path(configs) / "desk.ini").string());
  const auto t0 = Clock::now();

  guarded("unit-oracle suite", [&] { check_oracles(desk); });
  guarded("weighted-loss gradient check", [&] { check_gradient(); });
  guarded("loss decomposition audit", [&] { check_loss_decomposition(desk, work_dir); });
  guarded("balanced classmix tail share", [&] { check_balanced_classmix(desk); });
  if (skip_e2e) std::cout << "[SKIP] end-to-end desk experiment" << std::endl;
  else guarded("end-to-end desk experiment", [&] { check_end_to_end(desk, work_dir, seeds, jobs); });
  guarded("budget arithmetic", [&] { check_budget(configs, work_dir); });
  guarded("resume equivalence", [&] { check_resume(desk, work_dir); });

  std::cout << failures << " failing criteria, " << fmt(since(t0) / 60, 1) << " min total" << std::endl;
  return failures == 0 ? 0 : 1;
}
