#include "s4al/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace s4al {

using nlohmann::json;

void TrainSchedule::validate() const {
  require(epochs >= 0 && final_cycle_epochs >= 0, "epochs must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(lr0 > 0, "lr0 must be positive");
  require(poly_power >= 0, "poly_power must be non-negative");
  require(warmup_epochs >= 0, "warmup_epochs must be non-negative");
  require(confidence_threshold > 0 && confidence_threshold < 1, "confidence threshold must lie in (0, 1)");
  require(ema_momentum >= 0 && ema_momentum <= 1, "EMA momentum must lie in [0, 1]");
  require(balanced_classmix_start_cycle >= 0, "balanced_classmix_start_cycle must be non-negative");
  require(iters_per_epoch >= 0, "iters_per_epoch must be non-negative");
  require(val_every >= 1 && checkpoint_every >= 1, "val_every and checkpoint_every must be positive");
  require(weak.crop_h >= 0 && weak.crop_w >= 0, "crop size must be non-negative");
  require(weak.flip_prob >= 0 && weak.flip_prob <= 1 && strong.flip_prob >= 0 && strong.flip_prob <= 1,
          "flip probability must lie in [0, 1]");
  require(strong.scale_min > 0 && strong.scale_min <= strong.scale_max, "invalid scale range");
  require(strong.brightness >= 0 && strong.contrast >= 0 && strong.saturation >= 0, "jitter must be non-negative");
}

json TrainSchedule::to_json() const {
  return {{"epochs", epochs},
          {"final_cycle_epochs", final_cycle_epochs},
          {"batch_size", batch_size},
          {"lr0", lr0},
          {"poly_power", poly_power},
          {"warmup_epochs", warmup_epochs},
          {"confidence_threshold", confidence_threshold},
          {"ema_momentum", ema_momentum},
          {"balanced_classmix_start_cycle", balanced_classmix_start_cycle},
          {"iters_per_epoch", iters_per_epoch},
          {"sgd_momentum", sgd.momentum},
          {"weight_decay", sgd.weight_decay},
          {"confidence_weighting", confidence_weighting},
          {"balanced_classmix", balanced_classmix},
          {"val_every", val_every},
          {"checkpoint_every", checkpoint_every},
          {"crop_h", weak.crop_h},
          {"crop_w", weak.crop_w},
          {"weak_flip_prob", weak.flip_prob},
          {"scale_min", strong.scale_min},
          {"scale_max", strong.scale_max},
          {"strong_flip_prob", strong.flip_prob},
          {"brightness", strong.brightness},
          {"contrast", strong.contrast},
          {"saturation", strong.saturation}};
}

TrainSchedule TrainSchedule::from_json(const json& j) {
  TrainSchedule s;
  s.epochs = j.at("epochs");
  s.final_cycle_epochs = j.at("final_cycle_epochs");
  s.batch_size = j.at("batch_size");
  s.lr0 = j.at("lr0");
  s.poly_power = j.at("poly_power");
  s.warmup_epochs = j.at("warmup_epochs");
  s.confidence_threshold = j.at("confidence_threshold");
  s.ema_momentum = j.at("ema_momentum");
  s.balanced_classmix_start_cycle = j.at("balanced_classmix_start_cycle");
  s.iters_per_epoch = j.at("iters_per_epoch");
  s.sgd.momentum = j.at("sgd_momentum");
  s.sgd.weight_decay = j.at("weight_decay");
  s.confidence_weighting = j.at("confidence_weighting");
  s.balanced_classmix = j.at("balanced_classmix");
  s.val_every = j.at("val_every");
  s.checkpoint_every = j.at("checkpoint_every");
  s.weak.crop_h = j.at("crop_h");
  s.weak.crop_w = j.at("crop_w");
  s.weak.flip_prob = j.at("weak_flip_prob");
  s.strong.scale_min = j.at("scale_min");
  s.strong.scale_max = j.at("scale_max");
  s.strong.flip_prob = j.at("strong_flip_prob");
  s.strong.brightness = j.at("brightness");
  s.strong.contrast = j.at("contrast");
  s.strong.saturation = j.at("saturation");
  return s;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json EpochRecord::to_json() const {
  return {{"cycle", cycle},
          {"epoch", epoch},
          {"warmup", warmup},
          {"L_sup", loss.sup},
          {"L_unsup1", loss.unsup1},
          {"L_unsup2", loss.unsup2},
          {"eta1", loss.eta1},
          {"eta2", loss.eta2},
          {"L_total", loss.total},
          {"replay_active", loss.replay_active},
          {"lr", lr},
          {"steps", steps},
          {"val_miou_teacher", opt_json(val_miou_teacher)},
          {"val_miou_student", opt_json(val_miou_student)},
          {"val_loss_teacher", opt_json(val_loss_teacher)},
          {"val_loss_student", opt_json(val_loss_student)}};
}

EpochRecord EpochRecord::from_json(const json& j) {
  EpochRecord r;
  r.cycle = j.at("cycle");
  r.epoch = j.at("epoch");
  r.warmup = j.at("warmup");
  r.loss.sup = j.at("L_sup");
  r.loss.unsup1 = j.at("L_unsup1");
  r.loss.unsup2 = j.at("L_unsup2");
  r.loss.eta1 = j.at("eta1");
  r.loss.eta2 = j.at("eta2");
  r.loss.total = j.at("L_total");
  r.loss.replay_active = j.at("replay_active");
  r.lr = j.at("lr");
  r.steps = j.at("steps");
  r.val_miou_teacher = opt_from(j, "val_miou_teacher");
  r.val_miou_student = opt_from(j, "val_miou_student");
  r.val_loss_teacher = opt_from(j, "val_loss_teacher");
  r.val_loss_student = opt_from(j, "val_loss_student");
  return r;
}

json CycleProgress::meta_json() const {
  json log_json = json::array();
  for (const EpochRecord& r : log) log_json.push_back(r.to_json());
  return {{"cycle", cycle},
          {"seed", seed},
          {"total_epochs", total_epochs},
          {"next_epoch", next_epoch},
          {"iteration", iteration},
          {"log", log_json},
          {"best_val_miou", best_val_miou},
          {"best_epoch", best_epoch}};
}

CycleProgress CycleProgress::from_meta_json(const json& j) {
  CycleProgress p;
  p.cycle = j.at("cycle");
  p.seed = j.at("seed");
  p.total_epochs = j.at("total_epochs");
  p.next_epoch = j.at("next_epoch");
  p.iteration = j.at("iteration");
  for (const json& r : j.at("log")) p.log.push_back(EpochRecord::from_json(r));
  p.best_val_miou = j.at("best_val_miou");
  p.best_epoch = j.at("best_epoch");
  return p;
}

LabelMap predict(const SegmentationModel& model, const Image& image) {
  const Image* one[] = {&image};
  const Tensor logits = model.infer(stack_images(one));
  const std::size_t pixels = logits.plane();
  LabelMap out(1, image.h, image.w, 0);
  for (std::size_t i = 0; i < pixels; ++i) {
    int best = 0;
    for (int c = 1; c < logits.c; ++c)
      if (logits.data[c * pixels + i] > logits.data[best * pixels + i]) best = c;
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

EvalResult evaluate(const SegmentationModel& model, std::span<const Sample> samples, int ignore_index, int batch) {
  require(batch >= 1, "evaluate: batch must be positive");
  const int k = model.num_classes();
  EvalResult out{ConfusionMatrix(k), {}, 0.0};
  double loss_sum = 0;
  std::size_t loss_pixels = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<const Image*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&samples[i].image);
    const Tensor logits = model.infer(stack_images(imgs));
    const std::size_t pixels = logits.plane();
    for (std::size_t i = start; i < end; ++i) {
      const int b = static_cast<int>(i - start);
      const Sample& s = samples[i];
      std::span<const float> lg(logits.sample(b), logits.sample_size());
      LabelMap pred(1, s.label.h, s.label.w, 0);
      for (std::size_t p = 0; p < pixels; ++p) {
        int best = 0;
        for (int c = 1; c < k; ++c)
          if (lg[c * pixels + p] > lg[best * pixels + p]) best = c;
        pred.data[p] = static_cast<std::uint8_t>(best);
      }
      out.confusion.accumulate(pred, s.label, ignore_index);
      std::size_t n = 0;
      for (std::uint8_t v : s.label.data) n += v != ignore_index;
      loss_sum += supervised_loss<float>(lg, k, s.label, ignore_index) * static_cast<double>(n);
      loss_pixels += n;
    }
  }
  out.iou = iou(out.confusion);
  out.loss = loss_pixels ? loss_sum / static_cast<double>(loss_pixels) : 0.0;
  return out;
}

LabeledView labeled_view(const Sample& sample, const Mask& known, int ignore_index, Rng& rng,
                         const WeakAugmentParams& params) {
  LabelMap label = sample.label;
  for (std::size_t i = 0; i < label.data.size(); ++i)
    if (!known.data[i]) label.data[i] = static_cast<std::uint8_t>(ignore_index);
  WeakView w = weak_augment(sample.image, label, rng, params);
  return {std::move(w.image), std::move(*w.label)};
}

std::vector<UnlabeledView> unlabeled_views(const SegmentationModel& teacher, std::span<const Sample* const> samples,
                                           std::span<const Mask* const> known, int ignore_index, Rng& rng,
                                           const WeakAugmentParams& weak, const StrongAugmentParams& strong) {
  require(samples.size() == known.size(), "unlabeled_views: size mismatch");
  const auto fill = static_cast<std::uint8_t>(ignore_index);
  std::vector<WeakView> weak_views;
  std::vector<const Image*> weak_images;
  for (const Sample* s : samples) {
    LabelMap label = s->label;
    weak_views.push_back(weak_augment(s->image, label, rng, weak));
  }
  for (const WeakView& w : weak_views) weak_images.push_back(&w.image);
  std::vector<UnlabeledView> out;
  if (samples.empty()) return out;
  const Tensor probs = softmax(teacher.infer(stack_images(weak_images)));

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const WeakView& w = weak_views[i];
    PseudoLabelMap pl = pseudo_label({probs.sample(static_cast<int>(i)), probs.sample_size()}, probs.c, probs.h,
                                     probs.w);
    const Mask known_w = transport(*known[i], w.transform, std::uint8_t{0});
    Mask valid(1, w.image.h, w.image.w, 1);
    for (std::size_t p = 0; p < valid.data.size(); ++p) {
      if (!known_w.data[p]) continue;
      valid.data[p] = 0;
      pl.labels.data[p] = w.label->data[p];
      pl.confidence.data[p] = 1.0f;
    }
    StrongView sv = strong_augment(w.image, rng, strong);
    out.push_back({std::move(sv.image), transport(pl.labels, sv.transform, fill),
                   transport(pl.confidence, sv.transform, 0.0f), transport(valid, sv.transform, std::uint8_t{0})});
  }
  return out;
}

std::vector<UnlabeledView> mix_batch(const std::vector<UnlabeledView>& views, const ClassDistribution& dist,
                                     bool balanced, Rng& rng) {
  const std::set<int> head(dist.head.begin(), dist.head.end());
  const std::set<int> tail(dist.tail.begin(), dist.tail.end());
  const int ignore = 255;
  std::vector<UnlabeledView> out;
  const std::size_t n = views.size();
  for (std::size_t i = 0; i < n; ++i) {
    const UnlabeledView& src = views[i];
    const UnlabeledView& tgt = views[(i + 1) % n];
    const std::vector<int> present = present_classes(src.label, nullptr, ignore);
    std::vector<int> classes;
    if (!present.empty()) classes = select_mix_classes(present, head, tail, balanced, rng);
    MixedSample m = classmix(src.image, src.label, src.confidence, tgt.image, tgt.label, tgt.confidence, classes);
    out.push_back({std::move(m.image), std::move(m.label), std::move(m.confidence),
                   apply_mix(m.mask, src.valid, tgt.valid)});
  }
  return out;
}

UnsupTerm unsup_term(std::span<const float> logits, int num_classes, const std::vector<UnlabeledView>& views,
                     double tau, bool confidence_weighting, std::span<float> grad) {
  if (views.empty()) return {};
  const std::size_t per = logits.size() / views.size();
  const double n = static_cast<double>(views.size());
  double eta_sum = 0, weighted = 0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const UnlabeledView& v = views[i];
    const double e = eta(v.confidence, tau, v.valid);
    if (e == 0) continue;
    std::span<float> g = grad.empty() ? std::span<float>{} : grad.subspan(i * per, per);
    const double l = weighted_unsup_loss<float>(logits.subspan(i * per, per), num_classes, v.label, v.confidence,
                                                v.valid, confidence_weighting, g, e / n);
    eta_sum += e;
    weighted += e * l;
  }
  if (eta_sum == 0) return {};
  return {eta_sum / n, weighted / eta_sum};
}

namespace {

constexpr std::uint64_t kShuffleKey = 0x5348;
constexpr std::uint64_t kStepKey = 0x5354;

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
  return v;
}

// Running sums behind one epoch's LossBreakdown.
struct EpochAccumulator {
  double sup = 0, eta1 = 0, eta1_loss = 0, eta2 = 0, eta2_loss = 0;
  int steps = 0;

  LossBreakdown finish(bool replay_active) const {
    if (steps == 0) return total_loss(0, 0, 0, 0, 0, replay_active);
    const double n = steps;
    const double u1 = eta1 > 0 ? eta1_loss / eta1 : 0.0;
    const double u2 = eta2 > 0 ? eta2_loss / eta2 : 0.0;
    return total_loss(sup / n, u1, u2, std::clamp(eta1 / n, 0.0, 1.0), std::clamp(eta2 / n, 0.0, 1.0),
                      replay_active);
  }
};

}  // namespace

CycleProgress train_cycle(const PoolState& pool, const Dataset& dataset, ModelPair& pair,
                          const TrainSchedule& schedule, ReplayBuffer& replay, int cycle, bool final_stage, Rng& rng,
                          const TrainHooks& hooks, const CycleProgress* resume) {
  schedule.validate();
  require(pool.size() == dataset.train.size(), "train_cycle: pool does not match the train split");
  const std::vector<std::size_t> labeled = pool.labeled_stream();
  if (labeled.empty()) fail(ErrorKind::kCannotTrain, "labeled pool is empty");
  const std::vector<std::size_t> unlabeled = pool.unlabeled_stream();
  const ClassDistribution dist = class_pixel_distribution(pool, dataset);
  const int k = dataset.num_classes;
  require(pair.student->num_classes() == k, "model class count does not match the dataset");

  CycleProgress progress;
  const std::uint64_t seed = rng.engine()();
  if (resume) {
    require(resume->cycle == cycle, "resume state belongs to another cycle");
    progress = *resume;
  } else {
    progress.cycle = cycle;
    progress.seed = seed;
    progress.total_epochs = final_stage ? schedule.final_cycle_epochs : schedule.epochs;
  }
  const int total_epochs = progress.total_epochs;
  const std::size_t b = static_cast<std::size_t>(schedule.batch_size);
  const std::size_t iters = schedule.iters_per_epoch > 0 ? static_cast<std::size_t>(schedule.iters_per_epoch)
                                                          : (labeled.size() + b - 1) / b;
  const std::size_t max_iter = iters * static_cast<std::size_t>(total_epochs);
  const bool replay_active = schedule.balanced_classmix && cycle >= schedule.balanced_classmix_start_cycle;

  std::vector<Mask> known(pool.size());
  for (std::size_t i : labeled) known[i] = pool.known_mask(i);
  for (std::size_t i : unlabeled)
    if (known[i].data.empty()) known[i] = pool.known_mask(i);

  SgdOptimizer opt(schedule.sgd);
  if (resume) opt.set_velocity(progress.velocity);

  for (int epoch = progress.next_epoch; epoch < total_epochs; ++epoch) {
    const bool warmup = epoch < schedule.warmup_epochs;
    const bool ssl = !warmup && !unlabeled.empty();
    if (epoch == schedule.warmup_epochs) pair.sync_teacher();

    Rng shuffle_rng = Rng::derive(progress.seed, {kShuffleKey, static_cast<std::uint64_t>(epoch)});
    const std::vector<std::size_t> l_order = shuffled(labeled, shuffle_rng);
    const std::vector<std::size_t> u_order = shuffled(unlabeled, shuffle_rng);
    EpochAccumulator acc;
    double lr = 0;

    for (std::size_t step = 0; step < iters; ++step) {
      Rng step_rng = Rng::derive(progress.seed, {kStepKey, static_cast<std::uint64_t>(epoch), step});
      std::vector<Image> batch_images;
      std::vector<LabelMap> batch_labels;
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t idx = l_order[(step * b + j) % l_order.size()];
        LabeledView v = labeled_view(dataset.train[idx], known[idx], dataset.ignore_index, step_rng, schedule.weak);
        batch_images.push_back(std::move(v.image));
        batch_labels.push_back(std::move(v.label));
      }

      std::vector<UnlabeledView> mixed1, mixed2;
      if (ssl) {
        std::vector<const Sample*> samples;
        std::vector<const Mask*> masks;
        for (std::size_t j = 0; j < b; ++j) {
          const std::size_t idx = u_order[(step * b + j) % u_order.size()];
          samples.push_back(&dataset.train[idx]);
          masks.push_back(&known[idx]);
          replay.push(idx);
        }
        const auto views = unlabeled_views(*pair.teacher, samples, masks, dataset.ignore_index, step_rng,
                                           schedule.weak, schedule.strong);
        mixed1 = mix_batch(views, dist, false, step_rng);
        if (replay_active) {
          std::vector<const Sample*> rs;
          std::vector<const Mask*> rm;
          for (std::size_t idx : replay.sample(b, step_rng)) {
            rs.push_back(&dataset.train[idx]);
            rm.push_back(&known[idx]);
          }
          const auto rviews = unlabeled_views(*pair.teacher, rs, rm, dataset.ignore_index, step_rng, schedule.weak,
                                              schedule.strong);
          mixed2 = mix_batch(rviews, dist, true, step_rng);
        }
      }

      for (const auto& v : mixed1) batch_images.push_back(v.image);
      for (const auto& v : mixed2) batch_images.push_back(v.image);
      const Tensor logits = pair.student->forward_train(stack_images(batch_images));
      Tensor grad(logits.n, logits.c, logits.h, logits.w);
      const std::size_t per = logits.sample_size();

      std::vector<std::size_t> counts(b, 0);
      std::size_t total_count = 0;
      for (std::size_t j = 0; j < b; ++j) {
        for (std::uint8_t v : batch_labels[j].data) counts[j] += v != dataset.ignore_index;
        total_count += counts[j];
      }
      double sup = 0;
      for (std::size_t j = 0; j < b && total_count > 0; ++j) {
        if (counts[j] == 0) continue;
        const double share = static_cast<double>(counts[j]) / static_cast<double>(total_count);
        sup += share * supervised_loss<float>({logits.sample(static_cast<int>(j)), per}, k, batch_labels[j],
                                              dataset.ignore_index, {grad.sample(static_cast<int>(j)), per}, share);
      }
      std::span<const float> all(logits.data);
      std::span<float> gall(grad.data);
      const UnsupTerm u1 = unsup_term(all.subspan(b * per, mixed1.size() * per), k, mixed1,
                                      schedule.confidence_threshold, schedule.confidence_weighting,
                                      gall.subspan(b * per, mixed1.size() * per));
      const std::size_t off2 = (b + mixed1.size()) * per;
      const UnsupTerm u2 = unsup_term(all.subspan(off2, mixed2.size() * per), k, mixed2,
                                      schedule.confidence_threshold, schedule.confidence_weighting,
                                      gall.subspan(off2, mixed2.size() * per));

      pair.student->zero_grad();
      pair.student->backward(grad);
      lr = poly_lr(schedule.lr0, progress.iteration, max_iter, schedule.poly_power);
      auto params = pair.student->parameters();
      opt.step(params, lr);
      ++progress.iteration;
      if (ssl)
        ema_update(pair, schedule.ema_momentum);
      else if (!warmup)
        pair.sync_teacher();

      acc.sup += sup;
      acc.eta1 += u1.eta;
      acc.eta1_loss += u1.eta * u1.loss;
      acc.eta2 += u2.eta;
      acc.eta2_loss += u2.eta * u2.loss;
      ++acc.steps;
    }

    EpochRecord rec;
    rec.cycle = cycle;
    rec.epoch = epoch;
    rec.warmup = warmup;
    rec.loss = acc.finish(replay_active && !warmup);
    rec.lr = lr;
    rec.steps = acc.steps;
    const bool last = epoch + 1 == total_epochs;
    if (!dataset.val.empty() && ((epoch + 1) % schedule.val_every == 0 || last)) {
      const EvalResult st = evaluate(*pair.student, dataset.val, dataset.ignore_index);
      rec.val_miou_student = st.iou.miou;
      rec.val_loss_student = st.loss;
      if (warmup) {
        rec.val_miou_teacher = st.iou.miou;
        rec.val_loss_teacher = st.loss;
      } else {
        const EvalResult te = evaluate(*pair.teacher, dataset.val, dataset.ignore_index);
        rec.val_miou_teacher = te.iou.miou;
        rec.val_loss_teacher = te.loss;
      }
      // Snapshots are taken once the teacher is live, or from the student when
      // the stage never leaves warmup.
      const bool eligible = !warmup || schedule.warmup_epochs >= total_epochs;
      if (eligible && *rec.val_miou_teacher > progress.best_val_miou) {
        progress.best_val_miou = *rec.val_miou_teacher;
        progress.best_epoch = epoch;
        progress.best_teacher = export_state(warmup ? *pair.student : *pair.teacher);
      }
    }
    if (last && schedule.warmup_epochs >= total_epochs) pair.sync_teacher();
    progress.log.push_back(rec);
    progress.next_epoch = epoch + 1;
    progress.velocity = opt.velocity();
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.on_checkpoint && (epoch + 1) % schedule.checkpoint_every == 0 && !last)
      hooks.on_checkpoint(progress, pair, replay);
    if (hooks.stop_after_epoch && !last && hooks.stop_after_epoch(progress)) return progress;
  }
  if (total_epochs == 0) pair.sync_teacher();
  if (progress.best_teacher.empty()) progress.best_teacher = export_state(*pair.teacher);
  return progress;
}

}  // namespace s4al
