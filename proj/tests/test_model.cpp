#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "s4al/losses.hpp"
#include "s4al/model.hpp"

using namespace s4al;

namespace {

EncoderDecoderConfig tiny(int k = 3) { return {k, {4, 6, 8}}; }

Tensor random_batch(int n, int h, int w, Rng& rng) {
  Tensor t(n, 3, h, w);
  for (float& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

double norm_diff(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("ema matches the closed form against a fixed student") {
  Rng rng(1);
  std::vector<float> t0(64), s(64);
  for (auto& v : t0) v = static_cast<float>(rng.normal(0, 1));
  for (auto& v : s) v = static_cast<float>(rng.normal(0, 1));
  for (double m : {0.0, 0.5, 0.9, 0.99, 1.0}) {
    std::vector<double> t(t0.begin(), t0.end());
    std::vector<float> tf = t0;
    for (int n = 1; n <= 50; ++n) {
      ema_update(tf, s, m);
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double closed = s[i] + (double(t0[i]) - s[i]) * std::pow(m, n);
        CHECK(std::abs(tf[i] - closed) < 1e-6);
      }
      // drift bound
      CHECK(norm_diff(tf, s) <= norm_diff(t0, s) * std::pow(m, n) + 1e-5);
    }
  }
  std::vector<float> a(2), b(2);
  CHECK_THROWS_AS(ema_update(a, b, 1.5), Error);
  CHECK_THROWS_AS(ema_update(a, b, -0.1), Error);
}

TEST_CASE("property: ema is elementwise") {
  Rng rng(2);
  std::vector<float> t(40), s(40);
  for (auto& v : t) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : s) v = static_cast<float>(rng.uniform(-1, 1));
  std::vector<float> whole = t;
  ema_update(whole, s, 0.93);
  std::vector<float> parts = t;
  ema_update(std::span(parts).first(17), std::span<const float>(s).first(17), 0.93);
  ema_update(std::span(parts).subspan(17), std::span<const float>(s).subspan(17), 0.93);
  CHECK(whole == parts);
}

TEST_CASE("model pair ema covers parameters and running statistics") {
  ModelPair pair(std::make_unique<EncoderDecoder>(tiny(), 3));
  Rng rng(3);
  (void)pair.student->forward_train(random_batch(2, 8, 8, rng));  // moves BN statistics
  for (auto* p : pair.student->parameters())
    for (float& v : p->value) v += 0.5f;
  const auto t0 = export_state(*pair.teacher), s = export_state(*pair.student);
  ema_update(pair, 0.9);
  const auto t1 = export_state(*pair.teacher);
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(std::abs(t1[i] - (0.9 * t0[i] + 0.1 * s[i])) < 1e-6);
  pair.sync_teacher();
  CHECK(export_state(*pair.teacher) == export_state(*pair.student));
}

TEST_CASE("logits come back at input resolution for odd sizes") {
  EncoderDecoder net(tiny(5), 4);
  Rng rng(4);
  const Tensor y = net.infer(random_batch(2, 13, 9, rng));
  CHECK(y.n == 2);
  CHECK(y.c == 5);
  CHECK(y.h == 13);
  CHECK(y.w == 9);
  Tensor bad(1, 4, 8, 8);
  CHECK_THROWS_AS(net.infer(bad), Error);
}

TEST_CASE("backward matches finite differences") {
  EncoderDecoder net(tiny(3), 5);
  Rng rng(5);
  const Tensor x = random_batch(2, 8, 8, rng);
  LabelMap labels(1, 8, 8);
  for (auto& v : labels.data) v = static_cast<std::uint8_t>(rng.index(3));

  // loss = sum over both images of the mean CE, evaluated in float
  auto loss_of = [&](SegmentationModel& m) {
    const Tensor y = m.forward_train(x);
    double l = 0;
    for (int i = 0; i < 2; ++i)
      l += supervised_loss<float>({y.sample(i), y.sample_size()}, 3, labels, 255);
    return l;
  };
  net.zero_grad();
  const Tensor y = net.forward_train(x);
  Tensor g(y.n, y.c, y.h, y.w);
  for (int i = 0; i < 2; ++i)
    supervised_loss<float>({y.sample(i), y.sample_size()}, 3, labels, 255, {g.sample(i), g.sample_size()});
  net.backward(g);
  const double l0 = loss_of(net);

  // relu and max-pool ties put some points exactly on a kink; there the
  // analytic value has to agree with one of the one-sided slopes
  int smooth = 0, kinks = 0;
  auto close = [](double a, double b) { return std::abs(a - b) <= 2e-3 + 2e-2 * std::abs(b); };
  for (nn::Parameter* p : net.parameters()) {
    for (std::size_t j = 0; j < p->value.size(); j += std::max<std::size_t>(1, p->value.size() / 3)) {
      const float orig = p->value[j];
      const float h = 1e-3f;
      p->value[j] = orig + h;
      const double lp = loss_of(net);
      p->value[j] = orig - h;
      const double lm = loss_of(net);
      p->value[j] = orig;
      const double fwd = (lp - l0) / h, bwd = (l0 - lm) / h, an = p->grad[j];
      if (close(fwd, bwd)) {
        CHECK(close(an, (lp - lm) / (2 * h)));
        ++smooth;
      } else {
        CHECK((close(an, fwd) || close(an, bwd)));
        ++kinks;
      }
    }
  }
  CHECK(smooth > 20);
  CHECK(kinks < smooth);
}

TEST_CASE("sanity: overfits two images") {
  EncoderDecoder net({2, {8, 16}}, 6);
  Rng rng(6);
  Tensor x(2, 3, 8, 8);
  LabelMap lbl[2] = {LabelMap(1, 8, 8), LabelMap(1, 8, 8)};
  for (int i = 0; i < 2; ++i)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        const bool fg = (i == 0 ? xx < 4 : y < 4);
        lbl[i].at(y, xx) = fg;
        for (int c = 0; c < 3; ++c) x.at(i, c, y, xx) = static_cast<float>((fg ? 0.7 : 0.3) + rng.normal(0, 0.05));
      }
  SgdOptimizer opt({0.0, 0.0});
  double prev = 1e9, last = 0;
  int rises = 0;
  for (int step = 0; step < 500; ++step) {
    net.zero_grad();
    const Tensor y = net.forward_train(x);
    Tensor g(y.n, y.c, y.h, y.w);
    double l = 0;
    for (int i = 0; i < 2; ++i)
      l += 0.5 * supervised_loss<float>({y.sample(i), y.sample_size()}, 2, lbl[i], 255, {g.sample(i), g.sample_size()}, 0.5);
    net.backward(g);
    auto params = net.parameters();
    opt.step(params, 0.05);
    if (l > prev + 1e-6) ++rises;
    prev = last = l;
  }
  CHECK(last < 0.1);
  CHECK(rises == 0);
}

TEST_CASE("sgd update rule") {
  nn::Parameter p{"w", {1.0f, -2.0f}, {0.5f, 0.25f}};
  std::vector<nn::Parameter*> ps{&p};
  SgdOptimizer opt({0.9, 0.1});
  opt.step(ps, 0.1);
  // v = g + wd w; w -= lr v
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.1)));
  CHECK(p.value[1] == doctest::Approx(-2.0 - 0.1 * (0.25 - 0.2)));
  const float v0 = 0.5f + 0.1f * 1.0f;
  const float w0 = p.value[0];
  opt.step(ps, 0.1);
  CHECK(p.value[0] == doctest::Approx(w0 - 0.1 * (0.9 * v0 + 0.5 + 0.1 * w0)));
}

TEST_CASE("poly learning rate") {
  CHECK(poly_lr(0.01, 0, 100, 0.9) == doctest::Approx(0.01));
  CHECK(poly_lr(0.01, 50, 100, 0.9) == doctest::Approx(0.01 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(0.01, 100, 100, 0.9) == doctest::Approx(0.0));
}

TEST_CASE("checkpoint round trip and corruption") {
  EncoderDecoder net(tiny(), 7);
  Checkpoint ck;
  ck.meta = {{"kind", "test"}};
  ck.tensors["student"] = export_state(net);
  const auto path = (std::filesystem::temp_directory_path() / "s4al_ckpt_test.ckpt").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.meta == ck.meta);
  CHECK(back.tensors == ck.tensors);

  EncoderDecoder other(tiny(), 8);
  import_state(other, back.tensors.at("student"));
  CHECK(export_state(other) == export_state(net));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  try {
    (void)load_checkpoint(path);
    FAIL("truncated checkpoint loaded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
  std::filesystem::remove(path);
}
