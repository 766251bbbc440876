#include "s4al/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace s4al {

void SegmentationModel::zero_grad() {
  for (nn::Parameter* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

std::size_t SegmentationModel::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Parameter* p : parameters()) n += p->value.size();
  return n;
}

EncoderDecoder::EncoderDecoder(const EncoderDecoderConfig& config, std::uint64_t seed) : config_(config) {
  require(config.num_classes >= 2, "model needs at least two classes");
  require(config.widths.size() >= 2, "model needs at least two levels");
  const int levels = static_cast<int>(config.widths.size());
  int in = 3;
  for (int l = 0; l < levels; ++l) {
    const int w = config.widths[l];
    require(w > 0, "model widths must be positive");
    const std::string name = "enc" + std::to_string(l);
    encoder_.push_back({nn::ConvBlock(name + ".0", in, w), nn::ConvBlock(name + ".1", w, w)});
    in = w;
  }
  for (int l = 0; l + 1 < levels; ++l)
    decoder_.emplace_back("dec" + std::to_string(l), config.widths[l + 1] + config.widths[l], config.widths[l]);
  head_ = nn::Conv2d("head", config.widths[0], config.num_classes, 1);

  Rng rng = Rng::derive(seed, {0x6d6f64656cULL});
  for (auto& level : encoder_)
    for (auto& block : level) block.init(rng);
  for (auto& block : decoder_) block.init(rng);
  head_.init(rng, 1.0);
}

std::string EncoderDecoder::architecture() const {
  std::ostringstream os;
  os << "encoder_decoder(k=" << config_.num_classes << ";widths=";
  for (std::size_t i = 0; i < config_.widths.size(); ++i) os << (i ? "," : "") << config_.widths[i];
  os << ")";
  return os.str();
}

template <bool Train, class Self>
Tensor EncoderDecoder::run(Self& self, const Tensor& images) {
  require(images.c == 3, "model expects 3-channel images");
  const int levels = static_cast<int>(self.encoder_.size());
  const int stride = 1 << (levels - 1);
  const int ph = (images.h + stride - 1) / stride * stride;
  const int pw = (images.w + stride - 1) / stride * stride;

  Tensor x(images.n, 3, ph, pw);
  for (int i = 0; i < images.n; ++i)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < images.h; ++y)
        for (int xx = 0; xx < images.w; ++xx) x.at(i, c, y, xx) = images.at(i, c, y, xx) - 0.5f;

  auto block = [](auto& b, const Tensor& t) {
    if constexpr (Train) return b.forward(t);
    else return b.infer(t);
  };

  std::vector<Tensor> skips(levels);
  if constexpr (Train) {
    self.in_h_ = images.h;
    self.in_w_ = images.w;
    self.pad_h_ = ph;
    self.pad_w_ = pw;
    self.pool_argmax_.assign(levels - 1, {});
    self.level_shape_.assign(levels, {0, 0});
  }
  Tensor cur = std::move(x);
  for (int l = 0; l < levels; ++l) {
    if (l > 0) {
      if constexpr (Train) cur = nn::maxpool2(skips[l - 1], &self.pool_argmax_[l - 1]);
      else cur = nn::maxpool2(skips[l - 1]);
    }
    cur = block(self.encoder_[l][1], block(self.encoder_[l][0], cur));
    if constexpr (Train) self.level_shape_[l] = {cur.h, cur.w};
    skips[l] = cur;
  }
  for (int l = levels - 2; l >= 0; --l) {
    Tensor up = nn::upsample2(cur, skips[l].h, skips[l].w);
    cur = block(self.decoder_[l], nn::concat_channels(up, skips[l]));
  }
  Tensor logits = block(self.head_, cur);
  if (ph == images.h && pw == images.w) return logits;
  Tensor out(images.n, logits.c, images.h, images.w);
  for (int i = 0; i < images.n; ++i)
    for (int c = 0; c < logits.c; ++c)
      for (int y = 0; y < images.h; ++y)
        std::copy_n(&logits.at(i, c, y, 0), images.w, &out.at(i, c, y, 0));
  return out;
}

Tensor EncoderDecoder::infer(const Tensor& images) const { return run<false>(*this, images); }

Tensor EncoderDecoder::forward_train(const Tensor& images) { return run<true>(*this, images); }

void EncoderDecoder::backward(const Tensor& grad_logits) {
  require(grad_logits.h == in_h_ && grad_logits.w == in_w_ && grad_logits.c == config_.num_classes,
          "backward: gradient does not match last forward");
  const int levels = static_cast<int>(encoder_.size());
  Tensor g(grad_logits.n, grad_logits.c, pad_h_, pad_w_);
  for (int i = 0; i < g.n; ++i)
    for (int c = 0; c < g.c; ++c)
      for (int y = 0; y < in_h_; ++y) std::copy_n(&grad_logits.at(i, c, y, 0), in_w_, &g.at(i, c, y, 0));

  std::vector<Tensor> skip_grad(levels);
  auto accumulate = [](Tensor& acc, const Tensor& t) {
    if (acc.data.empty()) {
      acc = t;
      return;
    }
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += t.data[i];
  };

  Tensor d = head_.backward(g);
  for (int l = 0; l + 1 < levels; ++l) {
    Tensor cat = decoder_[l].backward(d);
    Tensor up, skip;
    nn::split_channels(cat, config_.widths[l + 1], up, skip);
    accumulate(skip_grad[l], skip);
    d = nn::upsample2_backward(up, level_shape_[l + 1].first, level_shape_[l + 1].second);
  }
  accumulate(skip_grad[levels - 1], d);
  for (int l = levels - 1; l >= 0; --l) {
    Tensor t = encoder_[l][1].backward(skip_grad[l]);
    t = encoder_[l][0].backward(t, l > 0);
    if (l > 0) {
      accumulate(skip_grad[l - 1],
                 nn::maxpool2_backward(t, pool_argmax_[l - 1], level_shape_[l - 1].first, level_shape_[l - 1].second));
    }
  }
}

std::vector<nn::Parameter*> EncoderDecoder::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& level : encoder_)
    for (auto& b : level) b.collect(out);
  for (auto& b : decoder_) b.collect(out);
  head_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> EncoderDecoder::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& level : encoder_)
    for (const auto& b : level) b.collect(out);
  for (const auto& b : decoder_) b.collect(out);
  head_.collect(out);
  return out;
}

std::vector<std::vector<float>*> EncoderDecoder::buffers() {
  std::vector<std::vector<float>*> out;
  for (auto& level : encoder_)
    for (auto& b : level) b.collect_buffers(out);
  for (auto& b : decoder_) b.collect_buffers(out);
  return out;
}

std::vector<const std::vector<float>*> EncoderDecoder::buffers() const {
  std::vector<const std::vector<float>*> out;
  for (const auto& level : encoder_)
    for (const auto& b : level) b.collect_buffers(out);
  for (const auto& b : decoder_) b.collect_buffers(out);
  return out;
}

std::unique_ptr<SegmentationModel> EncoderDecoder::clone() const { return std::make_unique<EncoderDecoder>(*this); }

Tensor stack_images(std::span<const Image* const> images) {
  require(!images.empty(), "cannot stack an empty batch");
  const int h = images[0]->h, w = images[0]->w;
  Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i]->channels == 3 && images[i]->same_shape(h, w), "batch images must share a shape");
    std::copy(images[i]->data.begin(), images[i]->data.end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

Tensor stack_images(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  for (const Image& im : images) ptrs.push_back(&im);
  return stack_images(ptrs);
}

ModelPair::ModelPair(std::unique_ptr<SegmentationModel> s) : student(std::move(s)) {
  require(student != nullptr, "model pair needs a student");
  teacher = student->clone();
}

ModelPair::ModelPair(const ModelPair& other) : student(other.student->clone()), teacher(other.teacher->clone()) {}

ModelPair& ModelPair::operator=(const ModelPair& other) {
  if (this != &other) {
    student = other.student->clone();
    teacher = other.teacher->clone();
  }
  return *this;
}

void ModelPair::sync_teacher() { import_state(*teacher, export_state(*student)); }

void ema_update(std::span<float> teacher, std::span<const float> student, double momentum) {
  require(momentum >= 0.0 && momentum <= 1.0, "EMA momentum must lie in [0, 1]");
  require(teacher.size() == student.size(), "EMA shape mismatch");
  const double keep = momentum, take = 1.0 - momentum;
  for (std::size_t i = 0; i < teacher.size(); ++i)
    teacher[i] = static_cast<float>(keep * teacher[i] + take * student[i]);
}

void ema_update(ModelPair& pair, double momentum) {
  require(momentum >= 0.0 && momentum <= 1.0, "EMA momentum must lie in [0, 1]");
  auto tp = pair.teacher->parameters();
  auto sp = std::as_const(*pair.student).parameters();
  require(tp.size() == sp.size(), "teacher and student parameter sets differ");
  for (std::size_t i = 0; i < tp.size(); ++i) ema_update(tp[i]->value, sp[i]->value, momentum);
  auto tb = pair.teacher->buffers();
  auto sb = std::as_const(*pair.student).buffers();
  require(tb.size() == sb.size(), "teacher and student buffers differ");
  for (std::size_t i = 0; i < tb.size(); ++i) ema_update(*tb[i], *sb[i], momentum);
}

std::vector<float> export_state(const SegmentationModel& model) {
  std::vector<float> out;
  for (const nn::Parameter* p : model.parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
  for (const std::vector<float>* b : model.buffers()) out.insert(out.end(), b->begin(), b->end());
  return out;
}

void import_state(SegmentationModel& model, std::span<const float> state) {
  std::size_t pos = 0;
  auto take = [&](auto& dst) {
    require(pos + dst.size() <= state.size(), "model state too short");
    std::copy_n(state.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
    pos += dst.size();
  };
  for (nn::Parameter* p : model.parameters()) take(p->value);
  for (std::vector<float>* b : model.buffers()) take(*b);
  require(pos == state.size(), "model state size mismatch");
}

void SgdOptimizer::step(std::span<nn::Parameter* const> params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const nn::Parameter* p : params) velocity_.emplace_back(p->value.size(), 0.0f);
  }
  const auto mu = static_cast<float>(config_.momentum);
  const auto wd = static_cast<float>(config_.weight_decay);
  const auto rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Parameter& p = *params[k];
    std::vector<float>& v = velocity_[k];
    require(v.size() == p.value.size(), "optimizer state does not match parameters");
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + p.grad[i] + wd * p.value[i];
      p.value[i] -= rate * v[i];
    }
  }
}

double poly_lr(double lr0, std::size_t iter, std::size_t max_iter, double power) {
  if (max_iter == 0 || iter >= max_iter) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

namespace {
constexpr char kMagic[8] = {'S', '4', 'A', 'L', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, values] : ckpt.tensors) header["tensors"].push_back({{"name", name}, {"size", values.size()}});
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp);
    out.write(kMagic, sizeof kMagic);
    const auto version = static_cast<std::uint32_t>(Checkpoint::kVersion);
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, values] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) fail(ErrorKind::kIo, "failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorKind::kIo, "cannot move checkpoint into place: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) fail(ErrorKind::kFormat, path + " is not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != Checkpoint::kVersion) fail(ErrorKind::kFormat, "unsupported checkpoint version in " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      std::vector<float> values(t.at("size").get<std::size_t>());
      in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
      ckpt.tensors.emplace(t.at("name").get<std::string>(), std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!in) fail(ErrorKind::kFormat, "truncated checkpoint " + path);
  return ckpt;
}

}  // namespace s4al
