#include "s4al/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace s4al {

void CycleConfig::validate() const {
  require(num_cycles >= 0, "num_cycles must be non-negative");
  require(per_image_k >= 1, "per_image_k must be at least 1");
  require(region_h >= 1 && region_w >= 1, "region size must be positive");
  require(initial_fraction > 0 && initial_fraction < 1, "initial_fraction must lie in (0, 1)");
  require(replay_capacity >= 1, "replay_capacity must be at least 1");
  require(!global_budget || budget_regions >= 1, "global budget needs budget_regions >= 1");
}

void ExperimentConfig::validate() const {
  cycle.validate();
  train.validate();
  require(dataset.source == "synthetic" || dataset.source == "directory" || dataset.source == "layout",
          "dataset.source must be synthetic, directory or layout");
  if (dataset.source == "directory") require(!dataset.path.empty(), "dataset.path is required for directory datasets");
  if (dataset.source == "layout")
    require(dataset.train_count >= 1 && dataset.height >= 1 && dataset.width >= 1,
            "layout datasets need train_count, height and width");
  require(!model.widths.empty(), "model.widths must list at least one level");
  for (int w : model.widths) require(w >= 1, "model widths must be positive");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::string& v) { return v; }
template <class T>
std::string fmt(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorKind::kInvalidArgument, "config: bad value '" + value + "' for " + key);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto r = std::from_chars(value.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, value);
  return out;
}

void parse_into(const std::string& key, const std::string& v, int& out) { out = parse_number<int>(key, v); }
void parse_into(const std::string& key, const std::string& v, double& out) { out = parse_number<double>(key, v); }
void parse_into(const std::string& key, const std::string& v, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, v);
}
void parse_into(const std::string&, const std::string& v, std::string& out) { out = v; }
void parse_into(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") out = true;
  else if (v == "false" || v == "0" || v == "no") out = false;
  else bad_value(key, v);
}
template <class T>
void parse_into(const std::string& key, const std::string& v, std::vector<T>& out) {
  out.clear();
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    if (a == std::string::npos) bad_value(key, v);
    T x{};
    parse_into(key, item.substr(a, b - a + 1), x);
    out.push_back(x);
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Field field(std::string section, std::string key, T ExperimentConfig::*outer) {
  const std::string name = section + "." + key;
  return {section, key, [outer](const ExperimentConfig& c) { return fmt(c.*outer); },
          [outer, name](ExperimentConfig& c, const std::string& v) { parse_into(name, v, c.*outer); }};
}

template <class S, class T>
Field field(std::string section, std::string key, S ExperimentConfig::*outer, T S::*inner) {
  const std::string name = section + "." + key;
  return {section, key, [outer, inner](const ExperimentConfig& c) { return fmt(c.*outer.*inner); },
          [outer, inner, name](ExperimentConfig& c, const std::string& v) { parse_into(name, v, c.*outer.*inner); }};
}

template <class S, class U, class T>
Field field(std::string section, std::string key, S ExperimentConfig::*outer, U S::*mid, T U::*inner) {
  const std::string name = section + "." + key;
  return {section, key, [=](const ExperimentConfig& c) { return fmt(c.*outer.*mid.*inner); },
          [=](ExperimentConfig& c, const std::string& v) { parse_into(name, v, c.*outer.*mid.*inner); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(field("experiment", "name", &C::name));
    f.push_back(field("experiment", "seed", &C::cycle, &CycleConfig::seed));
    f.push_back(field("experiment", "reinit_each_cycle", &C::reinit_each_cycle));

    f.push_back(field("dataset", "source", &C::dataset, &DatasetConfig::source));
    f.push_back(field("dataset", "path", &C::dataset, &DatasetConfig::path));
    f.push_back(field("dataset", "num_classes", &C::dataset, &DatasetConfig::num_classes));
    f.push_back(field("dataset", "train_count", &C::dataset, &DatasetConfig::train_count));
    f.push_back(field("dataset", "height", &C::dataset, &DatasetConfig::height));
    f.push_back(field("dataset", "width", &C::dataset, &DatasetConfig::width));

    f.push_back(field("synthetic", "num_classes", &C::synthetic, &SyntheticConfig::num_classes));
    f.push_back(field("synthetic", "shares", &C::synthetic, &SyntheticConfig::shares));
    f.push_back(field("synthetic", "height", &C::synthetic, &SyntheticConfig::height));
    f.push_back(field("synthetic", "width", &C::synthetic, &SyntheticConfig::width));
    f.push_back(field("synthetic", "train", &C::synthetic, &SyntheticConfig::train));
    f.push_back(field("synthetic", "val", &C::synthetic, &SyntheticConfig::val));
    f.push_back(field("synthetic", "test", &C::synthetic, &SyntheticConfig::test));
    f.push_back(field("synthetic", "max_shapes_per_class", &C::synthetic, &SyntheticConfig::max_shapes_per_class));
    f.push_back(field("synthetic", "decoys", &C::synthetic, &SyntheticConfig::decoys));
    f.push_back(field("synthetic", "color_jitter", &C::synthetic, &SyntheticConfig::color_jitter));
    f.push_back(field("synthetic", "pixel_noise", &C::synthetic, &SyntheticConfig::pixel_noise));
    f.push_back(field("synthetic", "seed", &C::synthetic, &SyntheticConfig::seed));

    f.push_back(field("cycle", "num_cycles", &C::cycle, &CycleConfig::num_cycles));
    f.push_back(field("cycle", "per_image_k", &C::cycle, &CycleConfig::per_image_k));
    f.push_back(field("cycle", "region_h", &C::cycle, &CycleConfig::region_h));
    f.push_back(field("cycle", "region_w", &C::cycle, &CycleConfig::region_w));
    f.push_back({"cycle", "metric", [](const C& c) { return std::string(metric_name(c.cycle.metric)); },
                 [](C& c, const std::string& v) { c.cycle.metric = parse_metric(v); }});
    f.push_back(field("cycle", "initial_fraction", &C::cycle, &CycleConfig::initial_fraction));
    f.push_back(field("cycle", "replay_capacity", &C::cycle, &CycleConfig::replay_capacity));
    f.push_back(field("cycle", "global_budget", &C::cycle, &CycleConfig::global_budget));
    f.push_back(field("cycle", "budget_regions", &C::cycle, &CycleConfig::budget_regions));

    f.push_back(field("train", "epochs", &C::train, &TrainSchedule::epochs));
    f.push_back(field("train", "final_cycle_epochs", &C::train, &TrainSchedule::final_cycle_epochs));
    f.push_back(field("train", "batch_size", &C::train, &TrainSchedule::batch_size));
    f.push_back(field("train", "lr0", &C::train, &TrainSchedule::lr0));
    f.push_back(field("train", "poly_power", &C::train, &TrainSchedule::poly_power));
    f.push_back(field("train", "warmup_epochs", &C::train, &TrainSchedule::warmup_epochs));
    f.push_back(field("train", "confidence_threshold", &C::train, &TrainSchedule::confidence_threshold));
    f.push_back(field("train", "ema_momentum", &C::train, &TrainSchedule::ema_momentum));
    f.push_back(field("train", "balanced_classmix_start_cycle", &C::train,
                     &TrainSchedule::balanced_classmix_start_cycle));
    f.push_back(field("train", "iters_per_epoch", &C::train, &TrainSchedule::iters_per_epoch));
    f.push_back(field("train", "sgd_momentum", &C::train, &TrainSchedule::sgd, &SgdConfig::momentum));
    f.push_back(field("train", "weight_decay", &C::train, &TrainSchedule::sgd, &SgdConfig::weight_decay));
    f.push_back(field("train", "confidence_weighting", &C::train, &TrainSchedule::confidence_weighting));
    f.push_back(field("train", "balanced_classmix", &C::train, &TrainSchedule::balanced_classmix));
    f.push_back(field("train", "val_every", &C::train, &TrainSchedule::val_every));
    f.push_back(field("train", "checkpoint_every", &C::train, &TrainSchedule::checkpoint_every));

    f.push_back(field("augment", "crop_h", &C::train, &TrainSchedule::weak, &WeakAugmentParams::crop_h));
    f.push_back(field("augment", "crop_w", &C::train, &TrainSchedule::weak, &WeakAugmentParams::crop_w));
    f.push_back(field("augment", "weak_flip_prob", &C::train, &TrainSchedule::weak, &WeakAugmentParams::flip_prob));
    f.push_back(field("augment", "scale_min", &C::train, &TrainSchedule::strong, &StrongAugmentParams::scale_min));
    f.push_back(field("augment", "scale_max", &C::train, &TrainSchedule::strong, &StrongAugmentParams::scale_max));
    f.push_back(
        field("augment", "strong_flip_prob", &C::train, &TrainSchedule::strong, &StrongAugmentParams::flip_prob));
    f.push_back(field("augment", "brightness", &C::train, &TrainSchedule::strong, &StrongAugmentParams::brightness));
    f.push_back(field("augment", "contrast", &C::train, &TrainSchedule::strong, &StrongAugmentParams::contrast));
    f.push_back(field("augment", "saturation", &C::train, &TrainSchedule::strong, &StrongAugmentParams::saturation));

    f.push_back(field("model", "widths", &C::model, &EncoderDecoderConfig::widths));
    return f;
  }();
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  // The ini reader only knows ';' comments.
  std::string cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    cleaned += line + '\n';
  }
  boost::property_tree::ptree tree;
  std::istringstream in(cleaned);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::kFormat, std::string("config: ") + e.what());
  }

  std::map<std::string, const Field*> by_name;
  for (const Field& f : fields()) by_name[f.section + "." + f.key] = &f;
  ExperimentConfig config;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty())
      fail(ErrorKind::kInvalidArgument, "config: key '" + section + "' outside any section");
    for (const auto& [key, value] : keys) {
      const auto it = by_name.find(section + "." + key);
      if (it == by_name.end()) fail(ErrorKind::kInvalidArgument, "config: unknown key " + section + "." + key);
      it->second->set(config, value.data());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& config) { return fnv1a_hex(canonical_config(config)); }

}  // namespace s4al
