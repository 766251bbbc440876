#include <filesystem>
#include <fstream>
#include <map>

#include "s4al/experiment.hpp"
#include "s4al/jsonl.hpp"

namespace s4al {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<json> required_log(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kIncompleteRun, "missing log " + path.string());
  return read_jsonl(path);
}

void write_iou_table(const fs::path& path, const std::vector<json>& rows, const char* network) {
  std::size_t k = 0;
  for (const json& r : rows)
    if (!r.at(network).is_null()) k = std::max(k, r.at(network).at("per_class").size());
  std::string text = "cycle,labeled_fraction";
  for (std::size_t c = 0; c < k; ++c) text += ",iou_" + std::to_string(c);
  text += ",miou\n";
  for (const json& r : rows) {
    text += std::to_string(r.at("cycle").get<int>()) + "," + num(r.at("labeled_fraction"));
    const json& net = r.at(network);
    for (std::size_t c = 0; c < k; ++c) {
      text += ",";
      if (!net.is_null() && !net.at("per_class").at(c).is_null()) text += num(net.at("per_class").at(c));
    }
    text += ",";
    if (!net.is_null()) text += num(net.at("miou"));
    text += "\n";
  }
  write_text_atomic(path, text);
}

}  // namespace

void write_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (!fs::exists(dir / "config.hash")) fail(ErrorKind::kIncompleteRun, run_dir + " is not a run directory");
  const std::vector<json> evals = required_log(dir / "eval.jsonl");
  const std::vector<json> classes = required_log(dir / "acquired_classes.jsonl");
  required_log(dir / "acquisitions.jsonl");
  if (evals.empty()) fail(ErrorKind::kIncompleteRun, "no cycle has finished in " + run_dir);

  fs::create_directories(dir / "report");
  write_iou_table(dir / "report" / "iou_teacher.csv", evals, "teacher");
  write_iou_table(dir / "report" / "iou_student.csv", evals, "student");

  std::size_t k = 0;
  for (const json& r : classes)
    if (r.contains("class_pixels")) k = std::max(k, r.at("class_pixels").size());
  std::string acq = "cycle,regions,pixels";
  for (std::size_t c = 0; c < k; ++c) acq += ",class_" + std::to_string(c);
  acq += ",ignore\n";
  for (const json& r : classes) {
    acq += std::to_string(r.at("cycle").get<int>()) + "," + std::to_string(r.at("regions").get<std::size_t>()) + "," +
           std::to_string(r.at("pixels").get<std::uint64_t>());
    for (std::size_t c = 0; c < k; ++c)
      acq += "," + (r.contains("class_pixels") ? std::to_string(r.at("class_pixels").at(c).get<std::uint64_t>()) : "");
    acq += "," + (r.contains("ignore_pixels") ? std::to_string(r.at("ignore_pixels").get<std::uint64_t>()) : "");
    acq += "\n";
  }
  write_text_atomic(dir / "report" / "acquisition_summary.csv", acq);

  std::string plot = "labeled_fraction,miou_teacher,miou_student\n";
  double last = -1;
  for (const json& r : evals) {
    const double x = r.at("labeled_fraction");
    if (x <= last) fail(ErrorKind::kFormat, "labeled fraction does not increase across cycles");
    last = x;
    plot += num(x) + ",";
    if (!r.at("teacher").is_null()) plot += num(r.at("teacher").at("miou"));
    plot += ",";
    if (!r.at("student").is_null()) plot += num(r.at("student").at("miou"));
    plot += "\n";
  }
  write_text_atomic(dir / "report" / "miou_vs_fraction.csv", plot);

  const json summary = {{"config_hash", read_text(dir / "config.hash").substr(0, 16)},
                        {"config_hash_matches_snapshot",
                         fnv1a_hex(read_text(dir / "config.ini")) == read_text(dir / "config.hash").substr(0, 16)},
                        {"cycles", evals}};
  write_text_atomic(dir / "report" / "summary.json", summary.dump(2) + "\n");
}

}  // namespace s4al
