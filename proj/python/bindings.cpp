#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <set>

#include "s4al/acquire.hpp"
#include "s4al/augment.hpp"
#include "s4al/config.hpp"
#include "s4al/datapool.hpp"
#include "s4al/experiment.hpp"
#include "s4al/losses.hpp"
#include "s4al/metrics.hpp"
#include "s4al/model.hpp"
#include "s4al/replay.hpp"
#include "s4al/synthetic.hpp"

namespace py = pybind11;
using namespace s4al;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <class T, class A>
Raster<T> raster_from(const A& a, int channels) {
  require(a.ndim() == (channels ? 3 : 2), "unexpected array rank");
  const int c = channels ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
  Raster<T> r(c, h, w);
  std::copy_n(a.data(), r.data.size(), r.data.begin());
  return r;
}

template <class T>
py::array_t<T> to_array(const Raster<T>& r, bool planar) {
  std::vector<py::ssize_t> shape = planar ? std::vector<py::ssize_t>{r.channels, r.h, r.w} : std::vector<py::ssize_t>{r.h, r.w};
  py::array_t<T> out(shape);
  std::copy(r.data.begin(), r.data.end(), out.mutable_data());
  return out;
}

py::dict summary(const ExperimentReport& r) {
  py::list cycles;
  for (const CycleSummary& c : r.cycles) {
    py::dict d;
    d["cycle"] = c.cycle;
    d["labeled_fraction"] = c.labeled_fraction;
    d["acquired_pixels"] = c.acquired_pixels;
    if (c.teacher) d["miou_teacher"] = c.teacher->miou;
    if (c.student) d["miou_student"] = c.student->miou;
    cycles.append(d);
  }
  py::dict out;
  out["config_hash"] = r.config_hash;
  out["complete"] = r.complete;
  out["cycles"] = cycles;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Active learning with semi-supervised segmentation training";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error((std::string(error_kind_name(e.kind())) + ": " + e.what()).c_str());
    }
  });

  // config
  m.def("canonical_config", [](const std::string& text) { return canonical_config(parse_config(text)); });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });

  // experiments
  m.def(
      "run_experiment",
      [](const std::string& config_text, const std::string& run_dir, bool dry_run, bool deterministic, bool resume) {
        RunOptions opt;
        opt.dry_run = dry_run;
        opt.deterministic = deterministic;
        opt.resume = resume;
        const ExperimentConfig c = parse_config(config_text);
        py::gil_scoped_release release;
        return run_experiment(c, run_dir, opt);
      },
      py::arg("config_text"), py::arg("run_dir"), py::arg("dry_run") = false, py::arg("deterministic") = false,
      py::arg("resume") = false);
  py::class_<ExperimentReport>(m, "ExperimentReport")
      .def_readonly("config_hash", &ExperimentReport::config_hash)
      .def_readonly("complete", &ExperimentReport::complete)
      .def_readonly("seconds", &ExperimentReport::seconds)
      .def("summary", &summary);
  m.def("write_report", &write_report, py::arg("run_dir"));

  m.def(
      "synthetic_dataset",
      [](const std::string& config_text, const std::string& split) {
        const Dataset ds = generate_synthetic(parse_config(config_text).synthetic);
        const auto& samples = split == "train" ? ds.train : split == "val" ? ds.val : ds.test;
        require(split == "train" || split == "val" || split == "test", "split is train, val or test");
        py::list images, labels;
        for (const Sample& s : samples) {
          images.append(to_array(s.image, true));
          labels.append(to_array(s.label, false));
        }
        return py::make_tuple(images, labels);
      },
      py::arg("config_text"), py::arg("split") = "train");

  // pool
  m.def(
      "initial_split",
      [](int count, int height, int width, int region_h, int region_w, double fraction, std::uint64_t seed) {
        std::vector<std::string> ids;
        for (int i = 0; i < count; ++i) ids.push_back(std::to_string(i));
        const PoolState p = init_split(ids, build_region_grid(height, width, region_h, region_w), fraction, seed);
        return py::make_tuple(p.labeled_stream(), p.unlabeled_stream(), labeled_fraction(p));
      },
      py::arg("count"), py::arg("height"), py::arg("width"), py::arg("region_h"), py::arg("region_w"),
      py::arg("fraction"), py::arg("seed") = 0);

  // losses
  m.def(
      "supervised_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits, const U8& labels) {
        require(logits.ndim() == 3, "logits are K x H x W");
        const LabelMap l = raster_from<std::uint8_t>(labels, 0);
        const int k = static_cast<int>(logits.shape(0));
        py::array_t<double> grad({logits.shape(0), logits.shape(1), logits.shape(2)});
        std::fill_n(grad.mutable_data(), grad.size(), 0.0);
        const double loss = supervised_loss<double>({logits.data(), static_cast<std::size_t>(logits.size())}, k, l, 255,
                                                    {grad.mutable_data(), static_cast<std::size_t>(grad.size())});
        return py::make_tuple(loss, grad);
      },
      py::arg("logits"), py::arg("labels"));
  m.def(
      "weighted_unsup_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits, const U8& pseudo,
         const F32& confidence, const U8& valid, bool confidence_weighting) {
        require(logits.ndim() == 3, "logits are K x H x W");
        const int k = static_cast<int>(logits.shape(0));
        py::array_t<double> grad({logits.shape(0), logits.shape(1), logits.shape(2)});
        std::fill_n(grad.mutable_data(), grad.size(), 0.0);
        const double loss = weighted_unsup_loss<double>(
            {logits.data(), static_cast<std::size_t>(logits.size())}, k, raster_from<std::uint8_t>(pseudo, 0),
            raster_from<float>(confidence, 0), raster_from<std::uint8_t>(valid, 0), confidence_weighting,
            {grad.mutable_data(), static_cast<std::size_t>(grad.size())});
        return py::make_tuple(loss, grad);
      },
      py::arg("logits"), py::arg("pseudo"), py::arg("confidence"), py::arg("valid"),
      py::arg("confidence_weighting") = true);
  m.def(
      "eta",
      [](const F32& confidence, double tau, const U8& valid) {
        return eta(raster_from<float>(confidence, 0), tau, raster_from<std::uint8_t>(valid, 0));
      },
      py::arg("confidence"), py::arg("tau"), py::arg("valid"));

  // acquisition
  m.def(
      "pixel_scores",
      [](const F32& probs, const std::string& metric) {
        require(probs.ndim() == 3, "probabilities are K x H x W");
        const ScoreMap s = pixel_scores({probs.data(), static_cast<std::size_t>(probs.size())},
                                        static_cast<int>(probs.shape(0)), static_cast<int>(probs.shape(1)),
                                        static_cast<int>(probs.shape(2)), parse_metric(metric));
        return to_array(s.scores, false);
      },
      py::arg("probs"), py::arg("metric") = "entropy");
  m.def(
      "select_regions",
      [](const F32& scores, const U8& known, int region_h, int region_w, int k) {
        ScoreMap s;
        s.scores = raster_from<float>(scores, 0);
        const std::vector<std::vector<RegionScore>> per{
            region_scores(s, build_region_grid(s.scores.h, s.scores.w, region_h, region_w), raster_from<std::uint8_t>(known, 0))};
        std::vector<std::pair<int, int>> out;
        for (const Selection& sel : select_regions(per, k)) out.emplace_back(sel.region.row, sel.region.col);
        return out;
      },
      py::arg("scores"), py::arg("known"), py::arg("region_h"), py::arg("region_w"), py::arg("k"));

  // classmix
  m.def(
      "select_mix_classes",
      [](std::vector<int> present, std::set<int> head, std::set<int> tail, bool balanced, std::uint64_t seed) {
        Rng rng(seed);
        return select_mix_classes(present, head, tail, balanced, rng);
      },
      py::arg("present"), py::arg("head"), py::arg("tail"), py::arg("balanced") = true, py::arg("seed") = 0);

  // metrics
  m.def(
      "iou",
      [](const U8& pred, const U8& gt, int num_classes) {
        ConfusionMatrix cm(num_classes);
        cm.accumulate(raster_from<std::uint8_t>(pred, 0), raster_from<std::uint8_t>(gt, 0), 255);
        const IouResult r = iou(cm);
        return py::make_tuple(r.per_class, r.miou);
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"));

  // teacher update
  m.def(
      "ema_update",
      [](py::array_t<float, py::array::c_style> teacher, const F32& student, double momentum) {
        require(teacher.size() == student.size(), "teacher and student sizes differ");
        ema_update({teacher.mutable_data(), static_cast<std::size_t>(teacher.size())},
                   {student.data(), static_cast<std::size_t>(student.size())}, momentum);
      },
      py::arg("teacher"), py::arg("student"), py::arg("momentum"));

  py::class_<ReplayBuffer>(m, "ReplayBuffer")
      .def(py::init<std::size_t>(), py::arg("capacity"))
      .def("push", &ReplayBuffer::push)
      .def("items", &ReplayBuffer::items)
      .def("__len__", &ReplayBuffer::size)
      .def(
          "sample", [](const ReplayBuffer& b, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            return b.sample(n, rng);
          },
          py::arg("n"), py::arg("seed") = 0);
}
