#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fmue/calibration.hpp"
#include "fmue/checkpoint.hpp"
#include "fmue/errors.hpp"
#include "fmue/evaluation.hpp"
#include "fmue/evidential.hpp"
#include "fmue/explain.hpp"
#include "fmue/model.hpp"
#include "fmue/synthetic.hpp"
#include "fmue/trainer.hpp"

namespace py = pybind11;
using namespace fmue;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (C, H, W) or (H, W) -> CHW image.
ImageArray to_image(const DoubleArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("expected an (H, W) or (C, H, W) array");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2));
  const int w = static_cast<int>(a.shape(a.ndim() - 1));
  ImageArray img(c, h, w);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

py::array_t<double> to_numpy(const ImageArray& img) {
  py::array_t<double> out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

std::vector<ImageArray> to_batch(const DoubleArray& a) {
  if (a.ndim() != 4) throw ShapeError("expected an (N, C, H, W) batch");
  std::vector<ImageArray> batch;
  const auto per = static_cast<std::size_t>(a.shape(1) * a.shape(2) * a.shape(3));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    ImageArray img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
    std::copy(a.data() + i * per, a.data() + (i + 1) * per, img.data.begin());
    batch.push_back(std::move(img));
  }
  return batch;
}

py::dict opinion_dict(const DirichletOpinion& o) {
  py::dict d;
  d["belief"] = o.belief;
  d["uncertainty"] = o.uncertainty;
  d["alpha"] = o.alpha;
  d["strength"] = o.strength;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fmue, m) {
  m.doc() = "Evidential uncertainty classifier: opinions, loss, calibration, metrics and model inference.";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("evidence_from_logits", [](const std::vector<double>& z) {
    auto e = evidence_from_logits(z);
    return std::vector<double>(e.values().begin(), e.values().end());
  });
  m.def("opinion", [](const std::vector<double>& e) { return opinion_dict(opinion_from_evidence(EvidenceVector(e))); },
        py::arg("evidence"));
  m.def("kl_dirichlet_uniform", [](const std::vector<double>& a) { return kl_dirichlet_uniform(a); });
  m.def(
      "edl_loss",
      [](const std::vector<double>& evidence, std::size_t label, int epoch, int anneal_horizon) {
        LossConfig cfg;
        cfg.anneal_horizon = anneal_horizon;
        const auto l = edl_loss(EvidenceVector(evidence), label, epoch, cfg);
        py::dict d;
        d["expected_ce"] = l.expected_ce;
        d["kl_term"] = l.kl_term;
        d["lambda"] = l.lambda;
        d["total"] = l.total;
        return d;
      },
      py::arg("evidence"), py::arg("label"), py::arg("epoch") = 0, py::arg("anneal_horizon") = 10);

  py::class_<CalibrationReport>(m, "CalibrationReport")
      .def_readonly("theta", &CalibrationReport::theta)
      .def_readonly("excluded_count", &CalibrationReport::excluded_count)
      .def_readonly("accuracy_trace", &CalibrationReport::accuracy_trace)
      .def_readonly("incidence_trace", &CalibrationReport::incidence_trace)
      .def_readonly("excluded_indices", &CalibrationReport::excluded_indices)
      .def_property_readonly("stop_reason", [](const CalibrationReport& r) { return stop_reason_name(r.stop_reason); });
  m.def(
      "calibrate_threshold",
      [](std::vector<double> u, std::vector<bool> correct, std::vector<bool> abnormal, const std::string& rule) {
        CalibrationOptions opt;
        if (rule == "previous") opt.rule = StopRule::PreviousStep;
        else if (rule != "initial") throw ConfigError("rule must be 'initial' or 'previous'");
        return calibrate_threshold({std::move(u), std::move(correct), std::move(abnormal)}, opt);
      },
      py::arg("uncertainty"), py::arg("correct"), py::arg("abnormal"), py::arg("rule") = "initial");

  m.def("rank_auc", [](const std::vector<double>& s, const std::vector<bool>& pos) { return rank_auc(s, pos); });
  m.def(
      "coverage_curve",
      [](const std::vector<double>& u, const std::vector<bool>& correct, double min_fraction) {
        auto c = coverage_curve(u, correct, min_fraction);
        std::vector<std::pair<double, double>> pts;
        for (auto& p : c.points) pts.emplace_back(p.retained_fraction, p.accuracy);
        return py::make_tuple(pts, c.auc);
      },
      py::arg("uncertainty"), py::arg("correct"), py::arg("min_fraction") = 0.1);
  m.def(
      "ood_detection_rate",
      [](const std::vector<double>& u, double theta) { return ood_detection_rate(u, theta).detection_rate; },
      py::arg("uncertainty"), py::arg("theta"));
  m.def("odds_ratio", [](const std::vector<bool>& high, const std::vector<bool>& wrong) {
    auto r = misclassification_association(high, wrong);
    return py::make_tuple(r.odds_ratio, r.ci_low, r.ci_high, r.p_value);
  });

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out, std::uint64_t seed, int samples_per_class, int patients_per_class) {
        auto spec = SyntheticSpec::default_spec();
        spec.samples_per_class = samples_per_class;
        spec.patients_per_class = patients_per_class;
        auto o = generate_synthetic(spec, seed, out);
        return py::make_tuple(o.manifest.records.size(), o.ood_manifest.records.size());
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("samples_per_class") = 50, py::arg("patients_per_class") = 10);

  py::class_<ModelBundle>(m, "Model")
      .def_static(
          "build",
          [](int image_size, int patch_size, int embed_dim, int depth, int heads, int class_count, std::uint64_t seed) {
            EncoderConfig c;
            c.image_size = image_size;
            c.patch_size = patch_size;
            c.embed_dim = embed_dim;
            c.depth = depth;
            c.heads = heads;
            return build_model(c, class_count, seed);
          },
          py::arg("image_size") = 64, py::arg("patch_size") = 8, py::arg("embed_dim") = 64, py::arg("depth") = 6,
          py::arg("heads") = 4, py::arg("class_count") = 4, py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const ModelBundle& mb, const std::filesystem::path& p) { save_checkpoint(mb, p); })
      .def(
          "inject_lora",
          [](ModelBundle& mb, int rank, double scaling) {
            LoRAConfig c;
            c.rank = rank;
            c.scaling = scaling;
            inject_lora(mb, c);
          },
          py::arg("rank") = 4, py::arg("scaling") = 8.0)
      .def("freeze_base", [](ModelBundle& mb) { freeze_base(mb); })
      .def_property_readonly("parameter_count", &ModelBundle::parameter_count)
      .def_property_readonly("trainable_parameter_count", &ModelBundle::trainable_parameter_count)
      .def_property_readonly("trainable_names", &ModelBundle::trainable_names)
      .def_property_readonly("class_count", [](const ModelBundle& mb) { return mb.class_count; })
      .def("logits",
           [](const ModelBundle& mb, const DoubleArray& batch) {
             const Matrix l = forward(mb, to_batch(batch));
             py::array_t<double> out({l.rows(), l.cols()});
             std::copy(l.data(), l.data() + l.size(), out.mutable_data());
             return out;
           })
      .def("predict",
           [](const ModelBundle& mb, const DoubleArray& batch) {
             py::list out;
             for (const auto& p : predict_dataset(mb, to_batch(batch))) {
               py::dict d = opinion_dict(p.opinion);
               d["predicted_class"] = p.predicted_class;
               out.append(d);
             }
             return out;
           })
      .def(
          "grad_cam",
          [](const ModelBundle& mb, const DoubleArray& image, int target_class, int source_block) {
            const Heatmap h = grad_cam(mb, to_image(image), target_class, source_block);
            return to_numpy(h.values);
          },
          py::arg("image"), py::arg("target_class"), py::arg("source_block") = -1);

  m.def("preprocess", [](const DoubleArray& image, int image_size) {
    PreprocessConfig cfg;
    cfg.image_size = image_size;
    return to_numpy(preprocess(to_image(image), cfg));
  }, py::arg("image"), py::arg("image_size") = 64);
}
