#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "seg/datagen.hpp"
#include "seg/ensemble.hpp"
#include "seg/error.hpp"
#include "seg/losses.hpp"
#include "seg/metrics.hpp"
#include "seg/rng.hpp"
#include "seg/swa.hpp"
#include "seg/tensor.hpp"
#include "seg/trainer.hpp"

namespace py = pybind11;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

seg::Tensor to_tensor(const DoubleArray& arr) {
  seg::require(arr.ndim() >= 1, seg::ErrorKind::InvalidShape,
               "expected an array with at least one axis");
  std::vector<std::size_t> shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  seg::Tensor t(shape);
  std::copy(arr.data(), arr.data() + arr.size(), t.data());
  return t;
}

py::array_t<double> from_tensor(const seg::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

py::dict loss_to_dict(const seg::losses::LossOutput& out) {
  py::dict d;
  d["value"] = out.value;
  d["grad"] = from_tensor(out.grad_logits);
  d["selected_count"] = out.selected_count;
  return d;
}

seg::metrics::Confusion confusion_from_rows(
    const std::vector<std::vector<std::int64_t>>& rows) {
  const int n = static_cast<int>(rows.size());
  seg::require(n >= 1, seg::ErrorKind::InvalidShape, "confusion matrix is empty");
  seg::metrics::Confusion confusion(n);
  for (int gt = 0; gt < n; ++gt) {
    seg::require(static_cast<int>(rows[static_cast<std::size_t>(gt)].size()) == n,
                 seg::ErrorKind::InvalidShape, "confusion matrix must be square");
    for (int pred = 0; pred < n; ++pred) {
      confusion.at(gt, pred) =
          rows[static_cast<std::size_t>(gt)][static_cast<std::size_t>(pred)];
    }
  }
  return confusion;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the segrecipes toolkit";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const seg::Error& e) {
      const std::string message = std::string(e.kind_name()) + ": " + e.what();
      PyErr_SetString(PyExc_ValueError, message.c_str());
    }
  });

  m.def("softmax", [](const DoubleArray& arr) {
    return from_tensor(seg::softmax(to_tensor(arr)));
  });
  m.def("log_softmax", [](const DoubleArray& arr) {
    return from_tensor(seg::log_softmax(to_tensor(arr)));
  });

  m.def(
      "ce_loss",
      [](const DoubleArray& logits, const std::vector<std::uint8_t>& labels) {
        return loss_to_dict(seg::losses::ce_loss(to_tensor(logits), labels));
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "ohem_ce_loss",
      [](const DoubleArray& logits, const std::vector<std::uint8_t>& labels,
         double conf_threshold, std::size_t min_keep) {
        seg::losses::OhemConfig cfg;
        cfg.conf_threshold = conf_threshold;
        cfg.min_keep = min_keep;
        return loss_to_dict(seg::losses::ohem_ce_loss(to_tensor(logits), labels, cfg));
      },
      py::arg("logits"), py::arg("labels"), py::arg("conf_threshold") = 0.7,
      py::arg("min_keep") = 0);

  m.def(
      "ohem_select",
      [](const std::vector<double>& gt_probs,
         const std::vector<std::uint8_t>& labels, double conf_threshold,
         std::size_t min_keep) {
        seg::losses::OhemConfig cfg;
        cfg.conf_threshold = conf_threshold;
        cfg.min_keep = min_keep;
        return seg::losses::ohem_select(gt_probs, labels, cfg);
      },
      py::arg("gt_probs"), py::arg("labels"), py::arg("conf_threshold") = 0.7,
      py::arg("min_keep") = 0);

  m.def(
      "distill_kl",
      [](const DoubleArray& student, const DoubleArray& teacher, double temperature) {
        return loss_to_dict(
            seg::losses::distill_kl(to_tensor(student), to_tensor(teacher), temperature));
      },
      py::arg("student"), py::arg("teacher"), py::arg("temperature") = 1.0);

  m.def(
      "miou",
      [](const std::vector<std::vector<std::int64_t>>& confusion) {
        const seg::metrics::IoUReport report =
            seg::metrics::miou(confusion_from_rows(confusion));
        py::dict d;
        py::list per_class;
        for (const auto& iou : report.per_class_iou) {
          if (iou.has_value()) {
            per_class.append(*iou);
          } else {
            per_class.append(py::none());
          }
        }
        d["per_class_iou"] = per_class;
        d["miou"] = report.miou;
        d["present_classes"] = report.present_classes;
        d["pixel_counts"] = report.pixel_counts;
        return d;
      },
      py::arg("confusion"));

  m.def(
      "fuse",
      [](const DoubleArray& strong, const DoubleArray& weak, const DoubleArray& aux,
         double alpha, double beta) {
        seg::ensemble::PredictionMap ps{to_tensor(strong), "f", "s", false};
        seg::ensemble::PredictionMap pw{to_tensor(weak), "f", "w", false};
        seg::ensemble::PredictionMap pa{to_tensor(aux), "f", "a", false};
        return from_tensor(
            seg::ensemble::fuse(ps, pw, pa, seg::ensemble::FusionWeights{alpha, beta})
                .probs);
      },
      py::arg("strong"), py::arg("weak"), py::arg("aux"), py::arg("alpha") = 1.4,
      py::arg("beta") = 1.0);

  m.def(
      "resize_bilinear",
      [](const DoubleArray& src, std::size_t out_h, std::size_t out_w) {
        return from_tensor(seg::ensemble::resize_bilinear(to_tensor(src), out_h, out_w));
      },
      py::arg("src"), py::arg("out_h"), py::arg("out_w"));

  m.def(
      "pairwise_mean",
      [](const std::vector<double>& values) {
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        return seg::swa::pairwise_sum(sorted) / static_cast<double>(sorted.size());
      },
      py::arg("values"));

  m.def(
      "cyclic_lr",
      [](std::int64_t t, double lr_min, double lr_max, std::int64_t cycle_length) {
        seg::trainer::TrainConfig cfg;
        cfg.lr_min = lr_min;
        cfg.lr_max = lr_max;
        cfg.cycle_length = cycle_length;
        cfg.snapshot_interval = cycle_length;
        return seg::trainer::cyclic_lr(t, cfg);
      },
      py::arg("t"), py::arg("lr_min"), py::arg("lr_max"), py::arg("cycle_length"));

  m.def("mix_seed", &seg::mix_seed, py::arg("seed"), py::arg("stream"));
  m.def("zipf_masses", &seg::datagen::zipf_masses, py::arg("num_classes"),
        py::arg("exponent"));

  m.def(
      "dataset_class_pixels",
      [](const std::string& config_json) {
        const auto config =
            seg::datagen::DatasetConfig::from_json(nlohmann::json::parse(config_json));
        const seg::datagen::Dataset dataset = seg::datagen::generate(config);
        return seg::datagen::compute_prior(dataset).pixel_counts;
      },
      py::arg("config_json"));
}
