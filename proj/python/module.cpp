#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "siamlite/cli.hpp"
#include "siamlite/compression.hpp"
#include "siamlite/flops.hpp"
#include "siamlite/metrics.hpp"
#include "siamlite/model_io.hpp"
#include "siamlite/ops.hpp"
#include "siamlite/sequence.hpp"
#include "siamlite/training.hpp"

namespace py = pybind11;
using namespace siamlite;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
BasicTensor<T> to_tensor(const Array<T>& a) {
  if (a.ndim() != 4) throw ShapeError("expected a 4-d N x C x H x W array");
  const Shape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  return BasicTensor<T>(s, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const BasicTensor<T>& t) {
  const Shape& s = t.shape();
  Array<T> out({s.n, s.c, s.h, s.w});
  std::copy(t.vector().begin(), t.vector().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> image_to_array(const Image& im) {
  py::array_t<std::uint8_t> out({im.height, im.width, std::size_t{3}});
  std::copy(im.rgb.begin(), im.rgb.end(), out.mutable_data());
  return out;
}

Image array_to_image(const Array<std::uint8_t>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("expected an H x W x 3 uint8 array");
  Image im(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), im.rgb.begin());
  return im;
}

ModelScale scale_from(const std::string& name) {
  if (name == "desk") return ModelScale::kDesk;
  if (name == "paper") return ModelScale::kPaper;
  throw ValueError("unknown scale '" + name + "'");
}

py::dict terms_dict(const LossTerms& t) {
  py::dict d;
  d["cls"] = t.cls;
  d["reg"] = t.reg;
  d["kd"] = t.kd;
  d["total"] = t.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Lightweight Siamese tracker: networks, training, compression and metrics";

  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<BBox>(m, "BBox")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double w, double h) { return BBox{cx, cy, w, h}; }),
           py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_static("from_top_left", &BBox::from_top_left)
      .def_readwrite("cx", &BBox::cx)
      .def_readwrite("cy", &BBox::cy)
      .def_readwrite("w", &BBox::w)
      .def_readwrite("h", &BBox::h)
      .def("__eq__", [](const BBox& a, const BBox& b) { return a == b; })
      .def("__repr__", [](const BBox& b) {
        std::ostringstream s;
        s << "BBox(cx=" << b.cx << ", cy=" << b.cy << ", w=" << b.w << ", h=" << b.h << ")";
        return s.str();
      });

  m.def("iou", &iou);
  m.def("center_error", &center_error);

  m.def("conv2d", [](const Array<double>& x, const Array<double>& w, const std::vector<double>& b,
                     std::size_t stride, std::size_t padding) {
    return to_array(conv2d(to_tensor(x), to_tensor(w), std::span<const double>(b), stride, padding));
  }, py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def("depthwise_conv2d", [](const Array<double>& x, const Array<double>& w,
                               const std::vector<double>& b, std::size_t stride, std::size_t padding) {
    return to_array(
        depthwise_conv2d(to_tensor(x), to_tensor(w), std::span<const double>(b), stride, padding));
  }, py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def("cross_correlate", [](const Array<double>& s, const Array<double>& t) {
    return to_array(cross_correlate(to_tensor(s), to_tensor(t)));
  }, py::arg("search"), py::arg("template"));

  py::class_<Sequence>(m, "Sequence")
      .def(py::init<>())
      .def_readwrite("name", &Sequence::name)
      .def_readwrite("gt", &Sequence::gt)
      .def("__len__", &Sequence::size)
      .def("frame", [](const Sequence& s, std::size_t i) { return image_to_array(s.frames.at(i)); })
      .def("append", [](Sequence& s, const Array<std::uint8_t>& frame, const BBox& box) {
        s.frames.push_back(array_to_image(frame));
        s.gt.push_back(box);
      });

  m.def("synth_sequence", [](std::size_t length, std::uint64_t seed, const std::string& motion,
                             double speed, std::size_t width, std::size_t height, bool occluder) {
    SynthParams p;
    p.motion = motion_from_string(motion);
    p.speed = speed;
    p.width = width;
    p.height = height;
    p.occluder = occluder;
    Rng rng(seed);
    p.texture_seed = rng.next();
    return synth_sequence(p, length, rng);
  }, py::arg("length"), py::arg("seed") = 42, py::arg("motion") = "linear", py::arg("speed") = 1.0,
     py::arg("width") = 128, py::arg("height") = 128, py::arg("occluder") = false);
  m.def("load_sequences", &load_sequences);
  m.def("save_sequence", &save_sequence);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_reg", &TrainConfig::lambda_reg)
      .def_readwrite("kd_weight", &TrainConfig::kd_weight)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("pos_radius", &TrainConfig::pos_radius)
      .def_readwrite("rng_seed", &TrainConfig::rng_seed)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm);

  py::class_<TrackerConfig>(m, "TrackerConfig")
      .def(py::init<>())
      .def_readwrite("context_factor", &TrackerConfig::context_factor)
      .def_readwrite("window_weight", &TrackerConfig::window_weight)
      .def_readwrite("size_smoothing", &TrackerConfig::size_smoothing);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& scale, std::size_t width, std::uint64_t seed) {
        Model model;
        model.spec = build_default_spec(scale_from(scale), width);
        model.weights = init_weights(model.spec, seed);
        return model;
      }), py::arg("scale") = "desk", py::arg("width") = 1, py::arg("seed") = 1)
      .def_property_readonly("parameters", [](const Model& mdl) { return parameter_count(mdl.spec); })
      .def_property_readonly("template_size", [](const Model& mdl) { return mdl.spec.template_size; })
      .def_property_readonly("search_size", [](const Model& mdl) { return mdl.spec.search_size; })
      .def("flops", [](const Model& mdl) { return count_flops(mdl.spec).total; })
      .def("flops_csv", [](const Model& mdl) { return count_flops(mdl.spec).csv(); })
      .def("forward", [](const Model& mdl, const Array<float>& tmpl, const Array<float>& search) {
        const HeadMaps h = model_forward(mdl.spec, mdl.weights, to_tensor(tmpl), to_tensor(search));
        return py::make_tuple(to_array(h.cls), to_array(h.reg));
      }, py::arg("template_patch"), py::arg("search_patch"))
      .def("track", [](const Model& mdl, const Sequence& seq, const TrackerConfig& config) {
        const FloatModel fm(mdl);
        SiameseTracker tracker(fm, config);
        return run_tracker(tracker, seq);
      }, py::arg("sequence"), py::arg("config") = TrackerConfig{})
      .def("to_bytes", [](const Model& mdl) { return py::bytes(serialize_model(mdl)); })
      .def_static("from_bytes", [](const py::bytes& b) {
        const LoadedModel l = deserialize_model(std::string_view(b));
        if (l.quantized) throw ValueError("quantized model where a float model was expected");
        return l.model;
      })
      .def("save", [](const Model& mdl, const std::filesystem::path& p) { save_model(mdl, p); })
      .def("__eq__", [](const Model& a, const Model& b) { return a == b; });

  m.def("train", [](const Model& model, const std::vector<Sequence>& seqs, const TrainConfig& config,
                    const Model* teacher) {
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(model, seqs, config, teacher);
    }
    py::list history;
    for (const auto& rec : r.history) history.append(terms_dict(rec.terms));
    return py::make_tuple(r.model, history);
  }, py::arg("model"), py::arg("sequences"), py::arg("config") = TrainConfig{},
     py::arg("teacher") = nullptr);

  m.def("prune", [](const Model& model, double fraction) { return prune_filters(model, fraction).model; },
        py::arg("model"), py::arg("fraction"));

  m.def("quantize", [](const Model& model, const std::vector<Sequence>& calib, std::size_t pairs,
                       int bits, std::uint64_t seed) {
    const auto samples = patch_pairs(sample_pairs(calib, model.spec, pairs, seed));
    return py::bytes(serialize_model(quantize_network(model, calibrate(model, samples, bits))));
  }, py::arg("model"), py::arg("calibration"), py::arg("pairs") = 64, py::arg("bits") = 8,
     py::arg("seed") = 42);

  m.def("evaluate", [](const std::vector<std::vector<BBox>>& predictions,
                       const std::vector<Sequence>& seqs) {
    const MetricsReport r = evaluate_trajectories(predictions, seqs);
    py::dict d;
    d["precision_at_20"] = r.precision_at_20;
    d["precision_curve"] = r.precision_curve;
    d["success_auc"] = r.success_auc;
    d["success_curve"] = r.success_curve;
    d["eao_like"] = r.eao_like;
    d["mean_iou"] = r.mean_iou;
    d["frames"] = r.frames;
    d["failures"] = r.failures;
    return d;
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
