#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "limeil/audio.hpp"
#include "limeil/cli.hpp"
#include "limeil/error.hpp"
#include "limeil/ewc.hpp"
#include "limeil/lime.hpp"
#include "limeil/sessions.hpp"
#include "limeil/slic.hpp"
#include "limeil/trainer.hpp"

namespace py = pybind11;
using namespace limeil;

namespace {

py::array_t<float> values_of(const Spectrogram& s) {
    py::array_t<float> out({s.freq_bins, s.time_frames});
    std::copy(s.values.begin(), s.values.end(), out.mutable_data());
    return out;
}

Spectrogram from_array(py::array_t<float, py::array::c_style | py::array::forcecast> a, int label,
                       std::string speaker) {
    if (a.ndim() != 2) throw py::value_error("spectrogram must be a 2-D array");
    Spectrogram s(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), s.values.begin());
    s.label = label;
    s.speaker_id = std::move(speaker);
    return s;
}

Explanation as_explanation(std::vector<double> v) { return Explanation{std::move(v), 0, 0.0}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core of limeil";

    static py::exception<Error> error_type(m, "LimeilError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object inst = py::reinterpret_borrow<py::object>(error_type)(py::str(e.what()));
            inst.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(error_type.ptr(), inst.ptr());
        }
    });

    py::class_<Spectrogram>(m, "Spectrogram")
        .def(py::init(&from_array), py::arg("values"), py::arg("label") = 0, py::arg("speaker") = "")
        .def_readonly("freq_bins", &Spectrogram::freq_bins)
        .def_readonly("time_frames", &Spectrogram::time_frames)
        .def_readwrite("label", &Spectrogram::label)
        .def_readwrite("speaker_id", &Spectrogram::speaker_id)
        .def_property_readonly("values", &values_of);

    m.def("gen_synthetic",
          [](std::size_t classes, std::size_t per_class, std::uint64_t seed, double noise_level,
             std::size_t freq_bins, std::size_t time_frames, std::size_t speakers) {
              SyntheticConfig c;
              c.classes = classes;
              c.per_class = per_class;
              c.seed = seed;
              c.noise_level = noise_level;
              c.freq_bins = freq_bins;
              c.time_frames = time_frames;
              c.speakers = speakers;
              return gen_synthetic(c);
          },
          py::arg("classes") = 4, py::arg("per_class") = 200, py::arg("seed") = 0, py::arg("noise_level") = 0.1,
          py::arg("freq_bins") = 128, py::arg("time_frames") = 128, py::arg("speakers") = 20);

    m.def("split_by_speaker",
          [](const std::vector<Spectrogram>& clips, std::uint64_t seed) {
              DatasetSplit s = split_by_speaker(clips, seed);
              return py::make_tuple(s.train, s.validation, s.test);
          },
          py::arg("clips"), py::arg("seed") = 0, "(train, validation, test), speaker-disjoint 80/10/10");

    m.def("parameter_count", [](const std::string& arch) { return parameter_count(parse_arch(arch)); });

    py::class_<ModelState>(m, "Model")
        .def(py::init([](const std::string& arch, std::uint64_t seed) { return build_model(parse_arch(arch), seed); }),
             py::arg("arch"), py::arg("seed") = 0)
        .def_property_readonly("arch", [](const ModelState& s) { return to_string(s.arch); })
        .def_property(
            "params", [](const ModelState& s) { return s.params; },
            [](ModelState& s, const std::vector<double>& p) { params_load(s, p); })
        .def("predict_proba", [](const ModelState& s, const Spectrogram& x) { return softmax(forward(s, x).values); })
        .def("predict", [](const ModelState& s, const std::vector<Spectrogram>& xs) { return predict_all(s, xs); })
        .def("accuracy", [](const ModelState& s, const std::vector<Spectrogram>& xs) { return evaluate(s, xs).accuracy; })
        .def("explain",
             [](const ModelState& s, const Spectrogram& x, std::size_t target, std::size_t segments,
                std::size_t n_samples, std::uint64_t seed) {
                 SlicConfig sc;
                 sc.segments = segments;
                 LimeConfig lc;
                 lc.n_samples = n_samples;
                 lc.seed = seed;
                 return explain(s, x, slic(x, sc), target, lc).scores;
             },
             py::arg("x"), py::arg("target"), py::arg("segments") = 32, py::arg("n_samples") = 256,
             py::arg("seed") = 0, "LIME segment scores for one class")
        .def("save", [](const ModelState& s, const std::string& path) { checkpoint_save(path, make_checkpoint(s, 0)); })
        .def_static("load", [](const std::string& path) { return model_from_checkpoint(checkpoint_load(path)); });

    m.def("train",
          [](const ModelState& model, const std::vector<Spectrogram>& data, std::size_t epochs, double lr,
             std::size_t batch_size, std::uint64_t seed, const std::vector<double>& weights) {
              TrainConfig c;
              c.epochs = epochs;
              c.lr = lr;
              c.batch_size = batch_size;
              c.seed = seed;
              WeightedDataset ds;
              ds.admit(data, weights.empty() ? std::vector<double>(data.size(), 1.0) : weights, "python");
              py::gil_scoped_release release;
              return train(model, ds, c).model;
          },
          py::arg("model"), py::arg("data"), py::arg("epochs") = 10, py::arg("lr") = 0.001,
          py::arg("batch_size") = 32, py::arg("seed") = 0, py::arg("weights") = std::vector<double>{},
          "Returns the trained model; the input model is not modified");

    m.def("slic",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> img, std::size_t segments,
             double compactness, std::size_t iterations) {
              if (img.ndim() != 2) throw py::value_error("image must be a 2-D array");
              SlicConfig c;
              c.segments = segments;
              c.compactness = compactness;
              c.iterations = iterations;
              const auto rows = static_cast<std::size_t>(img.shape(0)), cols = static_cast<std::size_t>(img.shape(1));
              const SegmentMap map = slic(std::span<const float>(img.data(), img.size()), rows, cols, c);
              py::array_t<int> out({rows, cols});
              std::copy(map.labels.begin(), map.labels.end(), out.mutable_data());
              return out;
          },
          py::arg("image"), py::arg("segments") = 32, py::arg("compactness") = 10.0, py::arg("iterations") = 10);

    m.def("kernel_weight", &kernel_weight, py::arg("dist"), py::arg("sigma") = 0.25);
    m.def("sample_weight",
          [](std::vector<double> predicted, std::vector<double> truth, const std::string& metric, bool sqrt_weights) {
              return sample_weight(as_explanation(std::move(predicted)), as_explanation(std::move(truth)),
                                   parse_metric(metric), sqrt_weights);
          },
          py::arg("predicted"), py::arg("truth"), py::arg("metric") = "euclidean", py::arg("sqrt_weights") = false);

    m.def("fisher_diagonal",
          [](const ModelState& model, const std::vector<Spectrogram>& data) { return fisher_diagonal(model, data).values; });
    m.def("ewc_penalty",
          [](const std::vector<double>& params, const std::vector<double>& star, const std::vector<double>& fisher,
             double lambda) {
              const Penalty p = ewc_penalty(params, Anchor{star, 0}, FisherDiagonal{fisher, 0}, lambda);
              return py::make_tuple(p.value, p.grad);
          },
          py::arg("params"), py::arg("params_star"), py::arg("fisher"), py::arg("lam"));

    m.def("main", [](const std::vector<std::string>& args) { return dispatch(args); }, py::arg("args"),
          "Run the command-line interface; returns the exit code");
}
