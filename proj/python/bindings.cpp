#include "fosp/checkpoint.hpp"
#include "fosp/compositor.hpp"
#include "fosp/config.hpp"
#include "fosp/error.hpp"
#include "fosp/metrics.hpp"
#include "fosp/model.hpp"
#include "fosp/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace fosp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape s;
    if (a.ndim() == 4) {
        s = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
             static_cast<int>(a.shape(3))};
    } else if (a.ndim() == 3) {
        s = {1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
    } else if (a.ndim() == 2) {
        s = {1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))};
    } else {
        throw ValidationError("expected a 2-D, 3-D or 4-D array, got " + std::to_string(a.ndim()) + "-D");
    }
    return Tensor::from(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    const Shape& s = t.shape();
    Array out({s.n, s.c, s.h, s.w});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(); }

// Inference wrapper around a checkpoint.
class PyModel {
public:
    explicit PyModel(const std::string& path)
        : checkpoint_(load_checkpoint(path)), model_(model_from_checkpoint(checkpoint_)) {}

    py::dict predict(const Array& images) const {
        Tensor x = to_tensor(images);
        FospModel::Output out;
        {
            py::gil_scoped_release release;
            NoGradGuard guard;
            out = model_.forward(x);
        }
        py::dict d;
        d["prob"] = to_array(out.prediction.prob);
        if (out.focus) d["focus"] = to_array(out.focus->focus.prob);
        if (out.foreground) {
            py::list levels;
            for (int i = 0; i < kLevels; ++i) levels.append(to_array(out.foreground->levels[i]));
            d["foreground"] = levels;
        }
        return d;
    }

    std::string config() const { return checkpoint_.config.dump(); }
    std::int64_t iteration() const { return checkpoint_.iteration; }

private:
    Checkpoint checkpoint_;
    FospModel model_;
};

}  // namespace

PYBIND11_MODULE(_fosp, m) {
    m.doc() = "Native core of the fosp package";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<RuntimeError>(m, "RuntimeError", PyExc_RuntimeError);

    m.def("default_config", [] { return dump(to_json(RunConfig{})); });
    m.def("config_hash", [](const std::string& text) { return config_hash(config_from_json(nlohmann::json::parse(text))); });

    m.def("compose", [](const Array& b, const Array& s, const Array& a) {
        return to_array(compose(to_tensor(b), to_tensor(s), to_tensor(a)));
    }, py::arg("background"), py::arg("smoke"), py::arg("alpha"));
    m.def("decompose_background", [](const Array& i, const Array& s, const Array& a) {
        return to_array(decompose_background(to_tensor(i), to_tensor(s), to_tensor(a)));
    }, py::arg("image"), py::arg("smoke"), py::arg("alpha"));
    m.def("smoke_mask", [](const Array& a, double tau) { return to_array(smoke_mask(to_tensor(a), tau)); },
          py::arg("alpha"), py::arg("tau") = 0.02);
    m.def("split_bucket", [](double delta) { return bucket_name(split_bucket(delta)); });

    m.def("metrics", [](const Array& prob, const Array& gt, double beta_sq, const std::string& error, double threshold) {
        const Tensor p = to_tensor(prob);
        const Tensor g = to_tensor(gt);
        MetricsConfig mc{beta_sq, parse_error_definition(error), threshold};
        double smoke = 0.0;
        for (double v : g.data()) smoke += v;
        const EvalSample sample{p, g, smoke / static_cast<double>(g.numel())};
        return dump(to_json(evaluate(std::span(&sample, 1), mc)).at("total"));
    });

    m.def("generate", [](const std::string& root, const std::string& split, int n, std::uint64_t seed, int size) {
        CompositorConfig cc;
        cc.height = cc.width = size;
        py::list out;
        std::vector<IndexRecord> records;
        {
            py::gil_scoped_release release;
            records = build_dataset(root, split, n, cc, seed);
        }
        for (const auto& r : records) {
            py::dict d;
            d["id"] = r.id;
            d["delta"] = r.delta;
            d["bucket"] = bucket_name(r.bucket);
            out.append(d);
        }
        return out;
    }, py::arg("root"), py::arg("split"), py::arg("n"), py::arg("seed") = 0, py::arg("size") = 128);

    m.def("train", [](const std::string& config, const std::string& data, const std::string& out) {
        const RunConfig cfg = config_from_json(nlohmann::json::parse(config));
        TrainOptions opts;
        opts.out_dir = out;
        TrainResult r;
        {
            py::gil_scoped_release release;
            r = train(cfg, index_dataset(data, "train"), opts);
        }
        nlohmann::ordered_json log = nlohmann::ordered_json::array();
        for (const auto& rec : r.log) log.push_back(to_json(rec));
        return dump(log);
    });

    m.def("evaluate", [](const std::string& checkpoint, const std::string& data, const std::string& split) {
        Evaluation ev;
        {
            py::gil_scoped_release release;
            ev = evaluate_checkpoint(load_checkpoint(checkpoint), index_dataset(data, split));
        }
        return dump(to_json(ev));
    });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def("predict", &PyModel::predict, py::arg("images"),
             "Dict with 'prob' (N,1,H,W) and, when present, 'focus' (N,1,H/16,W/16) and 'foreground' levels.")
        .def_property_readonly("config", &PyModel::config)
        .def_property_readonly("iteration", &PyModel::iteration);
}
