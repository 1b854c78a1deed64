// Python bindings. Vectors map to lists of floats, JSON documents to dicts.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "trajprint/attacks.hpp"
#include "trajprint/diffusion.hpp"
#include "trajprint/error.hpp"
#include "trajprint/fingerprint.hpp"
#include "trajprint/harness.hpp"
#include "trajprint/io.hpp"
#include "trajprint/verify.hpp"
#include "trajprint/watermark.hpp"

namespace py = pybind11;
using namespace trajprint;
using Vec = std::vector<double>;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Message to_message(const std::string& bits) { return Message::parse(bits); }

}  // namespace

PYBIND11_MODULE(trajprint, m) {
  m.doc() = "Trajectory-anchored fingerprinting of toy diffusion models";

  // Module-lifetime class object, intentionally never released.
  static PyObject* error_type =
      PyErr_NewException("trajprint.TrajprintError", PyExc_RuntimeError, nullptr);
  m.attr("TrajprintError") = py::handle(error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type)(e.what());
      exc.attr("code") = static_cast<int>(e.code());
      exc.attr("kind") = std::string(error_code_name(e.code()));
      PyErr_SetObject(error_type, exc.ptr());
    }
  });

  // models
  py::class_<DenoiserModel>(m, "Model")
      .def_property_readonly("kind", [](const DenoiserModel& d) { return model_kind_name(d.kind()); })
      .def_property_readonly("dim", &DenoiserModel::dim)
      .def_property_readonly("steps", [](const DenoiserModel& d) { return d.schedule().steps; })
      .def_property_readonly("model_id", &DenoiserModel::model_id)
      .def_property_readonly("provenance", [](const DenoiserModel& d) { return to_py(d.provenance()); })
      .def("parameters", &DenoiserModel::parameter_vector)
      .def("invertible", &DenoiserModel::invertible)
      .def("predict_noise", py::overload_cast<std::span<const double>, int>(
                                &DenoiserModel::predict_noise, py::const_),
           py::arg("x"), py::arg("t"))
      .def("with_schedule", &DenoiserModel::with_schedule, py::arg("steps"))
      .def("to_json", [](const DenoiserModel& d) { return to_py(model_to_json(d)); })
      .def_static("from_json", [](const py::object& o) { return model_from_json(from_py(o)); });

  m.def(
      "gmm_model",
      [](const Vec& weights, const Vec& means, double variance, int steps) {
        return DenoiserModel::analytic_gmm(GmmParams{weights, means, variance}, steps);
      },
      py::arg("weights"), py::arg("means"), py::arg("variance"), py::arg("steps") = 25,
      "Mixture model from weights[K], row-major means[K x D] and a shared variance.");
  m.def(
      "random_gmm_model",
      [](std::uint64_t seed, std::size_t dim, std::size_t components, double spread,
         double variance, int steps) {
        return DenoiserModel::analytic_gmm(random_gmm(seed, dim, components, spread, variance),
                                           steps);
      },
      py::arg("seed"), py::arg("dim") = 16, py::arg("components") = 4, py::arg("spread") = 5.0,
      py::arg("variance") = 25.0, py::arg("steps") = 25);
  m.def(
      "train_mlp_model",
      [](std::uint64_t data_seed, std::size_t dim, std::size_t components, double spread,
         double variance, int train_steps, std::uint64_t seed, int steps) {
        MlpTrainSpec spec;
        spec.data = random_gmm(data_seed, dim, components, spread, variance);
        spec.steps = train_steps;
        spec.seed = seed;
        spec.schedule_steps = steps;
        return train_mlp_denoiser(spec);
      },
      py::arg("data_seed"), py::arg("dim") = 16, py::arg("components") = 4,
      py::arg("spread") = 5.0, py::arg("variance") = 25.0, py::arg("train_steps") = 2000,
      py::arg("seed") = 0, py::arg("steps") = 25);

  m.def(
      "sample", [](const DenoiserModel& d, const Vec& z) { return sample(d, z); }, py::arg("model"),
      py::arg("z"));
  m.def(
      "invert",
      [](const DenoiserModel& d, const Vec& x0, int refine) {
        return invert(d, x0, InversionOptions{refine});
      },
      py::arg("model"), py::arg("x0"), py::arg("refine") = 0);

  // watermark
  py::class_<WatermarkKey>(m, "Key")
      .def_readonly("seed", &WatermarkKey::seed)
      .def_readonly("bits", &WatermarkKey::bits)
      .def_readonly("dim", &WatermarkKey::dim)
      .def_readonly("strength", &WatermarkKey::strength)
      .def_readonly("temperature", &WatermarkKey::temperature)
      .def_readonly("patterns", &WatermarkKey::patterns);
  m.def("make_key", &make_key, py::arg("seed"), py::arg("bits") = 16, py::arg("dim") = 16,
        py::arg("strength") = 0.5, py::arg("temperature") = 8.0);
  m.def(
      "embed",
      [](const Vec& carrier, const std::string& message, const WatermarkKey& key) {
        return embed(carrier, to_message(message), key);
      },
      py::arg("carrier"), py::arg("message"), py::arg("key"));
  m.def(
      "decode", [](const Vec& image, const WatermarkKey& key) { return decode_hard(image, key).str(); },
      py::arg("image"), py::arg("key"), "Hard decode as a '0'/'1' string.");
  m.def(
      "decode_soft", [](const Vec& image, const WatermarkKey& key) { return decode_soft(image, key); },
      py::arg("image"), py::arg("key"));
  m.def("random_message", [](std::uint64_t seed, std::size_t bits) {
    return random_message(seed, bits).str();
  });

  py::class_<Anchor>(m, "Anchor")
      .def_readonly("carrier", &Anchor::carrier)
      .def_readonly("watermarked", &Anchor::watermarked)
      .def_property_readonly("message", [](const Anchor& a) { return a.message.str(); })
      .def_readonly("key_seed", &Anchor::key_seed);
  m.def(
      "make_anchor",
      [](const Vec& carrier, const std::string& message, const WatermarkKey& key) {
        return make_anchor(carrier, to_message(message), key);
      },
      py::arg("carrier"), py::arg("message"), py::arg("key"));

  // fingerprints
  py::class_<OptimConfig>(m, "OptimConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &OptimConfig::iterations)
      .def_readwrite("learning_rate", &OptimConfig::learning_rate)
      .def_readwrite("lambda_rec", &OptimConfig::lambda_rec)
      .def_readwrite("lambda_reg", &OptimConfig::lambda_reg)
      .def_readwrite("gamma", &OptimConfig::gamma)
      .def_readwrite("segment_length", &OptimConfig::segment_length)
      .def_readwrite("seed", &OptimConfig::seed)
      .def("hash", &OptimConfig::hash)
      .def("to_json", [](const OptimConfig& c) { return to_py(c.to_json()); });

  py::class_<FingerprintRecord>(m, "Record")
      .def_readonly("model_id", &FingerprintRecord::model_id)
      .def_readonly("anchor", &FingerprintRecord::anchor)
      .def_readonly("origin", &FingerprintRecord::origin)
      .def_readonly("noise", &FingerprintRecord::noise)
      .def_readonly("iterations_run", &FingerprintRecord::iterations_run)
      .def_readonly("target_bit_accuracy", &FingerprintRecord::target_bit_accuracy)
      .def_readonly("baseline", &FingerprintRecord::baseline)
      .def_readonly("config_hash", &FingerprintRecord::config_hash)
      .def_property_readonly("trace",
                             [](const FingerprintRecord& r) {
                               py::list out;
                               for (const auto& p : r.trace) {
                                 out.append(py::dict(py::arg("watermark") = p.watermark,
                                                     py::arg("reconstruction") = p.reconstruction,
                                                     py::arg("regularization") = p.regularization,
                                                     py::arg("total") = p.total));
                               }
                               return out;
                             })
      .def("to_json", [](const FingerprintRecord& r) { return to_py(record_to_json(r)); })
      .def_static("from_json", [](const py::object& o) { return record_from_json(from_py(o)); });

  m.def(
      "synthesize",
      [](const DenoiserModel& d, const Anchor& a, const WatermarkKey& k, const OptimConfig& c,
         bool baseline) {
        py::gil_scoped_release release;
        const FingerprintProblem problem(d, k, a);
        return baseline ? synthesize_random_baseline(problem, c) : synthesize(problem, c);
      },
      py::arg("model"), py::arg("anchor"), py::arg("key"), py::arg("config") = OptimConfig{},
      py::arg("baseline") = false);

  // verification
  m.def(
      "bit_accuracy",
      [](const std::string& a, const std::string& b) {
        return bit_accuracy(to_message(a), to_message(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "t_test",
      [](const Vec& samples, double mu0, bool two_sided) {
        const auto r = t_test(samples, mu0, two_sided ? Tail::TwoSided : Tail::Upper);
        return py::dict(py::arg("mean") = r.mean, py::arg("stddev") = r.stddev,
                        py::arg("t") = r.t, py::arg("p") = r.p, py::arg("n") = r.n);
      },
      py::arg("samples"), py::arg("mu0") = 0.5, py::arg("two_sided") = false);
  m.def("student_t_upper_tail", &student_t_upper_tail, py::arg("t"), py::arg("dof"));
  m.def(
      "verify",
      [](const DenoiserModel& suspect, const std::vector<FingerprintRecord>& records,
         const WatermarkKey& key, double alpha, bool two_sided) {
        const auto rep = verify(black_box(suspect), suspect.model_id(), records, key, alpha,
                                two_sided ? Tail::TwoSided : Tail::Upper);
        return to_py(rep.to_json());
      },
      py::arg("suspect"), py::arg("records"), py::arg("key"), py::arg("alpha") = 1e-3,
      py::arg("two_sided") = false, "Verifies through the model's black-box sampler.");
  m.def(
      "verify_closure",
      [](const std::function<Vec(Vec)>& generate, const std::string& suspect_id,
         const std::vector<FingerprintRecord>& records, const WatermarkKey& key, double alpha) {
        SamplingClosure closure = [&](std::span<const double> z) {
          return generate(Vec(z.begin(), z.end()));
        };
        return to_py(verify(closure, suspect_id, records, key, alpha).to_json());
      },
      py::arg("generate"), py::arg("suspect_id"), py::arg("records"), py::arg("key"),
      py::arg("alpha") = 1e-3, "Verifies through an arbitrary noise -> image callable.");

  // attacks
  m.def("quantize", &quantize, py::arg("model"), py::arg("mantissa_bits"));
  m.def("prune", &prune, py::arg("model"), py::arg("ratio"));
  m.def(
      "finetune",
      [](const DenoiserModel& d, int steps, double lr, double shift, std::uint64_t seed) {
        py::gil_scoped_release release;
        return finetune_proxy(d, steps, lr, shift_vector(seed, d.dim(), shift), seed);
      },
      py::arg("model"), py::arg("steps") = 500, py::arg("learning_rate") = 1e-4,
      py::arg("shift") = 0.1, py::arg("seed") = 0);
  m.def("round_mantissa", &round_mantissa, py::arg("value"), py::arg("mantissa_bits"));

  // experiments
  m.def("default_config", [] { return to_py(ExperimentConfig::defaults().to_json()); });
  m.def("config_hash", [](const py::object& o) {
    return ExperimentConfig::from_json(from_py(o)).hash();
  });
  m.def(
      "run_matrix",
      [](const py::object& config_json, const std::string& variant, std::size_t workers) {
        const auto config = ExperimentConfig::from_json(from_py(config_json));
        nlohmann::json out;
        {
          py::gil_scoped_release release;
          const auto key = build_key(config);
          const auto zoo = build_zoo(config, workers);
          const auto run = run_matrix(config, zoo, key, parse_variant(variant), workers);
          out = {{"matrix", run.matrix.to_json()},
                 {"summary", run.summary.to_json()},
                 {"csv", run.matrix.to_csv()}};
        }
        return to_py(out);
      },
      py::arg("config") = py::dict(), py::arg("variant") = "trajprint", py::arg("workers") = 1,
      "Builds the zoo from the config and returns the cross-model matrix and summary.");
}
