#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hexfleet/errors.hpp"
#include "hexfleet/gradsuite.hpp"
#include "hexfleet/pipeline.hpp"
#include "hexfleet/policy.hpp"

namespace py = pybind11;
using namespace hexfleet;

namespace {

RunConfig config_from_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

py::dict metrics_dict(const sim::Metrics& m) {
  py::dict d;
  d["error_km"] = m.error_km;
  d["decisions"] = m.decisions;
  d["empty_loaded_rate"] = m.empty_loaded_rate;
  d["order_acceptance_rate"] = m.order_acceptance_rate;
  d["orders"] = m.orders;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multiview hex-grid vehicle dispatching";
  m.attr("__version__") = pipeline::version();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<DependencyError>(m, "DependencyError", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);

  m.def("geohash", [](double lat, double lon, int precision) {
    return geo::geohash_encode({lat, lon}, precision).code();
  }, py::arg("lat"), py::arg("lon"), py::arg("precision") = geo::kDefaultGeohashPrecision);
  m.def("geohash_decode", [](const std::string& code) {
    auto c = geo::geohash_decode(geo::GeoHashCode(code));
    return py::make_tuple(c.center.lat(), c.center.lon(), c.lat_err, c.lon_err);
  }, "(lat, lon, lat_err, lon_err) of a geohash cell");
  m.def("haversine_km", [](double lat1, double lon1, double lat2, double lon2) {
    return geo::haversine_km({lat1, lon1}, {lat2, lon2});
  });
  m.def("geo_loss", [](double dis_pred, double deg_pred, double dis_true, double deg_true, const std::string& mode,
                       double angle_weight) {
    return policy::geo_loss(Action(dis_pred, deg_pred), Action(dis_true, deg_true), policy::parse_geo_loss_mode(mode),
                            angle_weight);
  }, py::arg("dis_pred"), py::arg("deg_pred"), py::arg("dis_true"), py::arg("deg_true"),
     py::arg("mode") = "symmetric", py::arg("angle_weight") = 1.0);

  m.def("config_hash", [](const std::string& text) { return config_from_text(text).hash(); },
        "hash of a config given as key = value text");
  m.def("canonical_config", [](const std::string& text) { return config_from_text(text).canonical(); });

  m.def("gradient_suite", [](std::uint64_t seed, int reps) {
    py::list out;
    for (const auto& r : run_gradient_suite(seed, reps)) {
      py::dict d;
      d["block"] = r.block;
      d["checks"] = r.checks;
      d["max_relative_error"] = r.max_relative_error;
      d["passed"] = r.passed;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 1, py::arg("reps") = 1);

  m.def("generate_corpus", [](const std::string& config_text, const std::filesystem::path& csv) {
    auto c = config_from_text(config_text);
    auto recs = pipeline::generate_corpus(c, c.seed);
    save_trajectories(csv.string(), recs);
    return recs.size();
  }, py::arg("config_text"), py::arg("csv"), "writes a ground-truth trajectory CSV, returns the record count");

  m.def("simulate", [](const std::string& config_text, const std::string& dispatcher) {
    auto c = config_from_text(config_text);
    auto world = sim::World::generate(c.city_config(), c.seed);
    if (dispatcher == "random") {
      sim::RandomDispatcher d(c.seed + 1);
      return metrics_dict(sim::run_episode(world, d));
    }
    if (dispatcher != "ground_truth") throw ConfigError("dispatcher must be ground_truth or random");
    sim::GroundTruthDriver d(c.seed + 1);
    return metrics_dict(sim::run_episode(world, d));
  }, py::arg("config_text") = "", py::arg("dispatcher") = "ground_truth");

  m.def("train", [](const std::string& config_text, const std::filesystem::path& csv, const std::filesystem::path& out) {
    auto c = config_from_text(config_text);
    py::gil_scoped_release release;
    auto r = pipeline::run_training(c, load_trajectories(csv.string()), pipeline::Stage::both, out);
    return r.checkpoint;
  }, py::arg("config_text"), py::arg("csv"), py::arg("out"), "both training stages; returns the checkpoint path");

  m.def("evaluate", [](const std::string& config_text, const std::filesystem::path& checkpoint, std::uint64_t seed) {
    auto c = config_from_text(config_text);
    auto model = pipeline::model_from_tensors(ad::load_checkpoint(checkpoint), c);
    auto world = sim::World::generate(model.config.city_config(), seed);
    return metrics_dict(pipeline::run_inference(model, world, seed + 1).metrics);
  }, py::arg("config_text"), py::arg("checkpoint"), py::arg("seed"));
}
