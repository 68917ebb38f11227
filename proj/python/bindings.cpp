#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cfseg/evaluation.hpp"
#include "cfseg/study.hpp"
#include "cfseg/synth.hpp"

namespace py = pybind11;
using namespace cfseg;

namespace {

Mask to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ArgumentError("mask must be a 2-D array");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Mask m(h, w, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
  validate_mask(m);
  return m;
}

template <class T>
py::array_t<T> to_array(const Grid<T>& g) {
  py::array_t<T> out({g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

eval::Structure structure_of(const std::string& s) {
  if (s == "right") return eval::Structure::RightLung;
  if (s == "left") return eval::Structure::LeftLung;
  if (s == "both") return eval::Structure::Both;
  throw ArgumentError("structure must be right, left or both");
}

py::dict attrs_dict(const synth::AttributeVector& a) {
  py::dict d;
  d["sex"] = a.sex;
  d["scanner"] = a.scanner;
  d["disease"] = a.disease;
  d["severity"] = a.severity;
  return d;
}

synth::AttributeVector attrs_from(const py::dict& d) {
  synth::AttributeVector a;
  a.sex = d["sex"].cast<int>();
  a.scanner = d["scanner"].cast<int>();
  a.disease = d["disease"].cast<int>();
  a.severity = d["severity"].cast<double>();
  a.validate();
  return a;
}

}  // namespace

PYBIND11_MODULE(_cfseg, m) {
  m.doc() = "Synthetic SCM, segmentation metrics and preference-study primitives";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ConflictError>(m, "ConflictError", PyExc_RuntimeError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);

  m.def("sample_attributes", [](std::uint64_t seed, int n, double p_disease) {
    synth::Marginals mg;
    mg.p_disease = p_disease;
    py::list out;
    for (const auto& a : synth::sample_attributes(seed, n, mg)) out.append(attrs_dict(a));
    return out;
  }, py::arg("seed"), py::arg("n"), py::arg("p_disease") = 0.1);

  m.def("render", [](const py::dict& attrs, std::uint64_t anatomy_seed, int size) {
    const auto a = attrs_from(attrs);
    const auto anatomy = synth::sample_anatomy(anatomy_seed, size);
    const auto r = synth::render(a, anatomy);
    return py::make_tuple(to_array(r.image), to_array(r.gt_mask));
  }, py::arg("attrs"), py::arg("anatomy_seed"), py::arg("size") = 64,
        "Render (image, gt_mask) for the attributes and the anatomy drawn from anatomy_seed.");

  m.def("degrade_to_silver", [](const py::array_t<std::uint8_t>& gt, const py::dict& attrs, std::uint64_t seed) {
    return to_array(synth::degrade_to_silver(to_mask(gt), attrs_from(attrs), seed));
  }, py::arg("gt_mask"), py::arg("attrs"), py::arg("seed"));

  m.def("build_dataset", [](const py::dict& config, const std::filesystem::path& out) {
    const auto c = synth::dataset_config_from_json(io::Json::parse(py::module_::import("json").attr("dumps")(config).cast<std::string>()));
    return synth::build_dataset(c, out).records.size();
  }, py::arg("config"), py::arg("out_dir"), "Write a dataset; returns the record count.");

  m.def("dice", [](const py::array_t<std::uint8_t>& a, const py::array_t<std::uint8_t>& b, const std::string& s) {
    return eval::dice(to_mask(a), to_mask(b), structure_of(s));
  }, py::arg("a"), py::arg("b"), py::arg("structure") = "both");

  m.def("volume", [](const py::array_t<std::uint8_t>& a, const std::string& s, double pixel_area) {
    return eval::volume(to_mask(a), structure_of(s), pixel_area);
  }, py::arg("mask"), py::arg("structure") = "both", py::arg("pixel_area") = 1.0);

  m.def("density_overlap", [](const std::vector<double>& a, const std::vector<double>& b, int bins,
                              std::optional<std::pair<double, double>> range) {
    std::optional<eval::HistogramRange> r;
    if (range) r = eval::HistogramRange{range->first, range->second};
    return eval::density_overlap(a, b, bins, r);
  }, py::arg("a"), py::arg("b"), py::arg("bins"), py::arg("range") = py::none());

  m.def("freedman_diaconis_bins", [](const std::vector<double>& v, int max_bins) {
    return eval::freedman_diaconis_bins(v, max_bins);
  }, py::arg("values"), py::arg("max_bins") = 64);

  py::class_<study::SessionStore>(m, "SessionStore")
      .def(py::init([](const std::filesystem::path& root, std::optional<std::filesystem::path> results) {
             std::optional<pipeline::ResultsManifest> r;
             if (results) r = pipeline::ResultsManifest::load(*results);
             return std::make_unique<study::SessionStore>(root, std::move(r));
           }),
           py::arg("root"), py::arg("results") = py::none())
      .def("create", [](study::SessionStore& s, const py::dict& spec) {
        const auto j = io::Json::parse(py::module_::import("json").attr("dumps")(spec).cast<std::string>());
        return s.create(study::session_spec_from_json(j)).id;
      }, py::arg("spec"))
      .def("n_trials", [](const study::SessionStore& s, const std::string& id) { return s.get(id).trials.size(); })
      .def("choose", [](study::SessionStore& s, const std::string& id, int k, const std::string& choice) {
        s.choose(id, k, study::choice_from_string(choice));
      }, py::arg("session_id"), py::arg("index"), py::arg("choice"))
      .def("summary", [](const study::SessionStore& s, const std::string& id) {
        return py::module_::import("json").attr("loads")(s.summary(id).to_json().dump());
      })
      .def("ids", &study::SessionStore::ids);
}
