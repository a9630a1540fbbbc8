#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "amil/errors.hpp"
#include "amil/evalmetrics.hpp"
#include "amil/gradaudit.hpp"
#include "amil/losses.hpp"
#include "amil/milnet.hpp"
#include "amil/pooling.hpp"
#include "amil/posedomain.hpp"
#include "amil/trainer.hpp"

namespace py = pybind11;
using namespace amil;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

Array from_heatmap(const Heatmap& h) {
  Array out({h.channels, h.height, h.width});
  std::copy(h.values.begin(), h.values.end(), out.mutable_data());
  return out;
}

Heatmap to_heatmap(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (joints, rows, cols) array");
  const auto j = static_cast<std::size_t>(a.shape(0));
  const auto h = static_cast<std::size_t>(a.shape(1));
  const auto w = static_cast<std::size_t>(a.shape(2));
  return Heatmap(j, h, w, Vector(a.data(), a.data() + j * h * w));
}

}  // namespace

PYBIND11_MODULE(_amil, m) {
  m.doc() = "Adjust-pooling multiple-instance networks for keypoint heatmaps";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<VersionError>(m, "VersionError", PyExc_ValueError);

  m.def("squash", [](const Vector& v) { return squash(v); }, py::arg("sigma"));
  m.def(
      "adjust_pool",
      [](const Array& instances, int iterations) {
        const auto [s, state] = adjust_pool(to_matrix(instances), iterations);
        std::vector<Vector> weights;
        for (const auto& step : state.history) weights.push_back(step.weights);
        return py::make_tuple(s, weights);
      },
      py::arg("instances"), py::arg("iterations") = kDefaultPoolIterations,
      "Bag embedding and the weights of every iteration.");

  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("m_plus", &LossConfig::m_plus)
      .def_readwrite("m_minus", &LossConfig::m_minus)
      .def_readwrite("lambda_", &LossConfig::lambda)
      .def_readwrite("prob_lambda", &LossConfig::prob_lambda)
      .def_readwrite("gamma", &LossConfig::gamma)
      .def_readwrite("omega_k", &LossConfig::omega_k);

  m.def("margin_loss", &margin_loss, py::arg("bag_norm"), py::arg("label"), py::arg("cfg") = LossConfig{});
  m.def("instance_prob", &instance_prob, py::arg("h"), py::arg("lam") = 1.0);
  m.def("bag_prob_negative", [](const Vector& p) { return bag_prob_negative(p); });
  m.def(
      "coupled_bag_loss",
      [](double bag_prob, const Vector& q, int label, const LossConfig& cfg) {
        return coupled_bag_loss(bag_prob, q, label, cfg);
      },
      py::arg("bag_prob"), py::arg("instance_probs"), py::arg("label"), py::arg("cfg") = LossConfig{});

  py::class_<AdversarialState>(m, "AdversarialState")
      .def(py::init<>())
      .def_readwrite("k", &AdversarialState::k)
      .def_readonly("step", &AdversarialState::step);
  m.def("update_k", &update_k, py::arg("state"), py::arg("l_real"), py::arg("l_fake"),
        py::arg("cfg") = LossConfig{});

  py::class_<PoseConfig>(m, "PoseConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &PoseConfig::image_size)
      .def_readwrite("joint_count", &PoseConfig::joint_count)
      .def_readwrite("patch_size", &PoseConfig::patch_size)
      .def_readwrite("sigma_h", &PoseConfig::sigma_h)
      .def_readwrite("noise", &PoseConfig::noise)
      .def_readwrite("occlusion", &PoseConfig::occlusion);

  m.def(
      "generate_sample",
      [](std::uint64_t seed, const PoseConfig& cfg) {
        const PoseSample s = generate_sample(seed, cfg);
        std::vector<std::tuple<double, double, bool>> k;
        for (const auto& p : s.keypoints) k.emplace_back(p.x, p.y, p.visible);
        return py::make_tuple(from_matrix(s.image), k, from_heatmap(s.heatmaps));
      },
      py::arg("seed"), py::arg("cfg") = PoseConfig{}, "(image, keypoints, heatmaps)");
  m.def(
      "decode_pose",
      [](const Array& hm, std::size_t size) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p : decode_pose(to_heatmap(hm), size)) out.emplace_back(p.x, p.y);
        return out;
      },
      py::arg("heatmaps"), py::arg("original_size"));
  m.def(
      "pck",
      [](const std::vector<std::vector<std::pair<double, double>>>& pred,
         const std::vector<std::vector<std::pair<double, double>>>& gt, double r,
         const std::string& normalizer) {
        auto convert = [](const auto& sets) {
          std::vector<KeypointSet> out;
          for (const auto& s : sets) {
            KeypointSet k;
            for (const auto& [x, y] : s) k.push_back({x, y, true});
            out.push_back(k);
          }
          return out;
        };
        const auto g = convert(gt);
        const std::size_t joints = g.empty() ? 7 : g.front().size();
        return pck(convert(pred), g, r, parse_normalizer(normalizer), skeleton_layout(joints)).mean_rate;
      },
      py::arg("pred"), py::arg("gt"), py::arg("r") = 0.2, py::arg("normalizer") = "torso");

  m.def("lr_schedule", [](double base, std::size_t it, std::size_t every, double decay) {
    TrainConfig c;
    c.decay_every = every;
    c.decay_base = decay;
    return lr_schedule(base, it, c);
  }, py::arg("base_lr"), py::arg("iteration"), py::arg("decay_every") = 20, py::arg("decay_base") = 0.5);

  m.def(
      "gradient_audit",
      [](std::size_t seeds, std::vector<std::string> components) {
        AuditOptions opt;
        opt.seeds = seeds;
        opt.components = std::move(components);
        py::dict out;
        for (const AuditResult& r : run_gradient_audit(opt)) out[py::str(r.component)] = r.max_relative_error;
        return out;
      },
      py::arg("seeds") = 20, py::arg("components") = std::vector<std::string>{},
      "Worst relative error per component.");
}
