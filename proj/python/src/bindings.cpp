// Python surface of the core library: scoring, audio, kinematics, sessions
// and the EDA pipeline. Melodies cross the boundary as hex strings.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "melodica/affect.hpp"
#include "melodica/audio.hpp"
#include "melodica/errors.hpp"
#include "melodica/kinematics.hpp"
#include "melodica/scoring.hpp"
#include "melodica/session.hpp"
#include "melodica/session_runner.hpp"

namespace py = pybind11;
using namespace melodica;

namespace {

std::vector<NoteId> notes(const std::string &hex) { return parse_hex_melody(hex).notes; }

py::array_t<double> to_array(const std::vector<double> &v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast> &a) {
  if (a.ndim() != 1)
    throw std::invalid_argument("expected a one-dimensional array");
  return {a.data(), a.data() + a.size()};
}

JointVector joints(const std::vector<double> &q) {
  if (q.size() != kArmDof)
    throw std::invalid_argument("expected five joint angles");
  return Eigen::Map<const JointVector>(q.data());
}

Arm arm_from(const std::string &s) {
  if (s == "left")
    return Arm::Left;
  if (s == "right")
    return Arm::Right;
  throw std::invalid_argument("arm must be 'left' or 'right'");
}

std::vector<double> vec(const Eigen::Vector3d &v) { return {v.x(), v.y(), v.z()}; }

const RobotSimulator &robot() {
  static const RobotSimulator r;
  return r;
}

} // namespace

PYBIND11_MODULE(_melodica, m) {
  m.doc() = "Robot-mediated music sessions: scoring, audio, kinematics and EDA analysis";

  py::register_exception<Error>(m, "MelodicaError", PyExc_RuntimeError);

  // ---- scoring
  m.def("levenshtein", [](const std::string &a, const std::string &b) {
    return levenshtein(notes(a), notes(b));
  }, py::arg("target"), py::arg("detected"), "Edit distance between two hex melodies.");
  m.def("likelihood", [](const std::string &t, const std::string &d) {
    return likelihood(notes(t), notes(d));
  }, py::arg("target"), py::arg("detected"));
  m.def("judge", [](const std::string &t, const std::string &d) {
    return std::string(to_string(judge(notes(t), notes(d))));
  }, py::arg("target"), py::arg("detected"), "'pass' or 'fail'.");
  m.def("note_frequency", [](int n) { return note_frequency(NoteId(n)); }, py::arg("note"));

  // ---- audio
  m.def("synthesize", [](const std::string &hex, double bpm, double noise, std::uint64_t seed) {
    Timbre t;
    t.noise_rms = noise;
    t.seed = seed;
    return to_array(synthesize_melody(parse_hex_melody(hex, bpm), t).samples);
  }, py::arg("melody"), py::arg("bpm") = 120.0, py::arg("noise") = 0.0, py::arg("seed") = 0,
        "Mono 48 kHz rendering of a hex melody.");
  m.def("detect", [](const py::array_t<double, py::array::c_style | py::array::forcecast> &x,
                     double rate) {
    AudioClip clip;
    clip.samples = from_array(x);
    clip.sample_rate = rate;
    std::vector<std::pair<std::string, double>> out;
    for (const NoteEvent &e : detect_notes(clip))
      out.emplace_back(to_hex({e.note}), e.onset_s);
    return out;
  }, py::arg("samples"), py::arg("sample_rate") = 48000.0,
        "List of (note digit, onset seconds).");
  m.def("read_wav", [](const std::filesystem::path &p, std::size_t channel) {
    const AudioClip c = read_wav(p, channel);
    return py::make_tuple(to_array(c.samples), c.sample_rate);
  }, py::arg("path"), py::arg("channel") = 0);
  m.def("write_wav", [](const std::filesystem::path &p,
                        const py::array_t<double, py::array::c_style | py::array::forcecast> &x,
                        double rate) {
    AudioClip c;
    c.samples = from_array(x);
    c.sample_rate = rate;
    write_wav(p, c);
  }, py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 48000.0);

  // ---- kinematics
  m.def("forward_kinematics", [](const std::string &arm, const std::vector<double> &q) {
    return vec(forward_kinematics(KinematicChain::default_arm(arm_from(arm)), joints(q)).position_cm);
  }, py::arg("arm"), py::arg("q"), "Mallet-head position in cm for five joint angles.");
  m.def("inverse_kinematics", [](const std::string &arm, const std::vector<double> &target) {
    if (target.size() != 3)
      throw std::invalid_argument("target must have three coordinates");
    const IkResult r = inverse_kinematics(KinematicChain::default_arm(arm_from(arm)),
                                          {target[0], target[1], target[2]}, JointVector::Zero());
    return std::vector<double>(r.q.data(), r.q.data() + kArmDof);
  }, py::arg("arm"), py::arg("target_cm"));

  // ---- sessions
  m.def("run_session", [](const std::string &kind, const std::string &persona, std::uint64_t seed,
                          const std::string &participant) {
    const SessionPlan plan = plan_session(SessionSpec::parse(kind), {participant, std::nullopt},
                                          SongBank::builtin(), {}, seed);
    const RunResult r = run_scripted_session(plan, seed, persona_from_string(persona), robot());
    return py::make_tuple(r.jsonl, r.summary.dump());
  }, py::arg("kind"), py::arg("persona") = "perfect", py::arg("seed") = 0,
        py::arg("participant") = "P1", "Returns (JSONL log, summary JSON).");
  m.def("replay_log", &replay_log, py::arg("jsonl"));

  // ---- affect
  m.def("synth_eda", [](double rate, double duration_s, std::uint64_t seed) {
    SynthParams p;
    p.scr_rate_per_min = rate;
    p.seed = seed;
    return to_array(synth_eda(p, duration_s).samples);
  }, py::arg("scr_rate_per_min"), py::arg("duration_s"), py::arg("seed") = 0,
        "Synthetic skin conductance at 32 Hz.");
  m.def("extract_features", [](const py::array_t<double, py::array::c_style | py::array::forcecast> &x) {
    return to_array(extract_features(from_array(x)));
  }, py::arg("samples"));
  m.def("evaluate_dir", [](const std::filesystem::path &dir, const std::string &kernel, int k,
                           std::uint64_t seed) {
    const Dataset d = build_dataset(load_recordings(dir));
    ClassifierSpec spec;
    if (k > 0) {
      spec.kind = TrainedModel::Kind::Knn;
      spec.k = k;
    } else {
      spec.svm.kernel.kind = kernel_from_string(kernel);
    }
    py::dict out;
    const std::vector<std::vector<std::string>> rows{
        {"S1", "S2"}, {"S1", "S3"}, {"S2", "S3"}, {"S1", "S2", "S3"}};
    for (const auto &labels : rows) {
      const Metrics mt = evaluate(spec, d, labels, 5, seed);
      py::dict row;
      row["accuracy"] = mt.accuracy;
      row["auc"] = mt.auc ? py::cast(*mt.auc) : py::none();
      row["precision"] = mt.precision ? py::cast(*mt.precision) : py::none();
      row["recall"] = mt.recall ? py::cast(*mt.recall) : py::none();
      std::string name = labels.size() == 3 ? "3-way" : labels[0] + "vs" + labels[1];
      out[py::str(name)] = row;
    }
    return out;
  }, py::arg("data_dir"), py::arg("kernel") = "rbf", py::arg("k") = 0, py::arg("seed") = 0,
        "Cross-validated metrics per comparison for a directory of EDA CSVs.");
}
