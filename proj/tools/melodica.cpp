// melodica: command-line front end for the library.
//
// Exit codes: 0 ok, 1 other failures, 2 malformed/missing WAV, 3 empty
// signal, 4 protocol violation, 5 too few rows per class.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "melodica/affect.hpp"
#include "melodica/audio.hpp"
#include "melodica/errors.hpp"
#include "melodica/service.hpp"
#include "melodica/session.hpp"
#include "melodica/session_runner.hpp"
#include "melodica/ws_server.hpp"

using namespace melodica;
using nlohmann::json;

namespace {

int cmd_detect(const std::string &wav, std::size_t channel) {
  try {
    const AudioClip clip = read_wav(wav, channel);
    std::cout << to_hex(notes_of(detect_notes(clip))) << '\n';
    return 0;
  } catch (const MalformedHeader &e) {
    std::cerr << "detect: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedEncoding &e) {
    std::cerr << "detect: " << e.what() << '\n';
    return 2;
  } catch (const EmptySignal &e) {
    std::cerr << "detect: " << e.what() << '\n';
    return 3;
  }
}

int cmd_synth(const std::string &hex, double bpm, const std::string &out, double noise,
              std::uint64_t seed) {
  Melody m = parse_hex_melody(hex, bpm);
  Timbre timbre;
  timbre.noise_rms = noise;
  timbre.seed = seed;
  timbre.lead_in_s = 0.2;
  write_wav(out, synthesize_melody(m, timbre));
  return 0;
}

int cmd_session(const std::string &kind, const std::string &participant, std::uint64_t seed,
                const std::string &persona, const std::string &out,
                const std::optional<std::string> &song) {
  const EngineConfig cfg = EngineConfig::from_env();
  ParticipantPrefs prefs = cfg.prefs_for(participant);
  if (song)
    prefs.song = *song;
  const SessionPlan plan =
      plan_session(SessionSpec::parse(kind), prefs, cfg.bank, cfg.session, seed);
  const RobotSimulator robot(XylophoneModel::standard(), Rig{}, cfg.robot);
  RunResult r;
  try {
    r = run_scripted_session(plan, seed, persona_from_string(persona), robot);
  } catch (const IllegalEvent &e) {
    std::cerr << "session: protocol violation: " << e.what() << '\n';
    return 4;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) {
    std::cerr << "session: cannot write " << out << '\n';
    return 1;
  }
  f << r.jsonl;
  std::cout << r.summary.dump(2) << '\n';
  return 0;
}

ClassifierSpec classifier(const std::string &kernel, int k) {
  ClassifierSpec spec;
  if (k > 0) {
    spec.kind = TrainedModel::Kind::Knn;
    spec.k = k;
  } else {
    spec.svm.kernel.kind = kernel_from_string(kernel);
  }
  return spec;
}

std::string fmt(const std::optional<double> &v) {
  if (!v)
    return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << *v;
  return s.str();
}

int cmd_affect_eval(const std::string &dir, const ClassifierSpec &spec, std::uint64_t seed) {
  const Dataset data = build_dataset(load_recordings(dir));
  struct Row {
    const char *name;
    std::vector<std::string> labels;
  };
  const Row rows[] = {{"S1vsS2", {"S1", "S2"}},
                      {"S1vsS3", {"S1", "S3"}},
                      {"S2vsS3", {"S2", "S3"}},
                      {"3-way", {"S1", "S2", "S3"}}};
  std::cout << "classifier " << spec.describe() << ", 5-fold stratified CV, seed " << seed
            << '\n';
  std::cout << std::left << std::setw(8) << "row" << std::right << std::setw(6) << "n"
            << std::setw(10) << "accuracy" << std::setw(8) << "auc" << std::setw(11)
            << "precision" << std::setw(8) << "recall" << '\n';
  for (const Row &row : rows) {
    const Dataset sub = data.subset(row.labels);
    const Metrics m = evaluate(spec, sub, row.labels, 5, seed);
    std::cout << std::left << std::setw(8) << row.name << std::right << std::setw(6)
              << sub.x.size() << std::setw(10) << fmt(m.accuracy) << std::setw(8) << fmt(m.auc)
              << std::setw(11) << fmt(m.precision) << std::setw(8) << fmt(m.recall) << '\n';
  }
  return 0;
}

int cmd_affect_train(const std::string &dir, const ClassifierSpec &spec, const std::string &out) {
  const Dataset data = build_dataset(load_recordings(dir));
  const std::vector<std::string> labels{"S1", "S2", "S3"};
  const TrainedModel model = spec.kind == TrainedModel::Kind::Knn
                                 ? knn_train(data.x, data.y, labels, spec.k)
                                 : svm_train(data.x, data.y, labels, spec.svm);
  std::ofstream f(out);
  if (!f) {
    std::cerr << "affect: cannot write " << out << '\n';
    return 1;
  }
  save_model(f, model);
  std::cout << "trained " << spec.describe() << " on " << data.x.size() << " segments -> "
            << out << '\n';
  return 0;
}

// Three sections with rising SCR rates, one recording each.
int cmd_affect_synth(const std::string &dir, std::uint64_t seed, std::size_t conversations) {
  std::filesystem::create_directories(dir);
  const char *sections[] = {"S1", "S2", "S3"};
  const double rates[] = {2.0, 5.0, 8.0};
  for (int c = 0; c < 3; ++c) {
    SynthParams p;
    p.section = sections[c];
    p.scr_rate_per_min = rates[c];
    p.seed = seed + static_cast<std::uint64_t>(c);
    const EdaRecording rec =
        synth_eda(p, p.conversation_s * static_cast<double>(conversations));
    const std::filesystem::path base = std::filesystem::path(dir) / ("synth_" + p.section);
    write_eda_csv(base.string() + ".csv", rec);
    write_annotations_csv(base.string() + ".annotations.csv", rec.annotations);
  }
  std::cout << "wrote 3 recordings of " << conversations << " conversations to " << dir << '\n';
  return 0;
}

int cmd_serve(unsigned short port, const std::string &address, const std::string &kind,
              std::uint64_t seed, const std::string &out) {
  EngineConfig cfg = EngineConfig::from_env();
  const RobotSimulator robot(XylophoneModel::standard(), Rig{}, cfg.robot);
  ServiceCore core(SessionSpec::parse(kind), seed, std::move(cfg), robot);
  WsServer server(core, port, address);
  std::cout << "listening on " << address << ':' << server.port() << std::endl;
  server.run();
  if (core.driver() != nullptr && !out.empty()) {
    core.driver()->write(out);
    std::cout << "log written to " << out << '\n';
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"melodica: xylophone turn-taking sessions, note detection and EDA analysis"};
  app.require_subcommand(1);

  auto *detect = app.add_subcommand("detect", "Print the notes heard in a WAV file");
  std::string wav;
  std::size_t channel = 0;
  detect->add_option("--wav", wav, "WAV file")->required();
  detect->add_option("--channel", channel, "Channel to analyse");

  auto *synth = app.add_subcommand("synth", "Render a hex melody to a WAV file");
  std::string melody, synth_out;
  double bpm = 120, noise = 0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--melody", melody, "Notes as hex digits 1..b")->required();
  synth->add_option("--bpm", bpm, "Tempo")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output WAV")->required();
  synth->add_option("--noise", noise, "White noise RMS")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", synth_seed, "Noise seed");

  auto *session = app.add_subcommand("session", "Run a session against a scripted participant");
  std::string kind, participant, persona = "perfect", session_out;
  std::uint64_t seed = 0;
  std::optional<std::string> song;
  session->add_option("--kind", kind, "baseline | intervention:N | exit")->required();
  session->add_option("--participant", participant, "Participant id")->required();
  session->add_option("--seed", seed, "Seed");
  session->add_option("--persona", persona, "perfect | noisy | silent | cyclic");
  session->add_option("--out", session_out, "JSONL log")->required();
  session->add_option("--song", song, "Preferred song, overriding the config");

  auto *affect = app.add_subcommand("affect", "EDA classification");
  affect->require_subcommand(1);
  std::string data_dir, kernel = "rbf", model_out;
  int knn_k = 0;
  std::uint64_t affect_seed = 0;
  std::size_t conversations = 40;
  auto add_classifier = [&](CLI::App *c) {
    c->add_option("--data", data_dir, "Directory of EDA CSVs with annotation sidecars")
        ->required();
    auto *kopt = c->add_option("--kernel", kernel, "linear | poly | rbf")
                     ->check(CLI::IsMember({"linear", "poly", "rbf"}));
    c->add_option("--k", knn_k, "Use KNN with K neighbours")
        ->check(CLI::IsMember({1, 3, 5}))
        ->excludes(kopt);
    c->add_option("--seed", affect_seed, "Fold seed");
  };
  auto *train = affect->add_subcommand("train", "Train on all segments and save the model");
  add_classifier(train);
  train->add_option("--out", model_out, "Model file")->required();
  auto *eval = affect->add_subcommand("eval", "Cross-validated metrics per comparison");
  add_classifier(eval);
  auto *asynth = affect->add_subcommand("synth", "Write a synthetic three-section dataset");
  asynth->add_option("--out", data_dir, "Output directory")->required();
  asynth->add_option("--seed", affect_seed, "Seed");
  asynth->add_option("--conversations", conversations, "Conversations per section")
      ->check(CLI::PositiveNumber);

  auto *serve = app.add_subcommand("serve", "Serve one session over WebSocket");
  unsigned short port = 8765;
  std::string address = "127.0.0.1", serve_kind, serve_out;
  std::uint64_t serve_seed = 0;
  serve->add_option("--port", port, "TCP port, 0 for any");
  serve->add_option("--address", address, "Listen address");
  serve->add_option("--kind", serve_kind, "baseline | intervention:N | exit")->required();
  serve->add_option("--seed", serve_seed, "Seed");
  serve->add_option("--out", serve_out, "JSONL log written when the service stops");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*detect)
      return cmd_detect(wav, channel);
    if (*synth)
      return cmd_synth(melody, bpm, synth_out, noise, synth_seed);
    if (*session)
      return cmd_session(kind, participant, seed, persona, session_out, song);
    if (*train)
      return cmd_affect_train(data_dir, classifier(kernel, knn_k), model_out);
    if (*eval)
      return cmd_affect_eval(data_dir, classifier(kernel, knn_k), affect_seed);
    if (*asynth)
      return cmd_affect_synth(data_dir, affect_seed, conversations);
    if (*serve)
      return cmd_serve(port, address, serve_kind, serve_seed, serve_out);
  } catch (const InsufficientClassMembers &e) {
    std::cerr << "affect: " << e.what() << '\n';
    return 5;
  } catch (const EmptyTrainingSet &e) {
    std::cerr << "affect: " << e.what() << '\n';
    return 5;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
