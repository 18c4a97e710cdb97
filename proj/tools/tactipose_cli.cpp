// tactipose: generate tactile datasets, train and tune pose networks, evaluate
// them and run servo demonstrations.
//
// Every command writes run.json (resolved configuration) and
// manifest.sha256 (hashes of its primary artifacts) into --out. On failure a
// single JSON error line is printed to stderr and the exit code is 1.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tactipose/pipeline.hpp"
#include "tactipose/servo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tactipose;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string profile = "small";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--profile", c.profile, "Run profile")
      ->check(CLI::IsMember({"small", "full"}))
      ->capture_default_str();
}

void write_json(const fs::path& p, const json& j) { detail::write_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(detail::read_file(p));
  } catch (const json::exception& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

// Records the resolved configuration and the argument vector needed to
// repeat the run, then hashes the artifacts.
void finish(const fs::path& out, const std::string& command, json config,
            const std::vector<std::string>& args) {
  write_json(out / "run.json", {{"tool", "tactipose"},
                                {"version", kToolVersion},
                                {"command", command},
                                {"config", std::move(config)},
                                {"args", args}});
  write_manifest(out);
}

// Arguments of a run with --out removed, for run.json.
std::vector<std::string> replay_args(const std::vector<std::string>& argv) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--out") {
      ++i;
      continue;
    }
    if (argv[i].rfind("--out=", 0) == 0) continue;
    out.push_back(argv[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string object = "surface";
  std::size_t n = 0;
  int image_size = 0;
};

json cmd_generate(const GenerateArgs& a) {
  auto profile = Profile::named(a.common.profile);
  if (a.image_size > 0) profile.image_size = a.image_size;
  const std::size_t n = a.n > 0 ? a.n : profile.samples;
  const auto type = object_type_from_string(a.object);
  const auto sim = simulator_for(profile);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  const auto splits = generate_splits(type, n, a.common.seed, sim, worker_threads());
  save(splits.train, out / "train");
  save(splits.validation, out / "validation");
  save(splits.test, out / "test");
  return {{"object", a.object},
          {"profile", profile.name},
          {"samples_per_split", n},
          {"image_size", profile.image_size},
          {"seed", a.common.seed},
          {"simulator", sim.config_json()}};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string hyperparams;
  int max_epochs = 0;
  double learning_rate = 0.0;
  std::string precision = "float";
};

template <typename T>
json train_impl(const TrainArgs& a, const Profile& profile, const Hyperparams& hp,
                const FitOptions& opts, const Dataset& tr, const Dataset& va) {
  const fs::path out = a.common.out;
  std::string history = "epoch,train_loss,val_loss\r\n";
  auto r = fit<T>(hp, tr, va, a.common.seed, opts, [&](int e, double tl, double vl) {
    history += std::to_string(e) + "," + detail::format_double(tl) + "," +
               detail::format_double(vl) + "\r\n";
    std::cerr << "epoch " << e << "  train " << tl << "  val " << vl << "\n";
  });
  detail::write_file(out / "history.csv", history);
  nn::save_checkpoint(out / "model.ckpt", r.model,
                      posenet_metadata(hp, tr.object_type, r.scaler, tr.image_size(), tr.simulator));
  const json summary = {{"best_val_loss", r.best_val_loss},
                        {"best_epoch", r.history.best_epoch},
                        {"stopped_epoch", r.history.stopped_epoch},
                        {"parameters", r.model.parameter_count()}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return {{"profile", profile.name}, {"hyperparams", hp},       {"seed", a.common.seed},
          {"learning_rate", opts.learning_rate}, {"max_epochs", opts.max_epochs},
          {"precision", a.precision}, {"data", a.data}};
}

json cmd_train(const TrainArgs& a) {
  const auto profile = Profile::named(a.common.profile);
  const fs::path data = a.data;
  const auto tr = load(data / "train");
  const auto va = load(data / "validation");
  Hyperparams hp = profile.default_hyperparams(tr.object_type);
  if (!a.hyperparams.empty()) {
    auto j = read_json(a.hyperparams);
    hp = (j.contains("hyperparams") ? j.at("hyperparams") : j).get<Hyperparams>();
  }
  FitOptions opts = profile.fit;
  if (a.max_epochs > 0) opts.max_epochs = a.max_epochs;
  if (a.learning_rate > 0) opts.learning_rate = a.learning_rate;
  fs::create_directories(a.common.out);
  if (a.precision == "double") return train_impl<double>(a, profile, hp, opts, tr, va);
  return train_impl<float>(a, profile, hp, opts, tr, va);
}

// ---------------------------------------------------------------------------

struct OptimizeArgs {
  Common common;
  std::string data;
  std::size_t trials = 0;
  std::size_t startup = 0;
  int max_epochs = 0;
  bool resume = false;
};

json cmd_optimize(const OptimizeArgs& a) {
  const auto profile = Profile::named(a.common.profile);
  const fs::path data = a.data;
  const auto tr = load(data / "train");
  const auto va = load(data / "validation");
  const auto space = profile.search_space();
  tpe::TpeConfig cfg;
  cfg.n_trials = a.trials > 0 ? a.trials : profile.trials;
  cfg.n_startup = a.startup > 0 ? a.startup : std::min(profile.startup, cfg.n_trials);
  cfg.seed = a.common.seed;
  FitOptions opts = profile.trial_fit();
  if (a.max_epochs > 0) opts.max_epochs = a.max_epochs;
  const fs::path out = a.common.out;
  fs::create_directories(out);
  tpe::OptimizeOptions oo;
  oo.log_path = out / "trials.jsonl";
  oo.resume = a.resume;
  oo.on_trial = [](const tpe::Trial& t) {
    std::cerr << "trial " << t.index << " [" << t.provenance << "] "
              << (t.loss ? std::to_string(*t.loss) : "failed: " + t.error) << "\n";
  };
  const auto objective = posenet_objective<float>(space, tr, va, a.common.seed, opts);
  const auto result = tpe::optimize(objective, space, cfg, oo);
  const json best = {{"index", result.best.index},
                     {"loss", *result.best.loss},
                     {"hyperparams", to_hyperparams(space, result.best.point)}};
  write_json(out / "best.json", best);
  std::cout << best.dump() << "\n";
  return {{"profile", profile.name},     {"trials", cfg.n_trials},
          {"startup", cfg.n_startup},    {"gamma", cfg.gamma},
          {"candidates", cfg.n_candidates}, {"seed", cfg.seed},
          {"max_epochs", opts.max_epochs}, {"learning_rate", opts.learning_rate},
          {"data", a.data}};
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string model;
  std::string data;
};

json cmd_evaluate(const EvaluateArgs& a) {
  auto net = load_posenet<float>(a.model);
  const auto test = load(a.data);
  if (test.object_type != net.object_type)
    throw std::invalid_argument("model is for " + std::string(to_string(net.object_type)) +
                                " data but " + a.data + " holds " +
                                std::string(to_string(test.object_type)) + " data");
  const auto report = evaluate(net.model, net.scaler, test);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  const auto summary = report_summary(report);
  write_json(out / "report.json", summary);
  detail::write_file(out / "predictions.csv", report_csv(report));
  std::string smooth = "component,label,prediction,smoothed\r\n";
  for (const auto& c : report.components)
    for (std::size_t i = 0; i < c.sorted_labels.size(); ++i)
      smooth += std::string(to_string(c.component)) + "," + detail::format_double(c.sorted_labels[i]) +
                "," + detail::format_double(c.sorted_predictions[i]) + "," +
                detail::format_double(c.smoothed[i]) + "\r\n";
  detail::write_file(out / "smoothed.csv", smooth);
  std::cout << summary.dump() << "\n";
  return {{"model", a.model}, {"data", a.data}};
}

// ---------------------------------------------------------------------------

struct ServoArgs {
  Common common;
  std::string estimator = "oracle";
  std::string model;
  std::string object = "sphere";
  std::size_t steps = 200;
  double heading = 0.0;
};

json cmd_servo(const ServoArgs& a) {
  const auto profile = Profile::named(a.common.profile);
  ContactObject object;
  ObjectType type = ObjectType::surface;
  RigidTransform start;
  const double depth = -3.0;
  if (a.object == "plane") {
    object = Plane{};
    start = RigidTransform::from_euler({0, 0, depth}, 0, 0, 0);
  } else if (a.object == "sphere") {
    const Sphere s;
    object = s;
    start = RigidTransform::from_euler(s.center + Vec3(0, 0, s.radius + depth), 0, 0, 0);
  } else if (a.object == "bump") {
    object = Heightfield::bump();
    start = place_on_surface(object, {-100.0, 0.0, std::get<0>(std::get<Heightfield>(object).sample(-100, 0))},
                             SurfacePose{depth, 0, 0});
  } else if (a.object == "edge") {
    type = ObjectType::edge;
    const HalfPlaneEdge e;
    object = e;
    start = place_on_edge(e.edge_frame(Vec3::Zero()), EdgePose{0, depth, 0, 0, 0});
  } else if (a.object == "box") {
    type = ObjectType::edge;
    const RoundedBox b;
    object = b;
    start = place_on_edge(b.edge_frame({b.half_x, 0, 0}), EdgePose{0, depth, 0, 0, 0});
  } else {
    throw std::invalid_argument("unknown servo object '" + a.object + "'");
  }

  PoseEstimator estimator;
  std::optional<PoseNet<float>> net;
  TactileSimulator sim = simulator_for(profile);
  if (a.estimator == "oracle") {
    estimator = oracle_estimator(object, type);
  } else {
    if (a.model.empty()) throw std::invalid_argument("--estimator model needs --model");
    net = load_posenet<float>(a.model);
    if (net->object_type != type)
      throw std::invalid_argument("model estimates " + std::string(to_string(net->object_type)) +
                                  " poses but object '" + a.object + "' needs " +
                                  std::string(to_string(type)));
    if (!net->simulator.is_null()) sim = TactileSimulator::from_json(net->simulator);
    estimator = [&net](const TactileImage& img, const RigidTransform&) { return net->estimate(img); };
  }
  auto cfg = ServoConfig::defaults(type);
  cfg.max_steps = a.steps;
  cfg.heading_deg = a.heading;
  const auto traj = explore(estimator, object, cfg, sim, start);
  const fs::path out = a.common.out;
  fs::create_directories(out);
  detail::write_file(out / "trajectory.csv", trajectory_csv(traj));
  detail::write_file(out / "trajectory.svg", trajectory_svg(traj));
  json err = json::object();
  const auto mae = traj.mean_abs_estimation_error();
  const auto comps = label_components(type);
  for (std::size_t i = 0; i < comps.size(); ++i) err[std::string(to_string(comps[i]))] = mae[i];
  const json summary = {{"status", to_string(traj.status)},
                        {"steps", traj.steps.size()},
                        {"message", traj.message},
                        {"mean_abs_estimation_error", err}};
  write_json(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return {{"estimator", a.estimator}, {"model", a.model}, {"object", a.object},
          {"steps", a.steps},         {"heading", a.heading}, {"profile", profile.name},
          {"simulator", sim.config_json()}};
}

}  // namespace

int run_tool(int argc, char** argv) {
  CLI::App app{"Tactile pose estimation: data generation, training, tuning, evaluation, servoing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate train/validation/test datasets");
  add_common(g, gen.common);
  g->add_option("--object", gen.object, "surface or edge")
      ->check(CLI::IsMember({"surface", "edge"}))
      ->capture_default_str();
  g->add_option("--n", gen.n, "Samples per split (default: profile)");
  g->add_option("--image-size", gen.image_size, "Image side in pixels (default: profile)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a pose network");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Directory holding train/ and validation/")->required();
  t->add_option("--hyperparams", tr.hyperparams, "JSON file (e.g. best.json from optimize)");
  t->add_option("--epochs", tr.max_epochs, "Maximum epochs (default: profile)");
  t->add_option("--lr", tr.learning_rate, "Initial learning rate (default: profile)");
  t->add_option("--precision", tr.precision, "float or double")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();

  OptimizeArgs op;
  auto* o = app.add_subcommand("optimize", "Tune hyperparameters with TPE");
  add_common(o, op.common);
  o->add_option("--data", op.data, "Directory holding train/ and validation/")->required();
  o->add_option("--trials", op.trials, "Number of trials (default: profile)");
  o->add_option("--startup", op.startup, "Random start-up trials (default: profile)");
  o->add_option("--epochs", op.max_epochs, "Maximum epochs per trial (default: profile)");
  o->add_flag("--resume", op.resume, "Continue from an existing trials.jsonl");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Per-component MAE on a test set");
  add_common(e, ev.common);
  e->add_option("--model", ev.model, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Test dataset directory")->required();

  ServoArgs sv;
  auto* s = app.add_subcommand("servo", "Closed-loop surface or edge following");
  add_common(s, sv.common);
  s->add_option("--estimator", sv.estimator, "oracle or model")
      ->check(CLI::IsMember({"oracle", "model"}))
      ->capture_default_str();
  s->add_option("--model", sv.model, "Checkpoint for --estimator model");
  s->add_option("--object", sv.object, "plane, sphere, bump, edge or box")
      ->check(CLI::IsMember({"plane", "sphere", "bump", "edge", "box"}))
      ->capture_default_str();
  s->add_option("--steps", sv.steps, "Maximum steps")->capture_default_str();
  s->add_option("--heading", sv.heading, "Surface heading in degrees")->capture_default_str();

  // Handled in main(); registered here so it shows up in --help.
  auto* r = app.add_subcommand("replay", "Repeat the run recorded in a run.json");
  std::string replay_run, replay_out;
  r->add_option("--run", replay_run, "run.json of an earlier run")->required();
  r->add_option("--out", replay_out, "Output directory")->required();

  std::string command = "?";
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }
  const std::vector<std::string> args =
      replay_args(std::vector<std::string>(argv + 1, argv + argc));
  try {
    json cfg;
    std::string out;
    if (g->parsed()) {
      command = "generate";
      cfg = cmd_generate(gen);
      out = gen.common.out;
    } else if (t->parsed()) {
      command = "train";
      cfg = cmd_train(tr);
      out = tr.common.out;
    } else if (o->parsed()) {
      command = "optimize";
      cfg = cmd_optimize(op);
      out = op.common.out;
    } else if (e->parsed()) {
      command = "evaluate";
      cfg = cmd_evaluate(ev);
      out = ev.common.out;
    } else {
      command = "servo";
      cfg = cmd_servo(sv);
      out = sv.common.out;
    }
    finish(out, command, std::move(cfg), args);
  } catch (const std::exception& ex) {
    std::cerr << json{{"error", {{"command", command}, {"message", ex.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}

// `replay --run run.json --out dir` re-invokes the recorded argument vector
// with a new output directory.
int main(int argc, char** argv) {
  if (argc < 2 || std::string(argv[1]) != "replay") return run_tool(argc, argv);
  CLI::App app{"Repeat the run recorded in a run.json"};
  std::string run, out;
  app.add_option("--run", run, "run.json of an earlier run")->required();
  app.add_option("--out", out, "Output directory")->required();
  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }
  std::vector<std::string> args{argv[0]};
  try {
    const auto j = read_json(run);
    for (const auto& a : j.at("args")) args.push_back(a.get<std::string>());
  } catch (const std::exception& ex) {
    std::cerr << json{{"error", {{"command", "replay"}, {"message", ex.what()}}}}.dump() << "\n";
    return 1;
  }
  args.push_back("--out");
  args.push_back(out);
  std::vector<char*> ptrs;
  for (auto& a : args) ptrs.push_back(a.data());
  return run_tool(static_cast<int>(ptrs.size()), ptrs.data());
}
