// sensemake: train, calibrate, evaluate, generate data, serve sessions and
// replay scripted interventions.
//
// Exit codes: 0 ok, 1 internal, 2 usage, 3 I/O, 4 validation, 5 divergence.

#include <csignal>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sensemaking/sensemaking.hpp"
#include "sensemaking/service.hpp"

namespace sm = sensemaking;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kIo = 3, kValidation = 4, kDivergence = 5 };

int exit_code_for(sm::ErrorCode code) {
  switch (code) {
    case sm::ErrorCode::IoError:
    case sm::ErrorCode::NotFound: return kIo;
    case sm::ErrorCode::NonfiniteLoss: return kDivergence;
    default: return kValidation;
  }
}

struct DataArgs {
  std::string schema;
  std::string cases;
  std::string probs;
  std::string heatmaps;
  std::string split = "0.6,0.2,0.2";
  std::uint64_t seed = 42;
};

void add_data_options(CLI::App* cmd, DataArgs& args, bool with_split) {
  cmd->add_option("--schema", args.schema, "Schema JSON file")->required();
  cmd->add_option("--cases", args.cases, "Cases CSV file")->required();
  cmd->add_option("--probs", args.probs, "Concept probability JSON file")->required();
  if (with_split) {
    cmd->add_option("--seed", args.seed, "Split shuffle seed")->capture_default_str();
    cmd->add_option("--split", args.split,
                    "train,cal,test as ratios summing to 1 or as case counts summing to the dataset size")
        ->capture_default_str();
  }
}

sm::SplitRatios parse_split(const std::string& text, std::size_t n) {
  std::vector<double> parts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      parts.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw sm::Error(sm::ErrorCode::ValidationError, "bad --split value '" + item + "'");
    }
  }
  if (parts.size() != 3) throw sm::Error(sm::ErrorCode::ValidationError, "--split needs three values");
  const double total = parts[0] + parts[1] + parts[2];
  if (std::abs(total - 1.0) <= 1e-9) return {parts[0], parts[1], parts[2]};
  if (std::abs(total - static_cast<double>(n)) < 0.5) {
    const auto dn = static_cast<double>(n);
    return {parts[0] / dn, parts[1] / dn, 1.0 - parts[0] / dn - parts[1] / dn};
  }
  throw sm::Error(sm::ErrorCode::ValidationError, "--split must sum to 1 or to the number of cases");
}

struct LoadedData {
  sm::ConceptSchema schema;
  std::vector<sm::Case> cases;
};

LoadedData load_data(const DataArgs& args) {
  LoadedData out{sm::load_schema(args.schema), {}};
  std::optional<sm::fs::path> heatmaps;
  if (!args.heatmaps.empty()) heatmaps = args.heatmaps;
  auto loaded = sm::load_cases(args.cases, args.probs, out.schema, heatmaps);
  if (!loaded.errors.empty()) {
    for (const auto& err : loaded.errors) {
      std::cerr << "case " << err.case_id << " (row " << err.row << "):";
      for (const auto& m : err.messages) std::cerr << " " << m << ";";
      std::cerr << "\n";
    }
    throw sm::Error(sm::ErrorCode::ValidationError, std::to_string(loaded.errors.size()) + " invalid case(s)");
  }
  out.cases = std::move(loaded.cases);
  return out;
}

sm::Split<sm::Case> split_cases(const LoadedData& data, const DataArgs& args) {
  return sm::split(data.cases, parse_split(args.split, data.cases.size()), args.seed);
}

void emit(const sm::Json& summary, const std::string& out_path = {}) {
  std::cout << summary.dump(2) << "\n";
  if (!out_path.empty()) sm::write_file(out_path, summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int cmd_generate(std::uint64_t seed, std::size_t n, const std::string& schema_path, std::size_t concepts,
                 std::size_t states, std::size_t diagnoses, double noise, const sm::SyntheticOptions& options,
                 const std::string& out_dir) {
  const sm::ConceptSchema schema =
      schema_path.empty() ? sm::synthetic_schema(concepts, states, diagnoses) : sm::load_schema(schema_path);
  const auto data = sm::generate_synthetic(seed, n, schema, noise, options);
  sm::write_dataset(out_dir, schema, data.cases);
  sm::write_file(sm::fs::path(out_dir) / "planted_weights.json", sm::weights_to_json(data.planted).dump(2) + "\n");
  emit(sm::Json{{"out", out_dir},
                {"n", n},
                {"seed", seed},
                {"noise", noise},
                {"schema_hash", schema.hash()},
                {"concepts", schema.num_concepts()},
                {"dimension", schema.dimension()},
                {"diagnoses", schema.num_diagnoses()}});
  return kOk;
}

int cmd_train(const DataArgs& args, const sm::TrainingOptions& options, const std::string& out) {
  const auto data = load_data(args);
  const auto parts = split_cases(data, args);
  const auto examples = sm::labeled_examples(parts.train, data.schema);
  const auto result = sm::train(examples, data.schema, options);
  const auto indexed = sm::index_labels(examples, data.schema);
  sm::write_file(out, sm::weights_to_json(result.weights).dump(2) + "\n");
  emit(sm::Json{{"weights", out},
                {"n_train", examples.size()},
                {"epochs", options.epochs},
                {"initial_loss", result.loss_trace.front()},
                {"final_loss", result.loss_trace.back()},
                {"final_learning_rate", result.weights.training_meta.final_learning_rate},
                {"train_accuracy", sm::accuracy(result.weights, indexed)},
                {"loss_trace", result.loss_trace}});
  return kOk;
}

int cmd_calibrate(const DataArgs& args, const std::string& weights_path, double alpha, const std::string& out) {
  const auto data = load_data(args);
  const auto weights = sm::weights_from_json(sm::read_json(weights_path), data.schema);
  const auto parts = split_cases(data, args);
  const auto examples = sm::labeled_examples(parts.cal, data.schema);
  const auto calibration = sm::calibrate(weights, examples, data.schema, alpha);
  const auto j = sm::calibration_to_json(calibration);
  sm::write_file(out, j.dump(2) + "\n");
  emit(sm::Json{{"calibration", out}, {"n_cal", calibration.n_cal}, {"alpha", alpha}, {"q_hat", j.at("q_hat")}});
  return kOk;
}

int cmd_eval(const DataArgs& args, const std::string& weights_path, const std::string& calibration_path,
             const std::string& planted_path, const std::string& out) {
  const auto data = load_data(args);
  const sm::Model model(data.schema, sm::weights_from_json(sm::read_json(weights_path), data.schema),
                        sm::calibration_from_json(sm::read_json(calibration_path), data.schema));
  const auto parts = split_cases(data, args);
  const auto examples = sm::index_labels(sm::labeled_examples(parts.test, data.schema), data.schema);
  if (examples.empty()) throw sm::Error(sm::ErrorCode::EmptyInput, "test split is empty");

  std::size_t covered = 0;
  std::size_t set_total = 0;
  for (const auto& ex : examples) {
    const auto set = sm::retrieve_hypotheses(model.calibration, model.weights, ex.x);
    set_total += set.size();
    if (std::find(set.begin(), set.end(), ex.label) != set.end()) ++covered;
  }
  const double n = static_cast<double>(examples.size());
  sm::Json summary{{"n_test", examples.size()},
                   {"alpha", model.calibration.alpha},
                   {"accuracy", sm::accuracy(model.weights, examples)},
                   {"coverage", static_cast<double>(covered) / n},
                   {"mean_set_size", static_cast<double>(set_total) / n}};
  if (!planted_path.empty()) {
    // Planted model scored on the annotated (true) concept states.
    const auto planted = sm::weights_from_json(sm::read_json(planted_path), data.schema);
    std::vector<sm::LabeledVector> truth;
    for (const auto& c : parts.test) {
      sm::ConceptVector x{std::vector<double>(data.schema.dimension(), 0.0)};
      for (std::size_t ci = 0; ci < data.schema.num_concepts(); ++ci) {
        const auto& id = data.schema.concepts()[ci].id;
        x.values[data.schema.offset(ci) + data.schema.require_state(ci, c.annotated_states.at(id))] = 1.0;
      }
      truth.push_back({x, *data.schema.diagnosis_index(*c.true_diagnosis)});
    }
    summary["planted_accuracy"] = sm::accuracy(planted, truth);
  }
  emit(summary, out);
  return kOk;
}

sm::Json step_summary(const sm::SensemakingState& s, std::string_view kind) {
  sm::Json hypotheses = sm::Json::array();
  for (const auto& h : s.hypotheses) {
    hypotheses.push_back(sm::Json{{"label", h.diagnosis_label},
                                  {"score", h.score},
                                  {"in_conformal_set", h.in_conformal_set},
                                  {"newly_appeared", h.newly_appeared},
                                  {"excluded", h.excluded_by_user}});
  }
  return sm::Json{{"t", s.t},
                  {"event", kind.empty() ? sm::Json(nullptr) : sm::Json(kind)},
                  {"evidence", s.evidence.size()},
                  {"conformal_set", s.conformal_set},
                  {"hypotheses", hypotheses},
                  {"acceptance", sm::acceptance_status_json(s)}};
}

int cmd_replay(const DataArgs& args, const std::string& weights_path, const std::string& calibration_path,
               const std::string& case_id, const std::string& script_path, const sm::SessionConfig& config,
               const std::string& out) {
  const auto data = load_data(args);
  const sm::Model model(data.schema, sm::weights_from_json(sm::read_json(weights_path), data.schema),
                        sm::calibration_from_json(sm::read_json(calibration_path), data.schema));
  auto it = std::find_if(data.cases.begin(), data.cases.end(), [&](const sm::Case& c) { return c.case_id == case_id; });
  if (it == data.cases.end()) throw sm::Error(sm::ErrorCode::ValidationError, "no case '" + case_id + "'");

  std::vector<sm::InterventionEvent> events;
  if (!script_path.empty()) {
    const auto script = sm::read_json(script_path);
    if (!script.is_array()) throw sm::Error(sm::ErrorCode::ParseError, "script must be a JSON array of events");
    for (const auto& e : script) events.push_back(e.get<sm::InterventionEvent>());
  }

  sm::SensemakingState state = sm::init_session("replay", *it, model, config);
  sm::Json steps = sm::Json::array();
  steps.push_back(step_summary(state, ""));
  for (const auto& e : events) {
    state = sm::apply_event(state, e, *it, model);
    steps.push_back(step_summary(state, e.kind()));
  }
  emit(sm::Json{{"steps", steps}, {"final", sm::state_to_json(state)}}, out);
  return kOk;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& config_path) {
  const auto config = sm::load_service_config(config_path);
  auto model = std::make_shared<const sm::Model>(sm::load_model(config.schema, config.weights, config.calibration));
  if (config.alpha && std::abs(*config.alpha - model->calibration.alpha) > 1e-12) {
    throw sm::Error(sm::ErrorCode::ValidationError, "config alpha does not match the calibration file");
  }
  auto loaded = sm::load_cases(config.cases, config.probs, model->schema, config.heatmaps);
  for (const auto& err : loaded.errors) {
    std::cerr << "skipping case " << err.case_id << ":";
    for (const auto& m : err.messages) std::cerr << " " << m << ";";
    std::cerr << "\n";
  }
  sm::SessionManager manager(model, std::move(loaded.cases), config.log_dir, config.session, config.data_root);
  for (const auto& issue : manager.recovery_issues()) {
    std::cerr << "log " << issue.file << " not recovered: " << issue.message << "\n";
  }
  httplib::Server server;
  sm::register_routes(server, manager);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << manager.list_cases().size() << " cases, " << manager.session_ids().size()
            << " recovered sessions on " << config.host << ":" << config.port << "\n";
  if (!server.listen(config.host, config.port)) {
    throw sm::Error(sm::ErrorCode::IoError, "cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-based sensemaking engine: train, calibrate, evaluate, serve, replay"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (schema.json, cases.csv, probs.json)");
  std::uint64_t gen_seed = 42;
  std::size_t gen_n = 3500;
  std::string gen_schema;
  std::size_t gen_concepts = 7, gen_states = 3, gen_diagnoses = 5;
  double gen_noise = 0.1;
  sm::SyntheticOptions gen_options;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--n", gen_n, "Number of cases")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--schema", gen_schema, "Schema JSON to generate for (default: synthetic schema)");
  gen->add_option("--concepts", gen_concepts, "Concepts in the synthetic schema")->capture_default_str();
  gen->add_option("--states", gen_states, "States per concept in the synthetic schema")->capture_default_str();
  gen->add_option("--diagnoses", gen_diagnoses, "Diagnoses in the synthetic schema")->capture_default_str();
  gen->add_option("--noise", gen_noise, "Mixing weight of the noise distribution, in [0,1)")->capture_default_str();
  gen->add_option("--planted-scale", gen_options.planted_scale, "Std-dev of planted weights")->capture_default_str();
  gen->add_flag("--argmax-labels", gen_options.argmax_labels, "Label with the planted argmax instead of sampling");
  gen->add_option("--min-margin", gen_options.min_margin, "Minimum planted top-2 logit gap")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train the concept head on the train split");
  DataArgs tr_data;
  sm::TrainingOptions tr_options;
  std::string tr_out;
  add_data_options(tr, tr_data, true);
  tr->add_option("--epochs", tr_options.epochs, "Full-batch epochs")->capture_default_str();
  tr->add_option("--lr", tr_options.learning_rate, "Initial learning rate")->capture_default_str();
  tr->add_option("--l2", tr_options.l2, "L2 penalty on W")->capture_default_str();
  tr->add_option("--out", tr_out, "Weights JSON to write")->required();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Calibrate conformal retrieval on the calibration split");
  DataArgs cal_data;
  std::string cal_weights, cal_out;
  double cal_alpha = 0.1;
  add_data_options(cal, cal_data, true);
  cal->add_option("--weights", cal_weights, "Weights JSON")->required();
  cal->add_option("--alpha", cal_alpha, "Miscoverage level in (0,1)")->capture_default_str();
  cal->add_option("--out", cal_out, "Calibration JSON to write")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy, coverage and mean set size on the test split");
  DataArgs ev_data;
  std::string ev_weights, ev_calibration, ev_planted, ev_out;
  add_data_options(ev, ev_data, true);
  ev->add_option("--weights", ev_weights, "Weights JSON")->required();
  ev->add_option("--calibration", ev_calibration, "Calibration JSON")->required();
  ev->add_option("--planted", ev_planted, "Planted weights from generate, to report the planted model's accuracy");
  ev->add_option("--out", ev_out, "Also write the summary JSON here");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP session service");
  std::string sv_config;
  sv->add_option("--config", sv_config, "Service config JSON")->required();

  // replay
  auto* rp = app.add_subcommand("replay", "Apply a scripted event list to one case");
  DataArgs rp_data;
  std::string rp_weights, rp_calibration, rp_case, rp_script, rp_out;
  sm::SessionConfig rp_config;
  add_data_options(rp, rp_data, false);
  rp->add_option("--heatmaps", rp_data.heatmaps, "Heatmap directory (<case>/<concept>.pgm)");
  rp->add_option("--weights", rp_weights, "Weights JSON")->required();
  rp->add_option("--calibration", rp_calibration, "Calibration JSON")->required();
  rp->add_option("--case-id", rp_case, "Case to open")->required();
  rp->add_option("--script", rp_script, "JSON array of intervention events (omit for none)");
  rp->add_option("--delta", rp_config.delta, "Acceptance threshold")->capture_default_str();
  rp->add_option("--tau-e", rp_config.tau_e, "Evidence extraction threshold")->capture_default_str();
  rp->add_option("--out", rp_out, "Also write the summary JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(gen_seed, gen_n, gen_schema, gen_concepts, gen_states, gen_diagnoses, gen_noise,
                          gen_options, gen_out);
    }
    if (tr->parsed()) return cmd_train(tr_data, tr_options, tr_out);
    if (cal->parsed()) return cmd_calibrate(cal_data, cal_weights, cal_alpha, cal_out);
    if (ev->parsed()) return cmd_eval(ev_data, ev_weights, ev_calibration, ev_planted, ev_out);
    if (sv->parsed()) return cmd_serve(sv_config);
    if (rp->parsed()) {
      rp_config.validate();
      return cmd_replay(rp_data, rp_weights, rp_calibration, rp_case, rp_script, rp_config, rp_out);
    }
  } catch (const sm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
