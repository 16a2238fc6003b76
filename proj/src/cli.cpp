#include "reframe/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "reframe/dataset.hpp"
#include "reframe/error.hpp"
#include "reframe/io.hpp"
#include "reframe/panas.hpp"
#include "reframe/rubric.hpp"
#include "reframe/service.hpp"
#include "reframe/simulation.hpp"

namespace reframe {

namespace {

using nlohmann::json;

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

json parse_json_file(const std::string& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidRequest, path + " is not valid JSON");
  return j;
}

std::vector<json> parse_jsonl_file(const std::string& path) {
  std::vector<json> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kInvalidRequest, path + " line " + std::to_string(n) + " is not JSON");
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<DialogueRun> read_runs(const std::string& path) {
  std::vector<DialogueRun> runs;
  for (const auto& j : parse_jsonl_file(path)) runs.push_back(j.get<DialogueRun>());
  return runs;
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    write_text_file(path, content);
  }
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct SimOptions {
  std::string client = "";
  std::string therapist = "";
  std::string validator = "rules";
  int max_regen = 5;
  int rounds = kDefaultRounds;
  int parallelism = 1;
  std::string prompts_dir;
  std::string timestamps = "auto";
  std::string therapist_tag;
  std::size_t adversarial = 0;
  std::string adversarial_ids;
  std::uint64_t seed = 0;
};

void add_sim_options(CLI::App* cmd, SimOptions& o) {
  cmd->add_option("--client", o.client, "client backend spec")->required();
  cmd->add_option("--therapist", o.therapist, "therapist backend spec")->required();
  cmd->add_option("--validator", o.validator, "'rules' or a backend spec for the llm validator");
  cmd->add_option("--max-regen", o.max_regen, "client regeneration attempts")->check(CLI::PositiveNumber);
  cmd->add_option("--rounds", o.rounds, "rounds per dialogue")->check(CLI::Range(1, kMaxRounds));
  cmd->add_option("--parallelism", o.parallelism, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--prompts", o.prompts_dir, "directory of prompt templates");
  cmd->add_option("--timestamps", o.timestamps, "auto, wall or logical")
      ->check(CLI::IsMember({"auto", "wall", "logical"}));
  cmd->add_option("--therapist-tag", o.therapist_tag, "model tag recorded with each run");
  cmd->add_option("--adversarial", o.adversarial, "number of adversarial cases to sample");
  cmd->add_option("--adversarial-ids", o.adversarial_ids, "comma-separated adversarial case ids");
  cmd->add_option("--seed", o.seed, "sampling seed");
}

struct PreparedSim {
  SimulationConfig config;
  BackendFactory factory;
};

PreparedSim prepare_sim(const SimOptions& o, const std::vector<std::string>& adversarial_pool) {
  const BackendSpec client = parse_backend_spec(o.client);
  const BackendSpec therapist = parse_backend_spec(o.therapist);
  std::optional<BackendSpec> validator;
  if (o.validator != "rules") validator = parse_backend_spec(o.validator);

  PreparedSim p;
  auto& c = p.config;
  c.max_regen_attempts = o.max_regen;
  c.rounds = o.rounds;
  c.validator = validator ? ValidatorKind::kLlm : ValidatorKind::kScriptedRule;
  if (!o.prompts_dir.empty()) c.prompts = load_prompt_set(o.prompts_dir);
  c.client_model = client.config.model_id;
  c.therapist_model = therapist.config.model_id;
  c.therapist_tag = o.therapist_tag;
  const bool all_scripted = client.scripted && therapist.scripted && (!validator || validator->scripted);
  c.timestamps = o.timestamps == "logical" || (o.timestamps == "auto" && all_scripted) ? TimestampMode::kLogical
                                                                                       : TimestampMode::kWall;
  c.logical_start = parse_utc("2024-01-01T00:00:00.000Z");
  if (!o.adversarial_ids.empty()) {
    for (auto& id : split_csv_list(o.adversarial_ids)) c.adversarial_case_ids.insert(id);
  }
  if (o.adversarial > 0) {
    for (auto& id : sample_case_ids(adversarial_pool, o.adversarial, o.seed)) c.adversarial_case_ids.insert(id);
  }
  p.factory = [client, therapist, validator](const SeedCase& seed, size_t) {
    return Backends{backend_for_seed(client, seed), backend_for_seed(therapist, seed),
                    validator ? backend_for_seed(*validator, seed) : nullptr};
  };
  return p;
}

json run_summary(const std::vector<DialogueRun>& runs) {
  std::map<std::string, int> outcomes;
  int adversarial = 0;
  for (const auto& r : runs) {
    ++outcomes[std::string(to_string(r.outcome))];
    adversarial += r.adversarial ? 1 : 0;
  }
  return json{{"runs", runs.size()}, {"outcomes", outcomes}, {"adversarial", adversarial}};
}

std::map<std::string, std::string> tags_by_dialogue(const std::vector<DialogueRun>& runs) {
  std::map<std::string, std::string> out;
  for (const auto& r : runs) out[r.transcript.session_id] = r.model_tag;
  return out;
}

struct ErrorLine {
  std::string code;
  std::string message;
};

void print_error(std::ostream& err, const ErrorLine& e) {
  err << json{{"error", e.code}, {"message", e.message}}.dump() << "\n";
}

}  // namespace

BackendSpec parse_backend_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "backend spec '" + spec + "' must be scripted:<file> or http:<url|file>");
  }
  const std::string kind = spec.substr(0, colon);
  const std::string arg = spec.substr(colon + 1);
  BackendSpec out;
  if (kind == "scripted") {
    out.scripted = true;
    out.config.kind = BackendKind::kScripted;
    if (arg.ends_with(".json")) {
      out.config.script = parse_json_file(arg).get<std::vector<std::string>>();
    } else {
      std::istringstream in(read_text_file(arg));
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.config.script.push_back(replace_all(line, "\\n", "\n"));
      }
    }
  } else if (kind == "http") {
    if (arg.ends_with(".json")) {
      out.config = parse_json_file(arg).get<BackendConfig>();
    } else {
      out.config.kind = BackendKind::kHttp;
      out.config.endpoint_url = arg;
    }
    out.scripted = out.config.kind == BackendKind::kScripted;
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown backend kind '" + kind + "'");
  }
  validate_config(out.config);
  return out;
}

std::shared_ptr<ChatBackend> backend_for_seed(const BackendSpec& spec, const SeedCase& seed) {
  if (!spec.scripted) return make_backend(spec.config);
  std::vector<std::string> replies;
  replies.reserve(spec.config.script.size());
  for (const auto& r : spec.config.script) {
    replies.push_back(replace_all(replace_all(replace_all(r, "{case_id}", seed.case_id), "{thinking_trap}",
                                              seed.thinking_trap),
                                  "{thought}", seed.thought));
  }
  return std::make_shared<ScriptedBackend>(std::move(replies));
}

std::vector<std::string> expand_config_args(const std::vector<std::string>& args) {
  if (args.empty() || args[0].starts_with("-") || args[0] == "serve") return args;
  std::optional<std::string> path;
  for (size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (!path) return args;
  const json j = parse_json_file(*path);
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, *path + " must hold a JSON object");
  std::vector<std::string> out{args[0]};
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (const auto& [key, value] : j.items()) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(scalar(v));
      }
    } else if (!value.is_null()) {
      out.push_back(flag);
      out.push_back(scalar(value));
    }
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cognitive-reframing dialogue toolkit", "reframe"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  std::function<void()> action;

  // simulate
  auto* simulate = app.add_subcommand("simulate", "run AI client / AI therapist dialogues over a seed file");
  SimOptions sim_opts;
  std::string sim_seeds, sim_out, sim_source = "train", sim_data_dir;
  simulate->add_option("--config", config_path, "JSON file of option values");
  simulate->add_option("--seeds", sim_seeds, "seed file (.csv or .jsonl)")->required();
  simulate->add_option("--source", sim_source, "train or test")->check(CLI::IsMember({"train", "test"}));
  simulate->add_option("--out", sim_out, "runs JSONL (default stdout)");
  simulate->add_option("--data-dir", sim_data_dir, "append a batch_completed event to this data dir");
  add_sim_options(simulate, sim_opts);
  simulate->callback([&] {
    action = [&] {
      const auto corpus =
          ingest_seeds(sim_seeds, sim_source == "train" ? SeedSource::kTrainSource : SeedSource::kTestSource);
      std::vector<std::string> ids;
      for (const auto& c : corpus.cases) ids.push_back(c.case_id);
      const auto prepared = prepare_sim(sim_opts, ids);
      const auto runs = run_batch(corpus.cases, prepared.factory, prepared.config, sim_opts.parallelism);
      std::string body;
      for (const auto& r : runs) body += json(r).dump() + "\n";
      emit(sim_out, body, out);
      const json summary = run_summary(runs);
      if (!sim_data_dir.empty()) {
        prepare_data_dir(sim_data_dir);
        EventLog(std::filesystem::path(sim_data_dir) / "events.jsonl", system_clock())
            .append(EventKind::kBatchCompleted, summary);
      }
      if (!sim_out.empty() && sim_out != "-") out << summary.dump() << "\n";
    };
  });

  // build-dataset
  auto* build = app.add_subcommand("build-dataset", "simulate seed corpora and export split training JSONL");
  SimOptions build_opts;
  std::string train_seeds, test_seeds, build_out, assignment = "by-order";
  SplitSpec split_spec;
  build->add_option("--config", config_path, "JSON file of option values");
  build->add_option("--train-seeds", train_seeds, "training-source seed file")->required();
  build->add_option("--test-seeds", test_seeds, "test-source seed file");
  build->add_option("--out", build_out, "output directory")->required();
  build->add_option("--train", split_spec.train, "train count");
  build->add_option("--valid", split_spec.valid, "validation count");
  build->add_option("--test", split_spec.test, "test count");
  build->add_option("--assignment", assignment, "by-order or seeded-shuffle")
      ->check(CLI::IsMember({"by-order", "seeded-shuffle"}));
  add_sim_options(build, build_opts);
  build->callback([&] {
    action = [&] {
      const auto train_corpus = ingest_seeds(train_seeds, SeedSource::kTrainSource);
      SeedCorpus test_corpus;
      if (!test_seeds.empty()) test_corpus = ingest_seeds(test_seeds, SeedSource::kTestSource);
      split_spec.assignment =
          assignment == "by-order" ? SplitAssignment::kByOrder : SplitAssignment::kSeededShuffle;
      split_spec.shuffle_seed = build_opts.seed;
      const SplitMap splits = assign_splits(train_corpus, test_corpus, split_spec);

      std::vector<SeedCase> seeds;
      std::vector<std::string> train_ids;
      for (const SeedCorpus* corpus : {&train_corpus, static_cast<const SeedCorpus*>(&test_corpus)}) {
        for (const auto& c : corpus->cases) {
          const auto it = splits.find(c.case_id);
          if (it == splits.end()) continue;
          seeds.push_back(c);
          if (it->second == Split::kTrain) train_ids.push_back(c.case_id);
        }
      }
      const auto prepared = prepare_sim(build_opts, train_ids);
      const BuildResult result =
          build_corpus(seeds, splits, prepared.factory, prepared.config, build_opts.parallelism);
      const std::filesystem::path dir(build_out);
      json manifest = export_jsonl(result.records, dir / "corpus.jsonl");
      manifest["adversarial"] = std::count_if(result.records.begin(), result.records.end(),
                                              [](const TrainingRecord& r) { return r.adversarial; });
      manifest["failures"] = result.failures.size();
      write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
      json failures = json::array();
      for (const auto& f : result.failures) {
        failures.push_back({{"case_id", f.case_id}, {"outcome", to_string(f.outcome)}, {"error", f.error}});
        if (f.stage) failures.back()["stage"] = static_cast<int>(*f.stage);
      }
      write_text_file(dir / "failures.json", failures.dump(2) + "\n");
      out << manifest.dump() << "\n";
    };
  });

  // score
  auto* score_cmd = app.add_subcommand("score", "rubric scores over a runs corpus, from a score file or an LLM");
  std::string score_in, score_mode = "human", score_entries, score_mapping, score_backend, score_exemplars,
                        score_out, score_json;
  score_cmd->add_option("--config", config_path, "JSON file of option values");
  score_cmd->add_option("--in", score_in, "runs JSONL")->required();
  score_cmd->add_option("--mode", score_mode, "human or llm")->check(CLI::IsMember({"human", "llm"}));
  score_cmd->add_option("--scores", score_entries, "human mode: score entries JSONL");
  score_cmd->add_option("--mapping", score_mapping, "blind_id -> dialogue_id JSON from `blind`");
  score_cmd->add_option("--backend", score_backend, "llm mode: scoring backend spec");
  score_cmd->add_option("--exemplars", score_exemplars, "llm mode: JSONL of {transcript, scores}");
  score_cmd->add_option("--out", score_out, "llm mode: write score records JSONL here");
  score_cmd->add_option("--report-json", score_json, "also write the aggregate as JSON");
  score_cmd->callback([&] {
    action = [&] {
      const auto runs = read_runs(score_in);
      const auto tags = tags_by_dialogue(runs);
      std::vector<EvaluatorRecord> records;
      if (score_mode == "human") {
        if (score_entries.empty()) throw Error(ErrorCode::kMissingField, "--scores is required in human mode");
        records = parse_score_records(read_text_file(score_entries));
        std::map<std::string, std::string> mapping;
        if (!score_mapping.empty()) mapping = parse_json_file(score_mapping).get<std::map<std::string, std::string>>();
        for (auto& r : records) {
          if (const auto m = mapping.find(r.dialogue_id); m != mapping.end()) r.dialogue_id = m->second;
          const auto t = tags.find(r.dialogue_id);
          if (t == tags.end()) throw Error(ErrorCode::kMissingField, "no run for dialogue '" + r.dialogue_id + "'");
          r.model_tag = t->second;
        }
      } else {
        if (score_backend.empty()) throw Error(ErrorCode::kMissingField, "--backend is required in llm mode");
        const BackendSpec spec = parse_backend_spec(score_backend);
        std::vector<ScoredExemplar> exemplars;
        if (!score_exemplars.empty()) {
          for (const auto& j : parse_jsonl_file(score_exemplars)) {
            const auto& s = j.at("scores");
            exemplars.push_back({j.at("transcript").get<Transcript>(),
                                 make_scores(s.at("empathy"), s.at("logic"), s.at("guidance"))});
          }
        }
        const auto backend = make_backend(spec.config);
        std::string body;
        for (const auto& run : runs) {
          if (run.outcome != RunOutcome::kCompleted) continue;
          EvaluatorRecord r{"llm", run.transcript.session_id, run.model_tag,
                            llm_score(run.transcript, exemplars, *backend, spec.config.model_id)};
          body += json(r).dump() + "\n";
          records.push_back(std::move(r));
        }
        if (!score_out.empty()) write_text_file(score_out, body);
      }
      const AggregateReport report = aggregate(records);
      out << format_means_table(report.models);
      for (const auto& r : report.inconsistent) {
        err << "warning: overall " << r.scores.overall << " for " << r.dialogue_id << " by " << r.evaluator_id
            << " disagrees with the derived score\n";
      }
      if (!score_json.empty()) {
        json j = json::array();
        for (const auto& m : report.models) {
          j.push_back({{"model_tag", m.model_tag}, {"dialogues", m.dialogues}, {"empathy", m.empathy},
                       {"logic", m.logic}, {"guidance", m.guidance}, {"overall", m.overall}});
        }
        write_text_file(score_json, json{{"models", j}, {"inconsistent", report.inconsistent.size()}}.dump(2) + "\n");
      }
    };
  });

  // blind
  auto* blind = app.add_subcommand("blind", "emit a blind, shuffled evaluation batch");
  std::string blind_in, blind_out, blind_mapping;
  std::uint64_t blind_seed = 0;
  blind->add_option("--config", config_path, "JSON file of option values");
  blind->add_option("--in", blind_in, "runs JSONL")->required();
  blind->add_option("--seed", blind_seed, "shuffle seed");
  blind->add_option("--out", blind_out, "blind items JSONL (default stdout)");
  blind->add_option("--mapping", blind_mapping, "where to keep the blind_id -> dialogue_id map")->required();
  blind->callback([&] {
    action = [&] {
      const auto runs = read_runs(blind_in);
      std::vector<TaggedDialogue> dialogues;
      std::map<std::string, const DialogueRun*> by_id;
      for (const auto& r : runs) {
        dialogues.push_back({r.transcript.session_id, r.model_tag});
        by_id[r.transcript.session_id] = &r;
      }
      const BlindBatch batch = make_blind_batch(dialogues, blind_seed);
      std::string body;
      json mapping = json::object();
      for (const auto& item : batch.items) {
        json turns = json::array();
        for (const auto& t : by_id.at(item.dialogue_id)->transcript.turns) {
          turns.push_back({{"role", to_string(t.role)}, {"stage", static_cast<int>(t.stage)}, {"text", t.text}});
        }
        body += json{{"blind_id", item.blind_id}, {"turns", std::move(turns)}}.dump() + "\n";
        mapping[item.blind_id] = item.dialogue_id;
      }
      write_text_file(blind_mapping, mapping.dump(2) + "\n");
      emit(blind_out, body, out);
    };
  });

  // panas-report
  auto* report = app.add_subcommand("panas-report", "group statistics and radar charts from PANAS responses");
  std::string report_in, report_groups, report_svg_dir;
  bool report_as_json = false;
  report->add_option("--config", config_path, "JSON file of option values");
  report->add_option("--in", report_in, "JSON array of responses")->required();
  report->add_option("--groups", report_groups, "JSON array of {label, clients}")->required();
  report->add_option("--svg-dir", report_svg_dir, "write before/after radar SVGs per client");
  report->add_flag("--json", report_as_json, "print JSON instead of a table");
  report->callback([&] {
    action = [&] {
      const auto responses = parse_responses(parse_json_file(report_in));
      const auto groups = parse_group_specs(parse_json_file(report_groups));
      std::vector<GroupStats> stats;
      for (const auto& g : groups) {
        const auto pairs = pairs_for_group(responses, g);
        stats.push_back(group_stats(pairs, g.label));
        if (!report_svg_dir.empty()) {
          for (const auto& [pre, post] : pairs) {
            for (auto polarity : {Polarity::kPositive, Polarity::kNegative}) {
              const std::string name = pre.client_id + "-" + std::string(to_string(polarity));
              write_text_file(std::filesystem::path(report_svg_dir) / (name + ".svg"),
                              radar_svg(radar_data(pre, post, polarity), g.label + " " + name));
            }
          }
        }
      }
      out << (report_as_json ? group_stats_to_json(stats).dump(2) + "\n" : format_group_table(stats));
    };
  });

  // anova
  auto* anova_cmd = app.add_subcommand("anova", "one-way ANOVA over PANAS groups or explicit value lists");
  std::string anova_in, anova_groups, granularity = "per-item", anova_phase = "pre";
  std::vector<std::string> anova_values;
  anova_cmd->add_option("--config", config_path, "JSON file of option values");
  anova_cmd->add_option("--in", anova_in, "JSON array of PANAS responses");
  anova_cmd->add_option("--groups", anova_groups, "JSON array of {label, clients}");
  anova_cmd->add_option("--granularity", granularity, "per-item or per-client-total")
      ->check(CLI::IsMember({"per-item", "per-client-total"}));
  anova_cmd->add_option("--phase", anova_phase, "pre or post")->check(CLI::IsMember({"pre", "post"}));
  anova_cmd->add_option("--values", anova_values, "one comma-separated group of numbers per use")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  anova_cmd->callback([&] {
    action = [&] {
      std::vector<std::vector<double>> groups;
      const auto g = parse_granularity(granularity);
      if (!anova_values.empty()) {
        for (const auto& list : anova_values) {
          std::vector<double> values;
          for (const auto& v : split_csv_list(list)) {
            try {
              values.push_back(std::stod(v));
            } catch (const std::exception&) {
              throw Error(ErrorCode::kInvalidRequest, "not a number: '" + v + "'");
            }
          }
          groups.push_back(std::move(values));
        }
      } else {
        if (anova_in.empty() || anova_groups.empty()) {
          throw Error(ErrorCode::kMissingField, "give --values, or --in with --groups");
        }
        const auto responses = parse_responses(parse_json_file(anova_in));
        const auto phase = parse_phase(anova_phase);
        for (const auto& spec : parse_group_specs(parse_json_file(anova_groups))) {
          std::vector<PanasResponse> members;
          for (const auto& r : responses) {
            if (r.phase == phase &&
                std::find(spec.clients.begin(), spec.clients.end(), r.client_id) != spec.clients.end()) {
              members.push_back(r);
            }
          }
          groups.push_back(anova_observations(members, g));
        }
      }
      out << anova_to_json(anova(groups, g)).dump() << "\n";
    };
  });

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP session service");
  std::string serve_host;
  int serve_port = -1;
  std::string serve_data_dir;
  serve->add_option("--config", config_path, "service JSON config");
  serve->add_option("--host", serve_host, "bind address");
  serve->add_option("--port", serve_port, "port")->check(CLI::Range(0, 65535));
  serve->add_option("--data-dir", serve_data_dir, "data directory");
  serve->callback([&] {
    action = [&] {
      ServiceConfig config = config_path.empty() ? ServiceConfig{} : load_service_config_file(config_path);
      apply_env_overrides(config);
      if (!serve_host.empty()) config.host = serve_host;
      if (serve_port >= 0) config.port = serve_port;
      if (!serve_data_dir.empty()) config.data_dir = serve_data_dir;
      SessionStore store(config);
      HttpService http(store);
      err << "listening on " << config.host << ":" << config.port << "\n";
      if (!http.listen(config.host, config.port)) {
        throw Error(ErrorCode::kIo, "cannot listen on " + config.host + ":" + std::to_string(config.port));
      }
    };
  });

  try {
    std::vector<std::string> args = expand_config_args(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 2;
  } catch (const Error& e) {
    print_error(err, {std::string(e.name()), e.message()});
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    print_error(err, {std::string(e.name()), e.message()});
  } catch (const nlohmann::json::exception& e) {
    print_error(err, {"InvalidRequest", e.what()});
  } catch (const std::exception& e) {
    print_error(err, {"Internal", e.what()});
  }
  return 1;
}

}  // namespace reframe
