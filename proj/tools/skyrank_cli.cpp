// SPDX-License-Identifier: Apache-2.0
//
// skyrank: cross-view re-ranking pipeline driver.
//
//   skyrank gen     --config cfg.json        generate a synthetic world
//   skyrank curate  --config cfg.json        build the ranking manifest
//   skyrank train   --config cfg.json        train the scorer
//   skyrank rerank  --config cfg.json        re-rank retrieval candidates
//   skyrank eval    --config cfg.json        score baseline vs reranked
//   skyrank sweep   --config cfg.json --axis T --values 0.5,0.9,1.0
//
// Exit codes: 0 ok, 2 config/validation error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "skyrank/pipeline.hpp"

namespace {

void print_error_json(const std::string& type, const std::string& message) {
  nlohmann::ordered_json err;
  err["error"] = nlohmann::ordered_json{{"type", type}, {"message", message}};
  std::cerr << err.dump() << std::endl;
}

// "a.b.c=value" -> config JSON pointer override; values parse as JSON when
// possible and fall back to strings.
void apply_set_override(nlohmann::json& config, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw skyrank::ValidationError("--set expects key.path=value, got \"" + spec + "\"");
  }
  std::string key = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  for (char& ch : key) {
    if (ch == '.') ch = '/';
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  config[nlohmann::json::json_pointer("/" + key)] = value;
}

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  bool serial_deterministic = false;
  std::string axis = "T";
  std::string values_csv;
};

skyrank::RunConfig build_config(const CliOptions& opt) {
  nlohmann::json doc = nlohmann::json::object();
  if (!opt.config_path.empty()) {
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(skyrank::read_file(opt.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw skyrank::ValidationError(opt.config_path + ": bad config JSON: " + e.what());
    }
    if (parsed.contains("config") && parsed.contains("command")) {
      parsed = parsed.at("config");
    }
    doc = std::move(parsed);
  }
  for (const std::string& spec : opt.overrides) apply_set_override(doc, spec);

  skyrank::RunConfig cfg;
  try {
    cfg = skyrank::run_config_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw skyrank::ValidationError(std::string("bad config JSON: ") + e.what());
  }

  if (const char* env_seed = std::getenv("SKYRANK_SEED")) {
    try {
      cfg.seed = std::stoull(env_seed);
    } catch (const std::exception&) {
      throw skyrank::ValidationError("SKYRANK_SEED is not an integer");
    }
    cfg.world_seed_set = false;
    cfg.scorer_seed_set = false;
    cfg.train_seed_set = false;
  }
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.world_seed_set = false;
    cfg.scorer_seed_set = false;
    cfg.train_seed_set = false;
  }
  if (opt.out_dir) cfg.paths.out_dir = *opt.out_dir;
  if (opt.threads) cfg.threads = *opt.threads;
  if (opt.serial_deterministic) cfg.serial_deterministic = true;

  skyrank::resolve_run_config(cfg);
  return cfg;
}

std::vector<double> parse_values_csv(const std::string& csv) {
  std::vector<double> values;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw skyrank::ValidationError("sweep value is not a number: \"" + item + "\"");
    }
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skyrank: retrieval re-ranking pipeline"};
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("--config", opt.config_path, "run config JSON (or a run_*.json record)");
  app.add_option("--set", opt.overrides, "override a config field, e.g. --set train.T=0.8")
      ->take_all();
  app.add_option("--seed", opt.seed, "master seed (overrides config and SKYRANK_SEED)");
  app.add_option("--out-dir", opt.out_dir, "output directory");
  app.add_option("--threads", opt.threads, "worker threads (0 = hardware)");
  app.add_flag("--serial-deterministic", opt.serial_deterministic,
               "single-threaded bit-reproducible mode");

  auto* gen = app.add_subcommand("gen", "generate a synthetic paired-view world");
  auto* curate = app.add_subcommand("curate", "curate the ranking manifest");
  auto* train = app.add_subcommand("train", "train the scorer, write a checkpoint");
  auto* rerank = app.add_subcommand("rerank", "re-rank retrieval candidates");
  auto* eval = app.add_subcommand("eval", "evaluate baseline vs reranked");
  auto* sweep = app.add_subcommand("sweep", "repeat train/eval along one axis");
  sweep->add_option("--axis", opt.axis, "sweep axis: T | k_rerank | k_train");
  sweep->add_option("--values", opt.values_csv, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    print_error_json("validation", e.what());
    return 2;
  }

  try {
    skyrank::RunConfig cfg = build_config(opt);
    std::filesystem::create_directories(cfg.paths.out_dir);

    if (gen->parsed()) {
      skyrank::cmd_gen(cfg);
      std::cout << "world written to " << cfg.paths.out_dir << "\n";
    } else if (curate->parsed()) {
      skyrank::cmd_curate(cfg);
      std::cout << "manifest written to " << cfg.paths.manifest << "\n";
    } else if (train->parsed()) {
      skyrank::TrainReport report = skyrank::cmd_train(cfg);
      std::cout << "trained " << report.step_losses.size() << " steps";
      if (!report.epoch_mean_losses.empty()) {
        std::cout << ", final epoch mean loss " << report.epoch_mean_losses.back();
      }
      std::cout << "\ncheckpoint written to " << cfg.paths.checkpoint << "\n";
    } else if (rerank->parsed()) {
      auto runs = skyrank::cmd_rerank(cfg);
      std::cout << "reranked " << runs.size() << " queries -> "
                << cfg.paths.rerank_run << "\n";
    } else if (eval->parsed()) {
      skyrank::EvalPair pair = skyrank::cmd_eval(cfg);
      std::cout << skyrank::eval_summary_csv(
          {{"baseline", pair.baseline}, {"reranked", pair.reranked}});
    } else if (sweep->parsed()) {
      auto rows = skyrank::cmd_sweep(cfg, opt.axis, parse_values_csv(opt.values_csv));
      std::cout << "sweep over " << opt.axis << ": " << rows.size() << " rows -> "
                << cfg.paths.out_dir << "/sweep_" << opt.axis << ".csv\n";
    }
    return 0;
  } catch (const skyrank::ValidationError& e) {
    print_error_json("validation", e.what());
    return 2;
  } catch (const skyrank::DataError& e) {
    print_error_json("data", e.what());
    return 3;
  } catch (const skyrank::NumericError& e) {
    print_error_json("numeric", e.what());
    return 4;
  } catch (const std::exception& e) {
    print_error_json("data", e.what());
    return 3;
  }
}
