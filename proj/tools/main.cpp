#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mirrorlab/esmeta.hpp"
#include "mirrorlab/parallel.hpp"
#include "mirrorlab/serialize.hpp"
#include "mirrorlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace mirrorlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalidDrift = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

DriftSpec drift_from_flag(const std::string& flag) {
  if (flag == "ppo") return PpoClipDrift{};
  if (flag == "dpo") return DpoDrift{};
  if (flag.rfind("learned:", 0) == 0)
    return drift_spec_from_json(load_json_file(flag.substr(8)));
  throw std::invalid_argument("--drift must be ppo, dpo, or learned:PATH");
}

struct TrainOpts {
  std::string config;
  std::string out = "out";
  std::string drift_flag;
  std::string env_flag;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int seeds = 1;
  bool force = false;
  bool dump_batch = false;
};

int run_train(const TrainOpts& o) {
  json cfg = o.config.empty() ? json::object() : load_json_file(o.config);
  EnvSpec env = cfg.contains("env") ? env_spec_from_json(cfg.at("env"))
                                    : default_env_spec(EnvId::kCartpole);
  if (!o.env_flag.empty())
    env = default_env_spec(env_id_from_string(o.env_flag));
  DriftSpec drift = cfg.contains("drift") ? drift_spec_from_json(cfg.at("drift"))
                                          : DriftSpec(PpoClipDrift{});
  if (!o.drift_flag.empty()) drift = drift_from_flag(o.drift_flag);
  TrainConfig tc = cfg.contains("train") ? train_config_from_json(cfg.at("train"))
                                         : TrainConfig{};
  if (o.has_seed) tc.seed = o.seed;
  if (o.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
  tc.validate();
  validate_drift_spec(drift);

  fs::create_directories(o.out);
  std::vector<std::uint64_t> seed_list(o.seeds);
  for (int i = 0; i < o.seeds; ++i) seed_list[i] = tc.seed + i;
  for (std::uint64_t s : seed_list) {
    const fs::path run_json = fs::path(o.out) / ("run_" + std::to_string(s)) / "run.json";
    if (fs::exists(run_json) && !o.force) {
      std::cerr << "refusing to overwrite " << run_json.string()
                << " (use --force)\n";
      return kExitUsage;
    }
  }

  // every default enumerated, so paper-gap choices are auditable
  json resolved{{"env", env_spec_to_json(env)},
                {"drift", drift_spec_to_json(drift)},
                {"train", train_config_to_json(tc)},
                {"seeds", o.seeds}};
  write_json_file((fs::path(o.out) / "resolved_config.json").string(), resolved);

  std::vector<RunRecord> records(o.seeds);
  parallel_for(o.seeds, [&](int i) {
    TrainConfig c = tc;
    c.seed = seed_list[i];
    if (o.dump_batch && i == 0)
      c.dump_batch_path =
          (fs::path(o.out) / ("run_" + std::to_string(c.seed)) / "batch.csv").string();
    fs::create_directories(fs::path(o.out) / ("run_" + std::to_string(c.seed)));
    records[i] = train(env, drift, c);
  });

  bool any_diverged = false;
  for (int i = 0; i < o.seeds; ++i) {
    const fs::path dir = fs::path(o.out) / ("run_" + std::to_string(seed_list[i]));
    write_json_file((dir / "run.json").string(), run_record_to_json(records[i]));
    std::ofstream metrics(dir / "metrics.csv");
    write_metrics_csv(records[i], metrics);
    if (records[i].diverged) {
      any_diverged = true;
      std::cerr << "seed " << seed_list[i]
                << " diverged: " << records[i].divergence_reason << '\n';
    } else {
      std::cout << "seed " << seed_list[i]
                << " final return: " << records[i].final_eval_return << '\n';
    }
  }
  std::ofstream summary(fs::path(o.out) / "summary.csv");
  write_summary_csv(records, summary);
  return any_diverged ? kExitDiverged : kExitOk;
}

struct MetaOpts {
  std::string config;
  std::string out = "out";
  std::string resume;
  std::uint64_t seed = 0;
  bool has_seed = false;
  bool force = false;
};

int run_meta_train(const MetaOpts& o) {
  fs::create_directories(o.out);
  const std::string ckpt_path = (fs::path(o.out) / "checkpoint.json").string();
  MetaResult res;
  EsConfig es;
  std::uint64_t seed = 0;
  if (!o.resume.empty()) {
    MetaCheckpoint ckpt;
    read_meta_checkpoint(o.resume, es, ckpt);
    es.checkpoint_path = ckpt_path;
    seed = ckpt.seed;
    res = meta_train_resume(es, ckpt);
  } else {
    if (o.config.empty())
      throw std::invalid_argument("meta-train requires --config");
    json cfg = load_json_file(o.config);
    es = es_config_from_json(cfg.at("es"));
    seed = o.has_seed ? o.seed : cfg.value("seed", 0ULL);
    if (fs::exists(ckpt_path) && !o.force) {
      std::cerr << "refusing to overwrite " << ckpt_path << " (use --force)\n";
      return kExitUsage;
    }
    es.checkpoint_path = ckpt_path;
    json resolved{{"es", es_config_to_json(es)}, {"seed", seed}};
    write_json_file((fs::path(o.out) / "resolved_config.json").string(), resolved);
    res = meta_train(es, seed);
  }

  std::ofstream hist(fs::path(o.out) / "fitness_history.csv");
  write_fitness_history_csv(res.history, hist);
  const LearnedDrift best = drift_from_meta_params(es, res.best_phi);
  const LearnedDrift final_drift = drift_from_meta_params(es, res.phi);
  write_json_file((fs::path(o.out) / "best_drift.json").string(),
                  drift_spec_to_json(best));
  write_json_file((fs::path(o.out) / "final_drift.json").string(),
                  drift_spec_to_json(final_drift));
  const ValidityReport rep = verify_drift(DriftSpec(best));
  write_json_file((fs::path(o.out) / "best_drift_validity.json").string(),
                  validity_report_to_json(rep));
  std::cout << "best fitness: " << res.best_fitness
            << " (drift " << (rep.valid ? "valid" : "INVALID") << ")\n";
  return rep.valid ? kExitOk : kExitInvalidDrift;
}

struct DriftOpts {
  std::string config;
  std::string out = "out";
  std::string drift_flag;
  double r_min = 0.1, r_max = 3.0, a_min = -3.0, a_max = 3.0;
  int resolution = 300;
};

DriftSpec resolve_drift(const DriftOpts& o) {
  if (!o.drift_flag.empty()) return drift_from_flag(o.drift_flag);
  if (!o.config.empty()) {
    json cfg = load_json_file(o.config);
    if (cfg.contains("drift")) return drift_spec_from_json(cfg.at("drift"));
  }
  throw std::invalid_argument("no drift specified (--drift or config)");
}

int run_verify_drift(const DriftOpts& o) {
  const DriftSpec drift = resolve_drift(o);
  GridSpec grid;
  grid.r_min = o.r_min;
  grid.r_max = o.r_max;
  grid.a_min = o.a_min;
  grid.a_max = o.a_max;
  grid.r_steps = o.resolution;
  grid.a_steps = o.resolution;
  const ValidityReport rep = verify_drift(drift, grid);
  fs::create_directories(o.out);
  write_json_file((fs::path(o.out) / "validity_report.json").string(),
                  validity_report_to_json(rep));
  if (rep.valid) {
    std::cout << drift_name(drift) << ": valid drift\n";
    return kExitOk;
  }
  std::cout << drift_name(drift) << ": INVALID drift";
  if (!rep.zero_at_identity)
    std::cout << "; f(1, A) = " << rep.max_abs_identity
              << " at A = " << rep.max_abs_identity_a;
  if (!rep.nonnegative)
    std::cout << "; min f = " << rep.min_value << " at (r, A) = ("
              << rep.min_value_r << ", " << rep.min_value_a << ")";
  if (!rep.zero_gradient_at_identity)
    std::cout << "; |df/dr| at r=1 = " << rep.max_abs_identity_grad
              << " at A = " << rep.max_abs_identity_grad_a;
  std::cout << '\n';
  return kExitInvalidDrift;
}

int run_heatmap(const DriftOpts& o) {
  const DriftSpec drift = resolve_drift(o);
  validate_drift_spec(drift);
  GridSpec grid;
  grid.r_min = o.r_min;
  grid.r_max = o.r_max;
  grid.a_min = o.a_min;
  grid.a_max = o.a_max;
  grid.r_steps = o.resolution;
  grid.a_steps = o.resolution;
  const HeatmapData data = objective_derivative_heatmap(drift, grid);
  fs::create_directories(o.out);
  std::ofstream hm(fs::path(o.out) / "heatmap.csv");
  write_heatmap_csv(data, hm);
  std::ofstream sl(fs::path(o.out) / "slices.csv");
  write_slices_csv(drift, o.r_min, o.r_max, o.resolution, sl);
  std::cout << "wrote heatmap.csv and slices.csv to " << o.out << '\n';
  return kExitOk;
}

int run_compare(const std::vector<std::string>& record_paths,
                const std::string& out) {
  if (record_paths.empty())
    throw std::invalid_argument("compare requires --records");
  std::vector<std::string> names;
  std::vector<RunRecord> records;
  for (const std::string& p : record_paths) {
    if (!fs::exists(p)) {
      std::cerr << "missing record: " << p << '\n';
      return kExitUsage;
    }
    RunRecord rec = run_record_from_json(load_json_file(p));
    names.push_back(fs::path(p).parent_path().filename().string().empty()
                        ? fs::path(p).stem().string()
                        : fs::path(p).parent_path().filename().string());
    records.push_back(std::move(rec));
  }
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "compare.csv");
  write_compare_csv(names, records, f);
  std::cout << "wrote compare.csv (" << records.size() << " records)\n";
  return kExitOk;
}

int run_ablate(const MetaOpts& o) {
  if (o.config.empty())
    throw std::invalid_argument("ablate-features requires --config");
  json cfg = load_json_file(o.config);
  EsConfig base = es_config_from_json(cfg.at("es"));
  const std::uint64_t seed = o.has_seed ? o.seed : cfg.value("seed", 0ULL);
  const std::vector<int> masks =
      cfg.at("feature_masks").get<std::vector<int>>();
  if (masks.empty()) throw std::invalid_argument("feature_masks is empty");

  fs::create_directories(o.out);
  const fs::path results_path = fs::path(o.out) / "ablate_results.csv";
  if (fs::exists(results_path) && !o.force) {
    std::cerr << "refusing to overwrite " << results_path.string()
              << " (use --force)\n";
    return kExitUsage;
  }
  std::ofstream results(results_path);
  results << "feature_mask,best_fitness,final_mean_fitness\n";
  for (int mask : masks) {
    if (mask < 1 || mask > 255)
      throw std::invalid_argument("feature mask out of range [1,255]");
    EsConfig es = base;
    es.feature_mask = static_cast<std::uint8_t>(mask);
    const fs::path dir = fs::path(o.out) / ("mask_" + std::to_string(mask));
    fs::create_directories(dir);
    es.checkpoint_path = (dir / "checkpoint.json").string();
    const MetaResult res = meta_train(es, seed);
    std::ofstream hist(dir / "fitness_history.csv");
    write_fitness_history_csv(res.history, hist);
    write_json_file((dir / "best_drift.json").string(),
                    drift_spec_to_json(drift_from_meta_params(es, res.best_phi)));
    results << mask << ',' << format_full(res.best_fitness) << ','
            << format_full(res.history.back().fitness_mean) << '\n';
    std::cout << "mask " << mask << ": best fitness " << res.best_fitness << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mirrorlab: drift-function policy optimisation toolkit"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a policy under a drift");
  train_cmd->add_option("--config", train_opts.config, "config JSON path");
  train_cmd->add_option("--out", train_opts.out, "output directory");
  train_cmd->add_option("--drift", train_opts.drift_flag, "ppo | dpo | learned:PATH");
  train_cmd->add_option("--env", train_opts.env_flag, "cartpole | pendulum");
  CLI::Option* seed_opt = train_cmd->add_option("--seed", train_opts.seed, "seed override");
  train_cmd->add_option("--seeds", train_opts.seeds, "number of seeds");
  train_cmd->add_flag("--force", train_opts.force, "overwrite existing records");
  train_cmd->add_flag("--dump-batch", train_opts.dump_batch, "dump first batch CSV");

  MetaOpts meta_opts;
  CLI::App* meta_cmd = app.add_subcommand("meta-train", "ES meta-training of a drift network");
  meta_cmd->add_option("--config", meta_opts.config, "config JSON path");
  meta_cmd->add_option("--out", meta_opts.out, "output directory");
  meta_cmd->add_option("--resume", meta_opts.resume, "checkpoint to resume from");
  CLI::Option* meta_seed_opt = meta_cmd->add_option("--seed", meta_opts.seed, "seed override");
  meta_cmd->add_flag("--force", meta_opts.force, "overwrite existing outputs");

  DriftOpts verify_opts;
  CLI::App* verify_cmd = app.add_subcommand("verify-drift", "check the drift validity conditions");
  verify_cmd->add_option("--config", verify_opts.config, "config JSON path");
  verify_cmd->add_option("--out", verify_opts.out, "output directory");
  verify_cmd->add_option("--drift", verify_opts.drift_flag, "ppo | dpo | learned:PATH");
  verify_cmd->add_option("--resolution", verify_opts.resolution, "grid steps per axis");

  DriftOpts heatmap_opts;
  CLI::App* heatmap_cmd = app.add_subcommand("heatmap", "export the objective ratio-derivative grid");
  heatmap_cmd->add_option("--config", heatmap_opts.config, "config JSON path");
  heatmap_cmd->add_option("--out", heatmap_opts.out, "output directory");
  heatmap_cmd->add_option("--drift", heatmap_opts.drift_flag, "ppo | dpo | learned:PATH");
  heatmap_cmd->add_option("--rmin", heatmap_opts.r_min, "ratio lower bound");
  heatmap_cmd->add_option("--rmax", heatmap_opts.r_max, "ratio upper bound");
  heatmap_cmd->add_option("--amin", heatmap_opts.a_min, "advantage lower bound");
  heatmap_cmd->add_option("--amax", heatmap_opts.a_max, "advantage upper bound");
  heatmap_cmd->add_option("--resolution", heatmap_opts.resolution, "grid steps per axis");

  std::vector<std::string> compare_records;
  std::string compare_out = "out";
  CLI::App* compare_cmd = app.add_subcommand("compare", "align return/entropy across runs");
  compare_cmd->add_option("--records", compare_records, "run.json paths")->expected(-1);
  compare_cmd->add_option("--out", compare_out, "output directory");

  MetaOpts ablate_opts;
  CLI::App* ablate_cmd = app.add_subcommand("ablate-features", "meta-train per feature mask");
  ablate_cmd->add_option("--config", ablate_opts.config, "config JSON path");
  ablate_cmd->add_option("--out", ablate_opts.out, "output directory");
  CLI::Option* ablate_seed_opt = ablate_cmd->add_option("--seed", ablate_opts.seed, "seed override");
  ablate_cmd->add_flag("--force", ablate_opts.force, "overwrite existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }

  train_opts.has_seed = seed_opt->count() > 0;
  meta_opts.has_seed = meta_seed_opt->count() > 0;
  ablate_opts.has_seed = ablate_seed_opt->count() > 0;

  try {
    if (train_cmd->parsed()) return run_train(train_opts);
    if (meta_cmd->parsed()) return run_meta_train(meta_opts);
    if (verify_cmd->parsed()) return run_verify_drift(verify_opts);
    if (heatmap_cmd->parsed()) return run_heatmap(heatmap_opts);
    if (compare_cmd->parsed()) return run_compare(compare_records, compare_out);
    if (ablate_cmd->parsed()) return run_ablate(ablate_opts);
  } catch (const DriftInvalidError& e) {
    std::cerr << e.what() << '\n';
    return kExitInvalidDrift;
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
