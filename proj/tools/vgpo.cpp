#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vgpo/harness.hpp"

namespace fs = std::filesystem;
using namespace vgpo;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

TrainConfig resolve_config(const Globals& g) {
  TrainConfig cfg = g.config_path.empty() ? parse_config("") : load_config(g.config_path);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.validate();
  }
  return cfg;
}

fs::path out_dir_for(const Globals& g, const std::string& sub) {
  return g.out_dir.empty() ? fs::path("runs") / sub : fs::path(g.out_dir);
}

void print_eval(const MetricRecord& m) {
  std::cout << "step " << m.step << "  reward " << m.mean_reward << "  accuracy " << m.accuracy << "  quality "
            << m.quality_mean << "  group_std " << m.group_reward_std_mean << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-policy RL lab: pretrain, fine-tune and compare group-relative estimators"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "config file (JSON object or key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.add_option("--out-dir", g.out_dir, "output directory (default runs/<command>)");

  auto* pre = app.add_subcommand("pretrain", "flow-matching pretraining of the reference policy");

  auto* train = app.add_subcommand("train", "RL fine-tuning run");
  std::string init_path, preset_name;
  train->add_option("--init", init_path, "reference checkpoint (pretrained here if omitted)")->check(CLI::ExistingFile);
  train->add_option("--preset", preset_name, "vgpo | flow-grpo | tcrm-only | adae-only");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with deterministic ODE sampling");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "run every preset from a shared reference and report phenomena");
  std::size_t n_seeds = 1;
  ablate->add_option("--seeds", n_seeds, "number of seeds, starting at the config seed")->check(CLI::PositiveNumber);

  auto* curves = app.add_subcommand("dump-curves", "write curves.csv (one row per eval) for a run directory");
  std::string run_dir, csv_out;
  curves->add_option("--run-dir", run_dir, "run directory (default: --out-dir)");
  curves->add_option("--output", csv_out, "CSV path (default <run-dir>/curves.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      const auto cfg = resolve_config(g);
      const auto dir = out_dir_for(g, "pretrain");
      fs::create_directories(dir);
      std::vector<double> losses;
      const auto params = pretrain_reference(cfg, &losses);
      std::ofstream(dir / "config.json") << emit_config(cfg);
      save_checkpoint((dir / "pretrained.ckpt").string(), cfg.architecture(), params);
      std::cout << "final flow-matching loss " << (losses.empty() ? 0.0 : losses.back()) << "\n"
                << (dir / "pretrained.ckpt").string() << "\n";
    } else if (*train) {
      auto cfg = resolve_config(g);
      if (!preset_name.empty()) cfg = apply_preset(cfg, preset_from_string(preset_name), cfg.k > 0 ? cfg.k : 0.5);
      RunOptions opts;
      opts.out_dir = out_dir_for(g, "train");
      opts.label = preset_name;
      if (!init_path.empty()) {
        auto ck = load_checkpoint(init_path);
        if (!(ck.arch == cfg.architecture()))
          throw std::invalid_argument("train: checkpoint architecture does not match the config");
        opts.reference = std::move(ck.params);
        opts.reference_path = init_path;
      }
      const auto res = run(cfg, opts);
      print_eval(res.evals.front());
      print_eval(res.evals.back());
      std::cout << opts.out_dir->string() << "\n";
    } else if (*eval) {
      const auto cfg = resolve_config(g);
      auto ck = load_checkpoint(ckpt_path);
      if (!(ck.arch == cfg.architecture()))
        throw std::invalid_argument("eval: checkpoint architecture does not match the config");
      Trainer t(cfg, ck.params);
      const auto m = t.evaluate(0);
      const auto dir = out_dir_for(g, "eval");
      fs::create_directories(dir);
      std::ofstream(dir / "eval.json") << to_json(m).dump(2) << "\n";
      print_eval(m);
    } else if (*ablate) {
      const auto base = resolve_config(g);
      const auto dir = out_dir_for(g, "ablate");
      RunSet runs;
      for (std::size_t s = 0; s < n_seeds; ++s) {
        TrainConfig seeded = base;
        seeded.seed = base.seed + s;
        const auto reference = pretrain_reference(seeded);
        for (auto p : kAllPresets) {
          const auto cfg = apply_preset(seeded, p, base.k > 0 ? base.k : 0.5);
          RunOptions opts;
          opts.out_dir = dir / std::string(to_string(p)) / ("seed_" + std::to_string(cfg.seed));
          opts.reference = reference;
          opts.label = std::string(to_string(p));
          const auto res = run(cfg, opts);
          std::cout << to_string(p) << " seed " << cfg.seed << ": reward " << res.evals.front().mean_reward << " -> "
                    << res.evals.back().mean_reward << "\n";
          runs[std::string(to_string(p))].push_back(res.evals);
        }
      }
      const auto rep = reproduce_phenomena(runs);
      std::ofstream(dir / "phenomena.json") << to_json(rep).dump(2) << "\n";
      std::ofstream csv(dir / "tradeoff.csv");
      write_tradeoff_csv(csv, rep);
      std::cout << "steps to 80% of final reward (median): dense " << rep.median_dense_steps << ", sparse "
                << rep.median_sparse_steps << ", speedup " << rep.speedup << "\n"
                << "quality drop at matched reward (median): vgpo " << rep.median_vgpo_quality_drop
                << ", flow-grpo " << rep.median_flow_grpo_quality_drop << "\n"
                << (dir / "phenomena.json").string() << "\n";
    } else if (*curves) {
      const fs::path rd = run_dir.empty() ? out_dir_for(g, "train") : fs::path(run_dir);
      const auto path = dump_curves(rd, csv_out.empty() ? std::nullopt : std::optional<fs::path>(csv_out));
      std::cout << path.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
