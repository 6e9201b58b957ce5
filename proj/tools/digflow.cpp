#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "digflow/config.hpp"

namespace {

struct Flags {
  std::string config_path;
  std::string seed, out, jobs, num_seeds, episodes, perturb;
  std::string steps, batch_size, hidden, lr, weight_decay;
  std::string lambda, tau, g_min, spectral_bound, discrepancy, projections, epsilon, sigma;
  std::string gate_strategy, fixed_gate, gate_enabled, residual_enabled;
  std::string n_refine, euler_steps;
  std::string sweep_lambda, sweep_tau, sweep_projections, sweep_n_refine;
  std::string sweep_discrepancy, sweep_gate_strategy;
};

void add_override(CLI::App& cmd, const char* flag, std::string& slot, const char* help) {
  cmd.add_option(flag, slot, help);
}

void register_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config_path, "key = value config file")
      ->check(CLI::ExistingFile);
  add_override(cmd, "--seed", f.seed, "master seed");
  add_override(cmd, "--out", f.out, "output directory");
  add_override(cmd, "--jobs", f.jobs, "parallel grid points");
  add_override(cmd, "--num-seeds", f.num_seeds, "seeds per configuration");
  add_override(cmd, "--episodes", f.episodes, "evaluation episodes");
  add_override(cmd, "--perturb", f.perturb, "none|cosine|sine|both");
  add_override(cmd, "--steps", f.steps, "training steps");
  add_override(cmd, "--batch-size", f.batch_size, "batch size");
  add_override(cmd, "--hidden", f.hidden, "model hidden width");
  add_override(cmd, "--lr", f.lr, "learning rate");
  add_override(cmd, "--weight-decay", f.weight_decay, "decoupled weight decay");
  add_override(cmd, "--lambda", f.lambda, "residual strength");
  add_override(cmd, "--tau", f.tau, "gate temperature");
  add_override(cmd, "--g-min", f.g_min, "gate lower clip");
  add_override(cmd, "--spectral-bound", f.spectral_bound, "residual spectral bound");
  add_override(cmd, "--discrepancy", f.discrepancy,
               "sliced_w2|sinkhorn|mmd_rbf|cosine_mean");
  add_override(cmd, "--projections", f.projections, "sliced-W2 directions");
  add_override(cmd, "--epsilon", f.epsilon, "sinkhorn regularization");
  add_override(cmd, "--sigma", f.sigma, "mmd kernel bandwidth");
  add_override(cmd, "--gate-strategy", f.gate_strategy, "transport|fixed|random");
  add_override(cmd, "--fixed-gate", f.fixed_gate, "gate value for the fixed strategy");
  add_override(cmd, "--gate-enabled", f.gate_enabled, "true|false");
  add_override(cmd, "--residual-enabled", f.residual_enabled, "true|false");
}

void apply_if_set(digflow::RunConfig& cfg, const char* key, const std::string& value) {
  if (!value.empty()) digflow::apply_config_entry(cfg, key, value);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discrepancy-gated flow matching toolkit"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* cmd;
    Flags flags;
    std::string shortcut_frac, shortcut_strength;
    const char* name;
  };
  const char* names[5] = {"train", "eval", "refine-sweep", "ablate", "verify"};
  const char* helps[5] = {"train one model and write metrics plus a checkpoint",
                          "train and evaluate over seeds",
                          "evaluate across the n_refine grid",
                          "run the ablation grid",
                          "run the numerical verification suite"};
  std::vector<Sub> subs(5);
  for (int i = 0; i < 5; ++i) {
    subs[i].name = names[i];
    subs[i].cmd = app.add_subcommand(names[i], helps[i]);
    register_flags(*subs[i].cmd, subs[i].flags);
    subs[i].cmd->add_option("--shortcut-frac", subs[i].shortcut_frac, "shortcut probability");
    subs[i].cmd->add_option("--shortcut-strength", subs[i].shortcut_strength,
                            "shortcut noise scale");
    subs[i].cmd->add_option("--n-refine", subs[i].flags.n_refine, "refinement iterations");
    subs[i].cmd->add_option("--euler-steps", subs[i].flags.euler_steps, "ODE solver steps");
    subs[i].cmd->add_option("--sweep-n-refine", subs[i].flags.sweep_n_refine,
                            "comma list for refine-sweep");
    subs[i].cmd->add_option("--sweep-discrepancy", subs[i].flags.sweep_discrepancy,
                            "comma list for ablate");
    subs[i].cmd->add_option("--sweep-gate-strategy", subs[i].flags.sweep_gate_strategy,
                            "comma list for ablate");
    subs[i].cmd->add_option("--sweep-lambda", subs[i].flags.sweep_lambda,
                            "comma list for ablate");
    subs[i].cmd->add_option("--sweep-tau", subs[i].flags.sweep_tau, "comma list for ablate");
    subs[i].cmd->add_option("--sweep-projections", subs[i].flags.sweep_projections,
                            "comma list for ablate");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    digflow::RunConfig cfg;
    if (const char* root = std::getenv("DIGFLOW_OUT_ROOT")) cfg.out_dir = root;
    const Sub* active = nullptr;
    for (auto& s : subs)
      if (s.cmd->parsed()) active = &s;
    if (!active) return 1;

    if (!active->flags.config_path.empty())
      cfg = digflow::parse_config_file(active->flags.config_path, cfg);
    cfg.command = active->name;

    const Flags& f = active->flags;
    apply_if_set(cfg, "seed", f.seed);
    apply_if_set(cfg, "out", f.out);
    apply_if_set(cfg, "jobs", f.jobs);
    apply_if_set(cfg, "num_seeds", f.num_seeds);
    apply_if_set(cfg, "episodes", f.episodes);
    apply_if_set(cfg, "perturb", f.perturb);
    apply_if_set(cfg, "train.steps", f.steps);
    apply_if_set(cfg, "train.batch_size", f.batch_size);
    apply_if_set(cfg, "train.hidden", f.hidden);
    apply_if_set(cfg, "train.lr", f.lr);
    apply_if_set(cfg, "train.weight_decay", f.weight_decay);
    apply_if_set(cfg, "dig.lambda", f.lambda);
    apply_if_set(cfg, "dig.tau", f.tau);
    apply_if_set(cfg, "dig.g_min", f.g_min);
    apply_if_set(cfg, "dig.spectral_bound", f.spectral_bound);
    apply_if_set(cfg, "dig.discrepancy", f.discrepancy);
    apply_if_set(cfg, "dig.projections", f.projections);
    apply_if_set(cfg, "dig.epsilon", f.epsilon);
    apply_if_set(cfg, "dig.sigma", f.sigma);
    apply_if_set(cfg, "dig.gate_strategy", f.gate_strategy);
    apply_if_set(cfg, "dig.fixed_gate", f.fixed_gate);
    apply_if_set(cfg, "dig.gate_enabled", f.gate_enabled);
    apply_if_set(cfg, "dig.residual_enabled", f.residual_enabled);
    apply_if_set(cfg, "task.shortcut_frac", active->shortcut_frac);
    apply_if_set(cfg, "task.shortcut_strength", active->shortcut_strength);
    apply_if_set(cfg, "refine.n_refine", f.n_refine);
    apply_if_set(cfg, "refine.euler_steps", f.euler_steps);
    apply_if_set(cfg, "sweep.n_refine", f.sweep_n_refine);
    apply_if_set(cfg, "sweep.discrepancy", f.sweep_discrepancy);
    apply_if_set(cfg, "sweep.gate_strategy", f.sweep_gate_strategy);
    apply_if_set(cfg, "sweep.lambda", f.sweep_lambda);
    apply_if_set(cfg, "sweep.tau", f.sweep_tau);
    apply_if_set(cfg, "sweep.projections", f.sweep_projections);

    return digflow::run_command(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
