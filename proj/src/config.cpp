#include "digflow/config.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "digflow/rng.hpp"
#include "digflow/verify.hpp"

namespace digflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': malformed number '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': malformed integer '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "': malformed integer '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + value +
                              "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& s : split_list(value)) out.push_back(parse_double(key, s));
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& s : split_list(value))
    out.push_back(static_cast<int>(parse_long(key, s)));
  return out;
}

DiscrepancyKind::Tag tag_from_string(const std::string& s) {
  if (s == "sliced_w2") return DiscrepancyKind::Tag::SlicedW2;
  if (s == "sinkhorn") return DiscrepancyKind::Tag::Sinkhorn;
  if (s == "mmd_rbf") return DiscrepancyKind::Tag::MmdRbf;
  if (s == "cosine_mean") return DiscrepancyKind::Tag::CosineMean;
  throw std::invalid_argument("unknown discrepancy kind: " + s);
}

std::string fmt(double v) { return nlohmann::json(v).dump(); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(long v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

std::string fmt_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

void write_preamble_csv(std::ostream& os, const RunConfig& cfg) {
  os << "# version: " << version_string() << "\n";
  std::stringstream ss(resolved_config_text(cfg));
  std::string line;
  while (std::getline(ss, line)) os << "# " << line << "\n";
}

void write_preamble_jsonl(std::ostream& os, const RunConfig& cfg) {
  nlohmann::json j{{"version", version_string()}, {"config", resolved_config_text(cfg)}};
  os << j.dump() << "\n";
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return r;
}

std::uint64_t seed_for_run(const RunConfig& cfg, int seed_index) {
  return derive_seed(cfg.seed, Stream::kInit, 9000 + static_cast<std::uint64_t>(seed_index));
}

struct SeedResult {
  TrainState state;
  MetricLog log;
  TaskFamily family;
};

SeedResult train_for_seed(const RunConfig& cfg, const TrainConfig& train_cfg, int seed_index) {
  const std::uint64_t run_seed = seed_for_run(cfg, seed_index);
  TaskSpec task = cfg.task;
  task.seed = run_seed;
  TrainConfig tc = train_cfg;
  tc.seed = run_seed;
  TaskFamily family(task);
  TrainState state = init_state(task, tc);
  MetricLog log = train(state, family, tc);
  return SeedResult{std::move(state), std::move(log), std::move(family)};
}

double eval_mse(const SeedResult& run, const RunConfig& cfg, const DigConfig& dig,
                int n_refine, PerturbMode perturb) {
  RefineConfig rc = cfg.refine;
  rc.n_refine = n_refine;
  const EvalReport rep = eval_policy(run.state, run.family, dig, rc, perturb, cfg.episodes,
                                     derive_seed(run.state.seed, Stream::kEval, 77));
  return rep.mean_squared_error;
}

void run_parallel(int n_points, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n_points <= 1) {
    for (int i = 0; i < n_points; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::exception_ptr error;
  std::mutex error_mu;
  const int n_workers = std::min(jobs, n_points);
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_points) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const SeedResult run = train_for_seed(cfg, cfg.train, 0);
  const std::filesystem::path out(cfg.out_dir);

  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  write_preamble_jsonl(metrics, cfg);
  run.log.write_jsonl(metrics);

  checkpoint_save(run.state, (out / "checkpoint.bin").string());

  std::ofstream csv(out / "summary.csv", std::ios::binary);
  write_preamble_csv(csv, cfg);
  csv << "command,steps,final_loss,final_mean_D,final_mean_g\n";
  const StepMetrics& last = run.log.records.back();
  csv << "train," << cfg.train.steps << "," << fmt(last.raw_loss) << ","
      << fmt(last.mean_discrepancy) << "," << fmt(last.mean_gate) << "\n";

  log << "trained " << cfg.train.steps << " steps, final loss " << last.raw_loss << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  std::vector<double> clean(cfg.num_seeds), perturbed(cfg.num_seeds);
  run_parallel(cfg.num_seeds, cfg.jobs, [&](int s) {
    const SeedResult run = train_for_seed(cfg, cfg.train, s);
    clean[s] = eval_mse(run, cfg, cfg.train.dig, cfg.refine.n_refine, PerturbMode::None);
    perturbed[s] = eval_mse(run, cfg, cfg.train.dig, cfg.refine.n_refine, cfg.perturb);
  });
  const MeanStd c = mean_std(clean), p = mean_std(perturbed);

  std::ofstream csv(std::filesystem::path(cfg.out_dir) / "summary.csv", std::ios::binary);
  write_preamble_csv(csv, cfg);
  csv << "command,num_seeds,episodes,clean_mse_mean,clean_mse_std,perturbed_mse_mean,"
         "perturbed_mse_std\n";
  csv << "eval," << cfg.num_seeds << "," << cfg.episodes << "," << fmt(c.mean) << ","
      << fmt(c.stddev) << "," << fmt(p.mean) << "," << fmt(p.stddev) << "\n";

  log << "eval: clean mse " << c.mean << " +- " << c.stddev << ", perturbed mse " << p.mean
      << " +- " << p.stddev << "\n";
  return 0;
}

int cmd_refine_sweep(const RunConfig& cfg, std::ostream& log) {
  if (cfg.sweep_n_refine.empty())
    throw std::invalid_argument("refine-sweep: sweep.n_refine grid is empty");
  const int n_points = static_cast<int>(cfg.sweep_n_refine.size());
  std::vector<MeanStd> results(n_points);

  run_parallel(n_points, cfg.jobs, [&](int i) {
    const int n_refine = cfg.sweep_n_refine[i];
    const std::filesystem::path sub =
        std::filesystem::path(cfg.out_dir) / ("n_refine_" + std::to_string(n_refine));
    std::filesystem::create_directories(sub);
    std::vector<double> errs(cfg.num_seeds);
    for (int s = 0; s < cfg.num_seeds; ++s) {
      const SeedResult run = train_for_seed(cfg, cfg.train, s);
      errs[s] = eval_mse(run, cfg, cfg.train.dig, n_refine, cfg.perturb);
    }
    results[i] = mean_std(errs);
    std::ofstream point_csv(sub / "summary.csv", std::ios::binary);
    write_preamble_csv(point_csv, cfg);
    point_csv << "n_refine,mse_mean,mse_std\n";
    point_csv << n_refine << "," << fmt(results[i].mean) << "," << fmt(results[i].stddev)
              << "\n";
  });

  const std::filesystem::path out(cfg.out_dir);
  std::ofstream csv(out / "summary.csv", std::ios::binary);
  write_preamble_csv(csv, cfg);
  csv << "command,n_refine,num_seeds,mse_mean,mse_std\n";
  for (int i = 0; i < n_points; ++i)
    csv << "refine-sweep," << cfg.sweep_n_refine[i] << "," << cfg.num_seeds << ","
        << fmt(results[i].mean) << "," << fmt(results[i].stddev) << "\n";

  std::ofstream plot(out / "plot_refine.csv", std::ios::binary);
  write_preamble_csv(plot, cfg);
  plot << "x,y,err\n";
  for (int i = 0; i < n_points; ++i)
    plot << cfg.sweep_n_refine[i] << "," << fmt(results[i].mean) << ","
         << fmt(results[i].stddev) << "\n";

  for (int i = 0; i < n_points; ++i)
    log << "n_refine=" << cfg.sweep_n_refine[i] << " mse " << results[i].mean << " +- "
        << results[i].stddev << "\n";
  return 0;
}

struct AblatePoint {
  std::string kind;
  std::string strategy;
  double lambda;
  double tau;
  int projections;
};

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  // Empty axes fall back to the base configuration value.
  const std::vector<std::string> kinds =
      cfg.sweep_discrepancy.empty()
          ? std::vector<std::string>{discrepancy_name(cfg.train.dig.kind.tag)}
          : cfg.sweep_discrepancy;
  const std::vector<std::string> strategies =
      cfg.sweep_gate_strategy.empty()
          ? std::vector<std::string>{gate_strategy_name(cfg.train.dig.gate_strategy)}
          : cfg.sweep_gate_strategy;
  const std::vector<double> lambdas =
      cfg.sweep_lambda.empty() ? std::vector<double>{cfg.train.dig.lambda} : cfg.sweep_lambda;
  const std::vector<double> taus =
      cfg.sweep_tau.empty() ? std::vector<double>{cfg.train.dig.gate_cfg.tau} : cfg.sweep_tau;
  const std::vector<int> ms = cfg.sweep_projections.empty()
                                  ? std::vector<int>{cfg.train.dig.kind.num_projections}
                                  : cfg.sweep_projections;

  std::vector<AblatePoint> grid;
  for (const auto& k : kinds)
    for (const auto& st : strategies)
      for (double lam : lambdas)
        for (double tau : taus)
          for (int m : ms) grid.push_back(AblatePoint{k, st, lam, tau, m});
  if (grid.empty()) throw std::invalid_argument("ablate: empty sweep grid");

  const int n_points = static_cast<int>(grid.size());
  std::vector<MeanStd> clean(n_points), perturbed(n_points);

  run_parallel(n_points, cfg.jobs, [&](int i) {
    const AblatePoint& pt = grid[i];
    TrainConfig tc = cfg.train;
    tc.dig.kind.tag = tag_from_string(pt.kind);
    tc.dig.gate_strategy = gate_strategy_from_string(pt.strategy);
    tc.dig.lambda = pt.lambda;
    tc.dig.gate_cfg.tau = pt.tau;
    tc.dig.kind.num_projections = pt.projections;

    std::vector<double> ce(cfg.num_seeds), pe(cfg.num_seeds);
    for (int s = 0; s < cfg.num_seeds; ++s) {
      const SeedResult run = train_for_seed(cfg, tc, s);
      ce[s] = eval_mse(run, cfg, tc.dig, cfg.refine.n_refine, PerturbMode::None);
      pe[s] = eval_mse(run, cfg, tc.dig, cfg.refine.n_refine, cfg.perturb);
    }
    clean[i] = mean_std(ce);
    perturbed[i] = mean_std(pe);

    const std::filesystem::path sub =
        std::filesystem::path(cfg.out_dir) / ("grid_" + std::to_string(i));
    std::filesystem::create_directories(sub);
    std::ofstream point_csv(sub / "summary.csv", std::ios::binary);
    write_preamble_csv(point_csv, cfg);
    point_csv << "discrepancy,gate_strategy,lambda,tau,projections,clean_mse_mean,"
                 "clean_mse_std,perturbed_mse_mean,perturbed_mse_std\n";
    point_csv << pt.kind << "," << pt.strategy << "," << fmt(pt.lambda) << "," << fmt(pt.tau)
              << "," << pt.projections << "," << fmt(clean[i].mean) << ","
              << fmt(clean[i].stddev) << "," << fmt(perturbed[i].mean) << ","
              << fmt(perturbed[i].stddev) << "\n";
  });

  const std::filesystem::path out(cfg.out_dir);
  std::ofstream csv(out / "summary.csv", std::ios::binary);
  write_preamble_csv(csv, cfg);
  csv << "discrepancy,gate_strategy,lambda,tau,projections,clean_mse_mean,clean_mse_std,"
         "perturbed_mse_mean,perturbed_mse_std\n";
  for (int i = 0; i < n_points; ++i)
    csv << grid[i].kind << "," << grid[i].strategy << "," << fmt(grid[i].lambda) << ","
        << fmt(grid[i].tau) << "," << grid[i].projections << "," << fmt(clean[i].mean) << ","
        << fmt(clean[i].stddev) << "," << fmt(perturbed[i].mean) << ","
        << fmt(perturbed[i].stddev) << "\n";

  std::ofstream plot(out / "plot_ablate.csv", std::ios::binary);
  write_preamble_csv(plot, cfg);
  plot << "x,y,err\n";
  for (int i = 0; i < n_points; ++i)
    plot << i << "," << fmt(perturbed[i].mean) << "," << fmt(perturbed[i].stddev) << "\n";

  for (int i = 0; i < n_points; ++i)
    log << grid[i].kind << "/" << grid[i].strategy << " perturbed mse " << perturbed[i].mean
        << " +- " << perturbed[i].stddev << "\n";
  return 0;
}

int cmd_verify(const RunConfig& cfg, std::ostream& log) {
  const std::vector<CheckReport> reports = run_all_checks(cfg.seed);

  std::ofstream js(std::filesystem::path(cfg.out_dir) / "checks.jsonl", std::ios::binary);
  write_preamble_jsonl(js, cfg);
  bool all_pass = true;
  log << std::left << std::setw(26) << "check" << std::setw(9) << "trials" << std::setw(12)
      << "violations" << std::setw(16) << "worst_margin" << "result\n";
  for (const auto& rep : reports) {
    js << rep.to_json() << "\n";
    log << std::left << std::setw(26) << rep.name << std::setw(9) << rep.trials
        << std::setw(12) << rep.violations << std::setw(16) << rep.worst_margin
        << (rep.pass() ? "pass" : "FAIL") << "\n";
    all_pass = all_pass && rep.pass();
  }
  return all_pass ? 0 : 1;
}

}  // namespace

const char* version_string() { return "digflow 1.0.0"; }

void RunConfig::validate() const {
  task.validate();
  train.validate();
  refine.validate();
  if (command != "train" && command != "eval" && command != "refine-sweep" &&
      command != "ablate" && command != "verify")
    throw std::invalid_argument("unknown command: " + command);
  if (num_seeds < 1) throw std::invalid_argument("num_seeds must be >= 1");
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (out_dir.empty()) throw std::invalid_argument("output directory must be set");
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "command") cfg.command = value;
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "jobs") cfg.jobs = static_cast<int>(parse_long(key, value));
  else if (key == "num_seeds") cfg.num_seeds = static_cast<int>(parse_long(key, value));
  else if (key == "episodes") cfg.episodes = static_cast<int>(parse_long(key, value));
  else if (key == "perturb") cfg.perturb = perturb_mode_from_string(value);
  else if (key == "task.latent_dim") cfg.task.latent_dim = static_cast<int>(parse_long(key, value));
  else if (key == "task.tokens") cfg.task.tokens = static_cast<int>(parse_long(key, value));
  else if (key == "task.feature_dim") cfg.task.feature_dim = static_cast<int>(parse_long(key, value));
  else if (key == "task.chunk_len") cfg.task.chunk_len = static_cast<int>(parse_long(key, value));
  else if (key == "task.action_dim") cfg.task.action_dim = static_cast<int>(parse_long(key, value));
  else if (key == "task.obs_noise") cfg.task.obs_noise = parse_double(key, value);
  else if (key == "task.obs_shift") cfg.task.obs_shift = parse_double(key, value);
  else if (key == "task.shortcut_frac") cfg.task.shortcut_frac = parse_double(key, value);
  else if (key == "task.shortcut_strength") cfg.task.shortcut_strength = parse_double(key, value);
  else if (key == "train.steps") cfg.train.steps = static_cast<int>(parse_long(key, value));
  else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(parse_long(key, value));
  else if (key == "train.hidden") cfg.train.hidden = static_cast<int>(parse_long(key, value));
  else if (key == "train.lr") cfg.train.optim.lr = parse_double(key, value);
  else if (key == "train.weight_decay") cfg.train.optim.weight_decay = parse_double(key, value);
  else if (key == "dig.lambda") cfg.train.dig.lambda = parse_double(key, value);
  else if (key == "dig.tau") cfg.train.dig.gate_cfg.tau = parse_double(key, value);
  else if (key == "dig.g_min") cfg.train.dig.gate_cfg.g_min = parse_double(key, value);
  else if (key == "dig.spectral_bound") cfg.train.dig.spectral_bound = parse_double(key, value);
  else if (key == "dig.discrepancy") cfg.train.dig.kind.tag = tag_from_string(value);
  else if (key == "dig.projections") cfg.train.dig.kind.num_projections = static_cast<int>(parse_long(key, value));
  else if (key == "dig.epsilon") cfg.train.dig.kind.epsilon = parse_double(key, value);
  else if (key == "dig.sigma") cfg.train.dig.kind.sigma = parse_double(key, value);
  else if (key == "dig.gate_strategy") cfg.train.dig.gate_strategy = gate_strategy_from_string(value);
  else if (key == "dig.fixed_gate") cfg.train.dig.fixed_gate = parse_double(key, value);
  else if (key == "dig.gate_enabled") cfg.train.dig.gate_enabled = parse_bool(key, value);
  else if (key == "dig.residual_enabled") cfg.train.dig.residual_enabled = parse_bool(key, value);
  else if (key == "refine.n_refine") cfg.refine.n_refine = static_cast<int>(parse_long(key, value));
  else if (key == "refine.euler_steps") cfg.refine.euler_steps = static_cast<int>(parse_long(key, value));
  else if (key == "sweep.lambda") cfg.sweep_lambda = parse_double_list(key, value);
  else if (key == "sweep.tau") cfg.sweep_tau = parse_double_list(key, value);
  else if (key == "sweep.projections") cfg.sweep_projections = parse_int_list(key, value);
  else if (key == "sweep.n_refine") cfg.sweep_n_refine = parse_int_list(key, value);
  else if (key == "sweep.discrepancy") cfg.sweep_discrepancy = split_list(value);
  else if (key == "sweep.gate_strategy") cfg.sweep_gate_strategy = split_list(value);
  else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + line + "'");
    apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["command"] = cfg.command;
  kv["seed"] = fmt(cfg.seed);
  kv["out"] = cfg.out_dir;
  kv["jobs"] = fmt(cfg.jobs);
  kv["num_seeds"] = fmt(cfg.num_seeds);
  kv["episodes"] = fmt(cfg.episodes);
  kv["perturb"] = perturb_mode_name(cfg.perturb);
  kv["task.latent_dim"] = fmt(cfg.task.latent_dim);
  kv["task.tokens"] = fmt(cfg.task.tokens);
  kv["task.feature_dim"] = fmt(cfg.task.feature_dim);
  kv["task.chunk_len"] = fmt(cfg.task.chunk_len);
  kv["task.action_dim"] = fmt(cfg.task.action_dim);
  kv["task.obs_noise"] = fmt(cfg.task.obs_noise);
  kv["task.obs_shift"] = fmt(cfg.task.obs_shift);
  kv["task.shortcut_frac"] = fmt(cfg.task.shortcut_frac);
  kv["task.shortcut_strength"] = fmt(cfg.task.shortcut_strength);
  kv["train.steps"] = fmt(cfg.train.steps);
  kv["train.batch_size"] = fmt(cfg.train.batch_size);
  kv["train.hidden"] = fmt(cfg.train.hidden);
  kv["train.lr"] = fmt(cfg.train.optim.lr);
  kv["train.weight_decay"] = fmt(cfg.train.optim.weight_decay);
  kv["dig.lambda"] = fmt(cfg.train.dig.lambda);
  kv["dig.tau"] = fmt(cfg.train.dig.gate_cfg.tau);
  kv["dig.g_min"] = fmt(cfg.train.dig.gate_cfg.g_min);
  kv["dig.spectral_bound"] = fmt(cfg.train.dig.spectral_bound);
  kv["dig.discrepancy"] = discrepancy_name(cfg.train.dig.kind.tag);
  kv["dig.projections"] = fmt(cfg.train.dig.kind.num_projections);
  kv["dig.epsilon"] = fmt(cfg.train.dig.kind.epsilon);
  kv["dig.sigma"] = fmt(cfg.train.dig.kind.sigma);
  kv["dig.gate_strategy"] = gate_strategy_name(cfg.train.dig.gate_strategy);
  kv["dig.fixed_gate"] = fmt(cfg.train.dig.fixed_gate);
  kv["dig.gate_enabled"] = fmt(cfg.train.dig.gate_enabled);
  kv["dig.residual_enabled"] = fmt(cfg.train.dig.residual_enabled);
  kv["refine.n_refine"] = fmt(cfg.refine.n_refine);
  kv["refine.euler_steps"] = fmt(cfg.refine.euler_steps);
  kv["sweep.lambda"] = fmt_list(cfg.sweep_lambda);
  kv["sweep.tau"] = fmt_list(cfg.sweep_tau);
  kv["sweep.projections"] = fmt_list(cfg.sweep_projections);
  kv["sweep.n_refine"] = fmt_list(cfg.sweep_n_refine);
  kv["sweep.discrepancy"] = fmt_list(cfg.sweep_discrepancy);
  kv["sweep.gate_strategy"] = fmt_list(cfg.sweep_gate_strategy);

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

int run_command(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  log << version_string() << "\n" << resolved_config_text(cfg);
  if (cfg.command == "train") return cmd_train(cfg, log);
  if (cfg.command == "eval") return cmd_eval(cfg, log);
  if (cfg.command == "refine-sweep") return cmd_refine_sweep(cfg, log);
  if (cfg.command == "ablate") return cmd_ablate(cfg, log);
  return cmd_verify(cfg, log);
}

}  // namespace digflow
