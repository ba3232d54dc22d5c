#include "sonetlab/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sonetlab/checkpoint.hpp"
#include "sonetlab/errors.hpp"
#include "sonetlab/stability.hpp"

namespace sonetlab::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config round-trip
// ---------------------------------------------------------------------------

KeyValueConfig ExperimentConfig::to_config() const {
  KeyValueConfig kv;
  kv.set_int("experiment", "seed", static_cast<std::int64_t>(seed));
  kv.set("experiment", "out", out_dir);

  kv.set("data", "source", data_source);
  kv.set("data", "dir", data_dir);
  kv.set_int("data", "train_n", train_n);
  kv.set_int("data", "test_n", test_n);
  kv.set_bool("data", "downsample2x", downsample);

  kv.set("model", "architecture", blocks::to_string(model.architecture));
  kv.set_int("model", "channels", model.channels);
  kv.set_int("model", "layers", model.layers);
  kv.set_int("model", "num_classes", model.num_classes);
  kv.set_bool("model", "dense", model.dense);
  kv.set("model", "activation", to_string(model.ode_activation));
  kv.set_double("model", "gamma", model.gamma);
  kv.set_double("model", "t_end", model.t_end);

  kv.set("solver", "method", solvers::to_string(model.solver.method));
  kv.set_double("solver", "h", model.solver.h);
  kv.set_double("solver", "tol", model.solver.tol);

  kv.set_int("train", "epochs", train.epochs);
  kv.set_int("train", "batch", train.batch_size);
  kv.set_double("train", "lr", train.lr);
  kv.set_double("train", "momentum", train.momentum);
  std::ostringstream ms;
  for (std::size_t i = 0; i < train.lr_milestones.size(); ++i) {
    if (i) ms << ',';
    ms << train.lr_milestones[i];
  }
  kv.set("train", "milestones", ms.str());
  kv.set_double("train", "decay", train.lr_decay);
  kv.set_double("train", "beta", train.trades_beta);
  kv.set_int("train", "trades_steps", train.trades_steps);
  kv.set_double("train", "trades_eta", train.trades_eta);
  kv.set_double("train", "trades_epsilon", train.trades_epsilon);

  std::ostringstream al;
  for (std::size_t i = 0; i < attack_list.size(); ++i) {
    if (i) al << ',';
    al << attacks::to_string(attack_list[i].kind);
  }
  kv.set("attacks", "list", al.str());
  kv.set_int("attacks", "eval_n", attack_eval_n);
  for (const auto& a : attack_list) {
    const std::string section = "attack." + attacks::to_string(a.kind);
    kv.set_double(section, "epsilon", a.epsilon);
    kv.set_double(section, "eta1", a.eta1);
    kv.set_int(section, "iterations", a.iterations);
    if (a.kind == attacks::AttackKind::spsa) {
      kv.set_int(section, "samples", a.spsa_samples);
      kv.set_double(section, "delta", a.spsa_delta);
    }
  }
  return kv;
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.seed = kv.get_u64("experiment", "seed", c.seed);
  c.out_dir = kv.get_or("experiment", "out", c.out_dir);

  c.data_source = kv.get_or("data", "source", c.data_source);
  c.data_dir = kv.get_or("data", "dir", "");
  c.train_n = kv.get_int("data", "train_n", c.train_n);
  c.test_n = kv.get_int("data", "test_n", c.test_n);
  c.downsample = kv.get_bool("data", "downsample2x", c.downsample);

  c.model.architecture =
      blocks::architecture_from_string(kv.get_or("model", "architecture", "soblock"));
  c.model.channels = kv.get_int("model", "channels", c.model.channels);
  c.model.layers = kv.get_int("model", "layers", c.model.layers);
  c.model.num_classes = kv.get_int("model", "num_classes", c.model.num_classes);
  c.model.dense = kv.get_bool("model", "dense", c.model.dense);
  c.model.ode_activation = activation_from_string(kv.get_or("model", "activation", "elu"));
  c.model.gamma = kv.get_double("model", "gamma", c.model.gamma);
  c.model.t_end = kv.get_double("model", "t_end", c.model.t_end);

  c.model.solver.method = solvers::method_from_string(kv.get_or("solver", "method", "dopri5"));
  c.model.solver.h = kv.get_double("solver", "h", c.model.solver.h);
  c.model.solver.tol = kv.get_double("solver", "tol", c.model.solver.tol);

  c.train.epochs = kv.get_int("train", "epochs", c.train.epochs);
  c.train.batch_size = kv.get_int("train", "batch", c.train.batch_size);
  c.train.lr = kv.get_double("train", "lr", c.train.lr);
  c.train.momentum = kv.get_double("train", "momentum", c.train.momentum);
  c.train.lr_milestones.clear();
  for (const std::string& m : kv.get_list("train", "milestones")) {
    c.train.lr_milestones.push_back(std::stoi(m));
  }
  c.train.lr_decay = kv.get_double("train", "decay", c.train.lr_decay);
  c.train.trades_beta = kv.get_double("train", "beta", c.train.trades_beta);
  c.train.trades_steps = kv.get_int("train", "trades_steps", c.train.trades_steps);
  c.train.trades_eta = kv.get_double("train", "trades_eta", c.train.trades_eta);
  c.train.trades_epsilon = kv.get_double("train", "trades_epsilon", c.train.trades_epsilon);
  c.train.seed = c.seed;

  for (const std::string& name : kv.get_list("attacks", "list")) {
    attacks::AttackConfig a = attacks::AttackConfig::defaults(attacks::attack_kind_from_string(name));
    const std::string section = "attack." + name;
    a.epsilon = kv.get_double(section, "epsilon", a.epsilon);
    a.eta1 = kv.get_double(section, "eta1", a.eta1);
    a.iterations = kv.get_int(section, "iterations", a.iterations);
    a.spsa_samples = kv.get_int(section, "samples", a.spsa_samples);
    a.spsa_delta = kv.get_double(section, "delta", a.spsa_delta);
    c.attack_list.push_back(a);
  }
  c.attack_eval_n = kv.get_int("attacks", "eval_n", c.attack_eval_n);
  return c;
}

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

DatasetPair resolve_dataset(const ExperimentConfig& cfg) {
  DatasetPair out;
  if (cfg.data_source == "mnist") {
    const fs::path dir = cfg.data_dir;
    out.train = data::load_idx((dir / "train-images-idx3-ubyte").string(),
                               (dir / "train-labels-idx1-ubyte").string());
    out.test = data::load_idx((dir / "t10k-images-idx3-ubyte").string(),
                              (dir / "t10k-labels-idx1-ubyte").string());
  } else if (cfg.data_source == "cifar") {
    const fs::path dir = cfg.data_dir;
    out.train = data::load_cifar_binary((dir / "data_batch_1.bin").string());
    out.test = data::load_cifar_binary((dir / "test_batch.bin").string());
  } else {
    const data::SyntheticKind kind = data::synthetic_kind_from_string(cfg.data_source);
    out.train = data::make_synthetic(kind, cfg.train_n, cfg.seed * 2 + 1);
    out.test = data::make_synthetic(kind, cfg.test_n, cfg.seed * 2 + 2);
  }
  if (cfg.train_n > 0) out.train = out.train.subset(cfg.train_n);
  if (cfg.test_n > 0) out.test = out.test.subset(cfg.test_n);
  if (cfg.downsample) {
    out.train = data::downsample2x(out.train);
    out.test = data::downsample2x(out.test);
  }
  out.train.split = "train";
  out.test.split = "test";
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

class Manifest {
 public:
  Manifest(fs::path path) : path_(std::move(path)) {}
  void stage(const std::string& name, const std::string& status) {
    stages_[name] = status;
    json j;
    j["stages"] = stages_;
    std::ofstream out(path_);
    out << j.dump(2) << '\n';
  }

 private:
  fs::path path_;
  std::map<std::string, std::string> stages_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write " + path.string());
  out << text;
}

std::string trace_rows_json(const std::vector<TraceReport>& traces) {
  std::ostringstream os;
  for (const TraceReport& t : traces) {
    json j = json::parse(solvers::trace_json_line(t.trace, t.tol));
    j["solver"] = t.solver;
    j["pgd_iterations"] = t.pgd_iterations;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace

ExperimentArtifacts run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const fs::path out = cfg.out_dir;
  Manifest manifest(out / "manifest.json");
  cfg.to_config().save((out / "config.cfg").string());

  manifest.stage("dataset", "running");
  DatasetPair ds;
  try {
    ds = resolve_dataset(cfg);
  } catch (const std::exception& e) {
    manifest.stage("dataset", std::string("failed: ") + e.what());
    throw;
  }
  manifest.stage("dataset", "done");

  ExperimentArtifacts artifacts;
  blocks::NetworkSpec spec = cfg.model;
  spec.input_shape = ds.train.example_shape();
  spec.num_classes = ds.train.num_classes;
  Rng init_rng(cfg.seed);
  artifacts.model = blocks::assemble_network(spec, init_rng);

  manifest.stage("train", "running");
  try {
    training::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    if (tc.epochs > 0) {
      artifacts.train_result = tc.trades_beta > 0.0
                                   ? training::trades_train(artifacts.model, ds.train, tc)
                                   : training::natural_train(artifacts.model, ds.train, tc);
    }
    write_text(out / "train_log.csv", training::train_log_csv(artifacts.train_result));
    blocks::save_checkpoint(artifacts.model, (out / "checkpoint.bin").string());
    manifest.stage("train", artifacts.train_result.diverged
                                ? "diverged: " + artifacts.train_result.message
                                : "done");
  } catch (const std::exception& e) {
    manifest.stage("train", std::string("failed: ") + e.what());
    throw;
  }

  manifest.stage("attacks", "running");
  try {
    data::Dataset eval_set = ds.test;
    if (cfg.attack_eval_n > 0) eval_set = eval_set.subset(cfg.attack_eval_n);
    artifacts.report = attacks::robust_eval(artifacts.model, eval_set, cfg.attack_list, cfg.seed);
    write_text(out / "report.json", artifacts.report.to_json() + "\n");
    write_text(out / "report.csv",
               attacks::RobustReport::csv_header() + "\n" + artifacts.report.to_csv_rows());
    manifest.stage("attacks", "done");
  } catch (const std::exception& e) {
    manifest.stage("attacks", std::string("failed: ") + e.what());
    throw;
  }

  // Step traces at the adversarial points, grouped by PGD iteration count.
  manifest.stage("traces", "running");
  try {
    std::vector<TraceReport> traces;
    if (cfg.model.solver.method == solvers::Method::dopri5 && ds.test.size() > 0) {
      const Tensor x0 = ds.test.example(0);
      const int label = ds.test.labels[0];
      attacks::AttackConfig probe = attacks::AttackConfig::defaults(attacks::AttackKind::pgd_linf);
      for (const auto& a : cfg.attack_list) {
        if (a.kind == attacks::AttackKind::pgd_linf) {
          probe = a;
          break;
        }
      }
      std::set<int> iteration_counts = {1};
      if (!cfg.attack_list.empty()) iteration_counts.insert(probe.iterations);
      for (int iters : iteration_counts) {
        attacks::AttackConfig pc = probe;
        pc.iterations = iters;
        const Tensor adv = attacks::pgd_linf(artifacts.model, x0, label, pc);
        std::vector<solvers::StepTrace> block_traces;
        blocks::ForwardOptions fo;
        fo.traces = &block_traces;
        (void)artifacts.model.logits_value(adv, fo);
        if (!block_traces.empty()) {
          traces.push_back({"dopri5", cfg.model.solver.tol, iters, block_traces.front()});
        }
      }
    }
    write_text(out / "steps.jsonl", trace_rows_json(traces));
    manifest.stage("traces", "done");
  } catch (const std::exception& e) {
    manifest.stage("traces", std::string("failed: ") + e.what());
    throw;
  }

  return artifacts;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

TableLayout table_layout_from_string(const std::string& name) {
  if (name == "table1") return TableLayout::table1;
  if (name == "table2") return TableLayout::table2;
  if (name == "table3") return TableLayout::table3;
  if (name == "table4") return TableLayout::table4;
  throw ContractViolation("unknown table layout: " + name);
}

std::string emit_table(std::span<const attacks::RobustReport> reports, TableLayout layout) {
  if (layout == TableLayout::table4) {
    throw ContractViolation("table4 is emitted from step traces, not robust reports");
  }
  const bool by_solver = layout == TableLayout::table2;

  // Column set: union of attack labels, sorted.
  std::set<std::string> attack_labels;
  for (const auto& r : reports) {
    for (const auto& a : r.attacks) attack_labels.insert(a.cfg.label());
  }

  struct Row {
    std::string key1, key2;
    double a_nat;
    std::map<std::string, double> rob;
  };
  std::vector<Row> rows;
  for (const auto& r : reports) {
    Row row;
    row.key1 = r.model_name;
    row.key2 = by_solver ? r.solver_label : std::to_string(r.channels);
    row.a_nat = r.natural_accuracy;
    for (const auto& a : r.attacks) row.rob[a.cfg.label()] = a.robust_accuracy();
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.key1, a.key2) < std::tie(b.key1, b.key2);
  });

  std::ostringstream os;
  os.precision(6);
  os << "model," << (by_solver ? "solver" : "channels") << ",A_nat";
  for (const auto& label : attack_labels) os << ",A_rob(" << label << ')';
  os << '\n';
  for (const Row& row : rows) {
    os << row.key1 << ',' << row.key2 << ',' << row.a_nat;
    for (const auto& label : attack_labels) {
      os << ',';
      auto it = row.rob.find(label);
      if (it != row.rob.end()) os << it->second;  // missing cells stay blank
    }
    os << '\n';
  }
  return os.str();
}

std::string emit_table(std::span<const TraceReport> traces) {
  std::vector<const TraceReport*> sorted;
  for (const auto& t : traces) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](const TraceReport* a, const TraceReport* b) {
    return std::tie(a->solver, a->tol, a->pgd_iterations) <
           std::tie(b->solver, b->tol, b->pgd_iterations);
  });
  std::ostringstream os;
  os << "solver,pgd_iterations,accepted_times\n";
  for (const TraceReport* t : sorted) {
    os << t->solver << "(tol=" << t->tol << ")," << t->pgd_iterations << ",\"[";
    for (std::size_t i = 0; i < t->trace.accepted_times.size(); ++i) {
      if (i) os << ", ";
      os << t->trace.accepted_times[i];
    }
    os << "]\"\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Solver ablation and stability report
// ---------------------------------------------------------------------------

std::vector<attacks::RobustReport> run_solver_ablation(const ExperimentConfig& base,
                                                       std::span<const double> dopri_tols) {
  struct RowCfg {
    solvers::Method method;
    double h_or_tol;
  };
  std::vector<RowCfg> solver_rows = {{solvers::Method::euler, 1.0}, {solvers::Method::rk4, 1.0}};
  for (double tol : dopri_tols) solver_rows.push_back({solvers::Method::dopri5, tol});

  std::vector<attacks::RobustReport> reports;
  std::vector<TraceReport> traces;
  for (const RowCfg& row : solver_rows) {
    ExperimentConfig cfg = base;
    cfg.model.solver.method = row.method;
    if (row.method == solvers::Method::dopri5) {
      cfg.model.solver.tol = row.h_or_tol;
    } else {
      cfg.model.solver.h = row.h_or_tol;
    }
    std::string label = solvers::to_string(row.method);
    if (row.method == solvers::Method::dopri5) {
      std::ostringstream t;
      t << "tol" << row.h_or_tol;
      label += t.str();
    }
    cfg.out_dir = (fs::path(base.out_dir) / label).string();
    ExperimentArtifacts artifacts = run_experiment(cfg);
    if (row.method == solvers::Method::dopri5) {
      std::ostringstream lbl;
      lbl << "dopri5(tol=" << row.h_or_tol << ")";
      artifacts.report.solver_label = lbl.str();
    }
    reports.push_back(artifacts.report);
  }

  fs::create_directories(base.out_dir);
  write_text(fs::path(base.out_dir) / "ablation.csv",
             emit_table(std::span<const attacks::RobustReport>(reports), TableLayout::table2));
  return reports;
}

void run_stability_check(const ExperimentConfig& cfg, int blocks_count) {
  fs::create_directories(cfg.out_dir);
  Rng rng(cfg.seed);
  json report = json::array();
  for (int b = 0; b < blocks_count; ++b) {
    const int m = 2 + rng.uniform_int(7);
    const int n = 2 + rng.uniform_int(7);
    blocks::SkewOdeBlockParams p;
    p.kernel = Tensor({m, n});
    for (std::int64_t i = 0; i < p.kernel.size(); ++i) p.kernel[i] = rng.normal();
    p.gamma = 0.1;
    p.activation = ActivationKind::tanh;

    Tensor x({n}), z({m});
    for (int i = 0; i < n; ++i) x[i] = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < m; ++i) z[i] = rng.uniform(-1.0, 1.0);
    const std::pair<Tensor, Tensor> probe{x, z};
    const auto cert = stability::certify_block(p, std::span(&probe, 1));

    json entry = json::parse(cert.to_json());
    entry["rows"] = m;
    entry["cols"] = n;
    entry["orthogonality_deviation_gamma0_tol1e9"] =
        stability::transition_orthogonality_check(p.kernel, 1.0, 1e-9);
    report.push_back(entry);
  }
  write_text(fs::path(cfg.out_dir) / "stability.json", report.dump(2) + "\n");
}

}  // namespace sonetlab::experiment
