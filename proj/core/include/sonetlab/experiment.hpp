#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sonetlab/attacks.hpp"
#include "sonetlab/blocks.hpp"
#include "sonetlab/config.hpp"
#include "sonetlab/data.hpp"
#include "sonetlab/solvers.hpp"
#include "sonetlab/training.hpp"

namespace sonetlab::experiment {

// A fully reproducible experiment: dataset selector, model spec, training
// and attack configuration, all derived from one seed.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/out";

  std::string data_source = "glyphs";  // mnist | cifar | blobs | rings | glyphs
  std::string data_dir;                // mnist/cifar location
  int train_n = 5000;
  int test_n = 1000;
  bool downsample = false;  // 2x mean-pool after ingestion

  blocks::NetworkSpec model;
  training::TrainConfig train;
  std::vector<attacks::AttackConfig> attack_list;
  int attack_eval_n = 0;  // 0: attack the whole test split

  KeyValueConfig to_config() const;
  static ExperimentConfig from_config(const KeyValueConfig& kv);
};

struct DatasetPair {
  data::Dataset train;
  data::Dataset test;
};

// Resolves the dataset selector (loading files or generating synthetic data)
// and applies subset limits / downsampling.
DatasetPair resolve_dataset(const ExperimentConfig& cfg);

struct ExperimentArtifacts {
  blocks::Model model;
  training::TrainResult train_result;
  attacks::RobustReport report;
};

// Full pipeline: train (or skip when epochs = 0), attack, and write
// config.cfg, train_log.csv, checkpoint.bin, report.{csv,json}, steps.jsonl
// and manifest.json under cfg.out_dir. Partial artifacts are kept and the
// manifest records how far the run progressed before an error.
ExperimentArtifacts run_experiment(const ExperimentConfig& cfg);

// Step-trace report row in the iteration-count layout.
struct TraceReport {
  std::string solver;
  double tol = 0.0;
  int pgd_iterations = 0;
  solvers::StepTrace trace;
};

enum class TableLayout { table1, table2, table3, table4 };
TableLayout table_layout_from_string(const std::string& name);

// CSV emission with a deterministic column order: model, channels/solver,
// A_nat, then one robust-accuracy column per attack (sorted); missing cells
// stay blank. Rows are sorted.
std::string emit_table(std::span<const attacks::RobustReport> reports, TableLayout layout);
std::string emit_table(std::span<const TraceReport> traces);  // table4

// Trains one model per solver row (euler, rk4, dopri5 at the given
// tolerances) on the same data and seed, evaluates the shared attack list,
// and writes ablation.csv (table2 layout) plus steps.jsonl.
std::vector<attacks::RobustReport> run_solver_ablation(const ExperimentConfig& base,
                                                       std::span<const double> dopri_tols);

// Random-block stability report: spectral certificates, transition
// orthogonality and a Lyapunov probe table, written as JSON to out_dir.
void run_stability_check(const ExperimentConfig& cfg, int blocks_count);

}  // namespace sonetlab::experiment
