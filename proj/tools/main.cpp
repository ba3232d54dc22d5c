// sonetlab: experiment driver for stabilized skew-symmetric neural-ODE
// blocks. Subcommands: train, attack, ablate-solvers, stability-check,
// report. Flags mirror the config-file keys and override them.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sonetlab/checkpoint.hpp"
#include "sonetlab/errors.hpp"
#include "sonetlab/experiment.hpp"

using namespace sonetlab;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string model;
  std::string solver;
  std::string attack_list;
  std::string dataset;
  std::string data_dir;
  double tol = -1.0;
  int epochs = -1;
  int channels = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config file");
  cmd->add_option("--seed", f.seed, "master seed")->each([&](const std::string&) {
    f.seed_set = true;
  });
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--model", f.model, "sonet|soblock|resnet10|odenet");
  cmd->add_option("--solver", f.solver, "euler|rk4|dopri5|euler_sequential");
  cmd->add_option("--tol", f.tol, "dopri5 error tolerance");
  cmd->add_option("--attack", f.attack_list, "comma separated attack kinds");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--channels", f.channels, "base channel width");
  cmd->add_option("--dataset", f.dataset, "mnist|cifar|blobs|rings|glyphs");
  cmd->add_option("--data-dir", f.data_dir, "dataset directory (mnist/cifar)");
}

experiment::ExperimentConfig resolve_config(const CommonFlags& f) {
  experiment::ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    cfg = experiment::ExperimentConfig::from_config(KeyValueConfig::parse_file(f.config_path));
  }
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (!f.model.empty()) cfg.model.architecture = blocks::architecture_from_string(f.model);
  if (!f.solver.empty()) cfg.model.solver.method = solvers::method_from_string(f.solver);
  if (f.tol > 0.0) cfg.model.solver.tol = f.tol;
  if (f.epochs >= 0) cfg.train.epochs = f.epochs;
  if (f.channels > 0) cfg.model.channels = f.channels;
  if (!f.dataset.empty()) cfg.data_source = f.dataset;
  if (!f.data_dir.empty()) cfg.data_dir = f.data_dir;
  if (!f.attack_list.empty()) {
    cfg.attack_list.clear();
    std::istringstream in(f.attack_list);
    std::string name;
    while (std::getline(in, name, ',')) {
      if (!name.empty()) {
        cfg.attack_list.push_back(
            attacks::AttackConfig::defaults(attacks::attack_kind_from_string(name)));
      }
    }
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for stabilized skew-symmetric neural-ODE blocks"};
  app.require_subcommand(1);

  CommonFlags train_flags, attack_flags, ablate_flags, stability_flags, report_flags;

  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write artifacts");
  add_common(train_cmd, train_flags);

  CLI::App* attack_cmd =
      app.add_subcommand("attack", "evaluate attacks against a stored checkpoint");
  add_common(attack_cmd, attack_flags);
  std::string checkpoint_path;
  attack_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint to attack")
      ->required();

  CLI::App* ablate_cmd = app.add_subcommand(
      "ablate-solvers", "train euler/rk4/dopri5 rows on one dataset and emit the solver table");
  add_common(ablate_cmd, ablate_flags);
  std::vector<double> ablate_tols{0.1, 0.01, 0.001};
  ablate_cmd->add_option("--tols", ablate_tols, "dopri5 tolerances for the ablation rows");

  CLI::App* stability_cmd =
      app.add_subcommand("stability-check", "spectral certificates and orthogonality probes");
  add_common(stability_cmd, stability_flags);
  int stability_blocks = 20;
  stability_cmd->add_option("--blocks", stability_blocks, "number of random blocks to certify");

  CLI::App* report_cmd =
      app.add_subcommand("report", "re-emit a table layout from stored report.json artifacts");
  add_common(report_cmd, report_flags);
  std::string layout = "table1";
  std::vector<std::string> report_inputs;
  report_cmd->add_option("--layout", layout, "table1|table2|table3");
  report_cmd->add_option("--inputs", report_inputs, "report.json files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      const auto cfg = resolve_config(train_flags);
      const auto artifacts = experiment::run_experiment(cfg);
      std::cout << "A_nat = " << artifacts.report.natural_accuracy << "\n";
      for (const auto& a : artifacts.report.attacks) {
        std::cout << "A_rob(" << a.cfg.label() << ") = " << a.robust_accuracy() << "\n";
      }
      std::cout << "artifacts in " << cfg.out_dir << "\n";
      return 0;
    }

    if (attack_cmd->parsed()) {
      auto cfg = resolve_config(attack_flags);
      blocks::Model model = blocks::load_checkpoint(checkpoint_path);
      const auto ds = experiment::resolve_dataset(cfg);
      data::Dataset eval_set = ds.test;
      if (cfg.attack_eval_n > 0) eval_set = eval_set.subset(cfg.attack_eval_n);
      const auto report = attacks::robust_eval(model, eval_set, cfg.attack_list, cfg.seed);
      fs::create_directories(cfg.out_dir);
      std::ofstream json_out(fs::path(cfg.out_dir) / "report.json");
      json_out << report.to_json() << "\n";
      std::ofstream csv_out(fs::path(cfg.out_dir) / "report.csv");
      csv_out << attacks::RobustReport::csv_header() << "\n" << report.to_csv_rows();
      std::cout << report.to_json() << "\n";
      return 0;
    }

    if (ablate_cmd->parsed()) {
      const auto cfg = resolve_config(ablate_flags);
      const auto reports = experiment::run_solver_ablation(cfg, ablate_tols);
      std::cout << experiment::emit_table(reports, experiment::TableLayout::table2);
      return 0;
    }

    if (stability_cmd->parsed()) {
      const auto cfg = resolve_config(stability_flags);
      experiment::run_stability_check(cfg, stability_blocks);
      std::cout << "stability report in " << cfg.out_dir << "/stability.json\n";
      return 0;
    }

    if (report_cmd->parsed()) {
      std::vector<attacks::RobustReport> reports;
      for (const std::string& path : report_inputs) {
        std::ifstream in(path);
        if (!in) throw IngestError("cannot open " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        // minimal re-hydration: parse the fields the tables need
        const auto j = nlohmann::json::parse(buf.str());
        attacks::RobustReport r;
        r.model_name = j.at("model").get<std::string>();
        r.channels = j.at("channels").get<int>();
        r.solver_label = j.at("solver").get<std::string>();
        r.natural_accuracy = j.at("natural_accuracy").get<double>();
        r.sample_count = j.at("sample_count").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& a : j.at("attacks")) {
          attacks::PerAttackResult pr;
          pr.cfg = attacks::AttackConfig::defaults(
              attacks::attack_kind_from_string(a.at("attack").get<std::string>()));
          pr.cfg.epsilon = a.at("epsilon").get<double>();
          pr.cfg.iterations = a.at("iterations").get<int>();
          pr.correct = a.at("correct").get<int>();
          pr.total = a.at("total").get<int>();
          r.attacks.push_back(pr);
        }
        reports.push_back(std::move(r));
      }
      std::cout << experiment::emit_table(reports, experiment::table_layout_from_string(layout));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
