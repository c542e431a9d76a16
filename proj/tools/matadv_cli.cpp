#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matadv/experiment.hpp"
#include "matadv/mat.hpp"
#include "matadv/tensor.hpp"

namespace fs = std::filesystem;
using namespace matadv;

namespace {

struct Overrides {
  std::string config_path;
  std::string output_dir;
  std::optional<double> epsilon;
  std::optional<double> rho;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> eval_limit;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "Experiment config (JSON); defaults if omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o.output_dir, "Override output_dir");
  cmd->add_option("--epsilon", o.epsilon, "l-inf budget for both attacks");
  cmd->add_option("--rho", o.rho, "Sphere dropout proportion");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--eval-limit", o.eval_limit, "Evaluate on this many test clouds (0 = all)");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.epsilon) {
    c.attack.epsilon = *o.epsilon;
    c.pgd.epsilon = *o.epsilon;
  }
  if (o.rho) c.attack.rho = *o.rho;
  if (o.seed) c.seed = *o.seed;
  if (o.eval_limit) c.eval_limit = *o.eval_limit;
  c.validate();
  return c;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_cells(const ResultsRecord& record) {
  std::printf("%-8s %-9s %-9s %-7s %8s %9s %9s %9s %6s\n", "attack", "source", "target",
              "defense", "asr", "chamfer", "hausdorff", "knn_mean", "n_eval");
  for (const auto& c : record.cells)
    std::printf("%-8s %-9s %-9s %-7s %8.2f %9.5f %9.5f %9.5f %6zu\n", c.attack.c_str(),
                c.source.c_str(), c.target.c_str(), c.defense.c_str(), c.asr, c.chamfer,
                c.hausdorff, c.knn_mean, c.n_eval);
}

fs::path attack_file(const ExperimentConfig& c, const std::string& method) {
  return c.output_dir / "attacks" / (method + ".jsonl");
}

int cmd_gen_data(const ExperimentConfig& c) {
  const SplitDataset data = prepare_data(c);
  std::printf("dataset: %zu train / %zu test clouds of %zu points in %s\n", data.train.size(),
              data.test.size(), c.dataset.points, (c.output_dir / "data").c_str());
  return 0;
}

int cmd_train_victim(const ExperimentConfig& c, const std::vector<std::string>& archs) {
  const SplitDataset data = prepare_data(c);
  for (const auto& arch : archs) {
    const auto model = prepare_victim(c, arch, data);
    std::printf("%s: test accuracy %.2f%%\n", arch.c_str(), evaluate(*model, data.test));
  }
  return 0;
}

int cmd_train_mat(const ExperimentConfig& c) {
  const SplitDataset data = prepare_data(c);
  const MatModel m = prepare_mat(c, data);
  std::printf("mat autoencoder: test reconstruction chamfer %.6f\n",
              mat::reconstruction_chamfer(m.encoder, m.decoder, data.test, c.per_sphere()));
  return 0;
}

int cmd_attack(const ExperimentConfig& c, const std::string& method) {
  const SplitDataset data = prepare_data(c);
  const auto surrogate = prepare_victim(c, c.victims.surrogate, data);
  const Dataset eval = evaluation_set(c, data);
  fs::create_directories(c.output_dir / "attacks");
  auto summarize = [&](const std::string& name, const std::vector<attack::AttackResult>& rs) {
    std::size_t n = 0, ok = 0;
    for (const auto& r : rs) {
      if (r.skipped) continue;
      ++n;
      ok += r.success ? 1 : 0;
    }
    attack::write_jsonl(rs, attack_file(c, name));
    std::printf("%s: %zu/%zu white-box successes -> %s\n", name.c_str(), ok, n,
                attack_file(c, name).c_str());
  };
  if (method == "mat-adv" || method == "all") {
    const MatModel m = prepare_mat(c, data);
    summarize("mat-adv", run_mat_adv(c, *surrogate, m, eval));
  }
  if (method == "pgd" || method == "all") summarize("pgd", run_pgd(c, *surrogate, eval));
  return 0;
}

int cmd_evaluate(const ExperimentConfig& c) {
  const SplitDataset data = prepare_data(c);
  const auto surrogate = prepare_victim(c, c.victims.surrogate, data);
  const auto target = prepare_victim(c, c.victims.target, data);
  const Dataset eval = evaluation_set(c, data);
  auto load = [&](const std::string& name) {
    const fs::path p = attack_file(c, name);
    return fs::exists(p) ? attack::read_jsonl(p) : std::vector<attack::AttackResult>{};
  };
  const auto mat_results = load("mat-adv");
  const auto pgd_results = load("pgd");
  if (mat_results.empty() && pgd_results.empty())
    throw StageError("evaluate", "no attack files under " + (c.output_dir / "attacks").string());
  const ResultsRecord record = evaluate_attacks(c, *surrogate, *target, eval, mat_results,
                                                pgd_results);
  write_reports(record, c.output_dir);
  print_cells(record);
  return 0;
}

int cmd_run(const ExperimentConfig& c) {
  print_cells(run_experiment(c));
  std::printf("reports in %s\n", c.output_dir.c_str());
  return 0;
}

int cmd_ablate(const ExperimentConfig& c, const std::string& subsets_text) {
  std::vector<attack::ComponentSet> subsets;
  for (const auto& s : split_list(subsets_text)) subsets.push_back(attack::ComponentSet::parse(s));
  const auto rows = ablate_components(c, subsets);
  const fs::path out = c.output_dir / "ablation.csv";
  std::ofstream f(out);
  f << "components,whitebox_asr,transfer_asr,n_eval\n";
  std::printf("%-10s %12s %12s %6s\n", "components", "whitebox", "transfer", "n_eval");
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%zu\n", r.components.to_string().c_str(),
                  r.whitebox_asr, r.transfer_asr, r.n_eval);
    f << line;
    std::printf("%-10s %12.2f %12.2f %6zu\n", r.components.to_string().c_str(), r.whitebox_asr,
                r.transfer_asr, r.n_eval);
  }
  if (!f) throw StageError("report", "cannot write " + out.string());
  return 0;
}

int cmd_sweep_rho(const ExperimentConfig& c, const std::string& values) {
  std::vector<double> rhos;
  for (const auto& v : split_list(values)) rhos.push_back(std::stod(v));
  const auto rows = sweep_rho(c, rhos);
  const fs::path out = c.output_dir / "rho_sweep.csv";
  std::ofstream f(out);
  f << "rho,whitebox_asr,transfer_asr,n_eval\n";
  std::printf("%6s %12s %12s %6s\n", "rho", "whitebox", "transfer", "n_eval");
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof line, "%.4f,%.4f,%.4f,%zu\n", r.rho, r.whitebox_asr,
                  r.transfer_asr, r.n_eval);
    f << line;
    std::printf("%6.2f %12.2f %12.2f %6zu\n", r.rho, r.whitebox_asr, r.transfer_asr, r.n_eval);
  }
  if (!f) throw StageError("report", "cannot write " + out.string());
  return 0;
}

int cmd_report(const ExperimentConfig& c, const std::string& format, const std::string& output) {
  const fs::path source = c.output_dir / "report.json";
  std::ifstream in(source);
  if (!in) throw StageError("report", "missing " + source.string() + "; run evaluate first");
  ResultsRecord record = nlohmann::json::parse(in).get<ResultsRecord>();
  if (format == "table") {
    print_cells(record);
    return 0;
  }
  const fs::path target = output.empty() ? c.output_dir / ("report." + format) : fs::path(output);
  if (format == "csv")
    write_report_csv(record, target);
  else
    write_report_json(record, target);
  std::printf("%s\n", target.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  ad::retain_freed_memory();
  CLI::App app{"Medial-axis adversarial attack lab"};
  app.require_subcommand(1);

  Overrides o;
  std::string init_path;
  auto* init = app.add_subcommand("init-config", "Write the default config as JSON");
  init->add_option("path", init_path, "Destination file")->required();

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* victim = app.add_subcommand("train-victim", "Train victim classifiers");
  std::vector<std::string> archs;
  victim->add_option("--arch", archs, "pointnet and/or edgeconv (default: both)")
      ->check(CLI::IsMember({"pointnet", "edgeconv"}));
  auto* mat_cmd = app.add_subcommand("train-mat", "Train the MAT autoencoder");
  auto* atk = app.add_subcommand("attack", "Generate adversarial examples on the surrogate");
  std::string method = "all";
  atk->add_option("--method", method, "mat-adv, pgd or all")
      ->check(CLI::IsMember({"mat-adv", "pgd", "all"}));
  auto* eval = app.add_subcommand("evaluate", "Score saved attacks against models and defenses");
  auto* ablate = app.add_subcommand("ablate", "Component ablation of MAT-Adv");
  std::string subsets = "C,R,Z,CR,CZ,RZ,CRZ";
  ablate->add_option("--subsets", subsets, "Comma-separated component subsets");
  auto* sweep = app.add_subcommand("sweep-rho", "Transfer success versus dropout proportion");
  std::string rho_values = "0,0.25,0.5,0.75,1";
  sweep->add_option("--values", rho_values, "Comma-separated rho values");
  auto* report = app.add_subcommand("report", "Render report.json as csv, json or a table");
  std::string format = "table", output;
  report->add_option("--format", format)->check(CLI::IsMember({"csv", "json", "table"}));
  report->add_option("--output", output, "Destination file (default: output_dir/report.<fmt>)");
  auto* run = app.add_subcommand("run", "Whole pipeline through the reports");

  for (auto* cmd : {gen, victim, mat_cmd, atk, eval, ablate, sweep, report, run})
    add_common(cmd, o);

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    if (init->parsed()) {
      save_config(ExperimentConfig{}, init_path);
      std::printf("%s\n", init_path.c_str());
      return 0;
    }
    const ExperimentConfig c = resolve(o);
    stage = app.get_subcommands().front()->get_name();
    if (gen->parsed()) return cmd_gen_data(c);
    if (victim->parsed())
      return cmd_train_victim(c, archs.empty() ? std::vector<std::string>{c.victims.surrogate,
                                                                          c.victims.target}
                                               : archs);
    if (mat_cmd->parsed()) return cmd_train_mat(c);
    if (atk->parsed()) return cmd_attack(c, method);
    if (eval->parsed()) return cmd_evaluate(c);
    if (ablate->parsed()) return cmd_ablate(c, subsets);
    if (sweep->parsed()) return cmd_sweep_rho(c, rho_values);
    if (report->parsed()) return cmd_report(c, format, output);
    if (run->parsed()) return cmd_run(c);
  } catch (const StageError& e) {
    std::fprintf(stderr, "matadv: stage %s failed: %s\n", e.stage().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "matadv: stage %s failed: %s\n", stage.c_str(), e.what());
    return 2;
  }
  return 1;
}
