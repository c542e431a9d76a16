#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "matadv/attack.hpp"
#include "matadv/dataset.hpp"
#include "matadv/defenses.hpp"
#include "matadv/mat.hpp"
#include "matadv/victims.hpp"

namespace matadv {

inline constexpr int kConfigVersion = 1;

struct VictimSection {
  std::string surrogate = "pointnet";
  std::string target = "edgeconv";
  std::size_t epochs = 60;
  double lr = 1e-3;
  std::size_t batch = 16;
  bool cosine_decay = true;
};

struct MatSection {
  mat::EncoderConfig encoder;
  mat::DecoderConfig decoder;
  std::size_t pretrain_epochs = 20;
  std::size_t decoder_epochs = 90;
  std::size_t finetune_epochs = 30;
  double lr = 1e-3;
  std::size_t batch = 16;
  double radius_weight = 0.01;
  double chamfer_weight = 100.0;
  double repulsion_weight = 1.0;
  std::size_t repulsion_neighbors = 8;
  double repulsion_bandwidth = 0.03;
};

/// Everything a run needs. Stage seeds are derived from `seed`; attack.seed
/// and pgd.seed select a stream within their stage.
struct ExperimentConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path output_dir = "runs/desk";
  DatasetSpec dataset;
  VictimSection victims;
  MatSection mat;
  attack::AttackConfig attack;
  attack::PgdConfig pgd;
  std::vector<DefenseSpec> defenses;
  /// Attack only the first this-many test clouds; 0 means the whole split.
  std::size_t eval_limit = 0;

  ExperimentConfig();
  /// Lattice points per sphere so that the reconstruction has N points.
  std::size_t per_sphere() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Requires "version": 1; absent fields keep their defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// A failed pipeline stage; completed stages stay on disk.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// One (attack, source, target, defense) cell.
struct ResultCell {
  std::string attack;
  std::string source;
  std::string target;
  std::string defense;
  double epsilon = 0.0;
  double asr = 0.0;
  double chamfer = 0.0;
  double hausdorff = 0.0;
  double knn_mean = 0.0;
  std::size_t n_eval = 0;
  std::size_t successes = 0;

  friend bool operator==(const ResultCell&, const ResultCell&) = default;
};

void to_json(nlohmann::json& j, const ResultCell& c);
void from_json(const nlohmann::json& j, ResultCell& c);

struct ResultsRecord {
  std::vector<ResultCell> cells;
  /// "<arch>/<defense>" -> clean test accuracy in percent.
  std::map<std::string, double> clean_accuracy;
  /// Clean-correct test clouds of the surrogate among the evaluated ones.
  std::size_t source_clean_correct = 0;
  std::size_t evaluated = 0;

  const ResultCell& cell(const std::string& attack, const std::string& target,
                         const std::string& defense) const;
};

void to_json(nlohmann::json& j, const ResultsRecord& r);
void from_json(const nlohmann::json& j, ResultsRecord& r);

/// Header plus one row per cell; reals with 4 decimals.
void write_report_csv(const ResultsRecord& record, const std::filesystem::path& path);
std::vector<ResultCell> read_report_csv(const std::filesystem::path& path);
/// The record as JSON, reals rounded to 4 decimals.
void write_report_json(const ResultsRecord& record, const std::filesystem::path& path);

struct MatModel {
  mat::Encoder encoder;
  mat::Decoder decoder;
};

/// Stage functions. Each reuses artifacts under output_dir when their stamp
/// matches the config, and otherwise recomputes and persists them.
SplitDataset prepare_data(const ExperimentConfig& config);
std::unique_ptr<Classifier> prepare_victim(const ExperimentConfig& config, const std::string& arch,
                                           const SplitDataset& data);
MatModel prepare_mat(const ExperimentConfig& config, const SplitDataset& data);

/// Test clouds the attacks run on, in split order.
Dataset evaluation_set(const ExperimentConfig& config, const SplitDataset& data);

/// MAT-Adv over the evaluation set with the stage-derived seed.
std::vector<attack::AttackResult> run_mat_adv(const ExperimentConfig& config,
                                              const Classifier& surrogate, const MatModel& mat,
                                              const Dataset& eval);
std::vector<attack::AttackResult> run_pgd(const ExperimentConfig& config,
                                          const Classifier& surrogate, const Dataset& eval);

/// Success of one attack batch against a (possibly defended) model.
ResultCell evaluate_cell(const std::vector<attack::AttackResult>& results, const Dataset& eval,
                         const Classifier& model, const DefenseSpec& defense,
                         const std::string& source, double epsilon);

/// The attack x model x defense matrix plus clean accuracies. Either result
/// list may be empty, in which case its cells are omitted.
ResultsRecord evaluate_attacks(const ExperimentConfig& config, const Classifier& surrogate,
                               const Classifier& target, const Dataset& eval,
                               const std::vector<attack::AttackResult>& mat_results,
                               const std::vector<attack::AttackResult>& pgd_results);
/// report.csv and report.json in `dir`.
void write_reports(const ResultsRecord& record, const std::filesystem::path& dir);

/// Full pipeline: data, victims, MAT, both attacks, the evaluation matrix and
/// the report files (report.csv, report.json) in output_dir.
ResultsRecord run_experiment(const ExperimentConfig& config);

struct RhoRow {
  double rho = 0.0;
  double whitebox_asr = 0.0;
  double transfer_asr = 0.0;
  std::size_t n_eval = 0;
};

/// One MAT-Adv attack phase per rho, on shared trained models.
std::vector<RhoRow> sweep_rho(const ExperimentConfig& config, const std::vector<double>& rhos);

/// MAT-Adv restricted to each component subset, same seeds for every row.
std::vector<attack::AblationRow> ablate_components(const ExperimentConfig& config,
                                                   const std::vector<attack::ComponentSet>& subsets);

}  // namespace matadv
