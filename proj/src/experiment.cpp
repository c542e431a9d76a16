#include "matadv/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "matadv/metrics.hpp"
#include "matadv/rng.hpp"

namespace matadv {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentConfig::ExperimentConfig() {
  DefenseSpec none, srs_spec, sor_spec;
  srs_spec.kind = DefenseKind::srs;
  sor_spec.kind = DefenseKind::sor;
  defenses = {none, srs_spec, sor_spec};
}

std::size_t ExperimentConfig::per_sphere() const {
  const std::size_t n = mat.encoder.spheres;
  if (n == 0 || dataset.points % n != 0) {
    throw std::invalid_argument("config: point count " + std::to_string(dataset.points) +
                                " is not a multiple of the sphere count " + std::to_string(n));
  }
  return dataset.points / n;
}

void ExperimentConfig::validate() const {
  if (dataset.classes.size() < 2) throw std::invalid_argument("config: need at least 2 classes");
  if (dataset.points < 64) throw std::invalid_argument("config: need at least 64 points per cloud");
  if (dataset.train_per_class == 0 || dataset.test_per_class == 0) {
    throw std::invalid_argument("config: empty dataset split");
  }
  if (mat.encoder.sample_size > dataset.points) {
    throw std::invalid_argument("config: sample_size exceeds the point count");
  }
  if (mat.decoder.feature_dim != mat.encoder.feature_dim) {
    throw std::invalid_argument("config: encoder and decoder feature widths differ");
  }
  (void)per_sphere();
  attack.validate();
  pgd.validate();
  for (const auto& d : defenses) d.validate();
}

// ---- config JSON ---------------------------------------------------------------

namespace {

json dataset_json(const DatasetSpec& d) {
  json classes = json::array();
  for (auto c : d.classes) classes.push_back(std::string(shape_class_name(c)));
  return {{"classes", classes},
          {"train_per_class", d.train_per_class},
          {"test_per_class", d.test_per_class},
          {"points", d.points},
          {"size_jitter", d.size_jitter},
          {"noise", d.noise}};
}

void dataset_from(const json& j, DatasetSpec& d) {
  if (j.contains("classes")) {
    d.classes.clear();
    for (const auto& c : j.at("classes")) d.classes.push_back(parse_shape_class(c.get<std::string>()));
  }
  d.train_per_class = j.value("train_per_class", d.train_per_class);
  d.test_per_class = j.value("test_per_class", d.test_per_class);
  d.points = j.value("points", d.points);
  d.size_jitter = j.value("size_jitter", d.size_jitter);
  d.noise = j.value("noise", d.noise);
}

json victims_json(const VictimSection& v) {
  return {{"surrogate", v.surrogate}, {"target", v.target}, {"epochs", v.epochs},
          {"lr", v.lr},               {"batch", v.batch},
          {"cosine_decay", v.cosine_decay}};
}

void victims_from(const json& j, VictimSection& v) {
  v.surrogate = j.value("surrogate", v.surrogate);
  v.target = j.value("target", v.target);
  v.epochs = j.value("epochs", v.epochs);
  v.lr = j.value("lr", v.lr);
  v.batch = j.value("batch", v.batch);
  v.cosine_decay = j.value("cosine_decay", v.cosine_decay);
}

json mat_json(const MatSection& m) {
  return {{"spheres", m.encoder.spheres},
          {"sample_size", m.encoder.sample_size},
          {"neighbors", m.encoder.neighbors},
          {"feature_dim", m.encoder.feature_dim},
          {"head_hidden", m.encoder.head_hidden},
          {"interp_neighbors", m.decoder.interp_neighbors},
          {"refine_hidden", m.decoder.hidden},
          {"pretrain_epochs", m.pretrain_epochs},
          {"decoder_epochs", m.decoder_epochs},
          {"finetune_epochs", m.finetune_epochs},
          {"lr", m.lr},
          {"batch", m.batch},
          {"radius_weight", m.radius_weight},
          {"chamfer_weight", m.chamfer_weight},
          {"repulsion_weight", m.repulsion_weight},
          {"repulsion_neighbors", m.repulsion_neighbors},
          {"repulsion_bandwidth", m.repulsion_bandwidth}};
}

void mat_from(const json& j, MatSection& m) {
  m.encoder.spheres = j.value("spheres", m.encoder.spheres);
  m.encoder.sample_size = j.value("sample_size", m.encoder.sample_size);
  m.encoder.neighbors = j.value("neighbors", m.encoder.neighbors);
  m.encoder.feature_dim = j.value("feature_dim", m.encoder.feature_dim);
  m.encoder.head_hidden = j.value("head_hidden", m.encoder.head_hidden);
  m.decoder.feature_dim = m.encoder.feature_dim;
  m.decoder.interp_neighbors = j.value("interp_neighbors", m.decoder.interp_neighbors);
  m.decoder.hidden = j.value("refine_hidden", m.decoder.hidden);
  m.pretrain_epochs = j.value("pretrain_epochs", m.pretrain_epochs);
  m.decoder_epochs = j.value("decoder_epochs", m.decoder_epochs);
  m.finetune_epochs = j.value("finetune_epochs", m.finetune_epochs);
  m.lr = j.value("lr", m.lr);
  m.batch = j.value("batch", m.batch);
  m.radius_weight = j.value("radius_weight", m.radius_weight);
  m.chamfer_weight = j.value("chamfer_weight", m.chamfer_weight);
  m.repulsion_weight = j.value("repulsion_weight", m.repulsion_weight);
  m.repulsion_neighbors = j.value("repulsion_neighbors", m.repulsion_neighbors);
  m.repulsion_bandwidth = j.value("repulsion_bandwidth", m.repulsion_bandwidth);
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  j = {{"version", kConfigVersion},
       {"seed", c.seed},
       {"output_dir", c.output_dir.generic_string()},
       {"dataset", dataset_json(c.dataset)},
       {"victims", victims_json(c.victims)},
       {"mat", mat_json(c.mat)},
       {"attack", c.attack},
       {"pgd", c.pgd},
       {"defenses", c.defenses},
       {"eval_limit", c.eval_limit}};
}

void from_json(const json& j, ExperimentConfig& c) {
  if (!j.contains("version") || j.at("version") != kConfigVersion) {
    throw std::invalid_argument("config: expected \"version\": " + std::to_string(kConfigVersion));
  }
  c = ExperimentConfig();
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir.generic_string());
  if (j.contains("dataset")) dataset_from(j.at("dataset"), c.dataset);
  if (j.contains("victims")) victims_from(j.at("victims"), c.victims);
  if (j.contains("mat")) mat_from(j.at("mat"), c.mat);
  if (j.contains("attack")) c.attack = j.at("attack").get<attack::AttackConfig>();
  c.attack.per_sphere = c.per_sphere();
  if (j.contains("pgd")) c.pgd = j.at("pgd").get<attack::PgdConfig>();
  if (j.contains("defenses")) c.defenses = j.at("defenses").get<std::vector<DefenseSpec>>();
  c.eval_limit = j.value("eval_limit", c.eval_limit);
  c.validate();
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return json::parse(in).get<ExperimentConfig>();
}

void save_config(const ExperimentConfig& config, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << json(config).dump(2) << '\n';
}

// ---- results -------------------------------------------------------------------

namespace {

double round4(double x) { return std::round(x * 1e4) / 1e4; }

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

void to_json(json& j, const ResultCell& c) {
  j = {{"attack", c.attack},
       {"source", c.source},
       {"target", c.target},
       {"defense", c.defense},
       {"epsilon", round4(c.epsilon)},
       {"asr", round4(c.asr)},
       {"chamfer", round4(c.chamfer)},
       {"hausdorff", round4(c.hausdorff)},
       {"knn_mean", round4(c.knn_mean)},
       {"n_eval", c.n_eval},
       {"successes", c.successes}};
}

void from_json(const json& j, ResultCell& c) {
  c.attack = j.at("attack").get<std::string>();
  c.source = j.at("source").get<std::string>();
  c.target = j.at("target").get<std::string>();
  c.defense = j.at("defense").get<std::string>();
  c.epsilon = j.at("epsilon").get<double>();
  c.asr = j.at("asr").get<double>();
  c.chamfer = j.at("chamfer").get<double>();
  c.hausdorff = j.at("hausdorff").get<double>();
  c.knn_mean = j.at("knn_mean").get<double>();
  c.n_eval = j.at("n_eval").get<std::size_t>();
  c.successes = j.value("successes", std::size_t{0});
}

const ResultCell& ResultsRecord::cell(const std::string& attack, const std::string& target,
                                      const std::string& defense) const {
  for (const auto& c : cells)
    if (c.attack == attack && c.target == target && c.defense == defense) return c;
  throw std::out_of_range("no result cell " + attack + "/" + target + "/" + defense);
}

void to_json(json& j, const ResultsRecord& r) {
  json acc = json::object();
  for (const auto& [k, v] : r.clean_accuracy) acc[k] = round4(v);
  j = {{"cells", r.cells},
       {"clean_accuracy", acc},
       {"source_clean_correct", r.source_clean_correct},
       {"evaluated", r.evaluated}};
}

void from_json(const json& j, ResultsRecord& r) {
  r.cells = j.at("cells").get<std::vector<ResultCell>>();
  r.clean_accuracy = j.at("clean_accuracy").get<std::map<std::string, double>>();
  r.source_clean_correct = j.at("source_clean_correct").get<std::size_t>();
  r.evaluated = j.at("evaluated").get<std::size_t>();
}

void write_report_csv(const ResultsRecord& record, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "attack,source,target,defense,epsilon,asr,chamfer,hausdorff,knn_mean,n_eval\n";
  for (const auto& c : record.cells) {
    out << c.attack << ',' << c.source << ',' << c.target << ',' << c.defense << ','
        << fixed4(c.epsilon) << ',' << fixed4(c.asr) << ',' << fixed4(c.chamfer) << ','
        << fixed4(c.hausdorff) << ',' << fixed4(c.knn_mean) << ',' << c.n_eval << '\n';
  }
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

std::vector<ResultCell> read_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "attack,source,target,defense,epsilon,asr,chamfer,hausdorff,knn_mean,n_eval") {
    throw std::runtime_error(path.string() + ": unexpected report header");
  }
  std::vector<ResultCell> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 10) throw ParseError("report row needs 10 fields", line_no);
    ResultCell c;
    c.attack = f[0];
    c.source = f[1];
    c.target = f[2];
    c.defense = f[3];
    c.epsilon = std::stod(f[4]);
    c.asr = std::stod(f[5]);
    c.chamfer = std::stod(f[6]);
    c.hausdorff = std::stod(f[7]);
    c.knn_mean = std::stod(f[8]);
    c.n_eval = std::stoul(f[9]);
    cells.push_back(c);
  }
  return cells;
}

void write_report_json(const ResultsRecord& record, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << json(record).dump(2) << '\n';
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

// ---- stages --------------------------------------------------------------------

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return json();
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return json();
  }
}

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

json data_stamp(const ExperimentConfig& c) {
  return {{"seed", c.seed}, {"dataset", dataset_json(c.dataset)}};
}

json victim_stamp(const ExperimentConfig& c, const std::string& arch) {
  json s = data_stamp(c);
  s["arch"] = arch;
  json v = victims_json(c.victims);
  v.erase("surrogate");
  v.erase("target");
  s["training"] = v;
  return s;
}

json mat_stamp(const ExperimentConfig& c) {
  json s = data_stamp(c);
  s["mat"] = mat_json(c.mat);
  return s;
}

mat::MatTrainOptions mat_options(const ExperimentConfig& c, std::size_t epochs,
                                 std::string_view label) {
  mat::MatTrainOptions o;
  o.epochs = epochs;
  o.lr = c.mat.lr;
  o.batch = c.mat.batch;
  o.seed = derive_seed(c.seed, label);
  o.per_sphere = c.per_sphere();
  o.radius_weight = c.mat.radius_weight;
  o.chamfer_weight = c.mat.chamfer_weight;
  o.repulsion_weight = c.mat.repulsion_weight;
  o.repulsion_neighbors = c.mat.repulsion_neighbors;
  o.repulsion_bandwidth = c.mat.repulsion_bandwidth;
  return o;
}

mat::EncoderConfig encoder_config(const ExperimentConfig& c) {
  mat::EncoderConfig e = c.mat.encoder;
  e.fps_seed = derive_seed(c.seed, "mat-fps");
  return e;
}

}  // namespace

SplitDataset prepare_data(const ExperimentConfig& config) {
  return stage("gen-data", [&] {
    SplitDataset data = synth_dataset(config.dataset, derive_seed(config.seed, "dataset"));
    const fs::path dir = config.output_dir / "data";
    const json stamp = data_stamp(config);
    if (read_json_file(dir / "stamp.json") != stamp) {
      fs::remove_all(dir);
      save_dataset(data, dir);
      write_json_file(stamp, dir / "stamp.json");
    }
    return data;
  });
}

std::unique_ptr<Classifier> prepare_victim(const ExperimentConfig& config, const std::string& arch,
                                           const SplitDataset& data) {
  return stage("train-victim", [&] {
    auto model = make_classifier(arch, config.dataset.classes.size(),
                                 derive_seed(config.seed, "victim-init." + arch));
    const fs::path dir = config.output_dir / "models";
    const fs::path weights = dir / (arch + ".w");
    const fs::path meta = dir / (arch + ".json");
    const json stamp = victim_stamp(config, arch);
    const json existing = read_json_file(meta);
    if (existing.is_object() && existing.value("stamp", json()) == stamp && fs::exists(weights)) {
      nn::load_weights(model->params(), weights);
      return model;
    }
    TrainOptions opts;
    opts.epochs = config.victims.epochs;
    opts.lr = config.victims.lr;
    opts.cosine_decay = config.victims.cosine_decay;
    opts.batch = config.victims.batch;
    opts.seed = derive_seed(config.seed, "victim-train." + arch);
    const auto started = std::chrono::steady_clock::now();
    const TrainHistory history = train(*model, data.train, data.test, opts);
    const double seconds = elapsed_seconds(started);
    model->params().quantize_to_float();
    fs::create_directories(dir);
    nn::save_weights(model->params(), weights);
    write_json_file({{"stamp", stamp},
                     {"test_accuracy", evaluate(*model, data.test)},
                     {"train_seconds", seconds},
                     {"history",
                      {{"train_loss", history.train_loss},
                       {"train_accuracy", history.train_accuracy},
                       {"test_accuracy", history.test_accuracy}}}},
                    meta);
    return model;
  });
}

MatModel prepare_mat(const ExperimentConfig& config, const SplitDataset& data) {
  return stage("train-mat", [&] {
    MatModel m{mat::Encoder(encoder_config(config), derive_seed(config.seed, "mat-encoder")),
               mat::Decoder(config.mat.decoder, derive_seed(config.seed, "mat-decoder"))};
    const fs::path dir = config.output_dir / "models";
    const fs::path enc_path = dir / "encoder.w", dec_path = dir / "decoder.w";
    const fs::path meta = dir / "mat.json";
    const json stamp = mat_stamp(config);
    const json existing = read_json_file(meta);
    if (existing.is_object() && existing.value("stamp", json()) == stamp && fs::exists(enc_path) &&
        fs::exists(dec_path)) {
      nn::load_weights(m.encoder.params(), enc_path);
      nn::load_weights(m.decoder.params(), dec_path);
      return m;
    }
    const auto started = std::chrono::steady_clock::now();
    const auto pre = mat::pretrain_encoder(
        m.encoder, data.train, mat_options(config, config.mat.pretrain_epochs, "mat-pretrain"));
    const auto dec = mat::train_decoder(
        m.encoder, m.decoder, data.train,
        mat_options(config, config.mat.decoder_epochs, "mat-decoder-train"));
    const auto joint = mat::finetune_joint(
        m.encoder, m.decoder, data.train,
        mat_options(config, config.mat.finetune_epochs, "mat-finetune"));
    const double seconds = elapsed_seconds(started);
    m.encoder.params().quantize_to_float();
    m.decoder.params().quantize_to_float();
    fs::create_directories(dir);
    nn::save_weights(m.encoder.params(), enc_path);
    nn::save_weights(m.decoder.params(), dec_path);
    write_json_file({{"stamp", stamp},
                     {"train_seconds", seconds},
                     {"test_chamfer",
                      mat::reconstruction_chamfer(m.encoder, m.decoder, data.test,
                                                  config.per_sphere())},
                     {"history",
                      {{"pretrain", pre.loss}, {"decoder", dec.loss}, {"finetune", joint.loss}}}},
                    meta);
    return m;
  });
}

Dataset evaluation_set(const ExperimentConfig& config, const SplitDataset& data) {
  const std::size_t total = data.test.size();
  if (config.eval_limit == 0 || config.eval_limit >= total) return data.test;
  // Classes are interleaved, so a prefix stays balanced.
  Dataset eval;
  eval.clouds.assign(data.test.clouds.begin(),
                     data.test.clouds.begin() + static_cast<std::ptrdiff_t>(config.eval_limit));
  return eval;
}

std::vector<attack::AttackResult> run_mat_adv(const ExperimentConfig& config,
                                              const Classifier& surrogate, const MatModel& mat,
                                              const Dataset& eval) {
  return stage("attack", [&] {
    attack::AttackConfig c = config.attack;
    c.per_sphere = config.per_sphere();
    c.seed = derive_seed(config.seed, "attack", config.attack.seed);
    return attack::mat_adv_dataset(surrogate, mat.encoder, mat.decoder, eval, c);
  });
}

std::vector<attack::AttackResult> run_pgd(const ExperimentConfig& config,
                                          const Classifier& surrogate, const Dataset& eval) {
  return stage("attack", [&] {
    attack::PgdConfig c = config.pgd;
    c.seed = derive_seed(config.seed, "pgd", config.pgd.seed);
    return attack::pgd_dataset(surrogate, eval, c);
  });
}

ResultCell evaluate_cell(const std::vector<attack::AttackResult>& results, const Dataset& eval,
                         const Classifier& model, const DefenseSpec& defense,
                         const std::string& source, double epsilon) {
  if (results.size() != eval.size()) {
    throw std::invalid_argument("evaluate_cell: result count does not match the evaluation set");
  }
  ResultCell cell;
  cell.attack = results.empty() ? "" : results.front().attack;
  cell.source = source;
  cell.target = model.arch();
  cell.defense = defense.name();
  cell.epsilon = epsilon;
  std::vector<int> clean, adv, labels;
  MetricReport sum;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    clean.push_back(r.clean_pred);
    labels.push_back(r.label);
    adv.push_back(defend_then_predict(model, defense, r.adv_cloud, i));
    if (r.skipped) continue;
    const MetricReport m = measure(eval.clouds[i], r.adv_cloud);
    sum.chamfer += m.chamfer;
    sum.hausdorff += m.hausdorff;
    sum.knn_mean += m.knn_mean;
    ++cell.n_eval;
    if (adv.back() != r.label) ++cell.successes;
  }
  cell.asr = attack_success_rate(clean, adv, labels).value_or(0.0);
  if (cell.n_eval > 0) {
    const double inv = 1.0 / static_cast<double>(cell.n_eval);
    cell.chamfer = sum.chamfer * inv;
    cell.hausdorff = sum.hausdorff * inv;
    cell.knn_mean = sum.knn_mean * inv;
  }
  return cell;
}

namespace {

// Defense seeds come from the master seed so reruns agree.
DefenseSpec seeded(const ExperimentConfig& config, DefenseSpec d) {
  d.seed = derive_seed(config.seed, "defense." + d.name(), d.seed);
  return d;
}

}  // namespace

ResultsRecord evaluate_attacks(const ExperimentConfig& config, const Classifier& surrogate,
                               const Classifier& target, const Dataset& eval,
                               const std::vector<attack::AttackResult>& mat_results,
                               const std::vector<attack::AttackResult>& pgd_results) {
  return stage("evaluate", [&] {
    ResultsRecord record;
    record.evaluated = eval.size();
    for (const auto& r : mat_results) record.source_clean_correct += r.skipped ? 0 : 1;
    const auto labels = eval.labels();
    for (const Classifier* model : {&surrogate, &target})
      for (const auto& d : config.defenses) {
        const DefenseSpec spec = seeded(config, d);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < eval.size(); ++i)
          correct += defend_then_predict(*model, spec, eval.clouds[i], i) == labels[i] ? 1 : 0;
        record.clean_accuracy[model->arch() + "/" + spec.name()] =
            100.0 * static_cast<double>(correct) / static_cast<double>(eval.size());
      }
    const std::string source = surrogate.arch();
    for (const auto* results : {&mat_results, &pgd_results}) {
      if (results->empty()) continue;
      const double eps = results == &mat_results ? config.attack.epsilon : config.pgd.epsilon;
      for (const Classifier* model : {&surrogate, &target})
        for (const auto& d : config.defenses)
          record.cells.push_back(
              evaluate_cell(*results, eval, *model, seeded(config, d), source, eps));
    }
    return record;
  });
}

void write_reports(const ResultsRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  write_report_csv(record, dir / "report.csv");
  write_report_json(record, dir / "report.json");
}

ResultsRecord run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  save_config(config, config.output_dir / "config.json");
  const SplitDataset data = prepare_data(config);
  const auto surrogate = prepare_victim(config, config.victims.surrogate, data);
  const auto target = prepare_victim(config, config.victims.target, data);
  const MatModel mat = prepare_mat(config, data);
  const Dataset eval = evaluation_set(config, data);

  const auto mat_results = run_mat_adv(config, *surrogate, mat, eval);
  const auto pgd_results = run_pgd(config, *surrogate, eval);
  stage("attack", [&] {
    fs::create_directories(config.output_dir / "attacks");
    attack::write_jsonl(mat_results, config.output_dir / "attacks" / "mat-adv.jsonl");
    attack::write_jsonl(pgd_results, config.output_dir / "attacks" / "pgd.jsonl");
    return 0;
  });
  const ResultsRecord record =
      evaluate_attacks(config, *surrogate, *target, eval, mat_results, pgd_results);
  stage("report", [&] {
    write_reports(record, config.output_dir);
    return 0;
  });
  return record;
}

std::vector<RhoRow> sweep_rho(const ExperimentConfig& config, const std::vector<double>& rhos) {
  config.validate();
  for (double r : rhos)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("sweep_rho: rho outside [0, 1]");
  const SplitDataset data = prepare_data(config);
  const auto surrogate = prepare_victim(config, config.victims.surrogate, data);
  const auto target = prepare_victim(config, config.victims.target, data);
  const MatModel mat = prepare_mat(config, data);
  const Dataset eval = evaluation_set(config, data);
  std::vector<RhoRow> rows;
  for (double rho : rhos) {
    ExperimentConfig c = config;
    c.attack.rho = rho;
    const auto results = run_mat_adv(c, *surrogate, mat, eval);
    DefenseSpec none;
    const ResultCell white = evaluate_cell(results, eval, *surrogate, none, surrogate->arch(),
                                           c.attack.epsilon);
    const ResultCell transfer = evaluate_cell(results, eval, *target, none, surrogate->arch(),
                                              c.attack.epsilon);
    rows.push_back({rho, white.asr, transfer.asr, transfer.n_eval});
  }
  return rows;
}

std::vector<attack::AblationRow> ablate_components(const ExperimentConfig& config,
                                                   const std::vector<attack::ComponentSet>& subsets) {
  config.validate();
  const SplitDataset data = prepare_data(config);
  const auto surrogate = prepare_victim(config, config.victims.surrogate, data);
  const auto target = prepare_victim(config, config.victims.target, data);
  const MatModel mat = prepare_mat(config, data);
  const Dataset eval = evaluation_set(config, data);
  return stage("ablate", [&] {
    attack::AttackConfig c = config.attack;
    c.per_sphere = config.per_sphere();
    c.seed = derive_seed(config.seed, "attack", config.attack.seed);
    return attack::component_ablation(*surrogate, *target, mat.encoder, mat.decoder, eval, c,
                                      subsets);
  });
}

}  // namespace matadv
