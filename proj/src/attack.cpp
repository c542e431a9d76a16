#include "matadv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "matadv/convert.hpp"
#include "matadv/metrics.hpp"
#include "matadv/optim.hpp"

namespace matadv::attack {

std::string ComponentSet::to_string() const {
  std::string out;
  if (centers) out += 'C';
  if (radii) out += 'R';
  if (features) out += 'Z';
  return out;
}

ComponentSet ComponentSet::parse(const std::string& text) {
  ComponentSet s{false, false, false};
  for (char ch : text) {
    bool* slot = ch == 'C' ? &s.centers : ch == 'R' ? &s.radii : ch == 'Z' ? &s.features : nullptr;
    if (!slot) throw std::invalid_argument("unknown component '" + std::string(1, ch) + "'");
    if (*slot) throw std::invalid_argument("repeated component '" + std::string(1, ch) + "'");
    *slot = true;
  }
  return s;
}

std::string to_string(MisLoss loss) {
  return loss == MisLoss::neg_cross_entropy ? "neg-cross-entropy" : "logit-margin";
}

MisLoss parse_mis_loss(const std::string& name) {
  if (name == "neg-cross-entropy") return MisLoss::neg_cross_entropy;
  if (name == "logit-margin") return MisLoss::logit_margin;
  throw std::invalid_argument("unknown loss variant '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("attack: epsilon must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("attack: rho must lie in [0, 1]");
  if (components.empty()) throw std::invalid_argument("attack: no components selected");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("attack: negative loss weight");
  if (!(step_size > 0.0)) throw std::invalid_argument("attack: step size must be positive");
  if (per_sphere == 0) throw std::invalid_argument("attack: per_sphere must be positive");
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"lambda1", c.lambda1},
       {"lambda2", c.lambda2},
       {"rho", c.rho},
       {"iterations", c.iterations},
       {"step_size", c.step_size},
       {"seed", c.seed},
       {"loss", to_string(c.loss)},
       {"components", c.components.to_string()},
       {"per_sphere", c.per_sphere}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  AttackConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.lambda2 = j.value("lambda2", d.lambda2);
  c.rho = j.value("rho", d.rho);
  c.iterations = j.value("iterations", d.iterations);
  c.step_size = j.value("step_size", d.step_size);
  c.seed = j.value("seed", d.seed);
  c.loss = parse_mis_loss(j.value("loss", to_string(d.loss)));
  c.components = ComponentSet::parse(j.value("components", d.components.to_string()));
  c.per_sphere = j.value("per_sphere", d.per_sphere);
}

void PgdConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("pgd: epsilon must be nonnegative");
  if (!(step_size > 0.0)) throw std::invalid_argument("pgd: step size must be positive");
}

void to_json(nlohmann::json& j, const PgdConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"iterations", c.iterations},
       {"step_size", c.step_size},
       {"stop_on_success", c.stop_on_success},
       {"random_start", c.random_start},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PgdConfig& c) {
  PgdConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.iterations = j.value("iterations", d.iterations);
  c.step_size = j.value("step_size", d.step_size);
  c.stop_on_success = j.value("stop_on_success", d.stop_on_success);
  c.random_start = j.value("random_start", d.random_start);
  c.seed = j.value("seed", d.seed);
}

Perturbation Perturbation::zeros_like(const mat::MATRep& rep) {
  return {ad::Tensor::zeros_like(rep.centers), ad::Tensor::zeros_like(rep.radii),
          ad::Tensor::zeros_like(rep.features)};
}

Mask dropout_mask(std::size_t n, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("dropout_mask: rho outside [0, 1]");
  const auto zeros = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
  Mask mask(n, 1);
  for (std::size_t i : rng.sample_without_replacement(n, zeros)) mask[i] = 0;
  return mask;
}

Perturbation apply_mask(const Perturbation& delta, const Mask& mask) {
  const std::size_t n = delta.centers.rows();
  if (mask.size() != n || delta.radii.rows() != n || delta.features.rows() != n) {
    throw ad::ShapeError("apply_mask: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(n) + " spheres");
  }
  Perturbation out = delta;
  for (ad::Tensor* block : {&out.centers, &out.radii, &out.features})
    for (std::size_t r = 0; r < n; ++r)
      if (!mask[r])
        for (std::size_t c = 0; c < block->cols(); ++c) (*block)(r, c) = 0.0;
  return out;
}

namespace {

nlohmann::json cloud_to_json(const PointCloud& cloud) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : cloud.points()) out.push_back({p[0], p[1], p[2]});
  return out;
}

PointCloud cloud_from_json(const nlohmann::json& j) {
  std::vector<Vec3> pts;
  pts.reserve(j.size());
  for (const auto& p : j) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  return PointCloud(std::move(pts));
}

}  // namespace

void to_json(nlohmann::json& j, const AttackResult& r) {
  j = {{"attack", r.attack},
       {"label", r.label},
       {"clean_pred", r.clean_pred},
       {"adv_pred", r.adv_pred},
       {"success", r.success},
       {"skipped", r.skipped},
       {"iterations_used", r.iterations_used},
       {"final_mis_loss", r.final_mis_loss},
       {"final_chamfer", r.final_chamfer},
       {"final_reg", r.final_reg},
       {"linf", r.linf},
       {"adv_cloud", cloud_to_json(r.adv_cloud)}};
}

void from_json(const nlohmann::json& j, AttackResult& r) {
  r.attack = j.at("attack").get<std::string>();
  r.label = j.at("label").get<int>();
  r.clean_pred = j.at("clean_pred").get<int>();
  r.adv_pred = j.at("adv_pred").get<int>();
  r.success = j.at("success").get<bool>();
  r.skipped = j.at("skipped").get<bool>();
  r.iterations_used = j.at("iterations_used").get<std::size_t>();
  r.final_mis_loss = j.at("final_mis_loss").get<double>();
  r.final_chamfer = j.at("final_chamfer").get<double>();
  r.final_reg = j.at("final_reg").get<double>();
  r.linf = j.at("linf").get<double>();
  r.adv_cloud = cloud_from_json(j.at("adv_cloud"));
  r.adv_cloud.set_label(r.label);
}

void write_jsonl(const std::vector<AttackResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : results) out << nlohmann::json(r).dump() << '\n';
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

std::vector<AttackResult> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<AttackResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<AttackResult>());
  }
  return out;
}

namespace {

ad::Var misclassification_loss(const ad::Var& logits, int label, MisLoss kind) {
  if (kind == MisLoss::neg_cross_entropy) {
    return -ad::softmax_cross_entropy(logits, std::span<const int>(&label, 1));
  }
  // relu(z_y - max_{j != y} z_j)
  ad::Tape& tape = *logits.tape();
  const std::size_t classes = logits.cols();
  ad::Tensor onehot({1, classes});
  ad::Tensor exclude({1, classes});
  onehot[static_cast<std::size_t>(label)] = 1.0;
  exclude[static_cast<std::size_t>(label)] = -1e9;
  const ad::Var true_logit = ad::sum_all(logits * tape.constant(std::move(onehot)));
  const ad::Var best_other = ad::max(logits + tape.constant(std::move(exclude)), 1);
  return ad::relu(true_logit - best_other);
}

ad::Var squared_norm(const ad::Var& v) { return ad::sum_all(ad::square(v)); }

double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Evaluation {
  ad::Tensor points;
  double mis_loss = 0.0;
  double chamfer = 0.0;
  double reg = 0.0;
  double total = 0.0;
  Perturbation gradient;
};

ad::Tensor mask_column(const Mask& mask) {
  ad::Tensor t({mask.size(), 1});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask[i] ? 1.0 : 0.0;
  return t;
}

}  // namespace

ObjectiveTerms attack_objective(ad::Tape& tape, const Classifier& surrogate,
                                const mat::Decoder& decoder, const mat::MATRep& rep,
                                const PointCloud& cloud, int label, const AttackConfig& config,
                                const ad::Tensor& anchor, const DeltaVars& delta,
                                const Mask* mask) {
  const ad::Var keep = mask ? tape.constant(mask_column(*mask)) : ad::Var{};
  ad::Var reg = tape.constant(ad::Tensor::scalar(0.0));
  auto perturb = [&](const ad::Tensor& base, const ad::Var& d) {
    const ad::Var b = tape.constant(base);
    if (!d.valid()) return b;
    const ad::Var masked = mask ? d * keep : d;
    reg = reg + squared_norm(masked);
    return b + masked;
  };
  const ad::Var c = perturb(rep.centers, delta.centers);
  const ad::Var r = perturb(rep.radii, delta.radii);
  const ad::Var z = perturb(rep.features, delta.features);

  ad::Tensor lo = anchor, hi = anchor;
  for (double& x : lo.data()) x -= config.epsilon;
  for (double& x : hi.data()) x += config.epsilon;
  const auto dec_params = nn::bind(tape, decoder.params(), false);
  const ad::Var decoded = decoder.forward(tape, dec_params, c, r, z, config.per_sphere).points;

  ObjectiveTerms t;
  t.points = ad::clamp(decoded, lo, hi);
  t.mis = misclassification_loss(forward_frozen(surrogate, tape, t.points), label, config.loss);
  t.chamfer = metrics::chamfer(tape.constant(to_tensor(cloud)), t.points);
  t.reg = reg;
  t.total = t.mis + config.lambda1 * t.chamfer + config.lambda2 * reg;
  return t;
}

namespace {

// One forward (and optionally backward) pass of the attack objective.
class Objective {
 public:
  Objective(const Classifier& surrogate, const mat::Decoder& decoder, const mat::MATRep& rep,
            const PointCloud& cloud, int label, const AttackConfig& config,
            const ad::Tensor& anchor)
      : surrogate_(surrogate), decoder_(decoder), rep_(rep), cloud_(cloud), label_(label),
        config_(config), anchor_(anchor) {}

  Evaluation run(const Perturbation& delta, const Mask* mask, bool with_gradient) const {
    ad::Tape tape;
    const auto& cs = config_.components;
    auto var = [&](bool on, const ad::Tensor& d) {
      if (!on) return ad::Var{};
      return with_gradient ? tape.leaf(d) : tape.constant(d);
    };
    const DeltaVars d{var(cs.centers, delta.centers), var(cs.radii, delta.radii),
                      var(cs.features, delta.features)};
    const ObjectiveTerms t = attack_objective(tape, surrogate_, decoder_, rep_, cloud_, label_,
                                              config_, anchor_, d, mask);
    Evaluation out;
    out.points = t.points.value();
    out.mis_loss = t.mis.value().item();
    out.chamfer = t.chamfer.value().item();
    out.reg = t.reg.value().item();
    out.total = t.total.value().item();
    if (with_gradient) {
      const ad::Gradients g = tape.backward(t.total);
      out.gradient = Perturbation::zeros_like(rep_);
      if (d.centers.valid()) out.gradient.centers = g.of(d.centers);
      if (d.radii.valid()) out.gradient.radii = g.of(d.radii);
      if (d.features.valid()) out.gradient.features = g.of(d.features);
    }
    return out;
  }

 private:
  const Classifier& surrogate_;
  const mat::Decoder& decoder_;
  const mat::MATRep& rep_;
  const PointCloud& cloud_;
  int label_;
  const AttackConfig& config_;
  const ad::Tensor& anchor_;
};

}  // namespace

AttackResult mat_adv_attack(const Classifier& surrogate, const mat::Encoder& encoder,
                            const mat::Decoder& decoder, const PointCloud& cloud, int label,
                            const AttackConfig& config, const TraceFn& trace) {
  config.validate();
  if (label < 0 || static_cast<std::size_t>(label) >= surrogate.num_classes()) {
    throw std::invalid_argument("mat_adv_attack: label outside the surrogate's classes");
  }
  const mat::MATRep rep = encoder.encode(cloud);
  const ad::Tensor anchor = to_tensor(decoder.decode(rep, config.per_sphere));
  if (anchor.rows() != rep.spheres() * config.per_sphere) {
    throw std::logic_error("mat_adv_attack: reconstruction size does not match n s");
  }

  AttackResult result;
  result.attack = "mat-adv";
  result.label = label;
  result.clean_pred = predict(surrogate, cloud);
  if (result.clean_pred != label) {
    result.skipped = true;
    result.adv_cloud = to_cloud(anchor, label);
    result.adv_pred = predict(surrogate, result.adv_cloud);
    result.success = result.adv_pred != label;
    return result;
  }

  const Objective objective(surrogate, decoder, rep, cloud, label, config, anchor);
  Perturbation delta = Perturbation::zeros_like(rep);
  std::vector<ad::Tensor*> slots;
  if (config.components.centers) slots.push_back(&delta.centers);
  if (config.components.radii) slots.push_back(&delta.radii);
  if (config.components.features) slots.push_back(&delta.features);
  ad::AdamState adam(ad::AdamOptions{.lr = config.step_size});
  Rng rng(config.seed);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const Mask mask = dropout_mask(rep.spheres(), config.rho, rng);
    const Evaluation e = objective.run(delta, &mask, true);
    if (trace) trace({it, &mask, &e.gradient, e.total});
    std::vector<ad::Tensor> params, grads;
    auto take = [&](bool on, ad::Tensor& d, const ad::Tensor& g) {
      if (!on) return;
      params.push_back(std::move(d));
      grads.push_back(g);
    };
    take(config.components.centers, delta.centers, e.gradient.centers);
    take(config.components.radii, delta.radii, e.gradient.radii);
    take(config.components.features, delta.features, e.gradient.features);
    ad::adam_step(params, grads, adam);
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = std::move(params[i]);
  }

  const Evaluation final_eval = objective.run(delta, nullptr, false);
  result.iterations_used = config.iterations;
  result.adv_cloud = to_cloud(final_eval.points, label);
  result.adv_pred = predict(surrogate, result.adv_cloud);
  result.success = result.adv_pred != label;
  result.final_mis_loss = final_eval.mis_loss;
  result.final_chamfer = final_eval.chamfer;
  result.final_reg = final_eval.reg;
  result.linf = max_abs_diff(final_eval.points, anchor);
  return result;
}

AttackResult pgd_baseline(const Classifier& surrogate, const PointCloud& cloud, int label,
                          const PgdConfig& config) {
  config.validate();
  if (label < 0 || static_cast<std::size_t>(label) >= surrogate.num_classes()) {
    throw std::invalid_argument("pgd_baseline: label outside the surrogate's classes");
  }
  AttackResult result;
  result.attack = "pgd";
  result.label = label;
  result.clean_pred = predict(surrogate, cloud);
  const ad::Tensor origin = to_tensor(cloud);
  ad::Tensor x = origin;
  auto project = [&](ad::Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = std::clamp(t[i], origin[i] - config.epsilon, origin[i] + config.epsilon);
  };
  auto finish = [&](std::size_t iterations) {
    result.iterations_used = iterations;
    result.adv_cloud = to_cloud(x, label);
    result.adv_pred = predict(surrogate, result.adv_cloud);
    result.success = result.adv_pred != label;
    result.final_chamfer = chamfer(cloud, result.adv_cloud);
    result.linf = max_abs_diff(x, origin);
    ad::Tape tape;
    const ad::Var z = forward_frozen(surrogate, tape, tape.constant(x));
    result.final_mis_loss = misclassification_loss(z, label, MisLoss::neg_cross_entropy).value().item();
    return result;
  };
  if (result.clean_pred != label) {
    result.skipped = true;
    return finish(0);
  }
  if (config.random_start) {
    Rng rng(config.seed);
    for (double& v : x.data()) v += rng.uniform(-config.epsilon, config.epsilon);
    project(x);
  }
  for (std::size_t it = 0; it < config.iterations; ++it) {
    ad::Tape tape;
    const ad::Var input = tape.leaf(x);
    const ad::Var z = forward_frozen(surrogate, tape, input);
    if (config.stop_on_success && argmax(z.value().data()) != label) return finish(it);
    const ad::Var ce = ad::softmax_cross_entropy(z, std::span<const int>(&label, 1));
    const ad::Tensor g = tape.backward(ce).of(input);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      x[i] += config.step_size * s;
    }
    project(x);
  }
  return finish(config.iterations);
}

std::vector<AttackResult> mat_adv_dataset(const Classifier& surrogate, const mat::Encoder& encoder,
                                          const mat::Decoder& decoder, const Dataset& data,
                                          const AttackConfig& config) {
  const auto labels = data.labels();
  std::vector<AttackResult> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    AttackConfig per_cloud = config;
    per_cloud.seed = derive_seed(config.seed, "mat-adv", i);
    out.push_back(mat_adv_attack(surrogate, encoder, decoder, data.clouds[i], labels[i], per_cloud));
  }
  return out;
}

std::vector<AttackResult> pgd_dataset(const Classifier& surrogate, const Dataset& data,
                                      const PgdConfig& config) {
  const auto labels = data.labels();
  std::vector<AttackResult> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    PgdConfig per_cloud = config;
    per_cloud.seed = derive_seed(config.seed, "pgd", i);
    out.push_back(pgd_baseline(surrogate, data.clouds[i], labels[i], per_cloud));
  }
  return out;
}

std::vector<AblationRow> component_ablation(const Classifier& surrogate, const Classifier& target,
                                            const mat::Encoder& encoder,
                                            const mat::Decoder& decoder, const Dataset& data,
                                            const AttackConfig& config,
                                            const std::vector<ComponentSet>& subsets) {
  for (const auto& s : subsets)
    if (s.empty()) throw std::invalid_argument("component_ablation: empty component subset");
  std::vector<AblationRow> rows;
  for (const auto& subset : subsets) {
    AttackConfig c = config;
    c.components = subset;
    const auto results = mat_adv_dataset(surrogate, encoder, decoder, data, c);
    std::size_t n = 0, white = 0, transfer = 0;
    for (const auto& r : results) {
      if (r.skipped) continue;
      ++n;
      white += r.success ? 1 : 0;
      transfer += predict(target, r.adv_cloud) != r.label ? 1 : 0;
    }
    AblationRow row;
    row.components = subset;
    row.n_eval = n;
    if (n > 0) {
      row.whitebox_asr = 100.0 * static_cast<double>(white) / static_cast<double>(n);
      row.transfer_asr = 100.0 * static_cast<double>(transfer) / static_cast<double>(n);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace matadv::attack
