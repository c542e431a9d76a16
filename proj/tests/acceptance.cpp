// Acceptance run: one PASS/FAIL line per criterion. Trained models are cached
// under --cache and reused when their config stamp matches; attacks always rerun.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "matadv/attack.hpp"
#include "matadv/convert.hpp"
#include "matadv/experiment.hpp"
#include "matadv/gradcheck.hpp"
#include "matadv/metrics.hpp"
#include "primitive_catalog.hpp"

using namespace matadv;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

// Everything the attack criteria share.
struct Pipeline {
  ExperimentConfig config;
  SplitDataset data;
  std::unique_ptr<Classifier> surrogate;
  std::unique_ptr<Classifier> target;
  std::unique_ptr<MatModel> mat;
  Dataset eval;
  json victim_meta;
  json mat_meta;

  // results[rho][seed]
  std::map<double, std::map<std::uint64_t, std::vector<attack::AttackResult>>> mat_results;
  std::map<double, std::map<std::uint64_t, double>> mat_seconds;
  std::map<std::uint64_t, std::vector<attack::AttackResult>> pgd_results;
  std::map<std::uint64_t, double> pgd_seconds;
  std::map<double, std::map<std::uint64_t, ResultsRecord>> records;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// ---- 1 ---------------------------------------------------------------------------

double worst_of(const ad::ScalarFunction& f, const std::vector<ad::Tensor>& points,
                std::size_t max_components, std::size_t* excluded, std::size_t* checked) {
  double worst = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    ad::GradCheckOptions o;
    o.max_components = max_components;
    o.seed = i;
    const auto r = ad::grad_check(f, points[i], o);
    worst = std::max(worst, r.checked == 0 ? INFINITY : r.max_rel_error);
    *excluded += r.excluded.size();
    *checked += r.checked;
  }
  return worst;
}

Outcome autodiff_soundness() {
  const auto start = Clock::now();
  double prim_worst = 0.0;
  std::size_t prim_count = 0;
  for (const auto& c : testing::primitive_catalog()) {
    prim_worst = std::max(prim_worst, testing::check_primitive(c, 10, std::hash<std::string>{}(c.name)));
    ++prim_count;
  }

  std::size_t excluded = 0, checked = 0;
  std::map<std::string, double> composite;
  const ExperimentConfig defaults;
  Rng rng(1234);
  auto random_shape = [&](std::size_t points, std::uint64_t seed) {
    ShapeSpec s;
    s.shape = all_shape_classes()[seed % kShapeClassCount];
    s.points = points;
    return sample_shape(s, 0, seed);
  };

  // Cross-entropy through each victim, with respect to the input cloud.
  for (const std::string arch : {"pointnet", "edgeconv"}) {
    const auto model = make_classifier(arch, 8, 40);
    std::vector<ad::Tensor> points;
    for (std::uint64_t i = 0; i < 10; ++i) points.push_back(to_tensor(random_shape(64, 500 + i)));
    const std::vector<int> label{3};
    composite["ce(" + arch + ")"] = worst_of(
        [&](ad::Tape& t, const ad::Var& x) { return ad::softmax_cross_entropy(forward_frozen(*model, t, x), label); },
        points, 0, &excluded, &checked);
  }

  // Chamfer of the decoded cloud against its source, per MAT block.
  mat::Encoder encoder(defaults.mat.encoder, 41);
  mat::Decoder decoder(defaults.mat.decoder, 42);
  const std::size_t s = defaults.per_sphere();
  std::vector<PointCloud> clouds;
  std::vector<mat::MATRep> reps;
  for (std::uint64_t i = 0; i < 10; ++i) {
    clouds.push_back(random_shape(defaults.dataset.points, 600 + i));
    reps.push_back(encoder.encode(clouds.back()));
  }
  const char* block_names[] = {"C", "R", "Z"};
  for (int block = 0; block < 3; ++block) {
    double worst = 0.0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto& rep = reps[i];
      const ad::Tensor target = to_tensor(clouds[i]);
      const ad::ScalarFunction f = [&](ad::Tape& t, const ad::Var& x) {
        ad::Var c = t.constant(rep.centers), r = t.constant(rep.radii), z = t.constant(rep.features);
        (block == 0 ? c : block == 1 ? r : z) = x;
        const auto out = decoder.forward(t, nn::bind(t, decoder.params(), false), c, r, z, s);
        return metrics::chamfer(out.points, t.constant(target));
      };
      const ad::Tensor& at = block == 0 ? rep.centers : block == 1 ? rep.radii : rep.features;
      worst = std::max(worst, worst_of(f, {at}, 48, &excluded, &checked));
    }
    composite[std::string("chamfer(decode) d") + block_names[block]] = worst;
  }

  // The full attack objective, with a dropout mask, per perturbation block.
  const PointNetLite surrogate(8, 43);
  attack::AttackConfig ac = defaults.attack;
  ac.per_sphere = s;
  for (int block = 0; block < 3; ++block) {
    double worst = 0.0;
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto& rep = reps[i];
      const ad::Tensor anchor = to_tensor(decoder.decode(rep, s));
      const attack::Mask mask = attack::dropout_mask(rep.spheres(), 0.5, rng);
      const auto zero = attack::Perturbation::zeros_like(rep);
      const int label = predict(surrogate, clouds[i]);
      const ad::ScalarFunction f = [&](ad::Tape& t, const ad::Var& x) {
        attack::DeltaVars d{t.constant(zero.centers), t.constant(zero.radii), t.constant(zero.features)};
        (block == 0 ? d.centers : block == 1 ? d.radii : d.features) = x;
        return attack::attack_objective(t, surrogate, decoder, rep, clouds[i], label, ac, anchor, d, &mask)
            .total;
      };
      ad::Tensor at = block == 0 ? zero.centers : block == 1 ? zero.radii : zero.features;
      for (double& v : at.data()) v = rng.uniform(-0.02, 0.02);
      worst = std::max(worst, worst_of(f, {at}, 48, &excluded, &checked));
    }
    composite[std::string("attack objective d") + block_names[block]] = worst;
  }

  double comp_worst = 0.0;
  for (const auto& [name, v] : composite) comp_worst = std::max(comp_worst, v);
  const double secs = seconds_since(start);
  const bool mostly_smooth = excluded * 10 < checked;
  Outcome o;
  o.pass = prim_worst < 1e-4 && comp_worst < 1e-3 && mostly_smooth && secs < 120.0;
  o.detail = fmt("%zu primitives worst rel err %.2e (< 1e-4); %zu composites worst %.2e (< 1e-3); "
                 "%zu of %zu components at kinks; %.1f s (< 120 s)",
                 prim_count, prim_worst, composite.size(), comp_worst, excluded, checked + excluded, secs);
  return o;
}

// ---- 2 ---------------------------------------------------------------------------

Outcome encoder_convexity(const Pipeline& p) {
  const auto start = Clock::now();
  double worst_sum = 0.0, min_entry = INFINITY, min_radius = INFINITY, worst_hull = 0.0;
  ShapeSpec spec;
  spec.points = p.config.dataset.points;
  for (std::uint64_t i = 0; i < 100; ++i) {
    spec.shape = all_shape_classes()[i % kShapeClassCount];
    const PointCloud cloud = sample_shape(spec, 0, derive_seed(77, "convexity", i));
    ad::Tape tape;
    const auto e = p.mat->encoder.forward(tape, nn::bind(tape, p.mat->encoder.params(), false), cloud);
    const ad::Tensor& w = e.weights.value();
    const ad::Tensor& ps = e.sampled.value();
    const ad::Tensor& c = e.centers.value();
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double sum = 0.0;
      Vec3 combo{0, 0, 0};
      for (std::size_t r = 0; r < w.rows(); ++r) {
        sum += w(r, j);
        min_entry = std::min(min_entry, w(r, j));
        for (int k = 0; k < 3; ++k) combo[k] += w(r, j) * ps(r, k);
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) d2 += (combo[k] - c(j, k)) * (combo[k] - c(j, k));
      worst_hull = std::max(worst_hull, std::sqrt(d2));
    }
    for (double r : e.radii.value().data()) min_radius = std::min(min_radius, r);
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = worst_sum <= 1e-6 && min_entry >= 0.0 && min_radius >= 0.0 && worst_hull <= 1e-6 && secs < 60.0;
  o.detail = fmt("100 clouds: max |col sum - 1| %.1e, min W %.2e, min radius %.3e, "
                 "max |C - W^T P^s| %.1e; %.1f s (< 60 s)",
                 worst_sum, min_entry, min_radius, worst_hull, secs);
  return o;
}

// ---- 3 ---------------------------------------------------------------------------

Outcome decoder_semantics(const Pipeline& p) {
  const auto start = Clock::now();
  const auto rep = p.mat->encoder.encode(p.data.test.clouds.front());
  const auto first = to_tensor(p.mat->decoder.decode(rep, 8));
  const auto second = to_tensor(p.mat->decoder.decode(rep, 8));

  mat::Decoder fresh(p.config.mat.decoder, 999);
  nn::load_weights(fresh.params(), p.config.output_dir / "models" / "decoder.w");
  const auto reloaded = to_tensor(fresh.decode(rep, 8));
  const bool reproducible = first == second && first == reloaded;

  mat::DecoderConfig one_cfg = p.config.mat.decoder;
  one_cfg.interp_neighbors = 1;
  mat::Decoder one(one_cfg, 0);
  nn::load_weights(one.params(), p.config.output_dir / "models" / "decoder.w");
  ad::Tensor c1({1, 3}), r1({1, 1}), z1({1, rep.feature_dim()});
  for (int k = 0; k < 3; ++k) c1(0, k) = rep.centers(0, k);
  r1(0, 0) = rep.radii(0, 0);
  for (std::size_t k = 0; k < rep.feature_dim(); ++k) z1(0, k) = rep.features(0, k);
  ad::Tape tape;
  const auto out = one.forward(tape, nn::bind(tape, one.params(), false), tape.constant(c1),
                               tape.constant(r1), tape.constant(z1), 8);
  bool exact = out.interpolated.value().rows() == 8;
  for (std::size_t i = 0; i < out.interpolated.value().rows(); ++i)
    for (std::size_t k = 0; k < z1.cols(); ++k) exact = exact && out.interpolated.value()(i, k) == z1(0, k);

  const std::size_t count = first.rows();
  const double secs = seconds_since(start);
  Outcome o;
  o.pass = reproducible && exact && count == 1024 && rep.spheres() == 128;
  o.detail = fmt("bit-reproducible %s (incl. reloaded weights); single-sphere Y == z_1 %s; "
                 "n s = %zu x 8 = %zu points; %.1f s",
                 reproducible ? "yes" : "no", exact ? "exactly" : "NO", rep.spheres(), count, secs);
  return o;
}

// ---- 4 ---------------------------------------------------------------------------

Outcome victim_quality(const Pipeline& p) {
  Outcome o;
  o.pass = p.config.victims.epochs <= 60;
  std::string parts;
  for (const Classifier* m : {p.surrogate.get(), p.target.get()}) {
    const double acc = evaluate(*m, p.data.test);
    const double secs = p.victim_meta.at(m->arch()).at("train_seconds").get<double>();
    o.pass = o.pass && acc >= 95.0 && secs < 600.0;
    parts += fmt("%s %.2f%% (train %.0f s); ", m->arch().c_str(), acc, secs);
  }
  o.detail = parts + fmt("%zu epochs; need >= 95%% and < 600 s each", p.config.victims.epochs);
  return o;
}

// ---- 5 ---------------------------------------------------------------------------

Outcome resampling_fidelity(const Pipeline& p) {
  const auto start = Clock::now();
  Outcome o;
  o.pass = true;
  std::string parts;
  std::map<std::size_t, Dataset> resampled;
  for (std::size_t s : {8u, 4u})
    for (const auto& c : p.data.test.clouds) {
      PointCloud r = mat::resample_from_mat(p.mat->encoder, p.mat->decoder, c, s);
      r.set_label(*c.label());
      resampled[s].clouds.push_back(std::move(r));
    }
  for (const Classifier* m : {p.surrogate.get(), p.target.get()}) {
    const double base = evaluate(*m, p.data.test);
    const double a8 = evaluate(*m, resampled[8]);
    const double a4 = evaluate(*m, resampled[4]);
    o.pass = o.pass && base - a8 <= 3.0 && base - a4 <= 6.0;
    parts += fmt("%s orig %.1f, s=8 %.1f (drop %.1f, <= 3), s=4 %.1f (drop %.1f, <= 6); ",
                 m->arch().c_str(), base, a8, base - a8, a4, base - a4);
  }
  const double secs = seconds_since(start);
  o.pass = o.pass && secs < 300.0;
  o.detail = parts + fmt("%.1f s (< 300 s)", secs);
  return o;
}

// ---- 6-9 -------------------------------------------------------------------------

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string listing(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : "/") + fmt("%.1f", x);
  return out;
}

void run_attacks(Pipeline& p) {
  for (std::uint64_t seed : kSeeds) {
    ExperimentConfig c = p.config;
    c.pgd.seed = seed;
    const auto t = Clock::now();
    p.pgd_results[seed] = run_pgd(c, *p.surrogate, p.eval);
    p.pgd_seconds[seed] = seconds_since(t);
    std::printf("  [progress] pgd seed %llu: %.0f s\n", static_cast<unsigned long long>(seed), p.pgd_seconds[seed]);
    std::fflush(stdout);
  }
  for (double rho : {0.5, 0.0})
    for (std::uint64_t seed : kSeeds) {
      ExperimentConfig c = p.config;
      c.attack.seed = seed;
      c.attack.rho = rho;
      const auto t = Clock::now();
      p.mat_results[rho][seed] = run_mat_adv(c, *p.surrogate, *p.mat, p.eval);
      p.mat_seconds[rho][seed] = seconds_since(t);
      p.records[rho][seed] = evaluate_attacks(c, *p.surrogate, *p.target, p.eval, p.mat_results[rho][seed],
                                              p.pgd_results[seed]);
      std::printf("  [progress] mat-adv rho %.2f seed %llu: %.0f s\n", rho,
                  static_cast<unsigned long long>(seed), p.mat_seconds[rho][seed]);
      std::fflush(stdout);
    }
}

std::vector<double> asr_over_seeds(const Pipeline& p, double rho, const std::string& attack,
                                   const std::string& target, const std::string& defense) {
  std::vector<double> out;
  for (std::uint64_t seed : kSeeds) out.push_back(p.records.at(rho).at(seed).cell(attack, target, defense).asr);
  return out;
}

Outcome whitebox_strength(const Pipeline& p) {
  const std::string src = p.surrogate->arch();
  const double mat_asr = p.records.at(0.5).at(0).cell("mat-adv", src, "none").asr;
  const double pgd_asr = p.records.at(0.5).at(0).cell("pgd", src, "none").asr;
  const double mat_secs = p.mat_seconds.at(0.5).at(0), pgd_secs = p.pgd_seconds.at(0);
  Outcome o;
  o.pass = mat_asr >= 90.0 && pgd_asr >= 90.0 && mat_secs < 900.0 && pgd_secs < 900.0;
  o.detail = fmt("eps %.2f on %zu clouds (%zu clean-correct): mat-adv %.1f%% in %.0f s, pgd %.1f%% in %.0f s; "
                 "need >= 90%% and < 900 s",
                 p.config.attack.epsilon, p.eval.size(), p.records.at(0.5).at(0).source_clean_correct, mat_asr,
                 mat_secs, pgd_asr, pgd_secs);
  return o;
}

Outcome transfer_ordering(const Pipeline& p) {
  const std::string tgt = p.target->arch();
  const auto m = asr_over_seeds(p, 0.5, "mat-adv", tgt, "none");
  const auto g = asr_over_seeds(p, 0.5, "pgd", tgt, "none");
  Outcome o;
  o.pass = mean(m) > mean(g);
  o.detail = fmt("%s -> %s: mat-adv %.2f (%s) vs pgd %.2f (%s); need mat-adv > pgd",
                 p.surrogate->arch().c_str(), tgt.c_str(), mean(m), listing(m).c_str(), mean(g),
                 listing(g).c_str());
  return o;
}

Outcome dropout_ablation(const Pipeline& p) {
  const std::string tgt = p.target->arch();
  const auto with = asr_over_seeds(p, 0.5, "mat-adv", tgt, "none");
  const auto without = asr_over_seeds(p, 0.0, "mat-adv", tgt, "none");
  Outcome o;
  o.pass = mean(with) >= mean(without);
  o.detail = fmt("transfer rho=0.5 %.2f (%s) vs rho=0 %.2f (%s); need rho=0.5 >= rho=0", mean(with),
                 listing(with).c_str(), mean(without), listing(without).c_str());
  return o;
}

Outcome defense_ordering(const Pipeline& p) {
  const std::string src = p.surrogate->arch();
  Outcome o;
  o.pass = true;
  for (const std::string d : {"sor", "srs"}) {
    const auto m = asr_over_seeds(p, 0.5, "mat-adv", src, d);
    const auto g = asr_over_seeds(p, 0.5, "pgd", src, d);
    o.pass = o.pass && mean(m) >= mean(g);
    o.detail += fmt("%s: mat-adv %.2f (%s) vs pgd %.2f (%s); ", d.c_str(), mean(m), listing(m).c_str(), mean(g),
                    listing(g).c_str());
  }
  o.detail += "on the defended " + src + ", need mat-adv >= pgd";
  return o;
}

// ---- 10 --------------------------------------------------------------------------

double linf(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 3; ++k) m = std::max(m, std::abs(a[i][k] - b[i][k]));
  return m;
}

Outcome invariants(const Pipeline& p) {
  const std::size_t s = p.config.per_sphere();
  std::vector<PointCloud> anchors;
  for (const auto& c : p.eval.clouds) anchors.push_back(p.mat->decoder.decode(p.mat->encoder.encode(c), s));
  std::size_t total = 0, within = 0;
  for (const auto& [rho, by_seed] : p.mat_results)
    for (const auto& [seed, results] : by_seed)
      for (std::size_t i = 0; i < results.size(); ++i) {
        ++total;
        within += linf(results[i].adv_cloud, anchors[i]) <= p.config.attack.epsilon + 1e-9 ? 1 : 0;
      }
  for (const auto& [seed, results] : p.pgd_results)
    for (std::size_t i = 0; i < results.size(); ++i) {
      ++total;
      within += linf(results[i].adv_cloud, p.eval.clouds[i]) <= p.config.pgd.epsilon + 1e-9 ? 1 : 0;
    }

  // Instrumented iterations on a few clouds with the default configuration.
  std::size_t iterations = 0, masked_rows = 0, bad_rows = 0;
  attack::AttackConfig ac = p.config.attack;
  ac.per_sphere = s;
  ac.iterations = 20;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& cloud = p.eval.clouds[i];
    ac.seed = derive_seed(1, "instrumented", i);
    attack::mat_adv_attack(*p.surrogate, p.mat->encoder, p.mat->decoder, cloud, predict(*p.surrogate, cloud), ac,
                           [&](const attack::IterationTrace& t) {
                             ++iterations;
                             const auto& g = *t.gradient;
                             for (std::size_t r = 0; r < t.mask->size(); ++r) {
                               if ((*t.mask)[r]) continue;
                               ++masked_rows;
                               bool zero = true;
                               for (const ad::Tensor* b : {&g.centers, &g.radii, &g.features})
                                 for (std::size_t c = 0; c < b->cols(); ++c) zero = zero && (*b)(r, c) == 0.0;
                               bad_rows += zero ? 0 : 1;
                             }
                           });
  }

  Rng rng(derive_seed(1, "mask-counts"));
  std::size_t draws = 0, wrong_counts = 0;
  const std::size_t n = p.config.mat.encoder.spheres;
  for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto expected = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
    for (int d = 0; d < 1000; ++d) {
      const auto m = attack::dropout_mask(n, rho, rng);
      ++draws;
      wrong_counts += static_cast<std::size_t>(std::count(m.begin(), m.end(), 0)) == expected ? 0 : 1;
    }
  }

  Outcome o;
  o.pass = total > 0 && within == total && iterations > 0 && masked_rows > 0 && bad_rows == 0 && wrong_counts == 0;
  o.detail = fmt("budget holds on %zu/%zu attacks; %zu masked rows over %zu instrumented iterations, %zu with "
                 "nonzero gradient; mask count wrong in %zu of %zu draws",
                 within, total, masked_rows, iterations, bad_rows, wrong_counts, draws);
  return o;
}

// ---- 11 --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// The full matrix at reduced scale: all 8 classes and both victims, fewer
// clouds and epochs.
ExperimentConfig reduced_config(const ExperimentConfig& base, const fs::path& out) {
  ExperimentConfig c = base;
  c.output_dir = out;
  c.dataset.train_per_class = 6;
  c.dataset.test_per_class = 2;
  c.victims.epochs = 3;
  c.mat.pretrain_epochs = 1;
  c.mat.decoder_epochs = 1;
  c.mat.finetune_epochs = 1;
  c.attack.iterations = 10;
  c.pgd.iterations = 10;
  return c;
}

Outcome reproducibility(const Pipeline& p, const fs::path& cache) {
  const auto start = Clock::now();
  const fs::path a = cache / "repro_a", b = cache / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_experiment(reduced_config(p.config, a));
  run_experiment(reduced_config(p.config, b));
  const bool csv = slurp(a / "report.csv") == slurp(b / "report.csv");
  const bool js = slurp(a / "report.json") == slurp(b / "report.json");
  const auto size = slurp(a / "report.csv").size();
  Outcome o;
  o.pass = csv && js && size > 0;
  o.detail = fmt("two fresh runs: report.csv %s (%zu bytes), report.json %s; %.0f s", csv ? "identical" : "DIFFER",
                 size, js ? "identical" : "DIFFER", seconds_since(start));
  return o;
}

const char* kNames[] = {"",
                        "autodiff soundness",
                        "encoder convexity",
                        "decoder determinism and interpolation",
                        "victim quality",
                        "MAT resampling fidelity",
                        "white-box attack strength",
                        "transferability ordering",
                        "dropout ablation",
                        "defense ordering",
                        "budget and mask invariants",
                        "end-to-end reproducibility"};

}  // namespace

int main(int argc, char** argv) {
  ad::retain_freed_memory();
  CLI::App app{"Acceptance criteria"};
  fs::path cache = "acceptance_runs";
  std::string config_path;
  app.add_option("--cache", cache, "Directory for trained models and run outputs");
  app.add_option("-c,--config", config_path, "Config to run instead of the defaults")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  std::map<int, Outcome> outcomes;
  auto record = [&](int id, const std::function<Outcome()>& fn) {
    try {
      outcomes[id] = fn();
    } catch (const std::exception& e) {
      outcomes[id] = {false, std::string("error: ") + e.what()};
    }
    std::printf("  [progress] criterion %d done\n", id);
    std::fflush(stdout);
  };

  record(1, autodiff_soundness);

  Pipeline p;
  p.config = config_path.empty() ? ExperimentConfig() : load_config(config_path);
  p.config.output_dir = cache / "main";
  bool ready = false;
  try {
    fs::create_directories(p.config.output_dir);
    p.data = prepare_data(p.config);
    p.surrogate = prepare_victim(p.config, p.config.victims.surrogate, p.data);
    p.target = prepare_victim(p.config, p.config.victims.target, p.data);
    p.mat = std::make_unique<MatModel>(prepare_mat(p.config, p.data));
    for (const auto& arch : {p.config.victims.surrogate, p.config.victims.target})
      p.victim_meta[arch] = read_json(p.config.output_dir / "models" / (arch + ".json"));
    p.mat_meta = read_json(p.config.output_dir / "models" / "mat.json");
    p.eval = evaluation_set(p.config, p.data);
    std::printf("  [progress] models ready (mat trained in %.0f s)\n", p.mat_meta.value("train_seconds", 0.0));
    std::fflush(stdout);
    ready = true;
  } catch (const std::exception& e) {
    for (int id = 2; id <= 10; ++id) outcomes[id] = {false, std::string("pipeline failed: ") + e.what()};
  }

  if (ready) {
    record(2, [&] { return encoder_convexity(p); });
    record(3, [&] { return decoder_semantics(p); });
    record(4, [&] { return victim_quality(p); });
    record(5, [&] { return resampling_fidelity(p); });
    bool attacked = false;
    try {
      run_attacks(p);
      attacked = true;
    } catch (const std::exception& e) {
      for (int id = 6; id <= 10; ++id) outcomes[id] = {false, std::string("attack failed: ") + e.what()};
    }
    if (attacked) {
      record(6, [&] { return whitebox_strength(p); });
      record(7, [&] { return transfer_ordering(p); });
      record(8, [&] { return dropout_ablation(p); });
      record(9, [&] { return defense_ordering(p); });
      record(10, [&] { return invariants(p); });
      json summary;
      for (const auto& [rho, by_seed] : p.records)
        for (const auto& [seed, rec] : by_seed) summary[fmt("rho=%.2f", rho)][std::to_string(seed)] = rec;
      std::ofstream(cache / "attack_records.json") << summary.dump(2) << '\n';
    }
  }
  record(11, [&] { return reproducibility(p, cache); });

  int failed = 0;
  std::printf("\n");
  for (int id = 1; id <= 11; ++id) {
    const Outcome& o = outcomes[id];
    failed += o.pass ? 0 : 1;
    std::printf("%s  %2d  %s: %s\n", o.pass ? "PASS" : "FAIL", id, kNames[id], o.detail.c_str());
  }
  std::printf("\n%d of 11 criteria passed\n", 11 - failed);
  return failed == 0 ? 0 : 1;
}
