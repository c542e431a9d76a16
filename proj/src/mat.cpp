#include "matadv/mat.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "matadv/convert.hpp"
#include "matadv/metrics.hpp"
#include "matadv/optim.hpp"
#include "matadv/rng.hpp"

namespace matadv::mat {

MATRep::MATRep(ad::Tensor c, ad::Tensor r, ad::Tensor z)
    : centers(std::move(c)), radii(std::move(r)), features(std::move(z)) {
  const std::size_t n = centers.rank() == 2 ? centers.rows() : 0;
  if (n == 0 || centers.cols() != 3) {
    throw ad::ShapeError("MATRep: centers must be n x 3, got " + ad::to_string(centers.shape()));
  }
  if (radii.shape() != ad::Shape{n, 1}) {
    throw ad::ShapeError("MATRep: radii must be n x 1, got " + ad::to_string(radii.shape()));
  }
  if (features.rank() != 2 || features.rows() != n) {
    throw ad::ShapeError("MATRep: features must have n rows, got " +
                         ad::to_string(features.shape()));
  }
  if (!centers.all_finite() || !radii.all_finite() || !features.all_finite()) {
    throw ad::NonFiniteError("MATRep: non-finite value");
  }
  for (double r : radii.data())
    if (r < 0.0) throw std::invalid_argument("MATRep: negative radius");
}

namespace {

nlohmann::json rows_to_json(const ad::Tensor& t) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

ad::Tensor rows_from_json(const nlohmann::json& j, const char* key) {
  const auto& rows = j.at(key);
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument(std::string(key) + " is empty");
  const std::size_t cols = rows.at(0).size();
  ad::Tensor t({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw std::invalid_argument(std::string(key) + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = rows[r][c].get<double>();
  }
  return t;
}

}  // namespace

void to_json(nlohmann::json& j, const MATRep& m) {
  j = nlohmann::json::object();
  j["centers"] = rows_to_json(m.centers);
  j["radii"] = m.radii.data();
  j["features"] = rows_to_json(m.features);
}

void from_json(const nlohmann::json& j, MATRep& m) {
  const auto radii = j.at("radii").get<std::vector<double>>();
  m = MATRep(rows_from_json(j, "centers"), ad::Tensor({radii.size(), 1}, radii),
             rows_from_json(j, "features"));
}

// ---- encoder -------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.spheres == 0 || config.sample_size == 0 || config.neighbors == 0) {
    throw std::invalid_argument("Encoder: sizes must be positive");
  }
  Rng rng(seed);
  // grouped input is [neighbor - anchor, anchor]
  backbone_.push_back(nn::add_dense(params_, "backbone.0", 6, 32, rng));
  backbone_.push_back(nn::add_dense(params_, "backbone.1", 32, config.feature_dim, rng));
  head_.push_back(nn::add_dense(params_, "head.0", config.feature_dim, config.head_hidden, rng));
  head_.push_back(nn::add_dense(params_, "head.1", config.head_hidden, config.spheres, rng));
}

EncodedVars Encoder::forward(ad::Tape& tape, const nn::BoundParams& p,
                             const PointCloud& cloud) const {
  if (cloud.size() < config_.sample_size) {
    throw std::invalid_argument("Encoder: cloud has " + std::to_string(cloud.size()) +
                                " points, needs at least " + std::to_string(config_.sample_size));
  }
  const IndexSet idx = farthest_point_sample(cloud, config_.sample_size, config_.fps_seed);
  const PointCloud sampled = cloud.select(idx);
  const std::size_t k = std::min(config_.neighbors, cloud.size());
  const IndexMatrix groups = knn(sampled.points(), cloud.points(), k);
  std::vector<std::size_t> anchor(sampled.size() * k);
  for (std::size_t i = 0; i < anchor.size(); ++i) anchor[i] = i / k;

  EncodedVars out;
  const ad::Var all = tape.constant(to_tensor(cloud));
  out.sampled = tape.constant(to_tensor(sampled));
  const ad::Var anchors = ad::gather_rows(out.sampled, anchor);
  const ad::Var grouped = ad::concat_cols(ad::gather_rows(all, groups.data) - anchors, anchors);
  out.features = ad::segment_max(nn::apply_mlp(backbone_, p, grouped, true), k);
  out.weights = ad::column_softmax(nn::apply_mlp(head_, p, out.features, false));

  const ad::Var wt = ad::transpose(out.weights);
  out.centers = ad::matmul(wt, out.sampled);
  out.sphere_features = ad::matmul(wt, out.features);
  const ad::Var nearest = ad::sqrt(ad::min(ad::pairwise_sqdist(out.sampled, out.centers), 1));
  out.radii = ad::matmul(wt, nearest);
  return out;
}

MATRep Encoder::encode(const PointCloud& cloud) const {
  ad::Tape tape;
  const EncodedVars e = forward(tape, nn::bind(tape, params_, false), cloud);
  ad::Tensor radii = e.radii.value();
  // W and D are nonnegative, so only rounding could dip below zero
  for (double& r : radii.data()) r = std::max(r, 0.0);
  return MATRep(e.centers.value(), std::move(radii), e.sphere_features.value());
}

// ---- decoder -------------------------------------------------------------------

ad::Var sphere_samples(const ad::Var& centers, const ad::Var& radii, std::size_t per_sphere) {
  if (per_sphere == 0) throw std::invalid_argument("sphere_samples: per_sphere must be positive");
  const std::size_t n = centers.rows();
  if (radii.shape() != ad::Shape{n, 1}) {
    throw ad::ShapeError("sphere_samples: radii must be n x 1, got " + ad::to_string(radii.shape()));
  }
  const auto dirs = fibonacci_directions(per_sphere);
  std::vector<std::size_t> owner(n * per_sphere);
  ad::Tensor lattice({n * per_sphere, 3});
  for (std::size_t i = 0; i < owner.size(); ++i) {
    owner[i] = i / per_sphere;
    for (std::size_t c = 0; c < 3; ++c) lattice(i, c) = dirs[i % per_sphere][c];
  }
  ad::Tape& tape = *centers.tape();
  const ad::Var r = ad::relu(radii);
  return ad::gather_rows(centers, owner) +
         ad::gather_rows(r, owner) * tape.constant(std::move(lattice));
}

Decoder::Decoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.interp_neighbors == 0) throw std::invalid_argument("Decoder: k_i must be positive");
  Rng rng(seed);
  const std::size_t in = 3 + config.feature_dim;
  // small output layers keep the untrained decoder close to the lattice samples
  stage1_.push_back(nn::add_dense(params_, "refine1.0", in, config.hidden, rng));
  stage1_.push_back(nn::add_dense(params_, "refine1.1", config.hidden, 3, rng, 0.1));
  stage2_.push_back(nn::add_dense(params_, "refine2.0", in, config.hidden, rng));
  stage2_.push_back(nn::add_dense(params_, "refine2.1", config.hidden, 3, rng, 0.1));
}

DecodedVars Decoder::forward(ad::Tape&, const nn::BoundParams& p, const ad::Var& centers,
                             const ad::Var& radii, const ad::Var& features,
                             std::size_t per_sphere, DecodeMode mode) const {
  const std::size_t n = centers.rows();
  const std::size_t k = config_.interp_neighbors;
  if (k > n) {
    throw std::invalid_argument("Decoder: k_i=" + std::to_string(k) + " exceeds sphere count " +
                                std::to_string(n));
  }
  if (features.rows() != n || features.cols() != config_.feature_dim) {
    throw ad::ShapeError("Decoder: features must be " + std::to_string(n) + " x " +
                         std::to_string(config_.feature_dim) + ", got " +
                         ad::to_string(features.shape()));
  }
  DecodedVars out;
  out.surface = sphere_samples(centers, radii, per_sphere);
  const std::size_t m = out.surface.rows();
  const IndexMatrix near = knn(to_points(out.surface.value()), to_points(centers.value()), k);
  std::vector<std::size_t> anchor(m * k);
  for (std::size_t i = 0; i < anchor.size(); ++i) anchor[i] = i / k;

  const ad::Var diff = ad::gather_rows(out.surface, anchor) - ad::gather_rows(centers, near.data);
  const ad::Var dist = ad::sqrt(ad::sum(ad::square(diff), 1));
  const ad::Var w = ad::softmax(ad::reshape(-dist, {m, k}), 1);
  out.interpolated = ad::segment_sum(
      ad::gather_rows(features, near.data) * ad::reshape(w, {m * k, 1}), k);

  if (mode == DecodeMode::raw_spheres) {
    out.points = out.surface;
    return out;
  }
  const ad::Var stage1 =
      out.surface + nn::apply_mlp(stage1_, p, ad::concat_cols(out.surface, out.interpolated), false);
  out.points = stage1 + nn::apply_mlp(stage2_, p, ad::concat_cols(stage1, out.interpolated), false);
  return out;
}

PointCloud Decoder::decode(const MATRep& rep, std::size_t per_sphere, DecodeMode mode) const {
  ad::Tape tape;
  const auto p = nn::bind(tape, params_, false);
  const DecodedVars d = forward(tape, p, tape.constant(rep.centers), tape.constant(rep.radii),
                                tape.constant(rep.features), per_sphere, mode);
  return to_cloud(d.points.value());
}

// ---- training ------------------------------------------------------------------

ad::Var reconstruction_loss(const ad::Var& reconstructed, const ad::Var& target,
                            const MatTrainOptions& options) {
  ad::Var loss = options.chamfer_weight * metrics::chamfer(reconstructed, target);
  if (options.repulsion_weight != 0.0) {
    loss = loss + options.repulsion_weight *
                      metrics::repulsion_loss(reconstructed, options.repulsion_neighbors,
                                              options.repulsion_bandwidth);
  }
  return loss;
}

namespace {

using SampleLoss = std::function<ad::Var(ad::Tape&, const std::vector<nn::BoundParams>&,
                                         std::size_t index)>;

// Minibatch Adam over several parameter stores sharing one objective.
MatHistory run_training(std::vector<nn::ParameterStore*> stores, std::size_t samples,
                        const MatTrainOptions& options, const SampleLoss& sample_loss) {
  if (samples == 0) throw std::invalid_argument("MAT training: empty dataset");
  if (options.batch == 0) throw std::invalid_argument("MAT training: batch must be positive");
  MatHistory history;
  std::vector<ad::AdamState> states(stores.size(), ad::AdamState(ad::AdamOptions{.lr = options.lr}));
  Rng rng(options.seed);
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < samples; start += options.batch) {
      const std::size_t end = std::min(samples, start + options.batch);
      std::vector<std::vector<ad::Tensor>> total(stores.size());
      for (std::size_t b = start; b < end; ++b) {
        ad::Tape tape;
        std::vector<nn::BoundParams> bound;
        for (auto* s : stores) bound.push_back(nn::bind(tape, *s, true));
        const ad::Var loss = sample_loss(tape, bound, order[b]);
        loss_sum += loss.value().item();
        const ad::Gradients grads = tape.backward(loss);
        for (std::size_t s = 0; s < stores.size(); ++s) {
          auto g = nn::collect_grads(grads, bound[s]);
          if (total[s].empty()) {
            total[s] = std::move(g);
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) total[s][i] += g[i];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t s = 0; s < stores.size(); ++s) {
        for (auto& t : total[s])
          for (double& x : t.data()) x *= inv;
        ad::adam_step(stores[s]->values(), total[s], states[s]);
      }
    }
    history.loss.push_back(loss_sum / static_cast<double>(samples));
  }
  return history;
}

}  // namespace

MatHistory pretrain_encoder(Encoder& encoder, const Dataset& data, const MatTrainOptions& options) {
  return run_training({&encoder.params()}, data.size(), options,
                      [&](ad::Tape& tape, const std::vector<nn::BoundParams>& p, std::size_t i) {
                        const PointCloud& cloud = data.clouds[i];
                        const EncodedVars e = encoder.forward(tape, p[0], cloud);
                        const ad::Var surface =
                            sphere_samples(e.centers, e.radii, options.per_sphere);
                        const ad::Var target = tape.constant(to_tensor(cloud));
                        return metrics::chamfer(surface, target) -
                               options.radius_weight * ad::mean_all(e.radii);
                      });
}

MatHistory train_decoder(const Encoder& encoder, Decoder& decoder, const Dataset& data,
                         const MatTrainOptions& options) {
  // the encoder is frozen, so every representation can be computed up front
  std::vector<MATRep> reps;
  if (options.epochs > 0) {
    reps.reserve(data.size());
    for (const auto& c : data.clouds) reps.push_back(encoder.encode(c));
  }
  return run_training({&decoder.params()}, data.size(), options,
                      [&](ad::Tape& tape, const std::vector<nn::BoundParams>& p, std::size_t i) {
                        const MATRep& rep = reps[i];
                        const DecodedVars d = decoder.forward(
                            tape, p[0], tape.constant(rep.centers), tape.constant(rep.radii),
                            tape.constant(rep.features), options.per_sphere);
                        return reconstruction_loss(d.points,
                                                   tape.constant(to_tensor(data.clouds[i])),
                                                   options);
                      });
}

MatHistory finetune_joint(Encoder& encoder, Decoder& decoder, const Dataset& data,
                          const MatTrainOptions& options) {
  return run_training({&encoder.params(), &decoder.params()}, data.size(), options,
                      [&](ad::Tape& tape, const std::vector<nn::BoundParams>& p, std::size_t i) {
                        const PointCloud& cloud = data.clouds[i];
                        const EncodedVars e = encoder.forward(tape, p[0], cloud);
                        const DecodedVars d =
                            decoder.forward(tape, p[1], e.centers, e.radii, e.sphere_features,
                                            options.per_sphere);
                        return reconstruction_loss(d.points, tape.constant(to_tensor(cloud)),
                                                   options);
                      });
}

double reconstruction_chamfer(const Encoder& encoder, const Decoder& decoder, const Dataset& data,
                              std::size_t per_sphere) {
  if (data.empty()) throw std::invalid_argument("reconstruction_chamfer: empty dataset");
  double total = 0.0;
  for (const auto& c : data.clouds)
    total += chamfer(decoder.decode(encoder.encode(c), per_sphere), c);
  return total / static_cast<double>(data.size());
}

PointCloud resample_from_mat(const Encoder& encoder, const Decoder& decoder,
                             const PointCloud& cloud, std::size_t per_sphere, DecodeMode mode) {
  PointCloud out = decoder.decode(encoder.encode(cloud), per_sphere, mode);
  out.set_label(cloud.label());
  return out;
}

}  // namespace matadv::mat
