#include "matadv/victims.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "matadv/convert.hpp"
#include "matadv/optim.hpp"
#include "matadv/rng.hpp"

namespace matadv {

PointNetLite::PointNetLite(std::size_t classes, std::uint64_t seed) : Classifier(classes) {
  Rng rng(seed);
  point_mlp_.push_back(nn::add_dense(params_, "point.0", 3, 64, rng));
  point_mlp_.push_back(nn::add_dense(params_, "point.1", 64, 128, rng));
  point_mlp_.push_back(nn::add_dense(params_, "point.2", 128, 256, rng));
  head_.push_back(nn::add_dense(params_, "head.0", 256, 128, rng));
  head_.push_back(nn::add_dense(params_, "head.1", 128, classes, rng));
}

ad::Var PointNetLite::forward(ad::Tape&, const nn::BoundParams& p, const ad::Var& points) const {
  ad::Var per_point = nn::apply_mlp(point_mlp_, p, points, true);
  ad::Var global = ad::max(per_point, 0);  // 1 x 256
  return nn::apply_mlp(head_, p, global, false);
}

EdgeConvLite::EdgeConvLite(std::size_t classes, std::size_t k, std::uint64_t seed)
    : Classifier(classes), k_(k) {
  if (k == 0) throw std::invalid_argument("EdgeConvLite: k must be positive");
  Rng rng(seed);
  edge_mlp_.push_back(nn::add_dense(params_, "edge.0", 6, 64, rng));
  edge_mlp_.push_back(nn::add_dense(params_, "edge.1", 64, 128, rng));
  head_ = nn::add_dense(params_, "head", 128, classes, rng);
}

ad::Var EdgeConvLite::forward(ad::Tape&, const nn::BoundParams& p, const ad::Var& points) const {
  const std::size_t n = points.rows();
  if (n < k_) {
    throw std::invalid_argument("EdgeConvLite: cloud has " + std::to_string(n) +
                                " points, needs at least k=" + std::to_string(k_));
  }
  const auto pts = to_points(points.value());
  const IndexMatrix nn_idx = knn(pts, pts, k_);
  std::vector<std::size_t> anchor(n * k_);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k_; ++j) anchor[i * k_ + j] = i;

  ad::Var center = ad::gather_rows(points, anchor);
  ad::Var offset = ad::gather_rows(points, nn_idx.data) - center;
  ad::Var edges = nn::apply_mlp(edge_mlp_, p, ad::concat_cols(center, offset), true);
  ad::Var local = ad::segment_max(edges, k_);  // n x 128
  ad::Var global = ad::max(local, 0);
  return nn::apply(head_, p, global);
}

std::unique_ptr<Classifier> make_classifier(const std::string& arch, std::size_t classes,
                                            std::uint64_t seed) {
  if (arch == "pointnet") return std::make_unique<PointNetLite>(classes, seed);
  if (arch == "edgeconv") return std::make_unique<EdgeConvLite>(classes, kDefaultEdgeNeighbors, seed);
  throw std::invalid_argument("unknown classifier architecture '" + arch + "'");
}

ad::Var forward_frozen(const Classifier& model, ad::Tape& tape, const ad::Var& points) {
  return model.forward(tape, nn::bind(tape, model.params(), false), points);
}

ad::Tensor logits(const Classifier& model, const PointCloud& cloud) {
  ad::Tape tape;
  return forward_frozen(model, tape, tape.constant(to_tensor(cloud))).value();
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty span");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

int predict(const Classifier& model, const PointCloud& cloud) {
  return argmax(logits(model, cloud).data());
}

std::vector<int> predict_all(const Classifier& model, const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& c : data.clouds) out.push_back(predict(model, c));
  return out;
}

double evaluate(const Classifier& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto labels = data.labels();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict(model, data.clouds[i]) == labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

SampleGradient sample_gradient(const Classifier& model, const PointCloud& cloud) {
  if (!cloud.label()) throw std::invalid_argument("training requires labeled clouds");
  const int label = *cloud.label();
  ad::Tape tape;
  nn::BoundParams bound = nn::bind(tape, model.params(), true);
  ad::Var z = model.forward(tape, bound, tape.constant(to_tensor(cloud)));
  ad::Var loss = ad::softmax_cross_entropy(z, std::span<const int>(&label, 1));
  SampleGradient out;
  out.loss = loss.value().item();
  out.correct = argmax(z.value().data()) == label;
  out.grads = nn::collect_grads(tape.backward(loss), bound);
  return out;
}

TrainHistory train(Classifier& model, const Dataset& train_set, const Dataset& test_set,
                   const TrainOptions& options) {
  return train(model, train_set, test_set, options, BatchHook{});
}

TrainHistory train(Classifier& model, const Dataset& train_set, const Dataset& test_set,
                   const TrainOptions& options, const BatchHook& hook) {
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  const auto labels = train_set.labels();  // throws on unlabeled data
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes()) {
      throw std::invalid_argument("train: label outside the model's class range");
    }
  if (options.batch == 0) throw std::invalid_argument("train: batch must be positive");

  TrainHistory history;
  ad::AdamState state(ad::AdamOptions{.lr = options.lr});
  Rng rng(options.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    if (options.cosine_decay) {
      const double phase = static_cast<double>(epoch) / static_cast<double>(options.epochs);
      state.options.lr = 0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * phase));
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size();
         start += options.batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + options.batch);
      std::vector<PointCloud> batch;
      batch.reserve(end - start);
      for (std::size_t b = start; b < end; ++b) batch.push_back(train_set.clouds[order[b]]);
      if (hook) hook(model, batch, epoch, batch_index);
      std::vector<ad::Tensor> total;
      for (const PointCloud& cloud : batch) {
        SampleGradient g = sample_gradient(model, cloud);
        loss_sum += g.loss;
        correct += g.correct ? 1 : 0;
        if (total.empty()) {
          total = std::move(g.grads);
        } else {
          for (std::size_t i = 0; i < total.size(); ++i) total[i] += g.grads[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& t : total)
        for (double& x : t.data()) x *= inv;
      ad::adam_step(model.params().values(), total, state);
    }
    history.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    history.train_accuracy.push_back(100.0 * static_cast<double>(correct) /
                                     static_cast<double>(order.size()));
    history.test_accuracy.push_back(test_set.empty() ? 0.0 : evaluate(model, test_set));
  }
  return history;
}

}  // namespace matadv
