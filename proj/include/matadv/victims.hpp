#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "matadv/autodiff.hpp"
#include "matadv/dataset.hpp"
#include "matadv/geom.hpp"
#include "matadv/nn.hpp"

namespace matadv {

/// Point-cloud classifier with logits differentiable w.r.t. input coordinates.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string arch() const = 0;
  /// points: N x 3. Returns 1 x Z logits.
  virtual ad::Var forward(ad::Tape& tape, const nn::BoundParams& params,
                          const ad::Var& points) const = 0;
  virtual std::size_t min_points() const { return 1; }
  virtual std::unique_ptr<Classifier> clone() const = 0;

  std::size_t num_classes() const { return classes_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

 protected:
  explicit Classifier(std::size_t classes) : classes_(classes) {}

  nn::ParameterStore params_;
  std::size_t classes_;
};

/// Shared per-point MLP 3-64-128-256, global max pool, head 256-128-Z.
class PointNetLite final : public Classifier {
 public:
  PointNetLite(std::size_t classes, std::uint64_t seed);

  std::string arch() const override { return "pointnet"; }
  ad::Var forward(ad::Tape& tape, const nn::BoundParams& params,
                  const ad::Var& points) const override;
  std::unique_ptr<Classifier> clone() const override {
    return std::make_unique<PointNetLite>(*this);
  }

  /// Index of the final classifier layer (zeroing it zeroes the logits).
  const nn::Dense& output_layer() const { return head_[1]; }

 private:
  std::vector<nn::Dense> point_mlp_;
  std::vector<nn::Dense> head_;
};

/// Edge MLP on [x_i, x_j - x_i] over k nearest neighbors (6-64-128), max over
/// the neighborhood, global max pool, linear head 128-Z.
class EdgeConvLite final : public Classifier {
 public:
  EdgeConvLite(std::size_t classes, std::size_t k, std::uint64_t seed);

  std::string arch() const override { return "edgeconv"; }
  ad::Var forward(ad::Tape& tape, const nn::BoundParams& params,
                  const ad::Var& points) const override;
  std::size_t min_points() const override { return k_; }
  std::unique_ptr<Classifier> clone() const override {
    return std::make_unique<EdgeConvLite>(*this);
  }
  std::size_t k() const { return k_; }
  const nn::Dense& output_layer() const { return head_; }

 private:
  std::size_t k_;
  std::vector<nn::Dense> edge_mlp_;
  nn::Dense head_;
};

inline constexpr std::size_t kDefaultEdgeNeighbors = 16;

/// "pointnet" or "edgeconv".
std::unique_ptr<Classifier> make_classifier(const std::string& arch, std::size_t classes,
                                            std::uint64_t seed);

/// Binds frozen parameters and runs forward on `points`.
ad::Var forward_frozen(const Classifier& model, ad::Tape& tape, const ad::Var& points);

ad::Tensor logits(const Classifier& model, const PointCloud& cloud);
/// Argmax with ties to the lowest index.
int argmax(std::span<const double> values);
int predict(const Classifier& model, const PointCloud& cloud);
std::vector<int> predict_all(const Classifier& model, const Dataset& data);
/// Percentage of argmax-correct predictions.
double evaluate(const Classifier& model, const Dataset& data);

struct TrainOptions {
  std::size_t epochs = 60;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  /// Anneal the step size from lr toward zero over the epochs (half cosine).
  bool cosine_decay = true;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> test_accuracy;
};

/// Adaptive-moment minibatch training on cross-entropy. Batch gradients are
/// reduced in sample order, so results are reproducible per seed.
TrainHistory train(Classifier& model, const Dataset& train_set, const Dataset& test_set,
                   const TrainOptions& options);

/// Sees each minibatch before its gradient is taken and may replace clouds
/// in it (labels must be kept). `model` is the current state.
using BatchHook = std::function<void(const Classifier& model, std::vector<PointCloud>& batch,
                                     std::size_t epoch, std::size_t batch_index)>;
TrainHistory train(Classifier& model, const Dataset& train_set, const Dataset& test_set,
                   const TrainOptions& options, const BatchHook& hook);

/// Gradient of the mean cross-entropy of one labeled cloud w.r.t. every
/// parameter; also reports the loss and whether the prediction was correct.
struct SampleGradient {
  std::vector<ad::Tensor> grads;
  double loss = 0.0;
  bool correct = false;
};
SampleGradient sample_gradient(const Classifier& model, const PointCloud& cloud);

}  // namespace matadv
