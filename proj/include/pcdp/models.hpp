// SPDX-License-Identifier: Apache-2.0
//
// Softmax classifiers with exact per-sample gradients from hand-written
// backward passes: multinomial logistic regression and a one-hidden-layer
// ReLU MLP. Parameters live in one flat vector described by a layer layout.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pcdp::models {

struct Dataset {
  std::size_t features = 0;
  int classes = 0;
  std::vector<double> x;  // N x features, row-major
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * features, features}; }
};

// Copy of the rows named by `indices`, in that order.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);
// Throws std::invalid_argument if shapes are inconsistent or a label is out of range.
void validate(const Dataset& data);

struct LayerInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  std::vector<std::size_t> shape;
};

struct ModelLayout {
  std::vector<LayerInfo> layers;
  std::size_t dim = 0;

  const LayerInfo& layer(const std::string& name) const;
};

enum class ModelKind { kLogistic, kMlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelParams {
  ModelLayout layout;
  std::vector<double> values;

  std::span<double> slice(std::size_t layer) {
    return {values.data() + layout.layers[layer].offset, layout.layers[layer].length};
  }
  std::span<const double> slice(std::size_t layer) const {
    return {values.data() + layout.layers[layer].offset, layout.layers[layer].length};
  }
};

// B x d matrix of per-sample gradients plus the per-sample losses.
struct GradientMatrix {
  std::size_t batch = 0;
  std::size_t dim = 0;
  std::vector<double> rows;
  std::vector<double> losses;

  std::span<double> row(std::size_t i) { return {rows.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

class Model {
 public:
  // Logistic regression weights are stored classes x features, row-major.
  // hidden == 0 selects logistic.
  static Model logistic(std::size_t features, int classes);
  static Model mlp(std::size_t features, std::size_t hidden, int classes);
  static Model make(ModelKind kind, std::size_t features, std::size_t hidden, int classes);

  ModelKind kind() const { return kind_; }
  std::size_t features() const { return features_; }
  std::size_t hidden() const { return hidden_; }
  int classes() const { return classes_; }
  const ModelLayout& layout() const { return layout_; }
  std::size_t dim() const { return layout_.dim; }

  // Logistic weights ~ N(0, 0.01^2); MLP weights ~ N(0, 2/fan_in) for the
  // hidden layer and N(0, 1/fan_in) for the output layer. Biases start at 0.
  ModelParams init_params(std::uint64_t seed) const;
  ModelParams zeros() const;

  // Row i of the result is the gradient of the cross-entropy of sample
  // indices[i] at `params`.
  GradientMatrix per_sample_grads(const ModelParams& params, const Dataset& data,
                                  std::span<const std::size_t> indices) const;
  GradientMatrix per_sample_grads(const ModelParams& params, const Dataset& data) const;

  // Loss of one sample; gradient written to `grad` when non-empty.
  double sample_loss_grad(std::span<const double> params, std::span<const double> x, int label,
                          std::span<double> grad) const;

  // Mean cross-entropy and top-1 accuracy (argmax ties go to the lowest class).
  Evaluation evaluate(const ModelParams& params, const Dataset& data) const;

  // Class scores before the softmax.
  std::vector<double> logits(std::span<const double> params, std::span<const double> x) const;

 private:
  Model(ModelKind kind, std::size_t features, std::size_t hidden, int classes);
  void check_params(const ModelParams& params) const;
  void check_data(const Dataset& data) const;

  ModelKind kind_;
  std::size_t features_;
  std::size_t hidden_;
  int classes_;
  ModelLayout layout_;
};

}  // namespace pcdp::models
