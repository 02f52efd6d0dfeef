// SPDX-License-Identifier: Apache-2.0
#include "pcdp/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pcdp/rng.hpp"

namespace pcdp::models {

namespace {

ModelLayout build_layout(std::vector<std::pair<std::string, std::vector<std::size_t>>> specs) {
  ModelLayout layout;
  for (auto& [name, shape] : specs) {
    LayerInfo info;
    info.name = name;
    info.offset = layout.dim;
    info.length = 1;
    for (std::size_t s : shape) info.length *= s;
    info.shape = shape;
    layout.dim += info.length;
    layout.layers.push_back(std::move(info));
  }
  return layout;
}

// Softmax in place; returns log-sum-exp of the inputs.
double softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (auto& v : z) v = std::exp(v - lse);
  return lse;
}

std::size_t argmax_lowest(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < z.size(); ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

}  // namespace

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.features = data.features;
  out.classes = data.classes;
  out.x.reserve(indices.size() * data.features);
  out.y.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= data.size()) throw std::out_of_range("subset: index out of range");
    const auto r = data.row(i);
    out.x.insert(out.x.end(), r.begin(), r.end());
    out.y.push_back(data.y[i]);
  }
  return out;
}

void validate(const Dataset& data) {
  if (data.features == 0) throw std::invalid_argument("dataset: zero feature width");
  if (data.classes <= 0) throw std::invalid_argument("dataset: non-positive class count");
  if (data.x.size() != data.y.size() * data.features)
    throw std::invalid_argument("dataset: feature array does not match sample count");
  for (int label : data.y)
    if (label < 0 || label >= data.classes) throw std::invalid_argument("dataset: label out of range");
}

const LayerInfo& ModelLayout::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw std::invalid_argument("unknown layer '" + name + "'");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::kLogistic ? "logistic" : "mlp"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "logistic") return ModelKind::kLogistic;
  if (name == "mlp") return ModelKind::kMlp;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected logistic or mlp)");
}

Model::Model(ModelKind kind, std::size_t features, std::size_t hidden, int classes)
    : kind_(kind), features_(features), hidden_(hidden), classes_(classes) {
  if (features == 0 || classes <= 0) throw std::invalid_argument("model: dimensions must be positive");
  const auto c = static_cast<std::size_t>(classes);
  if (kind == ModelKind::kLogistic) {
    layout_ = build_layout({{"fc.weight", {c, features}}, {"fc.bias", {c}}});
  } else {
    if (hidden == 0) throw std::invalid_argument("model: mlp hidden width must be positive");
    layout_ = build_layout({{"fc1.weight", {hidden, features}},
                            {"fc1.bias", {hidden}},
                            {"fc2.weight", {c, hidden}},
                            {"fc2.bias", {c}}});
  }
}

Model Model::logistic(std::size_t features, int classes) {
  return Model(ModelKind::kLogistic, features, 0, classes);
}

Model Model::mlp(std::size_t features, std::size_t hidden, int classes) {
  return Model(ModelKind::kMlp, features, hidden, classes);
}

Model Model::make(ModelKind kind, std::size_t features, std::size_t hidden, int classes) {
  return kind == ModelKind::kLogistic ? logistic(features, classes) : mlp(features, hidden, classes);
}

ModelParams Model::zeros() const { return ModelParams{layout_, std::vector<double>(layout_.dim, 0.0)}; }

ModelParams Model::init_params(std::uint64_t seed) const {
  ModelParams p = zeros();
  SeededRng rng(seed);
  if (kind_ == ModelKind::kLogistic) {
    for (auto& w : p.slice(0)) w = rng.normal(0.0, 0.01);
  } else {
    const double s1 = std::sqrt(2.0 / static_cast<double>(features_));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden_));
    for (auto& w : p.slice(0)) w = rng.normal(0.0, s1);
    for (auto& w : p.slice(2)) w = rng.normal(0.0, s2);
  }
  return p;
}

void Model::check_params(const ModelParams& params) const {
  if (params.values.size() != layout_.dim) throw std::invalid_argument("model: parameter length mismatch");
}

void Model::check_data(const Dataset& data) const {
  if (data.features != features_)
    throw std::invalid_argument("model: feature width " + std::to_string(data.features) +
                                " does not match model input " + std::to_string(features_));
}

std::vector<double> Model::logits(std::span<const double> w, std::span<const double> x) const {
  const auto c = static_cast<std::size_t>(classes_);
  std::vector<double> z(c);
  if (kind_ == ModelKind::kLogistic) {
    const double* W = w.data();
    const double* b = W + c * features_;
    for (std::size_t k = 0; k < c; ++k) {
      double s = b[k];
      const double* wk = W + k * features_;
      for (std::size_t i = 0; i < features_; ++i) s += wk[i] * x[i];
      z[k] = s;
    }
    return z;
  }
  const double* W1 = w.data();
  const double* b1 = W1 + hidden_ * features_;
  const double* W2 = b1 + hidden_;
  const double* b2 = W2 + c * hidden_;
  std::vector<double> h(hidden_);
  for (std::size_t j = 0; j < hidden_; ++j) {
    double s = b1[j];
    const double* wj = W1 + j * features_;
    for (std::size_t i = 0; i < features_; ++i) s += wj[i] * x[i];
    h[j] = s > 0.0 ? s : 0.0;
  }
  for (std::size_t k = 0; k < c; ++k) {
    double s = b2[k];
    const double* wk = W2 + k * hidden_;
    for (std::size_t j = 0; j < hidden_; ++j) s += wk[j] * h[j];
    z[k] = s;
  }
  return z;
}

double Model::sample_loss_grad(std::span<const double> w, std::span<const double> x, int label,
                               std::span<double> grad) const {
  const auto c = static_cast<std::size_t>(classes_);
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  if (kind_ == ModelKind::kLogistic) {
    std::vector<double> p = logits(w, x);
    const double zy = p[label];
    const double loss = softmax_inplace(p) - zy;
    if (!want_grad) return loss;
    p[label] -= 1.0;  // delta = softmax - onehot
    double* gW = grad.data();
    double* gb = gW + c * features_;
    for (std::size_t i = 0; i < features_; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      for (std::size_t k = 0; k < c; ++k) gW[k * features_ + i] = p[k] * xi;
    }
    for (std::size_t k = 0; k < c; ++k) gb[k] = p[k];
    return loss;
  }

  const double* W1 = w.data();
  const double* b1 = W1 + hidden_ * features_;
  const double* W2 = b1 + hidden_;
  const double* b2 = W2 + c * hidden_;
  std::vector<double> pre(hidden_), h(hidden_);
  for (std::size_t j = 0; j < hidden_; ++j) {
    double s = b1[j];
    const double* wj = W1 + j * features_;
    for (std::size_t i = 0; i < features_; ++i) s += wj[i] * x[i];
    pre[j] = s;
    h[j] = s > 0.0 ? s : 0.0;
  }
  std::vector<double> p(c);
  for (std::size_t k = 0; k < c; ++k) {
    double s = b2[k];
    const double* wk = W2 + k * hidden_;
    for (std::size_t j = 0; j < hidden_; ++j) s += wk[j] * h[j];
    p[k] = s;
  }
  const double zy = p[label];
  const double loss = softmax_inplace(p) - zy;
  if (!want_grad) return loss;
  p[label] -= 1.0;

  double* gW1 = grad.data();
  double* gb1 = gW1 + hidden_ * features_;
  double* gW2 = gb1 + hidden_;
  double* gb2 = gW2 + c * hidden_;
  std::vector<double> dh(hidden_, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double dk = p[k];
    gb2[k] = dk;
    const double* wk = W2 + k * hidden_;
    for (std::size_t j = 0; j < hidden_; ++j) {
      gW2[k * hidden_ + j] = dk * h[j];
      dh[j] += wk[j] * dk;
    }
  }
  for (std::size_t j = 0; j < hidden_; ++j) {
    const double da = pre[j] > 0.0 ? dh[j] : 0.0;
    gb1[j] = da;
    if (da == 0.0) continue;
    double* gj = gW1 + j * features_;
    for (std::size_t i = 0; i < features_; ++i) gj[i] = da * x[i];
  }
  return loss;
}

GradientMatrix Model::per_sample_grads(const ModelParams& params, const Dataset& data,
                                       std::span<const std::size_t> indices) const {
  check_params(params);
  check_data(data);
  if (indices.empty()) throw std::invalid_argument("per_sample_grads: empty batch");
  GradientMatrix g;
  g.batch = indices.size();
  g.dim = layout_.dim;
  g.rows.assign(g.batch * g.dim, 0.0);
  g.losses.resize(g.batch);
  for (std::size_t r = 0; r < g.batch; ++r) {
    const std::size_t i = indices[r];
    if (i >= data.size()) throw std::out_of_range("per_sample_grads: index out of range");
    g.losses[r] = sample_loss_grad(params.values, data.row(i), data.y[i], g.row(r));
  }
  return g;
}

GradientMatrix Model::per_sample_grads(const ModelParams& params, const Dataset& data) const {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return per_sample_grads(params, data, all);
}

Evaluation Model::evaluate(const ModelParams& params, const Dataset& data) const {
  check_params(params);
  check_data(data);
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  Evaluation ev;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> z = logits(params.values, data.row(i));
    if (argmax_lowest(z) == static_cast<std::size_t>(data.y[i])) ++correct;
    const double zy = z[data.y[i]];
    ev.loss += softmax_inplace(z) - zy;
  }
  ev.loss /= static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return ev;
}

}  // namespace pcdp::models
