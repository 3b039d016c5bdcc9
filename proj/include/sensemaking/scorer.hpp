#pragma once

// Linear concept head: softmax(W x + b) over diagnoses, its training by
// full-batch gradient descent, and evidence attribution from its weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sensemaking/domain.hpp"

namespace sensemaking {

inline constexpr double kDefaultNeutralBand = 0.05;

struct ConceptVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const ConceptVector&) const = default;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  double l2 = 0.0;
  double final_learning_rate = 0.0;

  bool operator==(const TrainingMeta&) const = default;
};

struct ModelWeights {
  std::size_t num_diagnoses = 0;  // K
  std::size_t dimension = 0;      // d
  std::vector<double> W;          // K x d, row-major
  std::vector<double> b;          // K
  std::string schema_hash;
  TrainingMeta training_meta;

  static ModelWeights zeros(const ConceptSchema& schema) {
    ModelWeights w;
    w.num_diagnoses = schema.num_diagnoses();
    w.dimension = schema.dimension();
    w.W.assign(w.num_diagnoses * w.dimension, 0.0);
    w.b.assign(w.num_diagnoses, 0.0);
    w.schema_hash = schema.hash();
    return w;
  }

  double& at(std::size_t k, std::size_t j) { return W[k * dimension + j]; }
  double at(std::size_t k, std::size_t j) const { return W[k * dimension + j]; }

  bool operator==(const ModelWeights&) const = default;
};

// ---------------------------------------------------------------------------
// Concept vector assembly

// Case probabilities with user-asserted evidence overriding the concept block
// as a one-hot on the asserted state. AI-proposed items leave the block as is.
inline ConceptVector assemble_vector(const Case& c, std::span<const EvidenceItem> evidence,
                                     const ConceptSchema& schema) {
  ConceptVector x{flatten_probabilities(c, schema)};
  std::vector<bool> seen(schema.num_concepts(), false);
  for (const auto& item : evidence) {
    const std::size_t ci = schema.require_concept(item.concept_id);
    const std::size_t si = schema.require_state(ci, item.state_id);
    if (seen[ci]) {
      throw Error(ErrorCode::ConflictingEvidence, "two active evidence items for '" + item.concept_id + "'");
    }
    seen[ci] = true;
    if (!is_user_asserted(item.status)) continue;
    const std::size_t offset = schema.offset(ci);
    const std::size_t n = schema.concepts()[ci].states.size();
    for (std::size_t s = 0; s < n; ++s) x.values[offset + s] = (s == si) ? 1.0 : 0.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Scoring

inline std::vector<double> logits(const ModelWeights& weights, const ConceptVector& x) {
  if (x.size() != weights.dimension || weights.W.size() != weights.num_diagnoses * weights.dimension ||
      weights.b.size() != weights.num_diagnoses) {
    throw Error(ErrorCode::DimensionMismatch, "vector has " + std::to_string(x.size()) + " entries, weights expect " +
                                                  std::to_string(weights.dimension));
  }
  std::vector<double> z(weights.b);
  for (std::size_t k = 0; k < weights.num_diagnoses; ++k) {
    const double* row = weights.W.data() + k * weights.dimension;
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.dimension; ++j) acc += row[j] * x.values[j];
    z[k] += acc;
  }
  return z;
}

inline std::vector<double> softmax(std::vector<double> z) {
  const double peak = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

// Probability per diagnosis, in schema diagnosis order.
inline std::vector<double> score(const ModelWeights& weights, const ConceptVector& x) {
  return softmax(logits(weights, x));
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Training

struct LabeledVector {
  ConceptVector x;
  std::size_t label = 0;  // diagnosis index
};

struct LabeledExample {
  ConceptVector x;
  std::string label;
};

struct Gradient {
  std::vector<double> W;
  std::vector<double> b;
};

// Mean cross-entropy plus l2 * ||W||^2 (bias unpenalized).
inline double regularized_loss(const ModelWeights& weights, std::span<const LabeledVector> batch, double l2) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "loss over empty batch");
  double ce = 0.0;
  for (const auto& ex : batch) {
    auto z = logits(weights, ex.x);
    const double peak = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - peak);
    ce += (peak + std::log(total)) - z.at(ex.label);
  }
  double penalty = 0.0;
  for (double w : weights.W) penalty += w * w;
  return ce / static_cast<double>(batch.size()) + l2 * penalty;
}

inline Gradient loss_gradient(const ModelWeights& weights, std::span<const LabeledVector> batch, double l2) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "gradient over empty batch");
  const std::size_t K = weights.num_diagnoses;
  const std::size_t d = weights.dimension;
  Gradient g{std::vector<double>(K * d, 0.0), std::vector<double>(K, 0.0)};
  for (const auto& ex : batch) {
    if (ex.label >= K) throw Error(ErrorCode::UnknownLabel, "label index out of range");
    auto p = score(weights, ex.x);
    p[ex.label] -= 1.0;
    for (std::size_t k = 0; k < K; ++k) {
      g.b[k] += p[k];
      double* row = g.W.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += p[k] * ex.x.values[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < g.W.size(); ++i) g.W[i] = g.W[i] * inv_n + 2.0 * l2 * weights.W[i];
  for (double& v : g.b) v *= inv_n;
  return g;
}

struct TrainingOptions {
  double learning_rate = 0.1;
  int epochs = 500;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainingResult {
  ModelWeights weights;
  // loss_trace[0] is the loss at initialization, then one entry per epoch.
  std::vector<double> loss_trace;
};

inline std::vector<LabeledVector> index_labels(std::span<const LabeledExample> dataset, const ConceptSchema& schema) {
  std::vector<LabeledVector> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset) {
    auto k = schema.diagnosis_index(ex.label);
    if (!k) throw Error(ErrorCode::UnknownLabel, "label '" + ex.label + "' not in schema");
    if (ex.x.size() != schema.dimension()) {
      throw Error(ErrorCode::DimensionMismatch, "training vector has wrong dimension");
    }
    out.push_back({ex.x, *k});
  }
  return out;
}

// Zero-initialized full-batch gradient descent. A step that would raise the
// loss is rejected and the learning rate halved, so the trace never rises.
inline TrainingResult train(std::span<const LabeledExample> dataset, const ConceptSchema& schema,
                            const TrainingOptions& options = {}) {
  if (dataset.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  const auto batch = index_labels(dataset, schema);

  TrainingResult result{ModelWeights::zeros(schema), {}};
  ModelWeights& w = result.weights;
  double lr = options.learning_rate;
  double current = regularized_loss(w, batch, options.l2);
  result.loss_trace.push_back(current);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const Gradient g = loss_gradient(w, batch, options.l2);
    ModelWeights candidate = w;
    for (std::size_t i = 0; i < candidate.W.size(); ++i) candidate.W[i] -= lr * g.W[i];
    for (std::size_t k = 0; k < candidate.b.size(); ++k) candidate.b[k] -= lr * g.b[k];
    const double next = regularized_loss(candidate, batch, options.l2);
    if (!std::isfinite(next)) {
      throw Error(ErrorCode::NonfiniteLoss,
                  "loss diverged at epoch " + std::to_string(epoch) + "; lower the learning rate");
    }
    if (next > current) {
      lr *= 0.5;
    } else {
      w = std::move(candidate);
      current = next;
    }
    result.loss_trace.push_back(current);
  }

  w.training_meta = TrainingMeta{options.seed, options.epochs, options.learning_rate, options.l2, lr};
  return result;
}

inline double accuracy(const ModelWeights& weights, std::span<const LabeledVector> data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : data) {
    const auto p = score(weights, ex.x);
    if (argmax(p) == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Attribution

struct AttributedEvidence {
  std::string concept_id;
  std::string state_id;
  double weight = 0.0;     // W[H, j]
  double value = 0.0;      // x_j
  double magnitude = 0.0;  // |W[H, j] * x_j|
  EvidenceGroup group = EvidenceGroup::Neutral;
  EvidenceGroup computed_group = EvidenceGroup::Neutral;
  bool verified = false;

  bool operator==(const AttributedEvidence&) const = default;
};

struct EvidenceAttribution {
  std::string hypothesis;
  std::vector<AttributedEvidence> items;  // magnitude descending, ties in schema order
};

inline EvidenceGroup classify_weight(double w, double neutral_band) {
  if (w > neutral_band) return EvidenceGroup::Supporting;
  if (w < -neutral_band) return EvidenceGroup::Contradicting;
  return EvidenceGroup::Neutral;
}

// One entry per concept, for its active (argmax, first on ties) state.
inline EvidenceAttribution attribute_evidence(const ConceptSchema& schema, const ModelWeights& weights,
                                              const ConceptVector& x, const std::string& hypothesis,
                                              const WeightOverlay& overlay,
                                              std::span<const EvidenceItem> evidence = {},
                                              double neutral_band = kDefaultNeutralBand) {
  auto k = schema.diagnosis_index(hypothesis);
  if (!k) throw Error(ErrorCode::UnknownHypothesis, "unknown hypothesis '" + hypothesis + "'");
  if (x.size() != weights.dimension || weights.dimension != schema.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "attribution dimensions disagree");
  }

  EvidenceAttribution out{hypothesis, {}};
  for (std::size_t ci = 0; ci < schema.num_concepts(); ++ci) {
    const auto& concept_def = schema.concepts()[ci];
    const std::size_t offset = schema.offset(ci);
    std::size_t best = 0;
    for (std::size_t s = 1; s < concept_def.states.size(); ++s) {
      if (x[offset + s] > x[offset + best]) best = s;
    }
    const std::size_t j = offset + best;
    AttributedEvidence item;
    item.concept_id = concept_def.id;
    item.state_id = concept_def.states[best];
    item.weight = weights.at(*k, j);
    item.value = x[j];
    item.magnitude = std::abs(item.weight * item.value);
    item.computed_group = classify_weight(item.weight, neutral_band);
    item.group = item.computed_group;
    if (auto it = overlay.find({hypothesis, concept_def.id}); it != overlay.end()) item.group = it->second;
    for (const auto& e : evidence) {
      if (e.concept_id == concept_def.id) item.verified = is_user_asserted(e.status);
    }
    out.items.push_back(std::move(item));
  }
  // Stable sort keeps schema order among equal magnitudes.
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const AttributedEvidence& a, const AttributedEvidence& b) { return a.magnitude > b.magnitude; });
  return out;
}

// ---------------------------------------------------------------------------
// Weights file

inline Json weights_to_json(const ModelWeights& w) {
  return Json{{"format", "sensemaking.weights"},
              {"version", 1},
              {"schema_hash", w.schema_hash},
              {"num_diagnoses", w.num_diagnoses},
              {"dimension", w.dimension},
              {"W", w.W},
              {"b", w.b},
              {"training_meta",
               Json{{"seed", w.training_meta.seed},
                    {"epochs", w.training_meta.epochs},
                    {"learning_rate", w.training_meta.learning_rate},
                    {"l2", w.training_meta.l2},
                    {"final_learning_rate", w.training_meta.final_learning_rate}}}};
}

// Refuses weights trained against a different schema.
inline ModelWeights weights_from_json(const Json& j, const ConceptSchema& schema) {
  ModelWeights w;
  try {
    if (j.at("version").get<int>() != 1) throw Error(ErrorCode::ParseError, "unsupported weights version");
    w.schema_hash = j.at("schema_hash").get<std::string>();
    w.num_diagnoses = j.at("num_diagnoses").get<std::size_t>();
    w.dimension = j.at("dimension").get<std::size_t>();
    w.W = j.at("W").get<std::vector<double>>();
    w.b = j.at("b").get<std::vector<double>>();
    const auto& meta = j.at("training_meta");
    w.training_meta.seed = meta.at("seed").get<std::uint64_t>();
    w.training_meta.epochs = meta.at("epochs").get<int>();
    w.training_meta.learning_rate = meta.at("learning_rate").get<double>();
    w.training_meta.l2 = meta.at("l2").get<double>();
    w.training_meta.final_learning_rate = meta.value("final_learning_rate", w.training_meta.learning_rate);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("weights: ") + e.what());
  }
  if (w.schema_hash != schema.hash()) {
    throw Error(ErrorCode::SchemaMismatch, "weights were trained for schema " + w.schema_hash + ", loaded schema is " +
                                               schema.hash());
  }
  if (w.num_diagnoses != schema.num_diagnoses() || w.dimension != schema.dimension() ||
      w.W.size() != w.num_diagnoses * w.dimension || w.b.size() != w.num_diagnoses) {
    throw Error(ErrorCode::DimensionMismatch, "weights shape does not match schema");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(w.W.begin(), w.W.end(), finite) || !std::all_of(w.b.begin(), w.b.end(), finite)) {
    throw Error(ErrorCode::ParseError, "weights contain non-finite entries");
  }
  return w;
}

}  // namespace sensemaking
