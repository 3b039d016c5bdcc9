#pragma once

// Split conformal hypothesis retrieval. Nonconformity is 1 - p(true label);
// the threshold is the ceil((n+1)(1-alpha))-th smallest calibration score.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "sensemaking/scorer.hpp"

namespace sensemaking {

struct ConformalCalibration {
  // nullopt is the +infinity sentinel: every label is retrieved.
  std::optional<double> q_hat;
  double alpha = 0.1;
  std::size_t n_cal = 0;
  std::string schema_hash;

  bool retrieves_everything() const { return !q_hat.has_value(); }
  bool operator==(const ConformalCalibration&) const = default;
};

// 1-based rank of the calibration quantile. The small slack absorbs products
// like 10 * 0.9 landing a few ulps above an integer.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  const double target = static_cast<double>(n + 1) * (1.0 - alpha);
  return static_cast<std::size_t>(std::ceil(target - 1e-9));
}

inline double nonconformity(const ModelWeights& weights, const ConceptVector& x, std::size_t label) {
  return 1.0 - score(weights, x).at(label);
}

inline ConformalCalibration calibrate(const ModelWeights& weights, std::span<const LabeledVector> cal_set,
                                      double alpha) {
  if (cal_set.empty()) throw Error(ErrorCode::EmptyCalibrationSet, "calibration set is empty");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in (0,1)");

  std::vector<double> scores;
  scores.reserve(cal_set.size());
  for (const auto& ex : cal_set) scores.push_back(nonconformity(weights, ex.x, ex.label));

  ConformalCalibration cal;
  cal.alpha = alpha;
  cal.n_cal = cal_set.size();
  cal.schema_hash = weights.schema_hash;
  const std::size_t rank = conformal_rank(cal.n_cal, alpha);
  if (rank <= cal.n_cal) {
    const std::size_t idx = rank == 0 ? 0 : rank - 1;
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(idx), scores.end());
    cal.q_hat = scores[idx];
  }
  return cal;
}

inline ConformalCalibration calibrate(const ModelWeights& weights, std::span<const LabeledExample> cal_set,
                                      const ConceptSchema& schema, double alpha) {
  if (cal_set.empty()) throw Error(ErrorCode::EmptyCalibrationSet, "calibration set is empty");
  const auto indexed = index_labels(cal_set, schema);
  return calibrate(weights, std::span<const LabeledVector>(indexed), alpha);
}

// Diagnosis indices in schema order. Never empty: falls back to the argmax.
inline std::vector<std::size_t> retrieve_hypotheses(const ConformalCalibration& calibration,
                                                    const ModelWeights& weights, const ConceptVector& x) {
  if (calibration.schema_hash != weights.schema_hash) {
    throw Error(ErrorCode::SchemaMismatch, "calibration and weights belong to different schemas");
  }
  const auto p = score(weights, x);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!calibration.q_hat || 1.0 - p[k] <= *calibration.q_hat) out.push_back(k);
  }
  if (out.empty()) out.push_back(argmax(p));
  return out;
}

inline Json calibration_to_json(const ConformalCalibration& c) {
  return Json{{"format", "sensemaking.calibration"},
              {"version", 1},
              {"q_hat", c.q_hat ? Json(*c.q_hat) : Json(nullptr)},
              {"alpha", c.alpha},
              {"n_cal", c.n_cal},
              {"schema_hash", c.schema_hash}};
}

inline ConformalCalibration calibration_from_json(const Json& j, const ConceptSchema& schema) {
  ConformalCalibration c;
  try {
    if (j.at("version").get<int>() != 1) throw Error(ErrorCode::ParseError, "unsupported calibration version");
    if (!j.at("q_hat").is_null()) c.q_hat = j.at("q_hat").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.n_cal = j.at("n_cal").get<std::size_t>();
    c.schema_hash = j.at("schema_hash").get<std::string>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("calibration: ") + e.what());
  }
  if (c.schema_hash != schema.hash()) {
    throw Error(ErrorCode::SchemaMismatch, "calibration belongs to schema " + c.schema_hash);
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in (0,1)");
  return c;
}

}  // namespace sensemaking
