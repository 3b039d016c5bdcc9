#pragma once

#include "sensemaking/conformal.hpp"
#include "sensemaking/core.hpp"
#include "sensemaking/data_io.hpp"
#include "sensemaking/domain.hpp"
#include "sensemaking/engine.hpp"
#include "sensemaking/event_log.hpp"
#include "sensemaking/scorer.hpp"

namespace sensemaking {

inline Model load_model(const fs::path& schema_path, const fs::path& weights_path,
                        const fs::path& calibration_path) {
  ConceptSchema schema = load_schema(schema_path);
  ModelWeights weights = weights_from_json(read_json(weights_path), schema);
  ConformalCalibration calibration = calibration_from_json(read_json(calibration_path), schema);
  return Model(std::move(schema), std::move(weights), std::move(calibration));
}

}  // namespace sensemaking
