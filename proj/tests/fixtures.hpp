#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sensemaking/sensemaking.hpp"

namespace fixtures {

namespace sm = sensemaking;

// pigment_network {absent, typical, atypical}, streaks {absent, regular, irregular};
// diagnoses {nevus, melanoma, seborrheic_keratosis}. d = 6, K = 3.
inline sm::ConceptSchema lesion_schema() {
  return sm::ConceptSchema({{"pigment_network", "Pigment network", {"absent", "typical", "atypical"}},
                            {"streaks", "Streaks", {"absent", "regular", "irregular"}}},
                           {"nevus", "melanoma", "seborrheic_keratosis"});
}

// Atypical pigment network loads +3 on melanoma only.
inline sm::ModelWeights lesion_weights(const sm::ConceptSchema& schema) {
  auto w = sm::ModelWeights::zeros(schema);
  w.at(0, 1) = 2.0;  // nevus <- pigment_network:typical
  w.at(0, 3) = 1.0;  // nevus <- streaks:absent
  w.at(1, 2) = 3.0;  // melanoma <- pigment_network:atypical
  w.at(2, 0) = 1.5;  // seborrheic_keratosis <- pigment_network:absent
  return w;
}

// Labels with probability >= 0.2 are retrieved.
inline sm::ConformalCalibration lesion_calibration(const sm::ConceptSchema& schema) {
  return sm::ConformalCalibration{0.8, 0.1, 9, schema.hash()};
}

// Before refinement: logits (2.2, 0.6, 0.15) -> p(melanoma) = 0.1517 < 0.2.
// After refining pigment_network to atypical: logits (0.8, 3.0, 0.0) ->
// p(melanoma) = 0.8616 >= 0.2.
inline sm::Case lesion_case() {
  sm::Case c;
  c.case_id = "lesion-1";
  c.image_ref = "images/lesion-1.png";
  c.concept_probs["pigment_network"] = {{"absent", 0.1}, {"typical", 0.7}, {"atypical", 0.2}};
  c.concept_probs["streaks"] = {{"absent", 0.8}, {"regular", 0.1}, {"irregular", 0.1}};
  c.true_diagnosis = "melanoma";
  return c;
}

inline sm::Model lesion_model() {
  auto schema = lesion_schema();
  auto weights = lesion_weights(schema);
  auto calibration = lesion_calibration(schema);
  return sm::Model(std::move(schema), std::move(weights), std::move(calibration));
}

// Plain softmax written independently of the library.
inline std::vector<double> reference_softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> e;
  double s = 0.0;
  for (double v : z) {
    e.push_back(std::exp(v - m));
    s += e.back();
  }
  for (double& v : e) v /= s;
  return e;
}

inline std::vector<double> reference_scores(const sm::ModelWeights& w, const std::vector<double>& x) {
  std::vector<double> z(w.num_diagnoses, 0.0);
  for (std::size_t k = 0; k < w.num_diagnoses; ++k) {
    z[k] = w.b[k];
    for (std::size_t j = 0; j < w.dimension; ++j) z[k] += w.W[k * w.dimension + j] * x[j];
  }
  return reference_softmax(z);
}

inline sm::ModelWeights random_weights(const sm::ConceptSchema& schema, std::mt19937_64& gen, double scale = 2.0) {
  std::normal_distribution<double> normal(0.0, scale);
  auto w = sm::ModelWeights::zeros(schema);
  for (double& v : w.W) v = normal(gen);
  for (double& v : w.b) v = normal(gen);
  return w;
}

// Random per-concept distributions, optionally one-hot.
inline sm::Case random_case(const sm::ConceptSchema& schema, std::mt19937_64& gen, const std::string& id) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  sm::Case c;
  c.case_id = id;
  c.image_ref = "images/" + id + ".png";
  for (const auto& concept_def : schema.concepts()) {
    std::vector<double> v;
    double total = 0.0;
    for (std::size_t s = 0; s < concept_def.states.size(); ++s) {
      v.push_back(-std::log(1.0 - unit(gen)));
      total += v.back();
    }
    // Last state absorbs the rounding remainder so the block sums to 1.
    double acc = 0.0;
    for (std::size_t s = 0; s < v.size(); ++s) {
      const double p = s + 1 == v.size() ? 1.0 - acc : v[s] / total;
      c.concept_probs[concept_def.id][concept_def.states[s]] = p;
      acc += p;
    }
  }
  c.true_diagnosis = schema.diagnoses()[gen() % schema.num_diagnoses()];
  return c;
}

// A plausible next intervention for a session: mostly valid, occasionally
// not, so callers must be ready for apply_event to throw. Finalize is rare.
inline sm::EventPayload random_payload(const sm::SensemakingState& s, const sm::ConceptSchema& schema,
                                       std::mt19937_64& gen, bool allow_finalize = true) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& concepts = schema.concepts();
  const auto& labels = schema.diagnoses();
  const auto& concept_def = concepts[gen() % concepts.size()];
  const std::string& label = labels[gen() % labels.size()];
  switch (gen() % 20) {
    case 0: case 1: case 2: case 3: case 4:
      return sm::RefineEvidence{concept_def.id, concept_def.states[gen() % concept_def.states.size()]};
    case 5: case 6:
      return sm::ConfirmEvidence{concept_def.id};
    case 7: case 8: case 9: {
      const double x = unit(gen) * 0.8, y = unit(gen) * 0.8;
      return sm::AnnotateRegion{{x, y, 0.05 + unit(gen) * (0.95 - x), 0.05 + unit(gen) * (0.95 - y)}};
    }
    case 10: case 11: case 12: {
      if (s.proposals.empty()) return sm::ConfirmEvidence{concept_def.id};
      const auto& p = s.proposals[gen() % s.proposals.size()];
      std::optional<std::string> state;
      if (gen() % 3 == 0) {
        const auto& states = concepts[*schema.concept_index(p.concept_id)].states;
        state = states[gen() % states.size()];
      }
      return sm::AcceptProposedEvidence{p.evidence_id, state};
    }
    case 13: case 14:
      return sm::AddHypothesis{label};
    case 15: case 16:
      return sm::RemoveHypothesis{label};
    case 17: case 18:
      return sm::RegroupEvidence{label, concept_def.id, static_cast<sm::EvidenceGroup>(gen() % 3)};
    default:
      if (!allow_finalize) return sm::RegroupEvidence{label, concept_def.id, sm::EvidenceGroup::Neutral};
      return sm::Finalize{label, gen() % 2 == 0};
  }
}

// Drives a session with up to max_events accepted random interventions.
// Rejected ones are dropped, as the service would.
inline std::vector<sm::InterventionEvent> random_session(const sm::SensemakingState& start, const sm::Case& c,
                                                         const sm::Model& model, std::mt19937_64& gen,
                                                         std::size_t max_events,
                                                         sm::SensemakingState* end_state = nullptr) {
  std::vector<sm::InterventionEvent> events;
  sm::SensemakingState s = start;
  for (std::size_t attempt = 0; attempt < max_events * 4 && events.size() < max_events && !s.finalized; ++attempt) {
    sm::InterventionEvent e{"", s.session_id, s.t + 1, random_payload(s, model.schema, gen), ""};
    try {
      s = sm::apply_event(s, e, c, model);
      events.push_back(std::move(e));
    } catch (const sm::Error&) {
    }
  }
  if (end_state != nullptr) *end_state = s;
  return events;
}

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("sensemaking-test-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
