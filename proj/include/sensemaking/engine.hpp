#pragma once

// The sensemaking loop: AI extraction, conformal retrieval and scoring at
// t = 0, then one state transition per intervention event.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sensemaking/conformal.hpp"
#include "sensemaking/domain.hpp"
#include "sensemaking/scorer.hpp"

namespace sensemaking {

inline constexpr double kDefaultDelta = 0.8;
inline constexpr double kDefaultEvidenceThreshold = 0.5;
inline constexpr std::size_t kMaxRegionProposals = 3;

struct SessionConfig {
  double delta = kDefaultDelta;       // acceptance threshold
  double tau_e = kDefaultEvidenceThreshold;  // extraction threshold
  double neutral_band = kDefaultNeutralBand;

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::ValidationError, "delta must lie in (0,1)");
    if (!(tau_e >= 0.0 && tau_e <= 1.0)) throw Error(ErrorCode::ValidationError, "tau_e must lie in [0,1]");
    if (!(neutral_band >= 0.0)) throw Error(ErrorCode::ValidationError, "neutral band must be non-negative");
  }
};

// Everything a session needs besides its case. Immutable once built.
struct Model {
  ConceptSchema schema;
  ModelWeights weights;
  ConformalCalibration calibration;

  Model(ConceptSchema s, ModelWeights w, ConformalCalibration c)
      : schema(std::move(s)), weights(std::move(w)), calibration(std::move(c)) {
    if (weights.schema_hash != schema.hash() || calibration.schema_hash != schema.hash()) {
      throw Error(ErrorCode::SchemaMismatch, "schema, weights and calibration hashes disagree");
    }
    if (weights.dimension != schema.dimension() || weights.num_diagnoses != schema.num_diagnoses()) {
      throw Error(ErrorCode::DimensionMismatch, "weights shape does not match schema");
    }
  }
};

struct Annotation {
  std::string annotation_id;
  RegionAnnotation region;
  std::int64_t step = 0;

  bool operator==(const Annotation&) const = default;
};

struct Acceptance {
  std::string label;
  double score = 0.0;
  bool override_threshold = false;
  std::int64_t step = 0;

  bool operator==(const Acceptance&) const = default;
};

struct SensemakingState {
  std::string session_id;
  std::string case_id;
  std::string schema_hash;
  std::int64_t t = 0;
  double delta = kDefaultDelta;
  double tau_e = kDefaultEvidenceThreshold;
  double neutral_band = kDefaultNeutralBand;
  std::vector<EvidenceItem> evidence;   // active items, schema concept order
  std::vector<EvidenceItem> archived;   // replaced items, oldest first
  std::vector<EvidenceItem> proposals;  // pending AI region proposals
  std::vector<Annotation> annotations;
  std::vector<HypothesisEntry> hypotheses;  // schema diagnosis order
  std::vector<std::string> conformal_set;   // latest retrieval output
  std::vector<double> scores;               // every diagnosis, schema order
  WeightOverlay weight_overlay;
  std::optional<Acceptance> accepted;
  bool finalized = false;

  const HypothesisEntry* find_hypothesis(std::string_view label) const {
    for (const auto& h : hypotheses) {
      if (h.diagnosis_label == label) return &h;
    }
    return nullptr;
  }

  const EvidenceItem* active_evidence(std::string_view concept_id) const {
    for (const auto& e : evidence) {
      if (e.concept_id == concept_id) return &e;
    }
    return nullptr;
  }

  bool operator==(const SensemakingState&) const = default;
};

// ---------------------------------------------------------------------------
// Extraction

inline std::vector<EvidenceItem> extract_evidence(const Case& c, const ConceptSchema& schema, double tau_e,
                                                  std::int64_t step = 0) {
  std::vector<EvidenceItem> out;
  for (const auto& concept_def : schema.concepts()) {
    const auto& probs = c.concept_probs.at(concept_def.id);
    std::size_t best = 0;
    for (std::size_t s = 1; s < concept_def.states.size(); ++s) {
      if (probs.at(concept_def.states[s]) > probs.at(concept_def.states[best])) best = s;
    }
    const double p = probs.at(concept_def.states[best]);
    if (p < tau_e) continue;
    EvidenceItem item;
    item.evidence_id = "e" + std::to_string(step) + "-" + concept_def.id;
    item.concept_id = concept_def.id;
    item.state_id = concept_def.states[best];
    item.probability = p;
    item.status = EvidenceStatus::AiProposed;
    item.created_at_step = step;
    out.push_back(std::move(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region proposals

struct RegionProposal {
  std::string concept_id;
  std::string state_id;
  double probability = 0.0;  // case probability of the proposed state
  double relevance = 0.0;    // heatmap mass share, or normalized entropy

  bool operator==(const RegionProposal&) const = default;
};

inline double heatmap_mass(const Heatmap& map, const RegionAnnotation& region) {
  double mass = 0.0;
  for (std::size_t py = 0; py < map.height; ++py) {
    const double cy = (static_cast<double>(py) + 0.5) / static_cast<double>(map.height);
    if (cy < region.y || cy > region.y + region.height) continue;
    for (std::size_t px = 0; px < map.width; ++px) {
      const double cx = (static_cast<double>(px) + 0.5) / static_cast<double>(map.width);
      if (cx < region.x || cx > region.x + region.width) continue;
      mass += map.at(px, py);
    }
  }
  return mass;
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// With heatmaps: concepts ranked by their share of heatmap mass inside the
// box. Without: concepts ranked by uncertainty of the case distribution.
// Concepts the user already asserted are never proposed.
inline std::vector<RegionProposal> propose_region_evidence(const Case& c, const RegionAnnotation& region,
                                                           const ConceptSchema& schema,
                                                           std::span<const EvidenceItem> evidence = {}) {
  if (!region.valid()) throw Error(ErrorCode::InvalidRegion, "region must lie inside the unit square");
  auto asserted = [&](const std::string& concept_id) {
    return std::any_of(evidence.begin(), evidence.end(), [&](const EvidenceItem& e) {
      return e.concept_id == concept_id && is_user_asserted(e.status);
    });
  };

  std::vector<RegionProposal> ranked;
  const bool use_heatmaps = !c.heatmaps.empty();
  for (const auto& concept_def : schema.concepts()) {
    if (asserted(concept_def.id)) continue;
    const auto& probs = c.concept_probs.at(concept_def.id);
    std::vector<double> dist;
    for (const auto& s : concept_def.states) dist.push_back(probs.at(s));
    const std::size_t best = argmax(dist);

    RegionProposal proposal{concept_def.id, concept_def.states[best], dist[best], 0.0};
    if (use_heatmaps) {
      auto it = c.heatmaps.find(concept_def.id);
      if (it == c.heatmaps.end()) continue;
      proposal.relevance = heatmap_mass(it->second, region);
      if (!(proposal.relevance > 0.0)) continue;
    } else {
      proposal.relevance = entropy(dist) / std::log(static_cast<double>(dist.size()));
    }
    ranked.push_back(std::move(proposal));
  }
  if (use_heatmaps) {
    double total = 0.0;
    for (const auto& p : ranked) total += p.relevance;
    for (auto& p : ranked) p.relevance /= total;
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RegionProposal& a, const RegionProposal& b) { return a.relevance > b.relevance; });
  if (ranked.size() > kMaxRegionProposals) ranked.resize(kMaxRegionProposals);
  return ranked;
}

// ---------------------------------------------------------------------------
// Acceptance

struct AcceptanceCandidate {
  std::string label;
  double score = 0.0;
};

// Highest-scoring non-excluded hypothesis if it reaches delta; ties go to the
// earlier diagnosis in schema order.
inline std::optional<AcceptanceCandidate> check_acceptance(const SensemakingState& state) {
  const HypothesisEntry* best = nullptr;
  for (const auto& h : state.hypotheses) {
    if (h.excluded_by_user) continue;
    if (best == nullptr || h.score > best->score) best = &h;
  }
  if (best == nullptr || best->score < state.delta) return std::nullopt;
  return AcceptanceCandidate{best->diagnosis_label, best->score};
}

// ---------------------------------------------------------------------------
// Transitions

namespace detail {

inline void sort_evidence(std::vector<EvidenceItem>& items, const ConceptSchema& schema) {
  std::stable_sort(items.begin(), items.end(), [&](const EvidenceItem& a, const EvidenceItem& b) {
    return *schema.concept_index(a.concept_id) < *schema.concept_index(b.concept_id);
  });
}

inline void sort_hypotheses(std::vector<HypothesisEntry>& items, const ConceptSchema& schema) {
  std::stable_sort(items.begin(), items.end(), [&](const HypothesisEntry& a, const HypothesisEntry& b) {
    return *schema.diagnosis_index(a.diagnosis_label) < *schema.diagnosis_index(b.diagnosis_label);
  });
}

inline HypothesisEntry* find_hypothesis(SensemakingState& s, std::string_view label) {
  for (auto& h : s.hypotheses) {
    if (h.diagnosis_label == label) return &h;
  }
  return nullptr;
}

inline double case_probability(const Case& c, const std::string& concept_id, const std::string& state_id) {
  return c.concept_probs.at(concept_id).at(state_id);
}

// Reassembles x, rescores, and unions the new retrieval output into H.
inline void rescore(SensemakingState& s, const Case& c, const Model& model) {
  const ConceptVector x = assemble_vector(c, s.evidence, model.schema);
  s.scores = score(model.weights, x);
  const auto retrieved = retrieve_hypotheses(model.calibration, model.weights, x);
  const auto& labels = model.schema.diagnoses();

  s.conformal_set.clear();
  for (std::size_t k : retrieved) s.conformal_set.push_back(labels[k]);

  for (auto& h : s.hypotheses) {
    const std::size_t k = *model.schema.diagnosis_index(h.diagnosis_label);
    h.score = s.scores[k];
    h.in_conformal_set = std::find(retrieved.begin(), retrieved.end(), k) != retrieved.end();
  }
  for (std::size_t k : retrieved) {
    if (find_hypothesis(s, labels[k]) != nullptr) continue;
    HypothesisEntry h;
    h.diagnosis_label = labels[k];
    h.score = s.scores[k];
    h.in_conformal_set = true;
    h.origin = HypothesisOrigin::AiRetrieved;
    h.newly_appeared = s.t > 0;
    h.entered_at_step = s.t;
    s.hypotheses.push_back(std::move(h));
  }
  sort_hypotheses(s.hypotheses, model.schema);
}

// Replaces the concept's active item, archiving the old one.
inline void assert_evidence(SensemakingState& s, EvidenceItem item, const ConceptSchema& schema) {
  auto it = std::find_if(s.evidence.begin(), s.evidence.end(),
                         [&](const EvidenceItem& e) { return e.concept_id == item.concept_id; });
  if (it != s.evidence.end()) {
    s.archived.push_back(*it);
    *it = std::move(item);
  } else {
    s.evidence.push_back(std::move(item));
    sort_evidence(s.evidence, schema);
  }
}

}  // namespace detail

inline SensemakingState init_session(std::string session_id, const Case& c, const Model& model,
                                     const SessionConfig& config = {}) {
  config.validate();
  auto issues = validate_case(c, model.schema);
  if (!issues.empty()) {
    throw Error(ErrorCode::ValidationError, "case '" + c.case_id + "': " + issues.front().message);
  }
  SensemakingState s;
  s.session_id = std::move(session_id);
  s.case_id = c.case_id;
  s.schema_hash = model.schema.hash();
  s.delta = config.delta;
  s.tau_e = config.tau_e;
  s.neutral_band = config.neutral_band;
  s.evidence = extract_evidence(c, model.schema, config.tau_e, 0);
  detail::rescore(s, c, model);
  return s;
}

inline SensemakingState apply_event(const SensemakingState& state, const InterventionEvent& event, const Case& c,
                                    const Model& model) {
  if (state.finalized) throw Error(ErrorCode::SessionFinalized, "session " + state.session_id + " is finalized");
  if (event.seq != state.t + 1) {
    throw Error(ErrorCode::OutOfOrderEvent,
                "expected seq " + std::to_string(state.t + 1) + ", got " + std::to_string(event.seq));
  }
  if (!event.session_id.empty() && event.session_id != state.session_id) {
    throw Error(ErrorCode::ValidationError, "event belongs to session '" + event.session_id + "'");
  }
  if (c.case_id != state.case_id) throw Error(ErrorCode::ValidationError, "case does not match session");

  const ConceptSchema& schema = model.schema;
  SensemakingState s = state;
  s.t = state.t + 1;
  const std::string step = std::to_string(s.t);

  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RefineEvidence>) {
          const std::size_t ci = schema.require_concept(p.concept_id);
          schema.require_state(ci, p.state_id);
          EvidenceItem item;
          item.evidence_id = "e" + step + "-" + p.concept_id;
          item.concept_id = p.concept_id;
          item.state_id = p.state_id;
          item.probability = detail::case_probability(c, p.concept_id, p.state_id);
          item.status = EvidenceStatus::UserRefined;
          item.created_at_step = s.t;
          detail::assert_evidence(s, std::move(item), schema);
          detail::rescore(s, c, model);

        } else if constexpr (std::is_same_v<T, ConfirmEvidence>) {
          schema.require_concept(p.concept_id);
          auto it = std::find_if(s.evidence.begin(), s.evidence.end(),
                                 [&](const EvidenceItem& e) { return e.concept_id == p.concept_id; });
          if (it == s.evidence.end()) {
            throw Error(ErrorCode::InvalidTransition, "no active evidence for '" + p.concept_id + "'");
          }
          if (it->status != EvidenceStatus::AiProposed) {
            throw Error(ErrorCode::InvalidTransition,
                        "evidence for '" + p.concept_id + "' is already " + std::string(to_string(it->status)));
          }
          it->status = EvidenceStatus::UserConfirmed;
          detail::rescore(s, c, model);

        } else if constexpr (std::is_same_v<T, AnnotateRegion>) {
          RegionAnnotation region = p.region;
          region.author = RegionAuthor::User;
          if (!region.valid()) throw Error(ErrorCode::InvalidRegion, "region must lie inside the unit square");
          s.annotations.push_back(Annotation{"a" + step, region, s.t});
          const auto ranked = propose_region_evidence(c, region, schema, s.evidence);
          for (std::size_t i = 0; i < ranked.size(); ++i) {
            EvidenceItem item;
            item.evidence_id = "p" + step + "-" + std::to_string(i);
            item.concept_id = ranked[i].concept_id;
            item.state_id = ranked[i].state_id;
            item.probability = ranked[i].probability;
            item.status = EvidenceStatus::AiProposed;
            item.region = RegionAnnotation{region.x, region.y, region.width, region.height, RegionAuthor::Ai};
            item.created_at_step = s.t;
            s.proposals.push_back(std::move(item));
          }

        } else if constexpr (std::is_same_v<T, AcceptProposedEvidence>) {
          auto it = std::find_if(s.proposals.begin(), s.proposals.end(),
                                 [&](const EvidenceItem& e) { return e.evidence_id == p.evidence_id; });
          if (it == s.proposals.end()) {
            throw Error(ErrorCode::InvalidTransition, "no pending proposal '" + p.evidence_id + "'");
          }
          EvidenceItem item = *it;
          s.proposals.erase(it);
          if (p.state_id) {
            schema.require_state(schema.require_concept(item.concept_id), *p.state_id);
            item.state_id = *p.state_id;
          }
          item.evidence_id = "e" + step + "-" + item.concept_id;
          item.probability = detail::case_probability(c, item.concept_id, item.state_id);
          item.status = EvidenceStatus::UserAdded;
          item.created_at_step = s.t;
          detail::assert_evidence(s, std::move(item), schema);
          detail::rescore(s, c, model);

        } else if constexpr (std::is_same_v<T, AddHypothesis>) {
          const std::size_t k = schema.require_diagnosis(p.label);
          if (auto* h = detail::find_hypothesis(s, p.label)) {
            if (!h->excluded_by_user) {
              throw Error(ErrorCode::InvalidTransition, "'" + p.label + "' is already a candidate");
            }
            h->excluded_by_user = false;
            return;
          }
          HypothesisEntry h;
          h.diagnosis_label = p.label;
          h.score = s.scores[k];
          h.in_conformal_set =
              std::find(s.conformal_set.begin(), s.conformal_set.end(), p.label) != s.conformal_set.end();
          h.origin = HypothesisOrigin::UserAdded;
          h.entered_at_step = s.t;
          s.hypotheses.push_back(std::move(h));
          detail::sort_hypotheses(s.hypotheses, schema);

        } else if constexpr (std::is_same_v<T, RemoveHypothesis>) {
          schema.require_diagnosis(p.label);
          auto* h = detail::find_hypothesis(s, p.label);
          if (h == nullptr || h->excluded_by_user) {
            throw Error(ErrorCode::InvalidTransition, "'" + p.label + "' is not an active candidate");
          }
          h->excluded_by_user = true;

        } else if constexpr (std::is_same_v<T, RegroupEvidence>) {
          schema.require_diagnosis(p.hypothesis);
          schema.require_concept(p.concept_id);
          s.weight_overlay[{p.hypothesis, p.concept_id}] = p.group;

        } else if constexpr (std::is_same_v<T, Finalize>) {
          const std::size_t k = schema.require_diagnosis(p.label);
          const auto* h = s.find_hypothesis(p.label);
          if (h == nullptr || h->excluded_by_user) {
            throw Error(ErrorCode::UnknownHypothesis, "'" + p.label + "' is not an active candidate");
          }
          const double value = s.scores[k];
          if (value < s.delta && !p.override_threshold) {
            throw Error(ErrorCode::ThresholdNotMet, "score " + std::to_string(value) + " of '" + p.label +
                                                        "' is below delta " + std::to_string(s.delta));
          }
          s.accepted = Acceptance{p.label, value, value < s.delta, s.t};
          s.finalized = true;
        }
      },
      event.payload);
  return s;
}

inline SensemakingState replay(std::string session_id, std::span<const InterventionEvent> events, const Case& c,
                               const Model& model, const SessionConfig& config = {}) {
  SensemakingState s = init_session(std::move(session_id), c, model, config);
  for (const auto& e : events) s = apply_event(s, e, c, model);
  return s;
}

inline ConceptVector current_vector(const SensemakingState& state, const Case& c, const Model& model) {
  return assemble_vector(c, state.evidence, model.schema);
}

inline EvidenceAttribution attribute_state(const SensemakingState& state, const Case& c, const Model& model,
                                           const std::string& hypothesis) {
  return attribute_evidence(model.schema, model.weights, current_vector(state, c, model), hypothesis,
                            state.weight_overlay, state.evidence, state.neutral_band);
}

// ---------------------------------------------------------------------------
// Canonical JSON. Field order is fixed; byte equality of dump() is the
// replay-equivalence check.

inline Json acceptance_status_json(const SensemakingState& s) {
  const auto candidate = check_acceptance(s);
  return Json{{"available", candidate.has_value()},
              {"candidate", candidate ? Json{{"label", candidate->label}, {"score", candidate->score}} : Json(nullptr)},
              {"finalized", s.finalized},
              {"accepted", s.accepted ? Json{{"label", s.accepted->label},
                                             {"score", s.accepted->score},
                                             {"override", s.accepted->override_threshold},
                                             {"step", s.accepted->step}}
                                      : Json(nullptr)}};
}

inline Json state_to_json(const SensemakingState& s) {
  Json annotations = Json::array();
  for (const auto& a : s.annotations) {
    annotations.push_back(Json{{"annotation_id", a.annotation_id}, {"region", a.region}, {"step", a.step}});
  }
  Json overlay = Json::array();
  for (const auto& [key, group] : s.weight_overlay) {
    overlay.push_back(Json{{"hypothesis", key.first}, {"concept_id", key.second}, {"group", to_string(group)}});
  }
  return Json{{"session_id", s.session_id},
              {"case_id", s.case_id},
              {"schema_hash", s.schema_hash},
              {"t", s.t},
              {"delta", s.delta},
              {"tau_e", s.tau_e},
              {"neutral_band", s.neutral_band},
              {"evidence", s.evidence},
              {"archived_evidence", s.archived},
              {"proposals", s.proposals},
              {"annotations", annotations},
              {"hypotheses", s.hypotheses},
              {"conformal_set", s.conformal_set},
              {"scores", s.scores},
              {"weight_overlay", overlay},
              {"acceptance", acceptance_status_json(s)}};
}

inline std::string canonical_state(const SensemakingState& s) { return state_to_json(s).dump(); }

inline SensemakingState state_from_json(const Json& j) {
  SensemakingState s;
  try {
    s.session_id = j.at("session_id").get<std::string>();
    s.case_id = j.at("case_id").get<std::string>();
    s.schema_hash = j.at("schema_hash").get<std::string>();
    s.t = j.at("t").get<std::int64_t>();
    s.delta = j.at("delta").get<double>();
    s.tau_e = j.at("tau_e").get<double>();
    s.neutral_band = j.at("neutral_band").get<double>();
    s.evidence = j.at("evidence").get<std::vector<EvidenceItem>>();
    s.archived = j.at("archived_evidence").get<std::vector<EvidenceItem>>();
    s.proposals = j.at("proposals").get<std::vector<EvidenceItem>>();
    for (const auto& a : j.at("annotations")) {
      s.annotations.push_back(Annotation{a.at("annotation_id").get<std::string>(),
                                         a.at("region").get<RegionAnnotation>(), a.at("step").get<std::int64_t>()});
    }
    s.hypotheses = j.at("hypotheses").get<std::vector<HypothesisEntry>>();
    s.conformal_set = j.at("conformal_set").get<std::vector<std::string>>();
    s.scores = j.at("scores").get<std::vector<double>>();
    for (const auto& o : j.at("weight_overlay")) {
      s.weight_overlay[{o.at("hypothesis").get<std::string>(), o.at("concept_id").get<std::string>()}] =
          evidence_group_from(o.at("group").get<std::string>());
    }
    const auto& acceptance = j.at("acceptance");
    s.finalized = acceptance.at("finalized").get<bool>();
    if (!acceptance.at("accepted").is_null()) {
      const auto& a = acceptance.at("accepted");
      s.accepted = Acceptance{a.at("label").get<std::string>(), a.at("score").get<double>(),
                              a.at("override").get<bool>(), a.at("step").get<std::int64_t>()};
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("state: ") + e.what());
  }
  return s;
}

// What changed between two consecutive states, for clients that re-render
// incrementally.
inline Json state_diff(const SensemakingState& before, const SensemakingState& after) {
  Json evidence = Json::array();
  for (const auto& e : after.evidence) {
    const auto* old = before.active_evidence(e.concept_id);
    if (old == nullptr || !(*old == e)) evidence.push_back(e);
  }
  Json archived = Json::array();
  for (std::size_t i = before.archived.size(); i < after.archived.size(); ++i) archived.push_back(after.archived[i]);
  Json proposals_added = Json::array();
  for (const auto& p : after.proposals) {
    const bool existed = std::any_of(before.proposals.begin(), before.proposals.end(),
                                     [&](const EvidenceItem& e) { return e.evidence_id == p.evidence_id; });
    if (!existed) proposals_added.push_back(p);
  }
  Json proposals_resolved = Json::array();
  for (const auto& p : before.proposals) {
    const bool still = std::any_of(after.proposals.begin(), after.proposals.end(),
                                   [&](const EvidenceItem& e) { return e.evidence_id == p.evidence_id; });
    if (!still) proposals_resolved.push_back(p.evidence_id);
  }
  Json hypotheses = Json::array();
  for (const auto& h : after.hypotheses) {
    const auto* old = before.find_hypothesis(h.diagnosis_label);
    if (old == nullptr || !(*old == h)) hypotheses.push_back(h);
  }
  return Json{{"t", after.t},
              {"evidence_changed", evidence},
              {"evidence_archived", archived},
              {"proposals_added", proposals_added},
              {"proposals_resolved", proposals_resolved},
              {"hypotheses_changed", hypotheses},
              {"conformal_set", after.conformal_set},
              {"scores", after.scores},
              {"acceptance", acceptance_status_json(after)}};
}

}  // namespace sensemaking
