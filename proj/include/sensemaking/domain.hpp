#pragma once

// Domain vocabulary of the sensemaking loop: schema, cases, evidence,
// hypotheses, interventions. Canonical JSON encodings live next to each type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "sensemaking/core.hpp"

namespace sensemaking {

using Json = nlohmann::ordered_json;

inline constexpr double kNormalizationTolerance = 1e-6;

// ---------------------------------------------------------------------------
// Schema

struct Concept {
  std::string id;
  std::string name;
  std::vector<std::string> states;

  bool operator==(const Concept&) const = default;
};

class ConceptSchema {
 public:
  ConceptSchema() = default;

  ConceptSchema(std::vector<Concept> concepts, std::vector<std::string> diagnoses)
      : concepts_(std::move(concepts)), diagnoses_(std::move(diagnoses)) {
    if (diagnoses_.size() < 2) {
      throw Error(ErrorCode::InvalidSchema, "schema needs at least two diagnoses");
    }
    if (concepts_.empty()) {
      throw Error(ErrorCode::InvalidSchema, "schema needs at least one concept");
    }
    std::set<std::string> seen;
    for (const auto& label : diagnoses_) {
      if (label.empty()) throw Error(ErrorCode::InvalidSchema, "empty diagnosis label");
      if (!seen.insert(label).second) {
        throw Error(ErrorCode::DuplicateId, "duplicate diagnosis label '" + label + "'");
      }
    }
    seen.clear();
    std::size_t offset = 0;
    for (const auto& c : concepts_) {
      if (c.id.empty()) throw Error(ErrorCode::InvalidSchema, "empty concept id");
      if (!seen.insert(c.id).second) {
        throw Error(ErrorCode::DuplicateId, "duplicate concept id '" + c.id + "'");
      }
      if (c.states.size() < 2) {
        throw Error(ErrorCode::InvalidSchema, "concept '" + c.id + "' needs at least two states");
      }
      std::set<std::string> states;
      for (const auto& s : c.states) {
        if (s.empty()) throw Error(ErrorCode::InvalidSchema, "empty state in '" + c.id + "'");
        if (!states.insert(s).second) {
          throw Error(ErrorCode::DuplicateId, "duplicate state '" + s + "' in concept '" + c.id + "'");
        }
      }
      offsets_.push_back(offset);
      offset += c.states.size();
    }
    dimension_ = offset;
    hash_ = to_hex(fnv1a64(canonical_text()));
  }

  const std::vector<Concept>& concepts() const { return concepts_; }
  const std::vector<std::string>& diagnoses() const { return diagnoses_; }
  std::size_t num_concepts() const { return concepts_.size(); }
  std::size_t num_diagnoses() const { return diagnoses_.size(); }
  // d: total number of concept states, the scorer's input width.
  std::size_t dimension() const { return dimension_; }
  std::size_t offset(std::size_t concept_index) const { return offsets_.at(concept_index); }
  const std::string& hash() const { return hash_; }

  std::optional<std::size_t> concept_index(std::string_view id) const {
    for (std::size_t i = 0; i < concepts_.size(); ++i) {
      if (concepts_[i].id == id) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> state_index(std::size_t concept_index, std::string_view state) const {
    const auto& states = concepts_.at(concept_index).states;
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == state) return i;
    }
    return std::nullopt;
  }

  std::optional<std::size_t> diagnosis_index(std::string_view label) const {
    for (std::size_t i = 0; i < diagnoses_.size(); ++i) {
      if (diagnoses_[i] == label) return i;
    }
    return std::nullopt;
  }

  // Throwing lookups for callers that already validated their input.
  std::size_t require_concept(std::string_view id) const {
    auto idx = concept_index(id);
    if (!idx) throw Error(ErrorCode::UnknownConcept, "unknown concept '" + std::string(id) + "'");
    return *idx;
  }

  std::size_t require_state(std::size_t concept_index, std::string_view state) const {
    auto idx = state_index(concept_index, state);
    if (!idx) {
      throw Error(ErrorCode::UnknownState, "unknown state '" + std::string(state) + "' for concept '" +
                                               concepts_.at(concept_index).id + "'");
    }
    return *idx;
  }

  std::size_t require_diagnosis(std::string_view label) const {
    auto idx = diagnosis_index(label);
    if (!idx) throw Error(ErrorCode::UnknownHypothesis, "unknown diagnosis '" + std::string(label) + "'");
    return *idx;
  }

  Json to_json() const {
    Json concepts = Json::array();
    for (const auto& c : concepts_) {
      concepts.push_back(Json{{"id", c.id}, {"name", c.name}, {"states", c.states}});
    }
    return Json{{"concepts", concepts}, {"diagnoses", diagnoses_}};
  }

  static ConceptSchema from_json(const Json& j) {
    try {
      std::vector<Concept> concepts;
      for (const auto& c : j.at("concepts")) {
        Concept concept_def;
        concept_def.id = c.at("id").get<std::string>();
        concept_def.name = c.contains("name") ? c.at("name").get<std::string>() : concept_def.id;
        concept_def.states = c.at("states").get<std::vector<std::string>>();
        concepts.push_back(std::move(concept_def));
      }
      return ConceptSchema(std::move(concepts), j.at("diagnoses").get<std::vector<std::string>>());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::ParseError, std::string("schema: ") + e.what());
    }
  }

  bool operator==(const ConceptSchema& other) const { return hash_ == other.hash_; }

 private:
  // Names are presentation only and do not participate in the hash.
  std::string canonical_text() const {
    Json concepts = Json::array();
    for (const auto& c : concepts_) concepts.push_back(Json{{"id", c.id}, {"states", c.states}});
    return Json{{"concepts", concepts}, {"diagnoses", diagnoses_}}.dump();
  }

  std::vector<Concept> concepts_;
  std::vector<std::string> diagnoses_;
  std::vector<std::size_t> offsets_;
  std::size_t dimension_ = 0;
  std::string hash_;
};

// ---------------------------------------------------------------------------
// Raw information

// Grayscale attribution grid, values scaled to [0,1], row-major.
struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  bool operator==(const Heatmap&) const = default;
};

using ConceptProbabilities = std::map<std::string, std::map<std::string, double>>;

struct Case {
  std::string case_id;
  std::string image_ref;
  ConceptProbabilities concept_probs;
  std::optional<std::string> true_diagnosis;
  std::map<std::string, std::string> heatmap_refs;
  // Annotated states from the dataset table (ground truth for synthetic data).
  std::map<std::string, std::string> annotated_states;
  // Loaded heatmap grids keyed by concept; not part of the JSON encoding.
  std::map<std::string, Heatmap> heatmaps;

  bool operator==(const Case&) const = default;
};

enum class IssueKind {
  MissingConcept,
  MissingState,
  UnknownConcept,
  UnknownState,
  ProbabilityOutOfRange,
  ProbabilityNotNormalized,
  UnknownDiagnosis,
};

inline std::string_view to_string(IssueKind kind) {
  switch (kind) {
    case IssueKind::MissingConcept: return "MissingConcept";
    case IssueKind::MissingState: return "MissingState";
    case IssueKind::UnknownConcept: return "UnknownConcept";
    case IssueKind::UnknownState: return "UnknownState";
    case IssueKind::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case IssueKind::ProbabilityNotNormalized: return "ProbabilityNotNormalized";
    case IssueKind::UnknownDiagnosis: return "UnknownDiagnosis";
  }
  return "Unknown";
}

struct ValidationIssue {
  IssueKind kind;
  std::string concept_id;
  std::string message;
};

// Empty result means the case is valid. Every violation is reported.
inline std::vector<ValidationIssue> validate_case(const Case& c, const ConceptSchema& schema) {
  std::vector<ValidationIssue> issues;
  for (const auto& [concept_id, states] : c.concept_probs) {
    auto ci = schema.concept_index(concept_id);
    if (!ci) {
      issues.push_back({IssueKind::UnknownConcept, concept_id, "concept not in schema"});
      continue;
    }
    for (const auto& [state, p] : states) {
      if (!schema.state_index(*ci, state)) {
        issues.push_back({IssueKind::UnknownState, concept_id, "state '" + state + "' not in schema"});
      }
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
        issues.push_back({IssueKind::ProbabilityOutOfRange, concept_id,
                          "probability of '" + state + "' outside [0,1]"});
      }
    }
  }
  for (const auto& concept_def : schema.concepts()) {
    auto it = c.concept_probs.find(concept_def.id);
    if (it == c.concept_probs.end()) {
      issues.push_back({IssueKind::MissingConcept, concept_def.id, "no probabilities for concept"});
      continue;
    }
    double sum = 0.0;
    bool complete = true;
    for (const auto& state : concept_def.states) {
      auto st = it->second.find(state);
      if (st == it->second.end()) {
        issues.push_back({IssueKind::MissingState, concept_def.id, "no probability for state '" + state + "'"});
        complete = false;
      } else {
        sum += st->second;
      }
    }
    if (complete && !(std::abs(sum - 1.0) <= kNormalizationTolerance)) {
      issues.push_back({IssueKind::ProbabilityNotNormalized, concept_def.id,
                        "state probabilities sum to " + std::to_string(sum)});
    }
  }
  if (c.true_diagnosis && !schema.diagnosis_index(*c.true_diagnosis)) {
    issues.push_back({IssueKind::UnknownDiagnosis, "", "diagnosis '" + *c.true_diagnosis + "' not in schema"});
  }
  return issues;
}

// Concatenates per-concept distributions in schema order. Assumes a valid case.
inline std::vector<double> flatten_probabilities(const Case& c, const ConceptSchema& schema) {
  std::vector<double> out;
  out.reserve(schema.dimension());
  for (const auto& concept_def : schema.concepts()) {
    const auto& states = c.concept_probs.at(concept_def.id);
    for (const auto& s : concept_def.states) out.push_back(states.at(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evidence and hypotheses

enum class EvidenceStatus { AiProposed, UserConfirmed, UserRefined, UserAdded };

inline std::string_view to_string(EvidenceStatus s) {
  switch (s) {
    case EvidenceStatus::AiProposed: return "ai_proposed";
    case EvidenceStatus::UserConfirmed: return "user_confirmed";
    case EvidenceStatus::UserRefined: return "user_refined";
    case EvidenceStatus::UserAdded: return "user_added";
  }
  return "";
}

// A user-asserted item pins its concept to a one-hot block.
inline bool is_user_asserted(EvidenceStatus s) { return s != EvidenceStatus::AiProposed; }

enum class RegionAuthor { User, Ai };

inline std::string_view to_string(RegionAuthor a) { return a == RegionAuthor::User ? "user" : "ai"; }

struct RegionAnnotation {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;
  RegionAuthor author = RegionAuthor::User;

  bool valid() const {
    const bool finite = std::isfinite(x) && std::isfinite(y) && std::isfinite(width) && std::isfinite(height);
    return finite && width > 0.0 && height > 0.0 && x >= 0.0 && y >= 0.0 && x + width <= 1.0 + 1e-12 &&
           y + height <= 1.0 + 1e-12;
  }

  bool operator==(const RegionAnnotation&) const = default;
};

struct EvidenceItem {
  std::string evidence_id;
  std::string concept_id;
  std::string state_id;
  double probability = 0.0;
  EvidenceStatus status = EvidenceStatus::AiProposed;
  std::optional<RegionAnnotation> region;
  std::int64_t created_at_step = 0;

  bool operator==(const EvidenceItem&) const = default;
};

enum class HypothesisOrigin { AiRetrieved, UserAdded };

inline std::string_view to_string(HypothesisOrigin o) {
  return o == HypothesisOrigin::AiRetrieved ? "ai_retrieved" : "user_added";
}

struct HypothesisEntry {
  std::string diagnosis_label;
  double score = 0.0;
  bool in_conformal_set = false;
  HypothesisOrigin origin = HypothesisOrigin::AiRetrieved;
  bool excluded_by_user = false;
  bool newly_appeared = false;
  std::int64_t entered_at_step = 0;

  bool operator==(const HypothesisEntry&) const = default;
};

enum class EvidenceGroup { Supporting, Contradicting, Neutral };

inline std::string_view to_string(EvidenceGroup g) {
  switch (g) {
    case EvidenceGroup::Supporting: return "supporting";
    case EvidenceGroup::Contradicting: return "contradicting";
    case EvidenceGroup::Neutral: return "neutral";
  }
  return "";
}

// (hypothesis label, concept id) -> group forced by the user.
using WeightOverlay = std::map<std::pair<std::string, std::string>, EvidenceGroup>;

// ---------------------------------------------------------------------------
// Interventions

struct RefineEvidence {
  std::string concept_id;
  std::string state_id;
  bool operator==(const RefineEvidence&) const = default;
};

struct ConfirmEvidence {
  std::string concept_id;
  bool operator==(const ConfirmEvidence&) const = default;
};

struct AnnotateRegion {
  RegionAnnotation region;
  bool operator==(const AnnotateRegion&) const = default;
};

// Promotes a pending region proposal; state_id optionally modifies it.
struct AcceptProposedEvidence {
  std::string evidence_id;
  std::optional<std::string> state_id;
  bool operator==(const AcceptProposedEvidence&) const = default;
};

struct AddHypothesis {
  std::string label;
  bool operator==(const AddHypothesis&) const = default;
};

struct RemoveHypothesis {
  std::string label;
  bool operator==(const RemoveHypothesis&) const = default;
};

struct RegroupEvidence {
  std::string hypothesis;
  std::string concept_id;
  EvidenceGroup group = EvidenceGroup::Neutral;
  bool operator==(const RegroupEvidence&) const = default;
};

struct Finalize {
  std::string label;
  bool override_threshold = false;
  bool operator==(const Finalize&) const = default;
};

using EventPayload = std::variant<RefineEvidence, ConfirmEvidence, AnnotateRegion, AcceptProposedEvidence,
                                  AddHypothesis, RemoveHypothesis, RegroupEvidence, Finalize>;

inline std::string_view kind_name(const EventPayload& p) {
  static constexpr std::string_view names[] = {"RefineEvidence",  "ConfirmEvidence",  "AnnotateRegion",
                                               "AcceptProposedEvidence", "AddHypothesis", "RemoveHypothesis",
                                               "RegroupEvidence", "Finalize"};
  return names[p.index()];
}

struct InterventionEvent {
  std::string event_id;
  std::string session_id;
  std::int64_t seq = 0;
  EventPayload payload;
  std::string timestamp;

  std::string_view kind() const { return kind_name(payload); }
  bool operator==(const InterventionEvent&) const = default;
};

// ---------------------------------------------------------------------------
// JSON encodings

namespace detail {

template <typename Enum, std::size_t N>
Enum enum_from(const std::string& text, const Enum (&values)[N], const char* what) {
  for (Enum v : values) {
    if (to_string(v) == text) return v;
  }
  throw Error(ErrorCode::ParseError, std::string("unknown ") + what + " '" + text + "'");
}

}  // namespace detail

inline EvidenceStatus evidence_status_from(const std::string& s) {
  static constexpr EvidenceStatus all[] = {EvidenceStatus::AiProposed, EvidenceStatus::UserConfirmed,
                                           EvidenceStatus::UserRefined, EvidenceStatus::UserAdded};
  return detail::enum_from(s, all, "evidence status");
}

inline RegionAuthor region_author_from(const std::string& s) {
  static constexpr RegionAuthor all[] = {RegionAuthor::User, RegionAuthor::Ai};
  return detail::enum_from(s, all, "region author");
}

inline HypothesisOrigin hypothesis_origin_from(const std::string& s) {
  static constexpr HypothesisOrigin all[] = {HypothesisOrigin::AiRetrieved, HypothesisOrigin::UserAdded};
  return detail::enum_from(s, all, "hypothesis origin");
}

inline EvidenceGroup evidence_group_from(const std::string& s) {
  static constexpr EvidenceGroup all[] = {EvidenceGroup::Supporting, EvidenceGroup::Contradicting,
                                          EvidenceGroup::Neutral};
  return detail::enum_from(s, all, "evidence group");
}

inline void to_json(Json& j, const RegionAnnotation& r) {
  j = Json{{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}, {"author", to_string(r.author)}};
}

inline void from_json(const Json& j, RegionAnnotation& r) {
  r.x = j.at("x").get<double>();
  r.y = j.at("y").get<double>();
  r.width = j.at("width").get<double>();
  r.height = j.at("height").get<double>();
  r.author = j.contains("author") ? region_author_from(j.at("author").get<std::string>()) : RegionAuthor::User;
}

inline void to_json(Json& j, const EvidenceItem& e) {
  j = Json{{"evidence_id", e.evidence_id},
           {"concept_id", e.concept_id},
           {"state_id", e.state_id},
           {"probability", e.probability},
           {"status", to_string(e.status)},
           {"region", e.region ? Json(*e.region) : Json(nullptr)},
           {"created_at_step", e.created_at_step}};
}

inline void from_json(const Json& j, EvidenceItem& e) {
  e.evidence_id = j.at("evidence_id").get<std::string>();
  e.concept_id = j.at("concept_id").get<std::string>();
  e.state_id = j.at("state_id").get<std::string>();
  e.probability = j.at("probability").get<double>();
  e.status = evidence_status_from(j.at("status").get<std::string>());
  e.region.reset();
  if (j.contains("region") && !j.at("region").is_null()) e.region = j.at("region").get<RegionAnnotation>();
  e.created_at_step = j.at("created_at_step").get<std::int64_t>();
}

inline void to_json(Json& j, const HypothesisEntry& h) {
  j = Json{{"diagnosis_label", h.diagnosis_label},
           {"score", h.score},
           {"in_conformal_set", h.in_conformal_set},
           {"origin", to_string(h.origin)},
           {"excluded_by_user", h.excluded_by_user},
           {"newly_appeared", h.newly_appeared},
           {"entered_at_step", h.entered_at_step}};
}

inline void from_json(const Json& j, HypothesisEntry& h) {
  h.diagnosis_label = j.at("diagnosis_label").get<std::string>();
  h.score = j.at("score").get<double>();
  h.in_conformal_set = j.at("in_conformal_set").get<bool>();
  h.origin = hypothesis_origin_from(j.at("origin").get<std::string>());
  h.excluded_by_user = j.at("excluded_by_user").get<bool>();
  h.newly_appeared = j.at("newly_appeared").get<bool>();
  h.entered_at_step = j.at("entered_at_step").get<std::int64_t>();
}

inline void to_json(Json& j, const Case& c) {
  Json probs = Json::object();
  for (const auto& [concept_id, states] : c.concept_probs) {
    Json s = Json::object();
    for (const auto& [state, p] : states) s[state] = p;
    probs[concept_id] = s;
  }
  j = Json{{"case_id", c.case_id},
           {"image_ref", c.image_ref},
           {"concept_probs", probs},
           {"true_diagnosis", c.true_diagnosis ? Json(*c.true_diagnosis) : Json(nullptr)},
           {"heatmap_refs", c.heatmap_refs},
           {"annotated_states", c.annotated_states}};
}

inline void from_json(const Json& j, Case& c) {
  c = Case{};
  c.case_id = j.at("case_id").get<std::string>();
  c.image_ref = j.at("image_ref").get<std::string>();
  for (const auto& [concept_id, states] : j.at("concept_probs").items()) {
    for (const auto& [state, p] : states.items()) c.concept_probs[concept_id][state] = p.get<double>();
  }
  if (j.contains("true_diagnosis") && !j.at("true_diagnosis").is_null()) {
    c.true_diagnosis = j.at("true_diagnosis").get<std::string>();
  }
  if (j.contains("heatmap_refs")) c.heatmap_refs = j.at("heatmap_refs").get<std::map<std::string, std::string>>();
  if (j.contains("annotated_states")) {
    c.annotated_states = j.at("annotated_states").get<std::map<std::string, std::string>>();
  }
}

inline Json payload_to_json(const EventPayload& payload) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RefineEvidence>) {
          return Json{{"concept_id", p.concept_id}, {"state_id", p.state_id}};
        } else if constexpr (std::is_same_v<T, ConfirmEvidence>) {
          return Json{{"concept_id", p.concept_id}};
        } else if constexpr (std::is_same_v<T, AnnotateRegion>) {
          return Json{{"region", p.region}};
        } else if constexpr (std::is_same_v<T, AcceptProposedEvidence>) {
          return Json{{"evidence_id", p.evidence_id}, {"state_id", p.state_id ? Json(*p.state_id) : Json(nullptr)}};
        } else if constexpr (std::is_same_v<T, AddHypothesis> || std::is_same_v<T, RemoveHypothesis>) {
          return Json{{"label", p.label}};
        } else if constexpr (std::is_same_v<T, RegroupEvidence>) {
          return Json{{"hypothesis", p.hypothesis}, {"concept_id", p.concept_id}, {"group", to_string(p.group)}};
        } else {
          return Json{{"label", p.label}, {"override", p.override_threshold}};
        }
      },
      payload);
}

inline EventPayload payload_from_json(std::string_view kind, const Json& j) {
  auto str = [&](const char* key) { return j.at(key).get<std::string>(); };
  if (kind == "RefineEvidence") return RefineEvidence{str("concept_id"), str("state_id")};
  if (kind == "ConfirmEvidence") return ConfirmEvidence{str("concept_id")};
  if (kind == "AnnotateRegion") {
    auto region = j.at("region").get<RegionAnnotation>();
    return AnnotateRegion{region};
  }
  if (kind == "AcceptProposedEvidence") {
    AcceptProposedEvidence p{str("evidence_id"), std::nullopt};
    if (j.contains("state_id") && !j.at("state_id").is_null()) p.state_id = str("state_id");
    return p;
  }
  if (kind == "AddHypothesis") return AddHypothesis{str("label")};
  if (kind == "RemoveHypothesis") return RemoveHypothesis{str("label")};
  if (kind == "RegroupEvidence") {
    return RegroupEvidence{str("hypothesis"), str("concept_id"), evidence_group_from(str("group"))};
  }
  if (kind == "Finalize") return Finalize{str("label"), j.value("override", false)};
  throw Error(ErrorCode::ParseError, "unknown event kind '" + std::string(kind) + "'");
}

inline void to_json(Json& j, const InterventionEvent& e) {
  j = Json{{"event_id", e.event_id}, {"session_id", e.session_id}, {"seq", e.seq},
           {"kind", e.kind()},       {"payload", payload_to_json(e.payload)}, {"timestamp", e.timestamp}};
}

inline void from_json(const Json& j, InterventionEvent& e) {
  try {
    e.event_id = j.value("event_id", std::string());
    e.session_id = j.value("session_id", std::string());
    e.seq = j.at("seq").get<std::int64_t>();
    e.payload = payload_from_json(j.at("kind").get<std::string>(), j.at("payload"));
    e.timestamp = j.value("timestamp", std::string());
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::ParseError, std::string("event: ") + ex.what());
  }
}

}  // namespace sensemaking
