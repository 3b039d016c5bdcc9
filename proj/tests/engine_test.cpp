#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "fixtures.hpp"

namespace sm = sensemaking;

namespace {

sm::InterventionEvent ev(const sm::SensemakingState& s, sm::EventPayload payload) {
  return sm::InterventionEvent{"", s.session_id, s.t + 1, std::move(payload), ""};
}

sm::ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const sm::Error& e) {
    return e.code();
  }
  return sm::ErrorCode::NotFound;
}

std::vector<std::string> labels_of(const sm::SensemakingState& s) {
  std::vector<std::string> out;
  for (const auto& h : s.hypotheses) out.push_back(h.diagnosis_label);
  return out;
}

// ---------------------------------------------------------------------------
// Extraction

TEST(Extract, KeepsArgmaxStatesAboveThreshold) {
  const auto schema = fixtures::lesion_schema();
  const auto items = sm::extract_evidence(fixtures::lesion_case(), schema, 0.5);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].concept_id, "pigment_network");
  EXPECT_EQ(items[0].state_id, "typical");
  EXPECT_DOUBLE_EQ(items[0].probability, 0.7);
  EXPECT_EQ(items[1].state_id, "absent");
  for (const auto& e : items) {
    EXPECT_EQ(e.status, sm::EvidenceStatus::AiProposed);
    EXPECT_EQ(e.created_at_step, 0);
  }
  const auto strict = sm::extract_evidence(fixtures::lesion_case(), schema, 0.75);
  ASSERT_EQ(strict.size(), 1u);
  EXPECT_EQ(strict[0].concept_id, "streaks");
  EXPECT_TRUE(sm::extract_evidence(fixtures::lesion_case(), schema, 0.9).empty());
}

TEST(Extract, MatchesExhaustiveScan) {
  std::mt19937_64 gen(12);
  const auto schema = sm::synthetic_schema(6, 4, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = fixtures::random_case(schema, gen, "c");
    const double tau = unit(gen) * 0.8;
    std::vector<std::pair<std::string, std::string>> expected;
    for (const auto& concept_def : schema.concepts()) {
      const auto& probs = c.concept_probs.at(concept_def.id);
      // Strictly greater than every earlier state, at least every later one.
      for (std::size_t s = 0; s < concept_def.states.size(); ++s) {
        const double p = probs.at(concept_def.states[s]);
        bool top = true;
        for (std::size_t o = 0; o < concept_def.states.size(); ++o) {
          const double q = probs.at(concept_def.states[o]);
          if (o < s ? q >= p : q > p) top = false;
        }
        if (top && p >= tau) expected.emplace_back(concept_def.id, concept_def.states[s]);
      }
    }
    const auto got = sm::extract_evidence(c, schema, tau);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].concept_id, expected[i].first);
      EXPECT_EQ(got[i].state_id, expected[i].second);
    }
  }
}

// ---------------------------------------------------------------------------
// Melanoma walk-through

TEST(Session, InitialStateRetrievesOnlyNevus) {
  const auto model = fixtures::lesion_model();
  const auto s = sm::init_session("s1", fixtures::lesion_case(), model);
  EXPECT_EQ(s.t, 0);
  EXPECT_EQ(s.conformal_set, (std::vector<std::string>{"nevus"}));
  EXPECT_EQ(labels_of(s), (std::vector<std::string>{"nevus"}));
  EXPECT_FALSE(s.hypotheses[0].newly_appeared);
  EXPECT_NEAR(s.scores[0], 0.751522911439101, 1e-12);
  EXPECT_NEAR(s.scores[1], 0.15172985901276026, 1e-12);
  EXPECT_NEAR(s.scores[2], 0.09674722954813857, 1e-12);
  EXPECT_EQ(s.evidence.size(), 2u);
  EXPECT_FALSE(sm::check_acceptance(s).has_value());
}

TEST(Session, RefiningPigmentNetworkSurfacesMelanoma) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  const auto s0 = sm::init_session("s1", c, model);
  const auto s1 = sm::apply_event(s0, ev(s0, sm::RefineEvidence{"pigment_network", "atypical"}), c, model);

  EXPECT_EQ(s1.t, 1);
  EXPECT_NEAR(s1.scores[0], 0.09547138672234594, 1e-12);
  EXPECT_NEAR(s1.scores[1], 0.8616305539788678, 1e-12);
  EXPECT_NEAR(s1.scores[2], 0.04289805929878637, 1e-12);
  EXPECT_EQ(s1.conformal_set, (std::vector<std::string>{"melanoma"}));
  ASSERT_EQ(labels_of(s1), (std::vector<std::string>{"nevus", "melanoma"}));
  EXPECT_FALSE(s1.hypotheses[0].in_conformal_set);
  EXPECT_TRUE(s1.hypotheses[1].newly_appeared);
  EXPECT_EQ(s1.hypotheses[1].entered_at_step, 1);

  const auto* pn = s1.active_evidence("pigment_network");
  ASSERT_NE(pn, nullptr);
  EXPECT_EQ(pn->state_id, "atypical");
  EXPECT_EQ(pn->status, sm::EvidenceStatus::UserRefined);
  EXPECT_DOUBLE_EQ(pn->probability, 0.2);
  ASSERT_EQ(s1.archived.size(), 1u);
  EXPECT_EQ(s1.archived[0].state_id, "typical");

  const auto candidate = sm::check_acceptance(s1);
  ASSERT_TRUE(candidate.has_value());
  EXPECT_EQ(candidate->label, "melanoma");

  const auto s2 = sm::apply_event(s1, ev(s1, sm::Finalize{"melanoma", false}), c, model);
  ASSERT_TRUE(s2.accepted.has_value());
  EXPECT_TRUE(s2.finalized);
  EXPECT_EQ(s2.accepted->label, "melanoma");
  EXPECT_NEAR(s2.accepted->score, 0.8616305539788678, 1e-12);
  EXPECT_FALSE(s2.accepted->override_threshold);
  EXPECT_EQ(code_of([&] { sm::apply_event(s2, ev(s2, sm::AddHypothesis{"nevus"}), c, model); }),
            sm::ErrorCode::SessionFinalized);
}

TEST(Session, FinalizeAboveThresholdWithLowerDelta) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  const auto s0 = sm::init_session("s1", c, model, {0.7, 0.5, 0.05});
  const auto s1 = sm::apply_event(s0, ev(s0, sm::Finalize{"nevus", false}), c, model);
  EXPECT_NEAR(s1.accepted->score, 0.751522911439101, 1e-12);
  EXPECT_FALSE(s1.accepted->override_threshold);
}

TEST(Session, FinalizeBelowThresholdNeedsOverride) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  const auto s0 = sm::init_session("s1", c, model);
  EXPECT_EQ(code_of([&] { sm::apply_event(s0, ev(s0, sm::Finalize{"nevus", false}), c, model); }),
            sm::ErrorCode::ThresholdNotMet);
  const auto s1 = sm::apply_event(s0, ev(s0, sm::Finalize{"nevus", true}), c, model);
  EXPECT_TRUE(s1.accepted->override_threshold);
  EXPECT_TRUE(s1.finalized);
  // Not a candidate at all.
  EXPECT_EQ(code_of([&] { sm::apply_event(s0, ev(s0, sm::Finalize{"melanoma", true}), c, model); }),
            sm::ErrorCode::UnknownHypothesis);
}

TEST(Session, RefiningToTheAssertedStateLeavesScoresAlone) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  auto s = sm::init_session("s1", c, model);
  s = sm::apply_event(s, ev(s, sm::RefineEvidence{"pigment_network", "atypical"}), c, model);
  const auto before = s.scores;
  s = sm::apply_event(s, ev(s, sm::RefineEvidence{"pigment_network", "atypical"}), c, model);
  EXPECT_EQ(s.scores, before);
  EXPECT_EQ(s.archived.size(), 2u);
}

TEST(Session, ConfirmTurnsBlockOneHot) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  auto s = sm::init_session("s1", c, model);
  s = sm::apply_event(s, ev(s, sm::ConfirmEvidence{"streaks"}), c, model);
  EXPECT_EQ(s.active_evidence("streaks")->status, sm::EvidenceStatus::UserConfirmed);
  // streaks block (1,0,0): nevus logit 2*0.7 + 1 = 2.4.
  const auto ref = fixtures::reference_softmax({2.4, 0.6, 0.15});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.scores[k], ref[k], 1e-12);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::ConfirmEvidence{"streaks"}), c, model); }),
            sm::ErrorCode::InvalidTransition);
}

TEST(Session, HypothesisEditsAndRegrouping) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  auto s = sm::init_session("s1", c, model);
  s = sm::apply_event(s, ev(s, sm::AddHypothesis{"seborrheic_keratosis"}), c, model);
  ASSERT_EQ(labels_of(s), (std::vector<std::string>{"nevus", "seborrheic_keratosis"}));
  EXPECT_EQ(s.hypotheses[1].origin, sm::HypothesisOrigin::UserAdded);
  EXPECT_FALSE(s.hypotheses[1].in_conformal_set);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::AddHypothesis{"nevus"}), c, model); }),
            sm::ErrorCode::InvalidTransition);

  s = sm::apply_event(s, ev(s, sm::RemoveHypothesis{"nevus"}), c, model);
  EXPECT_TRUE(s.hypotheses[0].excluded_by_user);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::Finalize{"nevus", true}), c, model); }),
            sm::ErrorCode::UnknownHypothesis);
  s = sm::apply_event(s, ev(s, sm::AddHypothesis{"nevus"}), c, model);
  EXPECT_FALSE(s.hypotheses[0].excluded_by_user);

  const auto scores = s.scores;
  s = sm::apply_event(s, ev(s, sm::RegroupEvidence{"nevus", "streaks", sm::EvidenceGroup::Neutral}), c, model);
  EXPECT_EQ(s.scores, scores);
  const auto a = sm::attribute_state(s, c, model, "nevus");
  for (const auto& item : a.items) {
    if (item.concept_id == "streaks") {
      EXPECT_EQ(item.group, sm::EvidenceGroup::Neutral);
      EXPECT_EQ(item.computed_group, sm::EvidenceGroup::Supporting);
    }
  }
}

TEST(Session, RejectsMalformedEvents) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  const auto s = sm::init_session("s1", c, model);
  auto gap = ev(s, sm::AddHypothesis{"melanoma"});
  gap.seq = 3;
  EXPECT_EQ(code_of([&] { sm::apply_event(s, gap, c, model); }), sm::ErrorCode::OutOfOrderEvent);
  auto replayed = gap;
  replayed.seq = 0;
  EXPECT_EQ(code_of([&] { sm::apply_event(s, replayed, c, model); }), sm::ErrorCode::OutOfOrderEvent);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::RefineEvidence{"asymmetry", "yes"}), c, model); }),
            sm::ErrorCode::UnknownConcept);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::RefineEvidence{"streaks", "dotted"}), c, model); }),
            sm::ErrorCode::UnknownState);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::AddHypothesis{"lentigo"}), c, model); }),
            sm::ErrorCode::UnknownHypothesis);
  EXPECT_EQ(code_of([&] {
              sm::apply_event(s, ev(s, sm::AnnotateRegion{{0.7, 0.7, 0.5, 0.5}}), c, model);
            }),
            sm::ErrorCode::InvalidRegion);
  EXPECT_EQ(code_of([&] { sm::apply_event(s, ev(s, sm::AcceptProposedEvidence{"p9-0", {}}), c, model); }),
            sm::ErrorCode::InvalidTransition);
  auto foreign = ev(s, sm::AddHypothesis{"melanoma"});
  foreign.session_id = "s2";
  EXPECT_EQ(code_of([&] { sm::apply_event(s, foreign, c, model); }), sm::ErrorCode::ValidationError);
}

TEST(Session, RejectsBadConfigAndCases) {
  const auto model = fixtures::lesion_model();
  auto c = fixtures::lesion_case();
  EXPECT_EQ(code_of([&] { sm::init_session("s", c, model, {1.0, 0.5, 0.05}); }), sm::ErrorCode::ValidationError);
  c.concept_probs["streaks"]["absent"] = 0.5;
  EXPECT_EQ(code_of([&] { sm::init_session("s", c, model); }), sm::ErrorCode::ValidationError);
}

// ---------------------------------------------------------------------------
// Acceptance rule against a direct scan

TEST(Acceptance, MatchesExhaustiveScan) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    sm::SensemakingState s;
    s.delta = 0.05 + unit(gen) * 0.9;
    const std::size_t n = gen() % 6;
    for (std::size_t i = 0; i < n; ++i) {
      sm::HypothesisEntry h;
      h.diagnosis_label = "d" + std::to_string(i);
      // Coarse grid so ties and exact-delta hits happen.
      h.score = std::round(unit(gen) * 20) / 20;
      h.excluded_by_user = gen() % 4 == 0;
      s.hypotheses.push_back(h);
    }
    if (gen() % 5 == 0 && n > 0) s.delta = s.hypotheses[0].score;

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.hypotheses[i].excluded_by_user) continue;
      if (!best || s.hypotheses[i].score > s.hypotheses[*best].score) best = i;
    }
    const auto got = sm::check_acceptance(s);
    if (best && s.hypotheses[*best].score >= s.delta) {
      ASSERT_TRUE(got.has_value());
      EXPECT_EQ(got->label, s.hypotheses[*best].diagnosis_label);
    } else {
      EXPECT_FALSE(got.has_value());
    }
  }
}

// ---------------------------------------------------------------------------
// Region proposals

sm::Case heatmap_case() {
  auto c = fixtures::lesion_case();
  // 4x4. pigment_network lights the left half, streaks two corners.
  sm::Heatmap pn{4, 4, std::vector<double>(16, 0.0)};
  for (std::size_t y = 0; y < 4; ++y) {
    pn.values[y * 4 + 0] = 1.0;
    pn.values[y * 4 + 1] = 1.0;
  }
  sm::Heatmap st{4, 4, std::vector<double>(16, 0.0)};
  st.values[0] = 0.5;
  st.values[15] = 1.0;
  c.heatmaps["pigment_network"] = pn;
  c.heatmaps["streaks"] = st;
  return c;
}

TEST(Proposals, TopLeftQuadrantSharesMass) {
  const auto schema = fixtures::lesion_schema();
  const auto p = sm::propose_region_evidence(heatmap_case(), {0.0, 0.0, 0.5, 0.5}, schema);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].concept_id, "pigment_network");
  EXPECT_NEAR(p[0].relevance, 4.0 / 4.5, 1e-12);
  EXPECT_EQ(p[1].concept_id, "streaks");
  EXPECT_NEAR(p[1].relevance, 0.5 / 4.5, 1e-12);
  EXPECT_EQ(p[0].state_id, "typical");
  EXPECT_DOUBLE_EQ(p[1].probability, 0.8);
}

TEST(Proposals, WholeImageAndEmptyRegions) {
  const auto schema = fixtures::lesion_schema();
  const auto whole = sm::propose_region_evidence(heatmap_case(), {0.0, 0.0, 1.0, 1.0}, schema);
  ASSERT_EQ(whole.size(), 2u);
  EXPECT_NEAR(whole[0].relevance, 8.0 / 9.5, 1e-12);
  const auto right = sm::propose_region_evidence(heatmap_case(), {0.5, 0.5, 0.5, 0.5}, schema);
  ASSERT_EQ(right.size(), 1u);
  EXPECT_EQ(right[0].concept_id, "streaks");
  EXPECT_DOUBLE_EQ(right[0].relevance, 1.0);
  EXPECT_TRUE(sm::propose_region_evidence(heatmap_case(), {0.55, 0.05, 0.4, 0.4}, schema).empty());
}

TEST(Proposals, EntropyFallbackWithoutHeatmaps) {
  const auto schema = fixtures::lesion_schema();
  const auto p = sm::propose_region_evidence(fixtures::lesion_case(), {0.1, 0.1, 0.2, 0.2}, schema);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].concept_id, "pigment_network");
  const double h_pn = -(0.1 * std::log(0.1) + 0.7 * std::log(0.7) + 0.2 * std::log(0.2)) / std::log(3.0);
  const double h_st = -(0.8 * std::log(0.8) + 2 * 0.1 * std::log(0.1)) / std::log(3.0);
  EXPECT_NEAR(p[0].relevance, h_pn, 1e-12);
  EXPECT_NEAR(p[1].relevance, h_st, 1e-12);
}

TEST(Proposals, SkipAssertedConceptsAndCapAtThree) {
  const auto schema = fixtures::lesion_schema();
  const std::vector<sm::EvidenceItem> ev{{"e1", "pigment_network", "atypical", 0.2,
                                          sm::EvidenceStatus::UserRefined, std::nullopt, 1}};
  const auto p = sm::propose_region_evidence(heatmap_case(), {0.0, 0.0, 1.0, 1.0}, schema, ev);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].concept_id, "streaks");

  const auto wide = sm::synthetic_schema(6, 3, 2);
  std::mt19937_64 gen(4);
  EXPECT_EQ(sm::propose_region_evidence(fixtures::random_case(wide, gen, "w"), {0, 0, 1, 1}, wide).size(), 3u);
}

TEST(Proposals, AcceptingAProposalAssertsIt) {
  const auto model = fixtures::lesion_model();
  const auto c = heatmap_case();
  auto s = sm::init_session("s1", c, model);
  s = sm::apply_event(s, ev(s, sm::AnnotateRegion{{0.0, 0.0, 0.5, 0.5}}), c, model);
  ASSERT_EQ(s.proposals.size(), 2u);
  EXPECT_EQ(s.proposals[0].evidence_id, "p1-0");
  EXPECT_EQ(s.proposals[0].region->author, sm::RegionAuthor::Ai);
  ASSERT_EQ(s.annotations.size(), 1u);

  s = sm::apply_event(s, ev(s, sm::AcceptProposedEvidence{"p1-0", std::string("atypical")}), c, model);
  EXPECT_EQ(s.proposals.size(), 1u);
  const auto* pn = s.active_evidence("pigment_network");
  EXPECT_EQ(pn->status, sm::EvidenceStatus::UserAdded);
  EXPECT_EQ(pn->state_id, "atypical");
  EXPECT_EQ(pn->evidence_id, "e2-pigment_network");
  EXPECT_NEAR(s.scores[1], 0.8616305539788678, 1e-12);
}

// ---------------------------------------------------------------------------
// Replay and invariants over random sessions

TEST(Replay, EmptyLogIsTheInitialState) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  EXPECT_EQ(sm::canonical_state(sm::replay("s1", {}, c, model)),
            sm::canonical_state(sm::init_session("s1", c, model)));
}

TEST(Replay, GapIsRejected) {
  const auto model = fixtures::lesion_model();
  const auto c = fixtures::lesion_case();
  std::vector<sm::InterventionEvent> events{{"", "s1", 1, sm::AddHypothesis{"melanoma"}, ""},
                                            {"", "s1", 3, sm::RemoveHypothesis{"melanoma"}, ""}};
  EXPECT_EQ(code_of([&] { sm::replay("s1", events, c, model); }), sm::ErrorCode::OutOfOrderEvent);
}

class RandomSessions : public ::testing::Test {
 protected:
  sm::ConceptSchema schema = sm::synthetic_schema(5, 3, 4);
  std::mt19937_64 gen{77};
  std::optional<sm::Model> model;

  void SetUp() override {
    auto w = fixtures::random_weights(schema, gen, 1.5);
    std::vector<sm::LabeledVector> cal;
    for (int i = 0; i < 50; ++i) {
      cal.push_back({sm::ConceptVector{sm::flatten_probabilities(fixtures::random_case(schema, gen, "c"), schema)},
                     gen() % 4});
    }
    auto calibration = sm::calibrate(w, cal, 0.2);
    model.emplace(schema, std::move(w), std::move(calibration));
  }
};

TEST_F(RandomSessions, ReplayReproducesIncrementalState) {
  for (int session = 0; session < 100; ++session) {
    const auto c = fixtures::random_case(schema, gen, "case-" + std::to_string(session));
    const auto start = sm::init_session("s", c, *model);
    sm::SensemakingState live;
    const auto events = fixtures::random_session(start, c, *model, gen, 40, &live);
    const auto replayed = sm::replay("s", events, c, *model);
    EXPECT_EQ(sm::canonical_state(replayed), sm::canonical_state(live));
    EXPECT_EQ(replayed, live);
    // Canonical JSON decodes back to the same state.
    EXPECT_EQ(sm::state_from_json(sm::Json::parse(sm::canonical_state(live))), live);
  }
}

TEST_F(RandomSessions, StepInvariantsHold) {
  for (int session = 0; session < 60; ++session) {
    const auto c = fixtures::random_case(schema, gen, "case");
    auto s = sm::init_session("s", c, *model);
    std::set<std::string> ever_retrieved(s.conformal_set.begin(), s.conformal_set.end());
    for (int step = 0; step < 40; ++step) {
      const auto before = s;
      const sm::InterventionEvent e{"", "s", s.t + 1, fixtures::random_payload(s, schema, gen, false), ""};
      try {
        s = sm::apply_event(s, e, c, *model);
      } catch (const sm::Error&) {
        continue;
      }
      EXPECT_EQ(s.t, before.t + 1);
      EXPECT_NEAR(std::accumulate(s.scores.begin(), s.scores.end(), 0.0), 1.0, 1e-9);
      EXPECT_FALSE(s.conformal_set.empty());
      ever_retrieved.insert(s.conformal_set.begin(), s.conformal_set.end());
      // H only grows and always covers everything ever retrieved.
      const auto labels = labels_of(s);
      for (const auto& l : labels_of(before)) {
        EXPECT_NE(std::find(labels.begin(), labels.end(), l), labels.end());
      }
      for (const auto& l : ever_retrieved) EXPECT_NE(std::find(labels.begin(), labels.end(), l), labels.end());
      for (const auto& h : s.hypotheses) {
        const bool in_set =
            std::find(s.conformal_set.begin(), s.conformal_set.end(), h.diagnosis_label) != s.conformal_set.end();
        EXPECT_EQ(h.in_conformal_set, in_set);
        EXPECT_DOUBLE_EQ(h.score, s.scores[*schema.diagnosis_index(h.diagnosis_label)]);
      }
      // At most one active item per concept, in schema order.
      for (std::size_t i = 1; i < s.evidence.size(); ++i) {
        EXPECT_LT(*schema.concept_index(s.evidence[i - 1].concept_id), *schema.concept_index(s.evidence[i].concept_id));
      }
      // Scores follow the assembled vector.
      const auto ref = fixtures::reference_scores(model->weights, sm::current_vector(s, c, *model).values);
      for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(s.scores[k], ref[k], 1e-12);
    }
  }
}

TEST_F(RandomSessions, DiffDescribesTheTransition) {
  const auto c = fixtures::random_case(schema, gen, "case");
  auto s = sm::init_session("s", c, *model);
  const auto next = sm::apply_event(s, ev(s, sm::RefineEvidence{"c0", "s2"}), c, *model);
  const auto diff = sm::state_diff(s, next);
  EXPECT_EQ(diff.at("t"), 1);
  ASSERT_EQ(diff.at("evidence_changed").size(), 1u);
  EXPECT_EQ(diff.at("evidence_changed")[0].at("state_id"), "s2");
  EXPECT_EQ(diff.at("scores").get<std::vector<double>>(), next.scores);
}

}  // namespace
