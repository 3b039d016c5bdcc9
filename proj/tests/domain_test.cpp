#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

namespace sm = sensemaking;

namespace {

bool has_issue(const std::vector<sm::ValidationIssue>& issues, sm::IssueKind kind, const std::string& concept_id) {
  for (const auto& i : issues) {
    if (i.kind == kind && i.concept_id == concept_id) return true;
  }
  return false;
}

TEST(ConceptSchema, CountsStatesAndDiagnoses) {
  sm::ConceptSchema schema({{"a", "A", {"no", "yes"}}, {"b", "B", {"no", "yes"}}}, {"x", "y"});
  EXPECT_EQ(schema.dimension(), 4u);
  EXPECT_EQ(schema.num_diagnoses(), 2u);
  EXPECT_EQ(schema.offset(1), 2u);
  EXPECT_EQ(schema.state_index(1, "yes"), 1u);
  EXPECT_FALSE(schema.concept_index("c").has_value());
}

TEST(ConceptSchema, RejectsDuplicatesAndDegenerateShapes) {
  auto code_of = [](auto&& build) {
    try {
      build();
    } catch (const sm::Error& e) {
      return e.code();
    }
    return sm::ErrorCode::NotFound;
  };
  EXPECT_EQ(code_of([] { sm::ConceptSchema({{"a", "", {"0", "1"}}, {"a", "", {"0", "1"}}}, {"x", "y"}); }),
            sm::ErrorCode::DuplicateId);
  EXPECT_EQ(code_of([] { sm::ConceptSchema({{"a", "", {"0", "1"}}}, {"x", "x"}); }), sm::ErrorCode::DuplicateId);
  EXPECT_EQ(code_of([] { sm::ConceptSchema({{"a", "", {"0", "0"}}}, {"x", "y"}); }), sm::ErrorCode::DuplicateId);
  EXPECT_EQ(code_of([] { sm::ConceptSchema({{"a", "", {"0"}}}, {"x", "y"}); }), sm::ErrorCode::InvalidSchema);
  EXPECT_EQ(code_of([] { sm::ConceptSchema({{"a", "", {"0", "1"}}}, {"x"}); }), sm::ErrorCode::InvalidSchema);
}

TEST(ConceptSchema, HashIsStableAndIgnoresDisplayNames) {
  const auto schema = fixtures::lesion_schema();
  // Hash of the canonical text, spelled out by hand.
  const std::string canonical =
      R"({"concepts":[{"id":"pigment_network","states":["absent","typical","atypical"]},)"
      R"({"id":"streaks","states":["absent","regular","irregular"]}],)"
      R"("diagnoses":["nevus","melanoma","seborrheic_keratosis"]})";
  EXPECT_EQ(schema.hash(), sm::to_hex(sm::fnv1a64(canonical)));
  EXPECT_EQ(schema.hash(), "98051667564e2494");

  sm::ConceptSchema renamed({{"pigment_network", "PN", {"absent", "typical", "atypical"}},
                             {"streaks", "ST", {"absent", "regular", "irregular"}}},
                            {"nevus", "melanoma", "seborrheic_keratosis"});
  EXPECT_EQ(renamed.hash(), schema.hash());
  EXPECT_EQ(sm::ConceptSchema::from_json(schema.to_json()).hash(), schema.hash());
}

TEST(ConceptSchema, FnvMatchesPublishedVectors) {
  EXPECT_EQ(sm::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(sm::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(sm::fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(ValidateCase, AcceptsNormalizedCase) {
  EXPECT_TRUE(sm::validate_case(fixtures::lesion_case(), fixtures::lesion_schema()).empty());
}

TEST(ValidateCase, FlagsUnnormalizedConcept) {
  auto c = fixtures::lesion_case();
  c.concept_probs["streaks"] = {{"absent", 0.6}, {"regular", 0.1}, {"irregular", 0.1}};
  const auto issues = sm::validate_case(c, fixtures::lesion_schema());
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_EQ(issues[0].kind, sm::IssueKind::ProbabilityNotNormalized);
  EXPECT_EQ(issues[0].concept_id, "streaks");
}

TEST(ValidateCase, FlagsMissingConcept) {
  auto c = fixtures::lesion_case();
  c.concept_probs.erase("pigment_network");
  EXPECT_TRUE(has_issue(sm::validate_case(c, fixtures::lesion_schema()), sm::IssueKind::MissingConcept,
                        "pigment_network"));
}

TEST(ValidateCase, ReportsEveryViolation) {
  auto c = fixtures::lesion_case();
  c.concept_probs.erase("pigment_network");
  c.concept_probs["streaks"]["dotted"] = 0.0;
  c.concept_probs["asymmetry"] = {{"yes", 1.0}};
  c.true_diagnosis = "lentigo";
  const auto issues = sm::validate_case(c, fixtures::lesion_schema());
  EXPECT_TRUE(has_issue(issues, sm::IssueKind::MissingConcept, "pigment_network"));
  EXPECT_TRUE(has_issue(issues, sm::IssueKind::UnknownState, "streaks"));
  EXPECT_TRUE(has_issue(issues, sm::IssueKind::UnknownConcept, "asymmetry"));
  EXPECT_TRUE(has_issue(issues, sm::IssueKind::UnknownDiagnosis, ""));
}

TEST(ValidateCase, ToleranceIsOneInAMillion) {
  auto c = fixtures::lesion_case();
  c.concept_probs["streaks"]["absent"] = 0.8 + 5e-7;
  EXPECT_TRUE(sm::validate_case(c, fixtures::lesion_schema()).empty());
  c.concept_probs["streaks"]["absent"] = 0.8 + 2e-6;
  EXPECT_FALSE(sm::validate_case(c, fixtures::lesion_schema()).empty());
}

TEST(RegionAnnotation, MustLieInsideUnitSquare) {
  EXPECT_TRUE((sm::RegionAnnotation{0.0, 0.0, 1.0, 1.0}).valid());
  EXPECT_TRUE((sm::RegionAnnotation{0.2, 0.3, 0.5, 0.4}).valid());
  EXPECT_FALSE((sm::RegionAnnotation{0.6, 0.0, 0.5, 0.5}).valid());
  EXPECT_FALSE((sm::RegionAnnotation{0.1, 0.1, 0.0, 0.5}).valid());
  EXPECT_FALSE((sm::RegionAnnotation{-0.1, 0.1, 0.2, 0.5}).valid());
}

// Round-trip property over randomly generated values of every encoded type.
class JsonRoundTrip : public ::testing::Test {
 protected:
  std::mt19937_64 gen{20240611};
  std::uniform_real_distribution<double> unit{0.0, 1.0};

  std::string word() { return "w" + std::to_string(gen() % 1000); }

  std::optional<sm::RegionAnnotation> region() {
    if (gen() % 2) return std::nullopt;
    const double x = unit(gen) * 0.5, y = unit(gen) * 0.5;
    return sm::RegionAnnotation{x, y, unit(gen) * 0.5 + 1e-3, unit(gen) * 0.5 + 1e-3,
                                gen() % 2 ? sm::RegionAuthor::Ai : sm::RegionAuthor::User};
  }

  sm::EventPayload payload() {
    switch (gen() % 8) {
      case 0: return sm::RefineEvidence{word(), word()};
      case 1: return sm::ConfirmEvidence{word()};
      case 2: return sm::AnnotateRegion{region().value_or(sm::RegionAnnotation{0.1, 0.1, 0.2, 0.2})};
      case 3:
        return sm::AcceptProposedEvidence{word(), gen() % 2 ? std::optional<std::string>(word()) : std::nullopt};
      case 4: return sm::AddHypothesis{word()};
      case 5: return sm::RemoveHypothesis{word()};
      case 6: return sm::RegroupEvidence{word(), word(), static_cast<sm::EvidenceGroup>(gen() % 3)};
      default: return sm::Finalize{word(), gen() % 2 == 0};
    }
  }
};

TEST_F(JsonRoundTrip, EvidenceItems) {
  for (int i = 0; i < 200; ++i) {
    sm::EvidenceItem e{word(), word(), word(), unit(gen), static_cast<sm::EvidenceStatus>(gen() % 4), region(),
                       static_cast<std::int64_t>(gen() % 50)};
    const sm::Json j = e;
    EXPECT_EQ(sm::Json::parse(j.dump()).get<sm::EvidenceItem>(), e);
  }
}

TEST_F(JsonRoundTrip, HypothesisEntries) {
  for (int i = 0; i < 200; ++i) {
    sm::HypothesisEntry h{word(),      unit(gen),   gen() % 2 == 0, static_cast<sm::HypothesisOrigin>(gen() % 2),
                          gen() % 2 == 0, gen() % 2 == 0, static_cast<std::int64_t>(gen() % 50)};
    const sm::Json j = h;
    EXPECT_EQ(sm::Json::parse(j.dump()).get<sm::HypothesisEntry>(), h);
  }
}

TEST_F(JsonRoundTrip, Cases) {
  const auto schema = fixtures::lesion_schema();
  for (int i = 0; i < 100; ++i) {
    auto c = fixtures::random_case(schema, gen, "case-" + std::to_string(i));
    if (gen() % 2) c.true_diagnosis.reset();
    if (gen() % 2) c.heatmap_refs["streaks"] = "heatmaps/x/streaks.pgm";
    c.annotated_states["streaks"] = "regular";
    const sm::Json j = c;
    EXPECT_EQ(sm::Json::parse(j.dump()).get<sm::Case>(), c);
  }
}

TEST_F(JsonRoundTrip, InterventionEvents) {
  for (int i = 0; i < 400; ++i) {
    sm::InterventionEvent e{word(), word(), static_cast<std::int64_t>(i + 1), payload(), "2026-01-01T00:00:00.000Z"};
    const sm::Json j = e;
    EXPECT_EQ(sm::Json::parse(j.dump()).get<sm::InterventionEvent>(), e) << j.dump();
  }
}

TEST(InterventionEvent, RejectsUnknownKind) {
  const auto j = sm::Json::parse(R"({"seq":1,"kind":"Teleport","payload":{}})");
  EXPECT_THROW(j.get<sm::InterventionEvent>(), sm::Error);
}

}  // namespace
