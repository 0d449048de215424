#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "records.hpp"
#include "flnas/fairness.hpp"
#include "oracles.hpp"

namespace flnas {
namespace {

DemographicSchema gender_only() { return DemographicSchema{{{"gender", {"male", "female"}}}}; }

EvalRecord rec(std::string id, std::int64_t t, std::int64_t p, std::string gender) {
  return EvalRecord{std::move(id), t, p, {{"gender", std::move(gender)}}};
}

// g1: TP 8 of P 10, FP 1 of N 5. g2: TP 6 of P 10, FP 2 of N 5. Positive class 1.
std::vector<EvalRecord> pairwise_example() {
  std::vector<EvalRecord> out;
  auto add = [&](const std::string& g, int tp, int fp) {
    for (int i = 0; i < 10; ++i) out.push_back(rec(g + "p" + std::to_string(i), 1, i < tp ? 1 : 0, g));
    for (int i = 0; i < 5; ++i) out.push_back(rec(g + "n" + std::to_string(i), 0, i < fp ? 1 : 0, g));
  };
  add("male", 8, 1);
  add("female", 6, 2);
  return out;
}

TEST(OverallAccuracy, Counts) {
  std::vector<EvalRecord> r;
  for (int i = 0; i < 10; ++i) r.push_back(rec("s" + std::to_string(i), 1, i < 7 ? 1 : 0, "male"));
  EXPECT_DOUBLE_EQ(overall_accuracy(r), 0.7);
  for (auto& x : r) x.pred_label = x.true_label;
  EXPECT_EQ(overall_accuracy(r), 1.0);
  EXPECT_THROW(overall_accuracy({}), EmptyInput);
}

TEST(OverallAccuracy, EqualsPerClassTruePositiveSum) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto ds = oracle::random_dataset(rng);
    std::map<std::int64_t, int> tp;
    for (const auto& r : ds.records)
      if (r.true_label == r.pred_label) ++tp[r.true_label];
    int sum = 0;
    for (auto& [cls, n] : tp) sum += n;
    EXPECT_DOUBLE_EQ(overall_accuracy(ds.records), static_cast<double>(sum) / static_cast<double>(ds.records.size()));
  }
}

TEST(GroupAccuracies, DisjointAllCorrectGroups) {
  std::vector<EvalRecord> r{rec("a", 0, 0, "male"), rec("b", 1, 1, "female"), rec("c", 2, 2, "female")};
  const auto g = group_accuracies(r, gender_only());
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].accuracy, 1.0);
  EXPECT_EQ(g[1].accuracy, 1.0);
  EXPECT_EQ(g[0].count, 1);
  EXPECT_EQ(g[1].count, 2);
}

TEST(GroupAccuracies, EmptyGroupReportedWithZeroCount) {
  const auto g = group_accuracies({rec("a", 0, 0, "male")}, gender_only());
  EXPECT_EQ(g[1].group, "female");
  EXPECT_EQ(g[1].count, 0);
}

TEST(GroupAccuracies, MatchesFilterThenCount) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    const auto ds = oracle::random_dataset(rng);
    for (const auto& s : group_accuracies(ds.records, ds.schema)) {
      int n = 0, ok = 0;
      for (const auto& r : ds.records) {
        if (r.memberships.at(s.attribute) != s.group) continue;
        ++n;
        ok += r.true_label == r.pred_label;
      }
      EXPECT_EQ(s.count, n);
      EXPECT_EQ(s.correct, ok);
      if (n) EXPECT_DOUBLE_EQ(s.accuracy, static_cast<double>(ok) / n);
    }
  }
}

TEST(GroupAccuracies, SchemaMismatch) {
  EvalRecord r{"x", 0, 0, {}};
  EXPECT_THROW(group_accuracies({r}, gender_only()), SchemaMismatch);
  EXPECT_THROW(group_accuracies({rec("x", 0, 0, "other")}, gender_only()), SchemaMismatch);
}

TEST(Unfairness, IdenticalGroupsScoreZero) {
  std::vector<EvalRecord> r{rec("a", 0, 0, "male"), rec("b", 0, 1, "male"), rec("c", 0, 0, "female"),
                            rec("d", 0, 1, "female")};
  EXPECT_EQ(unfairness(r, gender_only()), 0.0);
}

TEST(Unfairness, TwoGroupHandCase) {
  const auto recs = parse_predictions_csv(testing::read_file(testing::data_dir() / "predictions/two_group.csv"),
                                          gender_only());
  // accuracies 0.6 and 0.8, overall 0.7
  EXPECT_NEAR(unfairness(recs, gender_only()), 0.1, 1e-12);
}

TEST(Unfairness, MatchesBruteForce) {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 300; ++i) {
    const auto ds = oracle::random_dataset(rng);
    EXPECT_NEAR(unfairness(ds.records, ds.schema), oracle::brute_unfairness(ds.records, ds.schema), 1e-12);
  }
}

TEST(PairwiseRates, IdenticalCountsGiveZero) {
  std::vector<EvalRecord> r{rec("a", 1, 1, "male"), rec("b", 0, 1, "male"), rec("c", 1, 1, "female"),
                            rec("d", 0, 1, "female")};
  const auto d = pairwise_rates(r, gender_only(), 1, "gender", "male", "female");
  EXPECT_EQ(d.tpr_diff, 0.0);
  EXPECT_EQ(d.fpr_diff, 0.0);
  EXPECT_EQ(d.tnr_diff, 0.0);
}

TEST(PairwiseRates, HandExample) {
  const auto d = pairwise_rates(pairwise_example(), gender_only(), 1, "gender", "male", "female");
  EXPECT_NEAR(d.tpr_diff, 0.2, 1e-12);
  EXPECT_NEAR(d.fpr_diff, 0.2, 1e-12);
  EXPECT_NEAR(d.tnr_diff, d.fpr_diff, 1e-15);
}

TEST(PairwiseRates, UndefinedWithoutPositivesOrNegatives) {
  std::vector<EvalRecord> r{rec("a", 1, 1, "male"), rec("b", 0, 0, "female")};
  EXPECT_THROW(pairwise_rates(r, gender_only(), 1, "gender", "male", "female"), UndefinedRate);
  EXPECT_THROW(pairwise_rates(r, gender_only(), 1, "gender", "male", "nobody"), SchemaMismatch);
}

TEST(EqualOpportunity, HandExample) {
  const auto r = pairwise_example();
  EXPECT_NEAR(*eodd(r, gender_only()), 0.2, 1e-12);
  EXPECT_NEAR(*eopp1(r, gender_only()), 0.2, 1e-12);
  EXPECT_NEAR(*eopp2(r, gender_only()), 0.2, 1e-12);
}

TEST(EqualOpportunity, IdenticalBehaviourIsExactlyZero) {
  const auto recs = parse_predictions_csv(
      testing::read_file(testing::data_dir() / "predictions/identical_groups.csv"), default_schema());
  EXPECT_EQ(*eodd(recs, default_schema()), 0.0);
  EXPECT_EQ(*eopp1(recs, default_schema()), 0.0);
  EXPECT_EQ(*eopp2(recs, default_schema()), 0.0);
  EXPECT_EQ(unfairness(recs, default_schema()), 0.0);
}

TEST(EqualOpportunity, PairEnumeration) {
  const auto pairs = group_pairs(default_schema());
  ASSERT_EQ(pairs.size(), 4u);  // C(2,2) + C(3,2)
  EXPECT_EQ(pairs[0], (GroupPair{"gender", "male", "female"}));
  EXPECT_EQ(pairs[1], (GroupPair{"age", "young", "middle"}));
  EXPECT_EQ(pairs[3], (GroupPair{"age", "middle", "old"}));
}

TEST(EqualOpportunity, AllTermsUndefinedIsAbsentNotZero) {
  // Every record is class 0, so no group ever has a negative.
  std::vector<EvalRecord> r{rec("a", 0, 0, "male"), rec("b", 0, 0, "female")};
  EXPECT_FALSE(eodd(r, gender_only()).has_value());
  EXPECT_FALSE(eopp1(r, gender_only()).has_value());
  EXPECT_FALSE(eopp2(r, gender_only()).has_value());
}

TEST(EqualOpportunity, MatchesBruteForceAndOrderings) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 300; ++i) {
    const auto ds = oracle::random_dataset(rng);
    const auto e = eodd(ds.records, ds.schema);
    const auto o1 = eopp1(ds.records, ds.schema);
    const auto o2 = eopp2(ds.records, ds.schema);
    const auto be = oracle::brute_odds(ds.records, ds.schema, oracle::Which::eodd);
    ASSERT_EQ(e.has_value(), be.has_value());
    if (!e) continue;
    EXPECT_NEAR(*e, *be, 1e-12);
    EXPECT_NEAR(*o1, *oracle::brute_odds(ds.records, ds.schema, oracle::Which::eopp1), 1e-12);
    EXPECT_NEAR(*o2, *oracle::brute_odds(ds.records, ds.schema, oracle::Which::eopp2), 1e-12);
    EXPECT_LE(*o1, *e + 1e-15);
    EXPECT_GE(*e, 0.0);
    EXPECT_LE(*e, 1.0);
  }
}

TEST(FairnessScores, InvariantUnderPermutationAndRelabeling) {
  std::mt19937_64 rng(37);
  for (int i = 0; i < 100; ++i) {
    auto ds = oracle::random_dataset(rng);
    const auto before = summarize_fairness(ds.records, ds.schema);
    std::shuffle(ds.records.begin(), ds.records.end(), rng);
    for (auto& r : ds.records) r.sample_id = "x" + r.sample_id;
    const auto after = summarize_fairness(ds.records, ds.schema);
    EXPECT_NEAR(before.unfairness, after.unfairness, 1e-12);
    ASSERT_EQ(before.eodd.has_value(), after.eodd.has_value());
    if (before.eodd) {
      EXPECT_NEAR(*before.eodd, *after.eodd, 1e-12);
      EXPECT_NEAR(*before.eopp1, *after.eopp1, 1e-12);
      EXPECT_NEAR(*before.eopp2, *after.eopp2, 1e-12);
    }
  }
}

TEST(AgeGroup, Boundaries) {
  EXPECT_EQ(age_group(29.9), "young");
  EXPECT_EQ(age_group(30), "middle");
  EXPECT_EQ(age_group(65), "middle");
  EXPECT_EQ(age_group(65.1), "old");
}

TEST(PredictionsCsv, HeaderErrors) {
  EXPECT_THROW(parse_predictions_csv("sample_id,pred_label,true_label,gender\n", gender_only()), ParseError);
  try {
    parse_predictions_csv("sample_id,true_label,pred_label\na,0,0\n", gender_only());
    FAIL();
  } catch (const SchemaMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("'gender'"), std::string::npos);
  }
  EXPECT_THROW(parse_predictions_csv("sample_id,true_label,pred_label,gender,shoe\n", gender_only()), SchemaMismatch);
  try {
    parse_predictions_csv("sample_id,true_label,pred_label,gender\na,0,0,male\nb,x,0,male\n", gender_only());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(PredictionsCsv, ColumnOrderIsFree) {
  const auto r = parse_predictions_csv("sample_id,true_label,pred_label,age,gender\r\na,1,0,old,female\r\n\n",
                                       default_schema());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].memberships.at("gender"), "female");
  EXPECT_EQ(r[0].memberships.at("age"), "old");
}

TEST(MetricsReport, ReproducesExampleString) {
  const auto text = format_metrics_report(testing::reference_record());
  EXPECT_EQ(text, testing::read_file(FLNAS_SOURCE_DIR "/tests/golden/metrics_report.txt"));
  EXPECT_NE(text.find("Unfairness Score: 1.2983, EODD: 0.1229, EOPP1: 0.1224, EOPP2: 0.0105"), std::string::npos);
}

TEST(MetricsReport, ZeroRecord) {
  MetricsRecord m;
  m.train_loss = 0.0;
  m.valid_loss = 0.0;
  m.eodd = m.eopp1 = m.eopp2 = 0.0;
  const auto text = format_metrics_report(m);
  EXPECT_NE(text.find("Unfairness Score: 0.0000, EODD: 0.0000"), std::string::npos);
  EXPECT_EQ(text.rfind("Train Loss: 0.0000, Train Acc: 0.00%", 0), 0u);
}

TEST(MetricsReport, SyntheticGolden) {
  MetricsRecord m;
  m.train_acc = 0.91234;
  m.valid_acc = 0.5;
  m.test_acc = 0.49;
  m.unfairness = 0.0123456;
  m.eodd = 0.25;
  m.eopp2 = 0.125;
  m.group_detail = {{"gender", "male", 0.5, 10, 5}, {"gender", "female", 0.0, 0, 0}};
  m.cost = CostReport{584, 1818624, 80160, 0.004, 500.0, 2};
  EXPECT_EQ(format_metrics_report(m), testing::read_file(FLNAS_SOURCE_DIR "/tests/golden/synthetic_report.txt"));
}

TEST(MetricsRecord, JsonRoundTrip) {
  auto m = testing::reference_record();
  m.measured = MeasuredHardware{0.0021, 1234};
  EXPECT_EQ(metrics_from_json(Json::parse(metrics_to_json(m).dump())), m);
  MetricsRecord empty;
  EXPECT_EQ(metrics_from_json(Json::parse(metrics_to_json(empty).dump())), empty);
}

}  // namespace
}  // namespace flnas
