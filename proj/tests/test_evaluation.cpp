#include <gtest/gtest.h>

#include <vector>

#include "cxrnet/dataset.hpp"
#include "cxrnet/evaluation.hpp"
#include "cxrnet/random.hpp"

using Labels = std::vector<std::size_t>;

TEST(Confusion, InfluenzaExperimentRow) {
  Labels truth(1000, 1), pred;
  pred.insert(pred.end(), 4, 0);
  pred.insert(pred.end(), 979, 1);
  pred.insert(pred.end(), 17, 2);
  const auto cm = cxr::confusion_matrix(truth, pred, 3, cxr::class_label_list());
  EXPECT_EQ(cm.rows()[1], (std::vector<std::uint64_t>{4, 979, 17}));
  EXPECT_EQ(cm.total(), 1000u);

  const auto r = cxr::metrics(cm);
  // 979 / 1000 in exact arithmetic
  EXPECT_EQ(r.per_class[1].recall, 979.0 / 1000.0);
  EXPECT_EQ(r.per_class[1].one_vs_rest_accuracy, 979.0 / 1000.0);
  EXPECT_GE(r.per_class[1].one_vs_rest_accuracy, 0.97);
}

TEST(Confusion, HandCountedBinary) {
  const auto cm = cxr::confusion_matrix(Labels{0, 0, 1}, Labels{0, 1, 1}, 2);
  EXPECT_EQ(cm, cxr::ConfusionMatrix::from_rows({{1, 1}, {0, 1}}));
}

TEST(Confusion, Errors) {
  EXPECT_THROW(cxr::confusion_matrix(Labels{0, 3}, Labels{0, 1}, 3), cxr::ValueRangeError);
  EXPECT_THROW(cxr::confusion_matrix(Labels{0}, Labels{0, 1}, 3), cxr::ShapeError);
  EXPECT_THROW(cxr::metrics(cxr::ConfusionMatrix(3)), cxr::ValueRangeError);
}

TEST(Metrics, TwoClassFormulaValues) {
  const auto r = cxr::metrics(cxr::ConfusionMatrix::from_rows({{2, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 0.8);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 2.0 / 3.0);
  EXPECT_NEAR(r.macro_f1, 0.7333333333, 1e-9);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
}

TEST(Metrics, IdentityIsAllOnes) {
  const auto r = cxr::metrics(cxr::ConfusionMatrix::from_rows({{5, 0, 0}, {0, 3, 0}, {0, 0, 9}}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
  for (const auto& m : r.per_class) {
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.specificity, 1.0);
  }
}

TEST(Metrics, ZeroDenominatorsGiveZero) {
  // class 2 never true and never predicted
  const auto r = cxr::metrics(cxr::ConfusionMatrix::from_rows({{3, 1, 0}, {2, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(r.per_class[2].precision, 0.0);
  EXPECT_EQ(r.per_class[2].recall, 0.0);
  EXPECT_EQ(r.per_class[2].f1, 0.0);
  EXPECT_EQ(r.per_class[2].specificity, 1.0);
}

TEST(Properties, PermutationInvariance) {
  cxr::Rng rng(1);
  Labels truth(200), pred(200);
  for (std::size_t i = 0; i < 200; ++i) {
    truth[i] = rng.below(3);
    pred[i] = rng.below(3);
  }
  const auto cm = cxr::confusion_matrix(truth, pred, 3);
  std::vector<std::size_t> order(200);
  for (std::size_t i = 0; i < 200; ++i) order[i] = i;
  rng.shuffle(std::span(order));
  Labels t2, p2;
  for (auto i : order) {
    t2.push_back(truth[i]);
    p2.push_back(pred[i]);
  }
  EXPECT_EQ(cxr::confusion_matrix(t2, p2, 3), cm);
}

TEST(Properties, BinaryRecallEqualsOtherSpecificity) {
  cxr::Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cm = cxr::ConfusionMatrix::from_rows(
        {{rng.below(20), rng.below(20)}, {rng.below(20), 1 + rng.below(20)}});
    const auto r = cxr::metrics(cm);
    EXPECT_DOUBLE_EQ(r.per_class[1].recall, r.per_class[0].specificity);
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
}

TEST(Properties, SelfAgreementIsPerfect) {
  cxr::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Labels y(1 + rng.below(50));
    for (auto& v : y) v = rng.below(3);
    const auto r = cxr::metrics(cxr::confusion_matrix(y, y, 3));
    EXPECT_EQ(r.accuracy, 1.0);
    for (const auto& m : r.per_class) {
      if (m.support > 0) {
        EXPECT_EQ(m.recall, 1.0);
        EXPECT_EQ(m.precision, 1.0);
        EXPECT_EQ(m.f1, 1.0);
      }
    }
  }
}

TEST(Report, JsonAndTable) {
  const auto cm = cxr::ConfusionMatrix::from_rows({{2, 0, 0}, {4, 979, 17}, {0, 0, 3}}, cxr::class_label_list());
  const auto j = cxr::to_json(cm);
  EXPECT_EQ(j["orientation"], "rows=true,cols=predicted");
  EXPECT_EQ(j["counts"][1][1], 979);
  const auto rj = cxr::to_json(cxr::metrics(cm));
  EXPECT_EQ(rj["per_class"][1]["label"], "influenza_pneumonia");
  EXPECT_EQ(rj["per_class"][1]["support"], 1000);
  const auto table = cxr::format_confusion_matrix(cm);
  EXPECT_NE(table.find("covid19_pneumonia"), std::string::npos);
  EXPECT_NE(table.find("979"), std::string::npos);
  EXPECT_NE(cxr::format_metrics(cxr::metrics(cm)).find("specificity"), std::string::npos);
}
