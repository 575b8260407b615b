#include <algorithm>
#include <random>

#include "mcki/harness.hpp"
#include "mcki/pipeline.hpp"
#include "mcki/report.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace mcki;
using mcki::test::SyntheticSetup;

namespace {

RouterHyper small_hyper() {
  RouterHyper h;
  h.d_route = 32;
  h.learning_rate = 5e-3;
  h.epochs = 2;
  return h;
}

/// Shared small trained setup; training once keeps the suite fast.
struct Trained {
  SyntheticSetup setup{4, 3};
  TrainedRouter router;
  Trained() { router = train_and_calibrate(setup.train, *setup.backend, setup.prompts, small_hyper()); }

  MckiMethod mcki(double tau) const {
    return MckiMethod(setup.context(),
                      std::make_shared<const RouterParams>(router.checkpoint.params), tau);
  }
};

const Trained& trained() {
  static const Trained t;
  return t;
}

void check_same(const SingleAggregate& a, const SingleAggregate& b) {
  for (std::size_t d = 0; d < 4; ++d) CHECK(a.dims[d] == doctest::Approx(b.dims[d]).epsilon(1e-12));
  CHECK(a.cases_scored == b.cases_scored);
  CHECK(a.skipped == b.skipped);
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("overall aggregates are plain means") {
    CHECK(overall_single(79.83, 22.20, 100.00, 89.66) == doctest::Approx(72.9225));
    CHECK(overall_sequential(85.57, 28.61, 83.44) == doctest::Approx(65.873333333));
  }

  TEST_CASE("base method locality is exact") {
    SyntheticSetup s(3, 2);
    const auto cases = derive_single_cases(s.test);
    BaseMethod base(s.context());
    const Scorer scorer(std::make_shared<StubJudge>());
    const auto r = eval_single(cases, base, scorer, {{ScoreKind::rouge_l, ScoreKind::judge}});
    for (ScoreKind k : {ScoreKind::rouge_l, ScoreKind::judge}) {
      const auto& agg = r.by_kind.at(k);
      CHECK(agg.dims[kCrossLanguage] == max_score(k));
      CHECK(agg.dims[kCrossScenario] == max_score(k));
      CHECK(agg.cases_scored == cases.size());
    }
    CHECK(r.by_kind.at(ScoreKind::rouge_l).dims[kReliability] < 100.0);
    CHECK(r.routing.target_correct == 0);
    CHECK(r.routing.locality_correct == r.routing.locality_total);
  }

  TEST_CASE("trained router inserts and stays local") {
    const auto& t = trained();
    const auto cases = derive_single_cases(t.setup.test);
    auto m = t.mcki(t.router.calibration.tau);
    const auto r = eval_single(cases, m, Scorer{});
    const auto& agg = r.by_kind.at(ScoreKind::rouge_l);
    CHECK(r.routing.accuracy() >= 0.95);
    REQUIRE(agg.reliability_routed.has_value());
    CHECK(*agg.reliability_routed == 100.0);
    CHECK(agg.dims[kCrossScenario] >= 95.0);
    CHECK(agg.reliability_by_partition.size() == 2);
    CHECK(agg.reliability_by_topic.size() >= 1);
  }

  TEST_CASE("aggregates do not depend on case order") {
    const auto& t = trained();
    auto cases = derive_single_cases(t.setup.test);
    auto m = t.mcki(t.router.calibration.tau);
    const auto a = eval_single(cases, m, Scorer{});
    std::mt19937_64 rng(4);
    std::shuffle(cases.begin(), cases.end(), rng);
    const auto b = eval_single(cases, m, Scorer{});
    check_same(a.by_kind.at(ScoreKind::rouge_l), b.by_kind.at(ScoreKind::rouge_l));
    CHECK(a.routing.target_correct == b.routing.target_correct);
  }

  TEST_CASE("parallel workers reproduce the single-worker result") {
    const auto& t = trained();
    const auto cases = derive_single_cases(t.setup.test);
    auto m = t.mcki(t.router.calibration.tau);
    const auto one = eval_single(cases, m, Scorer{}, {{ScoreKind::rouge_l}, 1});
    const auto three = eval_single(cases, m, Scorer{}, {{ScoreKind::rouge_l}, 3});
    CHECK(one.by_kind.at(ScoreKind::rouge_l).dims == three.by_kind.at(ScoreKind::rouge_l).dims);
    REQUIRE(one.per_case.size() == three.per_case.size());
    for (std::size_t i = 0; i < one.per_case.size(); ++i) {
      CHECK(one.per_case[i].case_id == three.per_case[i].case_id);
      CHECK(one.per_case[i].values == three.per_case[i].values);
    }
    CHECK_THROWS_AS(eval_single(cases, m, Scorer{}, {{ScoreKind::rouge_l}, 2, true}),
                    std::invalid_argument);
    CHECK_THROWS_AS(eval_single(cases, m, Scorer{}, {{ScoreKind::rouge_l}, 0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(eval_single(cases, m, Scorer{}, {{}, 1}), std::invalid_argument);
  }

  TEST_CASE("retention grid is upper triangular and follows the order") {
    const auto& t = trained();
    const PartitionOrder order = parse_order("ar,zh,en");
    const auto chains = derive_sequential_chains(t.setup.test, order);
    auto m = t.mcki(t.router.calibration.tau);
    const auto r = eval_sequential(chains, m, Scorer{}, true);
    CHECK(r.retention_measured);
    CHECK(r.order == order);
    const auto& agg = r.by_kind.at(ScoreKind::rouge_l);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t q = 0; q < 3; ++q) {
        CHECK(agg.retention[s][q].has_value() == (q >= s));
      }
    }
    const auto rows = retention_rows(r);
    CHECK(rows.find("1\tar\t1\tar\trouge_l\t") != std::string::npos);
    CHECK(rows.find("2\tzh\t3\ten\trouge_l\t") != std::string::npos);
    CHECK(rows.find("3\ten\t1\t") == std::string::npos);

    const auto plain = eval_sequential(chains, m, Scorer{}, false);
    CHECK_FALSE(plain.retention_measured);
    CHECK(plain.by_kind.at(ScoreKind::rouge_l).dims[kFinalReliability] ==
          doctest::Approx(agg.dims[kFinalReliability]));
  }

  TEST_CASE("ike-lite keeps every inserted step in context") {
    SyntheticSetup s(3, 2);
    const auto chains = derive_sequential_chains(s.test);
    IkeLiteMethod ike(s.context());
    const auto r = eval_sequential(chains, ike, Scorer{}, true);
    const auto& agg = r.by_kind.at(ScoreKind::rouge_l);
    for (std::size_t st = 0; st < 3; ++st) {
      for (std::size_t q = st; q < 3; ++q) CHECK(*agg.retention[st][q] == 100.0);
    }
    CHECK(agg.dims[kFinalReliability] == 100.0);
  }

  TEST_CASE("backend failures drop units and are tallied") {
    SyntheticSetup s(3, 2);
    const auto cases = derive_single_cases(s.test);
    auto scripted = std::make_shared<mcki::test::ScriptedBackend>(s.world->config().d_model);
    scripted->fail_generate = true;
    MethodContext ctx = s.context();
    ctx.backend = scripted;
    BaseMethod base(ctx);
    const auto r = eval_single(cases, base, Scorer{});
    const auto& agg = r.by_kind.at(ScoreKind::rouge_l);
    CHECK(agg.cases_scored == 0);
    CHECK(agg.skipped.dropped_cases == cases.size());
    CHECK(agg.skipped.failed_items > 0);
  }

  TEST_CASE("efficiency measurement") {
    const auto& t = trained();
    const auto cases = derive_single_cases(t.setup.test);
    const auto batches = build_training_batches(t.setup.train, *t.setup.backend, t.setup.prompts,
                                                small_hyper());
    auto m = t.mcki(t.router.calibration.tau);
    EfficiencyOptions opt;
    opt.n_train = 3;
    opt.n_eval = 4;
    opt.train_batches = batches;
    opt.hyper = small_hyper();
    const auto r = measure_efficiency(m, cases, opt);
    CHECK(r.method == "mcki");
    CHECK(r.insert_samples_ms.size() == 4);
    CHECK(r.train_samples_ms.size() == 3);
    CHECK(r.request_per_sample_ms >= 0.0);
    CHECK(r.router_parameter_count == m.router()->parameter_count());

    opt.n_eval = 0;
    CHECK_THROWS_WITH_AS(measure_efficiency(m, cases, opt), "empty sample", std::invalid_argument);
    opt.n_eval = cases.size() + 1;
    CHECK_THROWS_AS(measure_efficiency(m, cases, opt), std::invalid_argument);
  }
}
