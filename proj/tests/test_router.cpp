#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "mcki/router.hpp"
#include "router_oracles.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace mcki;
using namespace mcki::test;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mcki_test_" + name);
}

RouterParams identity_params() {
  auto p = RouterParams::zeros(2, 2);
  p.text_gain.setOnes();
  p.visual_gain.setOnes();
  p.w_q.setIdentity();
  p.w_v.setIdentity();
  p.w_f << 1, 0, 1, 0,
           0, 1, 0, 1;
  return p;
}

std::vector<TrainingBatch> small_dataset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingBatch> out;
  for (int i = 0; i < 6; ++i) {
    auto b = random_batch(rng, 6, 2, 3);
    b.entry_index = static_cast<std::size_t>(i);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

TEST_SUITE("router") {
  TEST_CASE("route vectors are unit length and deterministic") {
    std::mt19937_64 rng(5);
    const auto params = RouterParams::initialize(8, 5, 3);
    for (int i = 0; i < 200; ++i) {
      const auto f = random_features(rng, 8, 3.0);
      const Vec r = route_vector(params, f);
      REQUIRE(std::abs(r.norm() - 1.0) <= 1e-6);
      REQUIRE(r == route_vector(params, f));
    }
    CHECK_THROWS_AS(route_vector(params, random_features(rng, 7)), std::invalid_argument);
  }

  TEST_CASE("route vector matches a loop-level evaluation") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 50; ++i) {
      const auto params = RouterParams::initialize(7, 4, static_cast<std::uint64_t>(i));
      const auto f = random_features(rng, 7);
      const Vec r = route_vector(params, f);
      const auto expect = naive_route(params, f);
      for (Eigen::Index k = 0; k < r.size(); ++k) {
        REQUIRE(r[k] == doctest::Approx(expect[static_cast<std::size_t>(k)]).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("identity composition at d = 2") {
    const auto p = identity_params();
    // With two coordinates the normalized stream is (+-s, -+s), s = 1/sqrt(1 + 1e-5).
    PooledFeatures f{(Vec(2) << 3, 1).finished(), (Vec(2) << 2, 0).finished()};
    const Vec r = route_vector(p, f);
    CHECK(r[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(-1 / std::sqrt(2.0)).epsilon(1e-12));

    // Opposite streams cancel and force the zero vector.
    PooledFeatures g{(Vec(2) << 3, 1).finished(), (Vec(2) << 0, 2).finished()};
    CHECK(route_vector(p, g).norm() == 0.0);
  }

  TEST_CASE("cosine similarity") {
    const Vec e0 = (Vec(2) << 1, 0).finished();
    const Vec e1 = (Vec(2) << 0, 1).finished();
    const Vec diag = (Vec(2) << 1, 1).finished() / std::sqrt(2.0);
    CHECK(cosine_sim(e0, e0) == doctest::Approx(1.0));
    CHECK(cosine_sim(e0, e1) == doctest::Approx(0.0));
    CHECK(std::abs(cosine_sim(e0, diag) - 0.70710678) <= 1e-8);
    CHECK(cosine_sim(e0, Vec::Zero(2)) == -1.0);
    CHECK(cosine_sim(3.0 * e0, 3.0 * e0) <= 1.0);
    CHECK_THROWS_AS(cosine_sim(e0, Vec::Zero(3)), std::invalid_argument);
  }

  TEST_CASE("loss identities and worked values") {
    RouterHyper h;
    h.gamma = 1.0;
    const std::vector<double> one{1.0};
    CHECK(contrastive_loss(one, {}, h) == 0.0);
    const std::vector<WeightedSim> w1{{0.0, 1.0}}, w2{{0.0, 2.0}};
    CHECK(std::abs(contrastive_loss(one, w1, h) - 0.313262) <= 1e-6);
    CHECK(std::abs(contrastive_loss(one, w2, h) - 0.551445) <= 1e-6);
    CHECK_THROWS_AS(contrastive_loss({}, w1, h), std::invalid_argument);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    RouterHyper d;
    for (int i = 0; i < 200; ++i) {
      std::vector<double> pos{u(rng), u(rng)};
      REQUIRE(std::abs(contrastive_loss(pos, {}, d)) <= 1e-12);
      std::vector<WeightedSim> neg{{u(rng), 1.0}, {u(rng), 1.5}};
      REQUIRE(contrastive_loss(pos, neg, d) ==
              doctest::Approx(naive_loss(pos, neg, d.gamma, d.lambda_neg)).epsilon(1e-12));
    }
  }

  TEST_CASE("loss is monotone in the similarities") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(-0.99, 0.99);
    RouterHyper h;
    for (int i = 0; i < 300; ++i) {
      std::vector<double> pos{u(rng), u(rng)};
      std::vector<WeightedSim> neg{{u(rng), 1.0}, {u(rng), 1.5}, {u(rng), 1.0}};
      const double base = contrastive_loss(pos, neg, h);
      auto p2 = pos;
      p2[i % 2] += 1e-3;
      REQUIRE(contrastive_loss(p2, neg, h) <= base);
      auto n2 = neg;
      n2[i % 3].sim += 1e-3;
      REQUIRE(contrastive_loss(pos, n2, h) >= base);
      n2[i % 3].sim -= 2e-3;
      REQUIRE(contrastive_loss(pos, n2, h) <= base);
    }
  }

  TEST_CASE("gradient matches central differences") {
    for (const auto& inst : gradient_instances(1, 50)) {
      const auto c = check_gradient(inst.params, inst.batch, inst.hyper);
      REQUIRE(c.max_entry_rel <= 1e-4);
      REQUIRE(loss_gradient(inst.params, inst.batch, inst.hyper).loss ==
              doctest::Approx(batch_loss(inst.params, inst.batch, inst.hyper)));
    }
  }

  TEST_CASE("gradient at doubled gamma") {
    std::mt19937_64 rng(12);
    auto params = RouterParams::initialize(6, 4, 4);
    auto batch = random_batch(rng, 6, 2, 3);
    RouterHyper h;
    h.d_route = 4;
    const auto g1 = loss_gradient(params, batch, h);
    CHECK(check_gradient(params, batch, h).max_entry_rel <= 1e-4);
    h.gamma *= 2;
    const auto g2 = loss_gradient(params, batch, h);
    CHECK(check_gradient(params, batch, h).max_entry_rel <= 1e-4);
    CHECK(g1.loss != g2.loss);
  }

  TEST_CASE("no negatives means zero gradient") {
    std::mt19937_64 rng(13);
    auto params = RouterParams::initialize(5, 3, 1);
    auto batch = random_batch(rng, 5, 3, 0);
    RouterHyper h;
    h.d_route = 3;
    const auto g = loss_gradient(params, batch, h);
    CHECK(std::abs(g.loss) <= 1e-12);
    for (const auto& t : g.grad.tensors()) CHECK(t.cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("adam first step moves by the learning rate against the gradient") {
    auto params = RouterParams::initialize(3, 2, 0);
    const auto start = params;
    auto grad = RouterParams::zeros(3, 2);
    grad.w_q(0, 0) = 5.0;
    grad.b_f(1) = -0.25;
    AdamOptimizer adam(params, 0.01);
    adam.step(params, grad);
    CHECK(adam.steps() == 1);
    CHECK(params.w_q(0, 0) == doctest::Approx(start.w_q(0, 0) - 0.01).epsilon(1e-6));
    CHECK(params.b_f(1) == doctest::Approx(start.b_f(1) + 0.01).epsilon(1e-6));
    CHECK(params.w_v == start.w_v);
    CHECK_THROWS_AS(adam.step(params, RouterParams::zeros(4, 2)), std::invalid_argument);
  }

  TEST_CASE("initialization") {
    const auto p = RouterParams::initialize(8, 4, 2);
    CHECK(p.text_gain == Vec::Ones(8));
    CHECK(p.visual_bias == Vec::Zero(8));
    CHECK(p.w_q.cwiseAbs().maxCoeff() <= 1 / std::sqrt(8.0));
    CHECK(p.w_f.cwiseAbs().maxCoeff() <= 1 / std::sqrt(8.0));
    CHECK(p.w_f.rows() == 4);
    CHECK(p.w_f.cols() == 8);
    CHECK(p.parameter_count() == 4 * 8 + 2 * (4 * 8 + 4) + (4 * 8 + 4));
    CHECK(p.w_q == RouterParams::initialize(8, 4, 2).w_q);
    CHECK(p.w_q != RouterParams::initialize(8, 4, 3).w_q);
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const auto data = small_dataset(21);
    RouterHyper h;
    h.d_route = 8;
    h.learning_rate = 1e-2;
    h.epochs = 5;
    h.seed = 3;
    const auto a = train_router(data, 6, h);
    const auto b = train_router(data, 6, h);
    CHECK(a.scores.positives == b.scores.positives);
    CHECK(a.scores.negatives == b.scores.negatives);
    CHECK(a.final_mean_loss < a.initial_mean_loss);
    CHECK(a.step_losses.size() == data.size() * 5);

    h.epochs = 0;
    const auto none = train_router(data, 6, h);
    const auto init = RouterParams::initialize(6, 8, 3);
    CHECK(none.params.w_f == init.w_f);
    CHECK(none.scores.positives == compute_score_sets(init, data).positives);
    CHECK_THROWS(train_router({}, 6, h));
  }

  TEST_CASE("calibration worked examples") {
    auto c = calibrate_threshold({{0.9, 0.8}, {0.1, 0.2}});
    CHECK(c.tau == doctest::Approx(0.5));
    CHECK(c.correct == 4);
    CHECK(c.total == 4);
    c = calibrate_threshold({{0.3}, {0.7}});
    CHECK(c.tau == 0.3);
    CHECK(c.correct == 1);
    c = calibrate_threshold({{0.5}, {0.5}});
    CHECK(c.tau == 0.5);
    CHECK(c.correct == 1);
    CHECK_THROWS_AS(calibrate_threshold({{}, {0.1}}), std::invalid_argument);
    // No negatives: everything activates at the smallest positive.
    c = calibrate_threshold({{0.4, 0.6}, {}});
    CHECK(c.correct == 2);
  }

  TEST_CASE("calibration matches a dense grid scan") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 100; ++i) {
      const auto s = random_score_sets(rng);
      const auto c = calibrate_threshold(s);
      REQUIRE(c.correct == activation_correct(s, c.tau));
      REQUIRE(c.correct == grid_best_accuracy(s));
    }
  }

  TEST_CASE("checkpoint round trip") {
    RouterCheckpoint ck;
    ck.params = RouterParams::initialize(5, 3, 9);
    ck.hyper.d_route = 3;
    ck.hyper.gamma = 12.5;
    ck.hyper.seed = 9;
    ck.tau = 0.731;
    ck.extras["note"] = "x";
    const auto path = temp_file("ckpt.bin");
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    CHECK(back.tau == ck.tau);
    CHECK(back.hyper.gamma == 12.5);
    CHECK(back.hyper.seed == 9);
    CHECK(back.extras["note"] == "x");
    const auto a = ck.params.tensors();
    const auto b = back.params.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    std::filesystem::remove(path);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    RouterCheckpoint ck;
    ck.params = RouterParams::initialize(4, 2, 1);
    ck.hyper.d_route = 2;
    const auto path = temp_file("ckpt_bad.bin");
    save_checkpoint(path, ck);
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << b;
    };
    write(bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS(load_checkpoint(path));
    write(bytes + "extra");
    CHECK_THROWS(load_checkpoint(path));
    write("not-a-checkpoint\n" + bytes);
    CHECK_THROWS(load_checkpoint(path));
    std::string nan_bytes = bytes;
    const double nan = std::nan("");
    std::memcpy(nan_bytes.data() + nan_bytes.size() - 8, &nan, 8);
    write(nan_bytes);
    CHECK_THROWS(load_checkpoint(path));
    CHECK_THROWS(load_checkpoint(temp_file("missing.bin")));
    std::filesystem::remove(path);
  }

  TEST_CASE("hyperparameter validation") {
    RouterHyper h;
    CHECK_NOTHROW(h.validate());
    h.gamma = 0;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h = {};
    h.d_route = 0;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h = {};
    h.epochs = -1;
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
  }
}
