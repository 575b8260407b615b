#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <spdlog/spdlog.h>

#include "mcki/router.hpp"

namespace mcki {

AdamOptimizer::AdamOptimizer(const RouterParams& shape, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(RouterParams::zeros(shape.d_model, shape.d_route)),
      v_(RouterParams::zeros(shape.d_model, shape.d_route)) {}

void AdamOptimizer::step(RouterParams& params, const RouterParams& grad) {
  if (!params.same_shape(m_) || !grad.same_shape(m_)) {
    throw std::invalid_argument("optimizer state does not match parameter shapes");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  const auto g = grad.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i].cwiseAbs2();
    p[i].array() -= lr_ * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps_);
  }
}

namespace {

double mean_loss(const RouterParams& params, std::span<const TrainingBatch> batches,
                 const RouterHyper& hyper) {
  if (batches.empty()) return 0.0;
  double total = 0.0;
  for (const auto& b : batches) total += batch_loss(params, b, hyper);
  return total / static_cast<double>(batches.size());
}

}  // namespace

TrainResult train_router(std::span<const TrainingBatch> batches, Eigen::Index d_model,
                         const RouterHyper& hyper) {
  hyper.validate();
  if (batches.empty()) throw std::invalid_argument("router training needs at least one batch");

  TrainResult out;
  out.params = RouterParams::initialize(d_model, hyper.d_route, hyper.seed);
  out.initial_mean_loss = mean_loss(out.params, batches, hyper);
  if (!std::isfinite(out.initial_mean_loss)) {
    throw std::runtime_error("initial router loss is not finite");
  }

  AdamOptimizer adam(out.params, hyper.learning_rate);
  std::mt19937_64 rng(hash_key(hyper.seed, {"router-shuffle"}));
  std::vector<std::size_t> order(batches.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t idx : order) {
      auto lg = loss_gradient(out.params, batches[idx], hyper);
      if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
        throw std::runtime_error("non-finite router loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(adam.steps()) + ", entry " +
                                 std::to_string(batches[idx].entry_index) +
                                 " (loss=" + std::to_string(lg.loss) + ")");
      }
      out.step_losses.push_back(lg.loss);
      epoch_total += lg.loss;
      adam.step(out.params, lg.grad);
    }
    spdlog::info("router epoch {}: mean step loss {:.6f}", epoch + 1,
                 epoch_total / static_cast<double>(batches.size()));
  }
  out.final_mean_loss = mean_loss(out.params, batches, hyper);
  out.scores = compute_score_sets(out.params, batches);
  return out;
}

std::vector<TrainingBatch> build_training_batches(const CaseSet& cases, Backend& backend,
                                                  const SystemPrompts& prompts,
                                                  const RouterHyper& hyper,
                                                  std::span<const Partition> partitions) {
  std::map<std::tuple<std::string, std::string, Partition>, PooledFeatures> cache;
  auto features = [&](const Probe& probe) -> const PooledFeatures& {
    auto key = std::make_tuple(probe.image_ref, probe.question, probe.partition);
    auto it = cache.find(key);
    if (it == cache.end()) {
      auto f = backend.embed(probe, prompts.for_partition(probe.partition));
      f.validate();
      it = cache.emplace(std::move(key), std::move(f)).first;
    }
    return it->second;
  };

  std::vector<TrainingBatch> out;
  out.reserve(cases.size() * partitions.size());
  for (const auto& c : cases) {
    const RawCase& gen = cases.at(c.generality_ref);
    const RawCase& scen = cases.at(c.cross_scenario_ref);
    for (Partition p : partitions) {
      TrainingBatch b;
      b.entry_index = out.size();
      b.positives.push_back(features(c.probe(p)));
      b.positives.push_back(features(gen.probe(p)));
      for (Partition other : kAllPartitions) {
        if (other != p) b.negatives.push_back({features(c.probe(other)), hyper.w_cross_language});
      }
      b.negatives.push_back({features(scen.probe(p)), hyper.w_cross_scenario});
      out.push_back(std::move(b));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t activation_correct(const ScoreSets& scores, double t) {
  std::size_t n = 0;
  for (double r : scores.positives) n += r >= t ? 1 : 0;
  for (double r : scores.negatives) n += r < t ? 1 : 0;
  return n;
}

Calibration calibrate_threshold(const ScoreSets& scores) {
  if (scores.positives.empty()) throw std::invalid_argument("calibration needs positive scores");
  std::vector<double> pos = scores.positives, neg = scores.negatives;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> candidates;
  candidates.reserve(pos.size() + neg.size() + 1);
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(candidates));
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const std::vector<double> all_scores = candidates;
  candidates.push_back(2.0);

  // Sorted counts: positives >= t and negatives < t.
  auto correct_at = [&](double t) {
    const auto pos_below = std::lower_bound(pos.begin(), pos.end(), t) - pos.begin();
    const auto neg_below = std::lower_bound(neg.begin(), neg.end(), t) - neg.begin();
    return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(pos.size()) - pos_below +
                                    neg_below);
  };

  std::size_t best_idx = 0, best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = correct_at(candidates[i]);
    if (i == 0 || c > best) {
      best = c;
      best_idx = i;
    }
  }
  Calibration out;
  out.total = pos.size() + neg.size();
  out.correct = best;
  const double chosen = candidates[best_idx];
  auto below = std::lower_bound(all_scores.begin(), all_scores.end(), chosen);
  out.tau = chosen;
  if (below != all_scores.begin()) {
    const double mid = 0.5 * (chosen + *std::prev(below));
    if (mid > *std::prev(below)) out.tau = mid;  // adjacent doubles keep the candidate
  }
  return out;
}

}  // namespace mcki
