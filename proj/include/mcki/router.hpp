#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "mcki/backend.hpp"

namespace mcki {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kDegenerateNorm = 1e-12;

/// Trainable router mapping. Text and visual streams each pass through a
/// mean-variance normalization with gain/bias and a linear projection to
/// d_route; the concatenation is fused by one more linear map and the result
/// is L2-normalized.
struct RouterParams {
  Eigen::Index d_model = 0;
  Eigen::Index d_route = 0;
  Vec text_gain, text_bias;
  Vec visual_gain, visual_bias;
  Mat w_q;
  Vec b_q;
  Mat w_v;
  Vec b_v;
  Mat w_f;  // d_route x 2*d_route
  Vec b_f;

  static RouterParams zeros(Eigen::Index d_model, Eigen::Index d_route);
  /// Gains 1, norm biases 0; projection weights and biases uniform in
  /// +-1/sqrt(fan_in) from a stream keyed by `seed`.
  static RouterParams initialize(Eigen::Index d_model, Eigen::Index d_route, std::uint64_t seed);

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool same_shape(const RouterParams& other) const;

  static constexpr std::array<const char*, 10> kTensorNames{
      "text_gain", "text_bias", "visual_gain", "visual_bias", "w_q",
      "b_q",       "w_v",       "b_v",         "w_f",         "b_f"};

  /// Flat row-major views of every tensor, in kTensorNames order.
  std::vector<Eigen::Map<Vec>> tensors();
  std::vector<Eigen::Map<const Vec>> tensors() const;
};

/// Unit route vector, or the zero vector if the fused output has norm < 1e-12.
Vec route_vector(const RouterParams& params, const PooledFeatures& feats);

/// Cosine similarity clamped to [-1, 1]; -1 when either side is the zero vector.
double cosine_sim(const Vec& u, const Vec& v);

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

struct RouterHyper {
  double gamma = 20.0;
  double lambda_neg = 1.0;
  double w_cross_language = 1.0;
  double w_cross_scenario = 1.5;
  double learning_rate = 1e-3;
  int epochs = 1;
  std::uint64_t seed = 0;
  Eigen::Index d_route = 1024;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

struct WeightedSim {
  double sim = 0.0;
  double weight = 1.0;
};

/// Per-entry loss: mean over positives of -l+ + lambda * logsumexp(l+, l-_n),
/// with l+ = gamma*sim and l-_n = gamma*sim_n + log(w_n).
double contrastive_loss(std::span<const double> positive_sims,
                        std::span<const WeightedSim> negatives, const RouterHyper& hyper);

struct WeightedFeatures {
  PooledFeatures features;
  double weight = 1.0;
};

/// One memory entry's training unit. positives.front() is the insertion
/// sample itself and also defines the memory key; the rest are its
/// Generality items. Negatives are the paired Locality items.
struct TrainingBatch {
  std::size_t entry_index = 0;
  std::vector<PooledFeatures> positives;
  std::vector<WeightedFeatures> negatives;
};

/// Full composed loss of one batch under `params` (keys are recomputed).
double batch_loss(const RouterParams& params, const TrainingBatch& batch, const RouterHyper& hyper);

struct LossGradient {
  double loss = 0.0;
  RouterParams grad;
};

/// Exact gradient of batch_loss with respect to every router parameter,
/// including the path through the memory key.
LossGradient loss_gradient(const RouterParams& params, const TrainingBatch& batch,
                           const RouterHyper& hyper);

// ---------------------------------------------------------------------------
// Training and calibration
// ---------------------------------------------------------------------------

struct ScoreSets {
  std::vector<double> positives;
  std::vector<double> negatives;
};

/// Similarities of every (positive, key) and (negative, key) pair.
ScoreSets compute_score_sets(const RouterParams& params, std::span<const TrainingBatch> batches);

class AdamOptimizer {
 public:
  AdamOptimizer(const RouterParams& shape, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);
  void step(RouterParams& params, const RouterParams& grad);
  long long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  RouterParams m_, v_;
};

struct TrainResult {
  RouterParams params;
  ScoreSets scores;
  double initial_mean_loss = 0.0;
  double final_mean_loss = 0.0;
  std::vector<double> step_losses;
};

/// Seeded init, `epochs` passes over the batches in seeded shuffled order,
/// one Adam step per batch. Throws std::runtime_error on a non-finite loss.
TrainResult train_router(std::span<const TrainingBatch> batches, Eigen::Index d_model,
                         const RouterHyper& hyper);

/// Builds one batch per (raw case, partition): positives are the partition's
/// sample and the generality case's sample; negatives are the two other
/// partitions' questions on the same image (w_cross_language) and the
/// cross-scenario case's question (w_cross_scenario).
std::vector<TrainingBatch> build_training_batches(const CaseSet& cases, Backend& backend,
                                                  const SystemPrompts& prompts,
                                                  const RouterHyper& hyper,
                                                  std::span<const Partition> partitions =
                                                      kAllPartitions);

struct Calibration {
  double tau = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

/// Number of correct activate/abstain decisions at threshold t.
std::size_t activation_correct(const ScoreSets& scores, double t);

/// Smallest accuracy-maximizing candidate among the unique scores and 2.0,
/// moved to the midpoint with the next lower score when one exists.
Calibration calibrate_threshold(const ScoreSets& scores);

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointVersion = "mcki-router-v1";

struct RouterCheckpoint {
  RouterParams params;
  RouterHyper hyper;
  double tau = 0.0;
  nlohmann::json extras = nlohmann::json::object();
};

/// Layout: a version line, one JSON header line (shapes, hyperparameters, tau,
/// seed, tensor table, extras), then the tensors as little-endian float64 in
/// row-major order.
void save_checkpoint(const std::filesystem::path& path, const RouterCheckpoint& ckpt);
RouterCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mcki
