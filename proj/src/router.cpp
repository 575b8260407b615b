#include <algorithm>
#include <cmath>
#include <limits>

#include "mcki/router.hpp"

namespace mcki {

using ColMat = Eigen::MatrixXd;

RouterParams RouterParams::zeros(Eigen::Index d_model, Eigen::Index d_route) {
  if (d_model <= 0 || d_route <= 0) throw std::invalid_argument("router dimensions must be > 0");
  RouterParams p;
  p.d_model = d_model;
  p.d_route = d_route;
  p.text_gain = Vec::Zero(d_model);
  p.text_bias = Vec::Zero(d_model);
  p.visual_gain = Vec::Zero(d_model);
  p.visual_bias = Vec::Zero(d_model);
  p.w_q = Mat::Zero(d_route, d_model);
  p.b_q = Vec::Zero(d_route);
  p.w_v = Mat::Zero(d_route, d_model);
  p.b_v = Vec::Zero(d_route);
  p.w_f = Mat::Zero(d_route, 2 * d_route);
  p.b_f = Vec::Zero(d_route);
  return p;
}

RouterParams RouterParams::initialize(Eigen::Index d_model, Eigen::Index d_route,
                                      std::uint64_t seed) {
  RouterParams p = zeros(d_model, d_route);
  p.text_gain.setOnes();
  p.visual_gain.setOnes();
  auto fill_uniform = [seed](Eigen::Map<Vec> t, const char* name, Eigen::Index fan_in) {
    KeyedNormalStream stream(hash_key(seed, {"router-init", name}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * stream.next_uniform() - 1.0);
  };
  auto views = p.tensors();
  fill_uniform(views[4], "w_q", d_model);
  fill_uniform(views[5], "b_q", d_model);
  fill_uniform(views[6], "w_v", d_model);
  fill_uniform(views[7], "b_v", d_model);
  fill_uniform(views[8], "w_f", 2 * d_route);
  fill_uniform(views[9], "b_f", 2 * d_route);
  return p;
}

std::vector<Eigen::Map<Vec>> RouterParams::tensors() {
  std::vector<Eigen::Map<Vec>> out;
  out.reserve(kTensorNames.size());
  out.emplace_back(text_gain.data(), text_gain.size());
  out.emplace_back(text_bias.data(), text_bias.size());
  out.emplace_back(visual_gain.data(), visual_gain.size());
  out.emplace_back(visual_bias.data(), visual_bias.size());
  out.emplace_back(w_q.data(), w_q.size());
  out.emplace_back(b_q.data(), b_q.size());
  out.emplace_back(w_v.data(), w_v.size());
  out.emplace_back(b_v.data(), b_v.size());
  out.emplace_back(w_f.data(), w_f.size());
  out.emplace_back(b_f.data(), b_f.size());
  return out;
}

std::vector<Eigen::Map<const Vec>> RouterParams::tensors() const {
  std::vector<Eigen::Map<const Vec>> out;
  out.reserve(kTensorNames.size());
  out.emplace_back(text_gain.data(), text_gain.size());
  out.emplace_back(text_bias.data(), text_bias.size());
  out.emplace_back(visual_gain.data(), visual_gain.size());
  out.emplace_back(visual_bias.data(), visual_bias.size());
  out.emplace_back(w_q.data(), w_q.size());
  out.emplace_back(b_q.data(), b_q.size());
  out.emplace_back(w_v.data(), w_v.size());
  out.emplace_back(b_v.data(), b_v.size());
  out.emplace_back(w_f.data(), w_f.size());
  out.emplace_back(b_f.data(), b_f.size());
  return out;
}

std::size_t RouterParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.size());
  return n;
}

bool RouterParams::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.allFinite()) return false;
  }
  return true;
}

bool RouterParams::same_shape(const RouterParams& other) const {
  return d_model == other.d_model && d_route == other.d_route && w_q.rows() == other.w_q.rows() &&
         w_f.cols() == other.w_f.cols();
}

// ---------------------------------------------------------------------------
// Forward / backward over a column batch of features
// ---------------------------------------------------------------------------

namespace {

struct StreamForward {
  ColMat xhat;    // d_model x K
  ColMat normed;  // gain * xhat + bias
};

struct RouteForward {
  StreamForward text, visual;
  ColMat z;       // 2*d_route x K
  ColMat routes;  // d_route x K, unit columns or zero
  Vec norms;      // pre-normalization norms
};

StreamForward normalize_stream(const ColMat& x, const Vec& gain, const Vec& bias) {
  StreamForward s;
  const auto n = static_cast<double>(x.rows());
  s.xhat.resize(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double mean = x.col(k).mean();
    const Vec centered = x.col(k).array() - mean;
    const double var = centered.squaredNorm() / n;
    s.xhat.col(k) = centered / std::sqrt(var + kNormEpsilon);
  }
  s.normed = (s.xhat.array().colwise() * gain.array()).colwise() + bias.array();
  return s;
}

RouteForward forward(const RouterParams& params, const std::vector<const PooledFeatures*>& feats) {
  const auto K = static_cast<Eigen::Index>(feats.size());
  ColMat q(params.d_model, K), v(params.d_model, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto& f = *feats[static_cast<std::size_t>(k)];
    if (f.q_pooled.size() != params.d_model || f.v_pooled.size() != params.d_model) {
      throw std::invalid_argument("feature dimension " + std::to_string(f.q_pooled.size()) +
                                  " does not match router d_model " +
                                  std::to_string(params.d_model));
    }
    q.col(k) = f.q_pooled;
    v.col(k) = f.v_pooled;
  }
  RouteForward out;
  out.text = normalize_stream(q, params.text_gain, params.text_bias);
  out.visual = normalize_stream(v, params.visual_gain, params.visual_bias);
  const Eigen::Index dr = params.d_route;
  out.z.resize(2 * dr, K);
  out.z.topRows(dr).noalias() = params.w_q * out.text.normed;
  out.z.topRows(dr).colwise() += params.b_q;
  out.z.bottomRows(dr).noalias() = params.w_v * out.visual.normed;
  out.z.bottomRows(dr).colwise() += params.b_v;
  out.routes.noalias() = params.w_f * out.z;
  out.routes.colwise() += params.b_f;
  out.norms.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double n = out.routes.col(k).norm();
    out.norms[k] = n;
    if (n < kDegenerateNorm) {
      out.routes.col(k).setZero();
    } else {
      out.routes.col(k) /= n;
    }
  }
  return out;
}

// grad_routes: dL/d(route column) for every column.
void backward(const RouterParams& params, const RouteForward& fw, const ColMat& grad_routes,
              RouterParams& grad) {
  const Eigen::Index dr = params.d_route;
  ColMat df(dr, fw.routes.cols());
  for (Eigen::Index k = 0; k < fw.routes.cols(); ++k) {
    if (fw.norms[k] < kDegenerateNorm) {
      df.col(k).setZero();
      continue;
    }
    const auto r = fw.routes.col(k);
    const auto g = grad_routes.col(k);
    df.col(k) = (g - r * r.dot(g)) / fw.norms[k];
  }
  grad.w_f.noalias() += df * fw.z.transpose();
  grad.b_f += df.rowwise().sum();
  const ColMat dz = params.w_f.transpose() * df;

  auto stream = [](const StreamForward& s, const Mat& w, const auto& dh, Mat& gw, Vec& gb,
                   Vec& g_gain, Vec& g_bias) {
    gw.noalias() += dh * s.normed.transpose();
    gb += dh.rowwise().sum();
    const ColMat da = w.transpose() * dh;
    g_gain += (da.array() * s.xhat.array()).matrix().rowwise().sum();
    g_bias += da.rowwise().sum();
  };
  stream(fw.text, params.w_q, dz.topRows(dr), grad.w_q, grad.b_q, grad.text_gain, grad.text_bias);
  stream(fw.visual, params.w_v, dz.bottomRows(dr), grad.w_v, grad.b_v, grad.visual_gain,
         grad.visual_bias);
}

bool is_zero(const Eigen::Ref<const Vec>& v) { return v.squaredNorm() == 0.0; }

double cosine_cols(const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return -1.0;
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

struct BatchLayout {
  std::vector<const PooledFeatures*> feats;  // key, positives..., negatives...
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

BatchLayout layout(const TrainingBatch& batch) {
  if (batch.positives.empty()) throw std::invalid_argument("training batch has no positives");
  BatchLayout l;
  l.n_pos = batch.positives.size();
  l.n_neg = batch.negatives.size();
  l.feats.reserve(1 + l.n_pos + l.n_neg);
  l.feats.push_back(&batch.positives.front());
  for (const auto& p : batch.positives) l.feats.push_back(&p);
  for (const auto& n : batch.negatives) l.feats.push_back(&n.features);
  return l;
}

struct Sims {
  std::vector<double> pos;
  std::vector<WeightedSim> neg;
};

Sims batch_sims(const RouteForward& fw, const TrainingBatch& batch, const BatchLayout& l) {
  Sims s;
  const auto key = fw.routes.col(0);
  for (std::size_t i = 0; i < l.n_pos; ++i) {
    s.pos.push_back(cosine_cols(fw.routes.col(static_cast<Eigen::Index>(1 + i)), key));
  }
  for (std::size_t i = 0; i < l.n_neg; ++i) {
    s.neg.push_back({cosine_cols(fw.routes.col(static_cast<Eigen::Index>(1 + l.n_pos + i)), key),
                     batch.negatives[i].weight});
  }
  return s;
}

}  // namespace

Vec route_vector(const RouterParams& params, const PooledFeatures& feats) {
  return forward(params, {&feats}).routes.col(0);
}

double cosine_sim(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_sim dimension mismatch");
  return cosine_cols(u, v);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

void RouterHyper::validate() const {
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be > 0");
  if (!(lambda_neg >= 0)) throw std::invalid_argument("lambda_neg must be >= 0");
  if (!(w_cross_language > 0) || !(w_cross_scenario > 0)) {
    throw std::invalid_argument("negative weights must be > 0");
  }
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (d_route <= 0) throw std::invalid_argument("d_route must be > 0");
}

namespace {

// log(exp(a) + sum exp(b_n)) with the running maximum subtracted.
double log_sum_exp(double a, std::span<const double> b) {
  double m = a;
  for (double x : b) m = std::max(m, x);
  double acc = std::exp(a - m);
  for (double x : b) acc += std::exp(x - m);
  return m + std::log(acc);
}

std::vector<double> negative_logits(std::span<const WeightedSim> negatives,
                                    const RouterHyper& hyper) {
  std::vector<double> out;
  out.reserve(negatives.size());
  for (const auto& n : negatives) {
    if (!(n.weight > 0)) throw std::invalid_argument("negative weights must be > 0");
    out.push_back(hyper.gamma * n.sim + std::log(n.weight));
  }
  return out;
}

}  // namespace

double contrastive_loss(std::span<const double> positive_sims,
                        std::span<const WeightedSim> negatives, const RouterHyper& hyper) {
  if (positive_sims.empty()) throw std::invalid_argument("contrastive loss needs a positive");
  const auto neg = negative_logits(negatives, hyper);
  double total = 0.0;
  for (double s : positive_sims) {
    const double lp = hyper.gamma * s;
    total += -lp + hyper.lambda_neg * log_sum_exp(lp, neg);
  }
  return total / static_cast<double>(positive_sims.size());
}

double batch_loss(const RouterParams& params, const TrainingBatch& batch,
                  const RouterHyper& hyper) {
  const auto l = layout(batch);
  const auto fw = forward(params, l.feats);
  const auto s = batch_sims(fw, batch, l);
  return contrastive_loss(s.pos, s.neg, hyper);
}

LossGradient loss_gradient(const RouterParams& params, const TrainingBatch& batch,
                           const RouterHyper& hyper) {
  const auto l = layout(batch);
  const auto fw = forward(params, l.feats);
  const auto s = batch_sims(fw, batch, l);

  LossGradient out;
  out.loss = contrastive_loss(s.pos, s.neg, hyper);
  out.grad = RouterParams::zeros(params.d_model, params.d_route);

  // dL/dsim for every pair.
  const auto neg = negative_logits(s.neg, hyper);
  const double inv_p = 1.0 / static_cast<double>(l.n_pos);
  std::vector<double> d_pos(l.n_pos, 0.0), d_neg(l.n_neg, 0.0);
  for (std::size_t i = 0; i < l.n_pos; ++i) {
    const double lp = hyper.gamma * s.pos[i];
    const double lse = log_sum_exp(lp, neg);
    d_pos[i] = hyper.gamma * inv_p * (-1.0 + hyper.lambda_neg * std::exp(lp - lse));
    for (std::size_t n = 0; n < l.n_neg; ++n) {
      d_neg[n] += hyper.gamma * inv_p * hyper.lambda_neg * std::exp(neg[n] - lse);
    }
  }

  // Route-space gradients. For unit vectors d(r.k)/dr = k; backward() applies
  // the normalization Jacobian. Pairs involving a zero route have constant sim.
  ColMat g = ColMat::Zero(params.d_route, fw.routes.cols());
  const auto key = fw.routes.col(0);
  if (!is_zero(key)) {
    auto accumulate = [&](Eigen::Index col, double d) {
      const auto r = fw.routes.col(col);
      if (is_zero(r) || d == 0.0) return;
      g.col(col) += d * key;
      g.col(0) += d * r;
    };
    for (std::size_t i = 0; i < l.n_pos; ++i) {
      accumulate(static_cast<Eigen::Index>(1 + i), d_pos[i]);
    }
    for (std::size_t n = 0; n < l.n_neg; ++n) {
      accumulate(static_cast<Eigen::Index>(1 + l.n_pos + n), d_neg[n]);
    }
  }
  backward(params, fw, g, out.grad);
  return out;
}

ScoreSets compute_score_sets(const RouterParams& params, std::span<const TrainingBatch> batches) {
  ScoreSets out;
  for (const auto& b : batches) {
    const auto l = layout(b);
    const auto fw = forward(params, l.feats);
    const auto s = batch_sims(fw, b, l);
    out.positives.insert(out.positives.end(), s.pos.begin(), s.pos.end());
    for (const auto& n : s.neg) out.negatives.push_back(n.sim);
  }
  return out;
}

}  // namespace mcki
