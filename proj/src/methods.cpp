#include "mcki/methods.hpp"

namespace mcki {

std::optional<std::string> BaseAnswerCache::find(const Probe& probe) const {
  std::lock_guard lock(mu_);
  auto it = answers_.find(Key{probe.image_ref, probe.question, probe.partition});
  if (it == answers_.end()) return std::nullopt;
  return it->second;
}

std::string BaseAnswerCache::insert(const Probe& probe, std::string answer) {
  std::lock_guard lock(mu_);
  auto [it, inserted] =
      answers_.try_emplace(Key{probe.image_ref, probe.question, probe.partition}, std::move(answer));
  return it->second;
}

std::size_t BaseAnswerCache::size() const {
  std::lock_guard lock(mu_);
  return answers_.size();
}

std::string InsertionMethod::generate_with(const Probe& request,
                                           std::optional<std::string> wrapped_context) {
  GenRequest req;
  req.wrapped_context = std::move(wrapped_context);
  req.image_ref = request.image_ref;
  req.question = request.question;
  req.system_prompt = std::string(ctx_.prompts.for_partition(request.partition));
  req.partition = request.partition;
  return ctx_.backend->generate(req);
}

std::string InsertionMethod::base_answer(const Probe& request) {
  if (auto hit = ctx_.cache->find(request)) return *hit;
  return ctx_.cache->insert(request, generate_with(request, std::nullopt));
}

std::string render_wrap(std::string_view tmpl, const InsertionSample& sample) {
  std::string out;
  out.reserve(tmpl.size() + sample.question.size() + sample.answer.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, 10, "{question}") == 0) {
      out += sample.question;
      i += 10;
    } else if (tmpl.compare(i, 8, "{answer}") == 0) {
      out += sample.answer;
      i += 8;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

MckiMethod::MckiMethod(MethodContext ctx, std::shared_ptr<const RouterParams> router, double tau,
                       MckiOptions options)
    : InsertionMethod(std::move(ctx)),
      router_(std::move(router)),
      tau_(tau),
      options_(std::move(options)) {
  if (!router_) throw std::invalid_argument("mcki needs a router");
  if (router_->d_model != backend().d_model()) {
    throw std::invalid_argument("router d_model " + std::to_string(router_->d_model) +
                                " does not match backend d_model " +
                                std::to_string(backend().d_model()));
  }
}

void MckiMethod::insert(const InsertionSample& sample) {
  const Probe probe{sample.image_ref, sample.question, sample.partition};
  const auto feats = backend().embed(probe, ctx_.prompts.for_partition(sample.partition));
  feats.validate();
  memory_.push_back({route_vector(*router_, feats), sample, memory_.size()});
}

RouteDecision MckiMethod::lookup_route(const Vec& route) const {
  RouteDecision d;
  if (route.isZero(0.0)) return d;
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (const auto& e : memory_) {
    if (e.key.isZero(0.0)) continue;
    const double s = cosine_sim(route, e.key);
    if (!best || s > best_sim) {
      best = e.entry_index;
      best_sim = s;
    }
  }
  if (!best) return d;
  d.entry_index = best;
  d.similarity = best_sim;
  if (best_sim >= tau_) d.outcome = RouteDecision::Outcome::activate;
  return d;
}

RouteDecision MckiMethod::lookup(const PooledFeatures& request) const {
  if (memory_.empty()) return {};
  return lookup_route(route_vector(*router_, request));
}

MethodAnswer MckiMethod::answer(const Probe& request) {
  MethodAnswer out;
  if (!memory_.empty()) {
    const auto feats = backend().embed(request, ctx_.prompts.for_partition(request.partition));
    feats.validate();
    out.decision = lookup(feats);
  }
  if (out.decision.activated()) {
    const auto& entry = memory_[*out.decision.entry_index];
    out.text = generate_with(request, render_wrap(options_.wrap_template, entry.sample));
  } else {
    out.text = base_answer(request);
  }
  return out;
}

std::unique_ptr<InsertionMethod> MckiMethod::clone() const {
  return std::make_unique<MckiMethod>(ctx_, router_, tau_, options_);
}

// ---------------------------------------------------------------------------

MethodAnswer BaseMethod::answer(const Probe& request) { return {base_answer(request), {}}; }

std::unique_ptr<InsertionMethod> BaseMethod::clone() const {
  return std::make_unique<BaseMethod>(ctx_);
}

IkeLiteMethod::IkeLiteMethod(MethodContext ctx, IkeLiteOptions options)
    : InsertionMethod(std::move(ctx)), options_(std::move(options)) {
  if (options_.max_demos < 1) throw std::invalid_argument("ike.max_demos must be >= 1");
}

std::string IkeLiteMethod::render_context() const {
  std::string out;
  const std::size_t n = std::min(demos_.size(), static_cast<std::size_t>(options_.max_demos));
  for (std::size_t k = 0; k < n; ++k) {
    out += render_wrap(options_.wrap_template, demos_[demos_.size() - 1 - k]);
  }
  return out;
}

MethodAnswer IkeLiteMethod::answer(const Probe& request) {
  if (demos_.empty()) return {base_answer(request), {}};
  MethodAnswer out;
  out.decision.outcome = RouteDecision::Outcome::activate;
  out.decision.entry_index = demos_.size() - 1;
  out.text = generate_with(request, render_context());
  return out;
}

std::unique_ptr<InsertionMethod> IkeLiteMethod::clone() const {
  return std::make_unique<IkeLiteMethod>(ctx_, options_);
}

}  // namespace mcki
