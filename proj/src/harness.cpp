#include "mcki/harness.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

namespace mcki {

double overall_single(double reliability, double generality, double cross_language,
                      double cross_scenario) {
  return (reliability + generality + cross_language + cross_scenario) / 4.0;
}

double overall_sequential(double reliability, double generality, double locality) {
  return (reliability + generality + locality) / 3.0;
}

RoutingStats& RoutingStats::operator+=(const RoutingStats& o) {
  target_total += o.target_total;
  target_correct += o.target_correct;
  generality_total += o.generality_total;
  generality_correct += o.generality_correct;
  locality_total += o.locality_total;
  locality_correct += o.locality_correct;
  return *this;
}

namespace {

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  void add(const std::optional<double>& v) {
    if (v) add(*v);
  }
  double value() const { return n ? sum / static_cast<double>(n) : 0.0; }
  std::optional<double> maybe() const {
    return n ? std::optional<double>(value()) : std::nullopt;
  }
};

/// Runs fn(method_state, unit_index) for every unit. With several workers each
/// one owns a clone; results must be written per index by fn.
template <class Fn>
void for_each_unit(std::size_t n, InsertionMethod& method, const HarnessOptions& opt, Fn&& fn) {
  if (opt.workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (opt.accumulate_memory && opt.workers != 1) {
    throw std::invalid_argument("accumulated memory requires a single worker");
  }
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(opt.workers), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(method, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        auto state = method.clone();
        for (std::size_t i = next++; i < n; i = next++) fn(*state, i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::optional<MethodAnswer> try_answer(InsertionMethod& m, const Probe& probe,
                                       std::size_t& failures) {
  try {
    return m.answer(probe);
  } catch (const BackendError& e) {
    spdlog::warn("generation failed for {} / {}: {}", probe.image_ref, to_string(probe.partition),
                 e.what());
    ++failures;
    return std::nullopt;
  }
}

std::optional<std::string> try_base(InsertionMethod& m, const Probe& probe,
                                    std::size_t& failures) {
  try {
    return m.base_answer(probe);
  } catch (const BackendError& e) {
    spdlog::warn("base generation failed for {} / {}: {}", probe.image_ref,
                 to_string(probe.partition), e.what());
    ++failures;
    return std::nullopt;
  }
}

std::optional<double> try_score(const Scorer& scorer, ScoreKind kind,
                                const std::optional<MethodAnswer>& candidate,
                                const std::optional<std::string>& reference, const Probe& probe,
                                std::size_t& failures) {
  if (!candidate || !reference) return std::nullopt;
  try {
    return scorer.score(kind, candidate->text, *reference, {probe.partition, probe.question}).value;
  } catch (const JudgeError& e) {
    spdlog::warn("{} scoring failed for {} / {}: {}", to_string(kind), probe.image_ref,
                 to_string(probe.partition), e.what());
    ++failures;
    return std::nullopt;
  }
}

/// Locality compares against the base output; an identical output is the
/// maximum by definition and skips the scorer.
std::optional<double> try_score_locality(const Scorer& scorer, ScoreKind kind,
                                         const std::optional<MethodAnswer>& candidate,
                                         const std::optional<std::string>& base,
                                         const Probe& probe, std::size_t& failures) {
  if (candidate && base && candidate->text == *base) return max_score(kind);
  return try_score(scorer, kind, candidate, base, probe, failures);
}

Probe probe_of(const InsertionSample& s) { return {s.image_ref, s.question, s.partition}; }

bool routed_to(const std::optional<MethodAnswer>& a, std::size_t entry) {
  return a && a->decision.activated() && a->decision.entry_index == entry;
}

bool abstained(const std::optional<MethodAnswer>& a) { return a && !a->decision.activated(); }

}  // namespace

// ---------------------------------------------------------------------------

SingleReport eval_single(std::span<const SingleInsertCase> cases, InsertionMethod& method,
                         const Scorer& scorer, const HarnessOptions& options) {
  if (options.kinds.empty()) throw std::invalid_argument("no score kinds requested");
  std::vector<CaseScores> results(cases.size());
  std::vector<RoutingStats> routing(cases.size());

  for_each_unit(cases.size(), method, options, [&](InsertionMethod& m, std::size_t i) {
    const auto& c = cases[i];
    auto& out = results[i];
    auto& route = routing[i];
    out.case_id = c.case_id;
    out.topic_group = c.topic_group;
    out.partition = c.target.partition;
    std::size_t& failed = out.failed_items;

    if (!options.accumulate_memory) m.reset();
    std::array<std::optional<std::string>, 2> cl_base;
    for (std::size_t k = 0; k < 2; ++k) cl_base[k] = try_base(m, c.cross_language_items[k], failed);
    const auto cs_base = try_base(m, c.cross_scenario_item, failed);

    const std::size_t entry = m.memory_size();
    bool inserted = true;
    try {
      m.insert(c.target);
    } catch (const BackendError& e) {
      spdlog::warn("insert failed for case {}: {}", c.case_id, e.what());
      ++failed;
      inserted = false;
    }

    const Probe target_probe = probe_of(c.target);
    const Probe gen_probe = probe_of(c.generality_item);
    std::optional<MethodAnswer> rel, gen, cs;
    std::array<std::optional<MethodAnswer>, 2> cl;
    if (inserted) {
      rel = try_answer(m, target_probe, failed);
      gen = try_answer(m, gen_probe, failed);
      for (std::size_t k = 0; k < 2; ++k) cl[k] = try_answer(m, c.cross_language_items[k], failed);
      cs = try_answer(m, c.cross_scenario_item, failed);
    }

    out.target_routed = routed_to(rel, entry);
    route.target_total = 1;
    route.target_correct = out.target_routed;
    route.generality_total = 1;
    route.generality_correct = routed_to(gen, entry);
    route.locality_total = 3;
    route.locality_correct = abstained(cl[0]) + abstained(cl[1]) + abstained(cs);

    for (ScoreKind kind : options.kinds) {
      auto& v = out.values[kind];
      v[kReliability] =
          try_score(scorer, kind, rel, c.target.answer, target_probe, failed);
      v[kGenerality] =
          try_score(scorer, kind, gen, c.generality_item.answer, gen_probe, failed);
      Mean cl_mean;
      for (std::size_t k = 0; k < 2; ++k) {
        cl_mean.add(try_score_locality(scorer, kind, cl[k], cl_base[k], c.cross_language_items[k],
                                       failed));
      }
      v[kCrossLanguage] = cl_mean.maybe();
      v[kCrossScenario] = try_score_locality(scorer, kind, cs, cs_base, c.cross_scenario_item, failed);
      out.dropped[kind] = !v[kReliability].has_value();
      if (out.dropped[kind]) {
        spdlog::warn("case {} dropped from {} aggregates: reliability item failed", c.case_id,
                     to_string(kind));
      }
    }
  });

  SingleReport report;
  report.method = method.name();
  for (const auto& r : routing) report.routing += r;
  for (ScoreKind kind : options.kinds) {
    SingleAggregate agg;
    std::array<Mean, 4> dims;
    Mean routed;
    std::map<TopicGroup, Mean> by_topic;
    std::map<Partition, Mean> by_partition;
    for (const auto& r : results) {
      agg.skipped.failed_items += r.failed_items;
      if (r.dropped.at(kind)) {
        ++agg.skipped.dropped_cases;
        continue;
      }
      const auto& v = r.values.at(kind);
      for (std::size_t d = 0; d < 4; ++d) dims[d].add(v[d]);
      by_topic[r.topic_group].add(v[kReliability]);
      by_partition[r.partition].add(v[kReliability]);
      if (r.target_routed) routed.add(v[kReliability]);
      ++agg.cases_scored;
    }
    for (std::size_t d = 0; d < 4; ++d) agg.dims[d] = dims[d].value();
    agg.overall = overall_single(agg.dims[0], agg.dims[1], agg.dims[2], agg.dims[3]);
    agg.reliability_routed = routed.maybe();
    for (const auto& [g, m] : by_topic) agg.reliability_by_topic[g] = m.value();
    for (const auto& [p, m] : by_partition) agg.reliability_by_partition[p] = m.value();
    report.by_kind[kind] = std::move(agg);
  }
  report.per_case = std::move(results);
  return report;
}

// ---------------------------------------------------------------------------

SequentialReport eval_sequential(std::span<const SequentialChain> chains, InsertionMethod& method,
                                 const Scorer& scorer, bool measure_retention,
                                 const HarnessOptions& options) {
  if (options.kinds.empty()) throw std::invalid_argument("no score kinds requested");
  std::vector<ChainScores> results(chains.size());
  std::vector<RoutingStats> routing(chains.size());

  for_each_unit(chains.size(), method, options, [&](InsertionMethod& m, std::size_t i) {
    const auto& chain = chains[i];
    auto& out = results[i];
    auto& route = routing[i];
    out.chain_id = chain.chain_id;
    std::size_t& failed = out.failed_items;

    if (!options.accumulate_memory) m.reset();
    std::array<std::optional<std::string>, 3> loc_base;
    for (std::size_t t = 0; t < 3; ++t) loc_base[t] = try_base(m, chain.steps[t].locality_item, failed);

    std::array<std::size_t, 3> entry{};
    std::array<bool, 3> inserted{};
    auto score_reliability = [&](std::size_t s, const std::optional<MethodAnswer>& a,
                                 ScoreKind kind) {
      const auto& sample = chain.steps[s].sample;
      return try_score(scorer, kind, a, sample.answer, probe_of(sample), failed);
    };

    std::array<std::optional<MethodAnswer>, 3> final_rel;
    for (std::size_t t = 0; t < 3; ++t) {
      entry[t] = m.memory_size();
      try {
        m.insert(chain.steps[t].sample);
        inserted[t] = true;
      } catch (const BackendError& e) {
        spdlog::warn("insert failed for chain {} step {}: {}", chain.chain_id, t + 1, e.what());
        ++failed;
      }
      if (!measure_retention) continue;
      for (std::size_t s = 0; s <= t; ++s) {
        if (!inserted[s]) continue;
        auto a = try_answer(m, probe_of(chain.steps[s].sample), failed);
        for (ScoreKind kind : options.kinds) out.retention[kind][s][t] = score_reliability(s, a, kind);
        if (t == 2) final_rel[s] = std::move(a);
      }
    }

    const bool all_inserted = inserted[0] && inserted[1] && inserted[2];
    std::array<std::optional<MethodAnswer>, 3> gen, loc;
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& step = chain.steps[t];
      if (!all_inserted) break;
      if (!measure_retention) final_rel[t] = try_answer(m, probe_of(step.sample), failed);
      gen[t] = try_answer(m, probe_of(step.generality_item), failed);
      loc[t] = try_answer(m, step.locality_item, failed);
    }
    for (std::size_t t = 0; t < 3; ++t) {
      route.target_total += 1;
      route.target_correct += routed_to(final_rel[t], entry[t]);
      route.generality_total += 1;
      route.generality_correct += routed_to(gen[t], entry[t]);
      route.locality_total += 1;
      route.locality_correct += abstained(loc[t]);
    }

    for (ScoreKind kind : options.kinds) {
      auto& f = out.finals[kind];
      bool dropped = false;
      for (std::size_t t = 0; t < 3; ++t) {
        const auto& step = chain.steps[t];
        f[kFinalReliability][t] = measure_retention && final_rel[t]
                                      ? out.retention[kind][t][2]
                                      : score_reliability(t, final_rel[t], kind);
        f[kFinalGenerality][t] = try_score(scorer, kind, gen[t], step.generality_item.answer,
                                           probe_of(step.generality_item), failed);
        f[kFinalLocality][t] =
            try_score_locality(scorer, kind, loc[t], loc_base[t], step.locality_item, failed);
        dropped = dropped || !f[kFinalReliability][t].has_value();
      }
      out.dropped[kind] = dropped;
      if (dropped) {
        spdlog::warn("chain {} dropped from {} aggregates: reliability item failed",
                     chain.chain_id, to_string(kind));
      }
    }
  });

  SequentialReport report;
  report.method = method.name();
  report.retention_measured = measure_retention;
  if (!chains.empty()) report.order = chains.front().order;
  for (const auto& r : routing) report.routing += r;
  for (ScoreKind kind : options.kinds) {
    SequentialAggregate agg;
    std::array<Mean, 3> dims;
    std::array<std::array<Mean, 3>, 3> grid;
    for (const auto& r : results) {
      agg.skipped.failed_items += r.failed_items;
      if (r.dropped.at(kind)) {
        ++agg.skipped.dropped_cases;
        continue;
      }
      const auto& f = r.finals.at(kind);
      for (std::size_t d = 0; d < 3; ++d) {
        for (std::size_t t = 0; t < 3; ++t) dims[d].add(f[d][t]);
      }
      if (measure_retention) {
        const auto& g = r.retention.at(kind);
        for (std::size_t s = 0; s < 3; ++s) {
          for (std::size_t t = s; t < 3; ++t) grid[s][t].add(g[s][t]);
        }
      }
      ++agg.chains_scored;
    }
    for (std::size_t d = 0; d < 3; ++d) agg.dims[d] = dims[d].value();
    agg.overall = overall_sequential(agg.dims[0], agg.dims[1], agg.dims[2]);
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t t = s; t < 3; ++t) agg.retention[s][t] = grid[s][t].maybe();
    }
    report.by_kind[kind] = std::move(agg);
  }
  report.per_chain = std::move(results);
  return report;
}

// ---------------------------------------------------------------------------

EfficiencyReport measure_efficiency(InsertionMethod& method,
                                    std::span<const SingleInsertCase> cases,
                                    const EfficiencyOptions& options) {
  if (options.n_eval == 0) throw std::invalid_argument("empty sample");
  if (cases.size() < options.n_eval) {
    throw std::invalid_argument("need " + std::to_string(options.n_eval) + " cases, have " +
                                std::to_string(cases.size()));
  }
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  auto mean = [](const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  };

  EfficiencyReport rep;
  rep.method = method.name();
  rep.n_eval = options.n_eval;

  if (const RouterParams* router = method.router()) {
    rep.router_parameter_count = router->parameter_count();
    if (options.n_train > 0) {
      if (options.train_batches.size() < options.n_train) {
        throw std::invalid_argument("need " + std::to_string(options.n_train) +
                                    " training batches, have " +
                                    std::to_string(options.train_batches.size()));
      }
      RouterParams params = *router;
      AdamOptimizer adam(params, options.hyper.learning_rate);
      for (std::size_t i = 0; i < options.n_train; ++i) {
        const auto t0 = clock::now();
        auto lg = loss_gradient(params, options.train_batches[i], options.hyper);
        adam.step(params, lg.grad);
        rep.train_samples_ms.push_back(ms_since(t0));
      }
      rep.n_train = options.n_train;
    }
  }

  for (std::size_t i = 0; i < options.n_eval; ++i) {
    const auto& c = cases[i];
    method.reset();
    auto t0 = clock::now();
    method.insert(c.target);
    rep.insert_samples_ms.push_back(ms_since(t0));
    t0 = clock::now();
    method.answer({c.target.image_ref, c.target.question, c.target.partition});
    rep.request_samples_ms.push_back(ms_since(t0));
  }
  method.reset();

  rep.train_per_case_ms = mean(rep.train_samples_ms);
  rep.insert_per_case_ms = mean(rep.insert_samples_ms);
  rep.request_per_sample_ms = mean(rep.request_samples_ms);
  rep.peak_memory_bytes = method.backend().peak_memory_bytes();
  rep.parameter_count = method.backend().parameter_count();
  return rep;
}

}  // namespace mcki
