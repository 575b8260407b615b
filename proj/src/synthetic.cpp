#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include "mcki/backend.hpp"

namespace mcki {

void PooledFeatures::validate() const {
  if (q_pooled.size() == 0 || q_pooled.size() != v_pooled.size()) {
    throw std::invalid_argument("pooled features have mismatched or empty lengths");
  }
  if (!q_pooled.allFinite() || !v_pooled.allFinite()) {
    throw std::invalid_argument("pooled features contain non-finite entries");
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_key(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (auto part : parts) {
    for (unsigned char c : part) mix(c);
    mix(0x1f);
  }
  return splitmix64(h);
}

std::uint64_t KeyedNormalStream::next_u64() { return splitmix64(state_); }

double KeyedNormalStream::next_uniform() {
  // 53 random bits, shifted off zero so log() below stays finite.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double KeyedNormalStream::next_normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  return r * std::cos(theta);
}

namespace {

Vec gaussian(std::uint64_t key, Eigen::Index n) {
  KeyedNormalStream stream(key);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = stream.next_normal();
  return v;
}

}  // namespace

SyntheticWorld::SyntheticWorld(SyntheticWorldConfig config,
                               const std::vector<std::string>& scenario_ids)
    : config_(config) {
  if (config_.d_model <= 0) throw std::invalid_argument("d_model must be positive");
  if (config_.noise_scale < 0) throw std::invalid_argument("noise_scale must be >= 0");
  if (!(config_.separation > 0 && config_.separation < 2)) {
    throw std::invalid_argument("separation must lie in (0, 2)");
  }
  const double max_cos = 1.0 - config_.separation;
  std::vector<const Vec*> accepted;
  for (const auto& sid : scenario_ids) {
    if (centroids_.count(sid)) continue;
    bool placed = false;
    for (int attempt = 0; attempt < config_.max_centroid_attempts && !placed; ++attempt) {
      Vec c = gaussian(hash_key(config_.seed, {"centroid", sid, std::to_string(attempt)}),
                       config_.d_model);
      c.normalize();
      bool ok = true;
      for (const Vec* other : accepted) {
        if (c.dot(*other) > max_cos) {
          ok = false;
          break;
        }
      }
      if (ok) {
        auto [it, _] = centroids_.emplace(sid, std::move(c));
        accepted.push_back(&it->second);
        scenario_order_.push_back(sid);
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("cannot place centroid for scenario '" + sid +
                               "' at separation " + std::to_string(config_.separation) +
                               "; raise d_model or lower separation");
    }
  }
  for (Partition p : kAllPartitions) {
    Vec o = gaussian(hash_key(config_.seed, {"offset", to_string(p)}), config_.d_model);
    o.normalize();
    offsets_.emplace(p, config_.partition_offset_scale * o);
  }
}

const Vec& SyntheticWorld::centroid(const std::string& scenario_id) const {
  auto it = centroids_.find(scenario_id);
  if (it == centroids_.end()) {
    throw std::out_of_range("scenario '" + scenario_id + "' is not part of the synthetic world");
  }
  return it->second;
}

Vec SyntheticWorld::noise(std::initializer_list<std::string_view> key_parts) const {
  if (config_.noise_scale == 0.0) return Vec::Zero(config_.d_model);
  return config_.noise_scale * gaussian(hash_key(config_.seed, key_parts), config_.d_model);
}

std::shared_ptr<const SyntheticWorld> make_world(SyntheticWorldConfig config,
                                                 const std::vector<std::string>& known_scenarios,
                                                 const std::vector<const CaseSet*>& case_sets) {
  std::vector<std::string> order = known_scenarios;
  std::set<std::string> seen(order.begin(), order.end());
  for (const CaseSet* cs : case_sets) {
    for (auto& sid : cs->scenario_ids()) {
      if (seen.insert(sid).second) order.push_back(sid);
    }
  }
  return std::make_shared<const SyntheticWorld>(config, order);
}

std::size_t SyntheticBackend::KeyHash::operator()(const Key& k) const noexcept {
  return static_cast<std::size_t>(hash_key(0, {k.image_ref, k.question}));
}

SyntheticBackend::SyntheticBackend(std::shared_ptr<const SyntheticWorld> world,
                                   const std::vector<const CaseSet*>& registries)
    : world_(std::move(world)) {
  for (const CaseSet* cs : registries) {
    for (const auto& c : *cs) {
      world_->centroid(c.scenario_id);  // throws for scenarios outside the world
      auto [it, inserted] = scenario_of_image_.emplace(c.image_ref, c.scenario_id);
      if (!inserted && it->second != c.scenario_id) {
        throw std::invalid_argument("image_ref '" + c.image_ref +
                                    "' registered under two scenarios");
      }
      for (const auto& [p, pair] : c.qa) {
        answers_[Key{c.image_ref, pair.question}] = pair.answer;
      }
    }
  }
}

PooledFeatures SyntheticBackend::embed(const Probe& probe, std::string_view) {
  auto it = scenario_of_image_.find(probe.image_ref);
  if (it == scenario_of_image_.end()) {
    throw BackendError("unknown image_ref '" + probe.image_ref + "'");
  }
  const Vec& c = world_->centroid(it->second);
  PooledFeatures f;
  f.q_pooled = c + world_->offset(probe.partition) +
               world_->noise({"q", probe.image_ref, probe.question});
  f.v_pooled = c + world_->noise({"v", probe.image_ref});
  return f;
}

std::string SyntheticBackend::canned_base_answer(const Probe& probe) const {
  static const std::array<std::string_view, 4> en = {
      "It depends on the context.", "This seems acceptable in most places.",
      "It is hard to tell from the image.", "That behavior is common and polite."};
  static const std::array<std::string_view, 4> zh = {
      "这要看具体情况。", "这在大多数地方是可以接受的。", "从图片很难判断。",
      "这种行为很常见也很礼貌。"};
  static const std::array<std::string_view, 4> ar = {
      "يعتمد ذلك على السياق.", "يبدو هذا مقبولا في معظم الأماكن.", "من الصعب الحكم من الصورة.",
      "هذا السلوك شائع ومهذب."};
  const auto h = hash_key(world_->config().seed,
                          {"base", probe.image_ref, probe.question, to_string(probe.partition)});
  const auto& bank = probe.partition == Partition::en   ? en
                     : probe.partition == Partition::zh ? zh
                                                        : ar;
  return std::string(bank[h % bank.size()]);
}

std::string SyntheticBackend::generate(const GenRequest& req) {
  if (!scenario_of_image_.count(req.image_ref)) {
    throw BackendError("unknown image_ref '" + req.image_ref + "'");
  }
  if (req.wrapped_context) {
    auto it = answers_.find(Key{req.image_ref, req.question});
    if (it != answers_.end() && req.wrapped_context->find(req.question) != std::string::npos &&
        req.wrapped_context->find(it->second) != std::string::npos) {
      return it->second;
    }
  }
  return canned_base_answer(Probe{req.image_ref, req.question, req.partition});
}

// ---------------------------------------------------------------------------

namespace {

struct Phrasing {
  std::string_view question;
  std::array<std::string_view, 3> verdicts;
};

std::string fill(std::string_view tmpl, const std::string& s, const std::string& i) {
  std::string out;
  for (std::size_t k = 0; k < tmpl.size(); ++k) {
    if (tmpl.substr(k, 3) == "{s}") {
      out += s;
      k += 2;
    } else if (tmpl.substr(k, 3) == "{i}") {
      out += i;
      k += 2;
    } else {
      out += tmpl[k];
    }
  }
  return out;
}

}  // namespace

CaseSet make_fixture_cases(const FixtureSpec& spec) {
  if (spec.scenarios < 2 || spec.cases_per_scenario < 2) {
    throw std::invalid_argument("fixtures need at least 2 scenarios and 2 cases per scenario");
  }
  static const Phrasing en{"In scene {s} photo {i}, is what the guest is doing appropriate?",
                           {"In the U.S. this is usually fine if done politely, scene {s} photo {i}.",
                            "Most Americans would see this as casual but acceptable here, scene {s} photo {i}.",
                            "In the U.S. people may find this a little too direct, scene {s} photo {i}."}};
  static const Phrasing zh{"在场景{s}的照片{i}中，客人的做法合适吗？",
                           {"在中国，这样做通常需要更含蓄一些，场景{s}照片{i}。",
                            "在中国，长辈会认为这样比较失礼，场景{s}照片{i}。",
                            "在中国，这种做法一般可以接受，场景{s}照片{i}。"}};
  static const Phrasing ar{"في المشهد {s} الصورة {i}، هل تصرف الضيف مناسب؟",
                           {"في المنطقة العربية يعتبر هذا غير مناسب عادة، المشهد {s} الصورة {i}.",
                            "في المنطقة العربية يقدر الناس هذا التصرف كعلامة احترام، المشهد {s} الصورة {i}.",
                            "في المنطقة العربية يفضل تجنب هذا أمام الكبار، المشهد {s} الصورة {i}."}};
  auto sid = [](int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03d", k);
    return std::string(buf);
  };
  auto cid = [&](int k, int i) { return spec.split + "-" + sid(k) + "-c" + std::to_string(i); };

  std::vector<RawCase> cases;
  cases.reserve(static_cast<std::size_t>(spec.scenarios * spec.cases_per_scenario));
  for (int k = 0; k < spec.scenarios; ++k) {
    for (int i = 0; i < spec.cases_per_scenario; ++i) {
      RawCase c;
      c.case_id = cid(k, i);
      c.scenario_id = sid(k);
      c.topic_group = static_cast<TopicGroup>(k % 3);
      c.image_ref = spec.split + "/" + sid(k) + "/img" + std::to_string(i);
      const std::string s = std::to_string(k), n = spec.split + std::to_string(i);
      const auto pick = static_cast<std::size_t>((k + i) % 3);
      c.qa[Partition::en] = {fill(en.question, s, n), fill(en.verdicts[pick], s, n)};
      c.qa[Partition::zh] = {fill(zh.question, s, n), fill(zh.verdicts[(pick + 1) % 3], s, n)};
      c.qa[Partition::ar] = {fill(ar.question, s, n), fill(ar.verdicts[(pick + 2) % 3], s, n)};
      c.generality_ref = cid(k, (i + 1) % spec.cases_per_scenario);
      c.cross_scenario_ref = cid((k + 1) % spec.scenarios, i);
      cases.push_back(std::move(c));
    }
  }
  return CaseSet(std::move(cases));
}

}  // namespace mcki
