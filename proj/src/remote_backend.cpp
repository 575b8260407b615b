#include <semaphore>
#include <thread>

#include <spdlog/spdlog.h>

#include "mcki/backend.hpp"

#include "http_util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace mcki {

using json = nlohmann::json;

struct RemoteBackend::Impl {
  explicit Impl(int limit) : in_flight(limit) {}
  detail::HttpEndpoint endpoint;
  std::counting_semaphore<1024> in_flight;
};

namespace {

Vec to_vector(const json& arr, const char* field) {
  if (!arr.is_array()) throw BackendError(std::string("field '") + field + "' is not an array");
  Vec v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) {
      throw BackendError(std::string("field '") + field + "' has a non-numeric entry");
    }
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

json parse_object(const std::string& body, const std::string& path) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw BackendError("malformed reply from " + path);
  }
  return j;
}

}  // namespace

RemoteBackend::RemoteBackend(RemoteBackendConfig config)
    : config_(std::move(config)),
      impl_(std::make_unique<Impl>(std::clamp(config_.max_in_flight, 1, 1024))) {
  if (config_.url.empty()) throw std::invalid_argument("backend URL is empty");
  impl_->endpoint = detail::split_url(config_.url);
  const json meta = parse_object(get("/meta"), "/meta");
  if (!meta.contains("d_model") || !meta["d_model"].is_number_integer() ||
      meta["d_model"].get<long long>() <= 0) {
    throw BackendError("/meta reply lacks a positive integer d_model");
  }
  d_model_ = meta["d_model"].get<Eigen::Index>();
  model_name_ = meta.value("model_name", std::string("unknown"));
  if (meta.contains("parameter_count") && meta["parameter_count"].is_number_integer()) {
    parameter_count_ = meta["parameter_count"].get<std::uint64_t>();
  }
}

RemoteBackend::~RemoteBackend() = default;

namespace {

template <typename Call>
std::string with_retries(const RemoteBackendConfig& cfg, std::counting_semaphore<1024>& gate,
                         const std::string& path, Call&& call) {
  gate.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{gate};
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("backend {} retry {}/{}: {}", path, attempt, cfg.max_retries, last_error);
      std::this_thread::sleep_for(cfg.backoff * attempt);
    }
    httplib::Result res = call();
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      continue;
    }
    if (res->status != 200) {
      throw BackendError(path + " returned HTTP " + std::to_string(res->status) + ": " +
                         res->body);
    }
    return res->body;
  }
  throw BackendError(path + " failed after " + std::to_string(cfg.max_retries) +
                     " retries: " + last_error);
}

void configure(httplib::Client& client, std::chrono::milliseconds timeout) {
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
}

}  // namespace

std::string RemoteBackend::post(const std::string& path, const std::string& body) const {
  const std::string full = impl_->endpoint.base_path + path;
  return with_retries(config_, impl_->in_flight, path, [&] {
    httplib::Client client(impl_->endpoint.origin);
    configure(client, config_.timeout);
    return client.Post(full, body, "application/json");
  });
}

std::string RemoteBackend::get(const std::string& path) const {
  const std::string full = impl_->endpoint.base_path + path;
  return with_retries(config_, impl_->in_flight, path, [&] {
    httplib::Client client(impl_->endpoint.origin);
    configure(client, config_.timeout);
    return client.Get(full);
  });
}

PooledFeatures RemoteBackend::embed(const Probe& probe, std::string_view system_prompt) {
  const json req = {{"image_ref", probe.image_ref},
                    {"question", probe.question},
                    {"partition", std::string(to_string(probe.partition))},
                    {"system_prompt", std::string(system_prompt)}};
  const json reply = parse_object(post("/embed", req.dump()), "/embed");
  if (!reply.contains("q_pooled") || !reply.contains("v_pooled")) {
    throw BackendError("/embed reply lacks q_pooled or v_pooled");
  }
  PooledFeatures f{to_vector(reply["q_pooled"], "q_pooled"),
                   to_vector(reply["v_pooled"], "v_pooled")};
  if (f.q_pooled.size() != d_model_ || f.v_pooled.size() != d_model_) {
    throw BackendError("/embed vectors do not match advertised d_model " +
                       std::to_string(d_model_));
  }
  if (reply.contains("d_model") && reply["d_model"] != d_model_) {
    throw BackendError("/embed d_model disagrees with /meta");
  }
  if (!f.q_pooled.allFinite() || !f.v_pooled.allFinite()) {
    throw BackendError("/embed vectors contain non-finite entries");
  }
  return f;
}

std::string RemoteBackend::generate(const GenRequest& req) {
  json body = {{"image_ref", req.image_ref},
               {"question", req.question},
               {"partition", std::string(to_string(req.partition))},
               {"system_prompt", req.system_prompt},
               {"max_new_tokens", kMaxNewTokens},
               {"decoding", "greedy"}};
  if (req.wrapped_context) body["wrapped_context"] = *req.wrapped_context;
  const json reply = parse_object(post("/generate", body.dump()), "/generate");
  if (!reply.contains("answer") || !reply["answer"].is_string()) {
    throw BackendError("/generate reply lacks a string answer");
  }
  return reply["answer"].get<std::string>();
}

std::optional<std::uint64_t> RemoteBackend::peak_memory_bytes() const {
  try {
    const json meta = parse_object(get("/meta"), "/meta");
    if (meta.contains("peak_memory_bytes") && meta["peak_memory_bytes"].is_number_integer()) {
      return meta["peak_memory_bytes"].get<std::uint64_t>();
    }
  } catch (const BackendError&) {
  }
  return std::nullopt;
}

}  // namespace mcki
