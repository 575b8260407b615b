#include <atomic>
#include <semaphore>
#include <thread>

#include <spdlog/spdlog.h>

#include "http_util.hpp"
#include "httplib.h"
#include "json.hpp"
#include "mcki/scoring.hpp"

namespace mcki {

using json = nlohmann::json;

struct HttpJudge::Impl {
  explicit Impl(int limit) : in_flight(limit) {}
  std::counting_semaphore<1024> in_flight;
  std::atomic<unsigned long long> next_id{1};
};

HttpJudge::HttpJudge(HttpJudgeConfig config)
    : config_(std::move(config)),
      impl_(std::make_unique<Impl>(std::clamp(config_.max_in_flight, 1, 1024))) {
  if (config_.url.empty()) throw std::invalid_argument("judge URL is empty");
}

HttpJudge::~HttpJudge() = default;

JudgeVerdict HttpJudge::evaluate(const JudgeRequest& req) {
  const auto endpoint = detail::split_url(config_.url);
  json body = {{"model", config_.model},
               {"messages",
                json::array({{{"role", "user"},
                              {"content", render_judge_prompt(config_.prompt_template, req)}}})},
               {"max_completion_tokens", config_.max_output_tokens},
               {"response_format", {{"type", "json_object"}}}};
  if (!config_.reasoning_effort.empty()) body["reasoning_effort"] = config_.reasoning_effort;
  const std::string payload = body.dump();
  const std::string correlation = std::to_string(impl_->next_id.fetch_add(1));

  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{impl_->in_flight};

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      spdlog::warn("judge request {} retry {}/{}: {}", correlation, attempt, config_.max_retries,
                   last_error);
      std::this_thread::sleep_for(config_.backoff * attempt);
    }
    httplib::Client client(endpoint.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers{{"X-Request-Id", correlation}};
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto res = client.Post(endpoint.base_path + "/chat/completions", headers, payload,
                           "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw JudgeError("judge request " + correlation + " rejected with HTTP " +
                       std::to_string(res->status));
    }
    try {
      JudgeVerdict v = parse_judge_reply(res->body);
      v.retries = attempt;
      return v;
    } catch (const JudgeError& e) {
      last_error = e.what();
    }
  }
  throw JudgeError("judge request " + correlation + " failed after " +
                   std::to_string(config_.max_retries) + " retries: " + last_error);
}

}  // namespace mcki
