#pragma once

#include <string>
#include <string_view>

namespace mcki::detail {

/// "http://host:8080/v1/" -> {"http://host:8080", "/v1"}
struct HttpEndpoint {
  std::string origin;
  std::string base_path;
};

inline HttpEndpoint split_url(std::string_view url) {
  HttpEndpoint ep;
  const auto scheme_end = url.find("://");
  const std::size_t host_start = scheme_end == std::string_view::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string_view::npos) {
    ep.origin = std::string(url);
  } else {
    ep.origin = std::string(url.substr(0, path_start));
    ep.base_path = std::string(url.substr(path_start));
  }
  while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
  if (scheme_end == std::string_view::npos) ep.origin = "http://" + ep.origin;
  return ep;
}

}  // namespace mcki::detail
