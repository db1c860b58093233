#include "vgkit/http.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include "vgkit/errors.hpp"

namespace vgkit {

ParsedUrl parse_base_url(const std::string& url) {
  static const std::regex kUrl(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:.]+\])(?::(\d{1,5}))?(/[^\s?#]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) throw ValidationError("malformed base URL '" + url + "'");
  ParsedUrl out;
  out.scheme = m[1];
  out.host = m[2];
  out.port = m[3].matched ? std::stoi(m[3]) : (out.scheme == "https" ? 443 : 80);
  if (out.port <= 0 || out.port > 65535) throw ValidationError("base URL port out of range");
  out.path_prefix = m[4].matched ? std::string(m[4]) : "";
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

void HttpEndpoint::validate() const {
  parse_base_url(base_url);
  if (!(timeout_s > 0)) throw ValidationError("timeout must be positive");
  if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (backoff_initial_ms < 0 || backoff_max_ms < 0 || backoff_multiplier < 1.0) {
    throw ValidationError("invalid backoff settings");
  }
}

namespace {

bool retryable_status(int status) { return status == 429 || status >= 500; }

std::string snippet(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

HttpReply post_json(const HttpEndpoint& ep, const std::string& path, const Json& body, CallStats* stats,
                    bool accept_client_errors) {
  const ParsedUrl url = parse_base_url(ep.base_url);
  const std::string full_path = url.path_prefix + path;
  const std::string payload = body.dump(-1, ' ', false, Json::error_handler_t::replace);

  httplib::Headers headers;
  if (!ep.auth_env.empty()) {
    if (const char* token = std::getenv(ep.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  CallStats local;
  CallStats& st = stats ? *stats : local;
  const auto secs = static_cast<time_t>(ep.timeout_s);
  const auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
  double delay_ms = ep.backoff_initial_ms;

  for (int attempt = 0;; ++attempt) {
    ++st.attempts;
    httplib::Client client(url.scheme + "://" + url.host + ":" + std::to_string(url.port));
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    auto res = client.Post(full_path, headers, payload, "application/json");

    std::string outcome;
    if (!res) {
      outcome = "transport error: " + httplib::to_string(res.error());
    } else if (retryable_status(res->status)) {
      outcome = "HTTP " + std::to_string(res->status) + ": " + snippet(res->body);
    } else {
      const bool ok = res->status >= 200 && res->status < 300;
      const bool client_error = res->status >= 400 && res->status < 500;
      Json parsed = Json::parse(res->body, nullptr, false);
      if (ok || (client_error && accept_client_errors)) {
        if (parsed.is_discarded()) {
          throw ProtocolError("endpoint returned a non-JSON body (HTTP " + std::to_string(res->status) + ")");
        }
        st.attempt_log.push_back("attempt " + std::to_string(attempt + 1) + ": HTTP " +
                                 std::to_string(res->status));
        return HttpReply{res->status, std::move(parsed)};
      }
      throw ProtocolError("endpoint returned HTTP " + std::to_string(res->status) + ": " + snippet(res->body));
    }

    st.attempt_log.push_back("attempt " + std::to_string(attempt + 1) + ": " + outcome);
    if (attempt >= ep.max_retries) {
      throw TransportError("request to " + ep.base_url + full_path + " failed after " +
                               std::to_string(attempt + 1) + " attempt(s): " + outcome,
                           st.attempt_log);
    }
    ++st.retries;
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
    delay_ms = std::min(delay_ms * ep.backoff_multiplier, static_cast<double>(ep.backoff_max_ms));
  }
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace vgkit
