#pragma once

#include <string>
#include <vector>

#include "vgkit/core.hpp"

namespace vgkit {

struct ParsedUrl {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path_prefix;  // without trailing slash, may be empty
};

// Throws ValidationError for anything that is not http(s)://host[:port][/path].
ParsedUrl parse_base_url(const std::string& url);

struct HttpEndpoint {
  std::string base_url;
  std::string auth_env;  // name of the environment variable holding a bearer token
  double timeout_s = 60.0;
  int max_retries = 3;
  int backoff_initial_ms = 200;
  double backoff_multiplier = 2.0;
  int backoff_max_ms = 5000;

  void validate() const;
};

struct CallStats {
  int attempts = 0;
  int retries = 0;
  std::vector<std::string> attempt_log;
};

struct HttpReply {
  int status = 0;
  Json body;
};

// POSTs JSON to base_url + path. Transport failures and 429/5xx statuses
// are retried with exponential backoff; after max_retries the call throws
// TransportError carrying the attempt log. Any other non-2xx status or a
// non-JSON body throws ProtocolError, unless accept_client_errors is set, in
// which case 4xx replies with a JSON body are returned.
HttpReply post_json(const HttpEndpoint& ep, const std::string& path, const Json& body,
                    CallStats* stats = nullptr, bool accept_client_errors = false);

std::string base64_encode(std::string_view bytes);

}  // namespace vgkit
