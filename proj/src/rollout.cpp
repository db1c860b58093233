#include "vgkit/rollout.hpp"

#include <httplib.h>

#include <algorithm>
#include <mutex>
#include <thread>
#include <variant>

#include "fanout.hpp"
#include "json_util.hpp"
#include "vgkit/errors.hpp"

namespace vgkit {

void InferenceEndpoint::validate() const {
  http.validate();
  if (model.empty()) throw ValidationError("model name must be non-empty");
  if (!(temperature >= 0)) throw ValidationError("temperature must be >= 0");
  if (!(top_p > 0 && top_p <= 1)) throw ValidationError("top_p must be in (0, 1]");
  if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
}

Json make_chat_request(const InferenceEndpoint& ep, const std::string& prompt, int n, double temperature,
                       const std::string& image_ref) {
  Json content;
  if (image_ref.empty()) {
    content = prompt;
  } else {
    content = Json::array({Json{{"type", "image_url"}, {"image_url", Json{{"url", image_ref}}}},
                           Json{{"type", "text"}, {"text", prompt}}});
  }
  Json req;
  req["model"] = ep.model;
  req["messages"] = Json::array({Json{{"role", "user"}, {"content", std::move(content)}}});
  req["n"] = n;
  req["temperature"] = temperature;
  req["top_p"] = ep.top_p;
  req["max_tokens"] = ep.max_tokens;
  return req;
}

std::vector<std::string> parse_chat_response(const Json& body, int n) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array()) {
    throw ProtocolError("chat response has no 'choices' array");
  }
  const Json& choices = body["choices"];
  if (static_cast<int>(choices.size()) != n) {
    throw ProtocolError("expected " + std::to_string(n) + " choices, got " + std::to_string(choices.size()));
  }
  std::vector<std::pair<long long, std::string>> indexed;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const Json& c = choices[i];
    long long idx = static_cast<long long>(i);
    if (c.contains("index") && c["index"].is_number_integer()) idx = c["index"].get<long long>();
    if (!c.contains("message") || !c["message"].is_object() || !c["message"].contains("content") ||
        !c["message"]["content"].is_string()) {
      throw ProtocolError("choice " + std::to_string(i) + " has no message content");
    }
    indexed.emplace_back(idx, c["message"]["content"].get<std::string>());
  }
  std::stable_sort(indexed.begin(), indexed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < indexed.size(); ++i) {
    if (indexed[i].first != static_cast<long long>(i)) throw ProtocolError("choice indices are not 0..n-1");
  }
  std::vector<std::string> out;
  out.reserve(indexed.size());
  for (auto& [idx, text] : indexed) out.push_back(std::move(text));
  return out;
}

GenerateResult generate(const InferenceEndpoint& ep, const std::string& prompt, int n,
                        std::optional<double> temperature, const std::string& image_ref) {
  if (n < 1) throw ArgumentError("generate: n must be >= 1");
  GenerateResult out;
  const Json req = make_chat_request(ep, prompt, n, temperature.value_or(ep.temperature), image_ref);
  const HttpReply reply = post_json(ep.http, "/chat/completions", req, &out.stats);
  out.texts = parse_chat_response(reply.body, n);
  return out;
}

// ---------------------------------------------------------------- rollout

void RolloutJob::validate() const {
  if (records.empty()) throw ValidationError("rollout: dataset is empty");
  endpoint.validate();
  grpo.validate();
  reward.validate();
  if (groups_out.empty() || batch_out.empty()) throw ValidationError("rollout: output paths are required");
  std::vector<std::filesystem::path> outs{groups_out, batch_out};
  if (!errors_out.empty()) outs.push_back(errors_out);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      if (outs[i].lexically_normal() == outs[j].lexically_normal()) {
        throw ValidationError("rollout: output paths must be distinct");
      }
    }
  }
}

namespace {

struct Failure {
  std::string message;
  std::vector<std::string> attempts;
};

template <typename T>
using Outcome = std::variant<T, Failure>;

template <typename Fn>
auto capture(Fn&& fn) -> Outcome<decltype(fn())> {
  try {
    return fn();
  } catch (const TransportError& e) {
    return Failure{e.what(), e.attempts()};
  } catch (const std::exception& e) {
    return Failure{e.what(), {}};
  }
}

std::string format_errors(const std::vector<std::pair<std::string, Failure>>& failures) {
  std::string out;
  for (const auto& [id, f] : failures) {
    Json j;
    j["record_id"] = id;
    j["error"] = f.message;
    j["attempts"] = f.attempts;
    out += j.dump(-1, ' ', false, Json::error_handler_t::replace) + "\n";
  }
  return out;
}

const TemplateSet& templates_or_builtin(const TemplateSet* t) { return t ? *t : TemplateSet::builtin(); }

}  // namespace

RolloutGroup score_group(const GroundingRecord& rec, const std::vector<std::string>& texts, const RolloutJob& job) {
  RolloutGroup g;
  g.prompt_id = rec.id;
  g.gt = GroundTruthSnapshot{rec.explicit_query, rec.gt_box};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const ParsedResponse parsed = parse_response(texts[i], job.tpl.kind);
    RewardBreakdown rb = total_reward(parsed, rec, job.coord, job.reward);
    g.responses.push_back(RolloutResponse{static_cast<int>(i), texts[i], rb.total, 0.0, std::move(rb)});
  }
  g.assign_advantages(job.grpo);
  return g;
}

RolloutOutput run_rollout(const RolloutJob& job) {
  job.validate();
  const TemplateSet& templates = templates_or_builtin(job.templates);
  std::vector<std::optional<Outcome<RolloutGroup>>> results(job.records.size());

  detail::parallel_for(job.records.size(), job.endpoint.max_in_flight, [&](std::size_t i) {
    const GroundingRecord& rec = job.records[i];
    results[i] = capture([&] {
      const std::string prompt = render_prompt(job.tpl, rec.implicit_query, job.coord, templates);
      GenerateResult gen = generate(job.endpoint, prompt, job.grpo.group_size, std::nullopt, rec.image_ref);
      return score_group(rec, gen.texts, job);
    });
  });

  RolloutOutput out;
  out.summary.total = job.records.size();
  out.summary.max_failure_fraction = job.max_failure_fraction;
  std::vector<std::pair<std::string, Failure>> failures;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (auto* g = std::get_if<RolloutGroup>(&*results[i])) {
      out.groups.push_back(std::move(*g));
    } else {
      failures.emplace_back(job.records[i].id, std::get<Failure>(*results[i]));
    }
  }
  out.summary.failed = failures.size();

  write_file(job.groups_out, serialize_groups(out.groups));
  write_file(job.batch_out, serialize_batch(make_training_batch(out.groups, job.grpo)));
  if (!job.errors_out.empty()) write_file(job.errors_out, format_errors(failures));
  return out;
}

// ---------------------------------------------------------------- inference

Prediction make_prediction(const GroundingRecord& rec, QueryKind kind, std::string raw_text, PromptKind prompt_kind,
                           CoordMode coord) {
  Prediction p;
  p.record_id = rec.id;
  p.query_kind = kind;
  const ParsedResponse parsed = parse_response(raw_text, prompt_kind);
  if (const RawBox* raw = parsed.first_box()) {
    try {
      p.box = to_box(*raw, coord, rec.image_w, rec.image_h);
    } catch (const ConversionError&) {
      p.box.reset();
    }
  }
  p.raw_text = std::move(raw_text);
  return p;
}

InferenceOutput run_inference(const InferenceJob& job) {
  if (job.records.empty()) throw ValidationError("infer: dataset is empty");
  job.endpoint.validate();
  if (job.preds_out.empty()) throw ValidationError("infer: output path is required");
  const TemplateSet& templates = templates_or_builtin(job.templates);
  std::vector<std::optional<Outcome<Prediction>>> results(job.records.size());

  detail::parallel_for(job.records.size(), job.endpoint.max_in_flight, [&](std::size_t i) {
    const GroundingRecord& rec = job.records[i];
    results[i] = capture([&] {
      const std::string prompt = render_prompt(job.tpl, rec.query(job.query_kind), job.coord, templates);
      GenerateResult gen = generate(job.endpoint, prompt, 1, 0.0, rec.image_ref);
      return make_prediction(rec, job.query_kind, std::move(gen.texts.front()), job.tpl.kind, job.coord);
    });
  });

  InferenceOutput out;
  out.summary.total = job.records.size();
  out.summary.max_failure_fraction = job.max_failure_fraction;
  std::vector<std::pair<std::string, Failure>> failures;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (auto* p = std::get_if<Prediction>(&*results[i])) {
      out.predictions.push_back(std::move(*p));
    } else {
      failures.emplace_back(job.records[i].id, std::get<Failure>(*results[i]));
    }
  }
  out.summary.failed = failures.size();
  write_predictions(job.preds_out, out.predictions);
  if (!job.errors_out.empty()) write_file(job.errors_out, format_errors(failures));
  return out;
}

// ---------------------------------------------------------------- mock server

MockScript MockScript::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("mock script must be a JSON object");
  MockScript s;
  if (auto it = j.find("strict"); it != j.end()) s.strict = it->get<bool>();
  if (auto it = j.find("default_replies"); it != j.end()) s.default_replies = it->get<std::vector<std::string>>();
  if (auto it = j.find("rules"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("mock script: 'rules' must be an array");
    for (const Json& jr : *it) {
      MockRule r;
      if (auto f = jr.find("contains"); f != jr.end()) r.contains = f->get<std::string>();
      if (auto f = jr.find("index"); f != jr.end()) r.index = f->get<int>();
      r.replies = detail::require_field(jr, "replies").get<std::vector<std::string>>();
      if (auto f = jr.find("fail_times"); f != jr.end()) r.fail_times = f->get<int>();
      if (auto f = jr.find("fail_status"); f != jr.end()) r.fail_status = f->get<int>();
      if (auto f = jr.find("delay_ms"); f != jr.end()) r.delay_ms = f->get<int>();
      if (r.replies.empty()) throw ValidationError("mock script: every rule needs at least one reply");
      s.rules.push_back(std::move(r));
    }
  }
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

struct MockInferenceServer::Impl {
  MockScript script;
  std::filesystem::path log_path;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  bool running = false;

  std::mutex mu;
  int next_seq = 0;
  std::vector<int> fail_counts;
  std::vector<Json> log;

  static std::string prompt_text(const Json& messages) {
    std::string text;
    for (const Json& m : messages) {
      const Json& content = m.at("content");
      if (content.is_string()) {
        if (!text.empty()) text += "\n";
        text += content.get<std::string>();
      } else if (content.is_array()) {
        for (const Json& part : content) {
          if (part.value("type", "") == "text") {
            if (!text.empty()) text += "\n";
            text += part.at("text").get<std::string>();
          }
        }
      }
    }
    return text;
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    Json body = Json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("messages") || !body["messages"].is_array()) {
      res.status = 400;
      res.set_content(R"({"error":{"field":"messages","message":"request must carry a messages array"}})",
                      "application/json");
      return;
    }
    int n = 1;
    if (body.contains("n")) {
      if (!body["n"].is_number_integer() || body["n"].get<int>() < 1) {
        res.status = 400;
        res.set_content(R"({"error":{"field":"n","message":"n must be a positive integer"}})", "application/json");
        return;
      }
      n = body["n"].get<int>();
    }
    std::string prompt;
    try {
      prompt = prompt_text(body["messages"]);
    } catch (const Json::exception&) {
      res.status = 400;
      res.set_content(R"({"error":{"field":"messages","message":"malformed message content"}})",
                      "application/json");
      return;
    }

    int seq = 0;
    int rule_idx = -1;
    bool fail = false;
    {
      std::lock_guard lock(mu);
      seq = next_seq++;
      for (std::size_t r = 0; r < script.rules.size(); ++r) {
        const MockRule& rule = script.rules[r];
        if (rule.contains && prompt.find(*rule.contains) == std::string::npos) continue;
        if (rule.index && *rule.index != seq) continue;
        rule_idx = static_cast<int>(r);
        break;
      }
      if (rule_idx >= 0 && fail_counts[rule_idx] < script.rules[rule_idx].fail_times) {
        ++fail_counts[rule_idx];
        fail = true;
      }
    }

    const std::vector<std::string>* replies = nullptr;
    if (rule_idx >= 0) {
      const MockRule& rule = script.rules[rule_idx];
      if (rule.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(rule.delay_ms));
      if (fail) {
        res.status = rule.fail_status;
        res.set_content(R"({"error":{"message":"scripted failure"}})", "application/json");
        record(seq, rule_idx, n, res.status, prompt);
        return;
      }
      replies = &rule.replies;
    } else if (!script.strict && !script.default_replies.empty()) {
      replies = &script.default_replies;
    }

    if (!replies) {
      res.status = 404;
      Json err{{"error", Json{{"message", "no scripted reply matches this request"}, {"seq", seq}}}};
      res.set_content(err.dump(), "application/json");
      record(seq, rule_idx, n, res.status, prompt);
      return;
    }

    Json choices = Json::array();
    for (int i = 0; i < n; ++i) {
      choices.push_back(Json{{"index", i},
                             {"message", Json{{"role", "assistant"}, {"content", (*replies)[i % replies->size()]}}},
                             {"finish_reason", "stop"}});
    }
    Json out;
    out["id"] = "mock-" + std::to_string(seq);
    out["object"] = "chat.completion";
    out["model"] = body.value("model", "mock");
    out["choices"] = std::move(choices);
    res.status = 200;
    res.set_content(out.dump(), "application/json");
    record(seq, rule_idx, n, 200, prompt);
  }

  void record(int seq, int rule_idx, int n, int status, const std::string& prompt) {
    Json entry;
    entry["seq"] = seq;
    entry["rule"] = rule_idx >= 0 ? Json(rule_idx) : Json(nullptr);
    entry["n"] = n;
    entry["status"] = status;
    entry["miss"] = rule_idx < 0 && status == 404;
    entry["prompt"] = prompt;
    std::lock_guard lock(mu);
    log.push_back(std::move(entry));
  }
};

MockInferenceServer::MockInferenceServer(MockScript script, std::filesystem::path log_path)
    : impl_(std::make_unique<Impl>()) {
  impl_->script = std::move(script);
  impl_->log_path = std::move(log_path);
  impl_->fail_counts.assign(impl_->script.rules.size(), 0);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->handle(req, res); };
  impl_->server.Post("/v1/chat/completions", handler);
  impl_->server.Post("/chat/completions", handler);
}

MockInferenceServer::~MockInferenceServer() {
  try {
    stop();
  } catch (...) {
  }
}

int MockInferenceServer::start(const std::string& host, int port) {
  if (impl_->running) throw ArgumentError("mock server already running");
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) {
    throw TransportError("cannot bind mock inference server to " + host + ":" + std::to_string(port));
  }
  impl_->port = bound;
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void MockInferenceServer::stop() {
  if (!impl_->running) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->running = false;
  if (!impl_->log_path.empty()) {
    auto entries = request_log();
    std::string out;
    for (const Json& e : entries) out += e.dump(-1, ' ', false, Json::error_handler_t::replace) + "\n";
    write_file(impl_->log_path, out);
  }
}

int MockInferenceServer::port() const { return impl_->port; }

std::string MockInferenceServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1"; }

std::vector<Json> MockInferenceServer::request_log() const {
  std::lock_guard lock(impl_->mu);
  auto entries = impl_->log;
  std::sort(entries.begin(), entries.end(),
            [](const Json& a, const Json& b) { return a["seq"].get<int>() < b["seq"].get<int>(); });
  return entries;
}

}  // namespace vgkit
