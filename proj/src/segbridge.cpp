#include "vgkit/segbridge.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <thread>

#include "json_util.hpp"
#include "vgkit/geom.hpp"

namespace vgkit {

std::string_view to_string(SegMode m) { return m == SegMode::kBox ? "box" : "box_point"; }

SegMode parse_seg_mode(std::string_view s) {
  if (s == "box") return SegMode::kBox;
  if (s == "box_point") return SegMode::kBoxPoint;
  throw ArgumentError("unknown segmentation mode '" + std::string(s) + "' (expected box or box_point)");
}

void SegRequest::validate() const {
  if (image_ref.empty() == image.empty()) {
    throw SegFieldError("image", "exactly one of image_ref and image must be given");
  }
  if (image_size && ((*image_size)[0] <= 0 || (*image_size)[1] <= 0)) {
    throw SegFieldError("image_size", "width and height must be positive");
  }
  try {
    box.validate();
    if (image_size) box.validate_within((*image_size)[0], (*image_size)[1]);
  } catch (const ValidationError& e) {
    throw SegFieldError("box", e.what());
  }
  if (mode == SegMode::kBoxPoint && !point) throw SegFieldError("point", "mode box_point requires a point");
  if (point) {
    if (!std::isfinite(point->x) || !std::isfinite(point->y)) throw SegFieldError("point", "must be finite");
    if (point->x < box.x1 || point->x > box.x2 || point->y < box.y1 || point->y > box.y2) {
      throw SegFieldError("point", "point lies outside the box");
    }
  }
}

Json to_json(const SegRequest& r) {
  Json j = Json::object();
  if (!r.image_ref.empty()) j["image_ref"] = r.image_ref;
  if (!r.image.empty()) j["image"] = r.image;
  if (r.image_size) j["image_size"] = Json::array({(*r.image_size)[0], (*r.image_size)[1]});
  j["box"] = to_json(r.box);
  if (r.point) j["point"] = Json::array({r.point->x, r.point->y});
  j["mode"] = to_string(r.mode);
  return j;
}

namespace {

template <typename Fn>
auto in_field(const char* field, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const SegFieldError&) {
    throw;
  } catch (const ValidationError& e) {
    throw SegFieldError(field, e.what());
  } catch (const Json::exception& e) {
    throw SegFieldError(field, e.what());
  }
}

}  // namespace

SegRequest seg_request_from_json(const Json& j) {
  if (!j.is_object()) throw SegFieldError("body", "request must be a JSON object");
  static const char* kKnown[] = {"image_ref", "image", "image_size", "box", "point", "mode"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw SegFieldError(key, "unknown field");
    }
  }
  SegRequest r;
  if (auto it = j.find("image_ref"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) throw SegFieldError("image_ref", "must be a non-empty string");
    r.image_ref = it->get<std::string>();
  }
  if (auto it = j.find("image"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) throw SegFieldError("image", "must be a non-empty string");
    r.image = it->get<std::string>();
  }
  if (auto it = j.find("image_size"); it != j.end()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() || !(*it)[1].is_number_integer()) {
      throw SegFieldError("image_size", "must be [width, height] integers");
    }
    r.image_size = std::array<int, 2>{(*it)[0].get<int>(), (*it)[1].get<int>()};
  }
  if (!j.contains("box")) throw SegFieldError("box", "missing");
  r.box = in_field("box", [&] { return box_from_json(j["box"]); });
  if (auto it = j.find("point"); it != j.end() && !it->is_null()) {
    r.point = in_field("point", [&] {
      if (!it->is_array() || it->size() != 2) throw ValidationError("must be [x, y]");
      return Point{detail::as_finite_number((*it)[0], "point[0]"), detail::as_finite_number((*it)[1], "point[1]")};
    });
  }
  if (!j.contains("mode") || !j["mode"].is_string()) throw SegFieldError("mode", "must be \"box\" or \"box_point\"");
  r.mode = in_field("mode", [&] { return parse_seg_mode(j["mode"].get<std::string>()); });
  r.validate();
  return r;
}

Json to_json(const SegResponse& r) {
  Json j;
  j["width"] = r.width;
  j["height"] = r.height;
  j["rle"] = to_json(r.rle);
  return j;
}

SegResponse seg_response_from_json(const Json& j) {
  try {
    SegResponse r;
    r.width = static_cast<int>(detail::get_int(j, "width"));
    r.height = static_cast<int>(detail::get_int(j, "height"));
    r.rle = rle_from_json(detail::require_field(j, "rle"));
    if (r.rle.width != r.width || r.rle.height != r.height) {
      throw ProtocolError("segmentation response: RLE is " + std::to_string(r.rle.width) + "x" +
                          std::to_string(r.rle.height) + " but the header says " + std::to_string(r.width) + "x" +
                          std::to_string(r.height));
    }
    return r;
  } catch (const ValidationError& e) {
    throw ProtocolError(std::string("segmentation response: ") + e.what());
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("segmentation response: ") + e.what());
  }
}

SegPrompt derive_prompt(const Box& pred_box, SegMode mode) {
  pred_box.validate();
  SegPrompt p{pred_box, std::nullopt, mode};
  if (mode == SegMode::kBoxPoint) p.point = box_center(pred_box);
  return p;
}

RasterMask segment(const HttpEndpoint& ep, const SegRequest& req, CallStats* stats) {
  req.validate();
  const HttpReply reply = post_json(ep, "/segment", to_json(req), stats, /*accept_client_errors=*/true);
  if (reply.status != 200) {
    std::string detail = reply.body.dump();
    if (reply.body.contains("error") && reply.body["error"].is_object()) {
      const Json& e = reply.body["error"];
      detail = e.value("field", std::string("?")) + ": " + e.value("message", std::string(""));
    }
    throw ProtocolError("segmentation service rejected the request (HTTP " + std::to_string(reply.status) +
                        "): " + detail);
  }
  const SegResponse res = seg_response_from_json(reply.body);
  if (req.image_size && ((*req.image_size)[0] != res.width || (*req.image_size)[1] != res.height)) {
    throw ProtocolError("segmentation response is " + std::to_string(res.width) + "x" + std::to_string(res.height) +
                        " but the request declared " + std::to_string((*req.image_size)[0]) + "x" +
                        std::to_string((*req.image_size)[1]));
  }
  try {
    return rle_decode(res.rle);
  } catch (const ValidationError& e) {
    throw ProtocolError(std::string("segmentation response: ") + e.what());
  }
}

// ---------------------------------------------------------------- mock

namespace {

Json error_body(const std::string& field, const std::string& message) {
  return Json{{"error", Json{{"field", field}, {"message", message}}}};
}

}  // namespace

std::pair<int, Json> mock_segment_reply(const std::string& body) {
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded()) return {400, error_body("body", "request body is not valid JSON")};
  SegRequest req;
  try {
    req = seg_request_from_json(j);
    if (!req.image_size) throw SegFieldError("image_size", "required by this server to size the mask");
  } catch (const SegFieldError& e) {
    return {400, error_body(e.field(), e.message())};
  }
  const int w = (*req.image_size)[0];
  const int h = (*req.image_size)[1];
  const Box& b = req.box;
  PolygonSet poly{{{{b.x1, b.y1}, {b.x2, b.y1}, {b.x2, b.y2}, {b.x1, b.y2}}}};
  const RasterMask mask = rasterize(poly, w, h);
  return {200, to_json(SegResponse{w, h, rle_encode(mask)})};
}

struct MockSegServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  bool running = false;
  std::atomic<int> served{0};
};

MockSegServer::MockSegServer() : impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
    auto [status, body] = mock_segment_reply(req.body);
    ++impl_->served;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  });
}

MockSegServer::~MockSegServer() { stop(); }

int MockSegServer::start(const std::string& host, int port) {
  if (impl_->running) throw ArgumentError("mock segmentation server already running");
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) {
    throw TransportError("cannot bind mock segmentation server to " + host + ":" + std::to_string(port), {});
  }
  impl_->port = bound;
  impl_->running = true;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void MockSegServer::stop() {
  if (!impl_->running) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->running = false;
}

int MockSegServer::port() const { return impl_->port; }
std::string MockSegServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }
int MockSegServer::requests_served() const { return impl_->served.load(); }

}  // namespace vgkit
