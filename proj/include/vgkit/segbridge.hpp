#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "vgkit/core.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/http.hpp"

namespace vgkit {

enum class SegMode { kBox, kBoxPoint };

std::string_view to_string(SegMode m);
SegMode parse_seg_mode(std::string_view s);

// A request field that failed validation; servers echo `field` in the 400 body.
class SegFieldError : public ValidationError {
 public:
  SegFieldError(std::string field, const std::string& message)
      : ValidationError(field + ": " + message), field_(std::move(field)), message_(message) {}
  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

 private:
  std::string field_;
  std::string message_;
};

struct SegRequest {
  std::string image_ref;
  std::string image;  // base64-encoded bytes; exactly one of image_ref/image is set
  std::optional<std::array<int, 2>> image_size;  // [width, height]
  Box box;
  std::optional<Point> point;
  SegMode mode = SegMode::kBoxPoint;

  // Throws SegFieldError naming the first bad field.
  void validate() const;
};

Json to_json(const SegRequest& r);
SegRequest seg_request_from_json(const Json& j);

struct SegResponse {
  int width = 0;
  int height = 0;
  Rle rle;
};

Json to_json(const SegResponse& r);
// Checks the schema and that the header agrees with the RLE; throws ProtocolError.
SegResponse seg_response_from_json(const Json& j);

struct SegPrompt {
  Box box;
  std::optional<Point> point;
  SegMode mode = SegMode::kBoxPoint;
};

// box_point mode prompts with the box center; box mode sends the box alone.
SegPrompt derive_prompt(const Box& pred_box, SegMode mode);

// Validates locally, POSTs to /segment and decodes the RLE. A rejected request
// or a mask whose dims disagree with the header (or the declared image_size)
// is a ProtocolError.
RasterMask segment(const HttpEndpoint& ep, const SegRequest& req, CallStats* stats = nullptr);

// Reference server for the wire protocol: the mask is the box interior at
// pixel-center resolution. It needs image_size because it ignores image bytes.
class MockSegServer {
 public:
  MockSegServer();
  ~MockSegServer();
  MockSegServer(const MockSegServer&) = delete;
  MockSegServer& operator=(const MockSegServer&) = delete;

  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const;
  std::string base_url() const;
  int requests_served() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// The mock's reply for one request body; shared with the server so tests can
// check conformance without a socket. Returns the HTTP status and JSON body.
std::pair<int, Json> mock_segment_reply(const std::string& body);

}  // namespace vgkit
