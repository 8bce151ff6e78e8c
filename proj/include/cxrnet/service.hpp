#pragma once

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cxrnet/error.hpp"
#include "cxrnet/image.hpp"
#include "cxrnet/model.hpp"
#include "cxrnet/serialization.hpp"

namespace cxr {

inline constexpr std::size_t kDefaultMaxBodyBytes = 10u * 1024u * 1024u;

struct ServiceConfig {
  std::size_t max_body_bytes = kDefaultMaxBodyBytes;
  std::string cors_origin = "*";
};

/// Status code plus JSON body; every status >= 400 carries an "error" code.
struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

struct PredictionResponse {
  std::size_t predicted_index = 0;
  std::string predicted_label;
  std::vector<std::pair<std::string, double>> probabilities;  // model label order
  std::string model_version;

  nlohmann::json to_json() const {
    nlohmann::json probs = nlohmann::json::object();
    for (const auto& [label, p] : probabilities) probs[label] = p;
    return {{"predicted_index", predicted_index},
            {"predicted_label", predicted_label},
            {"probabilities", probs},
            {"model_version", model_version}};
  }
};

inline ServiceResponse error_response(int status, std::string code, std::string message = {}) {
  nlohmann::json body{{"error", std::move(code)}};
  if (!message.empty()) body["message"] = std::move(message);
  return {status, std::move(body)};
}

inline nlohmann::json describe_layer(const Layer<float>& layer, const Shape& output) {
  nlohmann::json j = std::visit(
      overloaded{
          [](const Conv2D<float>& c) -> nlohmann::json {
            return {{"type", "conv2d"}, {"filters", c.filters},   {"kernel", {c.kernel_h, c.kernel_w}},
                    {"stride", c.stride}, {"padding", c.padding}, {"in_channels", c.in_channels}};
          },
          [](const ReLU&) -> nlohmann::json { return {{"type", "relu"}}; },
          [](const MaxPool2D& p) -> nlohmann::json {
            return {{"type", "maxpool2d"}, {"window", {p.window_h, p.window_w}}, {"stride", p.stride}};
          },
          [](const Flatten&) -> nlohmann::json { return {{"type", "flatten"}}; },
          [](const Dense<float>& d) -> nlohmann::json {
            return {{"type", "dense"}, {"in_units", d.in_units}, {"out_units", d.out_units}};
          },
          [](const Softmax&) -> nlohmann::json { return {{"type", "softmax"}}; },
      },
      layer);
  j["output_shape"] = output;
  return j;
}

/// Inference endpoint logic, independent of the HTTP transport. The loaded
/// model is never mutated while serving, so handlers may run concurrently.
class PredictionService {
 public:
  explicit PredictionService(ServiceConfig config = {}) : config_(std::move(config)) {}

  void load(Model<float> model, std::string version) {
    model_.emplace(std::move(model));
    version_ = std::move(version);
  }

  void load_file(const std::filesystem::path& path) {
    const auto bytes = read_binary_file(path);
    load(deserialize_model(bytes), model_version_tag(bytes));
  }

  bool model_loaded() const noexcept { return model_.has_value(); }
  const ServiceConfig& config() const noexcept { return config_; }
  const std::optional<Model<float>>& model() const noexcept { return model_; }

  /// The exact tensor fed to the network, [1 x H x W x 3].
  Tensor preprocess(std::string_view bytes) const {
    const Shape& in = model_ ? model_->input_shape() : Shape{kInputSide, kInputSide, 3};
    Tensor t = preprocess_image(bytes, in[0], in[1]);
    return std::move(t).reshape(Shape{1, in[0], in[1], 3});
  }

  ServiceResponse handle_predict(std::string_view image_bytes) const {
    if (!model_) return error_response(503, "model_not_loaded", "no model is loaded");
    if (image_bytes.size() > config_.max_body_bytes) {
      return error_response(413, "payload_too_large",
                            "image exceeds the limit of " + std::to_string(config_.max_body_bytes) + " bytes");
    }
    try {
      const Tensor probs = model_->forward(preprocess(image_bytes));
      PredictionResponse r;
      r.predicted_index = argmax(probs.data());
      r.predicted_label = model_->class_labels()[r.predicted_index];
      for (std::size_t k = 0; k < model_->num_classes(); ++k) {
        r.probabilities.emplace_back(model_->class_labels()[k], static_cast<double>(probs[k]));
      }
      r.model_version = version_;
      return {200, r.to_json()};
    } catch (const DecodeError& e) {
      return error_response(400, "decode_failed", e.what());
    } catch (const UnsupportedFormatError& e) {
      return error_response(400, "decode_failed", e.what());
    } catch (const std::exception&) {
      return error_response(500, "internal_error", "internal server error");
    }
  }

  /// Routes an HTTP body by media type: multipart field `image`, or a raw
  /// image/png, image/jpeg or application/octet-stream body.
  ServiceResponse handle_predict_request(const httplib::Request& req) const {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) return error_response(400, "missing_image_field", "multipart field 'image' is required");
      return handle_predict(req.get_file_value("image").content);
    }
    std::string type = req.get_header_value("Content-Type");
    type = type.substr(0, type.find(';'));
    while (!type.empty() && type.back() == ' ') type.pop_back();
    for (auto& ch : type) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (type != "image/png" && type != "image/jpeg" && type != "application/octet-stream") {
      return error_response(415, "unsupported_media_type",
                            "send multipart/form-data with field 'image', or an image/png or image/jpeg body");
    }
    return handle_predict(req.body);
  }

  ServiceResponse handle_health() const {
    return {200, {{"status", "ok"}, {"model_loaded", model_loaded()}}};
  }

  ServiceResponse handle_model_info() const {
    if (!model_) return error_response(503, "model_not_loaded", "no model is loaded");
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < model_->layers().size(); ++i) {
      layers.push_back(describe_layer(model_->layers()[i], model_->layer_shapes()[i]));
    }
    return {200,
            {{"layers", layers},
             {"input_shape", model_->input_shape()},
             {"class_labels", model_->class_labels()},
             {"parameter_count", model_->parameter_count()},
             {"model_version", version_}}};
  }

  /// Registers the /api/v1 routes, CORS handling and JSON error bodies.
  void mount(httplib::Server& server) const {
    // multipart framing adds a little on top of the image itself
    server.set_payload_max_length(config_.max_body_bytes + 64 * 1024);
    const std::string origin = config_.cors_origin;
    auto send = [origin](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
      if (!origin.empty()) res.set_header("Access-Control-Allow-Origin", origin);
    };
    server.Post("/api/v1/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, handle_predict_request(req));
    });
    server.Get("/api/v1/health",
               [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
    server.Get("/api/v1/model",
               [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_model_info()); });
    server.Options(R"(/api/v1/.*)", [origin](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      if (!origin.empty()) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
      }
    });
    const std::size_t limit = config_.max_body_bytes;
    server.set_error_handler([send, limit](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      switch (res.status) {
        case 413:
          send(res, error_response(413, "payload_too_large", "body exceeds the limit of " + std::to_string(limit) + " bytes"));
          break;
        case 404: send(res, error_response(404, "not_found")); break;
        case 405: send(res, error_response(405, "method_not_allowed")); break;
        case 400: send(res, error_response(400, "bad_request")); break;
        default: send(res, error_response(res.status, res.status >= 500 ? "internal_error" : "request_error"));
      }
      return httplib::Server::HandlerResponse::Handled;
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      send(res, error_response(500, "internal_error", "internal server error"));
    });
  }

 private:
  ServiceConfig config_;
  std::optional<Model<float>> model_;
  std::string version_;
};

}  // namespace cxr
