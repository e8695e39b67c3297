#include "scob/render/augment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <opencv2/imgproc.hpp>

#include "scob/util/errors.hpp"

namespace scob {
namespace {

std::optional<BBox> map_box(const BBox& b, const cv::Mat& m, int w, int h) {
  const std::array<cv::Point2d, 4> corners{cv::Point2d{b.x_min, b.y_min}, {b.x_max, b.y_min}, {b.x_min, b.y_max},
                                           {b.x_max, b.y_max}};
  double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
  for (const auto& p : corners) {
    const double x = m.at<double>(0, 0) * p.x + m.at<double>(0, 1) * p.y + m.at<double>(0, 2);
    const double y = m.at<double>(1, 0) * p.x + m.at<double>(1, 1) * p.y + m.at<double>(1, 2);
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
  BBox out{std::clamp(x0, 0.0, double(w)), std::clamp(y0, 0.0, double(h)), std::clamp(x1, 0.0, double(w)),
           std::clamp(y1, 0.0, double(h))};
  if (!(out.x_min < out.x_max && out.y_min < out.y_max)) return std::nullopt;
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(fmt::format("augment: {}", what));
  };
  check(max_rotation_deg >= 0 && max_rotation_deg <= 45, "max_rotation_deg must be in [0, 45]");
  check(max_scale_delta >= 0 && max_scale_delta < 0.5, "max_scale_delta must be in [0, 0.5)");
  check(color_jitter >= 0 && color_jitter < 1, "color_jitter must be in [0, 1)");
  check(gray_prob >= 0 && gray_prob <= 1, "gray_prob must be in [0, 1]");
  check(blur_prob >= 0 && blur_prob <= 1, "blur_prob must be in [0, 1]");
  check(blur_max_radius >= 0, "blur_max_radius must be non-negative");
}

RenderedSample augment(const RenderedSample& sample, const AugmentConfig& config, Rng& rng) {
  const int w = sample.image.width;
  const int h = sample.image.height;
  const double angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  const double scale = 1.0 + rng.uniform(-config.max_scale_delta, config.max_scale_delta);
  const double brightness = rng.uniform(-config.color_jitter, config.color_jitter) * 255.0;
  const double contrast = 1.0 + rng.uniform(-config.color_jitter, config.color_jitter);
  const bool gray = rng.bernoulli(config.gray_prob);
  const bool blur = rng.bernoulli(config.blur_prob);
  const double radius = rng.uniform(0.0, config.blur_max_radius);

  RenderedSample out = sample;
  if (w == 0 || h == 0) return out;

  cv::Mat src(h, w, CV_8UC3, const_cast<std::uint8_t*>(sample.image.pixels.data()));
  const cv::Mat m = cv::getRotationMatrix2D(cv::Point2f(w / 2.0f, h / 2.0f), angle, scale);
  cv::Mat warped;
  cv::warpAffine(src, warped, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);

  cv::Mat adjusted;
  warped.convertTo(adjusted, CV_8UC3, contrast, brightness + (1.0 - contrast) * 127.5);
  if (gray) {
    cv::Mat g;
    cv::cvtColor(adjusted, g, cv::COLOR_RGB2GRAY);
    cv::cvtColor(g, adjusted, cv::COLOR_GRAY2RGB);
  }
  if (blur && radius > 0) cv::GaussianBlur(adjusted, adjusted, cv::Size(0, 0), radius);

  out.image.pixels.assign(adjusted.datastart, adjusted.dataend);
  for (auto& word : out.words) {
    if (word.bbox) word.bbox = map_box(*word.bbox, m, w, h);
    std::vector<BBox> chars;
    for (const auto& c : word.char_boxes) {
      if (auto mapped = map_box(c, m, w, h)) chars.push_back(*mapped);
    }
    word.char_boxes = std::move(chars);
  }
  return out;
}

}  // namespace scob
