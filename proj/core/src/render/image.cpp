#include "scob/render/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scob/util/errors.hpp"

namespace scob {
namespace {

cv::Mat to_bgr(const Image& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

Image from_bgr(const cv::Mat& bgr) {
  Image out(bgr.cols, bgr.rows);
  cv::Mat rgb(out.height, out.width, CV_8UC3, out.pixels.data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", to_bgr(image), bytes)) throw IoError("PNG encoding failed");
  return bytes;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("PNG decoding failed");
  return from_bgr(bgr);
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), to_bgr(image))) {
    throw IoError("cannot write image: " + path.string());
  }
}

Image read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image: " + path.string());
  return from_bgr(bgr);
}

Image resize(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  Image out(width, height);
  cv::Mat dst(height, width, CV_8UC3, out.pixels.data());
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return out;
}

}  // namespace scob
