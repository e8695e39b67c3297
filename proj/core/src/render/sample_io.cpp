#include "scob/render/sample_io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"

namespace scob {
namespace {

using nlohmann::ordered_json;

ordered_json box_json(const BBox& b) { return ordered_json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BBox parse_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InputError("bbox must be an array of four numbers");
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.x_min < b.x_max && b.y_min < b.y_max)) {
    throw InputError(fmt::format("bbox [{}, {}, {}, {}] is empty or inverted", b.x_min, b.y_min, b.x_max, b.y_max));
  }
  return b;
}

}  // namespace

std::string to_json_line(const ManifestEntry& e) {
  ordered_json j;
  if (e.image) j["image"] = e.image->generic_string();
  if (e.width > 0) j["width"] = e.width;
  if (e.height > 0) j["height"] = e.height;
  auto words = ordered_json::array();
  for (const auto& w : e.words) {
    ordered_json wj;
    wj["text"] = w.text;
    if (w.bbox) wj["bbox"] = box_json(*w.bbox);
    if (!w.char_boxes.empty()) {
      auto cb = ordered_json::array();
      for (const auto& b : w.char_boxes) cb.push_back(box_json(b));
      wj["char_boxes"] = std::move(cb);
    }
    words.push_back(std::move(wj));
  }
  j["words"] = std::move(words);
  if (e.seed) j["seed"] = *e.seed;
  j["domain"] = to_string(e.domain);
  return j.dump();
}

ManifestEntry parse_manifest_line(std::string_view line, std::string_view where) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw InputError("record is not a JSON object");
    ManifestEntry e;
    if (j.contains("image")) e.image = std::filesystem::path(j.at("image").get<std::string>());
    e.width = j.value("width", 0);
    e.height = j.value("height", 0);
    for (const auto& wj : j.at("words")) {
      WordAnnotation w;
      w.text = wj.at("text").get<std::string>();
      if (w.text.empty()) throw InputError("word text is empty");
      if (wj.contains("bbox") && !wj.at("bbox").is_null()) w.bbox = parse_box(wj.at("bbox"));
      if (wj.contains("char_boxes")) {
        for (const auto& b : wj.at("char_boxes")) w.char_boxes.push_back(parse_box(b));
      }
      e.words.push_back(std::move(w));
    }
    if (j.contains("seed")) e.seed = j.at("seed").get<std::uint64_t>();
    e.domain = parse_domain(j.at("domain").get<std::string>());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(fmt::format("{}: {}", where, ex.what()));
  } catch (const InputError& ex) {
    throw InputError(fmt::format("{}: {}", where, ex.what()));
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open manifest {}", path.string()));
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto e = parse_manifest_line(line, fmt::format("{}:{}", path.string(), line_no));
    if (e.image && e.image->is_relative()) e.image = path.parent_path() / *e.image;
    out.push_back(std::move(e));
  }
  if (in.bad()) throw IoError(fmt::format("read from {} failed", path.string()));
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) {
    text += to_json_line(e);
    text += '\n';
  }
  write_file_atomic(path, text);
}

ManifestEntry make_entry(const RenderedSample& sample, std::optional<std::filesystem::path> image) {
  ManifestEntry e;
  e.image = std::move(image);
  e.width = sample.image.width;
  e.height = sample.image.height;
  e.words = sample.words;
  e.seed = sample.seed;
  e.domain = sample.domain;
  return e;
}

RenderedSample load_sample(const ManifestEntry& entry) {
  if (!entry.image) throw InputError("manifest entry has no image");
  RenderedSample s;
  s.image = read_png(*entry.image);
  if ((entry.width > 0 && entry.width != s.image.width) || (entry.height > 0 && entry.height != s.image.height)) {
    throw InputError(fmt::format("{} is {}x{}, manifest says {}x{}", entry.image->string(), s.image.width,
                                 s.image.height, entry.width, entry.height));
  }
  s.words = entry.words;
  s.domain = entry.domain;
  s.seed = entry.seed.value_or(0);
  return s;
}

}  // namespace scob
