#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scob/render/renderer.hpp"

namespace scob {

/// One JSON Lines manifest record:
///   {"image": "a.png", "width": W, "height": H,
///    "words": [{"text": "..", "bbox": [x0, y0, x1, y1], "char_boxes": [[..], ..]}],
///    "seed": S, "domain": "synthetic" | "real"}
/// Only "words" and "domain" are required. Relative image paths resolve
/// against the manifest's directory.
struct ManifestEntry {
  std::optional<std::filesystem::path> image;
  int width = 0;
  int height = 0;
  std::vector<WordAnnotation> words;
  std::optional<std::uint64_t> seed;
  Domain domain = Domain::kSynthetic;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

std::string to_json_line(const ManifestEntry& entry);

// Throws InputError quoting `where` (e.g. "file.jsonl:3") on malformed input.
ManifestEntry parse_manifest_line(std::string_view line, std::string_view where = "manifest");

// Skips blank lines. Throws IoError when the file cannot be read.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Writes all entries atomically.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Entry describing `sample` stored at `image` (path as written).
ManifestEntry make_entry(const RenderedSample& sample, std::optional<std::filesystem::path> image);

// Reads the entry's image. Throws InputError when the entry has none and
// IoError when it cannot be decoded.
RenderedSample load_sample(const ManifestEntry& entry);

}  // namespace scob
