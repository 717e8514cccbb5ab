// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats.
//
//   feature file  "FETV" u32 version=1, u32 frames, u32 dim, f32[frames*dim]
//   checkpoint    "MTSC" u32 version=1, u32 architecture, u32 N, u32 D, u32 H,
//                 u32 flags (bit0 state background, bit1 adapter),
//                 f64 parameters in declaration order
//                 plus "<checkpoint>.json" holding the category catalog
//   manifest      JSON, see read_manifest
//
// All integers and floats are little-endian. Every write goes to a
// temporary file that is renamed into place.

#ifndef STATECHANGE_IO_HPP
#define STATECHANGE_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "statechange/core.hpp"
#include "statechange/evalkit.hpp"
#include "statechange/model.hpp"

namespace statechange::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

/// Writes `bytes` to `path` atomically (temp file in the same directory, then rename).
inline void write_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot rename '" + tmp.string() + "': " + ec.message());
  }
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw Error(what_ + ": truncated payload");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw Error(what_ + ": truncated payload");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature files

inline std::string encode_features(const Matrix& frames) {
  std::string out;
  out.reserve(16 + frames.size() * 4);
  out.append("FETV", 4);
  detail::put<std::uint32_t>(out, kFeatureVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(frames.rows()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(frames.cols()));
  for (double v : frames.data()) detail::put<float>(out, static_cast<float>(v));
  return out;
}

inline Matrix decode_features(std::string_view bytes, const std::string& what = "feature file") {
  detail::Reader r(bytes, what);
  if (bytes.size() < 4 || r.take(4) != "FETV") throw Error(what + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureVersion)
    throw Error(what + ": unsupported version " + std::to_string(version));
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  const std::size_t need = static_cast<std::size_t>(rows) * cols * sizeof(float);
  if (r.remaining() < need) throw Error(what + ": truncated payload");
  if (r.remaining() > need) throw Error(what + ": trailing bytes after payload");
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = static_cast<double>(r.get<float>());
  return m;
}

inline void write_features(const fs::path& path, const Matrix& frames) {
  write_atomic(path, encode_features(frames));
}

inline Matrix read_features(const fs::path& path) {
  return decode_features(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Catalog and annotations

inline json catalog_to_json(const CategoryCatalog& catalog) {
  json arr = json::array();
  for (const auto& c : catalog.categories())
    arr.push_back({{"name", c.name},
                   {"initial_state", c.initial_state_name},
                   {"end_state", c.end_state_name},
                   {"action", c.action_name}});
  return arr;
}

inline CategoryCatalog catalog_from_json(const json& j) {
  if (!j.is_array()) throw Error("catalog must be a JSON array");
  std::vector<Category> cats;
  for (const auto& e : j)
    cats.push_back({e.at("name").get<std::string>(), e.value("initial_state", std::string{}),
                    e.value("end_state", std::string{}), e.value("action", std::string{})});
  return CategoryCatalog(std::move(cats));
}

inline json annotations_to_json(std::span<const AnnotationTrack> tracks) {
  json arr = json::array();
  for (const auto& t : tracks) {
    json ivs = json::array();
    for (const auto& iv : t.intervals)
      ivs.push_back({{"kind", label_kind_name(iv.kind)}, {"start", iv.start}, {"end", iv.end}});
    arr.push_back({{"video_id", t.video_id}, {"intervals", ivs}});
  }
  return {{"format_version", kManifestVersion}, {"tracks", arr}};
}

inline std::vector<AnnotationTrack> annotations_from_json(const json& j) {
  std::vector<AnnotationTrack> out;
  for (const auto& t : j.at("tracks")) {
    AnnotationTrack track{t.at("video_id").get<std::string>(), {}};
    for (const auto& iv : t.at("intervals")) {
      Interval i{parse_label_kind(iv.at("kind").get<std::string>()),
                 iv.at("start").get<std::size_t>(), iv.at("end").get<std::size_t>()};
      if (i.kind != LabelKind::S1 && i.kind != LabelKind::A && i.kind != LabelKind::S2)
        throw Error("annotation kind must be S1, A or S2");
      if (i.start > i.end) throw Error("annotation interval start exceeds end");
      track.intervals.push_back(i);
    }
    out.push_back(std::move(track));
  }
  return out;
}

inline void write_annotations(const fs::path& path, std::span<const AnnotationTrack> tracks) {
  write_atomic(path, annotations_to_json(tracks).dump(2) + "\n");
}

inline std::vector<AnnotationTrack> read_annotations(const fs::path& path) {
  try {
    return annotations_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string id;
  std::size_t label = 0;
  double fps = 1.0;
  std::size_t num_frames = 0;
  std::string feature_file;  // relative to the manifest directory
  std::string split = "train";
};

struct DatasetManifest {
  std::uint32_t format_version = kManifestVersion;
  CategoryCatalog catalog;
  std::vector<ManifestEntry> videos;
  std::string annotations;  // relative path, may be empty
};

inline json manifest_to_json(const DatasetManifest& m) {
  json vids = json::array();
  for (const auto& v : m.videos)
    vids.push_back({{"id", v.id},
                    {"label", v.label},
                    {"fps", v.fps},
                    {"num_frames", v.num_frames},
                    {"feature_file", v.feature_file},
                    {"split", v.split}});
  json j = {{"format_version", m.format_version},
            {"catalog", catalog_to_json(m.catalog)},
            {"videos", vids}};
  if (!m.annotations.empty()) j["annotations"] = m.annotations;
  return j;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m;
  try {
    const json j = json::parse(read_file(path));
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kManifestVersion)
      throw Error("unsupported manifest version " + std::to_string(m.format_version));
    m.catalog = catalog_from_json(j.at("catalog"));
    for (const auto& v : j.at("videos"))
      m.videos.push_back({v.at("id").get<std::string>(), v.at("label").get<std::size_t>(),
                          v.value("fps", 1.0), v.at("num_frames").get<std::size_t>(),
                          v.at("feature_file").get<std::string>(),
                          v.value("split", std::string("train"))});
    m.annotations = j.value("annotations", std::string{});
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  write_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

/// Loads the feature files of every manifest entry (optionally one split).
/// Header frame counts must agree with the manifest.
inline std::vector<VideoFeatures> load_videos(const fs::path& manifest_path,
                                              const DatasetManifest& m,
                                              std::string_view split = {}) {
  const fs::path base = manifest_path.parent_path();
  std::vector<VideoFeatures> out;
  for (const auto& e : m.videos) {
    if (!split.empty() && split != "all" && e.split != split) continue;
    const fs::path file = base / e.feature_file;
    if (!fs::exists(file)) throw Error("missing feature file '" + file.string() + "'");
    VideoFeatures v{e.id, e.label, e.fps, read_features(file)};
    if (v.num_frames() != e.num_frames)
      throw Error(file.string() + ": dimension mismatch vs manifest (" +
                  std::to_string(v.num_frames()) + " frames, manifest says " +
                  std::to_string(e.num_frames) + ")");
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline std::string encode_checkpoint(const ModelParams& p) {
  std::string out;
  out.append("MTSC", 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.architecture));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.num_categories));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.hidden));
  const std::uint32_t flags = (p.options.state_background ? 1u : 0u) | (p.options.adapter ? 2u : 0u);
  detail::put<std::uint32_t>(out, flags);
  for_each_block(p, [&](std::span<const double> s, bool) {
    for (double v : s) detail::put<double>(out, v);
  });
  return out;
}

inline ModelParams decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  detail::Reader r(bytes, what);
  if (bytes.size() < 4 || r.take(4) != "MTSC") throw Error(what + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw Error(what + ": unsupported version " + std::to_string(version));
  const auto arch = r.get<std::uint32_t>();
  if (arch < 1 || arch > 4) throw Error(what + ": bad architecture tag");
  const auto n = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  ModelParams p = zero_params(static_cast<Architecture>(arch), n, d, h,
                              ModelOptions{(flags & 1u) != 0, (flags & 2u) != 0});
  for_each_block(p, [&](std::span<double> s, bool) {
    for (auto& v : s) v = r.get<double>();
  });
  if (r.remaining() != 0) throw Error(what + ": trailing bytes after parameters");
  return p;
}

inline fs::path sidecar_path(const fs::path& ckpt) {
  fs::path s = ckpt;
  s += ".json";
  return s;
}

inline void write_checkpoint(const fs::path& path, const ModelParams& p,
                             const CategoryCatalog& catalog) {
  if (catalog.size() != p.num_categories) throw Error("catalog size does not match model");
  write_atomic(path, encode_checkpoint(p));
  const json side = {{"format_version", kCheckpointVersion},
                     {"architecture", architecture_name(p.architecture)},
                     {"state_background", p.options.state_background},
                     {"adapter", p.options.adapter},
                     {"num_categories", p.num_categories},
                     {"dim", p.dim},
                     {"hidden", p.hidden},
                     {"catalog", catalog_to_json(catalog)}};
  write_atomic(sidecar_path(path), side.dump(2) + "\n");
}

struct Checkpoint {
  ModelParams params;
  CategoryCatalog catalog;
};

inline Checkpoint read_checkpoint(const fs::path& path) {
  Checkpoint c;
  c.params = decode_checkpoint(read_file(path), path.string());
  try {
    c.catalog = catalog_from_json(json::parse(read_file(sidecar_path(path))).at("catalog"));
  } catch (const json::exception& e) {
    throw Error(sidecar_path(path).string() + ": " + e.what());
  }
  if (c.catalog.size() != c.params.num_categories)
    throw Error("checkpoint catalog size does not match model");
  return c;
}

// ---------------------------------------------------------------------------
// JSONL helpers

inline json label_to_json(const PseudoLabel& l) {
  return {{"video_id", l.video_id},
          {"frame", l.frame},
          {"category", l.category},
          {"kind", label_kind_name(l.kind)},
          {"weight", l.weight}};
}

inline PseudoLabel label_from_json(const json& j) {
  PseudoLabel l;
  l.video_id = j.at("video_id").get<std::string>();
  l.frame = j.at("frame").get<std::size_t>();
  l.category = j.at("category").get<std::size_t>();
  l.kind = parse_label_kind(j.at("kind").get<std::string>());
  l.weight = j.at("weight").get<double>();
  return l;
}

inline json localization_to_json(const Localization& l, const CategoryCatalog& catalog) {
  return {{"video_id", l.video_id},
          {"category", l.category},
          {"category_name", catalog[l.category].name},
          {"s1_frame", l.s1_frame},
          {"action_frame", l.action_frame},
          {"s2_frame", l.s2_frame},
          {"score", l.score}};
}

inline std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

inline std::string pca_to_csv(std::span<const PcaPoint> points) {
  std::ostringstream out;
  out.precision(17);
  out << "video_id,label,pc1,pc2\n";
  for (const auto& p : points) out << p.video_id << ',' << p.label << ',' << p.pc1 << ',' << p.pc2 << '\n';
  return out.str();
}

}  // namespace statechange::io

#endif  // STATECHANGE_IO_HPP
