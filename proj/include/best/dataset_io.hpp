#pragma once

// Line-delimited pose dataset files.
//
// Each line holds one sample:
//   {"id": "s0", "label": 3, "frames": [[[x, y, c], ... 49 joints], ... frames]}
// `label` may be omitted or null. A sidecar `<file>.manifest.json` carries
//   {"num_classes": N, "class_names": [...], "layout": "raw" | "normalized"}
// Raw layouts hold pixel coordinates and detector confidences and are
// cropped on load. Normalized layouts hold unit-square coordinates with
// c = 1 for valid parts and c = 0 for zero-filled parts.

#include "best/error.hpp"
#include "best/pose.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace best {

enum class Layout { automatic, raw, normalized };

struct PoseSchema {
  Layout layout = Layout::automatic;
  CropOptions crop{};
};

inline std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
  return dataset.string() + ".manifest.json";
}

inline Layout parse_layout(const std::string& s) {
  if (s == "raw") return Layout::raw;
  if (s == "normalized") return Layout::normalized;
  throw Error(ErrorKind::schema, "unknown dataset layout '" + s + "'");
}

namespace detail {

inline RawPoseFrame parse_frame(const nlohmann::json& frame, std::size_t record, std::size_t t, const std::string& id) {
  auto where = [&] { return "record " + std::to_string(record) + " ('" + id + "') frame " + std::to_string(t); };
  if (!frame.is_array()) throw Error(ErrorKind::data, where() + ": frame is not an array");
  if (frame.size() != static_cast<std::size_t>(kTotalJoints))
    throw Error(ErrorKind::schema, where() + ": expected " + std::to_string(kTotalJoints) + " joints, found " +
                                       std::to_string(frame.size()));
  RawPoseFrame raw;
  for (std::size_t j = 0; j < frame.size(); ++j) {
    const auto& joint = frame[j];
    if (!joint.is_array() || joint.size() != 3 || !joint[0].is_number() || !joint[1].is_number() ||
        !joint[2].is_number())
      throw Error(ErrorKind::data, where() + ": joint " + std::to_string(j) + " is not [x, y, c]");
    raw.joints[j] = {joint[0].get<double>(), joint[1].get<double>(), joint[2].get<double>()};
  }
  try {
    validate(raw);
  } catch (const Error& e) {
    throw Error(ErrorKind::schema, where() + ": " + e.what());
  }
  return raw;
}

inline PoseTripletUnit from_normalized(const RawPoseFrame& raw) {
  PoseTripletUnit unit;
  for (Part p : kParts) {
    auto src = raw.part(p);
    auto dst = unit.part(p);
    bool valid = false;
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] = {src[i].x, src[i].y};
      valid = valid || src[i].confidence > 0.0;
    }
    unit.part_valid[static_cast<std::size_t>(index(p))] = valid;
  }
  return unit;
}

}  // namespace detail

inline PoseDataset load_pose_dataset(const std::filesystem::path& path, const PoseSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::data, "cannot open dataset " + path.string());

  PoseDataset ds;
  Layout layout = schema.layout;
  bool have_manifest = false;
  if (std::ifstream mf(manifest_path(path)); mf) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::data, "malformed manifest " + manifest_path(path).string() + ": " + e.what());
    }
    have_manifest = true;
    ds.num_classes = m.value("num_classes", 0);
    ds.class_names = m.value("class_names", std::vector<std::string>{});
    if (m.contains("layout")) {
      const Layout declared = parse_layout(m["layout"].get<std::string>());
      if (layout == Layout::automatic) layout = declared;
      else if (layout != declared) throw Error(ErrorKind::schema, "manifest layout disagrees with requested schema");
    }
  }
  if (layout == Layout::automatic) layout = Layout::raw;

  std::string line;
  std::size_t record = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::data, "record " + std::to_string(record) + ": malformed record: " + e.what());
    }
    if (!j.is_object() || !j.contains("frames") || !j["frames"].is_array())
      throw Error(ErrorKind::data, "record " + std::to_string(record) + ": missing 'frames' array");
    PoseSequence seq;
    seq.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : std::to_string(record);
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer())
        throw Error(ErrorKind::data, "record " + std::to_string(record) + ": label is not an integer");
      seq.label = j["label"].get<int>();
      max_label = std::max(max_label, *seq.label);
      if (*seq.label < 0) throw Error(ErrorKind::data, "record " + std::to_string(record) + ": negative label");
    }
    const auto& frames = j["frames"];
    if (frames.empty()) throw Error(ErrorKind::data, "record " + std::to_string(record) + ": sequence has no frames");
    seq.frames.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
      const RawPoseFrame raw = detail::parse_frame(frames[t], record, t, seq.id);
      seq.frames.push_back(layout == Layout::raw ? crop_and_rescale(raw, schema.crop) : detail::from_normalized(raw));
    }
    ds.sequences.push_back(std::move(seq));
    ++record;
  }
  if (ds.sequences.empty()) throw Error(ErrorKind::data, "dataset " + path.string() + " is empty");
  if (!have_manifest || ds.num_classes == 0) ds.num_classes = max_label + 1;
  if (max_label >= ds.num_classes)
    throw Error(ErrorKind::data, "label " + std::to_string(max_label) + " outside [0, " +
                                     std::to_string(ds.num_classes) + ")");
  if (ds.class_names.empty())
    for (int c = 0; c < ds.num_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  return ds;
}

/// Writes the normalized layout plus its manifest.
inline void write_dataset(const PoseDataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::data, "cannot write dataset " + path.string());
  for (const auto& seq : ds.sequences) {
    nlohmann::json rec;
    rec["id"] = seq.id;
    rec["label"] = seq.label ? nlohmann::json(*seq.label) : nlohmann::json(nullptr);
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : seq.frames) {
      nlohmann::json joints = nlohmann::json::array();
      for (Part p : {Part::body, Part::left, Part::right}) {
        const double c = f.valid(p) ? 1.0 : 0.0;
        for (const auto& pt : f.part(p)) joints.push_back({pt.x, pt.y, c});
      }
      frames.push_back(std::move(joints));
    }
    rec["frames"] = std::move(frames);
    out << rec.dump() << '\n';
  }
  std::ofstream mf(manifest_path(path));
  nlohmann::json m{{"num_classes", ds.num_classes}, {"class_names", ds.class_names}, {"layout", "normalized"}};
  mf << m.dump(2) << '\n';
}

}  // namespace best
