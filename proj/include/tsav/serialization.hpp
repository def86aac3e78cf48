// JSON encodings of reports, sidecars and the weight manifest index.
#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"  // nlohmann/json (vendor/)

#include "tsav/annotations.hpp"
#include "tsav/clipper.hpp"
#include "tsav/common.hpp"
#include "tsav/labelfusion.hpp"
#include "tsav/metrics.hpp"
#include "tsav/twostream.hpp"

namespace tsav {

using json = nlohmann::ordered_json;

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline json to_json(const FilterReport& r) {
  return {{"removed_invalid", r.removed_invalid},
          {"removed_happy_neg", r.removed_happy_neg},
          {"removed_sad_pos", r.removed_sad_pos},
          {"removed_neutral_highnorm", r.removed_neutral_highnorm},
          {"kept", r.kept},
          {"total", r.total()}};
}

inline json to_json(const TaskCounts& c) {
  return {{"records", c.records}, {"va", c.va},         {"ex", c.ex},
          {"au", c.au},           {"soft_ex", c.soft_ex}, {"pseudo_va", c.pseudo_va},
          {"excluded", c.excluded}};
}

inline json histogram_summary(const VaHistogramSet& h) {
  json totals = json::object();
  std::uint64_t all = 0;
  for (int e = 0; e < kNumExpressions; ++e) {
    const auto ex = static_cast<Expression>(e);
    totals[std::string(expression_name(ex))] = h.total(ex);
    all += h.total(ex);
  }
  return {{"bins_per_axis", h.bins()}, {"range", {-1.0, 1.0}}, {"totals", totals}, {"total", all}};
}

inline json to_json(const EvaluationReport& r) {
  return {{"ccc_v", r.ccc_v},
          {"ccc_a", r.ccc_a},
          {"ccc_mean", r.ccc_mean},
          {"ex_f1", r.ex_f1},
          {"ex_macro_f1", r.ex_macro_f1},
          {"ex_accuracy", r.ex_accuracy},
          {"ex_criterion", r.ex_criterion},
          {"au_f1", r.au_f1},
          {"au_mean_f1", r.au_mean_f1},
          {"au_accuracy", r.au_accuracy},
          {"au_criterion", r.au_criterion_value},
          {"counts", {{"valence", r.n_v}, {"arousal", r.n_a}, {"ex", r.n_ex}, {"au", r.n_au}}}};
}

inline json to_json(const LossBreakdown& l) {
  return {{"l_ex", l.l_ex}, {"l_au", l.l_au}, {"l_va", l.l_va}, {"total", l.total()},
          {"n_ex", l.n_ex}, {"n_au", l.n_au}, {"n_v", l.n_v},   {"n_a", l.n_a}};
}

inline json to_json(const ClipConfig& c) {
  return {{"length", c.length}, {"dilation", c.dilation}, {"height", c.height}, {"width", c.width}, {"fps", c.fps}};
}

inline ClipConfig clip_config_from_json(const json& j, ClipConfig c = {}) {
  c.length = j.value("length", c.length);
  c.dilation = j.value("dilation", c.dilation);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.fps = j.value("fps", c.fps);
  return c;
}

inline json to_json(const MelConfig& m) {
  return {{"n_mels", m.n_mels},
          {"window_seconds", m.window_seconds},
          {"stride_seconds", m.stride_seconds},
          {"n_fft", m.n_fft},
          {"sample_rate", m.sample_rate}};
}

inline MelConfig mel_config_from_json(const json& j, MelConfig m = {}) {
  m.n_mels = j.value("n_mels", m.n_mels);
  m.window_seconds = j.value("window_seconds", m.window_seconds);
  m.stride_seconds = j.value("stride_seconds", m.stride_seconds);
  m.n_fft = j.value("n_fft", m.n_fft);
  m.sample_rate = j.value("sample_rate", m.sample_rate);
  return m;
}

inline json to_json(const TwoStreamConfig& c) {
  return {{"visual_in_channels", c.visual_in_channels},
          {"aural_in_channels", c.aural_in_channels},
          {"base_channels", c.base_channels},
          {"visual_blocks", c.visual_blocks},
          {"aural_blocks", c.aural_blocks},
          {"au_count", c.au_count}};
}

inline TwoStreamConfig two_stream_config_from_json(const json& j, TwoStreamConfig c = {}) {
  c.visual_in_channels = j.value("visual_in_channels", c.visual_in_channels);
  c.aural_in_channels = j.value("aural_in_channels", c.aural_in_channels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.visual_blocks = j.value("visual_blocks", c.visual_blocks);
  c.aural_blocks = j.value("aural_blocks", c.aural_blocks);
  c.au_count = j.value("au_count", c.au_count);
  return c;
}

inline json clip_sidecar(const std::string& video_id, const Clip& clip, const ClipConfig& cfg) {
  std::vector<std::int64_t> idx = clip_frame_indices(clip.anchor, cfg);
  return {{"video_id", video_id}, {"anchor", clip.anchor}, {"frame_indices", idx}, {"config", to_json(cfg)}};
}

// ---------------------------------------------------------------------------
// Weight manifest: <stem>.json index + <stem>.bin payload

inline json manifest_index(const WeightManifest& m, const TwoStreamConfig& cfg, const std::string& blob_file) {
  json blobs = json::array();
  std::size_t offset = 0;
  for (const auto& b : m.blobs()) {
    blobs.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
    offset += b.values.size() * 4;
  }
  return {{"format", "f32-le"}, {"seed", m.seed}, {"blob_file", blob_file}, {"config", to_json(cfg)}, {"blobs", blobs}};
}

inline void write_manifest(const std::filesystem::path& index_path, const WeightManifest& m, const TwoStreamConfig& cfg) {
  auto blob_path = index_path;
  blob_path.replace_extension(".bin");
  write_file_atomic(blob_path, encode_weight_blob(m));
  write_file_atomic(index_path, dump_json(manifest_index(m, cfg, blob_path.filename().string())));
}

struct LoadedManifest {
  WeightManifest weights;
  TwoStreamConfig config;
};

inline LoadedManifest read_manifest(const std::filesystem::path& index_path) {
  json idx;
  try {
    idx = json::parse(read_file(index_path));
  } catch (const json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
  LoadedManifest out;
  out.config = two_stream_config_from_json(idx.value("config", json::object()));
  out.weights.seed = idx.value("seed", std::uint64_t{0});
  const auto blob_bytes = read_file(index_path.parent_path() / idx.at("blob_file").get<std::string>());
  for (const auto& b : idx.at("blobs")) {
    WeightBlob blob{b.at("name").get<std::string>(), b.at("shape").get<std::vector<std::size_t>>(), {}};
    const auto offset = b.at("offset").get<std::size_t>();
    const auto n = Tensor::element_count(blob.shape);
    if (offset + n * 4 > blob_bytes.size()) throw FormatError("blob " + blob.name + " runs past end of weight file");
    ByteReader r(std::string_view(blob_bytes).substr(offset, n * 4));
    blob.values.resize(n);
    for (auto& v : blob.values) v = r.f32();
    out.weights.add(std::move(blob));
  }
  out.weights.validate(out.config);
  return out;
}

}  // namespace tsav
