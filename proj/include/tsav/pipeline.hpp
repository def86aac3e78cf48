// End-to-end runs: labels -> audio -> alignment -> clips -> forward -> eval.
// Every stage writes its artifacts under the output directory; the run
// report carries counts, metrics and a content hash per artifact.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsav/annotations.hpp"
#include "tsav/audiodsp.hpp"
#include "tsav/clipper.hpp"
#include "tsav/common.hpp"
#include "tsav/geometry.hpp"
#include "tsav/image.hpp"
#include "tsav/labelfusion.hpp"
#include "tsav/metrics.hpp"
#include "tsav/parallel.hpp"
#include "tsav/serialization.hpp"
#include "tsav/twostream.hpp"

namespace tsav {

namespace fs = std::filesystem;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Failure inside a named stage; the message names the file or frame.
struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& detail)
      : std::runtime_error(stage_name + ": " + detail), stage(std::move(stage_name)) {}
  std::string stage;
};

struct PipelineConfig {
  fs::path annotations;
  fs::path landmarks;
  fs::path frames;
  fs::path audio;
  fs::path output;
  fs::path weights;  // empty: generate fixture weights from the seed

  MelConfig mel;
  ClipConfig clip;
  TwoStreamConfig net;
  PseudoPolicy pseudo = PseudoPolicy::va_ex;
  bool filter = true;
  int bins = kDefaultHistogramBins;
  std::uint64_t seed = 0;
  int jobs = 1;
  int eval_stride = 10;
  double sub_window_seconds = 10.0;

  /// Standard corpus layout as written by synth_dataset.
  void set_corpus(const fs::path& root) {
    annotations = root / "annotations";
    landmarks = root / "landmarks";
    frames = root / "frames";
    audio = root / "audio";
  }

  void check() const {
    try {
      mel.check();
      clip.check();
      net.check();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (bins < 1) throw ConfigError("bins must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (eval_stride < 1) throw ConfigError("eval_stride must be >= 1");
    if (!(sub_window_seconds > 0)) throw ConfigError("sub_window_seconds must be positive");
    if (output.empty()) throw ConfigError("output path is required");
  }
};

inline json to_json(const PipelineConfig& c) {
  return {{"mel", to_json(c.mel)},
          {"clip", to_json(c.clip)},
          {"net", to_json(c.net)},
          {"pseudo", pseudo_policy_name(c.pseudo)},
          {"filter", c.filter},
          {"bins", c.bins},
          {"seed", c.seed},
          {"eval_stride", c.eval_stride},
          {"sub_window_seconds", c.sub_window_seconds},
          {"weights", c.weights.empty() ? "fixture" : "file"}};
}

/// Overlays keys from a JSON config. Paths are resolved against `base`.
inline PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c = {}, const fs::path& base = {}) {
  try {
    auto path = [&](const char* key, fs::path& dst) {
      if (j.contains(key)) {
        fs::path p = j[key].get<std::string>();
        dst = p.is_absolute() || base.empty() ? p : base / p;
      }
    };
    if (j.contains("corpus")) {
      fs::path p = j["corpus"].get<std::string>();
      c.set_corpus(p.is_absolute() || base.empty() ? p : base / p);
    }
    path("annotations", c.annotations);
    path("landmarks", c.landmarks);
    path("frames", c.frames);
    path("audio", c.audio);
    path("output", c.output);
    path("weights", c.weights);
    if (j.contains("mel")) c.mel = mel_config_from_json(j["mel"], c.mel);
    if (j.contains("clip")) c.clip = clip_config_from_json(j["clip"], c.clip);
    if (j.contains("net")) c.net = two_stream_config_from_json(j["net"], c.net);
    if (j.contains("pseudo")) {
      const auto p = parse_pseudo_policy(j["pseudo"].get<std::string>());
      if (!p) throw ConfigError("unknown pseudo policy " + j["pseudo"].get<std::string>());
      c.pseudo = *p;
    }
    c.filter = j.value("filter", c.filter);
    c.bins = j.value("bins", c.bins);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.eval_stride = j.value("eval_stride", c.eval_stride);
    c.sub_window_seconds = j.value("sub_window_seconds", c.sub_window_seconds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Stage helpers

template <typename F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Sorted (relative path, size, hash) of every regular file under `root`.
inline json artifact_listing(const fs::path& root, const fs::path& skip = {}) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path() != skip) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json out = json::array();
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    out.push_back({{"path", fs::relative(f, root).generic_string()}, {"bytes", bytes.size()}, {"fnv1a", fnv1a_hex(bytes)}});
  }
  return out;
}

// -- labels -----------------------------------------------------------------

struct LabelStage {
  TaskCounts raw;
  FilterReport filter;
  std::vector<FilteredFrame> removed;
  VaHistogramSet hist{kDefaultHistogramBins};
  PseudoStats pseudo;
  DatasetIndex index;  // final: filtered and pseudo-labeled
};

inline std::string records_csv(const DatasetIndex& idx) {
  std::string out = "video_id,frame,valence,arousal,expression,au,soft_ex,pseudo_valence,pseudo_arousal,excluded\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  idx.for_each([&](const FrameRecord& r) {
    out += r.video_id + "," + std::to_string(r.frame_index) + ",";
    out += (r.va ? format_number(r.va->valence) : "") + "," + (r.va ? format_number(r.va->arousal) : "") + ",";
    out += r.ex ? std::string(expression_name(*r.ex)) : "";
    out += ",";
    if (r.au)
      for (auto b : *r.au) out += b ? '1' : '0';
    out += ",";
    if (r.soft_ex)
      for (std::size_t i = 0; i < r.soft_ex->size(); ++i) out += (i ? ";" : "") + format_number((*r.soft_ex)[i]);
    out += ",";
    out += r.pseudo_va ? opt(r.pseudo_va->valence) + "," + opt(r.pseudo_va->arousal) : ",";
    out += r.excluded ? ",1\n" : ",0\n";
  });
  return out;
}

inline json histograms_json(const VaHistogramSet& h) {
  json grids = json::object();
  for (int e = 0; e < kNumExpressions; ++e) {
    const auto ex = static_cast<Expression>(e);
    grids[std::string(expression_name(ex))] = h.grid(ex);
  }
  auto j = histogram_summary(h);
  j["layout"] = "row-major [valence_bin][arousal_bin]";
  j["grids"] = grids;
  return j;
}

inline LabelStage label_stage(const PipelineConfig& cfg) {
  LabelStage s;
  const auto raw = run_stage("parse", [&] {
    if (!fs::is_directory(cfg.annotations)) throw IoError("annotation directory not found: " + cfg.annotations.string());
    return load_dataset(cfg.annotations, static_cast<std::size_t>(cfg.net.au_count));
  });
  s.raw = raw.counts();
  DatasetIndex filtered = raw;
  run_stage("filter", [&] {
    if (cfg.filter) {
      auto out = filter_dataset(raw);
      filtered = std::move(out.index);
      s.filter = out.report;
      s.removed = std::move(out.removed);
    } else {
      s.filter.kept = raw.size();
    }
  });
  s.hist = run_stage("histograms", [&] { return build_va_histograms(filtered, cfg.bins); });
  s.index = run_stage("pseudo", [&] {
    Rng rng = Rng(cfg.seed).fork(1);
    return apply_pseudo_policy(filtered, s.hist, cfg.pseudo, rng, EmptyBinMode::skip, &s.pseudo);
  });
  return s;
}

inline json to_json(const PseudoStats& p, PseudoPolicy policy) {
  return {{"policy", pseudo_policy_name(policy)},
          {"pseudo_va", p.pseudo_va},
          {"soft_ex", p.soft_ex},
          {"skipped_empty", p.skipped_empty}};
}

inline void write_label_artifacts(const LabelStage& s, const PipelineConfig& cfg, const fs::path& dir) {
  run_stage("labels-write", [&] {
    std::string removed = "video_id,frame,rule\n";
    for (const auto& r : s.removed)
      removed += r.video_id + "," + std::to_string(r.frame_index) + "," + std::string(filter_reason_name(r.reason)) + "\n";
    write_file_atomic(dir / "removed.csv", removed);
    json fr = to_json(s.filter);
    fr["enabled"] = cfg.filter;
    write_file_atomic(dir / "filter_report.json", dump_json(fr));
    write_file_atomic(dir / "histograms.txt", histogram_text(s.hist));
    write_file_atomic(dir / "histograms.json", dump_json(histograms_json(s.hist)));
    write_file_atomic(dir / "records.csv", records_csv(s.index));
    write_file_atomic(dir / "counts.json",
                      dump_json({{"raw", to_json(s.raw)},
                                 {"final", to_json(s.index.counts())},
                                 {"pseudo", to_json(s.pseudo, cfg.pseudo)}}));
  });
}

// -- audio ------------------------------------------------------------------

inline MelSpectrogram audio_for_video(const PipelineConfig& cfg, const std::string& id) {
  const auto path = cfg.audio / (id + ".wav");
  try {
    auto wave = read_wav(path);
    if (wave.sample_rate != cfg.mel.sample_rate) wave = resample(wave, cfg.mel.sample_rate);
    return mel_spectrogram(wave, cfg.mel);
  } catch (const std::exception& e) {
    throw StageError("audio", path.string() + ": " + e.what());
  }
}

// -- alignment --------------------------------------------------------------

/// Frames 0..n-1 of a video, where n is the number of landmark files.
inline std::size_t count_video_frames(const PipelineConfig& cfg, const std::string& id) {
  const auto dir = cfg.landmarks / id;
  if (!fs::is_directory(dir)) throw StageError("align", "no landmark directory " + dir.string());
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") ++n;
  return n;
}

inline std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

/// Aligns every frame of a video; when `out_dir` is set, writes
/// face_XXXXX.ppm and mask_XXXXX.pgm there.
inline FrameStore align_video(const PipelineConfig& cfg, const std::string& id, const fs::path& out_dir = {}) {
  const auto n = count_video_frames(cfg, id);
  std::vector<Image> faces(n), masks(n);
  for (std::size_t f = 0; f < n; ++f) {
    const auto lm_path = cfg.landmarks / id / (frame_stem(f) + ".csv");
    const auto img_path = cfg.frames / id / (frame_stem(f) + ".ppm");
    try {
      const auto lm = read_landmarks(lm_path);
      const auto src = read_pnm(img_path);
      auto aligned = align_frame(src, lm, MaskSpec::standard(), kDefaultTemplate5, cfg.clip.height);
      if (cfg.clip.width != cfg.clip.height) throw ShapeError("aligned frames are square; clip width must equal height");
      faces[f] = std::move(aligned.face);
      masks[f] = std::move(aligned.mask);
    } catch (const std::exception& e) {
      throw StageError("align", id + " frame " + std::to_string(f) + " (" + img_path.string() + "): " + e.what());
    }
    if (!out_dir.empty()) {
      write_pnm(out_dir / ("face_" + frame_stem(f) + ".ppm"), faces[f]);
      write_pnm(out_dir / ("mask_" + frame_stem(f) + ".pgm"), masks[f]);
    }
  }
  return FrameStore(std::move(faces), std::move(masks));
}

// -- forward ----------------------------------------------------------------

inline std::vector<std::int64_t> eval_anchors(std::size_t frames, int stride) {
  std::vector<std::int64_t> t;
  for (std::size_t f = 0; f < frames; f += static_cast<std::size_t>(stride)) t.push_back(static_cast<std::int64_t>(f));
  return t;
}

inline WeightManifest load_or_generate_weights(const PipelineConfig& cfg) {
  return run_stage("weights", [&] {
    if (cfg.weights.empty()) return generate_weights(cfg.net, cfg.seed);
    auto m = read_manifest(cfg.weights);
    if (!(to_json(m.config) == to_json(cfg.net))) throw ConfigError("weight manifest config differs from net config");
    return std::move(m.weights);
  });
}

struct VideoPredictions {
  std::string video_id;
  std::vector<std::int64_t> frames;
  std::vector<std::vector<double>> outputs;
};

inline std::string predictions_csv(const VideoPredictions& p, const TwoStreamConfig& net) {
  std::string out = "frame,valence,arousal";
  for (int e = 0; e < kNumExpressions; ++e) out += ",ex_" + std::string(expression_name(static_cast<Expression>(e)));
  for (int k = 0; k < net.au_count; ++k) out += ",au_" + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < p.frames.size(); ++i) {
    out += std::to_string(p.frames[i]);
    for (double v : p.outputs[i]) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

inline VideoPredictions forward_video(const PipelineConfig& cfg, const std::string& id, const FrameStore& store,
                                      const MelSpectrogram& mel, const WeightManifest& w) {
  VideoPredictions p{id, eval_anchors(store.size(), cfg.eval_stride), {}};
  p.outputs.resize(p.frames.size());
  parallel_for(p.frames.size(), cfg.jobs, [&](std::size_t i) {
    try {
      const auto clip = sample_clip(store, p.frames[i], cfg.clip);
      const auto sub = extract_subspectrogram(mel, p.frames[i], cfg.clip.fps, cfg.sub_window_seconds);
      p.outputs[i] = two_stream_forward(clip, sub, cfg.net, w);
    } catch (const std::exception& e) {
      throw StageError("forward", id + " frame " + std::to_string(p.frames[i]) + ": " + e.what());
    }
  });
  return p;
}

// -- evaluation -------------------------------------------------------------

struct EvalStage {
  EvaluationReport metrics;
  std::optional<LossBreakdown> loss;
  std::size_t scored_frames = 0;
};

/// Scores predictions against real labels of non-excluded frames; the loss
/// uses the training targets (pseudo labels included) of the same frames.
inline EvalStage evaluate_predictions(const std::vector<VideoPredictions>& preds, const DatasetIndex& index,
                                      const TwoStreamConfig& net) {
  BatchPredictions bp;
  BatchTargets eval_t, train_t;
  for (const auto& vp : preds) {
    const auto it = index.videos().find(vp.video_id);
    if (it == index.videos().end()) continue;
    const auto& recs = it->second;
    for (std::size_t i = 0; i < vp.frames.size(); ++i) {
      const auto f = static_cast<std::size_t>(vp.frames[i]);
      if (f >= recs.size() || recs[f].excluded) continue;
      bp.push_back(prediction_from_vector(vp.outputs[i], static_cast<std::size_t>(net.au_count)));
      eval_t.push_back(label_target(recs[f]));
      train_t.push_back(target_from_record(recs[f]));
    }
  }
  EvalStage s;
  s.scored_frames = bp.size();
  s.metrics = evaluate(bp, eval_t);
  if (!bp.empty()) s.loss = multitask_loss(bp, train_t).loss;
  return s;
}

// ---------------------------------------------------------------------------
// Full run

struct RunSummary {
  json report;
  fs::path report_path;
};

inline RunSummary run_pipeline(const PipelineConfig& cfg) {
  cfg.check();
  const fs::path out = cfg.output;
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out)))
    throw ConfigError("output directory exists and is not empty: " + out.string());
  fs::create_directories(out);

  auto labels = label_stage(cfg);
  write_label_artifacts(labels, cfg, out / "labels");

  std::vector<std::string> videos;
  for (const auto& [id, recs] : labels.index.videos()) videos.push_back(id);

  const auto weights = load_or_generate_weights(cfg);
  run_stage("weights", [&] { write_manifest(out / "weights" / "fixture.json", weights, cfg.net); });

  std::vector<VideoPredictions> preds(videos.size());
  json video_info = json::array();
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto& id = videos[v];
    // Per-video stages run one after another; frame-level work inside
    // the forward stage is spread over the worker pool.
    const auto mel = audio_for_video(cfg, id);
    run_stage("audio", [&] { write_file_atomic(out / "audio" / (id + ".mels"), encode_mels(mel.frames, mel.n_mels, mel.data)); });
    const auto store = align_video(cfg, id, out / "aligned" / id);
    preds[v] = forward_video(cfg, id, store, mel, weights);
    run_stage("forward", [&] { write_file_atomic(out / "predictions" / (id + ".csv"), predictions_csv(preds[v], cfg.net)); });
    video_info.push_back({{"video_id", id},
                          {"frames", store.size()},
                          {"annotated_frames", labels.index.video(id).size()},
                          {"mel_frames", mel.frames},
                          {"predictions", preds[v].frames.size()}});
  }

  const auto ev = run_stage("eval", [&] { return evaluate_predictions(preds, labels.index, cfg.net); });
  json eval_json = to_json(ev.metrics);
  eval_json["scored_frames"] = ev.scored_frames;
  run_stage("eval", [&] {
    write_file_atomic(out / "eval.json", dump_json({{"metrics", eval_json},
                                                    {"loss", ev.loss ? to_json(*ev.loss) : to_json(LossBreakdown{})}}));
  });

  json filter = to_json(labels.filter);
  filter["enabled"] = cfg.filter;
  RunSummary summary;
  summary.report_path = out / "report.json";
  summary.report = {{"config", to_json(cfg)},
                    {"counts",
                     {{"raw", to_json(labels.raw)},
                      {"final", to_json(labels.index.counts())}}},
                    {"filter", filter},
                    {"pseudo", to_json(labels.pseudo, cfg.pseudo)},
                    {"histograms", histogram_summary(labels.hist)},
                    {"videos", video_info},
                    {"evaluation", eval_json},
                    {"loss", ev.loss ? to_json(*ev.loss) : to_json(LossBreakdown{})},
                    {"artifacts", artifact_listing(out)}};
  run_stage("report", [&] { write_file_atomic(summary.report_path, dump_json(summary.report)); });
  return summary;
}

}  // namespace tsav
