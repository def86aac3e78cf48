// tsav: command-line front end for the two-stream affect pipeline.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "tsav/pipeline.hpp"
#include "tsav/synth.hpp"

namespace fs = std::filesystem;
using namespace tsav;

namespace {

enum Exit { kOk = 0, kStageFailure = 1, kConfigError = 2 };

struct CommonFlags {
  std::string config;
  std::string corpus;
  std::string out;
  std::string weights;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> filter;
  std::optional<std::string> pseudo;
  std::optional<int> bins;
  std::optional<int> eval_stride;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--corpus", f.corpus, "corpus root with annotations/, landmarks/, frames/, audio/");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--weights", f.weights, "weight manifest (.json); default generates fixture weights");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--filter", f.filter, "label filter")->check(CLI::IsMember({"on", "off"}));
  app->add_option("--pseudo", f.pseudo, "pseudo-label policy")->check(CLI::IsMember({"none", "valence", "va", "va+ex"}));
  app->add_option("--bins", f.bins, "histogram bins per axis")->check(CLI::PositiveNumber);
  app->add_option("--eval-stride", f.eval_stride, "predict every n-th frame")->check(CLI::PositiveNumber);
}

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

// Config file first, flags on top.
PipelineConfig resolve(const CommonFlags& f) {
  PipelineConfig cfg;
  const auto j = load_config_json(f.config);
  cfg = pipeline_config_from_json(j, cfg, f.config.empty() ? fs::path{} : fs::path(f.config).parent_path());
  if (!f.corpus.empty()) cfg.set_corpus(f.corpus);
  if (!f.out.empty()) cfg.output = f.out;
  if (!f.weights.empty()) cfg.weights = f.weights;
  if (f.seed) cfg.seed = *f.seed;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.filter) cfg.filter = *f.filter == "on";
  if (f.pseudo) cfg.pseudo = *parse_pseudo_policy(*f.pseudo);
  if (f.bins) cfg.bins = *f.bins;
  if (f.eval_stride) cfg.eval_stride = *f.eval_stride;
  if (cfg.annotations.empty()) throw ConfigError("no corpus given (use --corpus or \"corpus\" in the config)");
  cfg.check();
  return cfg;
}

std::vector<std::string> corpus_videos(const PipelineConfig& cfg) {
  return run_stage("parse", [&] { return list_annotated_videos(cfg.annotations); });
}

int cmd_labels(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto s = label_stage(cfg);
  write_label_artifacts(s, cfg, cfg.output);
  std::cout << dump_json({{"raw", to_json(s.raw)}, {"filter", to_json(s.filter)}, {"final", to_json(s.index.counts())}});
  return kOk;
}

int cmd_audio(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto videos = corpus_videos(cfg);
  parallel_for(videos.size(), cfg.jobs, [&](std::size_t v) {
    const auto mel = audio_for_video(cfg, videos[v]);
    write_file_atomic(cfg.output / (videos[v] + ".mels"), encode_mels(mel.frames, mel.n_mels, mel.data));
  });
  return kOk;
}

int cmd_align(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto videos = corpus_videos(cfg);
  parallel_for(videos.size(), cfg.jobs, [&](std::size_t v) { align_video(cfg, videos[v], cfg.output / videos[v]); });
  return kOk;
}

int cmd_clips(const CommonFlags& f, bool augment) {
  const auto cfg = resolve(f);
  const auto videos = corpus_videos(cfg);
  parallel_for(videos.size(), cfg.jobs, [&](std::size_t v) {
    const auto& id = videos[v];
    const auto store = align_video(cfg, id);
    Rng rng = Rng(cfg.seed).fork(100 + v);
    for (auto t : eval_anchors(store.size(), cfg.eval_stride)) {
      run_stage("clips", [&] {
        auto clip = sample_clip(store, t, cfg.clip);
        if (augment) clip = augment_clip(clip, rng);
        const auto stem = cfg.output / id / ("clip_" + frame_stem(static_cast<std::size_t>(t)));
        write_file_atomic(fs::path(stem).replace_extension(".clp"), encode_clip(clip));
        write_file_atomic(fs::path(stem).replace_extension(".json"), dump_json(clip_sidecar(id, clip, cfg.clip)));
      });
    }
  });
  return kOk;
}

int cmd_forward(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto videos = corpus_videos(cfg);
  const auto weights = load_or_generate_weights(cfg);
  for (const auto& id : videos) {
    const auto mel = audio_for_video(cfg, id);
    const auto store = align_video(cfg, id);
    const auto p = forward_video(cfg, id, store, mel, weights);
    write_file_atomic(cfg.output / (id + ".csv"), predictions_csv(p, cfg.net));
  }
  return kOk;
}

VideoPredictions read_predictions(const fs::path& path, const std::string& id, std::size_t width) {
  VideoPredictions p{id, {}, {}};
  const auto text = read_file(path);
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    if (line_no++ == 0 || line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != width + 1) throw FormatError(path.string() + ": wrong column count", line_no);
    double v = 0;
    if (!parse_number(cells[0], v)) throw FormatError(path.string() + ": bad frame index", line_no);
    p.frames.push_back(static_cast<std::int64_t>(v));
    std::vector<double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (!parse_number(cells[i], v)) throw FormatError(path.string() + ": bad number", line_no);
      row.push_back(v);
    }
    p.outputs.push_back(std::move(row));
  }
  return p;
}

int cmd_eval(const CommonFlags& f, const std::string& predictions) {
  const auto cfg = resolve(f);
  if (predictions.empty()) throw ConfigError("eval needs --predictions");
  const auto labels = label_stage(cfg);
  std::vector<VideoPredictions> preds;
  run_stage("eval", [&] {
    for (const auto& [id, recs] : labels.index.videos()) {
      const auto p = fs::path(predictions) / (id + ".csv");
      if (fs::exists(p)) preds.push_back(read_predictions(p, id, static_cast<std::size_t>(cfg.net.head_width())));
    }
  });
  const auto ev = run_stage("eval", [&] { return evaluate_predictions(preds, labels.index, cfg.net); });
  json j = {{"metrics", to_json(ev.metrics)}, {"loss", ev.loss ? to_json(*ev.loss) : to_json(LossBreakdown{})}};
  j["metrics"]["scored_frames"] = ev.scored_frames;
  write_file_atomic(cfg.output / "eval.json", dump_json(j));
  std::cout << dump_json(j);
  return kOk;
}

int cmd_run(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const auto s = run_pipeline(cfg);
  const auto& r = s.report;
  std::cout << "filter: " << r["filter"].dump() << "\n"
            << "final counts: " << r["counts"]["final"].dump() << "\n"
            << "ex criterion " << r["evaluation"]["ex_criterion"] << ", au criterion " << r["evaluation"]["au_criterion"]
            << ", ccc mean " << r["evaluation"]["ccc_mean"] << "\n"
            << "report: " << s.report_path.string() << "\n";
  return kOk;
}

int cmd_synth(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<int> videos, std::optional<int> frames, std::optional<std::size_t> contradictions, int jobs) {
  if (out.empty()) throw ConfigError("synth needs --out");
  SyntheticSpec spec;
  try {
    spec = synthetic_spec_from_json(load_config_json(config));
    if (seed) spec.seed = *seed;
    if (videos) spec.n_videos = *videos;
    if (frames) spec.frames_per_video = *frames;
    if (contradictions) spec.contradictions = spread_contradictions(*contradictions);
    spec.check();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto m = run_stage("synth", [&] { return synth_dataset(spec, out, jobs); });
  std::cout << "wrote " << m.videos.size() << " videos, " << m.frames << " frames, " << m.contradictions.size()
            << " injected contradictions to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stream aural-visual affect pipeline"};
  app.require_subcommand(1);

  CommonFlags labels_f, audio_f, align_f, clips_f, forward_f, eval_f, run_f;
  add_common(app.add_subcommand("labels", "validate, filter, histogram and pseudo-label annotations"), labels_f);
  add_common(app.add_subcommand("audio", "resample audio and write mel spectrograms"), audio_f);
  add_common(app.add_subcommand("align", "align faces and render landmark masks"), align_f);
  auto* clips = app.add_subcommand("clips", "sample dilated 4-channel clips");
  add_common(clips, clips_f);
  bool augment = false;
  clips->add_flag("--augment", augment, "apply training augmentation");
  add_common(app.add_subcommand("forward", "run the two-stream network with fixture weights"), forward_f);
  auto* eval = app.add_subcommand("eval", "score predictions against labels");
  add_common(eval, eval_f);
  std::string predictions;
  eval->add_option("--predictions", predictions, "directory of <video>.csv predictions");
  add_common(app.add_subcommand("run", "full pipeline"), run_f);

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_videos, synth_frames;
  std::optional<std::size_t> synth_contra;
  int synth_jobs = 1;
  synth->add_option("--config", synth_config, "JSON synthetic spec");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--videos", synth_videos, "number of videos")->check(CLI::NonNegativeNumber);
  synth->add_option("--frames", synth_frames, "frames per video")->check(CLI::NonNegativeNumber);
  synth->add_option("--contradictions", synth_contra, "injected contradictions, spread over the four rules");
  synth->add_option("--jobs", synth_jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth")
      return cmd_synth(synth_config, synth_out, synth_seed, synth_videos, synth_frames, synth_contra, synth_jobs);
    if (name == "labels") return cmd_labels(labels_f);
    if (name == "audio") return cmd_audio(audio_f);
    if (name == "align") return cmd_align(align_f);
    if (name == "clips") return cmd_clips(clips_f, augment);
    if (name == "forward") return cmd_forward(forward_f);
    if (name == "eval") return cmd_eval(eval_f, predictions);
    return cmd_run(run_f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.stage << " failed: " << e.what() << "\n";
    return kStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
}
