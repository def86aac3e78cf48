#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <set>
#include <tuple>

#include "test_util.hpp"
#include "tsav/pipeline.hpp"
#include "tsav/synth.hpp"

using namespace tsav;

#ifndef TSAV_CLI_PATH
#error "TSAV_CLI_PATH must be defined by the build"
#endif

namespace {

SyntheticSpec small_spec(int videos, int frames, std::size_t contradictions, std::uint64_t seed) {
  SyntheticSpec s;
  s.n_videos = videos;
  s.frames_per_video = frames;
  s.contradictions = spread_contradictions(contradictions);
  s.image_size = 64;
  s.seed = seed;
  return s;
}

// Reduced network and clip size so a run takes well under a second.
PipelineConfig fast_config(const fs::path& corpus, const fs::path& out, std::uint64_t seed) {
  PipelineConfig c;
  c.set_corpus(corpus);
  c.output = out;
  c.seed = seed;
  c.clip.height = c.clip.width = 32;
  c.net.base_channels = 4;
  c.eval_stride = 20;
  return c;
}

using FrameKey = std::tuple<std::string, std::uint32_t, std::string>;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TSAV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Synth, CoverageMatchesFractions) {
  const auto labels = synth_labels(small_spec(10, 100, 0, 3));
  EXPECT_EQ(labels.manifest.frames, 1000u);
  EXPECT_EQ(labels.manifest.ex_labels, 590u);
  EXPECT_EQ(labels.manifest.va_labels, 750u);
  EXPECT_EQ(labels.manifest.au_labels, 500u);
}

TEST(Synth, ManifestListsEveryInjection) {
  const auto labels = synth_labels(small_spec(10, 100, 137, 4));
  const auto& c = labels.manifest.contradictions;
  ASSERT_EQ(c.size(), 137u);
  std::set<std::pair<std::string, std::uint32_t>> ids;
  std::array<std::size_t, 5> per_rule{};
  for (const auto& x : c) {
    ids.insert({x.video_id, x.frame_index});
    ++per_rule[static_cast<std::size_t>(x.rule)];
  }
  EXPECT_EQ(ids.size(), 137u);
  EXPECT_EQ(per_rule[static_cast<std::size_t>(FilterReason::kept)], 0u);
  for (auto r : {FilterReason::invalid_label, FilterReason::happy_negative_valence, FilterReason::sad_positive_valence,
                 FilterReason::neutral_high_norm})
    EXPECT_GE(per_rule[static_cast<std::size_t>(r)], 34u);
}

TEST(Synth, ZeroVideosGivesValidEmptyCorpus) {
  tsav_test::TempDir tmp;
  const auto m = synth_dataset(small_spec(0, 10, 0, 1), tmp.path() / "c");
  EXPECT_TRUE(m.videos.empty());
  const auto j = json::parse(read_file(tmp.path() / "c" / "manifest.json"));
  EXPECT_TRUE(j["videos"].empty());
  EXPECT_TRUE(j["contradictions"].empty());
}

TEST(Synth, RefusesNonEmptyOutput) {
  tsav_test::TempDir tmp;
  write_file_atomic(tmp.path() / "c" / "keep.txt", "x");
  EXPECT_ANY_THROW(synth_dataset(small_spec(1, 5, 0, 1), tmp.path() / "c"));
}

TEST(Pipeline, FilterRemovesExactlyTheInjectedFrames) {
  tsav_test::TempDir tmp;
  const auto m = synth_dataset(small_spec(3, 40, 22, 9), tmp.path() / "corpus");
  const auto s = run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "out", 9));
  std::set<FrameKey> injected, removed;
  for (const auto& c : m.contradictions)
    injected.insert({c.video_id, c.frame_index, std::string(filter_reason_name(c.rule))});
  const auto csv = read_file(tmp.path() / "out" / "labels" / "removed.csv");
  std::size_t line = 0;
  for (auto row : split(csv, '\n')) {
    if (line++ == 0 || row.empty()) continue;
    const auto f = split(row, ',');
    ASSERT_EQ(f.size(), 3u);
    removed.insert({std::string(f[0]), static_cast<std::uint32_t>(std::stoul(std::string(f[1]))), std::string(f[2])});
  }
  EXPECT_EQ(removed, injected);
  const auto& fr = s.report["filter"];
  EXPECT_EQ(fr["removed_invalid"], 6);
  EXPECT_EQ(fr["removed_happy_neg"], 6);
  EXPECT_EQ(fr["removed_sad_pos"], 5);
  EXPECT_EQ(fr["removed_neutral_highnorm"], 5);
  EXPECT_EQ(s.report["counts"]["final"]["excluded"], 22);
}

TEST(Pipeline, FilterOffAndNoPseudoKeepsRawCounts) {
  tsav_test::TempDir tmp;
  synth_dataset(small_spec(2, 30, 8, 5), tmp.path() / "corpus");
  auto cfg = fast_config(tmp.path() / "corpus", tmp.path() / "out", 5);
  cfg.filter = false;
  cfg.pseudo = PseudoPolicy::none;
  const auto s = run_pipeline(cfg);
  EXPECT_EQ(s.report["counts"]["raw"], s.report["counts"]["final"]);
  EXPECT_EQ(s.report["filter"]["enabled"], false);
}

TEST(Pipeline, SameSeedSameBytes) {
  tsav_test::TempDir tmp;
  synth_dataset(small_spec(2, 25, 6, 11), tmp.path() / "corpus");
  const auto a = run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "a", 11));
  const auto b = run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "b", 11));
  EXPECT_EQ(read_file(a.report_path), read_file(b.report_path));
  EXPECT_EQ(artifact_listing(tmp.path() / "a"), artifact_listing(tmp.path() / "b"));
  // a different seed changes the pseudo labels and weights
  const auto c = run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "c", 12));
  EXPECT_NE(read_file(a.report_path), read_file(c.report_path));
}

TEST(Pipeline, ReportSchemaStableWhenEmpty) {
  tsav_test::TempDir tmp;
  synth_dataset(small_spec(1, 12, 0, 2), tmp.path() / "corpus");
  auto cfg = fast_config(tmp.path() / "corpus", tmp.path() / "out", 2);
  cfg.pseudo = PseudoPolicy::none;
  const auto r = run_pipeline(cfg).report;
  for (const char* k : {"config", "counts", "filter", "pseudo", "histograms", "videos", "evaluation", "loss", "artifacts"})
    EXPECT_TRUE(r.contains(k)) << k;
  for (const char* k : {"removed_invalid", "removed_happy_neg", "removed_sad_pos", "removed_neutral_highnorm", "kept"})
    EXPECT_TRUE(r["filter"].contains(k)) << k;
  EXPECT_EQ(r["filter"]["removed_invalid"], 0);
  for (const char* k : {"ccc_v", "ccc_a", "ccc_mean", "ex_criterion", "au_criterion"})
    EXPECT_TRUE(r["evaluation"].contains(k)) << k;
  EXPECT_EQ(r["pseudo"]["soft_ex"], 0);
}

TEST(Pipeline, RefusesNonEmptyOutput) {
  tsav_test::TempDir tmp;
  synth_dataset(small_spec(1, 5, 0, 2), tmp.path() / "corpus");
  write_file_atomic(tmp.path() / "out" / "x", "x");
  EXPECT_THROW(run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "out", 2)), ConfigError);
}

TEST(Pipeline, StageErrorNamesTheFile) {
  tsav_test::TempDir tmp;
  synth_dataset(small_spec(1, 5, 0, 2), tmp.path() / "corpus");
  write_file_atomic(tmp.path() / "corpus" / "landmarks" / "video000" / "00003.csv", "1,2\n");
  try {
    run_pipeline(fast_config(tmp.path() / "corpus", tmp.path() / "out", 2));
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage, "align");
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos);
  }
}

TEST(Pipeline, RandomSpecsRunEndToEnd) {
  Rng rng(2024);
  for (int i = 0; i < 50; ++i) {
    tsav_test::TempDir tmp;
    auto spec = small_spec(static_cast<int>(rng.below(3)), static_cast<int>(rng.below(13)), 0, rng.below(1u << 30));
    spec.ex_coverage = rng.uniform();
    spec.va_coverage = rng.uniform();
    spec.au_coverage = rng.uniform();
    const auto labels = synth_labels(spec);
    // injections need frames carrying both EX and VA
    std::size_t both = 0;
    for (std::size_t v = 0; v < labels.ex_raw.size(); ++v)
      for (std::size_t f = 0; f < labels.ex_raw[v].size(); ++f)
        both += labels.ex_raw[v][f] != kAbsentEx && labels.va_raw[v][f][0] != kAbsentVa;
    spec.contradictions = spread_contradictions(rng.below(1 + both));
    SCOPED_TRACE(dump_json(to_json(spec)));
    synth_dataset(spec, tmp.path() / "corpus");
    auto cfg = fast_config(tmp.path() / "corpus", tmp.path() / "out", spec.seed);
    cfg.pseudo = static_cast<PseudoPolicy>(rng.below(4));
    cfg.filter = rng.bernoulli(0.5);
    cfg.eval_stride = 5;
    try {
      run_pipeline(cfg);
    } catch (const std::exception& e) {
      ADD_FAILURE() << "spec " << i << ": " << e.what();
    }
  }
}

TEST(Cli, ExitCodes) {
  tsav_test::TempDir tmp;
  const auto dir = tmp.path().string();
  EXPECT_EQ(run_cli("synth --out " + dir + "/c --videos 1 --frames 6 --seed 3"), 0);
  EXPECT_EQ(run_cli("labels --corpus " + dir + "/c --out " + dir + "/l"), 0);
  EXPECT_EQ(run_cli("labels --corpus " + dir + "/missing --out " + dir + "/l2"), 1);
  EXPECT_EQ(run_cli("labels --out " + dir + "/l3"), 2);
  EXPECT_EQ(run_cli("labels --corpus " + dir + "/c --bins 0"), 2);
  EXPECT_EQ(run_cli("labels --corpus " + dir + "/c --pseudo bogus"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("synth --out " + dir + "/c"), 1);  // collision
  write_file_atomic(tmp.path() / "bad.json", "{ not json");
  EXPECT_EQ(run_cli("labels --config " + dir + "/bad.json --corpus " + dir + "/c"), 2);
}
