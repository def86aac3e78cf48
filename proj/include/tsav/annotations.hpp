// Per-frame multi-task annotation files: parsing, validation and indexing.
//
// File layout (one file per video and task, UTF-8, LF newlines):
//   VA:  header `valence,arousal`, then one `v,a` line per frame
//   EX:  header `expression`, then one class index per frame
//   AU:  header `au1,...,auK`, then K comma separated flags per frame
// Frame index is implied by line order. Absent labels are written as -5
// (VA components) and -1 (EX, AU entries).
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsav/common.hpp"

namespace tsav {

inline constexpr int kNumExpressions = 7;
inline constexpr std::size_t kDefaultAuCount = 8;
inline constexpr double kAbsentVa = -5.0;
inline constexpr double kAbsentEx = -1.0;
inline constexpr double kAbsentAu = -1.0;

enum class Expression : std::uint8_t {
  neutral = 0,
  anger = 1,
  disgust = 2,
  fear = 3,
  happiness = 4,
  sadness = 5,
  surprise = 6,
};

inline constexpr std::array<std::string_view, kNumExpressions> kExpressionNames = {
    "neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise"};

inline std::string_view expression_name(Expression e) {
  return kExpressionNames[static_cast<std::size_t>(e)];
}

inline std::optional<Expression> to_expression(double raw) {
  if (raw != std::floor(raw) || raw < 0 || raw >= kNumExpressions) return std::nullopt;
  return static_cast<Expression>(static_cast<int>(raw));
}

struct ValenceArousal {
  double valence = 0.0;
  double arousal = 0.0;

  bool valid() const {
    return valence >= -1.0 && valence <= 1.0 && arousal >= -1.0 && arousal <= 1.0;
  }
  friend bool operator==(const ValenceArousal&, const ValenceArousal&) = default;
};

/// Pseudo VA where either component may be missing (valence-only policy).
struct PartialVa {
  std::optional<double> valence;
  std::optional<double> arousal;
  friend bool operator==(const PartialVa&, const PartialVa&) = default;
};

using ActionUnits = std::vector<std::uint8_t>;
using SoftExpression = std::array<double, kNumExpressions>;

/// Raw per-frame values as they appear in the files, before validation.
struct RawLabels {
  std::optional<ValenceArousal> va;  // nullopt when the video has no VA file or line
  std::optional<double> ex;
  std::optional<std::vector<double>> au;
};

struct FrameRecord {
  std::string video_id;
  std::uint32_t frame_index = 0;
  std::optional<ValenceArousal> va;
  std::optional<Expression> ex;
  std::optional<ActionUnits> au;
  std::optional<SoftExpression> soft_ex;
  std::optional<PartialVa> pseudo_va;
  bool excluded = false;
  // Set when the raw file held a VA / EX value that is neither the absent
  // marker nor in range. These frames are dropped by the label filter.
  bool va_raw_invalid = false;
  bool ex_raw_invalid = false;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

// ---------------------------------------------------------------------------
// Annotation files

enum class AnnotationKind { va, ex, au };

inline std::string_view kind_dir(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::va: return "VA";
    case AnnotationKind::ex: return "EX";
    case AnnotationKind::au: return "AU";
  }
  return "";
}

struct AnnotationFile {
  AnnotationKind kind = AnnotationKind::va;
  std::size_t width = 2;  // values per line
  std::vector<std::vector<double>> rows;
};

inline std::string annotation_header(AnnotationKind kind, std::size_t width) {
  switch (kind) {
    case AnnotationKind::va: return "valence,arousal";
    case AnnotationKind::ex: return "expression";
    case AnnotationKind::au: {
      std::string h;
      for (std::size_t i = 1; i <= width; ++i) {
        if (i > 1) h += ',';
        h += "au" + std::to_string(i);
      }
      return h;
    }
  }
  return {};
}

inline AnnotationFile parse_annotation_text(std::string_view text, AnnotationKind kind) {
  AnnotationFile file{kind, 0, {}};
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line_no == 1) {
      auto fields = split(line, ',');
      file.width = fields.size();
      if (kind == AnnotationKind::au && file.width == 0)
        throw FormatError("empty AU header", line_no);
      if (line != annotation_header(kind, file.width))
        throw FormatError("missing or mismatched header for " + std::string(kind_dir(kind)) +
                              " file: '" + std::string(line) + "'",
                          line_no);
      continue;
    }
    if (line.empty() && pos >= text.size()) break;  // trailing newline

    auto fields = split(line, ',');
    if (fields.size() != file.width)
      throw FormatError("expected " + std::to_string(file.width) + " fields, got " +
                            std::to_string(fields.size()),
                        line_no);
    std::vector<double> row(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_number(fields[i], row[i]))
        throw FormatError("non-numeric field '" + std::string(fields[i]) + "'", line_no);
    }
    file.rows.push_back(std::move(row));
  }
  if (line_no == 0) throw FormatError("missing header", 1);
  return file;
}

inline AnnotationFile parse_annotation_file(const std::filesystem::path& path, AnnotationKind kind) {
  try {
    return parse_annotation_text(read_file(path), kind);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Canonical text form: shortest round-trip decimals, LF endings.
inline std::string serialize_annotation(const AnnotationFile& file) {
  std::string out = annotation_header(file.kind, file.width);
  out += '\n';
  for (const auto& row : file.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_number(row[i]);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

/// Invalid labels become absent; validation never fails.
inline FrameRecord validate_record(const RawLabels& raw) {
  FrameRecord r;
  if (raw.va) {
    if (raw.va->valid()) {
      r.va = raw.va;
    } else if (!(raw.va->valence == kAbsentVa && raw.va->arousal == kAbsentVa)) {
      r.va_raw_invalid = true;
    }
  }
  if (raw.ex) {
    r.ex = to_expression(*raw.ex);
    if (!r.ex && *raw.ex != kAbsentEx) r.ex_raw_invalid = true;
  }
  if (raw.au) {
    const bool ok = std::all_of(raw.au->begin(), raw.au->end(),
                                [](double v) { return v == 0.0 || v == 1.0; });
    if (ok && !raw.au->empty()) {
      r.au = ActionUnits(raw.au->size());
      std::transform(raw.au->begin(), raw.au->end(), r.au->begin(),
                     [](double v) { return static_cast<std::uint8_t>(v); });
    }
  }
  return r;
}

/// Re-validation of an existing record; a no-op for records produced by the
/// raw overload.
inline FrameRecord validate_record(const FrameRecord& rec) {
  FrameRecord r = rec;
  if (r.va && !r.va->valid()) {
    r.va.reset();
    r.va_raw_invalid = true;
  }
  if (r.au && std::any_of(r.au->begin(), r.au->end(), [](std::uint8_t v) { return v > 1; }))
    r.au.reset();
  return r;
}

// ---------------------------------------------------------------------------
// Dataset index

struct TaskCounts {
  std::size_t records = 0;
  std::size_t va = 0;
  std::size_t ex = 0;
  std::size_t au = 0;
  std::size_t soft_ex = 0;
  std::size_t pseudo_va = 0;
  std::size_t excluded = 0;
  friend bool operator==(const TaskCounts&, const TaskCounts&) = default;
};

inline TaskCounts count_labels(const std::vector<FrameRecord>& recs) {
  TaskCounts c;
  for (const auto& r : recs) {
    ++c.records;
    c.va += r.va.has_value();
    c.ex += r.ex.has_value();
    c.au += r.au.has_value();
    c.soft_ex += r.soft_ex.has_value();
    c.pseudo_va += r.pseudo_va.has_value();
    c.excluded += r.excluded;
  }
  return c;
}

class DatasetIndex {
 public:
  using VideoMap = std::map<std::string, std::vector<FrameRecord>, std::less<>>;

  DatasetIndex() = default;

  /// Records must be sorted by (video_id, frame_index) with no duplicates.
  static DatasetIndex build(std::vector<FrameRecord> records) {
    DatasetIndex idx;
    const FrameRecord* prev = nullptr;
    for (auto& r : records) {
      if (prev && prev->video_id == r.video_id && prev->frame_index >= r.frame_index) {
        if (prev->frame_index == r.frame_index)
          throw IndexError("duplicate frame " + r.video_id + "#" + std::to_string(r.frame_index));
        throw IndexError("frames out of order in " + r.video_id);
      }
      if (prev && prev->video_id > r.video_id)
        throw IndexError("videos out of order: " + prev->video_id + " before " + r.video_id);
      prev = &r;
    }
    for (auto& r : records) idx.videos_[r.video_id].push_back(std::move(r));
    idx.recount();
    return idx;
  }

  const VideoMap& videos() const { return videos_; }
  const TaskCounts& counts() const { return counts_; }

  const std::vector<FrameRecord>& video(std::string_view id) const {
    auto it = videos_.find(id);
    if (it == videos_.end()) throw IndexError("unknown video " + std::string(id));
    return it->second;
  }

  std::size_t size() const { return counts_.records; }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [id, recs] : videos_)
      for (const auto& r : recs) f(r);
  }

  /// Mutating map; counts are refreshed afterwards.
  template <typename F>
  DatasetIndex transformed(F&& f) const {
    DatasetIndex out = *this;
    for (auto& [id, recs] : out.videos_)
      for (auto& r : recs) f(r);
    out.recount();
    return out;
  }

  std::vector<FrameRecord> flatten() const {
    std::vector<FrameRecord> all;
    all.reserve(size());
    for_each([&](const FrameRecord& r) { all.push_back(r); });
    return all;
  }

  friend bool operator==(const DatasetIndex& a, const DatasetIndex& b) {
    return a.videos_ == b.videos_;
  }

 private:
  void recount() {
    counts_ = {};
    for (const auto& [id, recs] : videos_) {
      auto c = count_labels(recs);
      counts_.records += c.records;
      counts_.va += c.va;
      counts_.ex += c.ex;
      counts_.au += c.au;
      counts_.soft_ex += c.soft_ex;
      counts_.pseudo_va += c.pseudo_va;
      counts_.excluded += c.excluded;
    }
  }

  VideoMap videos_;
  TaskCounts counts_;
};

inline DatasetIndex build_dataset_index(std::vector<FrameRecord> records) {
  return DatasetIndex::build(std::move(records));
}

/// Merge the three per-task files of one video into validated records.
/// Missing files or short files leave the corresponding labels absent.
inline std::vector<FrameRecord> assemble_video(const std::string& video_id,
                                               const std::optional<AnnotationFile>& va,
                                               const std::optional<AnnotationFile>& ex,
                                               const std::optional<AnnotationFile>& au,
                                               std::size_t au_count = kDefaultAuCount) {
  if (va && va->width != 2) throw FormatError(video_id + ": VA file must have 2 columns");
  if (ex && ex->width != 1) throw FormatError(video_id + ": EX file must have 1 column");
  if (au && au->width != au_count)
    throw FormatError(video_id + ": AU file has " + std::to_string(au->width) +
                      " columns, expected " + std::to_string(au_count));
  std::size_t n = 0;
  for (const auto* f : {&va, &ex, &au})
    if (*f) n = std::max(n, (*f)->rows.size());

  std::vector<FrameRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawLabels raw;
    if (va && i < va->rows.size()) raw.va = ValenceArousal{va->rows[i][0], va->rows[i][1]};
    if (ex && i < ex->rows.size()) raw.ex = ex->rows[i][0];
    if (au && i < au->rows.size()) raw.au = au->rows[i];
    FrameRecord r = validate_record(raw);
    r.video_id = video_id;
    r.frame_index = static_cast<std::uint32_t>(i);
    out.push_back(std::move(r));
  }
  return out;
}

/// Videos discovered as the union of file stems under <root>/{VA,EX,AU}/.
inline std::vector<std::string> list_annotated_videos(const std::filesystem::path& root) {
  std::vector<std::string> ids;
  for (auto kind : {AnnotationKind::va, AnnotationKind::ex, AnnotationKind::au}) {
    const auto dir = root / kind_dir(kind);
    if (!std::filesystem::is_directory(dir)) continue;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".txt")
        ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline std::vector<FrameRecord> load_video_annotations(const std::filesystem::path& root,
                                                       const std::string& video_id,
                                                       std::size_t au_count = kDefaultAuCount) {
  auto load = [&](AnnotationKind kind) -> std::optional<AnnotationFile> {
    const auto p = root / kind_dir(kind) / (video_id + ".txt");
    if (!std::filesystem::exists(p)) return std::nullopt;
    return parse_annotation_file(p, kind);
  };
  return assemble_video(video_id, load(AnnotationKind::va), load(AnnotationKind::ex),
                        load(AnnotationKind::au), au_count);
}

inline DatasetIndex load_dataset(const std::filesystem::path& root,
                                 std::size_t au_count = kDefaultAuCount) {
  std::vector<FrameRecord> all;
  for (const auto& id : list_annotated_videos(root)) {
    auto recs = load_video_annotations(root, id, au_count);
    std::move(recs.begin(), recs.end(), std::back_inserter(all));
  }
  return build_dataset_index(std::move(all));
}

}  // namespace tsav
