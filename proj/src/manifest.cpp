#include "biqa/manifest.hpp"

#include <fstream>
#include <unordered_set>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"
#include "biqa/metrics.hpp"

namespace biqa {

void Manifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!(r.mos >= 0.0 && r.mos <= 1.0))
      fail(ErrorCode::out_of_range, "MOS " + csv::format_double(r.mos) + " for '" + r.path +
                                        "' is not normalized to [0, 1]");
    if (!seen.insert(r.path).second) fail(ErrorCode::invalid_argument, "duplicate path '" + r.path + "' in manifest");
  }
}

Manifest load_manifest(const std::filesystem::path& path, ScoreRange range, bool invert) {
  if (!(range.lo < range.hi)) fail(ErrorCode::invalid_argument, "degenerate declared score range");
  const auto table = csv::read_file(path);
  const int path_col = table.require("path");
  const int score_col = table.require("score");
  const int var_col = table.column("variance");
  const int split_col = table.column("split");
  Manifest m;
  m.dataset_id = path.stem().string();
  const auto base = path.parent_path();
  std::vector<double> raw;
  for (const auto& row : table.rows) {
    SampleRecord r;
    std::filesystem::path p = row[static_cast<std::size_t>(path_col)];
    r.path = (p.is_relative() ? base / p : p).lexically_normal().string();
    const double score = csv::parse_double(row[static_cast<std::size_t>(score_col)]);
    if (!(score >= range.lo && score <= range.hi))
      fail(ErrorCode::out_of_range, "score " + csv::format_double(score) + " for '" + r.path +
                                        "' is outside the declared range [" + csv::format_double(range.lo) + ", " +
                                        csv::format_double(range.hi) + "]");
    raw.push_back(score);
    if (var_col >= 0 && !row[static_cast<std::size_t>(var_col)].empty())
      r.variance = csv::parse_double(row[static_cast<std::size_t>(var_col)]);
    if (split_col >= 0 && !row[static_cast<std::size_t>(split_col)].empty())
      r.split = row[static_cast<std::size_t>(split_col)];
    m.records.push_back(std::move(r));
  }
  const auto normalized = normalize_scores(raw, range.lo, range.hi, invert);
  const double scale = (range.hi - range.lo);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    m.records[i].mos = normalized[i];
    if (m.records[i].variance) *m.records[i].variance /= scale * scale;
  }
  m.validate();
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "path,score,variance,split\n";
  for (const auto& r : manifest.records)
    out << csv::format_row({r.path, csv::format_double(r.mos),
                            r.variance ? csv::format_double(*r.variance) : std::string(), r.split.value_or("")})
        << '\n';
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

Manifest concatenate(const std::vector<Manifest>& parts, const std::string& dataset_id) {
  Manifest out;
  out.dataset_id = dataset_id;
  for (const auto& p : parts) out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  out.validate();
  return out;
}

}  // namespace biqa
