#include "tunnelrec/io/pose_csv.hpp"

#include "tunnelrec/core/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <string>

namespace tunnelrec {

void write_pose_rows(const std::filesystem::path& path, const std::vector<PoseRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << "frame_index,tx,ty,tz,rx,ry,rz\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Vec3& t = rows[i].translation;
    const Vec3& w = rows[i].axis_angle;
    out << fmt::format("{},{},{},{},{},{},{}\n", i, t.x(), t.y(), t.z(), w.x(), w.y(), w.z());
  }
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

std::vector<PoseRow> read_pose_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<PoseRow> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("frame_index", 0) == 0) continue;
    double v[7];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 7; ++k) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, v[k]);
      if (ec != std::errc()) {
        throw IoError(fmt::format("{}:{}: malformed pose row", path.string(), line_no));
      }
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (k < 6) {
        if (p >= end || *p != ',') {
          throw IoError(fmt::format("{}:{}: expected 7 comma-separated fields", path.string(),
                                    line_no));
        }
        ++p;
      }
    }
    if (static_cast<std::size_t>(v[0]) != poses.size()) {
      throw IoError(fmt::format("{}:{}: frame index {} out of sequence", path.string(), line_no,
                                v[0]));
    }
    poses.push_back({Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return poses;
}

void write_poses_csv(const std::filesystem::path& path, const std::vector<PoseSE3>& poses) {
  std::vector<PoseRow> rows;
  rows.reserve(poses.size());
  for (const auto& p : poses) rows.push_back(PoseRow::from_pose(p));
  write_pose_rows(path, rows);
}

std::vector<PoseSE3> read_poses_csv(const std::filesystem::path& path) {
  std::vector<PoseSE3> poses;
  for (const auto& row : read_pose_rows(path)) poses.push_back(row.to_pose());
  return poses;
}

}  // namespace tunnelrec
