#pragma once

#include "tunnelrec/core/geometry.hpp"

#include <filesystem>
#include <vector>

namespace tunnelrec {

/// One manifest row: camera-to-world translation and rotation as an
/// axis-angle vector in radians.
struct PoseRow {
  Vec3 translation = Vec3::Zero();
  Vec3 axis_angle = Vec3::Zero();

  static PoseRow from_pose(const PoseSE3& p) { return {p.translation, p.axis_angle()}; }
  PoseSE3 to_pose() const { return PoseSE3::from_axis_angle(axis_angle, translation); }
};

/// Rows `frame_index,tx,ty,tz,rx,ry,rz` written in shortest round-trip form,
/// so read_pose_rows(write_pose_rows(x)) == x bit for bit.
void write_pose_rows(const std::filesystem::path& path, const std::vector<PoseRow>& rows);
/// Rows must be numbered 0..n-1 in order. A header line and `#` comments are skipped.
std::vector<PoseRow> read_pose_rows(const std::filesystem::path& path);

void write_poses_csv(const std::filesystem::path& path, const std::vector<PoseSE3>& poses);
std::vector<PoseSE3> read_poses_csv(const std::filesystem::path& path);

}  // namespace tunnelrec
