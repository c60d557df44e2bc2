#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/simulator/renderer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace tunnelrec {

/// One correspondence between pixel (x_i, y_i) of frame_i and (x_j, y_j) of
/// frame_j, with frame_i < frame_j.
struct Match {
  int frame_i = 0;
  int frame_j = 0;
  double x_i = 0, y_i = 0, x_j = 0, y_j = 0;
  double weight = 1.0;

  Vec2 pixel_i() const { return {x_i, y_i}; }
  Vec2 pixel_j() const { return {x_j, y_j}; }
  bool operator==(const Match&) const = default;
};

/// Text format: one match per line, `frame_i frame_j x_i y_i x_j y_j weight`,
/// whitespace separated; `#` starts a comment.
void write_matches(const std::filesystem::path& path, const std::vector<Match>& matches);
std::vector<Match> read_matches(const std::filesystem::path& path);

/// Throws InvalidArgument when a match breaks the frame ordering, weight
/// range or image bounds.
void validate_matches(const std::vector<Match>& matches, int width, int height);

struct MaskResult {
  std::vector<Match> matches;
  std::size_t removed = 0;
};

/// Drops matches with either endpoint on a nonzero mask pixel. The same
/// mask applies to every frame because the masked objects move with the rig.
MaskResult apply_static_mask(const std::vector<Match>& matches, const Image& mask);

using Edge = std::pair<int, int>;

/// Consecutive pairs (k, k+1) plus the pairs one rotation apart (k, k+n),
/// sorted and deduplicated.
std::vector<Edge> build_match_graph(int frame_count, int images_per_rotation);

/// Matches grouped by frame pair, in edge order.
std::vector<std::pair<Edge, std::vector<Match>>> group_by_edge(const std::vector<Match>& matches);

// ---------------------------------------------------------------------------
// Synthetic correspondences from groundtruth poses.

struct SynthesisOptions {
  double pixel_noise_sd = 0.0;
  double outlier_fraction = 0.0;
  /// Share of the outliers that are static-rig matches (identical pixels in
  /// the occluder region); the rest are random pairs. Needs scene.occluder.
  double static_outlier_share = 0.0;
  /// Random-pair outliers are kept at least this far (px) from the true
  /// epipolar line so each one is a real geometric outlier.
  double outlier_min_epipolar_px = 10.0;
  std::uint64_t seed = 1;
};

struct SyntheticMatches {
  std::vector<Match> matches;
  std::vector<std::uint8_t> outlier;  // per match
};

/// `count` matches between two frames, round(outlier_fraction * count) of
/// them random pairs. Inliers are projections of common wall points with
/// Gaussian pixel noise. Throws DegenerateConfiguration when the frames
/// share no visible wall.
SyntheticMatches synthesize_matches(int frame_i, const PoseSE3& pose_i, int frame_j,
                                    const PoseSE3& pose_j, const sim::Scene& scene,
                                    const CameraIntrinsics& K, int count,
                                    const SynthesisOptions& options);

/// Dataset-wide synthesis: `points_per_frame` wall points are seeded from
/// each frame and observed, with one noisy pixel per (point, frame), in
/// every frame that sees them. Each graph edge gets the matches of the points
/// both its frames observe, so tracks can be rebuilt by chaining. Outliers
/// are added until they make up outlier_fraction of all matches.
SyntheticMatches synthesize_dataset_matches(const std::vector<PoseSE3>& poses,
                                            const std::vector<Edge>& edges,
                                            const sim::Scene& scene, const CameraIntrinsics& K,
                                            int points_per_frame, const SynthesisOptions& options);

// ---------------------------------------------------------------------------
// Tracks

enum class TrackStatus {
  Active,
  PrunedMask,
  PrunedGeometry,
  PrunedReprojection,
  Degenerate,  // could not be triangulated (near-parallel rays, behind a camera)
};
const char* track_status_name(TrackStatus s);

struct Observation {
  int frame = 0;
  Vec2 pixel = Vec2::Zero();
};

struct Track {
  std::vector<Observation> observations;
  std::optional<Vec3> point;
  TrackStatus status = TrackStatus::Active;
};

struct TrackSet {
  std::vector<Track> tracks;
  /// Per track: true when any contributing match was flagged.
  std::vector<std::uint8_t> flagged;
  /// Chains that reached the same frame twice at different pixels; dropped.
  std::size_t conflicting = 0;
};

/// Chains matches into tracks with union-find on exact (frame, pixel) keys.
/// Output order is deterministic: tracks sorted by their first observation.
TrackSet build_tracks(const std::vector<Match>& matches,
                      const std::vector<std::uint8_t>* flags = nullptr);

}  // namespace tunnelrec
