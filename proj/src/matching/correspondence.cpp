#include "tunnelrec/matching/correspondence.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/mapping/surface.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>

namespace tunnelrec {

void write_matches(const std::filesystem::path& path, const std::vector<Match>& matches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << "# frame_i frame_j x_i y_i x_j y_j weight\n";
  for (const auto& m : matches) {
    out << fmt::format("{} {} {} {} {} {} {}\n", m.frame_i, m.frame_j, m.x_i, m.y_i, m.x_j, m.y_j,
                       m.weight);
  }
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

std::vector<Match> read_matches(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<Match> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const char* p = line.data();
    const char* end = p + line.size();
    auto skip = [&] {
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    };
    skip();
    if (p == end) continue;
    Match m;
    auto field = [&](auto& v) {
      skip();
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw IoError(fmt::format("{}:{}: malformed match line", path.string(), line_no));
      }
      p = next;
    };
    field(m.frame_i);
    field(m.frame_j);
    field(m.x_i);
    field(m.y_i);
    field(m.x_j);
    field(m.y_j);
    field(m.weight);
    skip();
    if (p != end) throw IoError(fmt::format("{}:{}: trailing fields", path.string(), line_no));
    out.push_back(m);
  }
  return out;
}

void validate_matches(const std::vector<Match>& matches, int width, int height) {
  for (std::size_t k = 0; k < matches.size(); ++k) {
    const Match& m = matches[k];
    auto inside = [&](double x, double y) { return x >= 0 && y >= 0 && x < width && y < height; };
    if (m.frame_i < 0 || m.frame_i >= m.frame_j) {
      throw InvalidArgument(fmt::format("match {}: frames ({}, {}) not ordered", k, m.frame_i,
                                        m.frame_j));
    }
    if (!inside(m.x_i, m.y_i) || !inside(m.x_j, m.y_j)) {
      throw InvalidArgument(fmt::format("match {}: pixel outside the {}x{} image", k, width, height));
    }
    if (!(m.weight >= 0.0 && m.weight <= 1.0)) {
      throw InvalidArgument(fmt::format("match {}: weight {} outside [0, 1]", k, m.weight));
    }
  }
}

MaskResult apply_static_mask(const std::vector<Match>& matches, const Image& mask) {
  auto masked = [&](double x, double y) {
    const int xi = static_cast<int>(std::floor(x)), yi = static_cast<int>(std::floor(y));
    if (xi < 0 || yi < 0 || xi >= mask.width || yi >= mask.height) {
      throw InvalidArgument("match pixel outside the mask raster");
    }
    return mask.at(xi, yi, 0) != 0;
  };
  MaskResult r;
  r.matches.reserve(matches.size());
  for (const auto& m : matches) {
    if (masked(m.x_i, m.y_i) || masked(m.x_j, m.y_j)) {
      ++r.removed;
    } else {
      r.matches.push_back(m);
    }
  }
  return r;
}

std::vector<Edge> build_match_graph(int frame_count, int images_per_rotation) {
  if (frame_count < 2) throw InvalidArgument("a match graph needs at least two frames");
  std::set<Edge> edges;
  for (int k = 0; k + 1 < frame_count; ++k) edges.emplace(k, k + 1);
  if (images_per_rotation >= 1) {
    for (int k = 0; k + images_per_rotation < frame_count; ++k) {
      edges.emplace(k, k + images_per_rotation);
    }
  }
  return {edges.begin(), edges.end()};
}

std::vector<std::pair<Edge, std::vector<Match>>> group_by_edge(const std::vector<Match>& matches) {
  std::map<Edge, std::vector<Match>> groups;
  for (const auto& m : matches) groups[{m.frame_i, m.frame_j}].push_back(m);
  return {groups.begin(), groups.end()};
}

// ---------------------------------------------------------------------------

namespace {

struct Synth {
  const sim::Scene& scene;
  const CameraIntrinsics& K;
  std::mt19937_64 rng;

  Synth(const sim::Scene& s, const CameraIntrinsics& k, std::uint64_t seed)
      : scene(s), K(k), rng(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  double gauss(double sd) {
    return sd > 0.0 ? std::normal_distribution<double>(0.0, sd)(rng) : 0.0;
  }

  bool visible_pixel(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < K.width && px.y() < K.height &&
           !scene.occluder.covers(static_cast<int>(std::floor(px.x())),
                                  static_cast<int>(std::floor(px.y())));
  }

  Vec2 random_free_pixel() {
    for (;;) {
      const Vec2 px(uniform(0.0, K.width), uniform(0.0, K.height));
      if (visible_pixel(px)) return px;
    }
  }

  Vec3 cast(const PoseSE3& pose, const Vec2& px) const {
    const Ray cam = pixel_ray(K, px);
    return intersect_ray_prior(Ray(pose.translation, pose.rotation * cam.direction), scene.prior)
        .position;
  }

  std::optional<Vec2> observe(const PoseSE3& pose, const Vec3& X) const {
    const Vec3 pc = pose.rotation.transpose() * (X - pose.translation);
    if (!(pc.z() > 1e-9)) return std::nullopt;
    const Vec2 px = project(K, pc);
    if (!visible_pixel(px)) return std::nullopt;
    return px;
  }

  std::optional<Vec2> noisy(const Vec2& px, double sd) {
    const Vec2 out(px.x() + gauss(sd), px.y() + gauss(sd));
    if (!visible_pixel(out)) return std::nullopt;
    return out;
  }
};

// Distance in pixels of px_j from the epipolar line of px_i in frame j.
// For a zero baseline the views are related by a rotation and the distance
// to the rotated point is used instead.
double epipolar_distance(const CameraIntrinsics& K, const PoseSE3& pi, const PoseSE3& pj,
                         const Vec2& px_i, const Vec2& px_j) {
  const Mat3 R = pj.rotation.transpose() * pi.rotation;
  const Vec3 t = pj.rotation.transpose() * (pi.translation - pj.translation);
  const Vec2 ni = undistort_normalized(K, px_i);
  const Vec2 nj = undistort_normalized(K, px_j);
  const Vec3 xi(ni.x(), ni.y(), 1.0), xj(nj.x(), nj.y(), 1.0);
  if (t.norm() < 1e-12) {
    const Vec3 r = R * xi;
    if (!(r.z() > 0.0)) return std::numeric_limits<double>::infinity();
    return K.f * (r.head<2>() / r.z() - nj).norm();
  }
  const Vec3 l = skew(t) * R * xi;
  return K.f * std::abs(xj.dot(l)) / l.head<2>().norm();
}

Match make_match(int fi, const Vec2& a, int fj, const Vec2& b) {
  if (fi > fj) return make_match(fj, b, fi, a);
  return {fi, fj, a.x(), a.y(), b.x(), b.y(), 1.0};
}

void check_options(const SynthesisOptions& o, const sim::Scene& scene) {
  if (!(o.pixel_noise_sd >= 0.0)) throw InvalidArgument("pixel noise must be non-negative");
  if (!(o.outlier_fraction >= 0.0 && o.outlier_fraction < 1.0)) {
    throw InvalidArgument("outlier fraction must lie in [0, 1)");
  }
  if (!(o.static_outlier_share >= 0.0 && o.static_outlier_share <= 1.0)) {
    throw InvalidArgument("static outlier share must lie in [0, 1]");
  }
  if (o.static_outlier_share > 0.0 && !scene.occluder.enabled) {
    throw InvalidArgument("static outliers need an enabled rig occluder");
  }
}

Match random_outlier(Synth& s, const CameraIntrinsics& K, int fi, const PoseSE3& pi, int fj,
                     const PoseSE3& pj, double min_px) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const Vec2 a = s.random_free_pixel();
    const Vec2 b = s.random_free_pixel();
    if (epipolar_distance(K, pi, pj, a, b) >= min_px) return make_match(fi, a, fj, b);
  }
  throw DegenerateConfiguration("cannot place an outlier away from the epipolar lines");
}

}  // namespace

SyntheticMatches synthesize_matches(int frame_i, const PoseSE3& pose_i, int frame_j,
                                    const PoseSE3& pose_j, const sim::Scene& scene,
                                    const CameraIntrinsics& K, int count,
                                    const SynthesisOptions& options) {
  check_options(options, scene);
  if (count < 0) throw InvalidArgument("match count must be non-negative");
  if (frame_i == frame_j) throw InvalidArgument("a match needs two distinct frames");
  Synth s(scene, K, options.seed);
  const int outliers = static_cast<int>(std::lround(options.outlier_fraction * count));
  const int inliers = count - outliers;
  SyntheticMatches out;
  out.matches.reserve(count);
  long attempts = 0;
  while (static_cast<int>(out.matches.size()) < inliers) {
    if (++attempts > 200L * std::max(inliers, 100)) {
      throw DegenerateConfiguration(fmt::format(
          "frames {} and {} share no visible wall surface", frame_i, frame_j));
    }
    const Vec2 a = s.random_free_pixel();
    const Vec3 X = s.cast(pose_i, a);
    // Both pixels come from projecting X, so equal poses give equal pixels.
    const auto a2 = s.observe(pose_i, X);
    const auto b = s.observe(pose_j, X);
    if (!a2 || !b) continue;
    const auto na = s.noisy(*a2, options.pixel_noise_sd);
    const auto nb = s.noisy(*b, options.pixel_noise_sd);
    if (!na || !nb) continue;
    out.matches.push_back(make_match(frame_i, *na, frame_j, *nb));
  }
  out.outlier.assign(out.matches.size(), 0);
  for (int k = 0; k < outliers; ++k) {
    out.matches.push_back(random_outlier(s, K, frame_i, pose_i, frame_j, pose_j,
                                         options.outlier_min_epipolar_px));
    out.outlier.push_back(1);
  }
  return out;
}

SyntheticMatches synthesize_dataset_matches(const std::vector<PoseSE3>& poses,
                                            const std::vector<Edge>& edges,
                                            const sim::Scene& scene, const CameraIntrinsics& K,
                                            int points_per_frame, const SynthesisOptions& options) {
  check_options(options, scene);
  if (points_per_frame < 0) throw InvalidArgument("points per frame must be non-negative");
  const int m = static_cast<int>(poses.size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b >= m || a >= b) throw InvalidArgument("graph edge references a missing frame");
  }
  Synth s(scene, K, options.seed);
  std::vector<std::vector<int>> neighbors(m);
  for (const auto& [a, b] : edges) neighbors[a].push_back(b);

  struct Tagged {
    Match match;
    std::uint8_t outlier;
  };
  std::vector<Tagged> all;
  std::vector<std::optional<Vec2>> obs(m);
  for (int k = 0; k < m; ++k) {
    for (int p = 0; p < points_per_frame; ++p) {
      const Vec3 X = s.cast(poses[k], s.random_free_pixel());
      for (int f = 0; f < m; ++f) {
        const auto px = s.observe(poses[f], X);
        obs[f] = px ? s.noisy(*px, options.pixel_noise_sd) : std::nullopt;
      }
      for (int a = 0; a < m; ++a) {
        if (!obs[a]) continue;
        for (int b : neighbors[a]) {
          if (obs[b]) all.push_back({make_match(a, *obs[a], b, *obs[b]), 0});
        }
      }
    }
  }

  const std::size_t inliers = all.size();
  const double f = options.outlier_fraction;
  const auto outliers =
      static_cast<std::size_t>(std::llround(f * static_cast<double>(inliers) / (1.0 - f)));
  const auto static_count =
      static_cast<std::size_t>(std::llround(options.static_outlier_share * outliers));
  if (!edges.empty()) {
    // Rig features: the same pixel matched across every edge.
    const auto& occ = scene.occluder;
    std::size_t added = 0;
    while (added < static_count) {
      const Vec2 px(s.uniform(occ.x0, occ.x1), s.uniform(occ.y0, occ.y1));
      for (const auto& [a, b] : edges) {
        if (added == static_count) break;
        all.push_back({make_match(a, px, b, px), 1});
        ++added;
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
    for (std::size_t k = static_count; k < outliers; ++k) {
      const auto& [a, b] = edges[pick(s.rng)];
      all.push_back({random_outlier(s, K, a, poses[a], b, poses[b],
                                    options.outlier_min_epipolar_px),
                     1});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Tagged& x, const Tagged& y) {
    return std::tie(x.match.frame_i, x.match.frame_j) < std::tie(y.match.frame_i, y.match.frame_j);
  });
  SyntheticMatches out;
  out.matches.reserve(all.size());
  out.outlier.reserve(all.size());
  for (const auto& t : all) {
    out.matches.push_back(t.match);
    out.outlier.push_back(t.outlier);
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* track_status_name(TrackStatus s) {
  switch (s) {
    case TrackStatus::Active: return "active";
    case TrackStatus::PrunedMask: return "pruned_mask";
    case TrackStatus::PrunedGeometry: return "pruned_geometry";
    case TrackStatus::PrunedReprojection: return "pruned_reprojection";
    case TrackStatus::Degenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

struct Key {
  int frame;
  std::uint64_t x, y;
  bool operator==(const Key&) const = default;
  bool operator<(const Key& o) const { return std::tie(frame, x, y) < std::tie(o.frame, o.x, o.y); }
};

struct KeyHash {
  std::size_t operator()(const Key& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.frame) * 0x9e3779b97f4a7c15ULL;
    h ^= k.x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= k.y + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

Key key_of(int frame, double x, double y) {
  return {frame, std::bit_cast<std::uint64_t>(x), std::bit_cast<std::uint64_t>(y)};
}

struct UnionFind {
  std::vector<std::size_t> parent;
  std::size_t add() {
    parent.push_back(parent.size());
    return parent.size() - 1;
  }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

TrackSet build_tracks(const std::vector<Match>& matches, const std::vector<std::uint8_t>* flags) {
  if (flags != nullptr && flags->size() != matches.size()) {
    throw InvalidArgument("match flags and matches differ in length");
  }
  std::unordered_map<Key, std::size_t, KeyHash> index;
  std::vector<Key> keys;
  UnionFind uf;
  auto node = [&](const Key& k) {
    auto [it, inserted] = index.try_emplace(k, keys.size());
    if (inserted) {
      keys.push_back(k);
      uf.add();
    }
    return it->second;
  };
  std::vector<std::size_t> match_node(matches.size());
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const Match& m = matches[i];
    const std::size_t a = node(key_of(m.frame_i, m.x_i, m.y_i));
    const std::size_t b = node(key_of(m.frame_j, m.x_j, m.y_j));
    uf.unite(a, b);
    match_node[i] = a;
  }
  std::vector<std::vector<std::size_t>> groups(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) groups[uf.find(i)].push_back(i);
  std::vector<std::uint8_t> root_flag(keys.size(), 0);
  if (flags != nullptr) {
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if ((*flags)[i]) root_flag[uf.find(match_node[i])] = 1;
    }
  }

  struct Built {
    Key first;
    Track track;
    std::uint8_t flag;
  };
  std::vector<Built> built;
  TrackSet out;
  for (std::size_t root = 0; root < groups.size(); ++root) {
    auto& g = groups[root];
    if (g.size() < 2) continue;
    std::sort(g.begin(), g.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    bool conflict = false;
    for (std::size_t k = 1; k < g.size(); ++k) {
      if (keys[g[k]].frame == keys[g[k - 1]].frame) conflict = true;
    }
    if (conflict) {
      ++out.conflicting;
      continue;
    }
    Built b{keys[g.front()], {}, root_flag[root]};
    for (std::size_t i : g) {
      b.track.observations.push_back(
          {keys[i].frame, Vec2(std::bit_cast<double>(keys[i].x), std::bit_cast<double>(keys[i].y))});
    }
    built.push_back(std::move(b));
  }
  std::sort(built.begin(), built.end(),
            [](const Built& a, const Built& b) { return a.first < b.first; });
  out.tracks.reserve(built.size());
  out.flagged.reserve(built.size());
  for (auto& b : built) {
    out.tracks.push_back(std::move(b.track));
    out.flagged.push_back(b.flag);
  }
  return out;
}

}  // namespace tunnelrec
