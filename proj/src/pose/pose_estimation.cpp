#include "tunnelrec/pose/pose_estimation.hpp"

#include "tunnelrec/ba/bundle_adjustment.hpp"
#include "tunnelrec/core/error.hpp"
#include "tunnelrec/mapping/surface.hpp"
#include "tunnelrec/simd/kernels.hpp"

#include <Eigen/SVD>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace tunnelrec {

namespace {

// Hartley conditioning: centroid to the origin, mean distance sqrt(2).
Mat3 conditioning(const std::vector<Vec2>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= static_cast<double>(pts.size());
  const double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
  Mat3 T;
  T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return T;
}

struct Undistorted {
  std::vector<Vec2> n_i, n_j;            // normalized coordinates
  std::vector<double> u_i, v_i, u_j, v_j;  // ideal pinhole pixels
};

Undistorted undistort_all(const std::vector<Match>& matches, const CameraIntrinsics& K_i,
                          const CameraIntrinsics& K_j) {
  Undistorted u;
  const std::size_t n = matches.size();
  u.n_i.resize(n), u.n_j.resize(n);
  u.u_i.resize(n), u.v_i.resize(n), u.u_j.resize(n), u.v_j.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    u.n_i[k] = undistort_normalized(K_i, matches[k].pixel_i());
    u.n_j[k] = undistort_normalized(K_j, matches[k].pixel_j());
    u.u_i[k] = K_i.f * u.n_i[k].x() + K_i.cx;
    u.v_i[k] = K_i.f * u.n_i[k].y() + K_i.cy;
    u.u_j[k] = K_j.f * u.n_j[k].x() + K_j.cx;
    u.v_j[k] = K_j.f * u.n_j[k].y() + K_j.cy;
  }
  return u;
}

Mat3 camera_matrix(const CameraIntrinsics& K) {
  Mat3 M;
  M << K.f, 0, K.cx, 0, K.f, K.cy, 0, 0, 1;
  return M;
}

void sampson_all(const Mat3& E, const Undistorted& u, const CameraIntrinsics& K_i,
                 const CameraIntrinsics& K_j, std::vector<double>& out) {
  const Mat3 F = camera_matrix(K_j).inverse().transpose() * E * camera_matrix(K_i).inverse();
  double f[9];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f[3 * r + c] = F(r, c);
  out.resize(u.u_i.size());
  simd::sampson_squared(f, u.u_i, u.v_i, u.u_j, u.v_j, out);
}

// Smallest right singular vector of the stacked epipolar constraints, plus
// the ratio of the two smallest singular values (small when the
// correspondences leave a multi-dimensional solution space).
Mat3 solve_linear(const std::vector<Vec2>& x_i, const std::vector<Vec2>& x_j, double* spread) {
  const Mat3 Ti = conditioning(x_i), Tj = conditioning(x_j);
  const auto n = static_cast<Eigen::Index>(x_i.size());
  Eigen::Matrix<double, Eigen::Dynamic, 9> A(std::max<Eigen::Index>(n, 9), 9);
  A.setZero();
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vec3 a = Ti * Vec3(x_i[k].x(), x_i[k].y(), 1.0);
    const Vec3 b = Tj * Vec3(x_j[k].x(), x_j[k].y(), 1.0);
    A.row(k) << b.x() * a.x(), b.x() * a.y(), b.x(), b.y() * a.x(), b.y() * a.y(), b.y(), a.x(),
        a.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (spread != nullptr) *spread = s[0] > 0.0 ? s[7] / s[0] : 0.0;
  const Eigen::Matrix<double, 9, 1> e = svd.matrixV().col(8);
  Mat3 Eh;
  Eh << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  return Tj.transpose() * Eh * Ti;
}

// Sampson residuals (signed, pixels) of E on a subset of matches.
void sampson_residuals(const Mat3& E, const Undistorted& u, const std::vector<int>& idx,
                       const Mat3& Kj_inv_t, const Mat3& Ki_inv, Eigen::VectorXd& out) {
  const Mat3 F = Kj_inv_t * E * Ki_inv;
  out.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int m = idx[k];
    const Vec3 p(u.u_i[m], u.v_i[m], 1.0), q(u.u_j[m], u.v_j[m], 1.0);
    const Vec3 l1 = F * p, l2 = F.transpose() * q;
    const double den = l1.head<2>().squaredNorm() + l2.head<2>().squaredNorm();
    out[static_cast<Eigen::Index>(k)] = den > 0.0 ? q.dot(l1) / std::sqrt(den) : 0.0;
  }
}

// Minimizes the summed squared Sampson error over E = [t]x R on the
// essential manifold (3 rotation + 2 direction parameters). The linear
// 8-point fit minimizes an algebraic error that is strongly biased when
// the translational parallax is small next to the rotation, which is the
// usual situation for a camera spinning on the tunnel axis.
Mat3 refine_essential(const Mat3& E0, const Undistorted& u, const std::vector<int>& idx,
                      const CameraIntrinsics& K_i, const CameraIntrinsics& K_j) {
  Eigen::JacobiSVD<Mat3> svd(E0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0) U = -U;
  if (V.determinant() < 0) V = -V;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 R = U * W * V.transpose();
  Vec3 t = U.col(2);
  const Mat3 Ki = camera_matrix(K_i).inverse();
  const Mat3 Kjt = camera_matrix(K_j).inverse().transpose();

  auto perturbed = [](const Mat3& R0, const Vec3& t0, const Eigen::Matrix<double, 5, 1>& d) {
    Vec3 b1 = t0.unitOrthogonal();
    Vec3 b2 = t0.cross(b1);
    return std::make_pair(Mat3(so3_exp(d.head<3>()) * R0),
                          Vec3((t0 + d[3] * b1 + d[4] * b2).normalized()));
  };

  Eigen::VectorXd r, rp, rm;
  sampson_residuals(skew(t) * R, u, idx, Kjt, Ki, r);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd J(n, 5);
  for (int it = 0; it < 50; ++it) {
    constexpr double h = 1e-7;
    for (int c = 0; c < 5; ++c) {
      Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
      d[c] = h;
      auto [Rp, tp] = perturbed(R, t, d);
      sampson_residuals(skew(tp) * Rp, u, idx, Kjt, Ki, rp);
      d[c] = -h;
      auto [Rm, tm] = perturbed(R, t, d);
      sampson_residuals(skew(tm) * Rm, u, idx, Kjt, Ki, rm);
      J.col(c) = (rp - rm) / (2.0 * h);
    }
    const Eigen::Matrix<double, 5, 5> H = J.transpose() * J;
    const Eigen::Matrix<double, 5, 1> g = J.transpose() * r;
    if (g.norm() < 1e-12) break;
    bool accepted = false;
    for (int tries = 0; tries < 10 && !accepted; ++tries) {
      Eigen::Matrix<double, 5, 5> A = H;
      A.diagonal() *= 1.0 + lambda;
      const Eigen::Matrix<double, 5, 1> step = -A.ldlt().solve(g);
      auto [Rn, tn] = perturbed(R, t, step);
      sampson_residuals(skew(tn) * Rn, u, idx, Kjt, Ki, rp);
      const double c = rp.squaredNorm();
      if (c < cost) {
        const double rel = (cost - c) / cost;
        R = Rn, t = tn, r = rp, cost = c;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < 1e-12) it = 50;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  const Mat3 E = skew(t) * R;
  return E / E.norm();
}

}  // namespace

Mat3 project_to_essential(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s = 0.5 * (svd.singularValues()[0] + svd.singularValues()[1]);
  const Mat3 E = svd.matrixU() * Eigen::Vector3d(s, s, 0.0).asDiagonal() * svd.matrixV().transpose();
  const double n = E.norm();
  return n > 0.0 ? Mat3(E / n) : E;
}

Mat3 fit_essential(const std::vector<Vec2>& x_i, const std::vector<Vec2>& x_j) {
  if (x_i.size() != x_j.size() || x_i.size() < 8) {
    throw InvalidArgument("the 8-point fit needs at least 8 correspondences");
  }
  return project_to_essential(solve_linear(x_i, x_j, nullptr));
}

std::vector<double> sampson_distances_squared(const Mat3& E, const std::vector<Match>& matches,
                                              const CameraIntrinsics& K_i,
                                              const CameraIntrinsics& K_j) {
  std::vector<double> out;
  sampson_all(E, undistort_all(matches, K_i, K_j), K_i, K_j, out);
  return out;
}

EssentialEstimate estimate_essential_ransac(const std::vector<Match>& matches,
                                            const CameraIntrinsics& K_i,
                                            const CameraIntrinsics& K_j,
                                            const RansacOptions& options) {
  const int n = static_cast<int>(matches.size());
  if (n < 8) throw InvalidArgument(fmt::format("essential matrix needs 8 matches, got {}", n));
  if (!(options.threshold_px > 0.0)) throw InvalidArgument("RANSAC threshold must be positive");
  const Undistorted u = undistort_all(matches, K_i, K_j);
  const double thr2 = options.threshold_px * options.threshold_px;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  std::vector<double> d2, sorted;
  // A-contrario score: log of the expected number of false alarms of the
  // best inlier set over all thresholds up to threshold_px, as in ORSA/AC-
  // RANSAC. A fixed threshold (count or truncated MSAC) cannot tell the true
  // motion from a wrong translation that fits every inlier within a pixel
  // and picks up a few outliers besides. Lower is better.
  const double diag = std::hypot(K_j.width, K_j.height);
  const double log_alpha0 = std::log(2.0 * diag / (static_cast<double>(K_j.width) * K_j.height));
  const double floor2 = 1e-12 * thr2;
  std::vector<double> log_choose_n(n + 1), log_choose_8(n + 1, 0.0);
  for (int k = 0; k <= n; ++k) {
    log_choose_n[k] = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    if (k >= 8) log_choose_8[k] = std::lgamma(k + 1.0) - std::lgamma(9.0) - std::lgamma(k - 7.0);
  }
  const double log_tests = std::log(std::max(n - 8, 1));
  auto score = [&](const Mat3& E, int* count) {
    sampson_all(E, u, K_i, K_j, d2);
    sorted.clear();
    for (double v : d2)
      if (v <= thr2) sorted.push_back(std::max(v, floor2));  // NaN never counts
    if (count != nullptr) *count = static_cast<int>(sorted.size());
    std::sort(sorted.begin(), sorted.end());
    double best_nfa = std::numeric_limits<double>::infinity();
    for (int k = 9; k <= static_cast<int>(sorted.size()); ++k) {
      const double log_alpha = std::min(0.0, log_alpha0 + 0.5 * std::log(sorted[k - 1]));
      const double nfa = log_tests + log_choose_n[k] + log_choose_8[k] + (k - 8) * log_alpha;
      best_nfa = std::min(best_nfa, nfa);
    }
    return best_nfa;
  };

  Mat3 best_E = Mat3::Zero();
  int best = -1;
  double best_score = std::numeric_limits<double>::infinity();
  long needed = options.max_iterations;
  int it = 0;
  std::vector<Vec2> si(8), sj(8);
  int sample[8];
  for (; it < needed; ++it) {
    for (int k = 0; k < 8; ++k) {
      int c;
      do {
        c = pick(rng);
      } while (std::find(sample, sample + k, c) != sample + k);
      sample[k] = c;
      si[k] = u.n_i[c];
      sj[k] = u.n_j[c];
    }
    const Mat3 E = project_to_essential(solve_linear(si, sj, nullptr));
    int c = 0;
    const double sc = score(E, &c);
    if (sc < best_score) best_score = sc, best_E = E;
    if (c > best) {
      best = c;
      const double w = static_cast<double>(c) / n;
      const double miss = 1.0 - std::pow(w, 8);
      if (miss <= 0.0) {
        needed = it + 1;
      } else if (miss < 1.0) {
        needed = std::min<long>(
            options.max_iterations,
            static_cast<long>(std::ceil(std::log(1.0 - options.confidence) / std::log(miss))));
      }
    }
  }

  auto inliers_of = [&](const Mat3& E, double* quality) {
    const double s = score(E, nullptr);
    if (quality != nullptr) *quality = s;
    std::vector<int> idx;
    for (int k = 0; k < n; ++k)
      if (d2[k] <= thr2) idx.push_back(k);
    return idx;
  };

  // Degeneracy check on the consensus set of the best sample.
  double spread = 1.0;
  {
    const auto idx = inliers_of(best_E, nullptr);
    if (idx.size() >= 8) {
      std::vector<Vec2> ai, aj;
      for (int k : idx) ai.push_back(u.n_i[k]), aj.push_back(u.n_j[k]);
      solve_linear(ai, aj, &spread);
    }
  }

  // Re-fit on the consensus set while the score improves.
  auto local_fit = [&](Mat3 E) {
    double current = 0.0;
    std::vector<int> inliers = inliers_of(E, &current);
    for (int round = 0; round < 5 && inliers.size() >= 8; ++round) {
      const Mat3 next = refine_essential(E, u, inliers, K_i, K_j);
      double s = 0.0;
      auto grown = inliers_of(next, &s);
      if (!(s < current)) break;
      const bool small = current - s < 1e-9 * std::abs(current);
      E = next, current = s;
      inliers = std::move(grown);
      if (small) break;
    }
    return E;
  };

  // With the camera turning on the tunnel axis most of the image motion is
  // rotational, and an 8-point sample can land in the basin of a wrong
  // translation direction. The re-fit therefore also starts from the best
  // sample's rotation combined with a fixed set of directions.
  Mat3 E = best_E;
  double best_quality = std::numeric_limits<double>::infinity();
  if (spread >= 1e-9) {
    std::vector<Mat3> starts{best_E};
    Eigen::JacobiSVD<Mat3> svd(best_E, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU(), V = svd.matrixV();
    if (U.determinant() < 0) U = -U;
    if (V.determinant() < 0) V = -V;
    Mat3 W;
    W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    for (const Mat3& R : {Mat3(U * W * V.transpose()), Mat3(U * W.transpose() * V.transpose())}) {
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
          for (int c = 0; c <= 1; ++c) {
            // one of each +-t pair
            if (c == 0 && (b < 0 || (b == 0 && a <= 0))) continue;
            starts.push_back(skew(Vec3(a, b, c).normalized()) * R);
          }
    }
    for (const Mat3& s0 : starts) {
      const Mat3 cand = local_fit(s0);
      double quality = 0.0;
      inliers_of(cand, &quality);
      if (quality < best_quality) best_quality = quality, E = cand;
    }
  }
  std::vector<int> inliers = inliers_of(E, nullptr);

  EssentialEstimate est;
  est.E = E;
  est.inliers = std::move(inliers);
  est.inlier_ratio = static_cast<double>(est.inliers.size()) / n;
  est.threshold_px = options.threshold_px;
  est.iterations = it;
  if (est.inlier_ratio < options.min_inlier_ratio || est.inliers.size() < 8) {
    throw DegenerateConfiguration(fmt::format(
        "essential matrix supported by only {:.1f}% of matches", 100.0 * est.inlier_ratio));
  }
  if (spread < 1e-9) {
    throw DegenerateConfiguration(
        "correspondences do not determine an essential matrix (zero baseline?)");
  }
  return est;
}

std::optional<Vec3> triangulate_pair(const Mat3& R, const Vec3& t, const Vec2& n_i,
                                     const Vec2& n_j) {
  const Vec3 ray_i(n_i.x(), n_i.y(), 1.0);
  const Vec3 ray_j = R.transpose() * Vec3(n_j.x(), n_j.y(), 1.0);
  if (t.norm() == 0.0 || ray_i.cross(ray_j).norm() < 1e-12 * ray_i.norm() * ray_j.norm()) {
    return std::nullopt;
  }
  Eigen::Matrix4d A;
  Eigen::Matrix<double, 3, 4> P;
  P << R, t;
  A.row(0) << -1.0, 0.0, n_i.x(), 0.0;
  A.row(1) << 0.0, -1.0, n_i.y(), 0.0;
  A.row(2) = n_j.x() * P.row(2) - P.row(0);
  A.row(3) = n_j.y() * P.row(2) - P.row(1);
  for (int r = 0; r < 4; ++r) A.row(r).normalize();
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d X = svd.matrixV().col(3);
  if (std::abs(X[3]) < 1e-12 * X.head<3>().norm() || X[3] == 0.0) return std::nullopt;
  return Vec3(X.head<3>() / X[3]);
}

RelativePose recover_relative_pose(const EssentialEstimate& estimate,
                                   const std::vector<Match>& matches,
                                   const CameraIntrinsics& K_i, const CameraIntrinsics& K_j,
                                   double min_parallax) {
  if (estimate.inliers.empty()) throw DegenerateConfiguration("no inliers to recover a pose from");
  Eigen::JacobiSVD<Mat3> svd(estimate.E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0) U.col(2) *= -1.0;
  if (V.determinant() < 0) V.col(2) *= -1.0;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 Rs[2] = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const Vec3 tu = U.col(2);

  std::vector<Vec2> ni, nj;
  for (int k : estimate.inliers) {
    ni.push_back(undistort_normalized(K_i, matches[k].pixel_i()));
    nj.push_back(undistort_normalized(K_j, matches[k].pixel_j()));
  }

  struct Candidate {
    RelativePose pose;
    double mean_error = std::numeric_limits<double>::infinity();
  };
  std::optional<Candidate> best;
  int second_support = -1;
  for (const Mat3& R : Rs) {
    for (double sign : {1.0, -1.0}) {
      const Vec3 t = sign * tu;
      Candidate c;
      c.pose.rotation = R;
      c.pose.translation_direction = t;
      double err = 0.0;
      std::vector<double> parallax;
      const Vec3 cj = -R.transpose() * t;  // camera j center in frame i
      for (std::size_t k = 0; k < ni.size(); ++k) {
        const auto X = triangulate_pair(R, t, ni[k], nj[k]);
        if (!X) continue;
        const Vec3 Xj = R * *X + t;
        if (X->z() <= 0.0 || Xj.z() <= 0.0) continue;
        ++c.pose.cheirality_support;
        err += K_i.f * (X->head<2>() / X->z() - ni[k]).norm() +
               K_j.f * (Xj.head<2>() / Xj.z() - nj[k]).norm();
        const Vec3 a = X->normalized(), b = (*X - cj).normalized();
        parallax.push_back(std::acos(std::clamp(a.dot(b), -1.0, 1.0)));
      }
      if (c.pose.cheirality_support > 0) {
        c.mean_error = err / (2.0 * c.pose.cheirality_support);
        std::nth_element(parallax.begin(), parallax.begin() + parallax.size() / 2, parallax.end());
        c.pose.median_parallax = parallax[parallax.size() / 2];
      }
      const bool better =
          !best || c.pose.cheirality_support > best->pose.cheirality_support ||
          (c.pose.cheirality_support == best->pose.cheirality_support &&
           c.mean_error < best->mean_error);
      if (better) {
        if (best) second_support = std::max(second_support, best->pose.cheirality_support);
        best = c;
      } else {
        second_support = std::max(second_support, c.pose.cheirality_support);
      }
    }
  }
  const int n = static_cast<int>(ni.size());
  if (best->pose.cheirality_support * 2 < n) {
    throw DegenerateConfiguration(fmt::format(
        "no pose decomposition puts a majority of points in front ({} of {})",
        best->pose.cheirality_support, n));
  }
  if (!(best->pose.median_parallax >= min_parallax)) {
    throw DegenerateConfiguration(fmt::format(
        "median parallax {:.4f} deg is too small to define a translation direction",
        best->pose.median_parallax * 180.0 / M_PI));
  }
  return best->pose;
}

EdgePose estimate_edge(const Edge& edge, const std::vector<Match>& matches,
                       const CameraIntrinsics& K, const RansacOptions& options) {
  const EssentialEstimate est = estimate_essential_ransac(matches, K, K, options);
  EdgePose out;
  out.edge = edge;
  out.pose = recover_relative_pose(est, matches, K, K);
  out.inliers.reserve(est.inliers.size());
  for (int k : est.inliers) out.inliers.push_back(matches[k]);
  return out;
}

namespace {

// Inlier points triangulated with a unit baseline, in the frame of camera i.
std::vector<Vec3> unit_points(const EdgePose& edge, const CameraIntrinsics& K) {
  std::vector<Vec3> pts;
  pts.reserve(edge.inliers.size());
  const Mat3& R = edge.pose.rotation;
  const Vec3& t = edge.pose.translation_direction;
  for (const auto& m : edge.inliers) {
    const auto X = triangulate_pair(R, t, undistort_normalized(K, m.pixel_i()),
                                    undistort_normalized(K, m.pixel_j()));
    if (X && X->z() > 0.0 && (R * *X + t).z() > 0.0) pts.push_back(*X);
  }
  return pts;
}

double median_cost(double scale, const std::vector<Vec3>& pts, const PoseSE3& pose_i,
                   const ScenePrior& prior, std::vector<double>& scratch) {
  scratch.resize(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    scratch[k] = prior.distance_to_surface(pose_i.rotation * (scale * pts[k]) + pose_i.translation);
  }
  auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
  std::nth_element(scratch.begin(), mid, scratch.end());
  return *mid;
}

double fit_scale(const std::vector<Vec3>& pts, const PoseSE3& pose_i, const ScenePrior& prior,
                 const ChainOptions& options, const Edge& edge) {
  if (pts.empty()) {
    throw DegenerateConfiguration(
        fmt::format("edge ({}, {}) has no triangulable inliers", edge.first, edge.second));
  }
  std::vector<double> scratch;
  const double lo = std::log(options.min_scale), hi = std::log(options.max_scale);
  constexpr int kGrid = 240;
  int best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int g = 0; g <= kGrid; ++g) {
    const double c = median_cost(std::exp(lo + (hi - lo) * g / kGrid), pts, pose_i, prior, scratch);
    if (c < best_cost) best_cost = c, best = g;
  }
  if (best == 0 || best == kGrid) {
    throw ConvergenceError(fmt::format(
        "scale of edge ({}, {}) has no minimum inside [{}, {}] m", edge.first, edge.second,
        options.min_scale, options.max_scale));
  }
  // Golden-section search on log scale around the best grid point.
  double a = lo + (hi - lo) * (best - 1) / kGrid, b = lo + (hi - lo) * (best + 1) / kGrid;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = median_cost(std::exp(x1), pts, pose_i, prior, scratch);
  double f2 = median_cost(std::exp(x2), pts, pose_i, prior, scratch);
  for (int it = 0; it < 100 && b - a > 1e-12; ++it) {
    if (f1 <= f2) {
      b = x2, x2 = x1, f2 = f1;
      x1 = b - g * (b - a);
      f1 = median_cost(std::exp(x1), pts, pose_i, prior, scratch);
    } else {
      a = x1, x1 = x2, f1 = f2;
      x2 = a + g * (b - a);
      f2 = median_cost(std::exp(x2), pts, pose_i, prior, scratch);
    }
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace

double edge_prior_cost(double scale, const EdgePose& edge, const PoseSE3& pose_i,
                       const ScenePrior& prior, const CameraIntrinsics& K) {
  std::vector<double> scratch;
  const auto pts = unit_points(edge, K);
  if (pts.empty()) throw DegenerateConfiguration("edge has no triangulable inliers");
  return median_cost(scale, pts, pose_i, prior, scratch);
}

ChainResult chain_and_scale(int frame_count, const std::vector<EdgePose>& edges,
                            const ScenePrior& prior, const CameraIntrinsics& K,
                            const ChainOptions& options) {
  if (frame_count < 1) throw InvalidArgument("nothing to chain");
  if (!(options.min_scale > 0.0 && options.max_scale > options.min_scale)) {
    throw InvalidArgument("scale search bracket must satisfy 0 < min < max");
  }
  std::map<Edge, const EdgePose*> by_edge;
  for (const auto& e : edges) by_edge[e.edge] = &e;
  ChainResult out;
  out.poses.resize(frame_count);
  out.poses[0] = options.anchor;
  for (int j = 1; j < frame_count; ++j) {
    const EdgePose* use = nullptr;
    if (auto it = by_edge.find({j - 1, j}); it != by_edge.end()) {
      use = it->second;
    } else {
      for (int i = j - 2; i >= 0 && use == nullptr; --i) {
        if (auto it2 = by_edge.find({i, j}); it2 != by_edge.end()) use = it2->second;
      }
    }
    if (use == nullptr) {
      throw DegenerateConfiguration(
          fmt::format("frame {} has no estimated edge to an earlier frame", j));
    }
    const int i = use->edge.first;
    const PoseSE3& pi = out.poses[i];
    const double s = fit_scale(unit_points(*use, K), pi, prior, options, use->edge);
    PoseSE3 pj;
    pj.rotation = pi.rotation * use->pose.rotation.transpose();
    pj.translation = pi.translation - s * (pj.rotation * use->pose.translation_direction);
    out.poses[j] = pj;
    out.edge_scales.push_back(s);
    out.edges_used.push_back(use->edge);
  }
  return out;
}

namespace {

// Correspondence between a pixel ray of a placed frame and a pixel of frame k.
struct Link {
  int i = 0, k = 0;
  Vec3 ray;  // unit, camera i frame
  Vec2 pixel;
};

Vec3 surface_normal(const ScenePrior& prior, const SurfaceHit& h) {
  if (prior.is_cylinder()) return Vec3(h.position.x(), 0.0, h.position.z()).normalized();
  return box_plane(prior.as_box(), h.surface).normal;
}

// World point of a link, or nothing when the ray misses or lands behind k.
std::optional<SurfaceHit> link_hit(const Link& l, const std::vector<PoseSE3>& poses,
                                   const ScenePrior& prior) {
  const PoseSE3& pi = poses[l.i];
  try {
    const SurfaceHit h = intersect_ray_prior(Ray(pi.translation, pi.rotation * l.ray), prior);
    const PoseSE3& pk = poses[l.k];
    if ((pk.rotation.transpose() * (h.position - pk.translation)).z() <= 1e-9) return std::nullopt;
    return h;
  } catch (const GeometryError&) {
    return std::nullopt;
  }
}

double cauchy_cost(double r2, double c) { return 0.5 * c * c * std::log1p(r2 / (c * c)); }

double total_cost(const std::vector<Link>& links, const std::vector<PoseSE3>& poses,
                  const ScenePrior& prior, const CameraIntrinsics& K, double c) {
  double cost = 0.0;
  for (const auto& l : links) {
    const auto h = link_hit(l, poses, prior);
    if (!h) continue;
    const PoseSE3& pk = poses[l.k];
    const Vec2 r = project(K, pk.rotation.transpose() * (h->position - pk.translation)) - l.pixel;
    cost += cauchy_cost(r.squaredNorm(), c);
  }
  return cost;
}

// Levenberg-Marquardt over the camera-to-world poses 1..last (pose 0 fixed),
// perturbed as R <- exp(dw) R, c <- c + dc, on the Cauchy-weighted
// reprojection of every link.
void joint_refine(std::vector<PoseSE3>& poses, int last, const std::vector<Link>& links,
                  const ScenePrior& prior, const CameraIntrinsics& K, double c, int max_iterations) {
  const int n = 6 * last;
  if (n == 0) return;
  double lambda = 1e-3;
  double cost = total_cost(links, poses, prior, K, c);
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (const auto& l : links) {
      const auto h = link_hit(l, poses, prior);
      if (!h) continue;
      const PoseSE3& pi = poses[l.i];
      const PoseSE3& pk = poses[l.k];
      const Mat3 Rcw = pk.rotation.transpose();
      const auto J = reprojection_jacobian(Rcw, -(Rcw * pk.translation), h->position, l.pixel, K);
      const double w = 1.0 / (1.0 + J.residual.squaredNorm() / (c * c));
      Eigen::Matrix<double, 2, 6> Jk, Ji;
      // Observing frame: X_c = R^T (X - c).
      Jk.leftCols<3>() = J.d_point * skew(h->position - pk.translation);
      Jk.rightCols<3>() = -J.d_point;
      // Source frame: the hit slides along its ray and stays on the surface.
      const Vec3 d = pi.rotation * l.ray;
      const Vec3 nrm = surface_normal(prior, *h);
      const Mat3 P = Mat3::Identity() - d * nrm.transpose() / nrm.dot(d);
      Ji.leftCols<3>() = -J.d_point * P * (h->distance * skew(d));
      Ji.rightCols<3>() = J.d_point * P;
      const int bk = 6 * (l.k - 1), bi = 6 * (l.i - 1);
      H.block<6, 6>(bk, bk) += w * Jk.transpose() * Jk;
      g.segment<6>(bk) += w * Jk.transpose() * J.residual;
      if (l.i > 0) {
        H.block<6, 6>(bi, bi) += w * Ji.transpose() * Ji;
        H.block<6, 6>(bi, bk) += w * Ji.transpose() * Jk;
        H.block<6, 6>(bk, bi) += w * Jk.transpose() * Ji;
        g.segment<6>(bi) += w * Ji.transpose() * J.residual;
      }
    }
    bool accepted = false;
    while (!accepted && lambda < 1e12) {
      Eigen::MatrixXd A = H;
      A.diagonal() += lambda * H.diagonal() + Eigen::VectorXd::Constant(n, 1e-12);
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      std::vector<PoseSE3> trial = poses;
      for (int f = 1; f <= last; ++f) {
        const auto s = step.segment<6>(6 * (f - 1));
        trial[f].rotation = nearest_rotation(so3_exp(s.head<3>()) * poses[f].rotation);
        trial[f].translation = poses[f].translation + s.tail<3>();
      }
      const double trial_cost = total_cost(links, trial, prior, K, c);
      if (trial_cost < cost) {
        const double decrease = (cost - trial_cost) / std::max(cost, 1e-300);
        poses = std::move(trial);
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-9);
        accepted = true;
        if (decrease < 1e-9 || step.lpNorm<Eigen::Infinity>() < 1e-12) return;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) return;
  }
}

struct Correspondence {
  Vec3 X;
  Vec2 pixel;
};

// Gauss-Newton on world-to-camera (R, t); weights from `cauchy` (0 = plain).
void solve_resection(Mat3& R, Vec3& t, const std::vector<Correspondence>& pts,
                     const CameraIntrinsics& K, double cauchy, int max_iterations) {
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& c : pts) {
      if ((R * c.X + t).z() <= 1e-9) continue;
      const auto J = reprojection_jacobian(R, t, c.X, c.pixel, K);
      double w = 1.0;
      if (cauchy > 0.0) w = 1.0 / (1.0 + J.residual.squaredNorm() / (cauchy * cauchy));
      H += w * J.d_pose.transpose() * J.d_pose;
      g += w * J.d_pose.transpose() * J.residual;
    }
    const Eigen::Matrix<double, 6, 1> d = H.ldlt().solve(-g);
    if (!d.allFinite()) break;
    R = so3_exp(d.head<3>()) * R;
    t += d.tail<3>();
    if (d.norm() < 1e-12) break;
  }
}

// Places frame k from the links into it, starting at `predicted`.
std::optional<PoseSE3> resect_frame(const PoseSE3& predicted, const std::vector<Correspondence>& pts,
                                    const CameraIntrinsics& K, const ResectionOptions& options,
                                    int& support) {
  support = 0;
  if (static_cast<int>(pts.size()) < options.min_points) return std::nullopt;
  Mat3 R = predicted.rotation.transpose();
  Vec3 t = -(R * predicted.translation);
  // The prediction can be tens of pixels off; shrink the robust scale.
  for (double c = 64.0; c > options.cauchy_px; c /= 4.0) solve_resection(R, t, pts, K, c, options.max_iterations);
  solve_resection(R, t, pts, K, options.cauchy_px, options.max_iterations);
  std::vector<Correspondence> kept;
  for (const auto& c : pts) {
    const Vec3 Xc = R * c.X + t;
    if (Xc.z() > 1e-9 && (project(K, Xc) - c.pixel).norm() <= options.outlier_px) kept.push_back(c);
  }
  if (static_cast<int>(kept.size()) < options.min_points) return std::nullopt;
  solve_resection(R, t, kept, K, 0.0, options.max_iterations);
  PoseSE3 p;
  p.rotation = nearest_rotation(R.transpose());
  p.translation = -(p.rotation * t);
  support = static_cast<int>(kept.size());
  return p;
}

}  // namespace

ResectionResult resect_with_prior(const std::vector<PoseSE3>& chained,
                                  const std::vector<EdgePose>& edges, const ScenePrior& prior,
                                  const CameraIntrinsics& K, const ResectionOptions& options) {
  const int m = static_cast<int>(chained.size());
  if (m == 0) throw InvalidArgument("no poses to resect");
  std::vector<std::vector<Link>> into(m);
  for (const auto& e : edges) {
    const auto [i, k] = e.edge;
    if (i < 0 || k >= m || i >= k) {
      throw InvalidArgument(fmt::format("edge ({}, {}) does not fit {} frames", i, k, m));
    }
    for (const auto& mt : e.inliers) into[k].push_back({i, k, pixel_ray(K, mt.pixel_i()).direction, mt.pixel_j()});
  }
  ResectionResult out;
  out.poses.resize(m);
  out.support.assign(m, 0);
  out.poses[0] = chained[0];
  std::vector<Link> placed_links;
  for (int k = 1; k < m; ++k) {
    const PoseSE3 predicted = compose(out.poses[k - 1], compose(invert(chained[k - 1]), chained[k]));
    std::vector<Correspondence> pts;
    for (const auto& l : into[k]) {
      out.poses[k] = predicted;  // only the source pose matters for the hit
      if (const auto h = link_hit(l, out.poses, prior)) pts.push_back({h->position, l.pixel});
    }
    const auto placed = resect_frame(predicted, pts, K, options, out.support[k]);
    out.poses[k] = placed ? *placed : predicted;
    placed_links.insert(placed_links.end(), into[k].begin(), into[k].end());
    if (options.joint_every > 0 && ((k + 1) % options.joint_every == 0 || k == m - 1)) {
      std::vector<PoseSE3> window(out.poses.begin(), out.poses.begin() + k + 1);
      for (double c = 16.0; c > options.cauchy_px; c /= 4.0) {
        joint_refine(window, k, placed_links, prior, K, c, options.max_iterations);
      }
      joint_refine(window, k, placed_links, prior, K, options.cauchy_px, options.max_iterations);
      std::copy(window.begin(), window.end(), out.poses.begin());
    }
  }
  return out;
}

}  // namespace tunnelrec
