#include "tunnelrec/ba/bundle_adjustment.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/core/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace tunnelrec {

namespace {

constexpr double kMinTriangulationAngle = 0.5 * M_PI / 180.0;
// Tracks are reduced in this many fixed blocks so sums never depend on the
// thread count.
constexpr std::size_t kBlocks = 32;

struct WorldToCamera {
  Mat3 R;
  Vec3 t;
  static WorldToCamera from(const PoseSE3& p) {
    return {p.rotation.transpose(), -(p.rotation.transpose() * p.translation)};
  }
  PoseSE3 to_pose() const {
    PoseSE3 p;
    p.rotation = R.transpose();
    p.translation = -(R.transpose() * t);
    return p;
  }
};

void check_frames(const Track& track, std::size_t pose_count) {
  for (const auto& ob : track.observations) {
    if (ob.frame < 0 || static_cast<std::size_t>(ob.frame) >= pose_count) {
      throw InvalidArgument(
          fmt::format("observation references frame {} but only {} poses exist", ob.frame,
                      pose_count));
    }
  }
}

std::pair<std::size_t, std::size_t> block_range(std::size_t b, std::size_t n) {
  const std::size_t chunk = (n + kBlocks - 1) / kBlocks;
  const std::size_t lo = std::min(n, b * chunk);
  return {lo, std::min(n, lo + chunk)};
}

}  // namespace

double PruningConfig::resolved_geometry_tolerance(const ScenePrior& prior) const {
  if (geometry_tolerance > 0.0) return geometry_tolerance;
  if (prior.is_cylinder()) return 0.1 * prior.as_cylinder().radius;
  const BoxSection& b = prior.as_box();
  const double w = -(b.left.offset + b.right.offset);
  const double h = -(b.floor.offset + b.ceiling.offset);
  return 0.1 * 0.5 * std::min(w, h);
}

ReprojectionJacobian reprojection_jacobian(const Mat3& R_cw, const Vec3& t_cw, const Vec3& X,
                                           const Vec2& observed, const CameraIntrinsics& K) {
  const Vec3 RX = R_cw * X;
  const Vec3 Xc = RX + t_cw;
  if (!(Xc.z() > 0.0)) throw PointBehindCamera("point behind camera in reprojection");
  const double iz = 1.0 / Xc.z();
  const double x = Xc.x() * iz, y = Xc.y() * iz;
  const double r2 = x * x + y * y;
  const double d = K.distortion_factor(r2);
  const double dd = K.k1 + 2.0 * K.k2 * r2;  // d(d)/d(r2)
  ReprojectionJacobian out;
  out.residual = Vec2(K.f * x * d + K.cx, K.f * y * d + K.cy) - observed;
  // pixel wrt normalized (x, y)
  Eigen::Matrix2d dpx;
  dpx << K.f * (d + 2.0 * x * x * dd), K.f * 2.0 * x * y * dd, K.f * 2.0 * x * y * dd,
      K.f * (d + 2.0 * y * y * dd);
  // normalized wrt camera point
  Eigen::Matrix<double, 2, 3> dn;
  dn << iz, 0.0, -x * iz, 0.0, iz, -y * iz;
  const Eigen::Matrix<double, 2, 3> dXc = dpx * dn;
  out.d_point = dXc * R_cw;
  out.d_pose.leftCols<3>() = -dXc * skew(RX);
  out.d_pose.rightCols<3>() = dXc;
  return out;
}

Vec3 triangulate(const Track& track, const std::vector<PoseSE3>& poses, const CameraIntrinsics& K) {
  const std::size_t n = track.observations.size();
  if (n < 2) throw InvalidArgument("triangulation needs at least two observations");
  check_frames(track, poses.size());
  std::vector<Vec3> rays(n);
  std::vector<WorldToCamera> cams(n);
  std::vector<Vec2> norm(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& ob = track.observations[k];
    const PoseSE3& p = poses[ob.frame];
    cams[k] = WorldToCamera::from(p);
    norm[k] = undistort_normalized(K, ob.pixel);
    rays[k] = (p.rotation * Vec3(norm[k].x(), norm[k].y(), 1.0)).normalized();
  }
  double widest = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      widest = std::max(widest, std::acos(std::clamp(rays[a].dot(rays[b]), -1.0, 1.0)));
  if (widest < kMinTriangulationAngle) {
    throw DegenerateConfiguration(fmt::format(
        "rays are near parallel ({:.3f} deg), point cannot be triangulated", widest * 180 / M_PI));
  }

  Eigen::Matrix4d AtA = Eigen::Matrix4d::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    Eigen::Matrix<double, 3, 4> P;
    P << cams[k].R, cams[k].t;
    Eigen::RowVector4d r1 = norm[k].x() * P.row(2) - P.row(0);
    Eigen::RowVector4d r2 = norm[k].y() * P.row(2) - P.row(1);
    r1.normalize();
    r2.normalize();
    AtA += r1.transpose() * r1 + r2.transpose() * r2;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(AtA);
  const Eigen::Vector4d h = es.eigenvectors().col(0);
  if (std::abs(h[3]) < 1e-15) throw DegenerateConfiguration("triangulated point at infinity");
  Vec3 X = h.head<3>() / h[3];

  // One Gauss-Newton step on the reprojection error, kept if it helps.
  auto cost_at = [&](const Vec3& P, Eigen::Matrix3d* H, Vec3* g) {
    double c = 0.0;
    if (H) H->setZero();
    if (g) g->setZero();
    for (std::size_t k = 0; k < n; ++k) {
      if (!((cams[k].R * P + cams[k].t).z() > 0.0)) return std::numeric_limits<double>::infinity();
      const auto J = reprojection_jacobian(cams[k].R, cams[k].t, P, track.observations[k].pixel, K);
      c += J.residual.squaredNorm();
      if (H) *H += J.d_point.transpose() * J.d_point;
      if (g) *g += J.d_point.transpose() * J.residual;
    }
    return c;
  };
  Eigen::Matrix3d H;
  Vec3 g;
  const double c0 = cost_at(X, &H, &g);
  if (std::isfinite(c0)) {
    const Vec3 step = H.ldlt().solve(-g);
    if (step.allFinite()) {
      const Vec3 X1 = X + step;
      if (cost_at(X1, nullptr, nullptr) < c0) X = X1;
    }
  }
  return X;
}

std::size_t triangulate_tracks(std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K, int threads) {
  std::vector<std::uint8_t> degenerate(tracks.size(), 0);
  parallel_for(tracks.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Track& t = tracks[i];
      if (t.status != TrackStatus::Active) continue;
      try {
        const Vec3 X = triangulate(t, poses, K);
        bool front = true;
        for (const auto& ob : t.observations) {
          const PoseSE3& p = poses[ob.frame];
          front = front && (p.rotation.transpose() * (X - p.translation)).z() > 0.0;
        }
        if (front) {
          t.point = X;
          continue;
        }
      } catch (const DegenerateConfiguration&) {
      }
      t.point.reset();
      t.status = TrackStatus::Degenerate;
      degenerate[i] = 1;
    }
  });
  return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
}

std::size_t prune_geometry(std::vector<Track>& tracks, const ScenePrior& prior, double tolerance) {
  std::size_t pruned = 0;
  for (Track& t : tracks) {
    if (t.status != TrackStatus::Active || !t.point) continue;
    if (prior.distance_to_surface(*t.point) > tolerance) {
      t.status = TrackStatus::PrunedGeometry;
      ++pruned;
    }
  }
  return pruned;
}

namespace {

// Largest reprojection error of a track, or infinity if the point is behind
// one of its cameras.
double worst_error(const Track& t, const std::vector<PoseSE3>& poses, const CameraIntrinsics& K) {
  double worst = 0.0;
  for (const auto& ob : t.observations) {
    const PoseSE3& p = poses[ob.frame];
    const Vec3 Xc = p.rotation.transpose() * (*t.point - p.translation);
    if (!(Xc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, (project(K, Xc) - ob.pixel).norm());
  }
  return worst;
}

}  // namespace

std::size_t prune_reprojection(std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K, double threshold_px) {
  std::size_t pruned = 0;
  for (Track& t : tracks) {
    if (t.status != TrackStatus::Active || !t.point) continue;
    check_frames(t, poses.size());
    if (worst_error(t, poses, K) > threshold_px) {
      t.status = TrackStatus::PrunedReprojection;
      ++pruned;
    }
  }
  return pruned;
}

double mean_reprojection_error(const std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Track& t : tracks) {
    if (t.status != TrackStatus::Active || !t.point) continue;
    for (const auto& ob : t.observations) {
      const PoseSE3& p = poses[ob.frame];
      const Vec3 Xc = p.rotation.transpose() * (*t.point - p.translation);
      if (!(Xc.z() > 0.0)) continue;
      sum += (project(K, Xc) - ob.pixel).norm();
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt with Schur complement

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

class Solver {
 public:
  Solver(std::vector<WorldToCamera> cams, std::vector<Track>& tracks, const CameraIntrinsics& K,
         const BAOptions& opt)
      : cams_(std::move(cams)), tracks_(tracks), K_(K), opt_(opt) {
    for (std::size_t i = 0; i < tracks_.size(); ++i) {
      if (tracks_[i].status == TrackStatus::Active && tracks_[i].point) active_.push_back(i);
    }
    obs_offset_.resize(active_.size() + 1, 0);
    for (std::size_t a = 0; a < active_.size(); ++a) {
      obs_offset_[a + 1] = obs_offset_[a] + tracks_[active_[a]].observations.size();
    }
    const std::size_t n_obs = obs_offset_.back();
    jp_.resize(n_obs);
    jc_.resize(n_obs);
    res_.resize(n_obs);
    points_.resize(active_.size());
    for (std::size_t a = 0; a < active_.size(); ++a) points_[a] = *tracks_[active_[a]].point;
    vinv_.resize(active_.size());
    gp_.resize(active_.size());
    n_cam_ = cams_.empty() ? 0 : 6 * (cams_.size() - 1);
    double biggest = 1e-9;
    for (std::size_t c = 1; c < cams_.size(); ++c) {
      for (int k = 0; k < 3; ++k) {
        if (std::abs(cams_[c].t[k]) > biggest) {
          biggest = std::abs(cams_[c].t[k]);
          scale_index_ = static_cast<int>(6 * (c - 1) + 3 + k);
        }
      }
    }
    std::vector<std::uint8_t> seen(cams_.size(), 0);
    for (std::size_t a : active_)
      for (const auto& ob : tracks_[a].observations) seen[ob.frame] = 1;
    for (std::size_t c = 1; c < cams_.size(); ++c) {
      if (!seen[c]) {
        throw DegenerateConfiguration(
            fmt::format("pose {} has no active observations; normal equations are rank deficient", c));
      }
    }
  }

  std::size_t active_count() const { return active_.size(); }
  std::size_t observation_count() const { return obs_offset_.back(); }

  // 0.5 * sum of (robustified) squared residuals; infinity if any point is
  // behind a camera.
  double cost(const std::vector<WorldToCamera>& cams, const std::vector<Vec3>& pts) const {
    std::array<double, kBlocks> part{};
    parallel_for(kBlocks, opt_.threads, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t b = b0; b < b1; ++b) {
        const auto [lo, hi] = block_range(b, active_.size());
        double s = 0.0;
        for (std::size_t a = lo; a < hi; ++a) {
          for (const auto& ob : tracks_[active_[a]].observations) {
            const WorldToCamera& c = cams[ob.frame];
            const Vec3 Xc = c.R * pts[a] + c.t;
            if (!(Xc.z() > 0.0)) {
              s = std::numeric_limits<double>::infinity();
              continue;
            }
            s += robust((project(K_, Xc) - ob.pixel).squaredNorm());
          }
        }
        part[b] = s;
      }
    });
    double total = 0.0;
    for (double p : part) total += p;
    return 0.5 * total;
  }

  double robust(double e2) const {
    const double h = opt_.huber_px;
    if (h <= 0.0) return e2;
    const double e = std::sqrt(e2);
    return e <= h ? e2 : 2.0 * h * e - h * h;
  }

  void linearize() {
    parallel_for(active_.size(), opt_.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t a = lo; a < hi; ++a) {
        std::size_t o = obs_offset_[a];
        for (const auto& ob : tracks_[active_[a]].observations) {
          const WorldToCamera& c = cams_[ob.frame];
          const auto J = reprojection_jacobian(c.R, c.t, points_[a], ob.pixel, K_);
          double w = 1.0;
          if (opt_.huber_px > 0.0) {
            const double e = J.residual.norm();
            if (e > opt_.huber_px) w = opt_.huber_px / e;
          }
          const double sw = std::sqrt(w);
          res_[o] = sw * J.residual;
          jp_[o] = sw * J.d_point;
          jc_[o] = sw * J.d_pose;
          ++o;
        }
      }
    });
  }

  // Builds the reduced camera system for damping lambda. Returns false if a
  // point block cannot be inverted.
  bool build_schur(double lambda, Eigen::MatrixXd& S, Eigen::VectorXd& rhs, double& grad_inf) {
    const std::size_t N = n_cam_;
    std::vector<Eigen::MatrixXd> Sb(kBlocks);
    std::vector<Eigen::VectorXd> rb(kBlocks);
    std::vector<Eigen::VectorXd> diag_b(kBlocks);
    std::array<double, kBlocks> gmax{};
    std::array<std::uint8_t, kBlocks> ok{};
    parallel_for(kBlocks, opt_.threads, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t b = b0; b < b1; ++b) {
        Sb[b] = Eigen::MatrixXd::Zero(N, N);
        rb[b] = Eigen::VectorXd::Zero(N);
        ok[b] = 1;
        double gm = 0.0;
        const auto [lo, hi] = block_range(b, active_.size());
        std::vector<Mat63> W;
        std::vector<int> idx;
        for (std::size_t a = lo; a < hi; ++a) {
          const auto& obs = tracks_[active_[a]].observations;
          const std::size_t o0 = obs_offset_[a];
          Eigen::Matrix3d V = Eigen::Matrix3d::Zero();
          Vec3 gp = Vec3::Zero();
          W.clear();
          idx.clear();
          for (std::size_t k = 0; k < obs.size(); ++k) {
            const std::size_t o = o0 + k;
            V += jp_[o].transpose() * jp_[o];
            gp += jp_[o].transpose() * res_[o];
            const int f = obs[k].frame;
            if (f == 0) continue;
            const int base = 6 * (f - 1);
            const Mat6 U = jc_[o].transpose() * jc_[o];
            const Vec6 gc = jc_[o].transpose() * res_[o];
            Sb[b].block<6, 6>(base, base) += U;
            rb[b].segment<6>(base) -= gc;
            W.push_back(jc_[o].transpose() * jp_[o]);
            idx.push_back(base);
          }
          gm = std::max(gm, gp.cwiseAbs().maxCoeff());
          Eigen::Matrix3d Vd = V;
          Vd.diagonal() *= 1.0 + lambda;
          Vd.diagonal().array() += 1e-12;
          Eigen::LLT<Eigen::Matrix3d> vllt(Vd);
          const Eigen::Matrix3d Vi = vllt.solve(Eigen::Matrix3d::Identity());
          if (vllt.info() != Eigen::Success || !Vi.allFinite()) {
            ok[b] = 0;
            continue;
          }
          vinv_[a] = Vi;
          gp_[a] = gp;
          for (std::size_t p = 0; p < W.size(); ++p) {
            const Mat63 WVi = W[p] * Vi;
            rb[b].segment<6>(idx[p]) += WVi * gp;
            for (std::size_t q = 0; q < W.size(); ++q) {
              Sb[b].block<6, 6>(idx[p], idx[q]) -= WVi * W[q].transpose();
            }
          }
        }
        gmax[b] = gm;
      }
    });
    S = Eigen::MatrixXd::Zero(N, N);
    rhs = Eigen::VectorXd::Zero(N);
    grad_inf = 0.0;
    bool all_ok = true;
    for (std::size_t b = 0; b < kBlocks; ++b) {
      S += Sb[b];
      rhs += rb[b];
      grad_inf = std::max(grad_inf, gmax[b]);
      all_ok = all_ok && ok[b];
    }
    // Camera gradient and damping use the undamped U diagonal, which is the
    // Schur diagonal before the point terms; recompute it directly.
    Eigen::VectorXd udiag = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(N);
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const auto& obs = tracks_[active_[a]].observations;
      for (std::size_t k = 0; k < obs.size(); ++k) {
        if (obs[k].frame == 0) continue;
        const std::size_t o = obs_offset_[a] + k;
        const int base = 6 * (obs[k].frame - 1);
        udiag.segment<6>(base) += jc_[o].colwise().squaredNorm().transpose();
        gc.segment<6>(base) += jc_[o].transpose() * res_[o];
      }
    }
    if (N > 0) grad_inf = std::max(grad_inf, gc.cwiseAbs().maxCoeff());
    S.diagonal() += lambda * udiag;
    S.diagonal().array() += 1e-12;
    if (scale_index_ >= 0) {
      // Scale gauge: this translation coordinate stays fixed.
      const Eigen::Index i = scale_index_;
      S.row(i).setZero();
      S.col(i).setZero();
      S(i, i) = 1.0;
      rhs[i] = 0.0;
    }
    return all_ok;
  }

  // Runs until convergence, the iteration budget, or prune_after
  // iterations (when non-negative).
  BAReport run(int max_iterations, int prune_after) {
    BAReport rep;
    double lambda = opt_.initial_lambda;
    double cur = cost(cams_, points_);
    int it = 0;
    double last_rel = std::numeric_limits<double>::infinity();
    rep.termination = "iteration limit";
    rep.converged = false;
    bool need_linearize = true;
    Eigen::MatrixXd S;
    Eigen::VectorXd rhs;
    // Residuals at rounding level: nothing left to fit.
    const double zero_cost = 0.5 * 1e-20 * static_cast<double>(observation_count());
    if (cur <= zero_cost) {
      rep.converged = true;
      rep.termination = "zero residual";
      rep.iterations = 0;
      return rep;
    }
    while (it < max_iterations) {
      if (prune_after >= 0 && it >= prune_after) break;
      if (need_linearize) {
        linearize();
        need_linearize = false;
      }
      double grad_inf = 0.0;
      const bool ok = build_schur(lambda, S, rhs, grad_inf);
      if (grad_inf < opt_.gradient_tolerance) {
        rep.converged = true;
        rep.termination = "gradient";
        break;
      }
      ++it;
      Eigen::VectorXd dc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_cam_));
      bool solved = ok;
      if (solved && n_cam_ > 0) {
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        solved = llt.info() == Eigen::Success;
        if (solved) {
          dc = llt.solve(rhs);
          solved = dc.allFinite();
        }
      }
      if (solved) {
        std::vector<WorldToCamera> cams = cams_;
        for (std::size_t c = 1; c < cams.size(); ++c) {
          const Vec6 d = dc.segment<6>(static_cast<Eigen::Index>(6 * (c - 1)));
          cams[c].R = so3_exp(d.head<3>()) * cams_[c].R;
          cams[c].t = cams_[c].t + d.tail<3>();
        }
        std::vector<Vec3> pts = points_;
        parallel_for(active_.size(), opt_.threads, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t a = lo; a < hi; ++a) {
            Vec3 g = gp_[a];
            const auto& obs = tracks_[active_[a]].observations;
            for (std::size_t k = 0; k < obs.size(); ++k) {
              if (obs[k].frame == 0) continue;
              const std::size_t o = obs_offset_[a] + k;
              g += jp_[o].transpose() * (jc_[o] * dc.segment<6>(6 * (obs[k].frame - 1)));
            }
            pts[a] = points_[a] - vinv_[a] * g;
          }
        });
        const double next = cost(cams, pts);
        if (next < cur) {
          last_rel = (cur - next) / cur;
          cams_ = std::move(cams);
          points_ = std::move(pts);
          cur = next;
          lambda = std::max(lambda / 3.0, 1e-12);
          if (cur <= zero_cost) {
            rep.converged = true;
            rep.termination = "zero residual";
            break;
          }
          need_linearize = true;
          runaway_ = runaway();
          if (!runaway_.empty()) {
            rep.termination = "restart";
            break;
          }
          if (last_rel < opt_.relative_decrease) {
            rep.converged = true;
            rep.termination = "relative decrease";
            break;
          }
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        // Even tiny gradient steps fail to reduce the cost: a minimum to
        // machine precision.
        rep.converged = true;
        rep.termination = "no further decrease";
        break;
      }
    }
    rep.iterations = it;
    return rep;
  }

  // Tracks whose viewing rays have collapsed below the triangulation limit;
  // their points are running off to infinity.
  std::vector<std::size_t> runaway() const {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const auto& obs = tracks_[active_[a]].observations;
      double widest = 0.0;
      for (std::size_t i = 0; i < obs.size() && widest < kMinTriangulationAngle; ++i) {
        const WorldToCamera& ci = cams_[obs[i].frame];
        const Vec3 ri = (points_[a] + ci.R.transpose() * ci.t).normalized();
        for (std::size_t j = i + 1; j < obs.size(); ++j) {
          const WorldToCamera& cj = cams_[obs[j].frame];
          const Vec3 rj = (points_[a] + cj.R.transpose() * cj.t).normalized();
          widest = std::max(widest, std::acos(std::clamp(ri.dot(rj), -1.0, 1.0)));
        }
      }
      if (widest < kMinTriangulationAngle) out.push_back(active_[a]);
    }
    return out;
  }

  void write_back() {
    for (std::size_t a = 0; a < active_.size(); ++a) tracks_[active_[a]].point = points_[a];
  }
  std::vector<WorldToCamera> take_cams() { return std::move(cams_); }

 private:
  std::vector<WorldToCamera> cams_;
  std::vector<Track>& tracks_;
  const CameraIntrinsics& K_;
  const BAOptions& opt_;
  std::vector<std::size_t> active_;
  std::vector<std::size_t> obs_offset_;
  std::vector<Eigen::Matrix<double, 2, 3>> jp_;
  std::vector<Eigen::Matrix<double, 2, 6>> jc_;
  std::vector<Vec2> res_;
  std::vector<Vec3> points_;
  std::vector<Eigen::Matrix3d> vinv_;
  std::vector<Vec3> gp_;
  std::size_t n_cam_ = 0;
  int scale_index_ = -1;

 public:
  std::vector<std::size_t> runaway_;
};

std::vector<PoseSE3> to_poses(const std::vector<WorldToCamera>& cams) {
  std::vector<PoseSE3> out;
  out.reserve(cams.size());
  for (const auto& c : cams) out.push_back(c.to_pose());
  return out;
}

}  // namespace

BAResult optimize(const BAProblem& problem, const BAOptions& options) {
  if (problem.poses.empty()) throw InvalidArgument("bundle adjustment needs at least one pose");
  problem.K.validate();
  problem.prior.validate();
  BAResult out;
  out.poses = problem.poses;
  out.tracks = problem.tracks;
  BAReport& rep = out.report;
  rep.geometry_tolerance = problem.pruning.resolved_geometry_tolerance(problem.prior);
  rep.reprojection_threshold = problem.pruning.reprojection_threshold;
  for (const Track& t : out.tracks) {
    if (t.observations.size() < 2) throw InvalidArgument("tracks need at least two observations");
    check_frames(t, out.poses.size());
  }
  // Untriangulated active tracks are triangulated from the initial poses.
  {
    std::vector<Track*> missing;
    for (Track& t : out.tracks)
      if (t.status == TrackStatus::Active && !t.point) missing.push_back(&t);
    if (!missing.empty()) {
      std::vector<Track> tmp;
      for (Track* t : missing) tmp.push_back(*t);
      triangulate_tracks(tmp, out.poses, problem.K, options.threads);
      for (std::size_t i = 0; i < missing.size(); ++i) *missing[i] = tmp[i];
    }
  }
  // Tracks whose point is behind a camera cannot be evaluated.
  for (Track& t : out.tracks) {
    if (t.status == TrackStatus::Active && t.point &&
        !std::isfinite(worst_error(t, out.poses, problem.K))) {
      t.status = TrackStatus::Degenerate;
    }
  }
  for (const Track& t : out.tracks) {
    rep.pruned_p1 += t.status == TrackStatus::PrunedMask;
    rep.pruned_p2 += t.status == TrackStatus::PrunedGeometry;
    rep.pruned_p3 += t.status == TrackStatus::PrunedReprojection;
    rep.degenerate += t.status == TrackStatus::Degenerate;
  }
  rep.before_px = mean_reprojection_error(out.tracks, out.poses, problem.K);

  std::vector<WorldToCamera> cams;
  for (const auto& p : out.poses) cams.push_back(WorldToCamera::from(p));

  bool p3_done = options.reprojection_prune_after < 0;
  int used = 0;
  for (;;) {
    Solver solver(std::move(cams), out.tracks, problem.K, options);
    const int prune_at = p3_done ? -1 : std::max(0, options.reprojection_prune_after - used);
    const BAReport phase = solver.run(options.max_iterations - used, prune_at);
    used += phase.iterations;
    solver.write_back();
    cams = solver.take_cams();
    rep.converged = phase.converged;
    rep.termination = phase.termination;
    if (!solver.runaway_.empty()) {
      for (std::size_t i : solver.runaway_) {
        out.tracks[i].status = TrackStatus::Degenerate;
        out.tracks[i].point.reset();
        ++rep.degenerate;
      }
      if (used >= options.max_iterations) break;
      continue;
    }
    if (p3_done) break;
    if (used < options.reprojection_prune_after && !phase.converged) break;
    // P3 once, then restart from the current state.
    p3_done = true;
    const auto poses = to_poses(cams);
    rep.pruned_p3 += prune_reprojection(out.tracks, poses, problem.K,
                                        problem.pruning.reprojection_threshold);
    if (used >= options.max_iterations) break;
  }
  out.poses = to_poses(cams);
  // Pose 0 is held fixed exactly.
  out.poses[0] = problem.poses[0];
  rep.iterations = used;
  rep.after_px = mean_reprojection_error(out.tracks, out.poses, problem.K);
  for (const Track& t : out.tracks) {
    if (t.status != TrackStatus::Active) continue;
    ++rep.active_tracks;
    rep.observations += t.observations.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

const char* ablation_name(AblationConfig c) {
  switch (c) {
    case AblationConfig::SBA: return "SBA";
    case AblationConfig::P1: return "P1";
    case AblationConfig::P2: return "P2";
    case AblationConfig::P1P2: return "P1+P2";
    case AblationConfig::P1P2P3: return "P1+P2+P3";
  }
  return "?";
}

AblationConfig parse_ablation_config(const std::string& name) {
  for (AblationConfig c : all_ablation_configs()) {
    if (name == ablation_name(c)) return c;
  }
  throw InvalidArgument(
      fmt::format("unknown ablation config '{}' (expected SBA, P1, P2, P1+P2, P1+P2+P3)", name));
}

std::vector<AblationConfig> all_ablation_configs() {
  return {AblationConfig::SBA, AblationConfig::P1, AblationConfig::P2, AblationConfig::P1P2,
          AblationConfig::P1P2P3};
}

BAResult run_ba_config(const AblationInput& input, AblationConfig config, const BAOptions& options) {
  const bool p1 = config == AblationConfig::P1 || config == AblationConfig::P1P2 ||
                  config == AblationConfig::P1P2P3;
  const bool p2 = config == AblationConfig::P2 || config == AblationConfig::P1P2 ||
                  config == AblationConfig::P1P2P3;
  const bool p3 = config == AblationConfig::P1P2P3;
  std::vector<Match> matches = input.matches;
  std::size_t masked = 0;
  if (p1 && !input.static_mask.empty()) {
    auto r = apply_static_mask(matches, input.static_mask);
    matches = std::move(r.matches);
    masked = r.removed;
  }
  TrackSet ts = build_tracks(matches);
  BAProblem problem;
  problem.poses = input.initial_poses;
  problem.tracks = std::move(ts.tracks);
  problem.K = input.K;
  problem.prior = input.prior;
  problem.pruning = input.pruning;
  triangulate_tracks(problem.tracks, problem.poses, problem.K, options.threads);
  if (p2) {
    prune_geometry(problem.tracks, problem.prior,
                   problem.pruning.resolved_geometry_tolerance(problem.prior));
  }
  BAOptions o = options;
  if (!p3) o.reprojection_prune_after = -1;
  BAResult r = optimize(problem, o);
  r.report.pruned_p1 = masked;
  return r;
}

std::vector<AblationRow> ablation_report(const AblationInput& input,
                                         const std::vector<AblationConfig>& configs,
                                         const BAOptions& options) {
  std::vector<AblationRow> rows;
  for (AblationConfig c : configs) rows.push_back({c, run_ba_config(input, c, options)});
  return rows;
}

void write_ba_report_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << "config,before_px,after_px,pruned_p1,pruned_p2,pruned_p3,iterations\n";
  for (const auto& r : rows) {
    const BAReport& b = r.result.report;
    out << fmt::format("{},{:.6f},{:.6f},{},{},{},{}\n", ablation_name(r.config), b.before_px,
                       b.after_px, b.pruned_p1, b.pruned_p2, b.pruned_p3, b.iterations);
  }
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string s = fmt::format("{:<10} {:>12} {:>12} {:>9} {:>9} {:>9} {:>6}\n", "config",
                              "before [px]", "after [px]", "P1", "P2", "P3", "iters");
  for (const auto& r : rows) {
    const BAReport& b = r.result.report;
    s += fmt::format("{:<10} {:>12.4f} {:>12.4f} {:>9} {:>9} {:>9} {:>6}\n",
                     ablation_name(r.config), b.before_px, b.after_px, b.pruned_p1, b.pruned_p2,
                     b.pruned_p3, b.iterations);
  }
  return s;
}

}  // namespace tunnelrec
