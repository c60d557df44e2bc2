#include "kernels_impl.hpp"

#include <cmath>
#include <limits>

namespace tunnelrec::simd::scalar {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void rotate(const double* R, const double* ix, const double* iy, const double* iz, double* ox,
            double* oy, double* oz, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    const double x = ix[i], y = iy[i], z = iz[i];
    ox[i] = R[0] * x + R[1] * y + R[2] * z;
    oy[i] = R[3] * x + R[4] * y + R[5] * z;
    oz[i] = R[6] * x + R[7] * y + R[8] * z;
  }
}

void intersect_cylinder(const double* origin, double radius, const double* dx, const double* dy,
                        const double* dz, double* t, double* px, double* py, double* pz,
                        double* incidence, std::size_t begin, std::size_t end) {
  const double ox = origin[0], oy = origin[1], oz = origin[2];
  const double c = ox * ox + oz * oz - radius * radius;
  for (std::size_t i = begin; i < end; ++i) {
    const double a = dx[i] * dx[i] + dz[i] * dz[i];
    const double b = ox * dx[i] + oz * dz[i];
    const double disc = b * b - a * c;
    double ti = (std::sqrt(disc) - b) / a;
    if (!(a > 0.0) || !(disc >= 0.0)) ti = kNaN;
    const double x = ox + ti * dx[i];
    const double z = oz + ti * dz[i];
    t[i] = ti;
    px[i] = x;
    py[i] = oy + ti * dy[i];
    pz[i] = z;
    incidence[i] = std::fabs(dx[i] * x + dz[i] * z) / radius;
  }
}

void project(const ProjectionParams& K, const double* X, const double* Y, const double* Z,
             double* u, double* v, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    const double x = X[i] / Z[i];
    const double y = Y[i] / Z[i];
    const double r2 = x * x + y * y;
    const double d = 1.0 + r2 * (K.k1 + K.k2 * r2);
    double ui = K.f * x * d + K.cx;
    double vi = K.f * y * d + K.cy;
    if (!(Z[i] > 0.0)) ui = vi = kNaN;
    u[i] = ui;
    v[i] = vi;
  }
}

void sampson_squared(const double* F, const double* x1, const double* y1, const double* x2,
                     const double* y2, double* out, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    const double a0 = F[0] * x1[i] + F[1] * y1[i] + F[2];
    const double a1 = F[3] * x1[i] + F[4] * y1[i] + F[5];
    const double a2 = F[6] * x1[i] + F[7] * y1[i] + F[8];
    const double b0 = F[0] * x2[i] + F[3] * y2[i] + F[6];
    const double b1 = F[1] * x2[i] + F[4] * y2[i] + F[7];
    const double e = x2[i] * a0 + y2[i] * a1 + a2;
    const double den = a0 * a0 + a1 * a1 + b0 * b0 + b1 * b1;
    out[i] = e * e / den;
  }
}

}  // namespace tunnelrec::simd::scalar
