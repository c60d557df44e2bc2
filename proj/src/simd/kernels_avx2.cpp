#include "kernels_impl.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

#include <limits>

namespace tunnelrec::simd::avx2 {

#if defined(__AVX2__)

namespace {

inline __m256d abs_pd(__m256d x) {
  return _mm256_andnot_pd(_mm256_set1_pd(-0.0), x);
}

// Matches the scalar a*x + b*y + c evaluation order.
inline __m256d dot3(__m256d a, __m256d x, __m256d b, __m256d y, __m256d c) {
  return _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(a, x), _mm256_mul_pd(b, y)), c);
}

}  // namespace

bool compiled() { return true; }

void rotate(const double* R, const double* ix, const double* iy, const double* iz, double* ox,
            double* oy, double* oz, std::size_t n) {
  __m256d r[9];
  for (int k = 0; k < 9; ++k) r[k] = _mm256_set1_pd(R[k]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(ix + i);
    const __m256d y = _mm256_loadu_pd(iy + i);
    const __m256d z = _mm256_loadu_pd(iz + i);
    _mm256_storeu_pd(ox + i, dot3(r[0], x, r[1], y, _mm256_mul_pd(r[2], z)));
    _mm256_storeu_pd(oy + i, dot3(r[3], x, r[4], y, _mm256_mul_pd(r[5], z)));
    _mm256_storeu_pd(oz + i, dot3(r[6], x, r[7], y, _mm256_mul_pd(r[8], z)));
  }
  scalar::rotate(R, ix, iy, iz, ox, oy, oz, i, n);
}

void intersect_cylinder(const double* origin, double radius, const double* dx, const double* dy,
                        const double* dz, double* t, double* px, double* py, double* pz,
                        double* incidence, std::size_t n) {
  const double c_s = origin[0] * origin[0] + origin[2] * origin[2] - radius * radius;
  const __m256d ox = _mm256_set1_pd(origin[0]);
  const __m256d oy = _mm256_set1_pd(origin[1]);
  const __m256d oz = _mm256_set1_pd(origin[2]);
  const __m256d c = _mm256_set1_pd(c_s);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
  const __m256d rad = _mm256_set1_pd(radius);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(dx + i);
    const __m256d y = _mm256_loadu_pd(dy + i);
    const __m256d z = _mm256_loadu_pd(dz + i);
    const __m256d a = _mm256_add_pd(_mm256_mul_pd(x, x), _mm256_mul_pd(z, z));
    const __m256d b = _mm256_add_pd(_mm256_mul_pd(ox, x), _mm256_mul_pd(oz, z));
    const __m256d disc = _mm256_sub_pd(_mm256_mul_pd(b, b), _mm256_mul_pd(a, c));
    __m256d ti = _mm256_div_pd(_mm256_sub_pd(_mm256_sqrt_pd(disc), b), a);
    const __m256d ok =
        _mm256_and_pd(_mm256_cmp_pd(a, zero, _CMP_GT_OQ), _mm256_cmp_pd(disc, zero, _CMP_GE_OQ));
    ti = _mm256_blendv_pd(nan, ti, ok);
    const __m256d hx = _mm256_add_pd(ox, _mm256_mul_pd(ti, x));
    const __m256d hz = _mm256_add_pd(oz, _mm256_mul_pd(ti, z));
    _mm256_storeu_pd(t + i, ti);
    _mm256_storeu_pd(px + i, hx);
    _mm256_storeu_pd(py + i, _mm256_add_pd(oy, _mm256_mul_pd(ti, y)));
    _mm256_storeu_pd(pz + i, hz);
    const __m256d dn = _mm256_add_pd(_mm256_mul_pd(x, hx), _mm256_mul_pd(z, hz));
    _mm256_storeu_pd(incidence + i, _mm256_div_pd(abs_pd(dn), rad));
  }
  scalar::intersect_cylinder(origin, radius, dx, dy, dz, t, px, py, pz, incidence, i, n);
}

void project(const ProjectionParams& K, const double* X, const double* Y, const double* Z,
             double* u, double* v, std::size_t n) {
  const __m256d f = _mm256_set1_pd(K.f);
  const __m256d cx = _mm256_set1_pd(K.cx);
  const __m256d cy = _mm256_set1_pd(K.cy);
  const __m256d k1 = _mm256_set1_pd(K.k1);
  const __m256d k2 = _mm256_set1_pd(K.k2);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d nan = _mm256_set1_pd(std::numeric_limits<double>::quiet_NaN());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d Zi = _mm256_loadu_pd(Z + i);
    const __m256d x = _mm256_div_pd(_mm256_loadu_pd(X + i), Zi);
    const __m256d y = _mm256_div_pd(_mm256_loadu_pd(Y + i), Zi);
    const __m256d r2 = _mm256_add_pd(_mm256_mul_pd(x, x), _mm256_mul_pd(y, y));
    const __m256d d =
        _mm256_add_pd(one, _mm256_mul_pd(r2, _mm256_add_pd(k1, _mm256_mul_pd(k2, r2))));
    const __m256d front = _mm256_cmp_pd(Zi, zero, _CMP_GT_OQ);
    const __m256d ui = _mm256_add_pd(_mm256_mul_pd(_mm256_mul_pd(f, x), d), cx);
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(_mm256_mul_pd(f, y), d), cy);
    _mm256_storeu_pd(u + i, _mm256_blendv_pd(nan, ui, front));
    _mm256_storeu_pd(v + i, _mm256_blendv_pd(nan, vi, front));
  }
  scalar::project(K, X, Y, Z, u, v, i, n);
}

void sampson_squared(const double* F, const double* x1, const double* y1, const double* x2,
                     const double* y2, double* out, std::size_t n) {
  __m256d f[9];
  for (int k = 0; k < 9; ++k) f[k] = _mm256_set1_pd(F[k]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d u1 = _mm256_loadu_pd(x1 + i);
    const __m256d v1 = _mm256_loadu_pd(y1 + i);
    const __m256d u2 = _mm256_loadu_pd(x2 + i);
    const __m256d v2 = _mm256_loadu_pd(y2 + i);
    const __m256d a0 = dot3(f[0], u1, f[1], v1, f[2]);
    const __m256d a1 = dot3(f[3], u1, f[4], v1, f[5]);
    const __m256d a2 = dot3(f[6], u1, f[7], v1, f[8]);
    const __m256d b0 = dot3(f[0], u2, f[3], v2, f[6]);
    const __m256d b1 = dot3(f[1], u2, f[4], v2, f[7]);
    const __m256d e = dot3(u2, a0, v2, a1, a2);
    const __m256d den = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(a0, a0), _mm256_mul_pd(a1, a1)),
                      _mm256_mul_pd(b0, b0)),
        _mm256_mul_pd(b1, b1));
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_mul_pd(e, e), den));
  }
  scalar::sampson_squared(F, x1, y1, x2, y2, out, i, n);
}

#else  // !__AVX2__

bool compiled() { return false; }

void rotate(const double* R, const double* ix, const double* iy, const double* iz, double* ox,
            double* oy, double* oz, std::size_t n) {
  scalar::rotate(R, ix, iy, iz, ox, oy, oz, 0, n);
}
void intersect_cylinder(const double* origin, double radius, const double* dx, const double* dy,
                        const double* dz, double* t, double* px, double* py, double* pz,
                        double* incidence, std::size_t n) {
  scalar::intersect_cylinder(origin, radius, dx, dy, dz, t, px, py, pz, incidence, 0, n);
}
void project(const ProjectionParams& K, const double* X, const double* Y, const double* Z,
             double* u, double* v, std::size_t n) {
  scalar::project(K, X, Y, Z, u, v, 0, n);
}
void sampson_squared(const double* F, const double* x1, const double* y1, const double* x2,
                     const double* y2, double* out, std::size_t n) {
  scalar::sampson_squared(F, x1, y1, x2, y2, out, 0, n);
}

#endif

}  // namespace tunnelrec::simd::avx2
