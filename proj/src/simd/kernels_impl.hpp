#pragma once

#include "tunnelrec/simd/kernels.hpp"

namespace tunnelrec::simd {

// Raw-pointer kernels over [begin, end). The AVX2 versions hand any tail
// shorter than one vector to the scalar versions.
namespace scalar {
void rotate(const double* R, const double* ix, const double* iy, const double* iz, double* ox,
            double* oy, double* oz, std::size_t begin, std::size_t end);
void intersect_cylinder(const double* origin, double radius, const double* dx, const double* dy,
                        const double* dz, double* t, double* px, double* py, double* pz,
                        double* incidence, std::size_t begin, std::size_t end);
void project(const ProjectionParams& K, const double* X, const double* Y, const double* Z,
             double* u, double* v, std::size_t begin, std::size_t end);
void sampson_squared(const double* F, const double* x1, const double* y1, const double* x2,
                     const double* y2, double* out, std::size_t begin, std::size_t end);
}  // namespace scalar

namespace avx2 {
bool compiled();
void rotate(const double* R, const double* ix, const double* iy, const double* iz, double* ox,
            double* oy, double* oz, std::size_t n);
void intersect_cylinder(const double* origin, double radius, const double* dx, const double* dy,
                        const double* dz, double* t, double* px, double* py, double* pz,
                        double* incidence, std::size_t n);
void project(const ProjectionParams& K, const double* X, const double* Y, const double* Z,
             double* u, double* v, std::size_t n);
void sampson_squared(const double* F, const double* x1, const double* y1, const double* x2,
                     const double* y2, double* out, std::size_t n);
}  // namespace avx2

}  // namespace tunnelrec::simd
