#pragma once

// Branch-free double-precision sin/cos for SIREN layers. The loop bodies
// vectorize under -O3; glibc's scalar sin does not, and it dominates the
// forward pass otherwise. Accuracy is within a few ulp for |x| < 1e6.

#include <cmath>
#include <cstddef>

namespace inrprop::detail {

inline constexpr double kTwoOverPi = 6.36619772367581382433e-01;
// pi/2 split so that k * kPio2Hi is exact for |k| < 2^20.
inline constexpr double kPio2Hi = 1.57079632673412561417e+00;
inline constexpr double kPio2Lo = 6.07710050650619224932e-11;

inline void sincos_kernel(double r, double& s, double& c) {
  const double z = r * r;
  const double ps = -1.66666666666666324348e-01 +
                    z * (8.33333333332248946124e-03 +
                         z * (-1.98412698298579493134e-04 +
                              z * (2.75573137070700676789e-06 +
                                   z * (-2.50507602534068634195e-08 +
                                        z * 1.58969099521155010221e-10))));
  const double pc = 4.16666666666666019037e-02 +
                    z * (-1.38888888888741095749e-03 +
                         z * (2.48015872894767294178e-05 +
                              z * (-2.75573143513906633035e-07 +
                                   z * (2.08757232129817482790e-09 +
                                        z * -1.13596475577881948265e-11))));
  s = r + r * z * ps;
  c = 1.0 - 0.5 * z + z * z * pc;
}

/// s[i] = sin(x[i]), c[i] = cos(x[i]).
inline void sincos_array(const double* x, double* s, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double k = std::floor(v * kTwoOverPi + 0.5);
    const double r = ((v - k * kPio2Hi) - k * kPio2Lo);
    double sr, cr;
    sincos_kernel(r, sr, cr);
    // quadrant q = k mod 4 in {0,1,2,3}
    const double q = k - 4.0 * std::floor(k * 0.25);
    const bool odd = (q == 1.0) || (q == 3.0);
    const double sv = odd ? cr : sr;
    const double cv = odd ? sr : cr;
    s[i] = (q >= 2.0) ? -sv : sv;
    c[i] = (q == 1.0 || q == 2.0) ? -cv : cv;
  }
}

/// Column-major rows x cols block: z <- sin(w0 (z + bias)), and when `slope`
/// is non-null, slope <- w0 cos(w0 (z + bias)). One pass over memory.
inline void sine_layer(double* z, const double* bias, std::size_t rows, std::size_t cols, double w0,
                       double* slope) {
  for (std::size_t j = 0; j < cols; ++j) {
    double* zc = z + j * rows;
    double* sc = slope ? slope + j * rows : nullptr;
    for (std::size_t i = 0; i < rows; ++i) {
      const double v = w0 * (zc[i] + bias[i]);
      const double k = std::floor(v * kTwoOverPi + 0.5);
      const double r = ((v - k * kPio2Hi) - k * kPio2Lo);
      double sr, cr;
      sincos_kernel(r, sr, cr);
      const double q = k - 4.0 * std::floor(k * 0.25);
      const bool odd = (q == 1.0) || (q == 3.0);
      const double sv = odd ? cr : sr;
      zc[i] = (q >= 2.0) ? -sv : sv;
      if (sc) {
        const double cv = odd ? sr : cr;
        sc[i] = w0 * ((q == 1.0 || q == 2.0) ? -cv : cv);
      }
    }
  }
}

}  // namespace inrprop::detail
