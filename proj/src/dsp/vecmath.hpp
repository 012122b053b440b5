#pragma once

#include <complex>
#include <cstddef>

namespace msbwe::dsp::vec {

// Bulk polar conversions. They live in their own translation unit, built so
// the compiler can use the vector math library; results agree with the scalar
// functions to a few ulp and are reproducible for a given build.

// log_amp = log(max(|z|, amp_floor)), phase = arg(z) in (-pi, pi], 0 for z == 0.
void log_polar(const std::complex<double>* z, double* log_amp, double* phase, std::size_t n, double amp_floor);
// z = exp(log_amp) * (cos(phase), sin(phase)).
void from_log_polar(const double* log_amp, const double* phase, std::complex<double>* z, std::size_t n);

}  // namespace msbwe::dsp::vec
