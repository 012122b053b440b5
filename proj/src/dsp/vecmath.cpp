#include "vecmath.hpp"

#include <algorithm>
#include <cmath>

namespace msbwe::dsp::vec {

namespace {

constexpr double kPi = 3.14159265358979323846;
// Every element goes through the same fixed-width vector body, so a value's
// result does not depend on where it sits in the array.
constexpr std::size_t kChunk = 8;

[[gnu::noinline]] void log_polar_chunk(const double* d, double* log_amp, double* phase, double floor2) {
#pragma omp simd
    for (std::size_t i = 0; i < kChunk; ++i) {
        const double re = d[2 * i], im = d[2 * i + 1];
        const double p = re * re + im * im;
        log_amp[i] = 0.5 * std::log(p > floor2 ? p : floor2);
        const double a = std::atan2(im, re);
        phase[i] = p == 0.0 ? 0.0 : (a <= -kPi ? kPi : a);
    }
}

[[gnu::noinline]] void polar_chunk(const double* log_amp, const double* phase, double* d) {
#pragma omp simd
    for (std::size_t i = 0; i < kChunk; ++i) {
        const double a = std::exp(log_amp[i]);
        d[2 * i] = a * std::cos(phase[i]);
        d[2 * i + 1] = a * std::sin(phase[i]);
    }
}

}  // namespace

void log_polar(const std::complex<double>* z, double* log_amp, double* phase, std::size_t n, double amp_floor) {
    const double* d = reinterpret_cast<const double*>(z);
    const double floor2 = amp_floor * amp_floor;
    std::size_t i = 0;
    for (; i + kChunk <= n; i += kChunk) log_polar_chunk(d + 2 * i, log_amp + i, phase + i, floor2);
    if (i == n) return;
    double in[2 * kChunk] = {}, la[kChunk], ph[kChunk];
    std::copy(d + 2 * i, d + 2 * n, in);
    log_polar_chunk(in, la, ph, floor2);
    std::copy(la, la + (n - i), log_amp + i);
    std::copy(ph, ph + (n - i), phase + i);
}

void from_log_polar(const double* log_amp, const double* phase, std::complex<double>* z, std::size_t n) {
    double* d = reinterpret_cast<double*>(z);
    std::size_t i = 0;
    for (; i + kChunk <= n; i += kChunk) polar_chunk(log_amp + i, phase + i, d + 2 * i);
    if (i == n) return;
    double la[kChunk] = {}, ph[kChunk] = {}, out[2 * kChunk];
    std::copy(log_amp + i, log_amp + n, la);
    std::copy(phase + i, phase + n, ph);
    polar_chunk(la, ph, out);
    std::copy(out, out + 2 * (n - i), d + 2 * i);
}

}  // namespace msbwe::dsp::vec
