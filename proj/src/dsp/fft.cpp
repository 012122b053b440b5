#include "fft.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>

namespace msbwe::dsp {

namespace {
// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
    std::lock_guard lock(planner_mutex());
    real_ = fftw_alloc_real(static_cast<std::size_t>(n));
    spec_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
    std::copy(in.begin(), in.end(), real_);
    std::fill(real_ + in.size(), real_ + n_, 0.0);
    fftw_execute(fwd_);
    for (int k = 0; k <= n_ / 2; ++k) out[k] = {spec_[k][0], spec_[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    for (int k = 0; k <= n_ / 2; ++k) {
        spec_[k][0] = in[k].real();
        spec_[k][1] = in[k].imag();
    }
    fftw_execute(inv_);
    std::copy(real_, real_ + std::min<std::size_t>(out.size(), static_cast<std::size_t>(n_)), out.begin());
}

RealFft& RealFft::cached(int n) {
    thread_local std::map<int, std::unique_ptr<RealFft>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
}

}  // namespace msbwe::dsp
