#pragma once

#include <complex>
#include <span>

#include <fftw3.h>

namespace msbwe::dsp {

// Unnormalised real FFT of length n backed by FFTW. Instances are not shared
// between threads; use `cached` to get the calling thread's plan for n.
class RealFft {
public:
    explicit RealFft(int n);
    ~RealFft();
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    int size() const { return n_; }

    // n real samples -> n/2 + 1 bins
    void forward(std::span<const double> in, std::span<std::complex<double>> out);
    // n/2 + 1 bins -> n real samples (scaled by n)
    void inverse(std::span<const std::complex<double>> in, std::span<double> out);

    static RealFft& cached(int n);

private:
    int n_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

}  // namespace msbwe::dsp
