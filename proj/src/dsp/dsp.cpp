#include "msbwe/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "fft.hpp"
#include "vecmath.hpp"
#include "msbwe/error.hpp"

namespace msbwe::dsp {

void Waveform::validate() const {
    if (!(rate > 0.0) || !std::isfinite(rate))
        throw InvalidArgument("waveform rate must be positive, got " + std::to_string(rate));
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (!std::isfinite(samples[i]))
            throw InvalidArgument("waveform sample " + std::to_string(i) + " is not finite");
}

void StftConfig::validate() const {
    if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0)
        throw InvalidArgument("n_fft must be a power of two, got " + std::to_string(n_fft));
    if (win_len < 1 || win_len > n_fft)
        throw InvalidArgument("win_len must lie in [1, n_fft], got " + std::to_string(win_len));
    if (hop < 1 || hop > win_len)
        throw InvalidArgument("hop must lie in [1, win_len], got " + std::to_string(hop));
}

std::vector<double> StftConfig::window() const {
    std::vector<double> w(static_cast<std::size_t>(win_len));
    for (int n = 0; n < win_len; ++n) w[n] = 0.5 - 0.5 * std::cos(kTwoPi * n / win_len);
    return w;
}

double wrap_phase(double x) {
    if (x > -kPi && x <= kPi) return x;
    double w = std::remainder(x, kTwoPi);
    if (w <= -kPi) w += kTwoPi;
    return w;
}

namespace {

// Symmetric (reflect, edge sample not repeated) extension of an index into [0, n).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

constexpr std::size_t kFrameGroup = 8;

// Dot product accumulated over eight fixed lanes.
double dot(const double* a, const double* b, std::size_t n) {
    constexpr std::size_t kLanes = 8;
    double acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    double total = 0.0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

// ----------------------------------------------------------------------------
// Windowed-sinc kernel, expressed in samples of the narrower of the two rates.

constexpr double kStopbandDb = 80.0;
constexpr double kPassEdge = 0.90;  // fraction of the narrower Nyquist
constexpr double kStopEdge = 0.95;
constexpr int kTableOversample = 2048;

struct SincKernel {
    double cutoff;      // cycles per narrow-rate sample
    double half_width;  // in narrow-rate samples
    double beta;
    std::vector<double> table;  // g(u) for u = k / kTableOversample, u in [0, half_width]

    SincKernel() {
        const double transition = 0.5 * (kStopEdge - kPassEdge);  // cycles per sample
        cutoff = 0.25 * (kPassEdge + kStopEdge);
        beta = 0.1102 * (kStopbandDb - 8.7);
        const double taps = (kStopbandDb - 7.95) / (14.36 * transition);
        half_width = std::ceil(taps / 2.0);
        const auto n = static_cast<std::size_t>(half_width * kTableOversample) + 2;
        table.resize(n);
        const double i0_beta = std::cyl_bessel_i(0.0, beta);
        for (std::size_t k = 0; k < n; ++k) {
            const double u = static_cast<double>(k) / kTableOversample;
            table[k] = exact(u, i0_beta);
        }
    }

    double exact(double u, double i0_beta) const {
        const double r = u / half_width;
        if (r >= 1.0) return 0.0;
        const double x = 2.0 * cutoff * u;
        const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
        return 2.0 * cutoff * sinc * std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
    }

    double operator()(double u) const {
        u = std::abs(u);
        if (u >= half_width) return 0.0;
        const double pos = u * kTableOversample;
        const auto k = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(k);
        return table[k] + frac * (table[k + 1] - table[k]);
    }
};

const SincKernel& sinc_kernel() {
    static const SincKernel kernel;
    return kernel;
}

bool is_integral(double x) { return std::abs(x - std::round(x)) < 1e-9; }

}  // namespace

std::size_t resampled_length(std::size_t len, double source_rate, double target_rate) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(len) * target_rate / source_rate));
}

Waveform sinc_resample(const Waveform& wav, double target_rate) {
    wav.validate();
    if (!(target_rate > 0.0) || !std::isfinite(target_rate))
        throw InvalidArgument("target rate must be positive, got " + std::to_string(target_rate));
    Waveform out;
    out.rate = target_rate;
    const std::size_t n_in = wav.samples.size();
    if (n_in == 0) return out;
    const std::size_t n_out = resampled_length(n_in, wav.rate, target_rate);
    out.samples.assign(n_out, 0.0);
    if (wav.rate == target_rate) {
        out.samples = wav.samples;
        return out;
    }

    const SincKernel& kernel = sinc_kernel();
    // Kernel argument scale: input samples -> narrow-rate samples.
    const double scale = std::min(1.0, target_rate / wav.rate);
    const double half_in = kernel.half_width / scale;
    const auto reach = static_cast<std::ptrdiff_t>(std::ceil(half_in)) + 1;

    // Reflect-extended copy so the inner loops never branch on the edges.
    std::vector<double> ext(n_in + 2 * static_cast<std::size_t>(reach));
    for (std::size_t i = 0; i < ext.size(); ++i)
        ext[i] = wav.samples[reflect_index(static_cast<std::ptrdiff_t>(i) - reach, n_in)];

    const std::size_t taps = static_cast<std::size_t>(2 * reach + 1);

    if (is_integral(wav.rate) && is_integral(target_rate)) {
        const auto src = static_cast<long long>(std::llround(wav.rate));
        const auto tgt = static_cast<long long>(std::llround(target_rate));
        const long long g = std::gcd(src, tgt);
        const long long up = tgt / g;
        const long long down = src / g;
        if (up <= 4096) {
            // Polyphase table: output n sits at input position (n * down) / up.
            std::vector<double> bank(static_cast<std::size_t>(up) * taps);
            for (long long p = 0; p < up; ++p) {
                const double frac = static_cast<double>(p) / static_cast<double>(up);
                double* w = bank.data() + static_cast<std::size_t>(p) * taps;
                double sum = 0.0;
                for (std::size_t j = 0; j < taps; ++j) {
                    const double offset = static_cast<double>(static_cast<std::ptrdiff_t>(j) - reach);
                    w[j] = kernel(scale * (frac - offset));
                    sum += w[j];
                }
                for (std::size_t j = 0; j < taps; ++j) w[j] /= sum;
            }
            for (std::size_t n = 0; n < n_out; ++n) {
                const long long num = static_cast<long long>(n) * down;
                const auto base = static_cast<std::size_t>(num / up);
                const double* w = bank.data() + static_cast<std::size_t>(num % up) * taps;
                // ext index of (base - reach)
                out.samples[n] = dot(w, ext.data() + base, taps);
            }
            return out;
        }
    }

    const double step = wav.rate / target_rate;
    std::vector<double> w(taps);
    for (std::size_t n = 0; n < n_out; ++n) {
        const double t = static_cast<double>(n) * step;
        const double fl = std::floor(t);
        const double frac = t - fl;
        const auto base = static_cast<std::size_t>(fl);
        double sum = 0.0;
        for (std::size_t j = 0; j < taps; ++j) {
            const double offset = static_cast<double>(static_cast<std::ptrdiff_t>(j) - reach);
            w[j] = kernel(scale * (frac - offset));
            sum += w[j];
        }
        out.samples[n] = dot(w.data(), ext.data() + base, taps) / sum;
    }
    return out;
}

std::size_t stft_frames(std::size_t len, const StftConfig& cfg) {
    return 1 + len / static_cast<std::size_t>(cfg.hop);
}

namespace {

// Runs the analysis frames in groups so bin-major stores run along t.
// `store(t0, g, group)` receives g frames laid out frame-major in `group`.
template <typename Store>
void analyze_frames(const Waveform& wav, const StftConfig& cfg, Store&& store) {
    const std::size_t len = wav.samples.size();
    const auto pad = static_cast<std::ptrdiff_t>(cfg.win_len / 2);
    const std::size_t frames = stft_frames(len, cfg);
    const auto bins = static_cast<std::size_t>(cfg.bins());
    const std::vector<double> window = cfg.window();
    RealFft& fft = RealFft::cached(cfg.n_fft);
    std::vector<double> seg(static_cast<std::size_t>(cfg.win_len));
    std::vector<std::complex<double>> group(bins * kFrameGroup);
    for (std::size_t t0 = 0; t0 < frames; t0 += kFrameGroup) {
        const std::size_t g = std::min(kFrameGroup, frames - t0);
        for (std::size_t k = 0; k < g; ++k) {
            const auto start = static_cast<std::ptrdiff_t>(t0 + k) * cfg.hop - pad;
            const bool inside = start >= 0 && start + cfg.win_len <= static_cast<std::ptrdiff_t>(len);
            for (int n = 0; n < cfg.win_len; ++n)
                seg[n] = wav.samples[inside ? static_cast<std::size_t>(start + n) : reflect_index(start + n, len)] *
                         window[n];
            fft.forward(seg, std::span(group).subspan(k * bins, bins));
        }
        store(t0, g, std::as_const(group));
    }
}

void check_analysis(const Waveform& wav, const StftConfig& cfg) {
    cfg.validate();
    if (wav.samples.empty()) throw InvalidArgument("stft of an empty waveform");
}

}  // namespace

ComplexSpectrogram stft(const Waveform& wav, const StftConfig& cfg) {
    check_analysis(wav, cfg);
    ComplexSpectrogram spec;
    spec.bins = static_cast<std::size_t>(cfg.bins());
    spec.frames = stft_frames(wav.samples.size(), cfg);
    spec.rate = wav.rate;
    spec.cfg = cfg;
    spec.data.resize(spec.bins * spec.frames);
    analyze_frames(wav, cfg, [&](std::size_t t0, std::size_t g, const std::vector<std::complex<double>>& group) {
        for (std::size_t f = 0; f < spec.bins; ++f)
            for (std::size_t k = 0; k < g; ++k) spec.data[f * spec.frames + t0 + k] = group[k * spec.bins + f];
    });
    return spec;
}

SpectrumPair stft_log_amp_phase(const Waveform& wav, const StftConfig& cfg, std::optional<double> effective_rate) {
    check_analysis(wav, cfg);
    SpectrumPair pair;
    pair.bins = static_cast<std::size_t>(cfg.bins());
    pair.frames = stft_frames(wav.samples.size(), cfg);
    pair.rate = wav.rate;
    pair.effective_rate = effective_rate.value_or(wav.rate);
    pair.cfg = cfg;
    if (pair.effective_rate > pair.rate)
        throw InvalidArgument("effective rate exceeds container rate");
    pair.log_amp.resize(pair.bins * pair.frames);
    pair.phase.resize(pair.bins * pair.frames);
    std::vector<double> la(pair.bins * kFrameGroup), ph(pair.bins * kFrameGroup);
    analyze_frames(wav, cfg, [&](std::size_t t0, std::size_t g, const std::vector<std::complex<double>>& group) {
        vec::log_polar(group.data(), la.data(), ph.data(), g * pair.bins, kAmpFloor);
        for (std::size_t f = 0; f < pair.bins; ++f)
            for (std::size_t k = 0; k < g; ++k) {
                pair.log_amp[f * pair.frames + t0 + k] = la[k * pair.bins + f];
                pair.phase[f * pair.frames + t0 + k] = ph[k * pair.bins + f];
            }
    });
    return pair;
}

void synthesize_frame(std::span<const std::complex<double>> half, const StftConfig& cfg,
                      std::span<const double> window, std::span<double> out) {
    thread_local std::vector<std::complex<double>> spec;
    thread_local std::vector<double> frame;
    spec.assign(half.begin(), half.end());
    spec.front() = {spec.front().real(), 0.0};
    spec.back() = {spec.back().real(), 0.0};
    frame.resize(static_cast<std::size_t>(cfg.n_fft));
    RealFft::cached(cfg.n_fft).inverse(spec, frame);
    const double inv_n = 1.0 / cfg.n_fft;
    for (int n = 0; n < cfg.win_len; ++n) out[n] = frame[n] * inv_n * window[n];
}

void analyze_frame_adjoint(std::span<const double> grad_frame, const StftConfig& cfg,
                           std::span<const double> window, std::span<std::complex<double>> grad_half) {
    thread_local std::vector<double> seg;
    seg.resize(static_cast<std::size_t>(cfg.win_len));
    for (int n = 0; n < cfg.win_len; ++n) seg[n] = grad_frame[n] * window[n];
    RealFft::cached(cfg.n_fft).forward(seg, grad_half);
    const double inv_n = 1.0 / cfg.n_fft;
    const std::size_t last = grad_half.size() - 1;
    for (std::size_t k = 0; k <= last; ++k) {
        const double c = (k == 0 || k == last) ? inv_n : 2.0 * inv_n;
        grad_half[k] *= c;
    }
    grad_half[0] = {grad_half[0].real(), 0.0};
    grad_half[last] = {grad_half[last].real(), 0.0};
}

std::vector<double> window_envelope(std::size_t frames, const StftConfig& cfg, std::span<const double> window) {
    std::vector<double> env((frames - 1) * static_cast<std::size_t>(cfg.hop) + static_cast<std::size_t>(cfg.win_len), 0.0);
    for (std::size_t t = 0; t < frames; ++t)
        for (int n = 0; n < cfg.win_len; ++n) env[t * cfg.hop + n] += window[n] * window[n];
    return env;
}

namespace {

// Overlap-add counterpart of analyze_frames: `load(t0, g, group)` fills g
// frame-major half spectra.
template <typename Load>
Waveform synthesize_frames(std::size_t frames, const StftConfig& cfg, double rate, std::optional<std::size_t> length,
                           Load&& load) {
    Waveform out;
    out.rate = rate;
    if (frames == 0) {
        out.samples.assign(length.value_or(0), 0.0);
        return out;
    }
    const auto bins = static_cast<std::size_t>(cfg.bins());
    const std::vector<double> window = cfg.window();
    const std::vector<double> env = window_envelope(frames, cfg, window);
    std::vector<double> acc(env.size(), 0.0);
    std::vector<std::complex<double>> group(bins * kFrameGroup);
    std::vector<double> frame(static_cast<std::size_t>(cfg.win_len));
    for (std::size_t t0 = 0; t0 < frames; t0 += kFrameGroup) {
        const std::size_t g = std::min(kFrameGroup, frames - t0);
        load(t0, g, group);
        for (std::size_t k = 0; k < g; ++k) {
            synthesize_frame(std::span(group).subspan(k * bins, bins), cfg, window, frame);
            const std::size_t at = (t0 + k) * static_cast<std::size_t>(cfg.hop);
            for (int n = 0; n < cfg.win_len; ++n) acc[at + n] += frame[n];
        }
    }
    const std::size_t pad = static_cast<std::size_t>(cfg.win_len / 2);
    const std::size_t n_out = length.value_or((frames - 1) * static_cast<std::size_t>(cfg.hop));
    out.samples.assign(n_out, 0.0);
    for (std::size_t i = 0; i < n_out && i + pad < acc.size(); ++i) {
        const double e = env[i + pad];
        out.samples[i] = e > 1e-10 ? acc[i + pad] / e : 0.0;
    }
    return out;
}

void check_synthesis(std::size_t bins, std::size_t frames, std::size_t values, const StftConfig& cfg) {
    cfg.validate();
    if (bins != static_cast<std::size_t>(cfg.bins()))
        throw InvalidArgument("spectrogram has " + std::to_string(bins) + " bins but n_fft " +
                              std::to_string(cfg.n_fft) + " implies " + std::to_string(cfg.bins()));
    if (values != bins * frames) throw InvalidArgument("spectrogram data size does not match its shape");
}

}  // namespace

Waveform istft(const ComplexSpectrogram& spec, std::optional<std::size_t> length) {
    check_synthesis(spec.bins, spec.frames, spec.data.size(), spec.cfg);
    return synthesize_frames(spec.frames, spec.cfg, spec.rate, length,
                             [&](std::size_t t0, std::size_t g, std::vector<std::complex<double>>& group) {
        for (std::size_t f = 0; f < spec.bins; ++f)
            for (std::size_t k = 0; k < g; ++k) group[k * spec.bins + f] = spec.data[f * spec.frames + t0 + k];
    });
}

Waveform istft_log_amp_phase(const SpectrumPair& pair, std::optional<std::size_t> length) {
    check_synthesis(pair.bins, pair.frames, pair.log_amp.size(), pair.cfg);
    if (pair.phase.size() != pair.log_amp.size())
        throw InvalidArgument("log-amplitude and phase grids must both hold bins * frames values");
    std::vector<double> la(pair.bins * kFrameGroup), ph(pair.bins * kFrameGroup);
    return synthesize_frames(pair.frames, pair.cfg, pair.rate, length,
                             [&](std::size_t t0, std::size_t g, std::vector<std::complex<double>>& group) {
        for (std::size_t f = 0; f < pair.bins; ++f)
            for (std::size_t k = 0; k < g; ++k) {
                la[k * pair.bins + f] = pair.log_amp[f * pair.frames + t0 + k];
                ph[k * pair.bins + f] = pair.phase[f * pair.frames + t0 + k];
            }
        vec::from_log_polar(la.data(), ph.data(), group.data(), g * pair.bins);
    });
}

SpectrumPair to_log_amp_phase(const ComplexSpectrogram& spec, std::optional<double> effective_rate) {
    SpectrumPair pair;
    pair.bins = spec.bins;
    pair.frames = spec.frames;
    pair.rate = spec.rate;
    pair.effective_rate = effective_rate.value_or(spec.rate);
    pair.cfg = spec.cfg;
    if (pair.effective_rate > pair.rate)
        throw InvalidArgument("effective rate exceeds container rate");
    pair.log_amp.resize(spec.data.size());
    pair.phase.resize(spec.data.size());
    vec::log_polar(spec.data.data(), pair.log_amp.data(), pair.phase.data(), spec.data.size(), kAmpFloor);
    return pair;
}

ComplexSpectrogram from_log_amp_phase(const SpectrumPair& pair) {
    const std::size_t n = pair.bins * pair.frames;
    if (pair.log_amp.size() != n || pair.phase.size() != n)
        throw InvalidArgument("log-amplitude and phase grids must both hold bins * frames values");
    ComplexSpectrogram spec;
    spec.bins = pair.bins;
    spec.frames = pair.frames;
    spec.rate = pair.rate;
    spec.cfg = pair.cfg;
    spec.data.resize(n);
    vec::from_log_polar(pair.log_amp.data(), pair.phase.data(), spec.data.data(), n);
    return spec;
}

std::size_t band_cutoff_bin(double effective_rate, double container_rate, int n_fft) {
    if (!(container_rate > 0.0) || !(effective_rate >= 0.0))
        throw InvalidArgument("rates must be positive");
    if (effective_rate > container_rate)
        throw InvalidArgument("effective rate " + std::to_string(effective_rate) + " exceeds container rate " +
                              std::to_string(container_rate));
    return static_cast<std::size_t>(std::floor(n_fft * effective_rate / (2.0 * container_rate) + 1e-9));
}

}  // namespace msbwe::dsp
