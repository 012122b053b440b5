#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace msbwe::dsp {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Amplitudes are floored here before the natural log; ln(1e-5) ~ -11.51.
inline constexpr double kAmpFloor = 1e-5;

struct Waveform {
    std::vector<double> samples;
    double rate = 0.0;

    std::size_t size() const { return samples.size(); }
    double duration() const { return rate > 0.0 ? static_cast<double>(samples.size()) / rate : 0.0; }

    // Throws InvalidArgument when rate <= 0 or any sample is non-finite.
    void validate() const;
};

struct StftConfig {
    int n_fft = 1024;
    int win_len = 320;
    int hop = 80;

    int bins() const { return n_fft / 2 + 1; }
    // n_fft must be a power of two, win_len <= n_fft, hop <= win_len.
    void validate() const;
    // Periodic Hann taper of length win_len.
    std::vector<double> window() const;

    bool operator==(const StftConfig&) const = default;
};

// Spectrogram grids are stored bin-major: element (f, t) lives at f * frames + t.
// This is the [F, T] channel-first layout the network consumes directly.
struct ComplexSpectrogram {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<std::complex<double>> data;
    double rate = 0.0;
    StftConfig cfg;

    std::complex<double>& at(std::size_t f, std::size_t t) { return data[f * frames + t]; }
    const std::complex<double>& at(std::size_t f, std::size_t t) const { return data[f * frames + t]; }
};

struct SpectrumPair {
    std::size_t bins = 0;
    std::size_t frames = 0;
    std::vector<double> log_amp;  // natural log of floored magnitude
    std::vector<double> phase;    // wrapped to (-pi, pi]
    double rate = 0.0;            // container rate
    double effective_rate = 0.0;  // content occupies 0 .. effective_rate / 2
    StftConfig cfg;
};

// Maps any angle into (-pi, pi].
double wrap_phase(double x);

// Band-limited resampling with a Kaiser-windowed sinc kernel. The transition
// band spans 0.90 .. 0.95 of the narrower Nyquist; the stopband is designed for
// 80 dB. Integer rate pairs with a small interpolation factor use a polyphase
// table, everything else evaluates the kernel from an oversampled lookup table.
Waveform sinc_resample(const Waveform& wav, double target_rate);

// Output length of sinc_resample: round(len * target / source).
std::size_t resampled_length(std::size_t len, double source_rate, double target_rate);

// Centered STFT: the signal is reflect-padded by win_len / 2 on both sides and
// frame t covers padded samples [t * hop, t * hop + win_len). Each windowed
// segment is zero-padded at its end to n_fft before the DFT.
// Frame count is 1 + len / hop (integer division).
ComplexSpectrogram stft(const Waveform& wav, const StftConfig& cfg);
std::size_t stft_frames(std::size_t len, const StftConfig& cfg);

// Weighted overlap-add inverse with squared-window normalisation. Output length
// defaults to (frames - 1) * hop, which is the original length whenever that
// length was a multiple of hop.
Waveform istft(const ComplexSpectrogram& spec, std::optional<std::size_t> length = std::nullopt);

SpectrumPair to_log_amp_phase(const ComplexSpectrogram& spec, std::optional<double> effective_rate = std::nullopt);
ComplexSpectrogram from_log_amp_phase(const SpectrumPair& pair);

// Fused forms of to_log_amp_phase(stft(..)) and istft(from_log_amp_phase(..))
// that skip the full complex spectrogram. Results are bitwise identical.
SpectrumPair stft_log_amp_phase(const Waveform& wav, const StftConfig& cfg,
                                std::optional<double> effective_rate = std::nullopt);
Waveform istft_log_amp_phase(const SpectrumPair& pair, std::optional<std::size_t> length = std::nullopt);

// Last bin inside the band 0 .. effective_rate / 2 of a spectrum stored at container_rate.
std::size_t band_cutoff_bin(double effective_rate, double container_rate, int n_fft);

// Single-frame helpers shared with the differentiable inverse in ad/.
// `synthesize_frame` writes the first win_len samples of irfft(half) times the window.
// `analyze_frame_adjoint` is the exact adjoint of synthesize_frame.
void synthesize_frame(std::span<const std::complex<double>> half, const StftConfig& cfg,
                      std::span<const double> window, std::span<double> out);
void analyze_frame_adjoint(std::span<const double> grad_frame, const StftConfig& cfg,
                           std::span<const double> window, std::span<std::complex<double>> grad_half);

// Sum over frames of window^2 at each padded position, length (frames - 1) * hop + win_len.
std::vector<double> window_envelope(std::size_t frames, const StftConfig& cfg, std::span<const double> window);

}  // namespace msbwe::dsp
