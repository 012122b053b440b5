#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "msbwe/dsp.hpp"
#include "msbwe/model.hpp"

namespace msbwe::eval {

// Analysis grid for the metrics, deliberately independent of the model STFT.
struct LsdConfig {
    int n_fft = 2048;
    int hop = 512;
    int win_len = 2048;
    double floor = 1e-10;  // on |X|^2

    void validate() const;
    dsp::StftConfig stft() const { return {n_fft, win_len, hop}; }
};

// Mean over frames of the RMS over bins of log10 power differences. Lengths
// may differ by at most one hop; both signals are trimmed to the shorter.
double lsd(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg = {});
// Same, restricted to bins whose centre lies in [f_lo, f_hi] Hz.
double lsd_band(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg, double f_lo, double f_hi);

inline constexpr double kSnrCap = 120.0;
// 10 log10(sum |S_ref|^2 / sum |S_ref - S_est|^2) on the complex STFT, clamped to +-120 dB.
double spectral_snr(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg = {});

struct PairMetrics {
    double lsd = 0.0;
    double lsd_low = 0.0;   // 0 .. split
    double lsd_high = 0.0;  // split .. Nyquist
    double snr = 0.0;
};

PairMetrics compare(const dsp::Waveform& ref, const dsp::Waveform& est, double split_hz, const LsdConfig& cfg = {});

// Test material for the (S_i, S_j) task built from a container-rate clip:
// the narrowband input at S_i, the reference at S_j and the sinc-interpolated
// baseline at S_j.
struct PairTask {
    dsp::Waveform input;
    dsp::Waveform reference;
    dsp::Waveform baseline;
};
PairTask make_task(const dsp::Waveform& clip, double src_rate, double tgt_rate);

struct PairScore {
    std::size_t i = 0, j = 0;
    double src_rate = 0.0, tgt_rate = 0.0;
    PairMetrics model;     // means over clips
    PairMetrics baseline;  // means over clips
    std::size_t clips = 0;

    // Relative LSD reduction of the model against the baseline.
    double improvement() const { return 1.0 - model.lsd / baseline.lsd; }
    nlohmann::json to_json() const;
};

// Extends every clip from S_i to S_j and scores model and baseline against
// the band-limited reference.
PairScore score_pair(const model::MsBwe<float>& net, const std::vector<dsp::Waveform>& clips, std::size_t i,
                     std::size_t j, const LsdConfig& cfg = {});
// All ladder pairs i < j.
std::vector<PairScore> score_all_pairs(const model::MsBwe<float>& net, const std::vector<dsp::Waveform>& clips,
                                       const LsdConfig& cfg = {});

// ---- real-time factor -------------------------------------------------------------

struct RtfOptions {
    int repeats = 5;
    int warmup = 1;
    int threads = 1;
    // Keep freed heap memory in the process (glibc mallopt) so repeated passes
    // measure compute rather than page faults. Process-wide and sticky.
    bool pin_allocator = true;
};

struct RtfStage {
    std::string name;
    double seconds = 0.0;
    double share = 0.0;
};

struct RtfReport {
    std::size_t i = 0, j = 0;
    double src_rate = 0.0, tgt_rate = 0.0;
    std::size_t n_stages = 0;
    std::size_t clips = 0;
    double audio_seconds = 0.0;
    double wall_seconds = 0.0;  // median over repeats
    double rtf = 0.0;
    int threads = 1;
    std::vector<double> repeat_seconds;
    std::vector<RtfStage> breakdown;  // from the median repeat, summed over clips

    // Relative spread (max - min) / median over repeats.
    double spread() const;
    std::string to_text() const;
    nlohmann::json to_json() const;
};

// Times waveform-to-waveform extension S_i -> S_j over the corpus (sinc,
// STFT, blocks, iSTFT included; preparing the S_i inputs is not timed).
// Clips may be at any rate; they are first resampled to S_i.
RtfReport rtf_benchmark(const model::MsBwe<float>& net, std::size_t i, std::size_t j,
                        const std::vector<dsp::Waveform>& corpus, const RtfOptions& opt = {});

}  // namespace msbwe::eval
