#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbwe/ad/ops.hpp"
#include "msbwe/dsp.hpp"

namespace msbwe::model {

struct BlockConfig {
    int freq_bins = 513;
    int hidden = 512;
    int n_convnext = 2;
    int expansion = 3;
    int dw_kernel = 7;
    int in_kernel = 3;   // input projection, 2F -> hidden
    int out_kernel = 1;  // output heads, hidden -> F

    void validate() const;
    bool operator==(const BlockConfig&) const = default;
};

struct CascadeConfig {
    std::vector<double> rates{8000, 12000, 16000, 24000, 48000};
    dsp::StftConfig stft;
    BlockConfig block;

    std::size_t stages() const { return rates.size() - 1; }
    double container_rate() const { return rates.back(); }
    std::optional<std::size_t> index_of(double rate) const;
    // Ascending rates, at least one stage, F = n_fft / 2 + 1.
    void validate() const;
    bool operator==(const CascadeConfig&) const = default;
};

nlohmann::json to_json(const CascadeConfig& cfg);
// Strict: unknown keys raise InvalidArgument naming the key.
CascadeConfig cascade_from_json(const nlohmann::json& j, const std::string& section = "model");

template <typename T>
struct NamedParam {
    std::string name;
    ad::Tensor<T> tensor;
};
template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t count_parameters(const ParamList<T>& params);

// Layers -----------------------------------------------------------------------

template <typename T>
struct Conv1d {
    ad::ConvSpec spec;
    ad::Tensor<T> weight;
    ad::Tensor<T> bias;

    Conv1d() = default;
    Conv1d(const ad::ConvSpec& spec, std::mt19937_64& rng, double init_std = 0.01);
    ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::conv1d(x, weight, bias, spec); }
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

// Layer norm over the channel axis of [B, C, T].
template <typename T>
struct ChannelNorm {
    ad::Tensor<T> gamma;
    ad::Tensor<T> beta;

    ChannelNorm() = default;
    explicit ChannelNorm(std::size_t channels);
    ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::layer_norm(x, gamma, beta, 1); }
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

// x + pw2(grn(gelu(pw1(norm(dw(x)))))).
template <typename T>
struct ConvNeXtV2 {
    Conv1d<T> dw;
    ChannelNorm<T> norm;
    Conv1d<T> pw1;
    ad::Tensor<T> grn_gamma;
    ad::Tensor<T> grn_beta;
    Conv1d<T> pw2;

    ConvNeXtV2() = default;
    ConvNeXtV2(std::size_t channels, std::size_t expansion, std::size_t kernel, std::mt19937_64& rng);
    ad::Tensor<T> operator()(const ad::Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

// Input projection + layer norm, ConvNeXt V2 stack, closing layer norm.
template <typename T>
struct Stream {
    Conv1d<T> input;
    ChannelNorm<T> in_norm;
    std::vector<ConvNeXtV2<T>> blocks;
    ChannelNorm<T> out_norm;

    Stream() = default;
    Stream(const BlockConfig& cfg, std::mt19937_64& rng);
    ad::Tensor<T> operator()(const ad::Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct BlockOutput {
    ad::Tensor<T> log_amp;
    ad::Tensor<T> phase;
};

// One extension stage. Both streams see [log_amp; phase] stacked as 2F channels.
// The amplitude head predicts a residual on the input log-amplitude; the phase
// head predicts pseudo-real/imaginary parts combined with atan2.
template <typename T>
class BweBlock {
public:
    BweBlock() = default;
    BweBlock(const BlockConfig& cfg, std::mt19937_64& rng);

    // log_amp, phase: [B, F, T].
    BlockOutput<T> operator()(const ad::Tensor<T>& log_amp, const ad::Tensor<T>& phase) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;

    Stream<T> amp_stream;
    Stream<T> phase_stream;
    Conv1d<T> amp_out;
    Conv1d<T> phase_real;
    Conv1d<T> phase_imag;

private:
    std::size_t freq_bins_ = 0;
};

// Timing breakdown of one extend_waveform call, in seconds.
struct ExtendProfile {
    double resample_in = 0.0;
    double analysis = 0.0;
    std::vector<double> blocks;  // per executed block, in execution order
    double synthesis = 0.0;
    double resample_out = 0.0;
};

// The cascade: N = rates.size() - 1 blocks, block n extends S_{n-1} -> S_n.
// Block indices in this API are 1-based to match stage numbering.
template <typename T>
class MsBwe {
public:
    explicit MsBwe(CascadeConfig cfg, std::uint64_t seed = 0);
    MsBwe(const MsBwe&) = delete;
    MsBwe& operator=(const MsBwe&) = delete;

    const CascadeConfig& config() const { return cfg_; }
    std::size_t stages() const { return blocks_.size(); }
    const BweBlock<T>& block(std::size_t n) const { return blocks_.at(n - 1); }
    BweBlock<T>& block(std::size_t n) { return blocks_.at(n - 1); }

    // Runs block n on [B, F, T] tensors.
    BlockOutput<T> forward_block(std::size_t n, const ad::Tensor<T>& log_amp, const ad::Tensor<T>& phase) const;

    // Blocks i+1 .. j applied in order; requires pair.effective_rate == S_i and
    // pair.rate == S_N. The result is marked effective_rate = S_j.
    dsp::SpectrumPair cascade_extend(const dsp::SpectrumPair& pair, std::size_t i, std::size_t j) const;

    // sinc -> STFT -> cascade -> iSTFT (-> sinc down to tgt when tgt < S_N).
    dsp::Waveform extend_waveform(const dsp::Waveform& wav, double src_rate, double tgt_rate,
                                  ExtendProfile* profile = nullptr) const;

    ParamList<T> parameters() const;
    ParamList<T> block_parameters(std::size_t n) const;
    std::size_t parameter_count() const { return count_parameters(parameters()); }

    // Number of block forward passes since construction or the last reset.
    std::size_t blocks_executed() const { return executed_.load(); }
    void reset_counter() { executed_.store(0); }

private:
    CascadeConfig cfg_;
    std::vector<BweBlock<T>> blocks_;
    mutable std::atomic<std::size_t> executed_{0};
};

// Packs a SpectrumPair as [1, F, T] tensors and back.
template <typename T>
BlockOutput<T> to_tensors(const dsp::SpectrumPair& pair);
template <typename T>
void write_back(const BlockOutput<T>& out, std::size_t batch_index, dsp::SpectrumPair& pair);

}  // namespace msbwe::model
