#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbwe/model.hpp"

namespace msbwe::gan {

using ad::Tensor;

struct LossWeights {
    double amp = 45.0;
    double phase = 100.0;
    double complex = 22.5;
    double adv = 1.0;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct DiscConfig {
    // Waveform discriminator: channels grow 4x per strided layer from
    // wave_channels up to wave_max_channels; groups are capped at wave_max_groups.
    int wave_channels = 16;
    int wave_max_channels = 1024;
    int wave_max_groups = 16;
    // Spectral discriminators: width of every hidden 2-D layer.
    int spec_channels = 32;

    void validate() const;
    bool operator==(const DiscConfig&) const = default;
};

nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const DiscConfig& c);
LossWeights loss_weights_from_json(const nlohmann::json& j, const std::string& section = "loss");
DiscConfig disc_config_from_json(const nlohmann::json& j, const std::string& section = "disc");

template <typename T>
struct Conv2d {
    ad::ConvSpec2D spec;
    Tensor<T> weight;
    Tensor<T> bias;

    Conv2d() = default;
    Conv2d(const ad::ConvSpec2D& spec, std::mt19937_64& rng);
    Tensor<T> operator()(const Tensor<T>& x) const { return ad::conv2d(x, weight, bias, spec); }
    void collect(model::ParamList<T>& out, const std::string& prefix) const;
};

// Seven 1-D layers: k15, four k41 stride-4 grouped layers, k5, then a k3
// projection to one channel. Leaky ReLU 0.1 between layers.
template <typename T>
class WaveDiscriminator {
public:
    WaveDiscriminator() = default;
    WaveDiscriminator(const DiscConfig& cfg, std::mt19937_64& rng);

    // x: [B, 1, L] -> score map [B, 1, ceil(L / 256)].
    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(model::ParamList<T>& out, const std::string& prefix) const;

    static constexpr std::size_t kMinLength = 256;
    static std::size_t score_length(std::size_t length);

private:
    std::vector<model::Conv1d<T>> layers_;
};

// Six 2-D layers over [B, 1, F, T]: kernel 3x9 (F x T), the middle three with
// stride 2 along time, then 3x3 layers closing to one channel.
template <typename T>
class SpectralDiscriminator {
public:
    SpectralDiscriminator() = default;
    SpectralDiscriminator(const DiscConfig& cfg, std::mt19937_64& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(model::ParamList<T>& out, const std::string& prefix) const;

private:
    std::vector<Conv2d<T>> layers_;
};

template <typename T>
struct DiscriminatorSet {
    WaveDiscriminator<T> wave;
    SpectralDiscriminator<T> amp;
    SpectralDiscriminator<T> phase;
};

// One DiscriminatorSet per BWE block.
template <typename T>
class Discriminators {
public:
    Discriminators(const DiscConfig& cfg, std::size_t stages, std::uint64_t seed);

    std::size_t stages() const { return sets_.size(); }
    const DiscriminatorSet<T>& stage(std::size_t n) const { return sets_.at(n - 1); }
    model::ParamList<T> parameters() const;

private:
    std::vector<DiscriminatorSet<T>> sets_;
};

// ---- losses ----------------------------------------------------------------

// mean(relu(1 - real)) + mean(relu(1 + fake)) over the full score maps.
template <typename T>
Tensor<T> hinge_d_loss(const Tensor<T>& real, const Tensor<T>& fake);
// -mean(fake).
template <typename T>
Tensor<T> hinge_g_loss(const Tensor<T>& fake);

template <typename T>
Tensor<T> amp_loss(const Tensor<T>& log_amp_est, const Tensor<T>& log_amp_ref);

template <typename T>
struct PhaseLosses {
    Tensor<T> ip;   // instantaneous phase
    Tensor<T> gd;   // group delay, differences along frequency
    Tensor<T> iaf;  // instantaneous angular frequency, differences along time
};

// Inputs are [B, F, T].
template <typename T>
PhaseLosses<T> phase_losses(const Tensor<T>& phase_est, const Tensor<T>& phase_ref);

// mean |z_est - z_ref|^2 with z = exp(log_amp) * e^{i phase}.
template <typename T>
Tensor<T> complex_stft_loss(const model::BlockOutput<T>& est, const model::BlockOutput<T>& ref);

template <typename T>
struct StageLoss {
    Tensor<T> total;
    double amp = 0, ip = 0, gd = 0, iaf = 0, complex = 0, adv = 0;
};

// Weighted spectral terms plus the generator hinge term summed over the
// supplied discriminator score maps.
template <typename T>
StageLoss<T> generator_stage_loss(const model::BlockOutput<T>& est, const model::BlockOutput<T>& ref,
                                  const std::vector<Tensor<T>>& fake_scores, const LossWeights& w);

// Sum of per-stage totals.
template <typename T>
Tensor<T> generator_total_loss(const std::vector<StageLoss<T>>& stages);

}  // namespace msbwe::gan
