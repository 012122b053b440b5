#include "msbwe/gan.hpp"

#include <cmath>

#include "msbwe/error.hpp"
#include "msbwe/json_fields.hpp"

namespace msbwe::gan {

void LossWeights::validate() const {
    for (double v : {amp, phase, complex, adv})
        if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("loss weights must be finite and non-negative");
}

void DiscConfig::validate() const {
    if (wave_channels < 1 || wave_max_channels < wave_channels || wave_max_groups < 1 || spec_channels < 1)
        throw InvalidArgument("discriminator widths must be positive with wave_max_channels >= wave_channels");
}

nlohmann::json to_json(const LossWeights& w) {
    return {{"amp", w.amp}, {"phase", w.phase}, {"complex", w.complex}, {"adv", w.adv}};
}

nlohmann::json to_json(const DiscConfig& c) {
    return {{"wave_channels", c.wave_channels}, {"wave_max_channels", c.wave_max_channels},
            {"wave_max_groups", c.wave_max_groups}, {"spec_channels", c.spec_channels}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j, const std::string& section) {
    LossWeights w;
    FieldReader r(j, section);
    r.get("amp", w.amp);
    r.get("phase", w.phase);
    r.get("complex", w.complex);
    r.get("adv", w.adv);
    r.finish();
    return w;
}

DiscConfig disc_config_from_json(const nlohmann::json& j, const std::string& section) {
    DiscConfig c;
    FieldReader r(j, section);
    r.get("wave_channels", c.wave_channels);
    r.get("wave_max_channels", c.wave_max_channels);
    r.get("wave_max_groups", c.wave_max_groups);
    r.get("spec_channels", c.spec_channels);
    r.finish();
    return c;
}

namespace {

// He-style scale so the deep leaky-ReLU stacks start with usable gradients.
double fan_in_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const ad::ConvSpec2D& s, std::mt19937_64& rng) : spec(s) {
    spec.validate();
    const std::size_t fan_in = s.in_channels / s.groups * s.kernel_h * s.kernel_w;
    std::normal_distribution<double> d(0.0, fan_in_std(fan_in));
    std::vector<T> w(s.out_channels * fan_in);
    for (auto& v : w) v = static_cast<T>(d(rng));
    weight = Tensor<T>::from({s.out_channels, s.in_channels / s.groups, s.kernel_h, s.kernel_w}, std::move(w), true);
    bias = Tensor<T>::zeros({s.out_channels}, true);
}

template <typename T>
void Conv2d<T>::collect(model::ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
WaveDiscriminator<T>::WaveDiscriminator(const DiscConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    auto add = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t groups) {
        ad::ConvSpec s;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kernel_size = k;
        s.stride = stride;
        s.groups = groups;
        s.padding = k / 2;
        layers_.emplace_back(s, rng, fan_in_std(cin / groups * k));
    };
    const auto cap = static_cast<std::size_t>(cfg.wave_max_channels);
    std::size_t ch = static_cast<std::size_t>(cfg.wave_channels);
    add(1, ch, 15, 1, 1);
    for (int i = 0; i < 4; ++i) {
        const std::size_t next = std::min(ch * 4, cap);
        std::size_t g = std::min<std::size_t>(static_cast<std::size_t>(cfg.wave_max_groups), std::max<std::size_t>(1, ch / 4));
        while (ch % g != 0 || next % g != 0) --g;
        add(ch, next, 41, 4, g);
        ch = next;
    }
    add(ch, ch, 5, 1, 1);
    add(ch, 1, 3, 1, 1);
}

template <typename T>
std::size_t WaveDiscriminator<T>::score_length(std::size_t length) {
    for (int i = 0; i < 4; ++i) length = (length + 3) / 4;
    return length;
}

template <typename T>
Tensor<T> WaveDiscriminator<T>::operator()(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(1) != 1)
        throw InvalidArgument("waveform discriminator expects [B, 1, L], got " + ad::shape_string(x.shape()));
    if (x.dim(2) < kMinLength)
        throw InvalidArgument("waveform discriminator needs at least " + std::to_string(kMinLength) +
                              " samples, got " + std::to_string(x.dim(2)));
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i](h);
        if (i + 1 < layers_.size()) h = ad::leaky_relu(h, T(0.1));
    }
    return h;
}

template <typename T>
void WaveDiscriminator<T>::collect(model::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
}

template <typename T>
SpectralDiscriminator<T>::SpectralDiscriminator(const DiscConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const auto c = static_cast<std::size_t>(cfg.spec_channels);
    auto add = [&](std::size_t cin, std::size_t cout, std::size_t kw, std::size_t sw) {
        ad::ConvSpec2D s;
        s.in_channels = cin;
        s.out_channels = cout;
        s.kernel_h = 3;
        s.kernel_w = kw;
        s.stride_w = sw;
        s.padding_h = 1;
        s.padding_w = kw / 2;
        layers_.emplace_back(s, rng);
    };
    add(1, c, 9, 1);
    for (int i = 0; i < 3; ++i) add(c, c, 9, 2);
    add(c, c, 3, 1);
    add(c, 1, 3, 1);
}

template <typename T>
Tensor<T> SpectralDiscriminator<T>::operator()(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 1)
        throw InvalidArgument("spectral discriminator expects [B, 1, F, T], got " + ad::shape_string(x.shape()));
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i](h);
        if (i + 1 < layers_.size()) h = ad::leaky_relu(h, T(0.1));
    }
    return h;
}

template <typename T>
void SpectralDiscriminator<T>::collect(model::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".conv" + std::to_string(i));
}

template <typename T>
Discriminators<T>::Discriminators(const DiscConfig& cfg, std::size_t stages, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < stages; ++n) {
        DiscriminatorSet<T> s;
        s.wave = WaveDiscriminator<T>(cfg, rng);
        s.amp = SpectralDiscriminator<T>(cfg, rng);
        s.phase = SpectralDiscriminator<T>(cfg, rng);
        sets_.push_back(std::move(s));
    }
}

template <typename T>
model::ParamList<T> Discriminators<T>::parameters() const {
    model::ParamList<T> out;
    for (std::size_t n = 0; n < sets_.size(); ++n) {
        const std::string p = "disc" + std::to_string(n + 1);
        sets_[n].wave.collect(out, p + ".wave");
        sets_[n].amp.collect(out, p + ".amp");
        sets_[n].phase.collect(out, p + ".phase");
    }
    return out;
}

// ---- losses ----------------------------------------------------------------

template <typename T>
Tensor<T> hinge_d_loss(const Tensor<T>& real, const Tensor<T>& fake) {
    const Tensor<T> r = ad::mean(ad::relu(ad::add_scalar(ad::scale(real, T(-1)), T(1))));
    const Tensor<T> f = ad::mean(ad::relu(ad::add_scalar(fake, T(1))));
    return ad::add(r, f);
}

template <typename T>
Tensor<T> hinge_g_loss(const Tensor<T>& fake) {
    return ad::scale(ad::mean(fake), T(-1));
}

template <typename T>
Tensor<T> amp_loss(const Tensor<T>& est, const Tensor<T>& ref) {
    return ad::mean(ad::square(ad::sub(est, ref)));
}

template <typename T>
PhaseLosses<T> phase_losses(const Tensor<T>& est, const Tensor<T>& ref) {
    if (est.shape() != ref.shape() || est.rank() != 3)
        throw InvalidArgument("phase losses need matching [B, F, T] inputs");
    PhaseLosses<T> out;
    out.ip = ad::mean(ad::anti_wrap_abs(ad::sub(est, ref)));
    out.gd = ad::mean(ad::anti_wrap_abs(ad::sub(ad::diff(est, 1), ad::diff(ref, 1))));
    out.iaf = ad::mean(ad::anti_wrap_abs(ad::sub(ad::diff(est, 2), ad::diff(ref, 2))));
    return out;
}

template <typename T>
Tensor<T> complex_stft_loss(const model::BlockOutput<T>& est, const model::BlockOutput<T>& ref) {
    const Tensor<T> ae = ad::exp(est.log_amp);
    const Tensor<T> ar = ad::exp(ref.log_amp);
    const Tensor<T> dre = ad::sub(ad::mul(ae, ad::cos(est.phase)), ad::mul(ar, ad::cos(ref.phase)));
    const Tensor<T> dim = ad::sub(ad::mul(ae, ad::sin(est.phase)), ad::mul(ar, ad::sin(ref.phase)));
    return ad::mean(ad::add(ad::square(dre), ad::square(dim)));
}

template <typename T>
StageLoss<T> generator_stage_loss(const model::BlockOutput<T>& est, const model::BlockOutput<T>& ref,
                                  const std::vector<Tensor<T>>& fake_scores, const LossWeights& w) {
    StageLoss<T> s;
    const Tensor<T> la = amp_loss(est.log_amp, ref.log_amp);
    const PhaseLosses<T> ph = phase_losses(est.phase, ref.phase);
    const Tensor<T> cx = complex_stft_loss(est, ref);
    Tensor<T> total = ad::scale(la, static_cast<T>(w.amp));
    total = ad::add(total, ad::scale(ad::add(ad::add(ph.ip, ph.gd), ph.iaf), static_cast<T>(w.phase)));
    total = ad::add(total, ad::scale(cx, static_cast<T>(w.complex)));
    double adv = 0.0;
    for (const auto& f : fake_scores) {
        const Tensor<T> g = hinge_g_loss(f);
        adv += static_cast<double>(g.item());
        total = ad::add(total, ad::scale(g, static_cast<T>(w.adv)));
    }
    s.total = total;
    s.amp = static_cast<double>(la.item());
    s.ip = static_cast<double>(ph.ip.item());
    s.gd = static_cast<double>(ph.gd.item());
    s.iaf = static_cast<double>(ph.iaf.item());
    s.complex = static_cast<double>(cx.item());
    s.adv = adv;
    return s;
}

template <typename T>
Tensor<T> generator_total_loss(const std::vector<StageLoss<T>>& stages) {
    if (stages.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> total = stages.front().total;
    for (std::size_t i = 1; i < stages.size(); ++i) total = ad::add(total, stages[i].total);
    return total;
}

#define MSBWE_INSTANTIATE(T)                                                                                  \
    template struct Conv2d<T>;                                                                                \
    template class WaveDiscriminator<T>;                                                                      \
    template class SpectralDiscriminator<T>;                                                                  \
    template class Discriminators<T>;                                                                         \
    template Tensor<T> hinge_d_loss(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> hinge_g_loss(const Tensor<T>&);                                                        \
    template Tensor<T> amp_loss(const Tensor<T>&, const Tensor<T>&);                                          \
    template PhaseLosses<T> phase_losses(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> complex_stft_loss(const model::BlockOutput<T>&, const model::BlockOutput<T>&);         \
    template StageLoss<T> generator_stage_loss(const model::BlockOutput<T>&, const model::BlockOutput<T>&,    \
                                               const std::vector<Tensor<T>>&, const LossWeights&);            \
    template Tensor<T> generator_total_loss(const std::vector<StageLoss<T>>&);

MSBWE_INSTANTIATE(float)
MSBWE_INSTANTIATE(double)

#undef MSBWE_INSTANTIATE

}  // namespace msbwe::gan
