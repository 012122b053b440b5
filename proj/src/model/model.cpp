#include "msbwe/model.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "msbwe/error.hpp"
#include "msbwe/json_fields.hpp"

namespace msbwe::model {

using ad::Tensor;

void BlockConfig::validate() const {
    if (freq_bins < 1) throw InvalidArgument("block.freq_bins must be >= 1");
    if (hidden < 1) throw InvalidArgument("block.hidden must be >= 1");
    if (n_convnext < 1) throw InvalidArgument("block.n_convnext must be >= 1");
    if (expansion < 1) throw InvalidArgument("block.expansion must be >= 1");
    if (dw_kernel < 1 || dw_kernel % 2 == 0) throw InvalidArgument("block.dw_kernel must be odd");
    if (in_kernel < 1 || in_kernel % 2 == 0) throw InvalidArgument("block.in_kernel must be odd");
    if (out_kernel < 1 || out_kernel % 2 == 0) throw InvalidArgument("block.out_kernel must be odd");
}

std::optional<std::size_t> CascadeConfig::index_of(double rate) const {
    for (std::size_t i = 0; i < rates.size(); ++i)
        if (rates[i] == rate) return i;
    return std::nullopt;
}

void CascadeConfig::validate() const {
    if (rates.size() < 2) throw InvalidArgument("the rate ladder needs at least two rates");
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (!(rates[i] > 0.0)) throw InvalidArgument("rates must be positive");
        if (i > 0 && !(rates[i] > rates[i - 1])) throw InvalidArgument("rates must be strictly ascending");
    }
    stft.validate();
    block.validate();
    if (block.freq_bins != stft.bins())
        throw InvalidArgument("block.freq_bins (" + std::to_string(block.freq_bins) + ") must equal n_fft / 2 + 1 (" +
                              std::to_string(stft.bins()) + ")");
}

nlohmann::json to_json(const CascadeConfig& cfg) {
    nlohmann::json j;
    j["rates"] = cfg.rates;
    j["stft"] = {{"n_fft", cfg.stft.n_fft}, {"win_len", cfg.stft.win_len}, {"hop", cfg.stft.hop}};
    j["block"] = {{"freq_bins", cfg.block.freq_bins}, {"hidden", cfg.block.hidden},
                  {"n_convnext", cfg.block.n_convnext}, {"expansion", cfg.block.expansion},
                  {"dw_kernel", cfg.block.dw_kernel}, {"in_kernel", cfg.block.in_kernel},
                  {"out_kernel", cfg.block.out_kernel}};
    return j;
}

CascadeConfig cascade_from_json(const nlohmann::json& j, const std::string& section) {
    CascadeConfig cfg;
    FieldReader top(j, section);
    top.get("rates", cfg.rates);
    bool bins_given = false;
    if (const auto* s = top.child("stft")) {
        FieldReader r(*s, top.qualified("stft"));
        r.get("n_fft", cfg.stft.n_fft);
        r.get("win_len", cfg.stft.win_len);
        r.get("hop", cfg.stft.hop);
        r.finish();
    }
    if (const auto* b = top.child("block")) {
        FieldReader r(*b, top.qualified("block"));
        bins_given = b->contains("freq_bins");
        r.get("freq_bins", cfg.block.freq_bins);
        r.get("hidden", cfg.block.hidden);
        r.get("n_convnext", cfg.block.n_convnext);
        r.get("expansion", cfg.block.expansion);
        r.get("dw_kernel", cfg.block.dw_kernel);
        r.get("in_kernel", cfg.block.in_kernel);
        r.get("out_kernel", cfg.block.out_kernel);
        r.finish();
    }
    top.finish();
    if (!bins_given) cfg.block.freq_bins = cfg.stft.bins();
    return cfg;
}

template <typename T>
std::size_t count_parameters(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> normal_tensor(ad::Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<T> v(ad::shape_size(shape));
    for (auto& x : v) x = static_cast<T>(d(rng));
    return Tensor<T>::from(std::move(shape), std::move(v), true);
}

ad::ConvSpec conv_spec(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t groups = 1) {
    ad::ConvSpec s;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel_size = kernel;
    s.groups = groups;
    s.padding = kernel / 2;
    return s;
}

}  // namespace

template <typename T>
Conv1d<T>::Conv1d(const ad::ConvSpec& s, std::mt19937_64& rng, double init_std) : spec(s) {
    spec.validate();
    weight = normal_tensor<T>({s.out_channels, s.in_channels / s.groups, s.kernel_size}, rng, init_std);
    bias = Tensor<T>::zeros({s.out_channels}, true);
}

template <typename T>
void Conv1d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
ChannelNorm<T>::ChannelNorm(std::size_t channels)
    : gamma(Tensor<T>::full({channels}, T(1), true)), beta(Tensor<T>::zeros({channels}, true)) {}

template <typename T>
void ChannelNorm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

template <typename T>
ConvNeXtV2<T>::ConvNeXtV2(std::size_t channels, std::size_t expansion, std::size_t kernel, std::mt19937_64& rng)
    : dw(conv_spec(channels, channels, kernel, channels), rng),
      norm(channels),
      pw1(conv_spec(channels, channels * expansion, 1), rng),
      grn_gamma(Tensor<T>::zeros({channels * expansion}, true)),
      grn_beta(Tensor<T>::zeros({channels * expansion}, true)),
      pw2(conv_spec(channels * expansion, channels, 1), rng) {}

template <typename T>
Tensor<T> ConvNeXtV2<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> h = norm(dw(x));
    h = ad::gelu(pw1(h));
    h = ad::grn(h, grn_gamma, grn_beta);
    return ad::add(x, pw2(h));
}

template <typename T>
void ConvNeXtV2<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    dw.collect(out, prefix + ".dwconv");
    norm.collect(out, prefix + ".norm");
    pw1.collect(out, prefix + ".pwconv1");
    out.push_back({prefix + ".grn.gamma", grn_gamma});
    out.push_back({prefix + ".grn.beta", grn_beta});
    pw2.collect(out, prefix + ".pwconv2");
}

template <typename T>
Stream<T>::Stream(const BlockConfig& cfg, std::mt19937_64& rng)
    : input(conv_spec(2 * static_cast<std::size_t>(cfg.freq_bins), static_cast<std::size_t>(cfg.hidden),
                      static_cast<std::size_t>(cfg.in_kernel)),
            rng),
      in_norm(static_cast<std::size_t>(cfg.hidden)),
      out_norm(static_cast<std::size_t>(cfg.hidden)) {
    for (int i = 0; i < cfg.n_convnext; ++i)
        blocks.emplace_back(static_cast<std::size_t>(cfg.hidden), static_cast<std::size_t>(cfg.expansion),
                            static_cast<std::size_t>(cfg.dw_kernel), rng);
}

template <typename T>
Tensor<T> Stream<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> h = in_norm(input(x));
    for (const auto& b : blocks) h = b(h);
    return out_norm(h);
}

template <typename T>
void Stream<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    input.collect(out, prefix + ".input");
    in_norm.collect(out, prefix + ".in_norm");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".convnext" + std::to_string(i));
    out_norm.collect(out, prefix + ".out_norm");
}

template <typename T>
BweBlock<T>::BweBlock(const BlockConfig& cfg, std::mt19937_64& rng)
    : amp_stream(cfg, rng),
      phase_stream(cfg, rng),
      amp_out(conv_spec(static_cast<std::size_t>(cfg.hidden), static_cast<std::size_t>(cfg.freq_bins),
                        static_cast<std::size_t>(cfg.out_kernel)),
              rng),
      phase_real(conv_spec(static_cast<std::size_t>(cfg.hidden), static_cast<std::size_t>(cfg.freq_bins),
                           static_cast<std::size_t>(cfg.out_kernel)),
                 rng),
      phase_imag(conv_spec(static_cast<std::size_t>(cfg.hidden), static_cast<std::size_t>(cfg.freq_bins),
                           static_cast<std::size_t>(cfg.out_kernel)),
                 rng),
      freq_bins_(static_cast<std::size_t>(cfg.freq_bins)) {
    cfg.validate();
}

template <typename T>
BlockOutput<T> BweBlock<T>::operator()(const Tensor<T>& log_amp, const Tensor<T>& phase) const {
    if (log_amp.rank() != 3 || log_amp.dim(1) != freq_bins_)
        throw InvalidArgument("BWE block expects [B, " + std::to_string(freq_bins_) + ", T] log-amplitude, got " +
                              ad::shape_string(log_amp.shape()));
    if (phase.shape() != log_amp.shape())
        throw InvalidArgument("BWE block: phase shape " + ad::shape_string(phase.shape()) +
                              " differs from log-amplitude shape " + ad::shape_string(log_amp.shape()));
    const Tensor<T> x = ad::concat<T>({log_amp, phase}, 1);
    BlockOutput<T> out;
    out.log_amp = ad::add(log_amp, amp_out(amp_stream(x)));
    const Tensor<T> h = phase_stream(x);
    out.phase = ad::arctan2_phase(phase_imag(h), phase_real(h));
    return out;
}

template <typename T>
void BweBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    amp_stream.collect(out, prefix + ".amp");
    amp_out.collect(out, prefix + ".amp_out");
    phase_stream.collect(out, prefix + ".phase");
    phase_real.collect(out, prefix + ".phase_real");
    phase_imag.collect(out, prefix + ".phase_imag");
}

// ---------------------------------------------------------------------------

template <typename T>
MsBwe<T>::MsBwe(CascadeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < cfg_.stages(); ++n) blocks_.emplace_back(cfg_.block, rng);
}

template <typename T>
BlockOutput<T> MsBwe<T>::forward_block(std::size_t n, const Tensor<T>& log_amp, const Tensor<T>& phase) const {
    if (n < 1 || n > blocks_.size()) throw InvalidArgument("block index " + std::to_string(n) + " out of range");
    executed_.fetch_add(1);
    return blocks_[n - 1](log_amp, phase);
}

template <typename T>
BlockOutput<T> to_tensors(const dsp::SpectrumPair& pair) {
    const ad::Shape shape{1, pair.bins, pair.frames};
    std::vector<T> la(pair.log_amp.begin(), pair.log_amp.end());
    std::vector<T> ph(pair.phase.begin(), pair.phase.end());
    return {Tensor<T>::from(shape, std::move(la)), Tensor<T>::from(shape, std::move(ph))};
}

template <typename T>
void write_back(const BlockOutput<T>& out, std::size_t batch_index, dsp::SpectrumPair& pair) {
    const std::size_t n = pair.bins * pair.frames;
    pair.log_amp.resize(n);
    pair.phase.resize(n);
    const auto la = out.log_amp.data().subspan(batch_index * n, n);
    const auto ph = out.phase.data().subspan(batch_index * n, n);
    for (std::size_t i = 0; i < n; ++i) {
        pair.log_amp[i] = static_cast<double>(la[i]);
        pair.phase[i] = static_cast<double>(ph[i]);
    }
}

template <typename T>
dsp::SpectrumPair MsBwe<T>::cascade_extend(const dsp::SpectrumPair& pair, std::size_t i, std::size_t j) const {
    const std::size_t last = cfg_.stages();
    if (i >= j || j > last)
        throw InvalidArgument("cascade needs 0 <= i < j <= " + std::to_string(last) + ", got i=" + std::to_string(i) +
                              " j=" + std::to_string(j));
    if (pair.rate != cfg_.container_rate())
        throw InvalidArgument("spectrum container rate " + std::to_string(pair.rate) + " is not S_N = " +
                              std::to_string(cfg_.container_rate()));
    if (pair.effective_rate != cfg_.rates[i])
        throw InvalidArgument("spectrum effective rate " + std::to_string(pair.effective_rate) + " is not S_" +
                              std::to_string(i) + " = " + std::to_string(cfg_.rates[i]));
    if (pair.bins != static_cast<std::size_t>(cfg_.block.freq_bins))
        throw InvalidArgument("spectrum has " + std::to_string(pair.bins) + " bins, model expects " +
                              std::to_string(cfg_.block.freq_bins));
    ad::NoGradGuard no_grad;
    BlockOutput<T> cur = to_tensors<T>(pair);
    for (std::size_t n = i + 1; n <= j; ++n) cur = forward_block(n, cur.log_amp, cur.phase);
    dsp::SpectrumPair out = pair;
    write_back(cur, 0, out);
    out.effective_rate = cfg_.rates[j];
    return out;
}

template <typename T>
dsp::Waveform MsBwe<T>::extend_waveform(const dsp::Waveform& wav, double src_rate, double tgt_rate,
                                        ExtendProfile* profile) const {
    const auto i = cfg_.index_of(src_rate);
    const auto j = cfg_.index_of(tgt_rate);
    if (!i || !j)
        throw InvalidArgument("source and target rates must both be on the ladder");
    if (*i >= *j) throw InvalidArgument("source rate must be below target rate");
    if (wav.rate != src_rate)
        throw InvalidArgument("waveform rate " + std::to_string(wav.rate) + " does not match source rate " +
                              std::to_string(src_rate));
    wav.validate();
    if (wav.samples.empty()) throw InvalidArgument("cannot extend an empty waveform");

    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
    const double top = cfg_.container_rate();

    auto t0 = clock::now();
    const dsp::Waveform up = dsp::sinc_resample(wav, top);
    auto t1 = clock::now();
    dsp::SpectrumPair pair = dsp::stft_log_amp_phase(up, cfg_.stft, src_rate);
    auto t2 = clock::now();

    ad::NoGradGuard no_grad;
    BlockOutput<T> cur = to_tensors<T>(pair);
    std::vector<double> block_times;
    for (std::size_t n = *i + 1; n <= *j; ++n) {
        auto b0 = clock::now();
        cur = forward_block(n, cur.log_amp, cur.phase);
        block_times.push_back(seconds(b0, clock::now()));
    }
    write_back(cur, 0, pair);
    pair.effective_rate = tgt_rate;
    auto t3 = clock::now();
    dsp::Waveform out = dsp::istft_log_amp_phase(pair, up.size());
    auto t4 = clock::now();
    if (tgt_rate < top) out = dsp::sinc_resample(out, tgt_rate);
    auto t5 = clock::now();

    if (profile) {
        profile->resample_in = seconds(t0, t1);
        profile->analysis = seconds(t1, t2);
        profile->blocks = std::move(block_times);
        profile->synthesis = seconds(t3, t4);
        profile->resample_out = seconds(t4, t5);
    }
    return out;
}

template <typename T>
ParamList<T> MsBwe<T>::parameters() const {
    ParamList<T> out;
    for (std::size_t n = 1; n <= blocks_.size(); ++n) blocks_[n - 1].collect(out, "block" + std::to_string(n));
    return out;
}

template <typename T>
ParamList<T> MsBwe<T>::block_parameters(std::size_t n) const {
    ParamList<T> out;
    blocks_.at(n - 1).collect(out, "block" + std::to_string(n));
    return out;
}

#define MSBWE_INSTANTIATE(T)                                                              \
    template std::size_t count_parameters(const ParamList<T>&);                           \
    template struct Conv1d<T>;                                                            \
    template struct ChannelNorm<T>;                                                       \
    template struct ConvNeXtV2<T>;                                                        \
    template struct Stream<T>;                                                            \
    template class BweBlock<T>;                                                           \
    template class MsBwe<T>;                                                              \
    template BlockOutput<T> to_tensors(const dsp::SpectrumPair&);                         \
    template void write_back(const BlockOutput<T>&, std::size_t, dsp::SpectrumPair&);

MSBWE_INSTANTIATE(float)
MSBWE_INSTANTIATE(double)

#undef MSBWE_INSTANTIATE

}  // namespace msbwe::model
