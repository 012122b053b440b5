#include "msbwe/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "msbwe/error.hpp"

namespace msbwe::eval {

void LsdConfig::validate() const {
    stft().validate();
    if (!(floor > 0.0)) throw InvalidArgument("lsd floor must be positive");
}

namespace {

struct Aligned {
    dsp::Waveform ref, est;
};

Aligned align(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg) {
    cfg.validate();
    if (ref.rate != est.rate)
        throw InvalidArgument("rate mismatch: reference " + std::to_string(ref.rate) + " Hz, estimate " +
                              std::to_string(est.rate) + " Hz");
    const std::size_t a = ref.size(), b = est.size();
    if ((a > b ? a - b : b - a) > static_cast<std::size_t>(cfg.hop))
        throw InvalidArgument("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b) + " samples");
    const std::size_t n = std::min(a, b);
    if (n == 0) throw InvalidArgument("cannot compare empty waveforms");
    Aligned out{ref, est};
    out.ref.samples.resize(n);
    out.est.samples.resize(n);
    return out;
}

// Inclusive bin range whose centre frequencies lie in [lo, hi].
std::pair<std::size_t, std::size_t> bin_range(double rate, const LsdConfig& cfg, double lo, double hi) {
    const double nyquist = rate / 2.0;
    if (!(lo >= 0.0) || !(hi > lo)) throw InvalidArgument("band must satisfy 0 <= f_lo < f_hi");
    if (hi > nyquist + 1e-9)
        throw InvalidArgument("band upper edge " + std::to_string(hi) + " Hz lies above Nyquist " +
                              std::to_string(nyquist) + " Hz");
    const double df = rate / cfg.n_fft;
    const auto first = static_cast<std::size_t>(std::ceil(lo / df - 1e-9));
    const auto last = static_cast<std::size_t>(std::floor(hi / df + 1e-9));
    if (first > last) throw InvalidArgument("band contains no analysis bin");
    return {first, last};
}

double lsd_bins(const Aligned& p, const LsdConfig& cfg, std::size_t f0, std::size_t f1) {
    const dsp::ComplexSpectrogram r = dsp::stft(p.ref, cfg.stft());
    const dsp::ComplexSpectrogram e = dsp::stft(p.est, cfg.stft());
    const double count = static_cast<double>(f1 - f0 + 1);
    double total = 0.0;
    for (std::size_t t = 0; t < r.frames; ++t) {
        double acc = 0.0;
        for (std::size_t f = f0; f <= f1; ++f) {
            const double d = std::log10(std::max(std::norm(r.at(f, t)), cfg.floor)) -
                             std::log10(std::max(std::norm(e.at(f, t)), cfg.floor));
            acc += d * d;
        }
        total += std::sqrt(acc / count);
    }
    return total / static_cast<double>(r.frames);
}

}  // namespace

double lsd(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg) {
    const Aligned p = align(ref, est, cfg);
    return lsd_bins(p, cfg, 0, static_cast<std::size_t>(cfg.n_fft / 2));
}

double lsd_band(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg, double f_lo, double f_hi) {
    const Aligned p = align(ref, est, cfg);
    const auto [f0, f1] = bin_range(ref.rate, cfg, f_lo, f_hi);
    return lsd_bins(p, cfg, f0, f1);
}

double spectral_snr(const dsp::Waveform& ref, const dsp::Waveform& est, const LsdConfig& cfg) {
    const Aligned p = align(ref, est, cfg);
    const dsp::ComplexSpectrogram r = dsp::stft(p.ref, cfg.stft());
    const dsp::ComplexSpectrogram e = dsp::stft(p.est, cfg.stft());
    double sig = 0.0, err = 0.0;
    for (std::size_t k = 0; k < r.data.size(); ++k) {
        sig += std::norm(r.data[k]);
        err += std::norm(r.data[k] - e.data[k]);
    }
    if (err == 0.0) return kSnrCap;
    if (sig == 0.0) return -kSnrCap;
    return std::clamp(10.0 * std::log10(sig / err), -kSnrCap, kSnrCap);
}

PairMetrics compare(const dsp::Waveform& ref, const dsp::Waveform& est, double split_hz, const LsdConfig& cfg) {
    PairMetrics m;
    m.lsd = lsd(ref, est, cfg);
    m.lsd_low = lsd_band(ref, est, cfg, 0.0, split_hz);
    m.lsd_high = lsd_band(ref, est, cfg, split_hz, ref.rate / 2.0);
    m.snr = spectral_snr(ref, est, cfg);
    return m;
}

PairTask make_task(const dsp::Waveform& clip, double src_rate, double tgt_rate) {
    if (!(src_rate < tgt_rate)) throw InvalidArgument("source rate must be below target rate");
    PairTask t;
    t.input = dsp::sinc_resample(clip, src_rate);
    t.reference = dsp::sinc_resample(clip, tgt_rate);
    t.baseline = dsp::sinc_resample(t.input, tgt_rate);
    t.baseline.samples.resize(t.reference.size(), 0.0);
    return t;
}

nlohmann::json PairScore::to_json() const {
    auto metrics = [](const PairMetrics& m) {
        return nlohmann::json{{"lsd", m.lsd}, {"lsd_low", m.lsd_low}, {"lsd_high", m.lsd_high}, {"snr_db", m.snr}};
    };
    return {{"i", i},           {"j", j},       {"src_rate", src_rate},
            {"tgt_rate", tgt_rate}, {"clips", clips}, {"model", metrics(model)},
            {"baseline", metrics(baseline)}, {"improvement", improvement()}};
}

PairScore score_pair(const model::MsBwe<float>& net, const std::vector<dsp::Waveform>& clips, std::size_t i,
                     std::size_t j, const LsdConfig& cfg) {
    const auto& rates = net.config().rates;
    if (i >= j || j >= rates.size()) throw InvalidArgument("invalid ladder pair");
    if (clips.empty()) throw InvalidArgument("no clips to score");
    PairScore s;
    s.i = i;
    s.j = j;
    s.src_rate = rates[i];
    s.tgt_rate = rates[j];
    s.clips = clips.size();
    auto accumulate = [](PairMetrics& into, const PairMetrics& m) {
        into.lsd += m.lsd;
        into.lsd_low += m.lsd_low;
        into.lsd_high += m.lsd_high;
        into.snr += m.snr;
    };
    for (const auto& clip : clips) {
        const PairTask task = make_task(clip, s.src_rate, s.tgt_rate);
        const dsp::Waveform out = net.extend_waveform(task.input, s.src_rate, s.tgt_rate);
        accumulate(s.model, compare(task.reference, out, s.src_rate / 2.0, cfg));
        accumulate(s.baseline, compare(task.reference, task.baseline, s.src_rate / 2.0, cfg));
    }
    const double n = static_cast<double>(clips.size());
    for (PairMetrics* m : {&s.model, &s.baseline}) {
        m->lsd /= n;
        m->lsd_low /= n;
        m->lsd_high /= n;
        m->snr /= n;
    }
    return s;
}

std::vector<PairScore> score_all_pairs(const model::MsBwe<float>& net, const std::vector<dsp::Waveform>& clips,
                                       const LsdConfig& cfg) {
    std::vector<PairScore> out;
    const std::size_t n = net.config().rates.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) out.push_back(score_pair(net, clips, i, j, cfg));
    return out;
}

// ---- real-time factor -------------------------------------------------------------

double RtfReport::spread() const {
    if (repeat_seconds.empty() || wall_seconds <= 0.0) return 0.0;
    const auto [lo, hi] = std::minmax_element(repeat_seconds.begin(), repeat_seconds.end());
    return (*hi - *lo) / wall_seconds;
}

std::string RtfReport::to_text() const {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "pair: " << src_rate << " -> " << tgt_rate << " Hz (" << i << " -> " << j << ")\n";
    os << "n_stages: " << n_stages << "\n";
    os << "clips: " << clips << "\n";
    os << "audio_seconds: " << audio_seconds << "\n";
    os << "wall_seconds: " << wall_seconds << "\n";
    os << "rtf: " << rtf << "\n";
    os << "threads: " << threads << "\n";
    os << "repeats: " << repeat_seconds.size() << "\n";
    os << "spread: " << spread() << "\n";
    for (const auto& s : breakdown) os << "stage " << s.name << ": " << s.seconds << " s (" << 100.0 * s.share << "%)\n";
    return os.str();
}

nlohmann::json RtfReport::to_json() const {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : breakdown) stages.push_back({{"name", s.name}, {"seconds", s.seconds}, {"share", s.share}});
    return {{"i", i},
            {"j", j},
            {"src_rate", src_rate},
            {"tgt_rate", tgt_rate},
            {"n_stages", n_stages},
            {"clips", clips},
            {"audio_seconds", audio_seconds},
            {"wall_seconds", wall_seconds},
            {"rtf", rtf},
            {"threads", threads},
            {"repeat_seconds", repeat_seconds},
            {"breakdown", stages}};
}

namespace {

struct PassTiming {
    double wall = 0.0;
    model::ExtendProfile profile;  // summed over clips
};

void add_profile(model::ExtendProfile& into, const model::ExtendProfile& p) {
    into.resample_in += p.resample_in;
    into.analysis += p.analysis;
    into.synthesis += p.synthesis;
    into.resample_out += p.resample_out;
    if (into.blocks.size() < p.blocks.size()) into.blocks.resize(p.blocks.size(), 0.0);
    for (std::size_t k = 0; k < p.blocks.size(); ++k) into.blocks[k] += p.blocks[k];
}

PassTiming timed_pass(const model::MsBwe<float>& net, const std::vector<dsp::Waveform>& inputs, double src,
                      double tgt, int threads) {
    using clock = std::chrono::steady_clock;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), inputs.size());
    std::vector<model::ExtendProfile> profiles(workers);
    const auto t0 = clock::now();
    auto work = [&](std::size_t w) {
        for (std::size_t k = w; k < inputs.size(); k += workers) {
            model::ExtendProfile p;
            net.extend_waveform(inputs[k], src, tgt, &p);
            add_profile(profiles[w], p);
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    PassTiming out;
    out.wall = std::chrono::duration<double>(clock::now() - t0).count();
    for (const auto& p : profiles) add_profile(out.profile, p);
    return out;
}

}  // namespace

namespace {

void pin_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace

RtfReport rtf_benchmark(const model::MsBwe<float>& net, std::size_t i, std::size_t j,
                        const std::vector<dsp::Waveform>& corpus, const RtfOptions& opt) {
    const auto& rates = net.config().rates;
    if (i >= j || j >= rates.size()) throw InvalidArgument("invalid ladder pair");
    if (corpus.empty()) throw InvalidArgument("benchmark corpus is empty");
    if (opt.repeats < 1 || opt.warmup < 0 || opt.threads < 1)
        throw InvalidArgument("repeats and threads must be >= 1, warmup >= 0");

    if (opt.pin_allocator) pin_allocator();

    RtfReport r;
    r.i = i;
    r.j = j;
    r.src_rate = rates[i];
    r.tgt_rate = rates[j];
    r.n_stages = j - i;
    r.clips = corpus.size();
    r.threads = opt.threads;

    std::vector<dsp::Waveform> inputs;
    for (const auto& clip : corpus) {
        inputs.push_back(clip.rate == r.src_rate ? clip : dsp::sinc_resample(clip, r.src_rate));
        r.audio_seconds += inputs.back().duration();
    }

    for (int k = 0; k < opt.warmup; ++k) timed_pass(net, inputs, r.src_rate, r.tgt_rate, opt.threads);
    std::vector<PassTiming> passes;
    for (int k = 0; k < opt.repeats; ++k) {
        passes.push_back(timed_pass(net, inputs, r.src_rate, r.tgt_rate, opt.threads));
        r.repeat_seconds.push_back(passes.back().wall);
    }
    std::vector<std::size_t> order(passes.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return passes[a].wall < passes[b].wall; });
    const PassTiming& med = passes[order[order.size() / 2]];
    r.wall_seconds = med.wall;
    r.rtf = r.wall_seconds / r.audio_seconds;

    const auto& p = med.profile;
    std::vector<RtfStage> stages{{"resample_in", p.resample_in, 0.0}, {"analysis", p.analysis, 0.0}};
    for (std::size_t k = 0; k < p.blocks.size(); ++k)
        stages.push_back({"block" + std::to_string(i + 1 + k), p.blocks[k], 0.0});
    stages.push_back({"synthesis", p.synthesis, 0.0});
    stages.push_back({"resample_out", p.resample_out, 0.0});
    double total = 0.0;
    for (const auto& s : stages) total += s.seconds;
    for (auto& s : stages) s.share = total > 0.0 ? s.seconds / total : 0.0;
    r.breakdown = std::move(stages);
    return r;
}

}  // namespace msbwe::eval
