#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dsp/fft.hpp"
#include "msbwe/error.hpp"
#include "msbwe/io.hpp"
#include "msbwe/train.hpp"

namespace msbwe::train {

namespace {

using dsp::kTwoPi;

void add_harmonic_stack(std::vector<double>& out, double rate, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double f0_start = 80.0 + 320.0 * u(rng);
    const double f0_end = std::clamp(f0_start * (0.85 + 0.3 * u(rng)), 80.0, 400.0);
    const double tilt = 0.6 + 0.8 * u(rng);
    const double vib_rate = 3.0 + 4.0 * u(rng);
    const double vib_depth = 0.01 * u(rng);
    const double nyq = 0.98 * rate / 2.0;
    const std::size_t n = out.size();
    const auto harmonics = static_cast<int>(nyq / std::max(f0_start, f0_end));

    std::vector<double> phase0(static_cast<std::size_t>(harmonics));
    for (auto& p : phase0) p = kTwoPi * u(rng);
    // Formant-like bumps keep the envelope from being a plain power law.
    const double formant = 500.0 + 2500.0 * u(rng);
    const double formant_bw = 300.0 + 700.0 * u(rng);

    const double f0_mean = 0.5 * (f0_start + f0_end);
    std::vector<double> gain(static_cast<std::size_t>(harmonics));
    for (int k = 1; k <= harmonics; ++k) {
        const double fk = k * f0_mean;
        gain[static_cast<std::size_t>(k - 1)] =
            (1.0 + 2.0 * std::exp(-0.5 * std::pow((fk - formant) / formant_bw, 2.0))) * std::pow(k, -tilt);
    }

    double theta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n);
        const double f0 = (f0_start + (f0_end - f0_start) * frac) *
                          (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * static_cast<double>(i) / rate));
        theta += kTwoPi * f0 / rate;
        double s = 0.0;
        for (int k = 1; k <= harmonics; ++k) {
            const double fk = k * f0;
            if (fk >= nyq) break;
            const auto idx = static_cast<std::size_t>(k - 1);
            s += gain[idx] * std::sin(k * theta + phase0[idx]);
        }
        out[i] += s;
    }
}

void add_chirp(std::vector<double>& out, double rate, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double nyq = rate / 2.0;
    const double fa = 200.0 + (0.9 * nyq - 200.0) * u(rng);
    const double fb = 200.0 + (0.9 * nyq - 200.0) * u(rng);
    const double amp = 0.1 + 0.2 * u(rng);
    const std::size_t n = out.size();
    double theta = kTwoPi * u(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n);
        theta += kTwoPi * (fa + (fb - fa) * frac) / rate;
        out[i] += amp * std::sin(theta);
    }
}

void add_band_noise(std::vector<double>& out, double rate, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double nyq = rate / 2.0;
    const double lo = (0.12 + 0.2 * u(rng)) * nyq;
    const double hi = (0.5 + 0.45 * u(rng)) * nyq;
    const double amp = 0.05 + 0.15 * u(rng);
    const int n = static_cast<int>(out.size());
    auto& fft = dsp::RealFft::cached(n);
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(n / 2 + 1));
    for (std::size_t k = 0; k < spec.size(); ++k) {
        const double f = static_cast<double>(k) * rate / n;
        if (f >= lo && f <= hi) spec[k] = std::polar(1.0, kTwoPi * u(rng));
    }
    std::vector<double> noise(static_cast<std::size_t>(n));
    fft.inverse(spec, noise);
    double rms = 0.0;
    for (double v : noise) rms += v * v;
    rms = std::sqrt(rms / n);
    if (rms == 0.0) return;
    // A raised-cosine burst somewhere in the clip.
    const double centre = u(rng), width = 0.2 + 0.6 * u(rng);
    for (int i = 0; i < n; ++i) {
        const double x = (static_cast<double>(i) / n - centre) / width;
        const double env = std::abs(x) < 0.5 ? 0.5 * (1.0 + std::cos(kTwoPi * x)) : 0.0;
        out[static_cast<std::size_t>(i)] += amp * env * noise[static_cast<std::size_t>(i)] / rms;
    }
}

}  // namespace

std::vector<dsp::Waveform> synth_corpus(const SynthCorpusSpec& spec) {
    if (spec.n_clips < 0 || spec.clip_len < 1 || !(spec.rate > 0.0))
        throw InvalidArgument("synthetic corpus needs n_clips >= 0, clip_len >= 1 and a positive rate");
    std::vector<dsp::Waveform> clips;
    for (int c = 0; c < spec.n_clips; ++c) {
        std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(c)};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        dsp::Waveform w{std::vector<double>(static_cast<std::size_t>(spec.clip_len), 0.0), spec.rate};
        add_harmonic_stack(w.samples, spec.rate, rng);
        if (u(rng) < 0.5) add_chirp(w.samples, spec.rate, rng);
        if (u(rng) < 0.7) add_band_noise(w.samples, spec.rate, rng);
        double peak = 0.0;
        for (double v : w.samples) peak = std::max(peak, std::abs(v));
        const double target = 0.5 + 0.45 * u(rng);
        if (peak > 0.0)
            for (auto& v : w.samples) v *= target / peak;
        clips.push_back(std::move(w));
    }
    return clips;
}

CorpusSplit load_wav_corpus(const std::string& dir, double split_ratio, std::uint64_t seed, double rate,
                            int clip_len) {
    namespace fs = std::filesystem;
    if (!(split_ratio >= 0.0 && split_ratio <= 1.0)) throw InvalidArgument("split ratio must lie in [0, 1]");
    if (clip_len < 1) throw InvalidArgument("clip_len must be >= 1");
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw DataError("corpus directory '" + dir + "' does not exist");

    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".wav") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());

    CorpusSplit split;
    std::vector<dsp::Waveform> files;
    for (const auto& p : paths) {
        try {
            auto w = io::read_wav(p);
            if (w.rate != rate) {
                split.warnings.push_back(p + ": rate " + std::to_string(static_cast<long>(w.rate)) + " Hz, expected " +
                                         std::to_string(static_cast<long>(rate)));
                continue;
            }
            files.push_back(std::move(w));
        } catch (const DataError& e) {
            split.warnings.push_back(e.what());
        }
    }
    if (files.empty()) throw DataError("corpus directory '" + dir + "' has no usable WAV files");

    std::vector<std::size_t> order(files.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(files.size())));

    const auto len = static_cast<std::size_t>(clip_len);
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& f = files[order[k]];
        auto& dst = k < n_train ? split.train : split.test;
        for (std::size_t start = 0; start < f.size(); start += len) {
            const std::size_t remain = f.size() - start;
            if (remain < len && remain * 2 < len && start > 0) break;
            dsp::Waveform clip{std::vector<double>(len, 0.0), rate};
            std::copy_n(f.samples.begin() + static_cast<std::ptrdiff_t>(start), std::min(remain, len), clip.samples.begin());
            dst.push_back(std::move(clip));
        }
    }
    return split;
}

CorpusSplit load_corpus(const CorpusConfig& cfg, double rate, int clip_len) {
    if (!cfg.wav_dir.empty()) return load_wav_corpus(cfg.wav_dir, cfg.split, cfg.synth.seed, rate, clip_len);
    CorpusSplit split;
    SynthCorpusSpec spec = cfg.synth;
    spec.rate = rate;
    spec.clip_len = clip_len;
    split.train = synth_corpus(spec);
    spec.n_clips = cfg.test_clips;
    spec.seed = cfg.synth.seed + 1000;
    split.test = synth_corpus(spec);
    return split;
}

ClipFeatures clip_features(const dsp::Waveform& clip, const model::CascadeConfig& cfg) {
    const double top = cfg.container_rate();
    if (clip.rate != top) throw InvalidArgument("training clips must be at the container rate");
    ClipFeatures out;
    for (std::size_t n = 0; n < cfg.rates.size(); ++n) {
        dsp::Waveform band = clip;
        if (n + 1 < cfg.rates.size()) {
            band = dsp::sinc_resample(dsp::sinc_resample(clip, cfg.rates[n]), top);
            band.samples.resize(clip.size(), 0.0);
        }
        out.pairs.push_back(dsp::stft_log_amp_phase(band, cfg.stft, cfg.rates[n]));
        out.waveforms.push_back(std::move(band.samples));
    }
    return out;
}

TrainingBatch make_training_batch(const std::vector<const ClipFeatures*>& clips) {
    if (clips.empty()) throw InvalidArgument("empty training batch");
    const std::size_t stages = clips.front()->pairs.size();
    const std::size_t b = clips.size();
    TrainingBatch batch;
    for (std::size_t n = 0; n < stages; ++n) {
        const auto& first = clips.front()->pairs[n];
        const std::size_t grid = first.bins * first.frames;
        const std::size_t len = clips.front()->waveforms[n].size();
        std::vector<float> la(b * grid), ph(b * grid), wav(b * len);
        for (std::size_t k = 0; k < b; ++k) {
            const auto& p = clips[k]->pairs[n];
            const auto& w = clips[k]->waveforms[n];
            if (p.bins * p.frames != grid || w.size() != len)
                throw InvalidArgument("clips in a batch must share one length");
            std::copy(p.log_amp.begin(), p.log_amp.end(), la.begin() + static_cast<std::ptrdiff_t>(k * grid));
            std::copy(p.phase.begin(), p.phase.end(), ph.begin() + static_cast<std::ptrdiff_t>(k * grid));
            std::copy(w.begin(), w.end(), wav.begin() + static_cast<std::ptrdiff_t>(k * len));
        }
        const ad::Shape shape{b, first.bins, first.frames};
        batch.real.push_back({Tensor<float>::from(shape, std::move(la)), Tensor<float>::from(shape, std::move(ph))});
        batch.waves.push_back(Tensor<float>::from({b, 1, len}, std::move(wav)));
    }
    return batch;
}

model::BlockOutput<float> sample_block_inputs(const model::BlockOutput<float>& real,
                                              const model::BlockOutput<float>& generated, double ratio,
                                              std::mt19937_64& rng, std::vector<bool>& chosen_real) {
    if (real.log_amp.shape() != generated.log_amp.shape())
        throw InvalidArgument("real and generated inputs differ in shape");
    const std::size_t b = real.log_amp.dim(0);
    const std::size_t row = real.log_amp.size() / b;
    std::bernoulli_distribution pick(std::clamp(ratio, 0.0, 1.0));
    chosen_real.assign(b, false);
    std::vector<float> la(real.log_amp.size()), ph(real.phase.size());
    for (std::size_t k = 0; k < b; ++k) {
        chosen_real[k] = pick(rng);
        const auto& src = chosen_real[k] ? real : generated;
        const auto off = static_cast<std::ptrdiff_t>(k * row);
        std::copy_n(src.log_amp.data().begin() + off, row, la.begin() + off);
        std::copy_n(src.phase.data().begin() + off, row, ph.begin() + off);
    }
    return {Tensor<float>::from(real.log_amp.shape(), std::move(la)),
            Tensor<float>::from(real.phase.shape(), std::move(ph))};
}

}  // namespace msbwe::train
