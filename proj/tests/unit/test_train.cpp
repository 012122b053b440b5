#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "doctest.h"
#include "msbwe/error.hpp"
#include "msbwe/io.hpp"
#include "msbwe/train.hpp"

using namespace msbwe;
using namespace msbwe::train;
namespace fs = std::filesystem;
using TD = ad::Tensor<double>;
using TF = ad::Tensor<float>;

namespace {

// Three-rate ladder small enough to train a few steps in well under a second.
TrainConfig tiny_config() {
    TrainConfig c = desk_preset();
    c.model.rates = {4000, 8000, 16000};
    c.model.stft = {128, 64, 16};
    c.model.block.freq_bins = 65;
    c.model.block.hidden = 8;
    c.model.block.n_convnext = 1;
    c.disc.wave_channels = 4;
    c.disc.wave_max_channels = 8;
    c.disc.wave_max_groups = 2;
    c.disc.spec_channels = 2;
    c.opt.batch_size = 2;
    c.opt.clip_len = 1024;
    c.corpus.synth.n_clips = 6;
    c.corpus.synth.clip_len = 1024;
    c.corpus.synth.rate = 16000;
    c.steps = 6;
    c.deterministic = true;
    return c;
}

std::vector<dsp::Waveform> tiny_clips(const TrainConfig& c) { return synth_corpus(c.corpus.synth); }

// Energy of the Hann-windowed signal between two frequencies, by direct DFT.
double band_energy(std::vector<double> x, double rate, double lo_hz, double hi_hz) {
    const std::size_t n = x.size();
    for (std::size_t t = 0; t < n; ++t) x[t] *= 0.5 - 0.5 * std::cos(dsp::kTwoPi * static_cast<double>(t) / static_cast<double>(n));
    double e = 0.0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double f = static_cast<double>(k) * rate / static_cast<double>(n);
        if (f < lo_hz || f > hi_hz) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double a = -dsp::kTwoPi * static_cast<double>(k * t % n) / static_cast<double>(n);
            re += x[t] * std::cos(a);
            im += x[t] * std::sin(a);
        }
        e += re * re + im * im;
    }
    return e;
}

std::vector<float> flat_params(const model::ParamList<float>& params) {
    std::vector<float> out;
    for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("msbwe_train_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("teacher forcing ratio is a closed-form power") {
    TeacherForcingSchedule s;
    CHECK(tf_ratio(s, 0) == 0.75);
    double iter = s.initial_ratio;
    for (std::uint64_t k = 1; k <= 1000000; ++k) {
        iter *= s.decay;
        if (k % 100000 == 0) CHECK(std::abs(tf_ratio(s, k) - iter) <= 1e-12 * iter);
    }
    s.step = 10;
    CHECK(tf_ratio(s) == doctest::Approx(0.75 * std::pow(0.999995, 10)).epsilon(1e-15));
    CHECK_THROWS_AS((TeacherForcingSchedule{1.5, 0.9, 0}.validate()), InvalidArgument);
    CHECK_THROWS_AS((TeacherForcingSchedule{0.5, 0.0, 0}.validate()), InvalidArgument);
}

TEST_CASE("learning rate decays per epoch") {
    OptimizerConfig o;
    CHECK(lr_at(0, o) == 2e-4);
    CHECK(lr_at(3, o) == doctest::Approx(2e-4 * 0.999 * 0.999 * 0.999).epsilon(1e-14));
}

TEST_CASE("AdamW updates") {
    OptimizerConfig o;
    o.weight_decay = 0.0;
    auto make = [] { return model::ParamList<double>{{"p", TD::from({1}, {1.0}, true)}}; };

    SUBCASE("zero gradient leaves the parameter alone") {
        auto params = make();
        AdamW<double> opt(params, o);
        params[0].tensor.mutable_grad()[0] = 0.0;
        opt.step(0.1);
        CHECK(params[0].tensor[0] == 1.0);
    }
    SUBCASE("first step moves by lr") {
        auto params = make();
        AdamW<double> opt(params, o);
        params[0].tensor.mutable_grad()[0] = 3.0;
        opt.step(0.1);
        CHECK(params[0].tensor[0] == doctest::Approx(0.9).epsilon(1e-9));
        CHECK(opt.steps() == 1);
    }
    SUBCASE("decoupled decay shrinks geometrically") {
        o.weight_decay = 0.5;
        auto params = make();
        AdamW<double> opt(params, o);
        for (int k = 0; k < 5; ++k) opt.step(0.1);
        CHECK(params[0].tensor[0] == doctest::Approx(std::pow(1.0 - 0.1 * 0.5, 5)).epsilon(1e-12));
    }
}

TEST_CASE("scheduled input sampling") {
    const std::size_t b = 2000;
    const model::BlockOutput<float> real{TF::full({b, 2, 1}, 1.0f), TF::full({b, 2, 1}, 2.0f)};
    const model::BlockOutput<float> gen{TF::full({b, 2, 1}, -1.0f), TF::full({b, 2, 1}, -2.0f)};
    std::mt19937_64 rng(5);
    std::vector<bool> chosen;

    auto in = sample_block_inputs(real, gen, 1.0, rng, chosen);
    CHECK(std::all_of(chosen.begin(), chosen.end(), [](bool r) { return r; }));
    CHECK(std::all_of(in.log_amp.data().begin(), in.log_amp.data().end(), [](float v) { return v == 1.0f; }));

    in = sample_block_inputs(real, gen, 0.0, rng, chosen);
    CHECK(std::none_of(chosen.begin(), chosen.end(), [](bool r) { return r; }));
    CHECK(std::all_of(in.phase.data().begin(), in.phase.data().end(), [](float v) { return v == -2.0f; }));

    in = sample_block_inputs(real, gen, 0.5, rng, chosen);
    const double frac = static_cast<double>(std::count(chosen.begin(), chosen.end(), true)) / b;
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
    for (std::size_t k = 0; k < b; ++k) {
        CHECK(in.log_amp[2 * k] == (chosen[k] ? 1.0f : -1.0f));
        CHECK(in.phase[2 * k + 1] == (chosen[k] ? 2.0f : -2.0f));
    }
    CHECK_THROWS_AS(sample_block_inputs(real, {TF::zeros({b, 1, 1}), TF::zeros({b, 1, 1})}, 0.5, rng, chosen),
                    InvalidArgument);
}

TEST_CASE("synthetic corpus") {
    SynthCorpusSpec spec;
    spec.n_clips = 20;
    const auto a = synth_corpus(spec);
    const auto b = synth_corpus(spec);
    REQUIRE(a.size() == 20);
    int occupied = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].samples == b[i].samples);
        CHECK(a[i].rate == 48000);
        CHECK(a[i].size() == 8000);
        double peak = 0.0;
        for (double v : a[i].samples) peak = std::max(peak, std::abs(v));
        CHECK(peak <= 0.95 + 1e-12);
        CHECK(peak >= 0.5 - 1e-12);
        // Content above 12 kHz: within 50 dB of the whole-band energy.
        const dsp::ComplexSpectrogram s = dsp::stft(a[i], {});
        double hi = 0.0, all = 0.0;
        for (std::size_t f = 0; f < s.bins; ++f)
            for (std::size_t t = 0; t < s.frames; ++t) {
                const double e = std::norm(s.at(f, t));
                all += e;
                if (static_cast<double>(f) * 48000.0 / 1024.0 > 12000.0) hi += e;
            }
        if (hi > 1e-5 * all) ++occupied;
    }
    CHECK(occupied >= 18);
    spec.seed = 2;
    CHECK(synth_corpus(spec)[0].samples != a[0].samples);
}

TEST_CASE("wav corpus split") {
    const fs::path empty = fresh_dir("empty");
    CHECK_THROWS_AS(load_wav_corpus(empty.string(), 0.9, 1, 16000, 512), DataError);

    const fs::path dir = fresh_dir("split");
    SynthCorpusSpec spec{10, 512, 16000, 3};
    const auto clips = synth_corpus(spec);
    for (std::size_t i = 0; i < clips.size(); ++i)
        io::write_wav((dir / ("clip" + std::to_string(i) + ".wav")).string(), clips[i], io::WavEncoding::Float32);
    dsp::Waveform other{std::vector<double>(512, 0.1), 8000};
    io::write_wav((dir / "other_rate.wav").string(), other, io::WavEncoding::Float32);

    const auto s1 = load_wav_corpus(dir.string(), 0.9, 7, 16000, 512);
    CHECK(s1.train.size() == 9);
    CHECK(s1.test.size() == 1);
    REQUIRE(s1.warnings.size() == 1);
    CHECK(s1.warnings[0].find("other_rate.wav") != std::string::npos);
    const auto s2 = load_wav_corpus(dir.string(), 0.9, 7, 16000, 512);
    CHECK(s2.test[0].samples == s1.test[0].samples);

    // A file of 2.6 clips yields three clips, the last one zero-padded.
    const fs::path longer = fresh_dir("long");
    dsp::Waveform big{std::vector<double>(1331, 0.25), 16000};
    io::write_wav((longer / "a.wav").string(), big, io::WavEncoding::Float32);
    const auto s3 = load_wav_corpus(longer.string(), 1.0, 1, 16000, 512);
    REQUIRE(s3.train.size() == 3);
    CHECK(s3.train[2].samples[306] == 0.25);
    CHECK(s3.train[2].samples[307] == 0.0);
    fs::remove_all(empty);
    fs::remove_all(dir);
    fs::remove_all(longer);
}

TEST_CASE("clip features and batches") {
    const TrainConfig c = tiny_config();
    const auto clips = tiny_clips(c);
    const ClipFeatures f = clip_features(clips[0], c.model);
    REQUIRE(f.pairs.size() == 3);
    REQUIRE(f.waveforms.size() == 3);
    for (std::size_t n = 0; n < 3; ++n) {
        CHECK(f.pairs[n].effective_rate == c.model.rates[n]);
        CHECK(f.pairs[n].bins == 65);
        CHECK(f.waveforms[n].size() == 1024);
    }
    CHECK(f.waveforms[2] == clips[0].samples);
    // S_0 content is confined below 2 kHz.
    const double all = band_energy(f.waveforms[0], 16000, 0, 8000);
    const double above = band_energy(f.waveforms[0], 16000, 2300, 8000);
    CHECK(10.0 * std::log10(all / above) >= 55.0);

    const ClipFeatures g = clip_features(clips[1], c.model);
    const TrainingBatch batch = make_training_batch({&f, &g});
    REQUIRE(batch.real.size() == 3);
    CHECK(batch.real[1].log_amp.shape() == ad::Shape{2, 65, f.pairs[1].frames});
    CHECK(batch.waves[2].shape() == ad::Shape{2, 1, 1024});
    CHECK(batch.real[1].phase[f.pairs[1].log_amp.size() + 3] == static_cast<float>(g.pairs[1].phase[3]));
    CHECK(batch.waves[0][1024 + 10] == static_cast<float>(g.waveforms[0][10]));
}

TEST_CASE("training configuration") {
    const TrainConfig d = desk_preset();
    CHECK(train_config_from_json(to_json(d)) == d);
    nlohmann::json j = {{"optimizer", {{"lr0", 5e-4}}}, {"model", {{"block", {{"hidden", 32}}}}}};
    const TrainConfig c = train_config_from_json(j, d);
    CHECK(c.opt.lr0 == 5e-4);
    CHECK(c.model.block.hidden == 32);
    CHECK(c.model.rates == d.model.rates);
    try {
        train_config_from_json({{"optimizer", {{"lr_zero", 1.0}}}}, d);
        FAIL("unknown key accepted");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("optimizer.lr_zero") != std::string::npos);
    }
    CHECK_THROWS_AS(train_config_from_json({{"stpes", 3}}, d), InvalidArgument);
}

TEST_CASE("trainer steps and epochs") {
    TrainConfig c = tiny_config();
    c.corpus.synth.n_clips = 5;
    Trainer t(c, tiny_clips(c));
    CHECK(t.steps_per_epoch() == 3);
    const StepMetrics m = t.train_step();
    CHECK(m.step == 1);
    CHECK(t.step() == 1);
    CHECK(m.stages.size() == 2);
    CHECK(m.stage_d.size() == 2);
    CHECK(std::isfinite(m.g_loss));
    CHECK(m.d_loss > 0.0);
    CHECK(m.lr == c.opt.lr0);
    CHECK(m.to_json().at("stages").size() == 2);
    for (int k = 0; k < 3; ++k) t.train_step();
    CHECK(t.step() == 4);

    c.opt.batch_size = 16;
    c.corpus.synth.n_clips = 40;
    Trainer big(c, tiny_clips(c));
    CHECK(big.steps_per_epoch() == 3);
    c.corpus.synth.clip_len = 1000;
    CHECK_THROWS_AS(Trainer(c, tiny_clips(c)), DataError);
}

TEST_CASE("teacher forcing with ratio one never feeds generated inputs") {
    TrainConfig c = tiny_config();
    c.tf = {1.0, 1.0, 0};
    Trainer t(c, tiny_clips(c));
    for (int k = 0; k < 4; ++k) CHECK(t.train_step().real_fraction == 1.0);
    CHECK(t.generated_inputs_used() == 0);

    c.tf = {0.0, 1.0, 0};
    Trainer never(c, tiny_clips(c));
    never.train_step();
    CHECK(never.generated_inputs_used() == 2);
}

TEST_CASE("discriminator loss falls while it learns") {
    TrainConfig c = tiny_config();
    c.steps = 50;
    Trainer t(c, tiny_clips(c));
    std::vector<double> d;
    t.run([&](const StepMetrics& m) { d.push_back(m.d_loss); });
    REQUIRE(d.size() == 50);
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 10; ++k) {
        first += d[k];
        last += d[40 + k];
    }
    CHECK(last < first);
}

TEST_CASE("training is deterministic and resumable") {
    TrainConfig c = tiny_config();
    const auto clips = tiny_clips(c);
    Trainer full(c, clips);
    std::vector<double> losses;
    full.run([&](const StepMetrics& m) { losses.push_back(m.g_loss); });

    Trainer again(c, clips);
    again.run();
    CHECK(flat_params(again.generator().parameters()) == flat_params(full.generator().parameters()));

    Trainer first(c, clips);
    for (int k = 0; k < 3; ++k) CHECK(first.train_step().g_loss == losses[static_cast<std::size_t>(k)]);
    const Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(first.checkpoint()));
    CHECK(ck.step == 3);

    TrainConfig moved = c;
    moved.out_dir = "elsewhere";
    Trainer second(moved, clips);
    second.resume(ck);
    CHECK(second.step() == 3);
    for (std::size_t k = 3; k < 6; ++k) CHECK(second.train_step().g_loss == losses[k]);
    CHECK(flat_params(second.generator().parameters()) == flat_params(full.generator().parameters()));
    CHECK(flat_params(second.discriminators().parameters()) == flat_params(full.discriminators().parameters()));
    CHECK(serialize_checkpoint(second.checkpoint()) == serialize_checkpoint(full.checkpoint()));

    TrainConfig wider = c;
    wider.model.block.hidden = 12;
    Trainer other(wider, clips);
    CHECK_THROWS_AS(other.resume(ck), ConfigMismatch);
}

TEST_CASE("non-finite losses name the failing term") {
    TrainConfig c = tiny_config();
    Trainer t(c, tiny_clips(c));
    auto params = t.generator().parameters();
    const auto it = std::find_if(params.begin(), params.end(),
                                 [](const auto& p) { return p.name == "block1.amp_out.bias"; });
    REQUIRE(it != params.end());
    it->tensor.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        t.train_step();
        FAIL("expected a numeric failure");
    } catch (const NumericFailure& e) {
        CHECK(e.term().rfind("stage1.", 0) == 0);
    }
}
