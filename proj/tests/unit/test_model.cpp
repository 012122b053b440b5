#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "msbwe/checkpoint.hpp"
#include "msbwe/error.hpp"
#include "msbwe/io.hpp"
#include "msbwe/model.hpp"

using namespace msbwe;
using namespace msbwe::model;
namespace fs = std::filesystem;

namespace {

CascadeConfig tiny_cascade(std::vector<double> rates = {8000, 16000, 48000}) {
    CascadeConfig cfg;
    cfg.rates = std::move(rates);
    cfg.stft = {32, 16, 4};
    cfg.block.freq_bins = cfg.stft.bins();
    cfg.block.hidden = 6;
    cfg.block.expansion = 2;
    cfg.block.dw_kernel = 3;
    return cfg;
}

template <typename T>
void randomize(const ParamList<T>& params, unsigned seed, double stddev) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> d(0.0, stddev);
    for (const auto& p : params) {
        auto t = p.tensor;
        for (auto& v : t.mutable_data()) v = static_cast<T>(d(rng));
    }
}

template <typename T>
ad::Tensor<T> random_input(std::size_t f, std::size_t t, unsigned seed, double lo, double hi) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<T> v(f * t);
    for (auto& x : v) x = static_cast<T>(d(rng));
    return ad::Tensor<T>::from({1, f, t}, std::move(v));
}

dsp::SpectrumPair random_pair(const CascadeConfig& cfg, std::size_t frames, double effective, unsigned seed) {
    dsp::SpectrumPair p;
    p.bins = cfg.stft.bins();
    p.frames = frames;
    p.rate = cfg.container_rate();
    p.effective_rate = effective;
    p.cfg = cfg.stft;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> la(-6.0, 0.0), ph(-3.0, 3.0);
    for (std::size_t i = 0; i < p.bins * frames; ++i) {
        p.log_amp.push_back(la(rng));
        p.phase.push_back(ph(rng));
    }
    return p;
}

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("config validation and JSON round trip") {
    CascadeConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.stages() == 4);
    CHECK(cascade_from_json(to_json(cfg)) == cfg);

    CascadeConfig bad = cfg;
    bad.rates = {8000, 8000};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = cfg;
    bad.block.dw_kernel = 4;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = cfg;
    bad.block.freq_bins = 100;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    auto j = to_json(cfg);
    j["block"]["widht"] = 3;
    CHECK_THROWS_WITH_AS(cascade_from_json(j), "unknown config key 'model.block.widht'", InvalidArgument);
}

TEST_CASE("full-scale defaults land near 43M parameters") {
    MsBwe<float> m(CascadeConfig{});
    const double n = static_cast<double>(m.parameter_count());
    CHECK(std::abs(n - 43e6) / 43e6 <= 0.15);
    CHECK(count_parameters(m.block_parameters(1)) * 4 == m.parameter_count());
}

TEST_CASE("ConvNeXt block with zero parameters is the identity") {
    std::mt19937_64 rng(1);
    ConvNeXtV2<double> blk(5, 3, 7, rng);
    ParamList<double> ps;
    blk.collect(ps, "b");
    for (const auto& p : ps) {
        auto t = p.tensor;
        for (auto& v : t.mutable_data()) v = 0.0;
    }
    auto x = random_input<double>(5, 9, 3, -2, 2);
    auto y = blk(x);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("zeroed amplitude head makes the amplitude path an identity") {
    const auto cfg = tiny_cascade();
    MsBwe<double> m(cfg, 3);
    randomize(m.parameters(), 4, 0.3);
    auto head = m.block(1).amp_out;
    for (auto& v : head.weight.mutable_data()) v = 0.0;
    for (auto& v : head.bias.mutable_data()) v = 0.0;
    auto la = random_input<double>(cfg.stft.bins(), 7, 5, -8, 1);
    auto ph = random_input<double>(cfg.stft.bins(), 7, 6, -3, 3);
    auto out = m.forward_block(1, la, ph);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(out.log_amp[i] == la[i]);
}

TEST_CASE("phase output stays wrapped and F mismatches are rejected") {
    const auto cfg = tiny_cascade();
    MsBwe<double> m(cfg, 3);
    randomize(m.parameters(), 9, 1.0);
    auto la = random_input<double>(cfg.stft.bins(), 11, 5, -8, 1);
    auto ph = random_input<double>(cfg.stft.bins(), 11, 6, -3, 3);
    auto out = m.forward_block(2, la, ph);
    for (double v : out.phase.data()) {
        CHECK(v > -dsp::kPi);
        CHECK(v <= dsp::kPi);
    }
    auto wrong = random_input<double>(cfg.stft.bins() - 1, 11, 5, -1, 1);
    CHECK_THROWS_AS(m.forward_block(1, wrong, wrong), InvalidArgument);
    CHECK_THROWS_AS(m.forward_block(3, la, ph), InvalidArgument);
}

TEST_CASE("gradient reaches every block parameter") {
    const auto cfg = tiny_cascade();
    MsBwe<double> m(cfg, 11);
    randomize(m.parameters(), 12, 0.3);
    auto la = random_input<double>(cfg.stft.bins(), 8, 13, -5, 1);
    auto ph = random_input<double>(cfg.stft.bins(), 8, 14, -3, 3);
    auto out = m.forward_block(1, la, ph);
    ad::add(ad::sum(ad::square(out.log_amp)), ad::sum(ad::square(out.phase))).backward();
    for (const auto& p : m.block_parameters(1)) {
        bool nonzero = false;
        for (double g : p.tensor.grad()) nonzero |= g != 0.0;
        CHECK_MESSAGE(nonzero, p.name);
    }
}

TEST_CASE("tiny BWE block passes the finite-difference check") {
    BlockConfig bc;
    bc.freq_bins = 3;
    bc.hidden = 4;
    bc.expansion = 2;
    bc.dw_kernel = 3;
    std::mt19937_64 rng(21);
    BweBlock<double> blk(bc, rng);
    ParamList<double> ps;
    blk.collect(ps, "b");
    randomize(ps, 22, 0.5);
    std::vector<ad::Tensor<double>> inputs{random_input<double>(3, 5, 23, -2, 1).clone(true),
                                           random_input<double>(3, 5, 24, -3, 3).clone(true)};
    for (const auto& p : ps) inputs.push_back(p.tensor);
    auto res = ad::grad_check(
        [&](const std::vector<ad::Tensor<double>>& a) {
            auto o = blk(a[0], a[1]);
            return ad::concat<double>({o.log_amp, o.phase}, 1);
        },
        inputs);
    CHECK(res.checked > 300);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("cascade executes exactly the requested blocks and composes bitwise") {
    CascadeConfig small = tiny_cascade({8000, 12000, 16000, 24000, 48000});
    MsBwe<float> m(small, 5);
    randomize(m.parameters(), 6, 0.2);
    const auto p0 = random_pair(small, 10, 8000, 7);
    m.reset_counter();
    const auto direct = m.cascade_extend(p0, 0, 4);
    CHECK(m.blocks_executed() == 4);
    CHECK(direct.effective_rate == 48000);

    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j)
            for (std::size_t k = j + 1; k <= 4; ++k) {
                auto start = p0;
                start.effective_rate = small.rates[i];
                const auto a = m.cascade_extend(start, i, k);
                const auto b = m.cascade_extend(m.cascade_extend(start, i, j), j, k);
                CHECK(a.log_amp == b.log_amp);
                CHECK(a.phase == b.phase);
            }

    m.reset_counter();
    const auto one = m.cascade_extend(p0, 0, 1);
    auto t = to_tensors<float>(p0);
    auto o = m.forward_block(1, t.log_amp, t.phase);
    dsp::SpectrumPair manual = p0;
    write_back(o, 0, manual);
    CHECK(one.log_amp == manual.log_amp);
    CHECK(one.phase == manual.phase);

    CHECK_THROWS_AS(m.cascade_extend(p0, 1, 1), InvalidArgument);
    CHECK_THROWS_AS(m.cascade_extend(p0, 1, 2), InvalidArgument);
    CHECK_THROWS_AS(m.cascade_extend(p0, 0, 5), InvalidArgument);
}

TEST_CASE("extend_waveform: silence, length contract, determinism") {
    CascadeConfig cfg;
    cfg.block.hidden = 8;
    MsBwe<float> m(cfg, 1);
    for (const auto& p : m.parameters()) {
        auto t = p.tensor;
        if (p.name.find("gamma") == std::string::npos)
            for (auto& v : t.mutable_data()) v = 0.0f;
    }
    dsp::Waveform silence{std::vector<double>(8000, 0.0), 8000};
    m.reset_counter();
    const auto out = m.extend_waveform(silence, 8000, 48000);
    CHECK(m.blocks_executed() == 4);
    CHECK(out.rate == 48000);
    CHECK(std::abs(static_cast<double>(out.size()) - 48000.0) <= 80.0);
    double peak = 0.0;
    for (double v : out.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak <= 1e-6);

    MsBwe<float> r(cfg, 2);
    dsp::Waveform tone{std::vector<double>(4000), 8000};
    for (std::size_t i = 0; i < tone.size(); ++i) tone.samples[i] = 0.3 * std::sin(0.2 * static_cast<double>(i));
    ExtendProfile prof;
    const auto a = r.extend_waveform(tone, 8000, 16000, &prof);
    const auto b = r.extend_waveform(tone, 8000, 16000);
    CHECK(a.samples == b.samples);
    CHECK(a.size() == 8000);
    CHECK(prof.blocks.size() == 2);

    CHECK_THROWS_AS(r.extend_waveform(tone, 8000, 8000), InvalidArgument);
    CHECK_THROWS_AS(r.extend_waveform(tone, 8000, 44100), InvalidArgument);
    CHECK_THROWS_AS(r.extend_waveform(tone, 16000, 48000), InvalidArgument);
}

TEST_CASE("checkpoint round trip, truncation and config mismatch") {
    auto cfg = tiny_cascade({8000, 16000});
    MsBwe<float> m(cfg, 31);
    randomize(m.parameters(), 32, 0.5);
    Checkpoint ck = model_checkpoint(m, 17);
    ck.state["note"] = "x";
    const std::string path = temp_path("msbwe_test_ckpt.bin");
    save_checkpoint(path, ck);

    const Checkpoint back = load_checkpoint(path);
    CHECK(back.step == 17);
    CHECK(back.state == ck.state);
    auto loaded = model_from_checkpoint(back);
    const auto pa = m.parameters();
    const auto pb = loaded->parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(), pa[i].tensor.size() * 4) == 0);
    }
    CHECK(serialize_checkpoint(model_checkpoint(*loaded, 17)) == serialize_checkpoint(model_checkpoint(m, 17)));

    const std::string bytes = io::read_file(path);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CorruptCheckpoint);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 40)), CorruptCheckpoint);
    CHECK_THROWS_AS(deserialize_checkpoint("garbage\n"), CorruptCheckpoint);
    std::string wrong_version = bytes;
    wrong_version[10] = '9';
    CHECK_THROWS_AS(deserialize_checkpoint(wrong_version), CorruptCheckpoint);

    CHECK_NOTHROW(require_model_config(back, cfg));
    CHECK_THROWS_AS(require_model_config(back, tiny_cascade({8000, 12000, 16000})), ConfigMismatch);
    MsBwe<float> other(tiny_cascade({8000, 12000, 16000}));
    CHECK_THROWS_AS(import_params(back, other.parameters()), ConfigMismatch);
    fs::remove(path);
}
