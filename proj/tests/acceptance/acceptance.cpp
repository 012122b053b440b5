// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msbwe/ad/ops.hpp"
#include "msbwe/checkpoint.hpp"
#include "msbwe/eval.hpp"
#include "msbwe/gan.hpp"
#include "msbwe/io.hpp"
#include "msbwe/model.hpp"
#include "msbwe/train.hpp"

#ifndef MSBWE_CLI_PATH
#error "MSBWE_CLI_PATH must name the command-line tool"
#endif

using namespace msbwe;
using TD = ad::Tensor<double>;
using clk = std::chrono::steady_clock;

namespace {

// Training budget for the efficacy and sampling-regime runs.
constexpr std::uint64_t kDeskSteps = 600;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

dsp::Waveform noise(std::size_t n, double rate, unsigned seed, double scale = 1.0) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    dsp::Waveform w{std::vector<double>(n), rate};
    for (auto& v : w.samples) v = d(rng);
    return w;
}

TD random_tensor(ad::Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return TD::from(std::move(shape), std::move(v), true);
}

// Magnitudes in [0.1, 1] with random sign, away from kinks at zero.
TD away_from_zero(ad::Shape shape, unsigned seed) {
    TD t = random_tensor(std::move(shape), seed, 0.1, 1.0);
    std::mt19937 rng(seed + 1);
    for (auto& v : t.mutable_data())
        if (rng() & 1u) v = -v;
    return t;
}

void randomize(const model::ParamList<double>& ps, unsigned seed, double scale) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(-scale, scale);
    for (const auto& p : ps) {
        auto t = p.tensor;
        for (auto& v : t.mutable_data()) v = d(rng);
    }
}

// ---- 1 ----------------------------------------------------------------------------

Outcome stft_fidelity() {
    const auto t0 = clk::now();
    const dsp::StftConfig cfg{1024, 320, 80};
    double worst = 1e300;
    for (unsigned k = 0; k < 100; ++k) {
        const dsp::Waveform x = noise(8000, 48000, 100 + k, 0.3);
        const dsp::Waveform y = dsp::istft(dsp::stft(x, cfg), x.size());
        double s = 0.0, e = 0.0;
        for (std::size_t i = cfg.n_fft; i + cfg.n_fft < x.size(); ++i) {
            s += x.samples[i] * x.samples[i];
            e += (x.samples[i] - y.samples[i]) * (x.samples[i] - y.samples[i]);
        }
        worst = std::min(worst, e > 0.0 ? 10.0 * std::log10(s / e) : 400.0);
    }
    const double t = seconds_since(t0);
    return {worst >= 60.0 && t < 10.0, fmt("min interior SNR %.1f dB over 100 clips (>= 60), %.2f s (< 10)", worst, t)};
}

// ---- 2 ----------------------------------------------------------------------------

Outcome gradients() {
    using namespace ad;
    const auto t0 = clk::now();
    struct Case {
        std::string name;
        std::function<TD(const std::vector<TD>&)> op;
        std::vector<TD> inputs;
    };
    std::vector<Case> cases;
    auto add_case = [&](std::string name, std::function<TD(const std::vector<TD>&)> op, std::vector<TD> in) {
        cases.push_back({std::move(name), std::move(op), std::move(in)});
    };

    const TD a = random_tensor({2, 3, 4}, 1), b = random_tensor({2, 3, 4}, 2);
    const TD nz = away_from_zero({2, 3, 4}, 3);
    add_case("add", [](const auto& v) { return add(v[0], v[1]); }, {a, b});
    add_case("sub", [](const auto& v) { return sub(v[0], v[1]); }, {a, b});
    add_case("mul", [](const auto& v) { return mul(v[0], v[1]); }, {a, b});
    add_case("scale", [](const auto& v) { return scale(v[0], -1.7); }, {a});
    add_case("add_scalar", [](const auto& v) { return add_scalar(v[0], 0.3); }, {a});
    add_case("square", [](const auto& v) { return square(v[0]); }, {a});
    add_case("exp", [](const auto& v) { return ad::exp(v[0]); }, {a});
    add_case("sin", [](const auto& v) { return ad::sin(v[0]); }, {a});
    add_case("cos", [](const auto& v) { return ad::cos(v[0]); }, {a});
    add_case("relu", [](const auto& v) { return relu(v[0]); }, {nz});
    add_case("leaky_relu", [](const auto& v) { return leaky_relu(v[0], 0.1); }, {nz});
    add_case("gelu", [](const auto& v) { return gelu(v[0]); }, {random_tensor({20}, 4, -3, 3)});
    {
        // Away from the wrap points (odd multiples of pi) and from zero.
        TD x = random_tensor({24}, 5, 0.2, 2.8);
        int k = 0;
        for (auto& v : x.mutable_data()) v = (k++ % 2 ? -v : v) + 2.0 * dsp::kPi * static_cast<double>(k % 3 - 1);
        add_case("anti_wrap_abs", [](const auto& v) { return anti_wrap_abs(v[0]); }, {x});
    }
    add_case("arctan2_phase", [](const auto& v) { return arctan2_phase(v[0], v[1]); }, {nz, away_from_zero({2, 3, 4}, 6)});
    add_case("sum", [](const auto& v) { return ad::sum(v[0]); }, {a});
    add_case("mean", [](const auto& v) { return ad::mean(v[0]); }, {a});
    add_case("mean_per_sample", [](const auto& v) { return mean_per_sample(v[0]); }, {a});
    add_case("reshape", [](const auto& v) { return reshape(v[0], {6, 4}); }, {a});
    add_case("concat", [](const auto& v) { return concat<double>({v[0], v[1]}, 1); }, {a, b});
    add_case("diff", [](const auto& v) { return diff(v[0], 2); }, {a});

    const std::vector<ConvSpec> c1{{3, 4, 3, 1, 1, 1, 1}, {4, 4, 5, 2, 1, 2, 2}, {3, 3, 3, 1, 2, 3, 2}, {2, 4, 1, 1, 1, 1, 0}};
    for (std::size_t k = 0; k < c1.size(); ++k) {
        const ConvSpec s = c1[k];
        add_case("conv1d#" + std::to_string(k), [s](const auto& v) { return conv1d(v[0], v[1], v[2], s); },
                 {random_tensor({2, s.in_channels, 9}, 10 + k),
                  random_tensor({s.out_channels, s.in_channels / s.groups, s.kernel_size}, 20 + k),
                  random_tensor({s.out_channels}, 30 + k)});
    }
    std::vector<ConvSpec2D> c2(3);
    c2[0] = {2, 3, 3, 5, 1, 2, 1, 1, 1, 2, 1};  // stride along time only
    c2[1] = {2, 2, 3, 3, 2, 1, 1, 1, 1, 1, 1};  // stride along frequency
    c2[2] = {4, 4, 3, 3, 1, 1, 1, 1, 1, 1, 2};  // grouped
    for (std::size_t k = 0; k < c2.size(); ++k) {
        const ConvSpec2D s = c2[k];
        add_case("conv2d#" + std::to_string(k), [s](const auto& v) { return conv2d(v[0], v[1], v[2], s); },
                 {random_tensor({1, s.in_channels, 5, 7}, 40 + k),
                  random_tensor({s.out_channels, s.in_channels / s.groups, s.kernel_h, s.kernel_w}, 50 + k),
                  random_tensor({s.out_channels}, 60 + k)});
    }
    add_case("layer_norm", [](const auto& v) { return layer_norm(v[0], v[1], v[2], 1); },
             {random_tensor({2, 4, 3}, 70, -2, 2), random_tensor({4}, 71), random_tensor({4}, 72)});
    add_case("grn", [](const auto& v) { return grn(v[0], v[1], v[2]); },
             {random_tensor({2, 3, 5}, 73, -2, 2), random_tensor({3}, 74), random_tensor({3}, 75)});
    {
        const dsp::StftConfig cfg{16, 12, 4};
        add_case("istft", [cfg](const auto& v) { return ad::istft(v[0], v[1], cfg); },
                 {random_tensor({1, 9, 6}, 76), random_tensor({1, 9, 6}, 77)});
    }
    add_case("hinge_d_loss", [](const auto& v) { return gan::hinge_d_loss(v[0], v[1]); },
             {random_tensor({2, 1, 6}, 78, -0.8, 0.8), random_tensor({2, 1, 6}, 79, -0.8, 0.8)});
    add_case("hinge_g_loss", [](const auto& v) { return gan::hinge_g_loss(v[0]); }, {a});
    add_case("amp_loss", [](const auto& v) { return gan::amp_loss(v[0], v[1]); },
             {random_tensor({2, 5, 6}, 80), random_tensor({2, 5, 6}, 81)});
    {
        // Phase differences kept away from the anti-wrapping kinks.
        const TD ref = random_tensor({1, 5, 6}, 82, -3, 3);
        TD est = ref.clone(true);
        std::mt19937 rng(83);
        std::uniform_real_distribution<double> d(0.05, 0.3);
        for (auto& v : est.mutable_data()) v += d(rng);
        const TD ref_const = ref.clone(false);
        add_case("phase_losses", [ref_const](const auto& v) {
            const auto p = gan::phase_losses(v[0], ref_const);
            return concat<double>({p.ip, p.gd, p.iaf}, 0);
        }, {est});
    }
    add_case("complex_stft_loss", [](const auto& v) {
        return gan::complex_stft_loss<double>({v[0], v[1]}, {v[2], v[3]});
    }, {random_tensor({1, 4, 5}, 84), random_tensor({1, 4, 5}, 85, -3, 3), random_tensor({1, 4, 5}, 86),
        random_tensor({1, 4, 5}, 87, -3, 3)});

    std::mt19937_64 rng(90);
    auto convnext = std::make_shared<model::ConvNeXtV2<double>>(4, 2, 3, rng);
    {
        model::ParamList<double> ps;
        convnext->collect(ps, "c");
        randomize(ps, 91, 0.5);
        std::vector<TD> in{random_tensor({2, 4, 6}, 92)};
        for (const auto& p : ps) in.push_back(p.tensor);
        add_case("convnext_v2", [convnext](const auto& v) { return (*convnext)(v[0]); }, in);
    }
    model::BlockConfig bc;
    bc.freq_bins = 3;
    bc.hidden = 4;
    bc.expansion = 2;
    bc.dw_kernel = 3;
    auto block = std::make_shared<model::BweBlock<double>>(bc, rng);
    {
        model::ParamList<double> ps;
        block->collect(ps, "b");
        randomize(ps, 93, 0.5);
        std::vector<TD> in{random_tensor({1, 3, 5}, 94, -2, 1), random_tensor({1, 3, 5}, 95, -3, 3)};
        for (const auto& p : ps) in.push_back(p.tensor);
        add_case("bwe_block", [block](const auto& v) {
            const auto o = (*block)(v[0], v[1]);
            return concat<double>({o.log_amp, o.phase}, 1);
        }, in);
    }

    double worst = 0.0;
    std::string worst_name, failed;
    for (const auto& c : cases) {
        const GradCheckResult r = grad_check(c.op, c.inputs);
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_name = c.name;
        }
        if (!(r.max_rel_error <= 1e-4) || r.checked == 0) failed += " " + c.name;
    }
    const double t = seconds_since(t0);
    return {failed.empty() && t < 60.0,
            fmt("%zu checks, worst %.2e (%s) <= 1e-4, %.1f s (< 60)%s%s", cases.size(), worst, worst_name.c_str(), t,
                failed.empty() ? "" : "; failed:", failed.c_str())};
}

// ---- 3 ----------------------------------------------------------------------------

Outcome schedule_math() {
    const train::TeacherForcingSchedule s;
    const double r0 = train::tf_ratio(s, 0), r1 = train::tf_ratio(s, 100000);
    const double lr0 = train::lr_at(0, train::OptimizerConfig{});
    const bool ok = r0 == 0.75 && std::abs(r1 - 0.4549) <= 1e-4 && lr0 == 2e-4;
    return {ok, fmt("tf_ratio(0) = %.17g, tf_ratio(100000) = %.6f, lr_at(0) = %.17g", r0, r1, lr0)};
}

// ---- 4 ----------------------------------------------------------------------------

// Direct DFT of reflect-padded, periodic-Hann frames with a precomputed
// twiddle table; bins 0..n/2.
std::vector<std::vector<double>> brute_power(const std::vector<double>& x, int n_fft, int hop,
                                             const std::vector<double>& cos_t, const std::vector<double>& sin_t) {
    const long n = static_cast<long>(x.size()), half = n_fft / 2;
    auto at = [&](long i) {
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return x[static_cast<std::size_t>(i)];
    };
    std::vector<std::vector<double>> p;
    for (long t = 0; t <= n / hop; ++t) {
        std::vector<double> seg(static_cast<std::size_t>(n_fft));
        for (long k = 0; k < n_fft; ++k)
            seg[k] = at(t * hop - half + k) * (0.5 - 0.5 * std::cos(2.0 * dsp::kPi * static_cast<double>(k) / n_fft));
        std::vector<double> row(static_cast<std::size_t>(half + 1));
        for (long f = 0; f <= half; ++f) {
            double re = 0.0, im = 0.0;
            for (long k = 0; k < n_fft; ++k) {
                const std::size_t idx = static_cast<std::size_t>((f * k) % n_fft);
                re += seg[k] * cos_t[idx];
                im -= seg[k] * sin_t[idx];
            }
            row[f] = re * re + im * im;
        }
        p.push_back(std::move(row));
    }
    return p;
}

Outcome metric_oracle() {
    const eval::LsdConfig cfg;
    std::vector<double> cos_t(static_cast<std::size_t>(cfg.n_fft)), sin_t(cos_t.size());
    for (std::size_t k = 0; k < cos_t.size(); ++k) {
        cos_t[k] = std::cos(2.0 * dsp::kPi * static_cast<double>(k) / cfg.n_fft);
        sin_t[k] = std::sin(2.0 * dsp::kPi * static_cast<double>(k) / cfg.n_fft);
    }
    double worst = 0.0;
    for (unsigned k = 0; k < 20; ++k) {
        const dsp::Waveform ref = noise(3000 + 100 * k, 16000, 200 + k);
        dsp::Waveform est = noise(ref.size(), 16000, 300 + k, 0.5);
        for (std::size_t i = 0; i < est.size(); ++i) est.samples[i] += 0.7 * ref.samples[i];
        const auto pr = brute_power(ref.samples, cfg.n_fft, cfg.hop, cos_t, sin_t);
        const auto pe = brute_power(est.samples, cfg.n_fft, cfg.hop, cos_t, sin_t);
        double total = 0.0;
        for (std::size_t t = 0; t < pr.size(); ++t) {
            double acc = 0.0;
            for (std::size_t f = 0; f < pr[t].size(); ++f) {
                const double d = std::log10(std::max(pr[t][f], cfg.floor)) - std::log10(std::max(pe[t][f], cfg.floor));
                acc += d * d;
            }
            total += std::sqrt(acc / static_cast<double>(pr[t].size()));
        }
        const double oracle = total / static_cast<double>(pr.size());
        worst = std::max(worst, std::abs(eval::lsd(ref, est) - oracle));
    }
    const dsp::Waveform x = noise(8000, 16000, 400);
    dsp::Waveform x10 = x;
    for (auto& v : x10.samples) v *= 10.0;
    const double l10 = eval::lsd(x, x10);
    return {worst <= 1e-9 && std::abs(l10 - 2.0) <= 1e-9,
            fmt("max |lsd - brute force| = %.2e over 20 pairs (<= 1e-9); lsd(x, 10x) = %.12f", worst, l10)};
}

// ---- 5, 6: desk training ----------------------------------------------------------------

struct DeskRun {
    std::vector<eval::PairScore> scores;
    double seconds = 0.0;
};

struct Desk {
    train::TrainConfig cfg = train::desk_preset();
    train::CorpusSplit split = train::load_corpus(cfg.corpus, cfg.model.container_rate(), cfg.opt.clip_len);
    std::map<std::string, DeskRun> runs;
    std::unique_ptr<model::MsBwe<float>> scheduled;  // kept for the timing and composition checks

    const DeskRun& run(const std::string& regime) {
        if (auto it = runs.find(regime); it != runs.end()) return it->second;
        train::TrainConfig c = cfg;
        c.steps = kDeskSteps;
        c.tf.decay = std::pow(train::TeacherForcingSchedule{}.decay, 500000.0 / static_cast<double>(c.steps));
        if (regime == "never") c.tf = {1.0, 1.0, 0};
        if (regime == "always") c.tf = {0.0, 1.0, 0};
        const auto t0 = clk::now();
        train::Trainer trainer(c, split.train);
        trainer.run();
        DeskRun r;
        r.seconds = seconds_since(t0);
        r.scores = eval::score_all_pairs(trainer.generator(), split.test);
        if (regime == "scheduled") scheduled = model_from_checkpoint(model_checkpoint(trainer.generator()));
        std::printf("  [%s: %llu steps in %.0f s;", regime.c_str(), static_cast<unsigned long long>(c.steps), r.seconds);
        for (const auto& s : r.scores) std::printf(" (%zu,%zu) lsd %.3f", s.i, s.j, s.model.lsd);
        std::printf("]\n");
        std::fflush(stdout);
        return runs[regime] = std::move(r);
    }
};

Outcome efficacy(Desk& desk) {
    const DeskRun& r = desk.run("scheduled");
    bool ok = true;
    std::string detail = fmt("%llu steps, %.1f min (< 30);", static_cast<unsigned long long>(kDeskSteps), r.seconds / 60);
    for (const auto& s : r.scores) {
        ok &= s.improvement() >= 0.10;
        detail += fmt(" (%.0fk->%.0fk) %.3f vs sinc %.3f, %.1f%%", s.src_rate / 1000, s.tgt_rate / 1000, s.model.lsd,
                      s.baseline.lsd, 100 * s.improvement());
    }
    return {ok && r.seconds < 1800.0, detail};
}

double lsd_of(const DeskRun& r, std::size_t i, std::size_t j) {
    for (const auto& s : r.scores)
        if (s.i == i && s.j == j) return s.model.lsd;
    return NAN;
}

Outcome sampling_regimes(Desk& desk) {
    const std::size_t n = desk.cfg.model.stages();
    const DeskRun& never = desk.run("never");
    const DeskRun& always = desk.run("always");
    const DeskRun& sched = desk.run("scheduled");
    const double n1 = lsd_of(never, n - 1, n), a1 = lsd_of(always, n - 1, n), s1 = lsd_of(sched, n - 1, n);
    const double nf = lsd_of(never, 0, n), af = lsd_of(always, 0, n), sf = lsd_of(sched, 0, n);
    // Lower LSD is better.
    const bool one_stage = n1 < s1 && s1 < a1;
    const bool full = af < sf && sf < nf;
    return {one_stage && full,
            fmt("one-stage (%zu,%zu): never %.4f, scheduled %.4f, always %.4f; full (0,%zu): always %.4f, "
                "scheduled %.4f, never %.4f",
                n - 1, n, n1, s1, a1, n, af, sf, nf)};
}

// ---- 7 ----------------------------------------------------------------------------

Outcome rtf_linearity(Desk& desk) {
    const auto& net = *desk.scheduled;
    const std::size_t n = net.stages();
    const auto one = eval::rtf_benchmark(net, n - 1, n, desk.split.test, {5, 1, 1});
    bool ok = true;
    std::string detail = fmt("one stage %.4f s (rtf %.4f);", one.wall_seconds, one.rtf);
    for (std::size_t i = 0; i + 1 < n + 1; ++i)
        for (std::size_t j = i + 1; j <= n; ++j) {
            if (i == n - 1) continue;
            const auto r = eval::rtf_benchmark(net, i, j, desk.split.test, {5, 1, 1});
            const double k = static_cast<double>(j - i), ratio = r.wall_seconds / one.wall_seconds;
            ok &= ratio >= 0.8 * k && ratio <= 1.2 * k;
            detail += fmt(" t(%zu->%zu)/t1 = %.3f in [%.1f, %.1f];", i, j, ratio, 0.8 * k, 1.2 * k);
        }
    return {ok, detail};
}

// ---- 8 ----------------------------------------------------------------------------

Outcome composition(Desk& desk) {
    const auto& net = *desk.scheduled;
    const auto& rates = net.config().rates;
    const std::size_t n = net.stages();
    std::size_t checked = 0;
    bool ok = true;
    for (std::size_t c = 0; c < 4; ++c) {
        const dsp::Waveform& clip = desk.split.test[c];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                for (std::size_t k = j + 1; k <= n; ++k) {
                    const dsp::Waveform band = dsp::sinc_resample(dsp::sinc_resample(clip, rates[i]), rates[n]);
                    const auto start = dsp::stft_log_amp_phase(band, net.config().stft, rates[i]);
                    const auto direct = net.cascade_extend(start, i, k);
                    const auto stepped = net.cascade_extend(net.cascade_extend(start, i, j), j, k);
                    ok &= direct.log_amp == stepped.log_amp && direct.phase == stepped.phase;
                    ++checked;
                }
    }
    return {ok && checked > 0, fmt("%zu (clip, i, j, k) cases bitwise equal", checked)};
}

// ---- 9 ----------------------------------------------------------------------------

Outcome checkpoint_round_trip() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "msbwe_acceptance_ckpt";
    fs::create_directories(dir);
    train::TrainConfig c = train::desk_preset();
    c.steps = 2;
    c.corpus.synth.n_clips = 8;
    c.opt.clip_len = 2000;
    const auto split = train::load_corpus(c.corpus, c.model.container_rate(), c.opt.clip_len);
    train::Trainer trainer(c, split.train);
    trainer.run();
    const std::string a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
    save_checkpoint(a, trainer.checkpoint());
    save_checkpoint(b, load_checkpoint(a));
    const std::string bytes = io::read_file(a);
    const bool same = bytes == io::read_file(b);

    const model::MsBwe<float> full(train::default_config().model, 0);
    const double count = static_cast<double>(full.parameter_count());
    const double rel = std::abs(count - 43e6) / 43e6;
    fs::remove_all(dir);
    return {same && rel <= 0.15, fmt("save-load-save %s (%zu bytes); full-scale parameters %.2fM (%.1f%% from 43M)",
                                     same ? "byte-identical" : "DIFFERS", bytes.size(), count / 1e6,
                                     100 * rel)};
}

// ---- 10 ---------------------------------------------------------------------------

Outcome determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "msbwe_acceptance_det";
    fs::remove_all(dir);
    std::vector<std::string> files;
    for (const char* name : {"a", "b"}) {
        const std::string out = (dir / name).string();
        const std::string cmd = std::string(MSBWE_CLI_PATH) +
                                " train --preset desk --deterministic --seed 7 --steps 200 --out " + out + " > " +
                                (dir.string() + "_" + name + ".log") + " 2>&1";
        fs::create_directories(dir);
        if (std::system(cmd.c_str()) != 0) return {false, "training command failed: " + cmd};
        files.push_back(io::read_file(out + "/final.ckpt"));
    }
    const bool same = files[0] == files[1];
    fs::remove_all(dir);
    return {same, fmt("two 200-step runs: final checkpoints %s (%zu bytes)", same ? "bitwise identical" : "DIFFER",
                      files[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));
    auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

    Desk desk;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"stft fidelity", stft_fidelity},
        {"gradient correctness", gradients},
        {"schedule math", schedule_math},
        {"metric oracle", metric_oracle},
        {"desk training efficacy", [&] { return efficacy(desk); }},
        {"sampling regime ordering", [&] { return sampling_regimes(desk); }},
        {"rtf linearity", [&] {
             desk.run("scheduled");
             return rtf_linearity(desk);
         }},
        {"composition invariant", [&] {
             desk.run("scheduled");
             return composition(desk);
         }},
        {"checkpoint round trip", checkpoint_round_trip},
        {"determinism", determinism},
    };

    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!wanted(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
