// Command-line front end: resample, train, extend, eval, bench, info.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msbwe/checkpoint.hpp"
#include "msbwe/error.hpp"
#include "msbwe/eval.hpp"
#include "msbwe/io.hpp"
#include "msbwe/train.hpp"

namespace fs = std::filesystem;
using namespace msbwe;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::atomic<bool> g_interrupted{false};

io::WavEncoding parse_encoding(const std::string& s) {
    if (s == "float32") return io::WavEncoding::Float32;
    if (s == "pcm16") return io::WavEncoding::Pcm16;
    throw InvalidArgument("unknown encoding '" + s + "' (expected float32 or pcm16)");
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// Sorted *.wav files of a directory.
std::vector<fs::path> wav_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::unique_ptr<model::MsBwe<float>> load_model(const std::string& path) {
    return model_from_checkpoint(load_checkpoint(path));
}

// ---- config ----------------------------------------------------------------------

struct ConfigArgs {
    std::string preset = "default";
    std::string file;
    std::optional<std::uint64_t> steps, seed;
    std::optional<std::string> out_dir, wav_dir;
    bool deterministic = false;

    void add(CLI::App& cmd) {
        cmd.add_option("--preset", preset, "Base configuration")->check(CLI::IsMember({"default", "desk"}));
        cmd.add_option("--config", file, "JSON config; fields override the preset");
        cmd.add_option("--steps", steps, "Training steps");
        cmd.add_option("--seed", seed, "Random seed");
        cmd.add_flag("--deterministic", deterministic, "Bitwise-reproducible run");
        cmd.add_option("--out", out_dir, "Output directory");
        cmd.add_option("--wav-dir", wav_dir, "Train on WAV files instead of the synthetic corpus");
    }

    train::TrainConfig resolve() const {
        const train::TrainConfig base = preset == "desk" ? train::desk_preset() : train::default_config();
        train::TrainConfig c = base;
        if (!file.empty()) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(io::read_file(file));
            } catch (const nlohmann::json::parse_error& e) {
                throw DataError(file + ": " + e.what());
            }
            c = train::train_config_from_json(j, base);
        }
        if (steps) c.steps = *steps;
        if (seed) c.seed = *seed;
        if (deterministic) c.deterministic = true;
        if (out_dir) c.out_dir = *out_dir;
        if (wav_dir) c.corpus.wav_dir = *wav_dir;
        c.validate();
        return c;
    }
};

// ---- commands --------------------------------------------------------------------

int cmd_resample(const std::string& in, const std::string& out, double rate, const std::string& enc) {
    if (!(rate > 0.0)) throw InvalidArgument("--rate must be positive");
    const auto encoding = parse_encoding(enc);
    const dsp::Waveform x = io::read_wav(in);
    const dsp::Waveform y = dsp::sinc_resample(x, rate);
    io::write_wav(out, y, encoding);
    std::cout << in << ": " << x.rate << " Hz, " << fmt(x.duration()) << " s -> " << out << ": " << y.rate
              << " Hz, " << fmt(y.duration()) << " s\n";
    return kOk;
}

std::string checkpoint_name(std::uint64_t step) {
    std::ostringstream os;
    os << "step_" << std::setw(8) << std::setfill('0') << step << ".ckpt";
    return os.str();
}

int cmd_train(const ConfigArgs& args, const std::string& resume_path) {
    const train::TrainConfig cfg = args.resolve();
    const train::CorpusSplit split = train::load_corpus(cfg.corpus, cfg.model.container_rate(), cfg.opt.clip_len);
    for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";

    train::Trainer trainer(cfg, split.train);
    if (!resume_path.empty()) {
        trainer.resume(load_checkpoint(resume_path));
        std::cout << "resumed from " << resume_path << " at step " << trainer.step() << "\n";
    }

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    io::atomic_write((dir / "config.json").string(),
                     [&](std::ostream& os) { os << train::to_json(cfg).dump(2) << "\n"; });
    std::ofstream log(dir / "metrics.jsonl", resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot open " + (dir / "metrics.jsonl").string());

    auto save = [&](const std::string& name) {
        const Checkpoint ck = trainer.checkpoint();
        save_checkpoint((dir / name).string(), ck);
        save_checkpoint((dir / "last.ckpt").string(), ck);
    };

    std::cout << "training " << cfg.steps << " steps on " << split.train.size() << " clips, "
              << trainer.generator().parameter_count() << " generator parameters\n";
    std::signal(SIGINT, [](int) { g_interrupted = true; });
    std::signal(SIGTERM, [](int) { g_interrupted = true; });

    while (trainer.step() < cfg.steps) {
        const train::StepMetrics m = trainer.train_step();
        if (cfg.log_every > 0 && (m.step % cfg.log_every == 0 || m.step == cfg.steps)) {
            log << m.to_json().dump() << "\n";
            log.flush();
            std::cout << "step " << m.step << " g " << fmt(m.g_loss, 3) << " d " << fmt(m.d_loss, 3) << " tf "
                      << fmt(m.tf_ratio, 3) << " lr " << m.lr << "\n";
        }
        if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0) save(checkpoint_name(m.step));
        if (g_interrupted) {
            save(checkpoint_name(m.step));
            std::cout << "interrupted at step " << m.step << "; resume with --resume " << (dir / "last.ckpt").string()
                      << "\n";
            return kOk;
        }
    }
    save("final.ckpt");
    std::cout << "wrote " << (dir / "final.ckpt").string() << "\n";
    return kOk;
}

int cmd_extend(const std::string& in, const std::string& out, double from, double to, const std::string& ckpt_path,
               const std::string& enc) {
    if (!(from < to)) throw InvalidArgument("--from must be below --to");
    const auto encoding = parse_encoding(enc);
    const auto net = load_model(ckpt_path);
    const auto& cfg = net->config();
    const auto i = cfg.index_of(from), j = cfg.index_of(to);
    if (!i || !j) throw InvalidArgument("--from and --to must be ladder rates of the checkpoint");
    const dsp::Waveform x = io::read_wav(in);
    if (x.rate != from)
        throw InvalidArgument(in + " is at " + fmt(x.rate, 0) + " Hz but --from is " + fmt(from, 0) + " Hz");
    const dsp::Waveform y = net->extend_waveform(x, from, to);
    io::write_wav(out, y, encoding);
    std::cout << "stages: " << (*j - *i) << "\n" << out << ": " << y.rate << " Hz, " << fmt(y.duration()) << " s\n";
    return kOk;
}

struct EvalRow {
    std::string name;
    eval::PairMetrics m;
    std::optional<eval::PairMetrics> base;
};

std::string eval_table(const std::vector<EvalRow>& rows) {
    const bool with_base = !rows.empty() && rows.front().base;
    std::ostringstream os;
    os << std::left << std::setw(28) << "file" << std::right;
    for (const char* h : {"lsd", "lsd_low", "lsd_high", "snr_db"}) os << std::setw(10) << h;
    if (with_base) os << std::setw(12) << "sinc_lsd";
    os << "\n";
    eval::PairMetrics mean;
    double base_mean = 0.0;
    auto row = [&](const std::string& name, const eval::PairMetrics& m, std::optional<double> b) {
        os << std::left << std::setw(28) << name << std::right << std::setw(10) << fmt(m.lsd) << std::setw(10)
           << fmt(m.lsd_low) << std::setw(10) << fmt(m.lsd_high) << std::setw(10) << fmt(m.snr, 2);
        if (b) os << std::setw(12) << fmt(*b);
        os << "\n";
    };
    for (const auto& r : rows) {
        row(r.name, r.m, r.base ? std::optional(r.base->lsd) : std::nullopt);
        mean.lsd += r.m.lsd;
        mean.lsd_low += r.m.lsd_low;
        mean.lsd_high += r.m.lsd_high;
        mean.snr += r.m.snr;
        if (r.base) base_mean += r.base->lsd;
    }
    const double n = static_cast<double>(rows.size());
    mean = {mean.lsd / n, mean.lsd_low / n, mean.lsd_high / n, mean.snr / n};
    row("mean", mean, with_base ? std::optional(base_mean / n) : std::nullopt);
    return os.str();
}

std::vector<EvalRow> eval_dirs(const std::string& ref_dir, const std::string& est_dir, double split_hz) {
    const auto refs = wav_files(ref_dir), ests = wav_files(est_dir);
    std::map<std::string, fs::path> by_name;
    for (const auto& p : ests) by_name[p.filename().string()] = p;
    std::vector<std::string> missing, extra;
    for (const auto& p : refs)
        if (!by_name.count(p.filename().string())) missing.push_back(p.filename().string());
    for (const auto& p : ests) {
        const bool found = std::any_of(refs.begin(), refs.end(),
                                       [&](const fs::path& r) { return r.filename() == p.filename(); });
        if (!found) extra.push_back(p.filename().string());
    }
    if (refs.empty()) throw DataError("no .wav files in " + ref_dir);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "pairing error:";
        for (const auto& m : missing) msg += " no estimate for " + m + ";";
        for (const auto& e : extra) msg += " no reference for " + e + ";";
        throw DataError(msg);
    }
    std::vector<EvalRow> rows;
    for (const auto& r : refs) {
        const dsp::Waveform ref = io::read_wav(r.string());
        const dsp::Waveform est = io::read_wav(by_name.at(r.filename().string()).string());
        if (ref.rate != est.rate)
            throw DataError("pairing error: " + r.filename().string() + " has rates " + fmt(ref.rate, 0) + " and " +
                            fmt(est.rate, 0) + " Hz");
        const double split = split_hz > 0.0 ? split_hz : ref.rate / 4.0;
        rows.push_back({r.filename().string(), eval::compare(ref, est, split), std::nullopt});
    }
    return rows;
}

// Test clips at the container rate: WAV files from `ref_dir` or the checkpoint
// configuration's held-out synthetic set.
std::vector<std::pair<std::string, dsp::Waveform>> test_clips(const std::string& ckpt_path, const std::string& ref_dir,
                                                              double rate) {
    std::vector<std::pair<std::string, dsp::Waveform>> out;
    if (!ref_dir.empty()) {
        for (const auto& p : wav_files(ref_dir)) {
            dsp::Waveform w = io::read_wav(p.string());
            out.emplace_back(p.filename().string(), w.rate == rate ? std::move(w) : dsp::sinc_resample(w, rate));
        }
        if (out.empty()) throw DataError("no .wav files in " + ref_dir);
        return out;
    }
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const train::TrainConfig cfg = train::train_config_from_json(ck.config);
    const auto split = train::load_corpus(cfg.corpus, cfg.model.container_rate(), cfg.opt.clip_len);
    for (std::size_t k = 0; k < split.test.size(); ++k) out.emplace_back("test_" + std::to_string(k), split.test[k]);
    return out;
}

int cmd_eval(const std::string& ref_dir, const std::string& est_dir, const std::string& ckpt_path, double from,
             double to, double split_hz, const std::string& out_path) {
    std::vector<EvalRow> rows;
    if (!ckpt_path.empty()) {
        if (!est_dir.empty()) throw InvalidArgument("--est and --checkpoint are mutually exclusive");
        if (!(from < to)) throw InvalidArgument("--from must be below --to");
        const auto net = load_model(ckpt_path);
        if (!net->config().index_of(from) || !net->config().index_of(to))
            throw InvalidArgument("--from and --to must be ladder rates of the checkpoint");
        for (const auto& [name, clip] : test_clips(ckpt_path, ref_dir, net->config().container_rate())) {
            const eval::PairTask t = eval::make_task(clip, from, to);
            const dsp::Waveform y = net->extend_waveform(t.input, from, to);
            const double split = split_hz > 0.0 ? split_hz : from / 2.0;
            rows.push_back({name, eval::compare(t.reference, y, split), eval::compare(t.reference, t.baseline, split)});
        }
    } else {
        if (ref_dir.empty() || est_dir.empty()) throw InvalidArgument("eval needs --ref and --est, or --checkpoint");
        rows = eval_dirs(ref_dir, est_dir, split_hz);
    }
    const std::string table = eval_table(rows);
    std::cout << table;
    if (!out_path.empty()) io::atomic_write(out_path, [&](std::ostream& os) { os << table; });
    return kOk;
}

int cmd_bench(const std::string& ckpt_path, double from, double to, int threads, int repeats,
              const std::string& ref_dir) {
    if (!(from < to)) throw InvalidArgument("--from must be below --to");
    const auto net = load_model(ckpt_path);
    const auto i = net->config().index_of(from), j = net->config().index_of(to);
    if (!i || !j) throw InvalidArgument("--from and --to must be ladder rates of the checkpoint");
    std::vector<dsp::Waveform> corpus;
    for (auto& [name, clip] : test_clips(ckpt_path, ref_dir, net->config().container_rate()))
        corpus.push_back(std::move(clip));
    const eval::RtfReport r = eval::rtf_benchmark(*net, *i, *j, corpus, {repeats, 1, threads});
    std::cout << r.to_text() << r.to_json().dump() << "\n";
    return kOk;
}

int cmd_info(const std::string& ckpt_path, const ConfigArgs& args) {
    nlohmann::json config;
    std::unique_ptr<model::MsBwe<float>> net;
    if (!ckpt_path.empty()) {
        const Checkpoint ck = load_checkpoint(ckpt_path);
        config = ck.config;
        net = model_from_checkpoint(ck);
        std::cout << "checkpoint: " << ckpt_path << " (step " << ck.step << ")\n";
    } else {
        const train::TrainConfig cfg = args.resolve();
        config = train::to_json(cfg);
        net = std::make_unique<model::MsBwe<float>>(cfg.model, cfg.seed);
    }
    std::cout << "config:\n" << config.dump(2) << "\n";
    const std::size_t total = net->parameter_count();
    std::cout << "parameters: " << total << "\n";
    for (std::size_t n = 1; n <= net->stages(); ++n) {
        const std::size_t c = model::count_parameters(net->block_parameters(n));
        std::cout << "  block" << n << " (" << fmt(net->config().rates[n - 1], 0) << " -> "
                  << fmt(net->config().rates[n], 0) << " Hz): " << c << " ("
                  << fmt(100.0 * static_cast<double>(c) / static_cast<double>(total), 1) << "%)\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-stage speech bandwidth extension"};
    app.require_subcommand(1);

    auto* resample = app.add_subcommand("resample", "Sinc-resample a WAV file");
    std::string rs_in, rs_out, rs_enc = "float32";
    double rs_rate = 0.0;
    resample->add_option("input", rs_in)->required();
    resample->add_option("output", rs_out)->required();
    resample->add_option("--rate", rs_rate, "Target rate in Hz")->required();
    resample->add_option("--encoding", rs_enc, "float32 or pcm16");

    auto* train = app.add_subcommand("train", "Train a cascade");
    ConfigArgs train_args;
    std::string resume;
    train_args.add(*train);
    train->add_option("--resume", resume, "Continue from a training checkpoint");

    auto* extend = app.add_subcommand("extend", "Extend the bandwidth of a WAV file");
    std::string ex_in, ex_out, ex_ckpt, ex_enc = "float32";
    double ex_from = 0.0, ex_to = 0.0;
    extend->add_option("input", ex_in)->required();
    extend->add_option("output", ex_out)->required();
    extend->add_option("--from", ex_from)->required();
    extend->add_option("--to", ex_to)->required();
    extend->add_option("--checkpoint", ex_ckpt)->required();
    extend->add_option("--encoding", ex_enc, "float32 or pcm16");

    auto* ev = app.add_subcommand("eval", "LSD and spectral SNR tables");
    std::string ev_ref, ev_est, ev_ckpt, ev_out;
    double ev_from = 0.0, ev_to = 0.0, ev_split = 0.0;
    ev->add_option("--ref", ev_ref, "Reference WAV directory");
    ev->add_option("--est", ev_est, "Estimate WAV directory, paired by file name");
    ev->add_option("--checkpoint", ev_ckpt, "Score a model against the sinc baseline instead");
    ev->add_option("--from", ev_from);
    ev->add_option("--to", ev_to);
    ev->add_option("--split", ev_split, "Low/high band split in Hz");
    ev->add_option("--out", ev_out, "Also write the table here");

    auto* bench = app.add_subcommand("bench", "Real-time factor");
    std::string b_ckpt, b_ref;
    double b_from = 0.0, b_to = 0.0;
    int b_threads = 1, b_repeats = 5;
    bench->add_option("--checkpoint", b_ckpt)->required();
    bench->add_option("--from", b_from)->required();
    bench->add_option("--to", b_to)->required();
    bench->add_option("--threads", b_threads);
    bench->add_option("--repeats", b_repeats);
    bench->add_option("--ref", b_ref, "WAV directory (default: the checkpoint's synthetic test set)");

    auto* info = app.add_subcommand("info", "Configuration and parameter counts");
    std::string in_ckpt;
    ConfigArgs info_args;
    info->add_option("--checkpoint", in_ckpt);
    info_args.add(*info);

    auto* pdc = app.add_subcommand("print-default-config", "Print the default configuration as JSON");
    std::string pdc_preset = "default";
    pdc->add_option("--preset", pdc_preset)->check(CLI::IsMember({"default", "desk"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*resample) return cmd_resample(rs_in, rs_out, rs_rate, rs_enc);
        if (*train) return cmd_train(train_args, resume);
        if (*extend) return cmd_extend(ex_in, ex_out, ex_from, ex_to, ex_ckpt, ex_enc);
        if (*ev) return cmd_eval(ev_ref, ev_est, ev_ckpt, ev_from, ev_to, ev_split, ev_out);
        if (*bench) return cmd_bench(b_ckpt, b_from, b_to, b_threads, b_repeats, b_ref);
        if (*info) return cmd_info(in_ckpt, info_args);
        if (*pdc) {
            std::cout << train::to_json(pdc_preset == "desk" ? train::desk_preset() : train::default_config()).dump(2)
                      << "\n";
            return kOk;
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericFailure& e) {
        std::cerr << "numeric failure in " << e.term() << ": " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
