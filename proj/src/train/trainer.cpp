#include <chrono>
#include <cmath>
#include <numeric>

#include "msbwe/error.hpp"
#include "msbwe/train.hpp"

namespace msbwe::train {

namespace {

using TF = Tensor<float>;

TF as_image(const TF& x) { return ad::reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)}); }

// Differentiable synthesis of a [B, F, T] log-amplitude/phase pair to [B, 1, L].
TF synthesize(const model::BlockOutput<float>& s, const dsp::StftConfig& cfg, std::size_t length) {
    const TF amp = ad::exp(s.log_amp);
    const TF wav = ad::istft(ad::mul(amp, ad::cos(s.phase)), ad::mul(amp, ad::sin(s.phase)), cfg, length);
    return ad::reshape(wav, {wav.dim(0), 1, wav.dim(1)});
}

void require_finite(double v, const std::string& term) {
    if (!std::isfinite(v)) throw NumericFailure(term, "non-finite value in " + term);
}

struct StageScores {
    TF wave, amp, phase;
};

StageScores score(const gan::DiscriminatorSet<float>& d, const model::BlockOutput<float>& s, const TF& wave) {
    return {d.wave(wave), d.amp(as_image(s.log_amp)), d.phase(as_image(s.phase))};
}

// Holds parameters out of the graph for the lifetime of the guard, so the
// generator step does not pay for discriminator weight gradients.
class FreezeGuard {
public:
    explicit FreezeGuard(model::ParamList<float> params) : params_(std::move(params)) {
        for (auto& p : params_) p.tensor.set_requires_grad(false);
    }
    ~FreezeGuard() {
        for (auto& p : params_) p.tensor.set_requires_grad(true);
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    model::ParamList<float> params_;
};

}  // namespace

nlohmann::json StepMetrics::to_json() const {
    nlohmann::json j = {{"step", step},     {"epoch", epoch},   {"lr", lr},
                        {"tf_ratio", tf_ratio}, {"g_loss", g_loss}, {"d_loss", d_loss},
                        {"real_fraction", real_fraction}, {"seconds", seconds}};
    nlohmann::json st = nlohmann::json::array();
    for (std::size_t n = 0; n < stages.size(); ++n) {
        const auto& s = stages[n];
        st.push_back({{"stage", n + 1},  {"amp", s.amp},         {"ip", s.ip},   {"gd", s.gd},
                      {"iaf", s.iaf},    {"complex", s.complex}, {"adv", s.adv}, {"d", stage_d.at(n)}});
    }
    j["stages"] = st;
    return j;
}

Trainer::Trainer(TrainConfig cfg, std::vector<dsp::Waveform> train_clips)
    : cfg_(std::move(cfg)), clips_(std::move(train_clips)), schedule_(cfg_.tf) {
    cfg_.validate();
    if (clips_.empty()) throw DataError("training corpus is empty");
    const auto len = static_cast<std::size_t>(cfg_.opt.clip_len);
    for (const auto& c : clips_)
        if (c.size() != len || c.rate != cfg_.model.container_rate())
            throw DataError("training clips must hold " + std::to_string(len) + " samples at " +
                            std::to_string(cfg_.model.container_rate()) + " Hz");
    schedule_.step = 0;
    cache_.resize(clips_.size());
    gen_ = std::make_unique<model::MsBwe<float>>(cfg_.model, cfg_.seed);
    disc_ = std::make_unique<gan::Discriminators<float>>(cfg_.disc, cfg_.model.stages(), cfg_.seed + 1);
    g_opt_ = std::make_unique<AdamW<float>>(gen_->parameters(), cfg_.opt);
    d_opt_ = std::make_unique<AdamW<float>>(disc_->parameters(), cfg_.opt);
}

std::uint64_t Trainer::steps_per_epoch() const {
    const auto b = static_cast<std::uint64_t>(cfg_.opt.batch_size);
    return (clips_.size() + b - 1) / b;
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
    const std::uint64_t spe = steps_per_epoch();
    const std::uint64_t epoch = step / spe, k = step % spe;
    std::vector<std::size_t> perm(clips_.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::seed_seq seq{cfg_.seed, epoch, std::uint64_t{7}};
    std::mt19937_64 rng(seq);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto b = static_cast<std::size_t>(cfg_.opt.batch_size);
    const std::size_t begin = static_cast<std::size_t>(k) * b;
    const std::size_t end = std::min(begin + b, perm.size());
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

const ClipFeatures& Trainer::features(std::size_t clip) {
    if (!cache_[clip]) cache_[clip] = std::make_unique<ClipFeatures>(clip_features(clips_[clip], cfg_.model));
    return *cache_[clip];
}

StepMetrics Trainer::train_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t step = schedule_.step;
    const std::uint64_t epoch = step / steps_per_epoch();
    const double lr = lr_at(epoch, cfg_.opt);
    const double ratio = tf_ratio(schedule_, step);

    std::vector<const ClipFeatures*> feats;
    for (std::size_t i : batch_indices(step)) feats.push_back(&features(i));
    const TrainingBatch batch = make_training_batch(feats);
    const std::size_t stages = gen_->stages();
    const auto len = static_cast<std::size_t>(cfg_.opt.clip_len);

    std::seed_seq seq{cfg_.seed, step, std::uint64_t{3}};
    std::mt19937_64 rng(seq);

    // Generator forward, stage by stage.
    std::vector<model::BlockOutput<float>> outs;
    std::vector<TF> fake_waves;
    std::size_t real_inputs = 0, sampled_inputs = 0;
    for (std::size_t n = 1; n <= stages; ++n) {
        model::BlockOutput<float> in = batch.real[0];
        if (n > 1) {
            const model::BlockOutput<float> prev{outs.back().log_amp.detach(), outs.back().phase.detach()};
            std::vector<bool> chosen;
            in = sample_block_inputs(batch.real[n - 1], prev, ratio, rng, chosen);
            for (bool r : chosen) {
                ++sampled_inputs;
                if (r)
                    ++real_inputs;
                else
                    ++generated_used_;
            }
        }
        outs.push_back(gen_->forward_block(n, in.log_amp, in.phase));
        fake_waves.push_back(synthesize(outs.back(), cfg_.model.stft, len));
    }

    StepMetrics m;
    m.step = step + 1;
    m.epoch = epoch;
    m.lr = lr;
    m.tf_ratio = ratio;
    m.real_fraction = sampled_inputs ? static_cast<double>(real_inputs) / static_cast<double>(sampled_inputs) : 1.0;

    // Discriminator update on detached fakes.
    const bool adversarial = cfg_.loss.adv > 0.0;
    if (adversarial) {
        d_opt_->zero_grad();
        TF d_total;
        for (std::size_t n = 1; n <= stages; ++n) {
            const auto& d = disc_->stage(n);
            const auto real = score(d, batch.real[n], batch.waves[n]);
            const model::BlockOutput<float> fake_pair{outs[n - 1].log_amp.detach(), outs[n - 1].phase.detach()};
            const auto fake = score(d, fake_pair, fake_waves[n - 1].detach());
            TF dl = ad::add(ad::add(gan::hinge_d_loss(real.wave, fake.wave), gan::hinge_d_loss(real.amp, fake.amp)),
                            gan::hinge_d_loss(real.phase, fake.phase));
            const double v = dl.item();
            require_finite(v, "stage" + std::to_string(n) + ".d_loss");
            m.stage_d.push_back(v);
            d_total = d_total.defined() ? ad::add(d_total, dl) : dl;
        }
        m.d_loss = d_total.item();
        d_total.backward();
        d_opt_->step(lr);
    } else {
        m.stage_d.assign(stages, 0.0);
    }

    // Generator update.
    g_opt_->zero_grad();
    const FreezeGuard frozen(disc_->parameters());
    std::vector<gan::StageLoss<float>> losses;
    for (std::size_t n = 1; n <= stages; ++n) {
        std::vector<TF> fake_scores;
        if (adversarial) {
            const auto s = score(disc_->stage(n), outs[n - 1], fake_waves[n - 1]);
            fake_scores = {s.wave, s.amp, s.phase};
        }
        auto sl = gan::generator_stage_loss(outs[n - 1], batch.real[n], fake_scores, cfg_.loss);
        const std::string tag = "stage" + std::to_string(n) + ".";
        require_finite(sl.amp, tag + "amp");
        require_finite(sl.ip, tag + "ip");
        require_finite(sl.gd, tag + "gd");
        require_finite(sl.iaf, tag + "iaf");
        require_finite(sl.complex, tag + "complex");
        require_finite(sl.adv, tag + "adv");
        losses.push_back(std::move(sl));
    }
    TF g_total = gan::generator_total_loss(losses);
    m.g_loss = g_total.item();
    require_finite(m.g_loss, "g_loss");
    g_total.backward();
    g_opt_->step(lr);

    m.stages = std::move(losses);
    ++schedule_.step;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

void Trainer::run(const std::function<void(const StepMetrics&)>& on_step) {
    while (schedule_.step < cfg_.steps) {
        const StepMetrics m = train_step();
        if (on_step) on_step(m);
    }
}

namespace {

nlohmann::json checkpoint_config(const TrainConfig& cfg) {
    nlohmann::json j = to_json(cfg);
    // Output locations do not affect the trained weights.
    j.erase("out_dir");
    return j;
}

}  // namespace

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.config = checkpoint_config(cfg_);
    ck.step = schedule_.step;
    ck.state["generated_inputs_used"] = generated_used_;
    export_params(gen_->parameters(), ck);
    export_params(disc_->parameters(), ck);
    g_opt_->export_state(ck, "opt.g");
    d_opt_->export_state(ck, "opt.d");
    return ck;
}

void Trainer::resume(const Checkpoint& ck) {
    require_model_config(ck, cfg_.model);
    if (!ck.config.contains("disc") || ck.config.at("disc") != gan::to_json(cfg_.disc))
        throw ConfigMismatch("checkpoint discriminator configuration differs from the run configuration");
    import_params(ck, gen_->parameters());
    import_params(ck, disc_->parameters());
    g_opt_->import_state(ck, "opt.g");
    d_opt_->import_state(ck, "opt.d");
    schedule_.step = ck.step;
    generated_used_ = ck.state.value("generated_inputs_used", std::uint64_t{0});
}

}  // namespace msbwe::train
