#include <cmath>

#include "msbwe/error.hpp"
#include "msbwe/json_fields.hpp"
#include "msbwe/train.hpp"

namespace msbwe::train {

void TrainConfig::validate() const {
    model.validate();
    disc.validate();
    loss.validate();
    opt.validate();
    tf.validate();
    if (threads < 1) throw InvalidArgument("threads must be >= 1");
    if (log_every < 1) throw InvalidArgument("log_every must be >= 1");
    if (corpus.wav_dir.empty() && corpus.synth.n_clips < 1) throw InvalidArgument("corpus.synth.n_clips must be >= 1");
    if (corpus.test_clips < 0) throw InvalidArgument("corpus.test_clips must be >= 0");
    if (!(corpus.split >= 0.0 && corpus.split <= 1.0)) throw InvalidArgument("corpus.split must lie in [0, 1]");
    if (static_cast<std::size_t>(opt.clip_len) < gan::WaveDiscriminator<float>::kMinLength)
        throw InvalidArgument("optimizer.clip_len must be at least " +
                              std::to_string(gan::WaveDiscriminator<float>::kMinLength) + " samples");
}

TrainConfig default_config() { return TrainConfig{}; }

TrainConfig desk_preset() {
    TrainConfig c;
    c.model.rates = {8000, 16000, 48000};
    c.model.block.hidden = 64;
    c.disc.wave_channels = 8;
    c.disc.wave_max_channels = 32;
    c.disc.wave_max_groups = 8;
    c.disc.spec_channels = 4;
    c.opt.batch_size = 4;
    c.opt.lr0 = 1e-3;
    c.corpus.synth.n_clips = 64;
    c.corpus.test_clips = 16;
    c.steps = 2000;
    // Same ratio sweep (0.75 -> ~0.06) as 500k steps at the default decay.
    c.tf.decay = std::pow(c.tf.decay, 500000.0 / static_cast<double>(c.steps));
    c.checkpoint_every = 500;
    c.log_every = 10;
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["model"] = model::to_json(c.model);
    j["disc"] = gan::to_json(c.disc);
    j["loss"] = gan::to_json(c.loss);
    j["optimizer"] = {{"lr0", c.opt.lr0},
                      {"beta1", c.opt.beta1},
                      {"beta2", c.opt.beta2},
                      {"weight_decay", c.opt.weight_decay},
                      {"lr_decay_per_epoch", c.opt.lr_decay_per_epoch},
                      {"eps", c.opt.eps},
                      {"batch_size", c.opt.batch_size},
                      {"clip_len", c.opt.clip_len}};
    j["teacher_forcing"] = {{"initial_ratio", c.tf.initial_ratio}, {"decay", c.tf.decay}};
    j["corpus"] = {{"wav_dir", c.corpus.wav_dir},
                   {"split", c.corpus.split},
                   {"test_clips", c.corpus.test_clips},
                   {"synth", {{"n_clips", c.corpus.synth.n_clips}, {"seed", c.corpus.synth.seed}}}};
    j["steps"] = c.steps;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["threads"] = c.threads;
    j["out_dir"] = c.out_dir;
    j["checkpoint_every"] = c.checkpoint_every;
    j["log_every"] = c.log_every;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
    TrainConfig c = base;
    FieldReader top(j, "");
    if (const auto* m = top.child("model")) {
        // Partial model sections override the base field by field.
        nlohmann::json merged = model::to_json(c.model);
        if (!m->is_object()) throw InvalidArgument("config section 'model' must be an object");
        for (const auto& [k, v] : m->items()) {
            if (v.is_object() && merged.contains(k) && merged[k].is_object())
                for (const auto& [k2, v2] : v.items()) merged[k][k2] = v2;
            else
                merged[k] = v;
        }
        const bool bins_given = m->contains("block") && (*m)["block"].is_object() && (*m)["block"].contains("freq_bins");
        if (!bins_given) merged["block"].erase("freq_bins");
        c.model = model::cascade_from_json(merged, "model");
    }
    if (const auto* d = top.child("disc")) {
        nlohmann::json merged = gan::to_json(c.disc);
        if (!d->is_object()) throw InvalidArgument("config section 'disc' must be an object");
        for (const auto& [k, v] : d->items()) merged[k] = v;
        c.disc = gan::disc_config_from_json(merged, "disc");
    }
    if (const auto* l = top.child("loss")) {
        nlohmann::json merged = gan::to_json(c.loss);
        if (!l->is_object()) throw InvalidArgument("config section 'loss' must be an object");
        for (const auto& [k, v] : l->items()) merged[k] = v;
        c.loss = gan::loss_weights_from_json(merged, "loss");
    }
    if (const auto* o = top.child("optimizer")) {
        FieldReader r(*o, "optimizer");
        r.get("lr0", c.opt.lr0);
        r.get("beta1", c.opt.beta1);
        r.get("beta2", c.opt.beta2);
        r.get("weight_decay", c.opt.weight_decay);
        r.get("lr_decay_per_epoch", c.opt.lr_decay_per_epoch);
        r.get("eps", c.opt.eps);
        r.get("batch_size", c.opt.batch_size);
        r.get("clip_len", c.opt.clip_len);
        r.finish();
    }
    if (const auto* t = top.child("teacher_forcing")) {
        FieldReader r(*t, "teacher_forcing");
        r.get("initial_ratio", c.tf.initial_ratio);
        r.get("decay", c.tf.decay);
        r.finish();
    }
    if (const auto* s = top.child("corpus")) {
        FieldReader r(*s, "corpus");
        r.get("wav_dir", c.corpus.wav_dir);
        r.get("split", c.corpus.split);
        r.get("test_clips", c.corpus.test_clips);
        if (const auto* syn = r.child("synth")) {
            FieldReader rs(*syn, "corpus.synth");
            rs.get("n_clips", c.corpus.synth.n_clips);
            rs.get("seed", c.corpus.synth.seed);
            rs.finish();
        }
        r.finish();
    }
    top.get("steps", c.steps);
    top.get("seed", c.seed);
    top.get("deterministic", c.deterministic);
    top.get("threads", c.threads);
    top.get("out_dir", c.out_dir);
    top.get("checkpoint_every", c.checkpoint_every);
    top.get("log_every", c.log_every);
    top.finish();
    c.validate();
    return c;
}

}  // namespace msbwe::train
