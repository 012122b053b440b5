#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbwe/checkpoint.hpp"
#include "msbwe/gan.hpp"
#include "msbwe/model.hpp"

namespace msbwe::train {

using ad::Tensor;

// ---- schedules -----------------------------------------------------------------

struct TeacherForcingSchedule {
    double initial_ratio = 0.75;
    double decay = 0.999995;
    std::uint64_t step = 0;

    void validate() const;
    bool operator==(const TeacherForcingSchedule&) const = default;
};

// initial_ratio * decay^step.
double tf_ratio(const TeacherForcingSchedule& schedule, std::uint64_t step);
inline double tf_ratio(const TeacherForcingSchedule& schedule) { return tf_ratio(schedule, schedule.step); }

struct OptimizerConfig {
    double lr0 = 2e-4;
    double beta1 = 0.8;
    double beta2 = 0.99;
    double weight_decay = 0.01;
    double lr_decay_per_epoch = 0.999;
    double eps = 1e-8;
    int batch_size = 16;
    int clip_len = 8000;

    void validate() const;
    bool operator==(const OptimizerConfig&) const = default;
};

// lr0 * lr_decay_per_epoch^epoch.
double lr_at(std::uint64_t epoch, const OptimizerConfig& cfg);

// ---- optimiser -----------------------------------------------------------------

// Adam with decoupled weight decay:
//   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * lambda * p
template <typename T>
class AdamW {
public:
    AdamW(model::ParamList<T> params, const OptimizerConfig& cfg);

    // Consumes the current gradients. Parameters without a gradient buffer
    // (never reached by backward) see a zero gradient.
    void step(double lr);
    void zero_grad();
    std::uint64_t steps() const { return t_; }

    // Moments go into the checkpoint as "<prefix>.m.<param>" / "<prefix>.v.<param>".
    void export_state(Checkpoint& ckpt, const std::string& prefix) const;
    void import_state(const Checkpoint& ckpt, const std::string& prefix);

private:
    model::ParamList<T> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::uint64_t t_ = 0;
};

// ---- data ------------------------------------------------------------------------

struct SynthCorpusSpec {
    int n_clips = 64;
    int clip_len = 8000;  // samples at `rate`
    double rate = 48000;
    std::uint64_t seed = 1;

    bool operator==(const SynthCorpusSpec&) const = default;
};

// Harmonic stacks (f0 in [80, 400] Hz, random spectral tilt, gliding pitch),
// optional chirps and band-shaped noise bursts. Each clip is scaled to a peak
// in [0.5, 0.95] and carries harmonics up to about 0.98 of Nyquist.
std::vector<dsp::Waveform> synth_corpus(const SynthCorpusSpec& spec);

struct CorpusSplit {
    std::vector<dsp::Waveform> train;
    std::vector<dsp::Waveform> test;
    std::vector<std::string> warnings;  // files skipped and why
};

// Reads every *.wav in dir (sorted), drops files whose rate differs from
// `rate`, shuffles the file list with `seed` and puts round(split * count)
// files in the training set. Each file is cut into clip_len pieces (the tail
// is zero-padded when at least half a clip remains). DataError when no usable
// file is found.
CorpusSplit load_wav_corpus(const std::string& dir, double split_ratio, std::uint64_t seed, double rate,
                            int clip_len);

// Spectral features of one clip at every ladder rate, all at the container rate.
struct ClipFeatures {
    std::vector<dsp::SpectrumPair> pairs;          // index n = 0..N, effective_rate S_n
    std::vector<std::vector<double>> waveforms;    // band-limited clip per n, clip_len samples
};

// Band-limits the clip to S_n by sinc decimation to S_n and interpolation back
// to S_N, then STFT. The top rate uses the clip unchanged.
ClipFeatures clip_features(const dsp::Waveform& clip, const model::CascadeConfig& cfg);

// Per-stage batched tensors in [B, F, T] / [B, 1, L] layout.
struct TrainingBatch {
    std::vector<model::BlockOutput<float>> real;  // n = 0..N
    std::vector<Tensor<float>> waves;             // n = 0..N
};

TrainingBatch make_training_batch(const std::vector<const ClipFeatures*>& clips);

// Chooses the input of block n (n = 2..N) per clip: the real S_{n-1} pair with
// probability `ratio`, otherwise the (detached) output of block n-1. Returns the
// mixed input and writes the per-clip choice (true = real) into `chosen_real`.
model::BlockOutput<float> sample_block_inputs(const model::BlockOutput<float>& real,
                                              const model::BlockOutput<float>& generated, double ratio,
                                              std::mt19937_64& rng, std::vector<bool>& chosen_real);

// ---- training ----------------------------------------------------------------------

struct CorpusConfig {
    std::string wav_dir;  // empty -> synthetic corpus
    SynthCorpusSpec synth;
    int test_clips = 16;  // synthetic held-out clips (seed + 1000)
    double split = 0.9;

    bool operator==(const CorpusConfig&) const = default;
};

struct TrainConfig {
    model::CascadeConfig model;
    gan::DiscConfig disc;
    gan::LossWeights loss;
    OptimizerConfig opt;
    TeacherForcingSchedule tf;
    CorpusConfig corpus;
    std::uint64_t steps = 2000;
    std::uint64_t seed = 0;
    bool deterministic = false;
    int threads = 1;
    std::string out_dir = "run";
    std::uint64_t checkpoint_every = 0;  // 0: only at the end
    std::uint64_t log_every = 1;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// Defaults follow the published setup where it gives one; `desk_preset`
// shrinks widths and the corpus for a single desktop CPU.
TrainConfig default_config();
TrainConfig desk_preset();

nlohmann::json to_json(const TrainConfig& cfg);
// Strict: unknown keys anywhere raise InvalidArgument naming the key.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = default_config());

struct StepMetrics {
    std::uint64_t step = 0;  // schedule counter after the update
    std::uint64_t epoch = 0;
    double lr = 0;
    double tf_ratio = 0;
    double g_loss = 0;
    double d_loss = 0;
    double real_fraction = 0;  // share of stage 2..N inputs drawn from real data
    std::vector<gan::StageLoss<float>> stages;
    std::vector<double> stage_d;
    double seconds = 0;

    nlohmann::json to_json() const;
};

class Trainer {
public:
    // Builds the generator, discriminators and optimisers from cfg; the corpus
    // is supplied separately so callers can share one across runs.
    Trainer(TrainConfig cfg, std::vector<dsp::Waveform> train_clips);

    StepMetrics train_step();
    // Runs until `steps`, logging through `on_step`.
    void run(const std::function<void(const StepMetrics&)>& on_step = {});

    Checkpoint checkpoint() const;
    // Restores parameters, optimiser moments and counters. ConfigMismatch when
    // the checkpoint was produced with a different model or discriminator.
    void resume(const Checkpoint& ckpt);

    const TrainConfig& config() const { return cfg_; }
    model::MsBwe<float>& generator() { return *gen_; }
    const model::MsBwe<float>& generator() const { return *gen_; }
    gan::Discriminators<float>& discriminators() { return *disc_; }
    std::uint64_t step() const { return schedule_.step; }
    std::uint64_t steps_per_epoch() const;
    const TeacherForcingSchedule& schedule() const { return schedule_; }
    // Count of clip-stage inputs that came from the previous block's output.
    std::uint64_t generated_inputs_used() const { return generated_used_; }

private:
    std::vector<std::size_t> batch_indices(std::uint64_t step) const;
    const ClipFeatures& features(std::size_t clip);

    TrainConfig cfg_;
    std::vector<dsp::Waveform> clips_;
    std::vector<std::unique_ptr<ClipFeatures>> cache_;
    std::unique_ptr<model::MsBwe<float>> gen_;
    std::unique_ptr<gan::Discriminators<float>> disc_;
    std::unique_ptr<AdamW<float>> g_opt_, d_opt_;
    TeacherForcingSchedule schedule_;
    std::uint64_t generated_used_ = 0;
};

// Synthetic or WAV corpus as configured.
CorpusSplit load_corpus(const CorpusConfig& cfg, double rate, int clip_len);

}  // namespace msbwe::train
