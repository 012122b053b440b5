#include <cmath>

#include "msbwe/error.hpp"
#include "msbwe/train.hpp"

namespace msbwe::train {

void TeacherForcingSchedule::validate() const {
    if (!(initial_ratio >= 0.0 && initial_ratio <= 1.0))
        throw InvalidArgument("teacher_forcing.initial_ratio must lie in [0, 1]");
    if (!(decay > 0.0 && decay <= 1.0)) throw InvalidArgument("teacher_forcing.decay must lie in (0, 1]");
}

double tf_ratio(const TeacherForcingSchedule& schedule, std::uint64_t step) {
    return schedule.initial_ratio * std::pow(schedule.decay, static_cast<double>(step));
}

void OptimizerConfig::validate() const {
    if (!(lr0 > 0.0)) throw InvalidArgument("optimizer.lr0 must be positive");
    if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0))
        throw InvalidArgument("optimizer betas must satisfy 0 < beta1 < beta2 < 1");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("optimizer.weight_decay must be non-negative");
    if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0))
        throw InvalidArgument("optimizer.lr_decay_per_epoch must lie in (0, 1]");
    if (!(eps > 0.0)) throw InvalidArgument("optimizer.eps must be positive");
    if (batch_size < 1) throw InvalidArgument("optimizer.batch_size must be >= 1");
    if (clip_len < 1) throw InvalidArgument("optimizer.clip_len must be >= 1");
}

double lr_at(std::uint64_t epoch, const OptimizerConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.lr_decay_per_epoch, static_cast<double>(epoch));
}

template <typename T>
AdamW<T>::AdamW(model::ParamList<T> params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.size(), T(0));
        v_.emplace_back(p.tensor.size(), T(0));
    }
}

template <typename T>
void AdamW<T>::step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double decay = lr * cfg_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        ad::Tensor<T> p = params_[k].tensor;
        auto data = p.mutable_data();
        const auto grad = p.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
            const double old = static_cast<double>(data[i]);
            data[i] = static_cast<T>(old - lr * update - decay * old);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) {
        ad::Tensor<T> t = p.tensor;
        t.zero_grad();
    }
}

template <typename T>
void AdamW<T>::export_state(Checkpoint& ckpt, const std::string& prefix) const {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const auto& shape = params_[k].tensor.shape();
        ckpt.tensors.push_back({prefix + ".m." + params_[k].name, shape, {m_[k].begin(), m_[k].end()}});
        ckpt.tensors.push_back({prefix + ".v." + params_[k].name, shape, {v_[k].begin(), v_[k].end()}});
    }
    ckpt.state[prefix + ".t"] = t_;
}

template <typename T>
void AdamW<T>::import_state(const Checkpoint& ckpt, const std::string& prefix) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        for (auto [tag, dst] : {std::pair{".m.", &m_[k]}, std::pair{".v.", &v_[k]}}) {
            const std::string name = prefix + tag + params_[k].name;
            const TensorRecord* rec = ckpt.find(name);
            if (!rec) throw ConfigMismatch("checkpoint has no optimiser tensor '" + name + "'");
            if (rec->data.size() != dst->size()) throw ConfigMismatch("optimiser tensor '" + name + "' has the wrong size");
            for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] = static_cast<T>(rec->data[i]);
        }
    }
    if (!ckpt.state.contains(prefix + ".t")) throw ConfigMismatch("checkpoint has no optimiser step for " + prefix);
    t_ = ckpt.state.at(prefix + ".t").get<std::uint64_t>();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace msbwe::train
