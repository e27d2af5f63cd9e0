#pragma once

#include <cmath>
#include <map>
#include <string>

#include "astsed/model/network.hpp"

namespace astsed {

struct TrainSchedule {
    std::size_t epochs = 10;
    double rampup_fraction = 0.5;  // ramp length as a fraction of all iterations
    double alpha_max = 2.0;
    double lr_backbone = 5e-6;
    double lr_new = 1e-4;
    std::size_t constant_lr_epochs = 5;
    double decay = 0.7;
    double ema_beta = 0.999;
    double weight_decay = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    template <typename V>
    void visit(V& v) {
        v("epochs", epochs);
        v("rampup_fraction", rampup_fraction);
        v("alpha_max", alpha_max);
        v("lr_backbone", lr_backbone);
        v("lr_new", lr_new);
        v("constant_lr_epochs", constant_lr_epochs);
        v("decay", decay);
        v("ema_beta", ema_beta);
        v("weight_decay", weight_decay);
        v("adam_beta1", adam_beta1);
        v("adam_beta2", adam_beta2);
        v("adam_eps", adam_eps);
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
        if (epochs == 0) fail("epochs must be at least 1");
        if (constant_lr_epochs > epochs) fail("constant_lr_epochs exceeds epochs");
        if (!(lr_backbone > 0) || !(lr_new > 0)) fail("learning rates must be positive");
        if (!(decay > 0 && decay <= 1)) fail("decay must be in (0, 1]");
        if (!(ema_beta >= 0 && ema_beta <= 1)) fail("ema_beta must be in [0, 1]");
        if (alpha_max < 0) fail("alpha_max must be non-negative");
        if (!(rampup_fraction >= 0 && rampup_fraction <= 1)) fail("rampup_fraction must be in [0, 1]");
        if (weight_decay < 0) fail("weight_decay must be non-negative");
        if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
            fail("invalid Adam constants");
    }

    /// Learning-rate multiplier for 0-based epoch e.
    double lr_factor(std::size_t e) const {
        return e < constant_lr_epochs ? 1.0 : std::pow(decay, static_cast<double>(e - constant_lr_epochs + 1));
    }
};

/// alpha_max * exp(-5 (1 - min(t, R)/R)^2); R == 0 gives alpha_max.
inline double alpha_ramp(std::size_t t, std::size_t rampup, double alpha_max) {
    if (rampup == 0) return alpha_max;
    const double x = 1.0 - static_cast<double>(std::min(t, rampup)) / static_cast<double>(rampup);
    return alpha_max * std::exp(-5.0 * x * x);
}

/// teacher <- beta * teacher + (1 - beta) * student, leaf by leaf.
template <typename T>
void ema_update(ParamTree<T>& teacher, const ParamTree<T>& student, double beta) {
    teacher.require_same_structure(student);
    const T b = static_cast<T>(beta), c = static_cast<T>(1.0 - beta);
    for (const auto& [path, s] : student.leaves()) {
        auto& t = teacher.at(path);
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i] != s[i]) t[i] = b * t[i] + c * s[i];
    }
}

inline bool decays_weight(const std::string& path) {
    auto ends = [&](const std::string& s) {
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    return ends(".weight") || ends(".wx") || ends(".wh");
}

/// Adam with decoupled weight decay and two learning-rate groups: backbone
/// leaves (patch embedding and patch encoder) and everything else.
class AdamW {
 public:
    explicit AdamW(const TrainSchedule& s) : s_(s) {}

    void step(ParamTree<double>& params, double lr_backbone, double lr_new) {
        ++t_;
        const double bc1 = 1.0 - std::pow(s_.adam_beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(s_.adam_beta2, static_cast<double>(t_));
        for (auto& [path, theta] : params.leaves()) {
            const auto* g = params.grad(path);
            if (!g) continue;
            auto& m = m_[path];
            auto& v = v_[path];
            if (m.empty()) {
                m = NdArray<double>(theta.shape());
                v = NdArray<double>(theta.shape());
            }
            const double lr = is_backbone_path(path) ? lr_backbone : lr_new;
            const double wd = decays_weight(path) ? s_.weight_decay : 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double gi = (*g)[i];
                m[i] = s_.adam_beta1 * m[i] + (1.0 - s_.adam_beta1) * gi;
                v[i] = s_.adam_beta2 * v[i] + (1.0 - s_.adam_beta2) * gi * gi;
                theta[i] *= 1.0 - lr * wd;
                theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s_.adam_eps);
            }
        }
        params.clear_grads();
    }

    std::size_t steps() const { return t_; }

 private:
    TrainSchedule s_;
    std::size_t t_ = 0;
    std::map<std::string, NdArray<double>> m_, v_;
};

}  // namespace astsed
