#pragma once

#include "rtgs/tensor.hpp"

namespace rtgs {

// Named parameter collection shared by optimizers and checkpoints.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    void add(const std::string& name, Tensor t) {
        names.push_back(name);
        tensors.push_back(std::move(t));
    }
    size_t size() const { return tensors.size(); }
    Tensor* find(const std::string& name) {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return &tensors[i];
        return nullptr;
    }
    void zero_grads() {
        for (auto& t : tensors) t.zero_grad();
    }
};

enum class OptKind { Adam, AdamW };

// Adam with bias correction. Adam couples weight decay into the gradient;
// AdamW applies it decoupled, directly on the parameter.
class Optimizer {
  public:
    Optimizer(OptKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999,
              double eps = 1e-8, double weight_decay = 0.0)
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long step_count() const { return step_; }

    void step(ParamSet& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params.tensors[i].numel(), 0.0);
                v_[i].assign(params.tensors[i].numel(), 0.0);
            }
        }
        if (m_.size() != params.size()) fail("optimizer state does not match parameter set");
        for (size_t i = 0; i < params.size(); ++i)
            if (!params.tensors[i].has_grad())
                fail("optimizer step: parameter '", params.names[i], "' has no gradient");

        ++step_;
        double bc1 = 1.0 - std::pow(beta1_, double(step_));
        double bc2 = 1.0 - std::pow(beta2_, double(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& w = params.tensors[i].data();
            auto& g = params.tensors[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < w.size(); ++j) {
                double gj = g[j];
                if (kind_ == OptKind::Adam && wd_ != 0.0) gj += wd_ * w[j];
                m[j] = beta1_ * m[j] + (1 - beta1_) * gj;
                v[j] = beta2_ * v[j] + (1 - beta2_) * gj * gj;
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                double upd = mhat / (std::sqrt(vhat) + eps_);
                if (kind_ == OptKind::AdamW) upd += wd_ * w[j];
                w[j] -= lr_ * upd;
            }
        }
        params.zero_grads();
    }

  private:
    OptKind kind_;
    double lr_, beta1_, beta2_, eps_, wd_;
    long step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Linear learning-rate ramp over the first `warmup_epochs` epochs; factor 1
// afterwards. Epochs are 0-based.
inline double warmup_factor(long epoch, long warmup_epochs) {
    if (warmup_epochs <= 0) return 1.0;
    if (epoch >= warmup_epochs) return 1.0;
    return double(epoch + 1) / double(warmup_epochs);
}

}  // namespace rtgs
