#include "mbrec/optim.hpp"

#include <cmath>

namespace mbrec::nn {

Tensor ParamSet::add(const std::string& name, std::vector<std::size_t> shape) {
    return add_zeros(name, std::move(shape));
}

Tensor ParamSet::add_normal(const std::string& name, std::vector<std::size_t> shape,
                            scalar stddev, Rng& rng) {
    Tensor t = add_zeros(name, std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.values()[i] = rng.normal(0.0, stddev);
    return t;
}

Tensor ParamSet::add_zeros(const std::string& name, std::vector<std::size_t> shape) {
    if (contains(name)) throw ConfigError("ParamSet: duplicate parameter name " + name);
    Tensor t = Tensor::zeros(std::move(shape), true);
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamSet::add_ones(const std::string& name, std::vector<std::size_t> shape) {
    Tensor t = add_zeros(name, std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t.values()[i] = 1.0;
    return t;
}

Tensor& ParamSet::find(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return t;
    throw ConfigError("ParamSet: no parameter named " + name);
}

const Tensor& ParamSet::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw ConfigError("ParamSet: no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return true;
    return false;
}

std::size_t ParamSet::total_params() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

std::vector<std::vector<scalar>> ParamSet::snapshot_values() const {
    std::vector<std::vector<scalar>> snap;
    snap.reserve(items_.size());
    for (const auto& [name, t] : items_) snap.push_back(t.value_vector());
    return snap;
}

void ParamSet::restore_values(const std::vector<std::vector<scalar>>& snap) {
    if (snap.size() != items_.size())
        throw ConfigError("ParamSet: snapshot has wrong number of entries");
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (snap[i].size() != items_[i].second.numel())
            throw ConfigError("ParamSet: snapshot entry size mismatch for " + items_[i].first);
        items_[i].second.value_vector() = snap[i];
    }
}

AdamW::AdamW(ParamSet& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::step() { step_with_lr(cfg_.lr); }

void AdamW::step_with_lr(scalar lr) {
    ++t_;
    const scalar bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<scalar>(t_));
    const scalar bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<scalar>(t_));
    std::size_t p = 0;
    for (auto& [name, t] : params_) {
        scalar* w = t.values();
        scalar* g = t.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("AdamW: non-finite gradient in parameter " + name);
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const scalar mhat = m[i] / bc1;
            const scalar vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
        ++p;
    }
}

Adagrad::Adagrad(ParamSet& params, AdagradConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, t] : params_) accum_.emplace_back(t.numel(), 0.0);
}

void Adagrad::step() {
    std::size_t p = 0;
    for (auto& [name, t] : params_) {
        scalar* w = t.values();
        scalar* g = t.grad();
        auto& acc = accum_[p];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("Adagrad: non-finite gradient in parameter " + name);
            acc[i] += g[i] * g[i];
            w[i] -= cfg_.lr * g[i] / (std::sqrt(acc[i]) + cfg_.eps);
        }
        ++p;
    }
}

}  // namespace mbrec::nn
