#pragma once

#include <string>
#include <vector>

#include "mbrec/rng.hpp"
#include "mbrec/tensor.hpp"

namespace mbrec::nn {

// Ordered, named collection of trainable tensors. Order is fixed at registration
// and shared with optimizer state and checkpoints.
class ParamSet {
public:
    Tensor add(const std::string& name, std::vector<std::size_t> shape);
    Tensor add_normal(const std::string& name, std::vector<std::size_t> shape, scalar stddev,
                      Rng& rng);
    Tensor add_zeros(const std::string& name, std::vector<std::size_t> shape);
    Tensor add_ones(const std::string& name, std::vector<std::size_t> shape);

    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return items_.size(); }
    std::size_t total_params() const;
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grad();

    // Deep copies of all values, in registration order. Used for best-checkpoint
    // snapshots during training.
    std::vector<std::vector<scalar>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<scalar>>& snap);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamWConfig {
    scalar lr = 1e-3;
    scalar beta1 = 0.9;
    scalar beta2 = 0.999;
    scalar eps = 1e-8;
    scalar weight_decay = 0.0;
};

// AdamW with decoupled weight decay and bias correction. Throws NumericError
// naming the parameter if a non-finite gradient is seen.
class AdamW {
public:
    AdamW(ParamSet& params, AdamWConfig cfg);
    void step();
    void step_with_lr(scalar lr);
    std::int64_t steps_taken() const { return t_; }

private:
    ParamSet& params_;
    AdamWConfig cfg_;
    std::vector<std::vector<scalar>> m_, v_;
    std::int64_t t_ = 0;
};

struct AdagradConfig {
    scalar lr = 1e-3;
    scalar eps = 1e-10;
};

// Adagrad: per-entry accumulated squared gradients.
class Adagrad {
public:
    Adagrad(ParamSet& params, AdagradConfig cfg);
    void step();

private:
    ParamSet& params_;
    AdagradConfig cfg_;
    std::vector<std::vector<scalar>> accum_;
};

}  // namespace mbrec::nn
