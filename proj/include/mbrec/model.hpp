#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/ops.hpp"
#include "mbrec/optim.hpp"
#include "mbrec/rng.hpp"
#include "mbrec/vocabulary.hpp"

namespace mbrec::model {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_inner = 128;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t experts = 5;            // per sparse decoder FFN
    std::size_t inject_layers = 2;      // first n_bi layers of both stacks get behavior context
    std::size_t d_behavior = 16;
    double dropout = 0.0;
    std::size_t max_encoder_len = 256;
    std::size_t max_decoder_len = 8;
    double init_scale = 0.02;
    std::uint64_t seed = 1;

    // token-space geometry, copied from the fitted tokenizer
    std::size_t user_buckets = 2000;
    std::size_t num_behaviors = 4;
    std::size_t digit_positions = 3;
    std::size_t digit_base = 16;

    tok::Vocabulary vocabulary() const;
    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);

    // laptop-scale defaults (the struct's own initializers)
    static ModelConfig desk();
    // full-scale preset: d256, inner 512, 4x64 heads, 4+4 layers, d_beh 64
    static ModelConfig full_scale();

    void set_vocabulary(const tok::Vocabulary& v);
};

// expert index for a token: behavior 0, digit at position p 1+p, everything
// else m+1; clamped to the configured expert count
std::size_t position_route(const tok::Vocabulary& vocab, int token, std::size_t experts);

// behavior-embedding row per position: 0 (padding row) for specials, user and
// behavior tokens; 1 + behavior for digit tokens, inherited from the behavior
// token that opens their tuple. Throws DataError on malformed tuple structure.
std::vector<int> behavior_context(const tok::Vocabulary& vocab, const std::vector<int>& tokens);

struct ParamFlopCounts {
    std::size_t parameters = 0;
    std::size_t forward_macs = 0;  // multiply-accumulates of one forward pass
};

// Closed-form parameter and compute accounting for one forward call at the
// given sequence lengths. Sparse layers count every expert's parameters but
// exactly one expert per token in compute.
ParamFlopCounts count_params_flops(const ModelConfig& cfg, std::size_t encoder_len,
                                   std::size_t decoder_len);

class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return config_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    const tok::Vocabulary& vocab() const { return vocab_; }

    // Full taped forward: [decoder length x vocab] logits. Pass a tape during
    // training; dropout applies only when both a tape and an rng are given.
    nn::Tensor forward(nn::GradientTape* tape, const std::vector<int>& encoder_tokens,
                       const std::vector<int>& decoder_tokens, Rng* dropout_rng = nullptr);

    // Encoder-only pass (no tape), for inference sessions that reuse the
    // encoder states across many decoder extensions.
    nn::Tensor encode(const std::vector<int>& encoder_tokens) const;

    void save(const std::filesystem::path& path, nlohmann::json extra_meta = {}) const;
    static Model load(const std::filesystem::path& path);

private:
    ModelConfig config_;
    tok::Vocabulary vocab_;
    nn::ParamSet params_;

    nn::Tensor embed(nn::GradientTape* tape, const std::vector<int>& tokens,
                     const std::string& pos_table) const;
    nn::Tensor attention(nn::GradientTape* tape, const std::string& prefix, const nn::Tensor& q_in,
                         const nn::Tensor& kv_in, const nn::Tensor& mask) const;
    nn::Tensor ffn(nn::GradientTape* tape, const std::string& prefix, const nn::Tensor& x,
                   const std::vector<int>& beh_rows, bool injected, Rng* dropout_rng) const;
    nn::Tensor sparse_ffn(nn::GradientTape* tape, const std::string& prefix, const nn::Tensor& x,
                          const std::vector<int>& tokens, const std::vector<int>& beh_rows,
                          bool injected, Rng* dropout_rng) const;
};

}  // namespace mbrec::model
