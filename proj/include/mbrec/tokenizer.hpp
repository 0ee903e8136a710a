#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/dataset.hpp"
#include "mbrec/optim.hpp"
#include "mbrec/vocabulary.hpp"

namespace mbrec::tok {

struct TokenizerConfig {
    std::size_t levels = 3;            // digits per item code
    std::size_t codes_per_level = 16;  // K for semantic ids, base k for collision-free ids
    std::size_t user_buckets = 2000;

    // level-1 quantized autoencoder
    std::size_t latent_dim = 32;
    std::vector<std::size_t> encoder_hidden = {64, 32};
    double commitment_beta = 0.25;
    double ema_decay = 0.99;
    double learning_rate = 1e-3;  // adagrad
    std::size_t batch_size = 256;
    std::size_t max_epochs = 500;
    double plateau_rel_improvement = 1e-5;
    std::size_t plateau_epochs = 10;

    // level-2 clustering
    std::size_t kmeans_iters = 100;
    double kmeans_tol = 1e-6;

    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static TokenizerConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// Per-item digit codes. For semantic and collision-free ids the full code is
// unique per item; the quantizer baseline may collide before disambiguation.
struct CodeAssignment {
    std::size_t levels = 0;
    std::size_t base = 0;
    std::vector<std::vector<int>> codes;  // item -> digits, most significant first

    std::size_t item_count() const { return codes.size(); }
    void validate() const;
    bool is_injective() const;
};

// digits of value in the given base, most significant first
std::vector<int> base_digits_msb(std::uint64_t value, std::size_t base, std::size_t levels);

struct QuantizedAutoencoderResult {
    std::vector<int> digits;                        // level-1 code per item
    std::vector<std::vector<double>> latents;       // encoder outputs
    std::vector<std::vector<double>> residuals;     // latent - codebook row
    std::vector<std::vector<double>> codebook;      // K x latent_dim
    std::vector<double> ema_counts;                 // running assignment mass per code
    nn::ParamSet autoencoder;                       // encoder/decoder weights
    double final_loss = 0.0;
    std::size_t epochs_run = 0;
    std::vector<std::pair<std::size_t, std::size_t>> reseed_log;  // (epoch, code)
};

// Trains the level-1 quantized autoencoder: MLP encoder/decoder around a
// K-entry codebook maintained by exponential moving averages, straight-through
// gradients for the quantization step, Adagrad on the network weights, codes
// re-seeded from random encoder outputs after a full epoch without use.
QuantizedAutoencoderResult fit_quantized_autoencoder(
    const std::vector<std::vector<double>>& features, const TokenizerConfig& cfg);

struct SemanticIdResult {
    CodeAssignment codes;
    QuantizedAutoencoderResult level1;
    // per level-1 group: centroids used for the level-2 split (may be empty)
    std::vector<std::vector<std::vector<double>>> level2_centroids;
};

// Balanced three-level semantic ids: quantized autoencoder digit, per-prefix
// k-means digit over residuals, and a seeded random permutation assigning
// distinct third digits within each (first, second) group.
SemanticIdResult fit_balanced_sid(const std::vector<std::vector<double>>& features,
                                  const TokenizerConfig& cfg);

// Collision-free ids: a seeded random item permutation composed with a
// digit-reversal of the rank, so every code-space prefix at every level is
// filled as evenly as possible (counts differ by at most one).
CodeAssignment build_balanced_cid(std::size_t item_count, std::size_t base, std::size_t levels,
                                  std::uint64_t seed);

struct ResidualQuantizerResult {
    CodeAssignment codes;               // the m quantizer digits
    std::vector<int> disambiguation;    // enumeration digit appended on collisions
    std::size_t collided_items = 0;     // items sharing all m digits with another
    QuantizedAutoencoderResult level1;
};

// Baseline residual quantizer: shares the level-1 autoencoder, then clusters
// residuals globally (one shared codebook per level) instead of per prefix.
ResidualQuantizerResult fit_residual_quantizer(const std::vector<std::vector<double>>& features,
                                               const TokenizerConfig& cfg);

struct CodeLevelStats {
    std::size_t level = 0;          // 1-based prefix depth
    double bins = 0.0;              // base^level
    double variance = 0.0;          // population variance of prefix counts over all bins
    double minimal_variance = 0.0;  // variance of the most even spread possible
    std::size_t max_count = 0;
    std::size_t nonempty_bins = 0;
};

std::vector<CodeLevelStats> code_distribution_stats(const CodeAssignment& codes);
double minimal_possible_variance(std::size_t items, double bins);
std::size_t count_full_code_collisions(const CodeAssignment& codes);

// Fitted tokenizer with everything needed to token-ize a dataset later:
// item codes keyed by raw id, behavior vocabulary, and the sequence layout.
struct TokenizerState {
    std::string kind;  // "sid", "cid", or "rqvae"
    TokenizerConfig config;
    CodeAssignment codes;
    std::vector<std::string> item_raw_ids;
    std::vector<std::string> behavior_names;
    int target_behavior = 0;
    // fitted arrays kept for reproducibility/inspection
    std::vector<std::vector<double>> level1_codebook;
    std::vector<std::pair<std::string, std::vector<double>>> aux_arrays;

    Vocabulary vocabulary() const;
    void save(const std::filesystem::path& path) const;
    static TokenizerState load(const std::filesystem::path& path);

    // TSV code table: raw item id followed by its digits, one item per row.
    std::string export_code_table() const;

    // dataset item index -> row in `codes` (by raw id); missing items throw.
    std::vector<std::size_t> align_items(const data::InteractionDataset& ds) const;
};

TokenizerState fit_tokenizer(const data::InteractionDataset& ds,
                             const std::vector<std::vector<double>>& features,
                             const TokenizerConfig& cfg, const std::string& kind);

// [behavior token, digit tokens...] for one interaction
std::vector<int> tokenize_interaction(const Vocabulary& vocab, int behavior,
                                      const std::vector<int>& code);
// inverse of tokenize_interaction; validates tuple structure
std::pair<int, std::vector<int>> detokenize_interaction(const Vocabulary& vocab,
                                                        const std::vector<int>& tokens);

struct ModelExample {
    std::vector<int> encoder_tokens;
    std::vector<int> decoder_input;
    std::vector<int> decoder_target;
};

std::vector<int> encoder_tokens_for(const Vocabulary& vocab, const CodeAssignment& codes,
                                    const std::vector<std::size_t>& item_rows,
                                    const std::string& user_raw_id,
                                    const std::vector<data::Interaction>& history);

ModelExample build_model_sequence(const Vocabulary& vocab, const CodeAssignment& codes,
                                  const std::vector<std::size_t>& item_rows,
                                  const std::string& user_raw_id,
                                  const std::vector<data::Interaction>& history,
                                  const data::Interaction& target);

}  // namespace mbrec::tok
