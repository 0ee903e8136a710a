#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mbrec/model.hpp"
#include "mbrec/tokenizer.hpp"
#include "mbrec/vocabulary.hpp"

namespace mbrec::decode {

// Prefix trie over the fitted item codes: beam candidates are restricted to
// digits that extend some real item, so every finished hypothesis is an item.
class CodeTrie {
public:
    explicit CodeTrie(const tok::CodeAssignment& codes);

    std::size_t levels() const { return levels_; }
    std::size_t item_count() const { return items_; }

    // allowed next digits after the given digit prefix, ascending
    const std::vector<int>& children(const std::vector<int>& prefix) const;
    // item index for a complete code
    std::optional<std::size_t> item_of(const std::vector<int>& code) const;

private:
    std::size_t levels_ = 0;
    std::size_t items_ = 0;
    std::map<std::vector<int>, std::vector<int>> children_;
    std::map<std::vector<int>, std::size_t> leaf_items_;
};

// Next-token distribution source for one encoder context. The prefix always
// starts with BOS; implementations may cache per-prefix state.
class DecoderSession {
public:
    virtual ~DecoderSession() = default;
    virtual const tok::Vocabulary& vocab() const = 0;
    // log-probabilities over the full vocabulary for the token after `prefix`
    virtual std::vector<double> next_log_probs(const std::vector<int>& prefix) = 0;
};

// Incremental transformer decoding: encoder states and per-layer cross
// attention keys/values are computed once, decoder self-attention keys/values
// are memoized per prefix, so each beam extension costs one token's work.
// Matches Model::forward log-probabilities to high precision.
class ModelSession : public DecoderSession {
public:
    ModelSession(const model::Model& m, std::vector<int> encoder_tokens);

    const tok::Vocabulary& vocab() const override { return model_.vocab(); }
    std::vector<double> next_log_probs(const std::vector<int>& prefix) override;

    std::size_t cached_prefixes() const { return nodes_.size(); }

private:
    struct NodeState {
        // per decoder layer: flattened [t x attn_width] keys and values
        std::vector<std::vector<double>> self_k, self_v;
        std::vector<double> last_x;  // residual-stream output at the last position
    };

    const NodeState& ensure(const std::vector<int>& prefix);

    const model::Model& model_;
    std::vector<int> encoder_tokens_;
    std::vector<std::size_t> live_keys_;              // non-pad encoder positions
    std::vector<std::vector<double>> cross_k_, cross_v_;  // per layer, [enc_len x a]
    std::map<std::vector<int>, NodeState> nodes_;
};

struct RankedEntry {
    int behavior = 0;
    std::size_t item = 0;
    double score = 0.0;  // joint log-probability of the generated tokens
};

struct RankedPrediction {
    std::vector<RankedEntry> entries;  // scores non-increasing
};

// Length-synchronous beam search over one tuple. Prompt is [BOS] (behavior
// decoded first) or [BOS, behavior]; candidates are masked to behavior tokens
// or trie-allowed digits; score ties break by token id, then parent beam.
RankedPrediction beam_search(DecoderSession& session, const CodeTrie& trie,
                             const std::vector<int>& prompt, std::size_t n_beams,
                             std::size_t top_n);

RankedPrediction predict_target_behavior(DecoderSession& session, const CodeTrie& trie,
                                         int target_behavior, std::size_t n_beams,
                                         std::size_t top_n);
RankedPrediction predict_behavior_specific(DecoderSession& session, const CodeTrie& trie,
                                           int behavior, std::size_t n_beams, std::size_t top_n);
RankedPrediction predict_behavior_item(DecoderSession& session, const CodeTrie& trie,
                                       std::size_t n_beams, std::size_t top_n);

// top-N slots split across behaviors proportionally to p, by largest
// remainder; remainder ties prefer the larger share, then the lower index
std::vector<std::size_t> largest_remainder_allocation(const std::vector<double>& p, std::size_t n);

// Allocates slots from the model's first-step behavior distribution (or the
// caller's, when given), fills each behavior's quota by conditional beam
// search, and reports the union scored by joint log-probability.
RankedPrediction behavior_aware_sampling(DecoderSession& session, const CodeTrie& trie,
                                         std::size_t top_n, std::size_t n_beams,
                                         const std::vector<double>* behavior_probs = nullptr);

// log-softmax helper shared by sessions and tests
std::vector<double> log_softmax(const std::vector<double>& logits);

}  // namespace mbrec::decode
