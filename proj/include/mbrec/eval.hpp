#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/dataset.hpp"
#include "mbrec/decode.hpp"
#include "mbrec/model.hpp"
#include "mbrec/tokenizer.hpp"

namespace mbrec::eval {

// rank-based metrics over a ranked item list with a single relevant item
double hit_rate_at_k(const std::vector<std::size_t>& ranked_items, std::size_t truth,
                     std::size_t k);
double ndcg_at_k(const std::vector<std::size_t>& ranked_items, std::size_t truth, std::size_t k);

enum class Task { target, behavior_specific, behavior_item, behavior_aware };

std::string task_name(Task task);
Task task_from_name(const std::string& name);

struct EvalConfig {
    Task task = Task::behavior_item;
    std::size_t n_beams = 50;
    std::size_t top_n = 10;
    std::size_t max_history = 50;
    bool use_test = true;                // false evaluates the validation event
    std::size_t user_cap = 0;            // 0 = every eligible user
    std::uint64_t seed = 1;              // subsampling seed
    bool corpus_behavior_probs = false;  // behavior-aware allocation from training frequencies

    nlohmann::json to_json() const;
    static EvalConfig from_json(const nlohmann::json& j);
};

struct MetricsReport {
    std::string task;
    std::size_t users = 0;
    double hr5 = 0.0;
    double hr10 = 0.0;
    double ndcg5 = 0.0;
    double ndcg10 = 0.0;
    double behavior_accuracy = 0.0;  // top-1 predicted behavior matches the ground truth
    std::string dataset_hash;
    std::string config_hash;

    nlohmann::json to_json() const;
    std::string to_csv() const;  // header plus one row
};

// Produces one decoding session per evaluated user; lets tests swap the
// transformer for stub rankers.
class SessionFactory {
public:
    virtual ~SessionFactory() = default;
    virtual std::unique_ptr<decode::DecoderSession> make(
        const std::vector<int>& encoder_tokens) = 0;
};

class ModelSessionFactory : public SessionFactory {
public:
    explicit ModelSessionFactory(const model::Model& m) : model_(m) {}
    std::unique_ptr<decode::DecoderSession> make(
        const std::vector<int>& encoder_tokens) override {
        return std::make_unique<decode::ModelSession>(model_, encoder_tokens);
    }

private:
    const model::Model& model_;
};

// behavior frequencies over the training region, for behavior-aware allocation
std::vector<double> corpus_behavior_frequencies(const data::InteractionDataset& ds);

// Leave-one-out evaluation of one task. The target task keeps only users whose
// held-out event carries the dataset's target behavior; joint tasks require the
// predicted behavior and item to match together.
MetricsReport evaluate_task(SessionFactory& sessions, const data::InteractionDataset& ds,
                            const tok::TokenizerState& tokenizer, const EvalConfig& cfg);
MetricsReport evaluate_task(const model::Model& m, const data::InteractionDataset& ds,
                            const tok::TokenizerState& tokenizer, const EvalConfig& cfg);

// behavior-item metrics at each beam count, as CSV rows for plotting
std::string beam_count_sweep(const model::Model& m, const data::InteractionDataset& ds,
                             const tok::TokenizerState& tokenizer, const EvalConfig& base,
                             const std::vector<std::size_t>& beam_counts);

}  // namespace mbrec::eval
