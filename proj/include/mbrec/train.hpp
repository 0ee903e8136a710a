#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbrec/dataset.hpp"
#include "mbrec/model.hpp"
#include "mbrec/tokenizer.hpp"

namespace mbrec::model {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    std::size_t warmup_steps = 0;     // linear warmup to the base rate; 0 disables
    bool sliding_window = false;      // one example per training position, not just the last
    std::size_t max_history = 50;     // most recent events fed to the encoder
    std::size_t eval_every = 0;       // steps between validations; 0 = end of each epoch
    std::size_t valid_beams = 10;
    std::size_t valid_user_cap = 200;  // validation subsample size; 0 = every user
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    double valid_ndcg10 = std::numeric_limits<double>::quiet_NaN();  // NaN between evals
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double best_valid_ndcg10 = 0.0;
    std::size_t best_step = 0;
    std::size_t steps_run = 0;
    double final_epoch_loss = 0.0;
};

// (history -> next training interaction) pairs per user; with sliding_window,
// every training position past the first becomes a target.
std::vector<tok::ModelExample> build_training_examples(const data::InteractionDataset& ds,
                                                       const tok::TokenizerState& tokenizer,
                                                       std::size_t max_history,
                                                       bool sliding_window);

// Mean NDCG@10 of behavior-conditioned beam search against each user's
// validation event; user_cap > 0 evaluates a seeded subsample.
double validation_ndcg10(const Model& m, const data::InteractionDataset& ds,
                         const tok::TokenizerState& tokenizer, std::size_t max_history,
                         std::size_t n_beams, std::size_t user_cap, std::uint64_t seed);

// Minimizes next-token cross entropy with AdamW, validating periodically and
// leaving the best-validation parameters in the model. Aborts with NumericError
// if the loss sits above 10x its initial value for three validations running.
TrainResult train(Model& m, const data::InteractionDataset& ds,
                  const tok::TokenizerState& tokenizer, const TrainConfig& cfg);

// "step,loss,valid_ndcg10" rows; the last column is empty between validations
std::string train_log_csv(const std::vector<TrainLogRow>& log);

}  // namespace mbrec::model
