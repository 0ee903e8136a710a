#include "mbrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mbrec/decode.hpp"
#include "mbrec/ops.hpp"
#include "mbrec/optim.hpp"
#include "mbrec/rng.hpp"

namespace mbrec::model {

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("training needs at least one epoch");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (max_history == 0) throw ConfigError("max history must be positive");
    if (valid_beams == 0) throw ConfigError("validation needs at least one beam");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"warmup_steps", warmup_steps},
            {"sliding_window", sliding_window},
            {"max_history", max_history},
            {"eval_every", eval_every},
            {"valid_beams", valid_beams},
            {"valid_user_cap", valid_user_cap},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    auto grab = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    grab("epochs", cfg.epochs);
    grab("batch_size", cfg.batch_size);
    grab("learning_rate", cfg.learning_rate);
    grab("weight_decay", cfg.weight_decay);
    grab("warmup_steps", cfg.warmup_steps);
    grab("sliding_window", cfg.sliding_window);
    grab("max_history", cfg.max_history);
    grab("eval_every", cfg.eval_every);
    grab("valid_beams", cfg.valid_beams);
    grab("valid_user_cap", cfg.valid_user_cap);
    grab("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

namespace {

void check_geometry(const Model& m, const tok::TokenizerState& tokenizer) {
    const tok::Vocabulary want = tokenizer.vocabulary();
    const tok::Vocabulary& have = m.vocab();
    if (want.user_buckets != have.user_buckets || want.num_behaviors != have.num_behaviors ||
        want.digit_positions != have.digit_positions || want.digit_base != have.digit_base) {
        throw ConfigError("model vocabulary does not match the fitted tokenizer");
    }
}

}  // namespace

std::vector<tok::ModelExample> build_training_examples(const data::InteractionDataset& ds,
                                                       const tok::TokenizerState& tokenizer,
                                                       std::size_t max_history,
                                                       bool sliding_window) {
    const tok::Vocabulary vocab = tokenizer.vocabulary();
    const std::vector<std::size_t> rows = tokenizer.align_items(ds);
    std::vector<tok::ModelExample> out;
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        const std::vector<data::Interaction> events = ds.train_events(u);
        if (events.size() < 2) continue;  // need one history event and one target
        const std::size_t first_target = sliding_window ? 1 : events.size() - 1;
        for (std::size_t t = first_target; t < events.size(); ++t) {
            std::vector<data::Interaction> history(events.begin(),
                                                   events.begin() + static_cast<std::ptrdiff_t>(t));
            out.push_back(tok::build_model_sequence(vocab, tokenizer.codes, rows,
                                                    ds.users[u].raw_id,
                                                    data::truncate_history(history, max_history),
                                                    events[t]));
        }
    }
    if (out.empty()) throw DataError("no user has enough training events for an example");
    return out;
}

double validation_ndcg10(const Model& m, const data::InteractionDataset& ds,
                         const tok::TokenizerState& tokenizer, std::size_t max_history,
                         std::size_t n_beams, std::size_t user_cap, std::uint64_t seed) {
    check_geometry(m, tokenizer);
    const tok::Vocabulary vocab = tokenizer.vocabulary();
    const std::vector<std::size_t> rows = tokenizer.align_items(ds);
    const decode::CodeTrie trie(tokenizer.codes);
    const std::size_t top_n = std::min<std::size_t>(10, n_beams);

    std::vector<std::size_t> users(ds.user_count());
    std::iota(users.begin(), users.end(), 0);
    if (user_cap > 0 && user_cap < users.size()) {
        Rng rng(derive_seed(seed, "valid-users", 0));
        rng.shuffle(users);
        users.resize(user_cap);
        std::sort(users.begin(), users.end());
    }
    if (users.empty()) throw DataError("validation over an empty user set");

    double total = 0.0;
    for (std::size_t u : users) {
        const data::Interaction& target = ds.valid_event(u);
        std::vector<int> enc = tok::encoder_tokens_for(
            vocab, tokenizer.codes, rows, ds.users[u].raw_id,
            ds.history_for_valid(u, max_history));
        decode::ModelSession session(m, enc);
        decode::RankedPrediction pred =
            decode::predict_behavior_specific(session, trie, target.behavior, n_beams, top_n);
        const std::size_t want = rows[static_cast<std::size_t>(target.item)];
        for (std::size_t r = 0; r < pred.entries.size(); ++r) {
            if (pred.entries[r].item == want) {
                total += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                break;
            }
        }
    }
    return total / static_cast<double>(users.size());
}

TrainResult train(Model& m, const data::InteractionDataset& ds,
                  const tok::TokenizerState& tokenizer, const TrainConfig& cfg) {
    cfg.validate();
    check_geometry(m, tokenizer);

    std::vector<tok::ModelExample> examples =
        build_training_examples(ds, tokenizer, cfg.max_history, cfg.sliding_window);

    nn::AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(m.params(), opt_cfg);

    Rng dropout_rng(derive_seed(cfg.seed, "train-dropout", 0));

    TrainResult result;
    std::vector<std::vector<scalar>> best_snapshot;
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    double window_loss = 0.0;  // since the previous validation
    std::size_t window_batches = 0;
    std::size_t divergence_strikes = 0;
    std::size_t step = 0;
    result.best_valid_ndcg10 = -1.0;

    auto run_validation = [&]() {
        double ndcg = validation_ndcg10(m, ds, tokenizer, cfg.max_history, cfg.valid_beams,
                                        cfg.valid_user_cap, cfg.seed);
        result.log.back().valid_ndcg10 = ndcg;
        if (ndcg > result.best_valid_ndcg10) {
            result.best_valid_ndcg10 = ndcg;
            result.best_step = step;
            best_snapshot = m.params().snapshot_values();
        }
        const double recent = window_loss / static_cast<double>(std::max<std::size_t>(1, window_batches));
        if (window_batches > 0 && recent > 10.0 * initial_loss) {
            divergence_strikes += 1;
            if (divergence_strikes >= 3) {
                throw NumericError("training diverged: loss " + std::to_string(recent) +
                                   " at step " + std::to_string(step) + " is more than 10x the initial " +
                                   std::to_string(initial_loss));
            }
        } else {
            divergence_strikes = 0;
        }
        window_loss = 0.0;
        window_batches = 0;
    };

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "train-shuffle", epoch));
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            m.params().zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                const tok::ModelExample& ex = examples[order[start + i]];
                nn::GradientTape tape;
                nn::Tensor logits = m.forward(&tape, ex.encoder_tokens, ex.decoder_input,
                                              &dropout_rng);
                nn::CrossEntropyResult ce =
                    nn::softmax_cross_entropy(&tape, logits, ex.decoder_target);
                if (ce.all_ignored) throw DataError("training example has no scored tokens");
                nn::Tensor scaled = nn::scale(&tape, ce.loss, 1.0 / static_cast<double>(count));
                batch_loss += scaled.at(0);
                tape.backward(scaled);
            }
            step += 1;
            const double lr =
                cfg.warmup_steps > 0
                    ? cfg.learning_rate * std::min(1.0, static_cast<double>(step) /
                                                            static_cast<double>(cfg.warmup_steps))
                    : cfg.learning_rate;
            opt.step_with_lr(lr);

            if (std::isnan(initial_loss)) initial_loss = batch_loss;
            epoch_loss += batch_loss;
            epoch_batches += 1;
            window_loss += batch_loss;
            window_batches += 1;
            result.log.push_back({step, batch_loss,
                                  std::numeric_limits<double>::quiet_NaN()});
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) run_validation();
        }
        result.final_epoch_loss = epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_batches));
        if (cfg.eval_every == 0) run_validation();
    }
    if (cfg.eval_every > 0 && std::isnan(result.log.back().valid_ndcg10)) run_validation();

    result.steps_run = step;
    if (!best_snapshot.empty()) m.params().restore_values(best_snapshot);
    return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
    std::ostringstream out;
    out << "step,loss,valid_ndcg10\n";
    out.precision(17);
    for (const auto& row : log) {
        out << row.step << ',' << row.loss << ',';
        if (!std::isnan(row.valid_ndcg10)) out << row.valid_ndcg10;
        out << '\n';
    }
    return out.str();
}

}  // namespace mbrec::model
