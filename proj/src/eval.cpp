#include "mbrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mbrec/rng.hpp"

namespace mbrec::eval {

double hit_rate_at_k(const std::vector<std::size_t>& ranked_items, std::size_t truth,
                     std::size_t k) {
    if (k == 0) throw ConfigError("metric cutoff must be at least 1");
    const std::size_t limit = std::min(k, ranked_items.size());
    for (std::size_t r = 0; r < limit; ++r)
        if (ranked_items[r] == truth) return 1.0;
    return 0.0;
}

double ndcg_at_k(const std::vector<std::size_t>& ranked_items, std::size_t truth, std::size_t k) {
    if (k == 0) throw ConfigError("metric cutoff must be at least 1");
    const std::size_t limit = std::min(k, ranked_items.size());
    for (std::size_t r = 0; r < limit; ++r)
        if (ranked_items[r] == truth) return 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return 0.0;
}

std::string task_name(Task task) {
    switch (task) {
        case Task::target: return "target";
        case Task::behavior_specific: return "behavior-specific";
        case Task::behavior_item: return "behavior-item";
        case Task::behavior_aware: return "behavior-aware";
    }
    throw ConfigError("unknown task value");
}

Task task_from_name(const std::string& name) {
    if (name == "target") return Task::target;
    if (name == "behavior-specific") return Task::behavior_specific;
    if (name == "behavior-item") return Task::behavior_item;
    if (name == "behavior-aware") return Task::behavior_aware;
    throw ConfigError("unknown task '" + name +
                      "'; expected target, behavior-specific, behavior-item, or behavior-aware");
}

nlohmann::json EvalConfig::to_json() const {
    return {{"task", task_name(task)},
            {"n_beams", n_beams},
            {"top_n", top_n},
            {"max_history", max_history},
            {"use_test", use_test},
            {"user_cap", user_cap},
            {"seed", seed},
            {"corpus_behavior_probs", corpus_behavior_probs}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
    EvalConfig cfg;
    if (j.contains("task")) cfg.task = task_from_name(j.at("task").get<std::string>());
    auto grab = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    grab("n_beams", cfg.n_beams);
    grab("top_n", cfg.top_n);
    grab("max_history", cfg.max_history);
    grab("use_test", cfg.use_test);
    grab("user_cap", cfg.user_cap);
    grab("seed", cfg.seed);
    grab("corpus_behavior_probs", cfg.corpus_behavior_probs);
    return cfg;
}

nlohmann::json MetricsReport::to_json() const {
    return {{"task", task},
            {"users", users},
            {"hr5", hr5},
            {"hr10", hr10},
            {"ndcg5", ndcg5},
            {"ndcg10", ndcg10},
            {"behavior_accuracy", behavior_accuracy},
            {"dataset_hash", dataset_hash},
            {"config_hash", config_hash}};
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "task,users,hr5,hr10,ndcg5,ndcg10,behavior_accuracy\n";
    out << task << ',' << users << ',' << hr5 << ',' << hr10 << ',' << ndcg5 << ',' << ndcg10
        << ',' << behavior_accuracy << '\n';
    return out.str();
}

std::vector<double> corpus_behavior_frequencies(const data::InteractionDataset& ds) {
    std::vector<double> counts(ds.behavior_count(), 0.0);
    for (std::size_t u = 0; u < ds.user_count(); ++u)
        for (const auto& ev : ds.train_events(u))
            counts[static_cast<std::size_t>(ev.behavior)] += 1.0;
    double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (total <= 0.0) throw DataError("training region holds no events");
    for (auto& c : counts) c /= total;
    return counts;
}

MetricsReport evaluate_task(SessionFactory& sessions, const data::InteractionDataset& ds,
                            const tok::TokenizerState& tokenizer, const EvalConfig& cfg) {
    if (cfg.top_n == 0) throw ConfigError("evaluation needs at least one ranked entry");
    if (cfg.n_beams < cfg.top_n) {
        throw ConfigError("evaluation needs n_beams >= top_n, got " +
                          std::to_string(cfg.n_beams) + " < " + std::to_string(cfg.top_n));
    }
    const tok::Vocabulary vocab = tokenizer.vocabulary();
    const std::vector<std::size_t> rows = tokenizer.align_items(ds);
    const decode::CodeTrie trie(tokenizer.codes);

    std::vector<std::size_t> users(ds.user_count());
    std::iota(users.begin(), users.end(), 0);
    if (cfg.task == Task::target) {
        std::erase_if(users, [&](std::size_t u) {
            const auto& ev = cfg.use_test ? ds.test_event(u) : ds.valid_event(u);
            return ev.behavior != ds.target_behavior;
        });
        if (users.empty()) {
            throw DataError("no user's held-out event carries the target behavior '" +
                            ds.behavior_names[static_cast<std::size_t>(ds.target_behavior)] + "'");
        }
    }
    if (cfg.user_cap > 0 && cfg.user_cap < users.size()) {
        Rng rng(derive_seed(cfg.seed, "eval-users", 0));
        rng.shuffle(users);
        users.resize(cfg.user_cap);
        std::sort(users.begin(), users.end());
    }
    if (users.empty()) throw DataError("evaluation over an empty user set");

    std::vector<double> corpus;
    if (cfg.task == Task::behavior_aware && cfg.corpus_behavior_probs)
        corpus = corpus_behavior_frequencies(ds);

    MetricsReport report;
    report.task = task_name(cfg.task);
    report.users = users.size();
    report.dataset_hash = ds.content_hash_hex();
    {
        const std::string dump = cfg.to_json().dump();
        std::ostringstream hex;
        hex << std::hex << fnv1a64(dump);
        report.config_hash = hex.str();
    }

    const bool joint = cfg.task == Task::behavior_item || cfg.task == Task::behavior_aware;
    for (std::size_t u : users) {
        const data::Interaction& truth = cfg.use_test ? ds.test_event(u) : ds.valid_event(u);
        const std::size_t want = rows[static_cast<std::size_t>(truth.item)];
        std::vector<int> enc = tok::encoder_tokens_for(
            vocab, tokenizer.codes, rows, ds.users[u].raw_id,
            cfg.use_test ? ds.history_for_test(u, cfg.max_history)
                         : ds.history_for_valid(u, cfg.max_history));
        std::unique_ptr<decode::DecoderSession> session = sessions.make(enc);

        decode::RankedPrediction pred;
        switch (cfg.task) {
            case Task::target:
                pred = decode::predict_target_behavior(*session, trie, ds.target_behavior,
                                                       cfg.n_beams, cfg.top_n);
                break;
            case Task::behavior_specific:
                pred = decode::predict_behavior_specific(*session, trie, truth.behavior,
                                                         cfg.n_beams, cfg.top_n);
                break;
            case Task::behavior_item:
                pred = decode::predict_behavior_item(*session, trie, cfg.n_beams, cfg.top_n);
                break;
            case Task::behavior_aware:
                pred = decode::behavior_aware_sampling(*session, trie, cfg.top_n, cfg.n_beams,
                                                       corpus.empty() ? nullptr : &corpus);
                break;
        }

        // joint tasks count a rank only when behavior and item match together
        std::size_t rank = std::numeric_limits<std::size_t>::max();
        for (std::size_t r = 0; r < pred.entries.size(); ++r) {
            if (pred.entries[r].item != want) continue;
            if (joint && pred.entries[r].behavior != truth.behavior) continue;
            rank = r;
            break;
        }
        if (rank < 5) report.hr5 += 1.0;
        if (rank < 10) report.hr10 += 1.0;
        if (rank < 5) report.ndcg5 += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
        if (rank < 10) report.ndcg10 += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
        if (!pred.entries.empty() && pred.entries[0].behavior == truth.behavior)
            report.behavior_accuracy += 1.0;
    }
    const double n = static_cast<double>(users.size());
    report.hr5 /= n;
    report.hr10 /= n;
    report.ndcg5 /= n;
    report.ndcg10 /= n;
    report.behavior_accuracy /= n;
    return report;
}

MetricsReport evaluate_task(const model::Model& m, const data::InteractionDataset& ds,
                            const tok::TokenizerState& tokenizer, const EvalConfig& cfg) {
    ModelSessionFactory factory(m);
    return evaluate_task(factory, ds, tokenizer, cfg);
}

std::string beam_count_sweep(const model::Model& m, const data::InteractionDataset& ds,
                             const tok::TokenizerState& tokenizer, const EvalConfig& base,
                             const std::vector<std::size_t>& beam_counts) {
    if (beam_counts.empty()) throw ConfigError("beam sweep needs at least one beam count");
    std::ostringstream out;
    out.precision(17);
    out << "beams,task,users,hr5,hr10,ndcg5,ndcg10,behavior_accuracy\n";
    for (std::size_t beams : beam_counts) {
        EvalConfig cfg = base;
        cfg.task = Task::behavior_item;
        cfg.n_beams = beams;
        cfg.top_n = std::min(base.top_n, beams);
        MetricsReport r = evaluate_task(m, ds, tokenizer, cfg);
        out << beams << ',' << r.task << ',' << r.users << ',' << r.hr5 << ',' << r.hr10 << ','
            << r.ndcg5 << ',' << r.ndcg10 << ',' << r.behavior_accuracy << '\n';
    }
    return out.str();
}

}  // namespace mbrec::eval
