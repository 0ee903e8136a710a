#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mbrec/eval.hpp"
#include "mbrec/rng.hpp"
#include "mbrec/train.hpp"

using namespace mbrec;
using namespace mbrec::eval;

namespace {

// deterministic multi-behavior log: `users` users, 5 events each over `items`
// items and behaviors view/cart/buy
data::InteractionDataset synthetic_log(int users, int items) {
    static const char* behaviors[] = {"view", "cart", "buy"};
    std::ostringstream text;
    text << "#behaviors\tview,cart,buy\n#target\tbuy\n";
    for (int u = 0; u < users; ++u) {
        for (int t = 0; t < 5; ++t) {
            int item = (u * 5 + t * (1 + u % 4)) % items;
            const char* beh = behaviors[(u + t) % 3];
            text << "u" << u << "\titem" << item << "\t" << beh << "\t" << (t + 1) << "\n";
        }
    }
    data::IngestOptions opt;
    opt.min_count = 0;
    return data::ingest_text(text.str(), opt);
}

tok::TokenizerState cid_tokenizer(const data::InteractionDataset& ds, std::size_t base,
                                  std::size_t levels) {
    tok::TokenizerConfig cfg;
    cfg.levels = levels;
    cfg.codes_per_level = base;
    cfg.user_buckets = 32;
    cfg.seed = 9;
    return tok::fit_tokenizer(ds, {}, cfg, "cid");
}

// Ranks a known (behavior, digits) tuple first for each encoder input. With
// conditional_digits the preferred digits appear only under the stored
// behavior; otherwise every behavior branch shares them.
class OracleFactory : public eval::SessionFactory {
public:
    OracleFactory(tok::Vocabulary vocab,
                  std::map<std::vector<int>, std::pair<int, std::vector<int>>> truths,
                  bool conditional_digits = true)
        : vocab_(vocab), truths_(std::move(truths)), conditional_(conditional_digits) {}

    class Session : public decode::DecoderSession {
    public:
        Session(const tok::Vocabulary& vocab, std::pair<int, std::vector<int>> truth,
                bool conditional)
            : vocab_(vocab), truth_(std::move(truth)), conditional_(conditional) {}
        const tok::Vocabulary& vocab() const override { return vocab_; }
        std::vector<double> next_log_probs(const std::vector<int>& prefix) override {
            std::vector<double> lp(vocab_.size(), -40.0);
            if (prefix.size() == 1) {
                lp[static_cast<std::size_t>(vocab_.behavior_token(truth_.first))] = 0.0;
            } else if (!conditional_ ||
                       prefix[1] == vocab_.behavior_token(truth_.first)) {
                std::size_t pos = prefix.size() - 2;
                if (pos < truth_.second.size())
                    lp[static_cast<std::size_t>(vocab_.digit_token(pos, truth_.second[pos]))] = 0.0;
            }
            return lp;
        }

    private:
        const tok::Vocabulary& vocab_;
        std::pair<int, std::vector<int>> truth_;
        bool conditional_;
    };

    std::unique_ptr<decode::DecoderSession> make(
        const std::vector<int>& encoder_tokens) override {
        auto it = truths_.find(encoder_tokens);
        REQUIRE(it != truths_.end());
        return std::make_unique<Session>(vocab_, it->second, conditional_);
    }

private:
    tok::Vocabulary vocab_;
    std::map<std::vector<int>, std::pair<int, std::vector<int>>> truths_;
    bool conditional_;
};

// seeded noise scores: every item equally likely to land in the top ranks
class RandomFactory : public eval::SessionFactory {
public:
    explicit RandomFactory(tok::Vocabulary vocab, std::uint64_t seed)
        : vocab_(vocab), seed_(seed) {}

    class Session : public decode::DecoderSession {
    public:
        Session(const tok::Vocabulary& vocab, std::uint64_t seed) : vocab_(vocab), rng_(seed) {}
        const tok::Vocabulary& vocab() const override { return vocab_; }
        std::vector<double> next_log_probs(const std::vector<int>&) override {
            std::vector<double> lp(vocab_.size());
            for (auto& v : lp) v = rng_.normal();
            return lp;
        }

    private:
        const tok::Vocabulary& vocab_;
        Rng rng_;
    };

    std::unique_ptr<decode::DecoderSession> make(
        const std::vector<int>& encoder_tokens) override {
        std::uint64_t h = fnv1a64(encoder_tokens.data(), encoder_tokens.size() * sizeof(int));
        return std::make_unique<Session>(vocab_, derive_seed(seed_, "random-session", h));
    }

private:
    tok::Vocabulary vocab_;
    std::uint64_t seed_;
};

// truth map for the held-out event of every user
std::map<std::vector<int>, std::pair<int, std::vector<int>>> truth_map(
    const data::InteractionDataset& ds, const tok::TokenizerState& st, bool use_test,
    std::size_t max_history) {
    const tok::Vocabulary vocab = st.vocabulary();
    const std::vector<std::size_t> rows = st.align_items(ds);
    std::map<std::vector<int>, std::pair<int, std::vector<int>>> out;
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
        const data::Interaction& ev = use_test ? ds.test_event(u) : ds.valid_event(u);
        std::vector<int> enc = tok::encoder_tokens_for(
            vocab, st.codes, rows, ds.users[u].raw_id,
            use_test ? ds.history_for_test(u, max_history)
                     : ds.history_for_valid(u, max_history));
        out[enc] = {ev.behavior, st.codes.codes[rows[static_cast<std::size_t>(ev.item)]]};
    }
    return out;
}

}  // namespace

TEST_CASE("rank metrics follow their closed forms") {
    std::vector<std::size_t> ranked = {4, 9, 2, 7, 5, 0, 1, 3, 8, 6};
    CHECK(hit_rate_at_k(ranked, 4, 5) == 1.0);
    CHECK(hit_rate_at_k(ranked, 1, 5) == 0.0);
    CHECK(hit_rate_at_k(ranked, 1, 10) == 1.0);
    CHECK(hit_rate_at_k(ranked, 42, 10) == 0.0);

    CHECK(ndcg_at_k(ranked, 4, 5) == 1.0);
    CHECK(ndcg_at_k(ranked, 2, 5) == doctest::Approx(0.5).epsilon(1e-12));  // rank 3
    CHECK(ndcg_at_k(ranked, 5, 10) ==
          doctest::Approx(1.0 / std::log2(6.0)).epsilon(1e-12));  // rank 5
    CHECK(ndcg_at_k(ranked, 6, 5) == 0.0);  // rank 10, outside the cutoff
    CHECK(ndcg_at_k(ranked, 42, 10) == 0.0);

    CHECK_THROWS_AS(hit_rate_at_k(ranked, 4, 0), ConfigError);
    CHECK_THROWS_AS(ndcg_at_k(ranked, 4, 0), ConfigError);

    // identities on an arbitrary list
    for (std::size_t truth = 0; truth < 12; ++truth) {
        CHECK(hit_rate_at_k(ranked, truth, 5) <= hit_rate_at_k(ranked, truth, 10));
        CHECK(ndcg_at_k(ranked, truth, 5) <= hit_rate_at_k(ranked, truth, 5));
        CHECK(ndcg_at_k(ranked, truth, 10) <= hit_rate_at_k(ranked, truth, 10));
    }
}

TEST_CASE("task names round-trip and reject unknowns") {
    for (Task t : {Task::target, Task::behavior_specific, Task::behavior_item,
                   Task::behavior_aware})
        CHECK(task_from_name(task_name(t)) == t);
    CHECK_THROWS_AS(task_from_name("bestseller"), ConfigError);

    EvalConfig cfg;
    cfg.task = Task::behavior_aware;
    cfg.n_beams = 17;
    cfg.corpus_behavior_probs = true;
    EvalConfig back = EvalConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("an oracle ranker scores perfectly on every task") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    OracleFactory oracle(st.vocabulary(), truth_map(ds, st, true, 50));

    for (Task task : {Task::target, Task::behavior_specific, Task::behavior_item,
                      Task::behavior_aware}) {
        EvalConfig cfg;
        cfg.task = task;
        cfg.n_beams = 16;
        cfg.top_n = 10;
        MetricsReport r = evaluate_task(oracle, ds, st, cfg);
        INFO(task_name(task));
        CHECK(r.hr5 == 1.0);
        CHECK(r.hr10 == 1.0);
        CHECK(r.ndcg5 == 1.0);
        CHECK(r.ndcg10 == 1.0);
        CHECK(r.behavior_accuracy == 1.0);
        CHECK(r.users > 0);
        CHECK(!r.dataset_hash.empty());
        CHECK(!r.config_hash.empty());
    }
}

TEST_CASE("the target task keeps only users whose held-out event is the target") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    std::size_t expected = 0;
    for (std::size_t u = 0; u < ds.user_count(); ++u)
        if (ds.test_event(u).behavior == ds.target_behavior) ++expected;
    REQUIRE(expected > 0);
    REQUIRE(expected < ds.user_count());

    OracleFactory oracle(st.vocabulary(), truth_map(ds, st, true, 50));
    EvalConfig cfg;
    cfg.task = Task::target;
    cfg.n_beams = 16;
    MetricsReport r = evaluate_task(oracle, ds, st, cfg);
    CHECK(r.users == expected);

    // a log whose held-out events never carry the target is reported, not zeroed
    std::ostringstream text;
    text << "#behaviors\tview,buy\n#target\tbuy\n";
    for (int u = 0; u < 4; ++u)
        for (int t = 0; t < 4; ++t)
            text << "u" << u << "\titem" << (u + t) % 4 << "\tview\t" << (t + 1) << "\n";
    data::IngestOptions opt;
    opt.min_count = 0;
    opt.behavior_names = {"view", "buy"};
    opt.target_behavior = "buy";
    data::InteractionDataset all_view = data::ingest_text(text.str(), opt);
    tok::TokenizerState st2 = cid_tokenizer(all_view, 2, 2);
    OracleFactory oracle2(st2.vocabulary(), truth_map(all_view, st2, true, 50));
    EvalConfig cfg2;
    cfg2.task = Task::target;
    cfg2.n_beams = 4;
    cfg2.top_n = 4;
    CHECK_THROWS_AS(evaluate_task(oracle2, all_view, st2, cfg2), DataError);
}

TEST_CASE("a random ranker lands at the binomial baseline") {
    data::InteractionDataset ds = synthetic_log(200, 64);
    REQUIRE(ds.item_count() == 64);
    tok::TokenizerState st = cid_tokenizer(ds, 8, 2);
    RandomFactory noise(st.vocabulary(), 123);

    EvalConfig cfg;
    cfg.task = Task::behavior_specific;
    cfg.n_beams = 16;
    cfg.top_n = 10;
    MetricsReport r = evaluate_task(noise, ds, st, cfg);

    const double p = 10.0 / 64.0;
    const double sigma = std::sqrt(p * (1.0 - p) / 200.0);
    CHECK(std::abs(r.hr10 - p) < 3.0 * sigma);
    CHECK(r.hr5 <= r.hr10);
    CHECK(r.ndcg5 <= r.hr5);
    CHECK(r.ndcg10 <= r.hr10);

    MetricsReport again = evaluate_task(noise, ds, st, cfg);
    CHECK(again.hr10 == r.hr10);
    CHECK(again.ndcg10 == r.ndcg10);
    CHECK(again.behavior_accuracy == r.behavior_accuracy);
}

TEST_CASE("joint tasks demand behavior and item to match together") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    const tok::Vocabulary vocab = st.vocabulary();

    // wrong-behavior oracle: right item digits, behavior shifted by one
    auto truths = truth_map(ds, st, true, 50);
    for (auto& [enc, truth] : truths)
        truth.first = (truth.first + 1) % static_cast<int>(vocab.num_behaviors);
    OracleFactory wrong(vocab, std::move(truths));

    EvalConfig cfg;
    cfg.task = Task::behavior_item;
    cfg.n_beams = 16;
    // the 8 same-behavior codes outscore every cross-behavior path, so a top-5
    // cut can never contain the true (behavior, item) pair
    cfg.top_n = 5;
    MetricsReport joint = evaluate_task(wrong, ds, st, cfg);
    CHECK(joint.behavior_accuracy == 0.0);
    CHECK(joint.hr10 == 0.0);

    // the same digit preferences scored item-only would be perfect at rank 1
    cfg.task = Task::behavior_specific;
    auto truths2 = truth_map(ds, st, true, 50);
    for (auto& [enc, truth] : truths2)
        truth.first = (truth.first + 1) % static_cast<int>(vocab.num_behaviors);
    OracleFactory wrong2(vocab, std::move(truths2), false);
    MetricsReport item_only = evaluate_task(wrong2, ds, st, cfg);
    CHECK(item_only.hr10 == 1.0);
    CHECK(joint.hr10 <= item_only.hr10);
}

TEST_CASE("validation and test evaluations read different held-out events") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);

    // sanity: the two held-out events differ for at least one user
    bool differ = false;
    for (std::size_t u = 0; u < ds.user_count(); ++u)
        if (ds.valid_event(u).item != ds.test_event(u).item ||
            ds.valid_event(u).behavior != ds.test_event(u).behavior)
            differ = true;
    REQUIRE(differ);

    OracleFactory valid_oracle(st.vocabulary(), truth_map(ds, st, false, 50));
    EvalConfig cfg;
    cfg.task = Task::behavior_specific;
    cfg.n_beams = 16;
    cfg.use_test = false;
    MetricsReport on_valid = evaluate_task(valid_oracle, ds, st, cfg);
    CHECK(on_valid.hr10 == 1.0);
    CHECK(on_valid.ndcg10 == 1.0);

    OracleFactory test_oracle(st.vocabulary(), truth_map(ds, st, true, 50));
    cfg.use_test = true;
    MetricsReport on_test = evaluate_task(test_oracle, ds, st, cfg);
    CHECK(on_test.hr10 == 1.0);
}

TEST_CASE("user caps subsample deterministically") {
    data::InteractionDataset ds = synthetic_log(20, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    OracleFactory oracle(st.vocabulary(), truth_map(ds, st, true, 50));

    EvalConfig cfg;
    cfg.task = Task::behavior_specific;
    cfg.n_beams = 16;
    cfg.user_cap = 7;
    MetricsReport r = evaluate_task(oracle, ds, st, cfg);
    CHECK(r.users == 7);
    MetricsReport again = evaluate_task(oracle, ds, st, cfg);
    CHECK(again.hr10 == r.hr10);
}

TEST_CASE("corpus behavior frequencies count the training region") {
    std::ostringstream text;
    text << "#behaviors\tview,buy\n#target\tbuy\n";
    // 2 users x 5 events; training region = first 3 events of each
    text << "u1\ta\tview\t1\nu1\tb\tview\t2\nu1\tc\tbuy\t3\nu1\td\tview\t4\nu1\ta\tbuy\t5\n";
    text << "u2\tb\tview\t1\nu2\tc\tview\t2\nu2\td\tview\t3\nu2\ta\tbuy\t4\nu2\tb\tview\t5\n";
    data::IngestOptions opt;
    opt.min_count = 0;
    data::InteractionDataset ds = data::ingest_text(text.str(), opt);

    std::vector<double> freq = corpus_behavior_frequencies(ds);
    REQUIRE(freq.size() == 2);
    CHECK(freq[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(freq[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("report serialization carries every metric") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    OracleFactory oracle(st.vocabulary(), truth_map(ds, st, true, 50));
    EvalConfig cfg;
    cfg.task = Task::behavior_item;
    cfg.n_beams = 16;
    MetricsReport r = evaluate_task(oracle, ds, st, cfg);

    nlohmann::json j = r.to_json();
    CHECK(j.at("task") == "behavior-item");
    CHECK(j.at("users") == r.users);
    CHECK(j.at("hr10") == 1.0);
    CHECK(j.at("dataset_hash") == ds.content_hash_hex());

    std::string csv = r.to_csv();
    CHECK(csv.rfind("task,users,hr5,hr10,ndcg5,ndcg10,behavior_accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("misconfigured evaluations are rejected") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);
    OracleFactory oracle(st.vocabulary(), truth_map(ds, st, true, 50));

    EvalConfig cfg;
    cfg.n_beams = 4;
    cfg.top_n = 10;
    CHECK_THROWS_AS(evaluate_task(oracle, ds, st, cfg), ConfigError);
    cfg.top_n = 0;
    CHECK_THROWS_AS(evaluate_task(oracle, ds, st, cfg), ConfigError);
}

TEST_CASE("beam sweeps on a trained model improve with width") {
    data::InteractionDataset ds = synthetic_log(12, 8);
    tok::TokenizerState st = cid_tokenizer(ds, 4, 2);

    model::ModelConfig mc;
    mc.d_model = 16;
    mc.d_inner = 24;
    mc.heads = 2;
    mc.head_dim = 8;
    mc.encoder_layers = 1;
    mc.decoder_layers = 1;
    mc.experts = 4;
    mc.inject_layers = 1;
    mc.d_behavior = 8;
    mc.max_encoder_len = 40;
    mc.seed = 19;
    mc.set_vocabulary(st.vocabulary());
    model::Model m(mc);

    model::TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 4;
    tc.learning_rate = 3e-3;
    tc.weight_decay = 0.0;
    tc.valid_user_cap = 4;
    tc.valid_beams = 4;
    tc.seed = 8;
    model::train(m, ds, st, tc);

    EvalConfig base;
    base.top_n = 10;
    std::string csv = beam_count_sweep(m, ds, st, base, {1, 4, 16});
    CHECK(csv.rfind("beams,task,users,hr5,hr10,ndcg5,ndcg10,behavior_accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    // top-1 joint hit rate is monotone in the beam count (exhaustive at 16:
    // 2 x 4 x 4 = 32 tuples, but the 16 surviving digit-1 prefixes cover the
    // trie, so the best full completion is found)
    EvalConfig one = base;
    one.task = Task::behavior_item;
    one.top_n = 1;
    one.n_beams = 1;
    MetricsReport narrow = evaluate_task(m, ds, st, one);
    one.n_beams = 16;
    MetricsReport wide = evaluate_task(m, ds, st, one);
    CHECK(narrow.hr10 <= wide.hr10 + 1e-12);
}
