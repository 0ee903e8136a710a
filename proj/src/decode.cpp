#include "mbrec/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbrec/ops.hpp"

namespace mbrec::decode {

using nn::Tensor;

CodeTrie::CodeTrie(const tok::CodeAssignment& codes) {
    codes.validate();
    if (codes.codes.empty()) throw DataError("code trie built from an empty assignment");
    if (!codes.is_injective()) throw DataError("code trie needs one distinct code per item");
    levels_ = codes.levels;
    items_ = codes.codes.size();
    for (std::size_t i = 0; i < codes.codes.size(); ++i) {
        const auto& code = codes.codes[i];
        for (std::size_t l = 0; l < levels_; ++l) {
            std::vector<int> prefix(code.begin(), code.begin() + static_cast<std::ptrdiff_t>(l));
            auto& kids = children_[prefix];
            if (std::find(kids.begin(), kids.end(), code[l]) == kids.end()) {
                kids.push_back(code[l]);
            }
        }
        leaf_items_[code] = i;
    }
    for (auto& [prefix, kids] : children_) std::sort(kids.begin(), kids.end());
}

const std::vector<int>& CodeTrie::children(const std::vector<int>& prefix) const {
    auto it = children_.find(prefix);
    if (it == children_.end()) {
        throw ConfigError("code trie has no node for the given prefix");
    }
    return it->second;
}

std::optional<std::size_t> CodeTrie::item_of(const std::vector<int>& code) const {
    auto it = leaf_items_.find(code);
    if (it == leaf_items_.end()) return std::nullopt;
    return it->second;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

namespace {

using Vec = std::vector<double>;

// y = x @ w, accumulated in the same order as the tensor op
Vec matvec(const Vec& x, const Tensor& w) {
    const std::size_t k_dim = w.rows(), out_dim = w.cols();
    Vec y(out_dim, 0.0);
    const scalar* wv = w.values();
    for (std::size_t k = 0; k < k_dim; ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        const scalar* wrow = wv + k * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) y[j] += xk * wrow[j];
    }
    return y;
}

Vec add_vec(Vec a, const Tensor& bias) {
    const scalar* bv = bias.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += bv[i];
    return a;
}

Vec layer_norm_row(const Vec& x, const Tensor& gain, const Tensor& bias) {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) {
        double diff = v - mean;
        var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    Vec out(d);
    const scalar* g = gain.values();
    const scalar* b = bias.values();
    for (std::size_t j = 0; j < d; ++j) out[j] = g[j] * ((x[j] - mean) * inv) + b[j];
    return out;
}

}  // namespace

ModelSession::ModelSession(const model::Model& m, std::vector<int> encoder_tokens)
    : model_(m), encoder_tokens_(std::move(encoder_tokens)) {
    Tensor enc_out = model_.encode(encoder_tokens_);

    for (std::size_t j = 0; j < encoder_tokens_.size(); ++j) {
        if (encoder_tokens_[j] != tok::Vocabulary::kPad) live_keys_.push_back(j);
    }
    if (live_keys_.empty()) throw DataError("encoder input holds only padding");

    const auto& cfg = model_.config();
    const auto& params = model_.params();
    cross_k_.reserve(cfg.decoder_layers);
    cross_v_.reserve(cfg.decoder_layers);
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
        std::string base = "dec" + std::to_string(l) + ".cross";
        Tensor k = nn::add_bias(nullptr, nn::matmul(nullptr, enc_out, params.find(base + ".wk")),
                                params.find(base + ".bk"));
        Tensor v = nn::add_bias(nullptr, nn::matmul(nullptr, enc_out, params.find(base + ".wv")),
                                params.find(base + ".bv"));
        cross_k_.push_back(k.value_vector());
        cross_v_.push_back(v.value_vector());
    }
}

const ModelSession::NodeState& ModelSession::ensure(const std::vector<int>& prefix) {
    if (prefix.empty()) throw ShapeError("decoder prefix is empty");
    auto found = nodes_.find(prefix);
    if (found != nodes_.end()) return found->second;

    const auto& cfg = model_.config();
    if (prefix.size() > cfg.max_decoder_len) {
        throw ShapeError("decoder prefix length " + std::to_string(prefix.size()) +
                         " exceeds limit " + std::to_string(cfg.max_decoder_len));
    }
    const auto& params = model_.params();
    const auto& vocab = model_.vocab();
    const std::size_t a = cfg.heads * cfg.head_dim;
    const std::size_t dh = cfg.head_dim;

    NodeState node;
    if (prefix.size() == 1) {
        node.self_k.assign(cfg.decoder_layers, {});
        node.self_v.assign(cfg.decoder_layers, {});
    } else {
        std::vector<int> parent(prefix.begin(), prefix.end() - 1);
        node = ensure(parent);  // copies the parent's cached keys/values
    }

    const int token = prefix.back();
    const std::size_t pos = prefix.size() - 1;
    const int beh_row = model::behavior_context(vocab, prefix).back();

    // token + position embedding
    Vec x(cfg.d_model);
    {
        const Tensor& te = params.find("tok_emb");
        const Tensor& pe = params.find("dec_pos");
        const scalar* tv = te.values() + static_cast<std::size_t>(token) * cfg.d_model;
        const scalar* pv = pe.values() + pos * cfg.d_model;
        for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] = tv[j] + pv[j];
    }

    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
        std::string base = "dec" + std::to_string(l);
        bool injected = l < cfg.inject_layers;

        // causal self attention over the cached positions plus this one
        Vec h1 = layer_norm_row(x, params.find(base + ".ln1.g"), params.find(base + ".ln1.b"));
        Vec q = add_vec(matvec(h1, params.find(base + ".self.wq")), params.find(base + ".self.bq"));
        Vec k = add_vec(matvec(h1, params.find(base + ".self.wk")), params.find(base + ".self.bk"));
        Vec v = add_vec(matvec(h1, params.find(base + ".self.wv")), params.find(base + ".self.bv"));
        node.self_k[l].insert(node.self_k[l].end(), k.begin(), k.end());
        node.self_v[l].insert(node.self_v[l].end(), v.begin(), v.end());
        const std::size_t t_len = pos + 1;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Vec ctx(a, 0.0);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            Vec scores(t_len);
            for (std::size_t t = 0; t < t_len; ++t) {
                const double* kt = node.self_k[l].data() + t * a + h * dh;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q[h * dh + c] * kt[c];
                scores[t] = s * inv_sqrt;
            }
            double mx = *std::max_element(scores.begin(), scores.end());
            double denom = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                denom += s;
            }
            for (std::size_t t = 0; t < t_len; ++t) {
                const double w = scores[t] / denom;
                if (w == 0.0) continue;
                const double* vt = node.self_v[l].data() + t * a + h * dh;
                for (std::size_t c = 0; c < dh; ++c) ctx[h * dh + c] += w * vt[c];
            }
        }
        Vec att = add_vec(matvec(ctx, params.find(base + ".self.wo")), params.find(base + ".self.bo"));
        for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] += att[j];

        // cross attention over the precomputed encoder keys/values
        Vec h2 = layer_norm_row(x, params.find(base + ".ln2.g"), params.find(base + ".ln2.b"));
        Vec q2 = add_vec(matvec(h2, params.find(base + ".cross.wq")),
                         params.find(base + ".cross.bq"));
        Vec ctx2(a, 0.0);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            Vec scores(live_keys_.size());
            for (std::size_t t = 0; t < live_keys_.size(); ++t) {
                const double* kt = cross_k_[l].data() + live_keys_[t] * a + h * dh;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q2[h * dh + c] * kt[c];
                scores[t] = s * inv_sqrt;
            }
            double mx = *std::max_element(scores.begin(), scores.end());
            double denom = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                denom += s;
            }
            for (std::size_t t = 0; t < live_keys_.size(); ++t) {
                const double w = scores[t] / denom;
                if (w == 0.0) continue;
                const double* vt = cross_v_[l].data() + live_keys_[t] * a + h * dh;
                for (std::size_t c = 0; c < dh; ++c) ctx2[h * dh + c] += w * vt[c];
            }
        }
        Vec att2 = add_vec(matvec(ctx2, params.find(base + ".cross.wo")),
                           params.find(base + ".cross.bo"));
        for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] += att2[j];

        // position-routed expert FFN
        Vec h3 = layer_norm_row(x, params.find(base + ".ln3.g"), params.find(base + ".ln3.b"));
        std::size_t expert = model::position_route(vocab, token, cfg.experts);
        std::string ep = base + ".exp" + std::to_string(expert);
        Vec in = h3;
        if (injected) {
            const Tensor& beh = params.find("beh_emb");
            const scalar* bv = beh.values() + static_cast<std::size_t>(beh_row) * cfg.d_behavior;
            in.insert(in.end(), bv, bv + cfg.d_behavior);
        }
        Vec hidden = add_vec(matvec(in, params.find(ep + ".w1")), params.find(ep + ".b1"));
        for (auto& hv : hidden) hv = hv > 0.0 ? hv : 0.0;
        Vec f = add_vec(matvec(hidden, params.find(ep + ".w2")), params.find(ep + ".b2"));
        for (std::size_t j = 0; j < cfg.d_model; ++j) x[j] += f[j];
    }

    node.last_x = std::move(x);
    auto [it, inserted] = nodes_.emplace(prefix, std::move(node));
    return it->second;
}

std::vector<double> ModelSession::next_log_probs(const std::vector<int>& prefix) {
    const NodeState& node = ensure(prefix);
    const auto& params = model_.params();
    Vec out = layer_norm_row(node.last_x, params.find("dec_final.g"), params.find("dec_final.b"));
    Vec logits = matvec(out, params.find("wout"));
    return log_softmax(logits);
}

namespace {

struct Beam {
    std::vector<int> tokens;  // full decoder prefix including [BOS]
    std::vector<int> digits;  // emitted item digits
    int behavior = -1;
    double score = 0.0;
};

}  // namespace

RankedPrediction beam_search(DecoderSession& session, const CodeTrie& trie,
                             const std::vector<int>& prompt, std::size_t n_beams,
                             std::size_t top_n) {
    const auto& vocab = session.vocab();
    if (n_beams < top_n) {
        throw ConfigError("beam search needs at least " + std::to_string(top_n) + " beams, got " +
                          std::to_string(n_beams));
    }
    if (trie.levels() != vocab.digit_positions) {
        throw ConfigError("code trie depth does not match the vocabulary");
    }
    if (prompt.empty() || prompt[0] != tok::Vocabulary::kBos || prompt.size() > 2) {
        throw ConfigError("prompt must be [BOS] or [BOS, behavior]");
    }

    Beam root;
    root.tokens = prompt;
    if (prompt.size() == 2) {
        if (vocab.role(prompt[1]) != tok::TokenRole::behavior) {
            throw ConfigError("prompt conditioning token is not a behavior");
        }
        root.behavior = vocab.behavior_of(prompt[1]);
    }

    std::vector<Beam> beams = {root};
    const bool need_behavior = prompt.size() == 1;
    const std::size_t steps = (need_behavior ? 1 : 0) + trie.levels();

    for (std::size_t step = 0; step < steps; ++step) {
        struct Candidate {
            double score;
            int token;
            std::size_t parent;
        };
        std::vector<Candidate> cands;
        const bool behavior_step = need_behavior && step == 0;
        for (std::size_t b = 0; b < beams.size(); ++b) {
            std::vector<double> lp = session.next_log_probs(beams[b].tokens);
            if (behavior_step) {
                for (std::size_t i = 0; i < vocab.num_behaviors; ++i) {
                    int t = vocab.behavior_token(static_cast<int>(i));
                    cands.push_back({beams[b].score + lp[static_cast<std::size_t>(t)], t, b});
                }
            } else {
                std::size_t depth = beams[b].digits.size();
                for (int digit : trie.children(beams[b].digits)) {
                    int t = vocab.digit_token(depth, digit);
                    cands.push_back({beams[b].score + lp[static_cast<std::size_t>(t)], t, b});
                }
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
            if (x.score != y.score) return x.score > y.score;
            if (x.token != y.token) return x.token < y.token;
            return x.parent < y.parent;
        });
        if (cands.size() > n_beams) cands.resize(n_beams);

        std::vector<Beam> next;
        next.reserve(cands.size());
        for (const auto& c : cands) {
            Beam nb = beams[c.parent];
            nb.tokens.push_back(c.token);
            nb.score = c.score;
            if (behavior_step) {
                nb.behavior = vocab.behavior_of(c.token);
            } else {
                nb.digits.push_back(vocab.digit_of(c.token).second);
            }
            next.push_back(std::move(nb));
        }
        beams = std::move(next);
        if (beams.empty()) throw DataError("beam search ran out of candidates");
    }

    RankedPrediction out;
    for (const auto& b : beams) {
        if (out.entries.size() == top_n) break;
        auto item = trie.item_of(b.digits);
        if (!item) throw DataError("beam search finished on a code outside the trie");
        out.entries.push_back({b.behavior, *item, b.score});
    }
    return out;
}

RankedPrediction predict_target_behavior(DecoderSession& session, const CodeTrie& trie,
                                         int target_behavior, std::size_t n_beams,
                                         std::size_t top_n) {
    const auto& vocab = session.vocab();
    return beam_search(session, trie,
                       {tok::Vocabulary::kBos, vocab.behavior_token(target_behavior)}, n_beams,
                       top_n);
}

RankedPrediction predict_behavior_specific(DecoderSession& session, const CodeTrie& trie,
                                           int behavior, std::size_t n_beams, std::size_t top_n) {
    return predict_target_behavior(session, trie, behavior, n_beams, top_n);
}

RankedPrediction predict_behavior_item(DecoderSession& session, const CodeTrie& trie,
                                       std::size_t n_beams, std::size_t top_n) {
    return beam_search(session, trie, {tok::Vocabulary::kBos}, n_beams, top_n);
}

std::vector<std::size_t> largest_remainder_allocation(const std::vector<double>& p,
                                                      std::size_t n) {
    if (p.empty()) throw ConfigError("allocation needs at least one probability");
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw ConfigError("allocation probabilities must be non-negative");
        total += v;
    }
    if (total <= 0.0) throw ConfigError("allocation probabilities sum to zero");

    std::vector<std::size_t> alloc(p.size(), 0);
    std::vector<double> frac(p.size(), 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double share = p[i] / total * static_cast<double>(n);
        alloc[i] = static_cast<std::size_t>(std::floor(share));
        frac[i] = share - std::floor(share);
        assigned += alloc[i];
    }
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (frac[x] != frac[y]) return frac[x] > frac[y];
        if (p[x] != p[y]) return p[x] > p[y];
        return x < y;
    });
    for (std::size_t r = 0; assigned < n; ++r) {
        alloc[order[r % order.size()]] += 1;
        ++assigned;
    }
    return alloc;
}

RankedPrediction behavior_aware_sampling(DecoderSession& session, const CodeTrie& trie,
                                         std::size_t top_n, std::size_t n_beams,
                                         const std::vector<double>* behavior_probs) {
    const auto& vocab = session.vocab();
    std::vector<double> first = session.next_log_probs({tok::Vocabulary::kBos});

    std::vector<double> probs(vocab.num_behaviors);
    if (behavior_probs) {
        if (behavior_probs->size() != vocab.num_behaviors) {
            throw ConfigError("behavior probability vector does not match the vocabulary");
        }
        probs = *behavior_probs;
    } else {
        for (std::size_t b = 0; b < vocab.num_behaviors; ++b) {
            probs[b] = std::exp(first[static_cast<std::size_t>(
                vocab.behavior_token(static_cast<int>(b)))]);
        }
    }
    std::vector<std::size_t> alloc = largest_remainder_allocation(probs, top_n);

    RankedPrediction out;
    for (std::size_t b = 0; b < vocab.num_behaviors; ++b) {
        if (alloc[b] == 0) continue;
        double lp_b =
            first[static_cast<std::size_t>(vocab.behavior_token(static_cast<int>(b)))];
        RankedPrediction cond = predict_behavior_specific(
            session, trie, static_cast<int>(b), std::max(n_beams, alloc[b]), alloc[b]);
        for (auto entry : cond.entries) {
            entry.score += lp_b;  // conditional digits score plus the behavior step
            out.entries.push_back(entry);
        }
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const RankedEntry& x, const RankedEntry& y) {
        if (x.score != y.score) return x.score > y.score;
        if (x.behavior != y.behavior) return x.behavior < y.behavior;
        return x.item < y.item;
    });
    return out;
}

}  // namespace mbrec::decode
