#include "mbrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mbrec/checkpoint.hpp"

namespace mbrec::model {

using nn::GradientTape;
using nn::Tensor;

tok::Vocabulary ModelConfig::vocabulary() const {
    tok::Vocabulary v;
    v.user_buckets = user_buckets;
    v.num_behaviors = num_behaviors;
    v.digit_positions = digit_positions;
    v.digit_base = digit_base;
    return v;
}

void ModelConfig::set_vocabulary(const tok::Vocabulary& v) {
    user_buckets = v.user_buckets;
    num_behaviors = v.num_behaviors;
    digit_positions = v.digit_positions;
    digit_base = v.digit_base;
}

void ModelConfig::validate() const {
    if (d_model == 0 || d_inner == 0 || heads == 0 || head_dim == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (encoder_layers == 0 || decoder_layers == 0) {
        throw ConfigError("model needs at least one encoder and one decoder layer");
    }
    if (experts < 1) throw ConfigError("sparse layers need at least one expert");
    if (inject_layers > std::min(encoder_layers, decoder_layers)) {
        throw ConfigError("behavior injection spans more layers than the model has");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (num_behaviors == 0 || digit_positions == 0 || digit_base == 0) {
        throw ConfigError("model vocabulary is empty");
    }
    if (max_decoder_len < 2 + digit_positions) {
        throw ConfigError("max decoder length cannot hold a full tuple");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"d_model", d_model},
            {"d_inner", d_inner},
            {"heads", heads},
            {"head_dim", head_dim},
            {"encoder_layers", encoder_layers},
            {"decoder_layers", decoder_layers},
            {"experts", experts},
            {"inject_layers", inject_layers},
            {"d_behavior", d_behavior},
            {"dropout", dropout},
            {"max_encoder_len", max_encoder_len},
            {"max_decoder_len", max_decoder_len},
            {"init_scale", init_scale},
            {"seed", seed},
            {"user_buckets", user_buckets},
            {"num_behaviors", num_behaviors},
            {"digit_positions", digit_positions},
            {"digit_base", digit_base}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    auto grab = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    grab("d_model", cfg.d_model);
    grab("d_inner", cfg.d_inner);
    grab("heads", cfg.heads);
    grab("head_dim", cfg.head_dim);
    grab("encoder_layers", cfg.encoder_layers);
    grab("decoder_layers", cfg.decoder_layers);
    grab("experts", cfg.experts);
    grab("inject_layers", cfg.inject_layers);
    grab("d_behavior", cfg.d_behavior);
    grab("dropout", cfg.dropout);
    grab("max_encoder_len", cfg.max_encoder_len);
    grab("max_decoder_len", cfg.max_decoder_len);
    grab("init_scale", cfg.init_scale);
    grab("seed", cfg.seed);
    grab("user_buckets", cfg.user_buckets);
    grab("num_behaviors", cfg.num_behaviors);
    grab("digit_positions", cfg.digit_positions);
    grab("digit_base", cfg.digit_base);
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::full_scale() {
    ModelConfig cfg;
    cfg.d_model = 256;
    cfg.d_inner = 512;
    cfg.heads = 4;
    cfg.head_dim = 64;
    cfg.encoder_layers = 4;
    cfg.decoder_layers = 4;
    cfg.experts = 5;
    cfg.inject_layers = 2;
    cfg.d_behavior = 64;
    return cfg;
}

std::size_t position_route(const tok::Vocabulary& vocab, int token, std::size_t experts) {
    std::size_t raw;
    switch (vocab.role(token)) {
        case tok::TokenRole::behavior:
            raw = 0;
            break;
        case tok::TokenRole::digit:
            raw = 1 + vocab.digit_of(token).first;
            break;
        default:
            raw = vocab.digit_positions + 1;
            break;
    }
    return std::min(raw, experts - 1);
}

std::vector<int> behavior_context(const tok::Vocabulary& vocab, const std::vector<int>& tokens) {
    std::vector<int> rows(tokens.size(), 0);
    int open_behavior = -1;       // behavior of the tuple currently being read
    std::size_t expected_pos = 0;  // next digit position within that tuple
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        switch (vocab.role(tokens[i])) {
            case tok::TokenRole::behavior:
                if (open_behavior >= 0) {
                    throw DataError("behavior token at position " + std::to_string(i) +
                                    " interrupts an unfinished tuple");
                }
                open_behavior = vocab.behavior_of(tokens[i]);
                expected_pos = 0;
                rows[i] = 0;  // the behavior token itself takes the padding row
                break;
            case tok::TokenRole::digit: {
                auto [pos, value] = vocab.digit_of(tokens[i]);
                (void)value;
                if (open_behavior < 0 || pos != expected_pos) {
                    throw DataError("digit token at position " + std::to_string(i) +
                                    " is outside a well-formed tuple");
                }
                rows[i] = 1 + open_behavior;
                if (++expected_pos == vocab.digit_positions) {
                    open_behavior = -1;  // tuple complete
                }
                break;
            }
            default:
                if (open_behavior >= 0) {
                    throw DataError("token at position " + std::to_string(i) +
                                    " interrupts an unfinished tuple");
                }
                rows[i] = 0;
                break;
        }
    }
    return rows;
}

namespace {

std::size_t ffn_in_width(const ModelConfig& cfg, bool injected) {
    return cfg.d_model + (injected ? cfg.d_behavior : 0);
}

std::size_t attention_params(const ModelConfig& cfg) {
    std::size_t a = cfg.heads * cfg.head_dim;
    return 3 * (cfg.d_model * a + a) + a * cfg.d_model + cfg.d_model;
}

std::size_t ffn_params(const ModelConfig& cfg, bool injected) {
    return ffn_in_width(cfg, injected) * cfg.d_inner + cfg.d_inner +
           cfg.d_inner * cfg.d_model + cfg.d_model;
}

// projections + scores + context + output projection for q rows attending
// over kv rows; kv projections counted only when project_kv is set (cross
// attention reprojects the encoder states every call)
std::size_t attention_macs(const ModelConfig& cfg, std::size_t q_rows, std::size_t kv_rows,
                           bool project_kv) {
    std::size_t a = cfg.heads * cfg.head_dim;
    std::size_t macs = q_rows * cfg.d_model * a;                    // Q
    if (project_kv) macs += 2 * kv_rows * cfg.d_model * a;          // K, V
    macs += 2 * q_rows * kv_rows * a;                               // scores + context
    macs += q_rows * a * cfg.d_model;                               // output
    return macs;
}

std::size_t ffn_macs(const ModelConfig& cfg, std::size_t rows, bool injected) {
    return rows * (ffn_in_width(cfg, injected) * cfg.d_inner + cfg.d_inner * cfg.d_model);
}

}  // namespace

ParamFlopCounts count_params_flops(const ModelConfig& cfg, std::size_t encoder_len,
                                   std::size_t decoder_len) {
    cfg.validate();
    tok::Vocabulary vocab = cfg.vocabulary();
    ParamFlopCounts out;

    std::size_t p = vocab.size() * cfg.d_model;          // token embeddings
    p += cfg.max_encoder_len * cfg.d_model;              // encoder positions
    p += cfg.max_decoder_len * cfg.d_model;              // decoder positions
    p += (cfg.num_behaviors + 1) * cfg.d_behavior;       // behavior table + padding row
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        bool injected = l < cfg.inject_layers;
        p += 2 * cfg.d_model + attention_params(cfg);    // ln1 + self attention
        p += 2 * cfg.d_model + ffn_params(cfg, injected);
    }
    p += 2 * cfg.d_model;                                // encoder final norm
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
        bool injected = l < cfg.inject_layers;
        p += 2 * cfg.d_model + attention_params(cfg);    // self
        p += 2 * cfg.d_model + attention_params(cfg);    // cross
        p += 2 * cfg.d_model + cfg.experts * ffn_params(cfg, injected);
    }
    p += 2 * cfg.d_model;                                // decoder final norm
    p += cfg.d_model * vocab.size();                     // output projection
    out.parameters = p;

    std::size_t m = 0;
    for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
        bool injected = l < cfg.inject_layers;
        m += attention_macs(cfg, encoder_len, encoder_len, true);
        m += ffn_macs(cfg, encoder_len, injected);
    }
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
        bool injected = l < cfg.inject_layers;
        m += attention_macs(cfg, decoder_len, decoder_len, true);
        m += attention_macs(cfg, decoder_len, encoder_len, true);
        m += ffn_macs(cfg, decoder_len, injected);  // one expert per token
    }
    m += decoder_len * cfg.d_model * vocab.size();
    out.forward_macs = m;
    return out;
}

Model::Model(ModelConfig cfg) : config_(std::move(cfg)) {
    config_.validate();
    vocab_ = config_.vocabulary();
    Rng rng(derive_seed(config_.seed, "model-init", 0));
    const std::size_t d = config_.d_model;
    const std::size_t a = config_.heads * config_.head_dim;
    const double s = config_.init_scale;

    params_.add_normal("tok_emb", {vocab_.size(), d}, s, rng);
    params_.add_normal("enc_pos", {config_.max_encoder_len, d}, s, rng);
    params_.add_normal("dec_pos", {config_.max_decoder_len, d}, s, rng);
    params_.add_normal("beh_emb", {config_.num_behaviors + 1, config_.d_behavior}, s, rng);

    auto add_attention = [&](const std::string& prefix) {
        params_.add_normal(prefix + ".wq", {d, a}, s, rng);
        params_.add_zeros(prefix + ".bq", {a});
        params_.add_normal(prefix + ".wk", {d, a}, s, rng);
        params_.add_zeros(prefix + ".bk", {a});
        params_.add_normal(prefix + ".wv", {d, a}, s, rng);
        params_.add_zeros(prefix + ".bv", {a});
        params_.add_normal(prefix + ".wo", {a, d}, s, rng);
        params_.add_zeros(prefix + ".bo", {d});
    };
    auto add_norm = [&](const std::string& name) {
        params_.add_ones(name + ".g", {d});
        params_.add_zeros(name + ".b", {d});
    };
    auto add_ffn = [&](const std::string& prefix, bool injected) {
        params_.add_normal(prefix + ".w1", {ffn_in_width(config_, injected), config_.d_inner}, s,
                           rng);
        params_.add_zeros(prefix + ".b1", {config_.d_inner});
        params_.add_normal(prefix + ".w2", {config_.d_inner, d}, s, rng);
        params_.add_zeros(prefix + ".b2", {d});
    };

    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        std::string base = "enc" + std::to_string(l);
        add_norm(base + ".ln1");
        add_attention(base + ".attn");
        add_norm(base + ".ln2");
        add_ffn(base + ".ffn", l < config_.inject_layers);
    }
    add_norm("enc_final");
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        std::string base = "dec" + std::to_string(l);
        add_norm(base + ".ln1");
        add_attention(base + ".self");
        add_norm(base + ".ln2");
        add_attention(base + ".cross");
        add_norm(base + ".ln3");
        for (std::size_t e = 0; e < config_.experts; ++e) {
            add_ffn(base + ".exp" + std::to_string(e), l < config_.inject_layers);
        }
    }
    add_norm("dec_final");
    params_.add_normal("wout", {d, vocab_.size()}, s, rng);
}

nn::Tensor Model::embed(GradientTape* tape, const std::vector<int>& tokens,
                        const std::string& pos_table) const {
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    return nn::add(tape, nn::embedding_gather(tape, params_.find("tok_emb"), tokens),
                   nn::embedding_gather(tape, params_.find(pos_table), positions));
}

nn::Tensor Model::attention(GradientTape* tape, const std::string& prefix, const Tensor& q_in,
                            const Tensor& kv_in, const Tensor& mask) const {
    const std::size_t dh = config_.head_dim;
    Tensor q = nn::add_bias(tape, nn::matmul(tape, q_in, params_.find(prefix + ".wq")),
                            params_.find(prefix + ".bq"));
    Tensor k = nn::add_bias(tape, nn::matmul(tape, kv_in, params_.find(prefix + ".wk")),
                            params_.find(prefix + ".bk"));
    Tensor v = nn::add_bias(tape, nn::matmul(tape, kv_in, params_.find(prefix + ".wv")),
                            params_.find(prefix + ".bv"));
    std::vector<Tensor> heads;
    heads.reserve(config_.heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < config_.heads; ++h) {
        Tensor qh = nn::slice_cols(tape, q, h * dh, dh);
        Tensor kh = nn::slice_cols(tape, k, h * dh, dh);
        Tensor vh = nn::slice_cols(tape, v, h * dh, dh);
        Tensor scores = nn::add(tape, nn::scale(tape, nn::matmul_nt(tape, qh, kh), inv_sqrt), mask);
        heads.push_back(nn::matmul(tape, nn::softmax_rows(tape, scores), vh));
    }
    return nn::add_bias(tape, nn::matmul(tape, nn::concat_cols(tape, heads), params_.find(prefix + ".wo")),
                        params_.find(prefix + ".bo"));
}

nn::Tensor Model::ffn(GradientTape* tape, const std::string& prefix, const Tensor& x,
                      const std::vector<int>& beh_rows, bool injected, Rng* dropout_rng) const {
    Tensor in = x;
    if (injected) {
        Tensor beh = nn::embedding_gather(tape, params_.find("beh_emb"), beh_rows);
        in = nn::concat_cols(tape, {x, beh});
    }
    Tensor h = nn::relu(tape, nn::add_bias(tape, nn::matmul(tape, in, params_.find(prefix + ".w1")),
                                           params_.find(prefix + ".b1")));
    if (tape && dropout_rng && config_.dropout > 0.0) {
        h = nn::dropout(tape, h, config_.dropout, *dropout_rng);
    }
    return nn::add_bias(tape, nn::matmul(tape, h, params_.find(prefix + ".w2")),
                        params_.find(prefix + ".b2"));
}

nn::Tensor Model::sparse_ffn(GradientTape* tape, const std::string& prefix, const Tensor& x,
                             const std::vector<int>& tokens, const std::vector<int>& beh_rows,
                             bool injected, Rng* dropout_rng) const {
    std::vector<std::vector<std::size_t>> by_expert(config_.experts);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        by_expert[position_route(vocab_, tokens[i], config_.experts)].push_back(i);
    }
    Tensor out = Tensor::zeros({tokens.size(), config_.d_model});
    bool first = true;
    for (std::size_t e = 0; e < config_.experts; ++e) {
        if (by_expert[e].empty()) continue;
        Tensor sub_x = nn::gather_rows(tape, x, by_expert[e]);
        std::vector<int> sub_beh;
        sub_beh.reserve(by_expert[e].size());
        for (std::size_t i : by_expert[e]) sub_beh.push_back(beh_rows[i]);
        Tensor expert_out = ffn(tape, prefix + ".exp" + std::to_string(e), sub_x, sub_beh,
                                injected, dropout_rng);
        Tensor placed = nn::scatter_rows(tape, expert_out, by_expert[e], tokens.size());
        out = first ? placed : nn::add(tape, out, placed);
        first = false;
    }
    return out;
}

namespace {

Tensor padding_mask(const std::vector<int>& key_tokens, std::size_t q_rows) {
    std::vector<scalar> m(q_rows * key_tokens.size(), 0.0);
    for (std::size_t j = 0; j < key_tokens.size(); ++j) {
        if (key_tokens[j] == tok::Vocabulary::kPad) {
            for (std::size_t i = 0; i < q_rows; ++i) m[i * key_tokens.size() + j] = -1e30;
        }
    }
    return Tensor::from_values({q_rows, key_tokens.size()}, std::move(m));
}

Tensor causal_mask(std::size_t n) {
    std::vector<scalar> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e30;
    }
    return Tensor::from_values({n, n}, std::move(m));
}

}  // namespace

nn::Tensor Model::encode(const std::vector<int>& encoder_tokens) const {
    if (encoder_tokens.empty()) throw ShapeError("encoder input is empty");
    if (encoder_tokens.size() > config_.max_encoder_len) {
        throw ShapeError("encoder input length " + std::to_string(encoder_tokens.size()) +
                         " exceeds limit " + std::to_string(config_.max_encoder_len));
    }
    GradientTape* tape = nullptr;
    std::vector<int> beh = behavior_context(vocab_, encoder_tokens);
    Tensor mask = padding_mask(encoder_tokens, encoder_tokens.size());
    Tensor x = embed(tape, encoder_tokens, "enc_pos");
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        std::string base = "enc" + std::to_string(l);
        Tensor h1 = nn::layer_norm(tape, x, params_.find(base + ".ln1.g"),
                                   params_.find(base + ".ln1.b"));
        x = nn::add(tape, x, attention(tape, base + ".attn", h1, h1, mask));
        Tensor h2 = nn::layer_norm(tape, x, params_.find(base + ".ln2.g"),
                                   params_.find(base + ".ln2.b"));
        x = nn::add(tape, x, ffn(tape, base + ".ffn", h2, beh, l < config_.inject_layers, nullptr));
    }
    return nn::layer_norm(tape, x, params_.find("enc_final.g"), params_.find("enc_final.b"));
}

nn::Tensor Model::forward(GradientTape* tape, const std::vector<int>& encoder_tokens,
                          const std::vector<int>& decoder_tokens, Rng* dropout_rng) {
    if (encoder_tokens.empty()) throw ShapeError("encoder input is empty");
    if (decoder_tokens.empty()) throw ShapeError("decoder input is empty");
    if (encoder_tokens.size() > config_.max_encoder_len) {
        throw ShapeError("encoder input length " + std::to_string(encoder_tokens.size()) +
                         " exceeds limit " + std::to_string(config_.max_encoder_len));
    }
    if (decoder_tokens.size() > config_.max_decoder_len) {
        throw ShapeError("decoder input length " + std::to_string(decoder_tokens.size()) +
                         " exceeds limit " + std::to_string(config_.max_decoder_len));
    }

    std::vector<int> enc_beh = behavior_context(vocab_, encoder_tokens);
    Tensor enc_mask = padding_mask(encoder_tokens, encoder_tokens.size());
    Tensor x = embed(tape, encoder_tokens, "enc_pos");
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        std::string base = "enc" + std::to_string(l);
        bool injected = l < config_.inject_layers;
        Tensor h1 = nn::layer_norm(tape, x, params_.find(base + ".ln1.g"),
                                   params_.find(base + ".ln1.b"));
        Tensor att = attention(tape, base + ".attn", h1, h1, enc_mask);
        if (tape && dropout_rng && config_.dropout > 0.0) {
            att = nn::dropout(tape, att, config_.dropout, *dropout_rng);
        }
        x = nn::add(tape, x, att);
        Tensor h2 = nn::layer_norm(tape, x, params_.find(base + ".ln2.g"),
                                   params_.find(base + ".ln2.b"));
        x = nn::add(tape, x, ffn(tape, base + ".ffn", h2, enc_beh, injected, dropout_rng));
    }
    Tensor enc_out =
        nn::layer_norm(tape, x, params_.find("enc_final.g"), params_.find("enc_final.b"));

    std::vector<int> dec_beh = behavior_context(vocab_, decoder_tokens);
    Tensor self_mask = causal_mask(decoder_tokens.size());
    Tensor cross_mask = padding_mask(encoder_tokens, decoder_tokens.size());
    Tensor y = embed(tape, decoder_tokens, "dec_pos");
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        std::string base = "dec" + std::to_string(l);
        bool injected = l < config_.inject_layers;
        Tensor h1 = nn::layer_norm(tape, y, params_.find(base + ".ln1.g"),
                                   params_.find(base + ".ln1.b"));
        Tensor self_att = attention(tape, base + ".self", h1, h1, self_mask);
        if (tape && dropout_rng && config_.dropout > 0.0) {
            self_att = nn::dropout(tape, self_att, config_.dropout, *dropout_rng);
        }
        y = nn::add(tape, y, self_att);
        Tensor h2 = nn::layer_norm(tape, y, params_.find(base + ".ln2.g"),
                                   params_.find(base + ".ln2.b"));
        Tensor cross_att = attention(tape, base + ".cross", h2, enc_out, cross_mask);
        if (tape && dropout_rng && config_.dropout > 0.0) {
            cross_att = nn::dropout(tape, cross_att, config_.dropout, *dropout_rng);
        }
        y = nn::add(tape, y, cross_att);
        Tensor h3 = nn::layer_norm(tape, y, params_.find(base + ".ln3.g"),
                                   params_.find(base + ".ln3.b"));
        y = nn::add(tape, y,
                    sparse_ffn(tape, base, h3, decoder_tokens, dec_beh, injected, dropout_rng));
    }
    Tensor out = nn::layer_norm(tape, y, params_.find("dec_final.g"), params_.find("dec_final.b"));
    return nn::matmul(tape, out, params_.find("wout"));
}

void Model::save(const std::filesystem::path& path, nlohmann::json extra_meta) const {
    Checkpoint cp;
    cp.meta["model_config"] = config_.to_json();
    for (auto& [key, value] : extra_meta.items()) cp.meta[key] = value;
    for (const auto& [name, tensor] : params_) {
        cp.add_f64(name, tensor.shape(), tensor.value_vector());
    }
    cp.save(path);
}

Model Model::load(const std::filesystem::path& path) {
    Checkpoint cp = Checkpoint::load(path);
    Model m(ModelConfig::from_json(cp.meta.at("model_config")));
    for (auto& [name, tensor] : m.params_) {
        const auto& arr = cp.require(name);
        if (arr.dims != tensor.shape()) {
            throw ShapeError("checkpoint array '" + name + "' has the wrong shape");
        }
        std::copy(arr.f64.begin(), arr.f64.end(), tensor.values());
    }
    return m;
}

}  // namespace mbrec::model
