#include "mbrec/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include "mbrec/checkpoint.hpp"
#include "mbrec/kmeans.hpp"
#include "mbrec/ops.hpp"

namespace mbrec::tok {

using nn::GradientTape;
using nn::Tensor;

namespace {

std::size_t checked_pow(std::size_t base, std::size_t exp) {
    std::size_t out = 1;
    for (std::size_t i = 0; i < exp; ++i) {
        if (out > std::numeric_limits<std::size_t>::max() / base) {
            throw CapacityError("code space size overflows");
        }
        out *= base;
    }
    return out;
}

}  // namespace

nlohmann::json TokenizerConfig::to_json() const {
    return {{"levels", levels},
            {"codes_per_level", codes_per_level},
            {"user_buckets", user_buckets},
            {"latent_dim", latent_dim},
            {"encoder_hidden", encoder_hidden},
            {"commitment_beta", commitment_beta},
            {"ema_decay", ema_decay},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"plateau_rel_improvement", plateau_rel_improvement},
            {"plateau_epochs", plateau_epochs},
            {"kmeans_iters", kmeans_iters},
            {"kmeans_tol", kmeans_tol},
            {"seed", seed}};
}

TokenizerConfig TokenizerConfig::from_json(const nlohmann::json& j) {
    TokenizerConfig cfg;
    if (j.contains("levels")) cfg.levels = j.at("levels").get<std::size_t>();
    if (j.contains("codes_per_level")) cfg.codes_per_level = j.at("codes_per_level").get<std::size_t>();
    if (j.contains("user_buckets")) cfg.user_buckets = j.at("user_buckets").get<std::size_t>();
    if (j.contains("latent_dim")) cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    if (j.contains("encoder_hidden")) {
        cfg.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    }
    if (j.contains("commitment_beta")) cfg.commitment_beta = j.at("commitment_beta").get<double>();
    if (j.contains("ema_decay")) cfg.ema_decay = j.at("ema_decay").get<double>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("max_epochs")) cfg.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("plateau_rel_improvement")) {
        cfg.plateau_rel_improvement = j.at("plateau_rel_improvement").get<double>();
    }
    if (j.contains("plateau_epochs")) cfg.plateau_epochs = j.at("plateau_epochs").get<std::size_t>();
    if (j.contains("kmeans_iters")) cfg.kmeans_iters = j.at("kmeans_iters").get<std::size_t>();
    if (j.contains("kmeans_tol")) cfg.kmeans_tol = j.at("kmeans_tol").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

void TokenizerConfig::validate() const {
    if (levels < 1) throw ConfigError("tokenizer levels must be >= 1");
    if (codes_per_level < 2) throw ConfigError("codes_per_level must be >= 2");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (commitment_beta < 0.0) throw ConfigError("commitment_beta must be >= 0");
    if (ema_decay <= 0.0 || ema_decay >= 1.0) throw ConfigError("ema_decay must be in (0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (user_buckets < 1) throw ConfigError("user_buckets must be >= 1");
}

void CodeAssignment::validate() const {
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i].size() != levels) {
            throw ShapeError("item " + std::to_string(i) + " has " +
                             std::to_string(codes[i].size()) + " digits, expected " +
                             std::to_string(levels));
        }
        for (int d : codes[i]) {
            if (d < 0 || static_cast<std::size_t>(d) >= base) {
                throw ShapeError("item " + std::to_string(i) + " digit " + std::to_string(d) +
                                 " out of range for base " + std::to_string(base));
            }
        }
    }
}

bool CodeAssignment::is_injective() const {
    std::map<std::vector<int>, int> seen;
    for (const auto& code : codes) {
        if (++seen[code] > 1) return false;
    }
    return true;
}

std::vector<int> base_digits_msb(std::uint64_t value, std::size_t base, std::size_t levels) {
    if (base < 2) throw ConfigError("base_digits_msb needs base >= 2");
    std::vector<int> digits(levels, 0);
    for (std::size_t i = 0; i < levels; ++i) {
        digits[levels - 1 - i] = static_cast<int>(value % base);
        value /= base;
    }
    if (value != 0) throw CapacityError("value does not fit in " + std::to_string(levels) + " digits");
    return digits;
}

namespace {

// dims: layer widths from input to output, e.g. {24, 64, 32, 16}
void add_mlp_params(nn::ParamSet& params, const std::string& prefix,
                    const std::vector<std::size_t>& dims, Rng& rng) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        double stddev = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        params.add_normal(prefix + ".w" + std::to_string(l), {dims[l], dims[l + 1]}, stddev, rng);
        params.add_zeros(prefix + ".b" + std::to_string(l), {dims[l + 1]});
    }
}

// Linear stack with ReLU between layers and a linear head.
Tensor mlp_forward(GradientTape* tape, nn::ParamSet& params, const std::string& prefix,
                   std::size_t layer_count, const Tensor& x) {
    Tensor h = x;
    for (std::size_t l = 0; l < layer_count; ++l) {
        h = add_bias(tape, matmul(tape, h, params.find(prefix + ".w" + std::to_string(l))),
                     params.find(prefix + ".b" + std::to_string(l)));
        if (l + 1 < layer_count) h = relu(tape, h);
    }
    return h;
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows,
                      const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ShapeError("empty batch");
    std::size_t dim = rows[idx[0]].size();
    std::vector<scalar> values;
    values.reserve(idx.size() * dim);
    for (std::size_t r : idx) {
        if (rows[r].size() != dim) throw ShapeError("ragged feature rows");
        values.insert(values.end(), rows[r].begin(), rows[r].end());
    }
    return Tensor::from_values({idx.size(), dim}, std::move(values));
}

int nearest_row(const std::vector<std::vector<double>>& codebook, const scalar* z,
                std::size_t dim) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < codebook.size(); ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            double diff = z[c] - codebook[j][c];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

}  // namespace

QuantizedAutoencoderResult fit_quantized_autoencoder(
    const std::vector<std::vector<double>>& features, const TokenizerConfig& cfg) {
    cfg.validate();
    const std::size_t items = features.size();
    if (items == 0) throw DataError("quantized autoencoder needs at least one item");
    const std::size_t feature_dim = features[0].size();
    for (const auto& row : features) {
        if (row.size() != feature_dim) throw ShapeError("ragged feature matrix");
    }
    const std::size_t k = cfg.codes_per_level;
    if (items < k) {
        throw DataError("cannot fit " + std::to_string(k) + " codes on " + std::to_string(items) +
                        " items");
    }

    std::vector<std::size_t> enc_dims = {feature_dim};
    enc_dims.insert(enc_dims.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    enc_dims.push_back(cfg.latent_dim);
    std::vector<std::size_t> dec_dims(enc_dims.rbegin(), enc_dims.rend());
    const std::size_t enc_layers = enc_dims.size() - 1;
    const std::size_t dec_layers = dec_dims.size() - 1;

    Rng init_rng(derive_seed(cfg.seed, "tok-ae-init", 0));
    nn::ParamSet params;
    add_mlp_params(params, "enc", enc_dims, init_rng);
    add_mlp_params(params, "dec", dec_dims, init_rng);

    std::vector<std::size_t> all_items(items);
    std::iota(all_items.begin(), all_items.end(), 0);

    auto encode_all = [&]() {
        std::vector<std::vector<double>> latents(items);
        for (std::size_t start = 0; start < items; start += cfg.batch_size) {
            std::vector<std::size_t> idx(
                all_items.begin() + static_cast<std::ptrdiff_t>(start),
                all_items.begin() +
                    static_cast<std::ptrdiff_t>(std::min(items, start + cfg.batch_size)));
            Tensor z = mlp_forward(nullptr, params, "enc", enc_layers, rows_to_tensor(features, idx));
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const scalar* zr = z.values() + r * cfg.latent_dim;
                latents[idx[r]].assign(zr, zr + cfg.latent_dim);
            }
        }
        return latents;
    };

    // Codebook seeded by clustering the untrained encoder's latents; EMA state
    // starts as if each code had absorbed exactly its own centroid.
    Rng codebook_rng(derive_seed(cfg.seed, "tok-ae-codebook", 0));
    std::vector<std::vector<double>> codebook =
        kmeans(encode_all(), k, cfg.kmeans_iters, cfg.kmeans_tol, codebook_rng).centroids;
    std::vector<double> ema_count(k, 1.0);
    std::vector<std::vector<double>> ema_sum = codebook;

    nn::Adagrad opt(params, {cfg.learning_rate, 1e-10});
    Rng reseed_rng(derive_seed(cfg.seed, "tok-ae-reseed", 0));
    const double gamma = cfg.ema_decay;
    const double count_floor = 1e-6;

    QuantizedAutoencoderResult out;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t plateau_streak = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "tok-ae-shuffle", epoch));
        std::vector<std::size_t> order = all_items;
        shuffle_rng.shuffle(order);

        std::vector<bool> used(k, false);
        double epoch_loss = 0.0;

        for (std::size_t start = 0; start < items; start += cfg.batch_size) {
            std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() +
                    static_cast<std::ptrdiff_t>(std::min(items, start + cfg.batch_size)));
            const std::size_t b = idx.size();

            GradientTape tape;
            Tensor x = rows_to_tensor(features, idx);
            Tensor z = mlp_forward(&tape, params, "enc", enc_layers, x);

            std::vector<int> assign(b);
            std::vector<scalar> e_values(b * cfg.latent_dim);
            std::vector<scalar> jump(b * cfg.latent_dim);
            for (std::size_t r = 0; r < b; ++r) {
                const scalar* zr = z.values() + r * cfg.latent_dim;
                int j = nearest_row(codebook, zr, cfg.latent_dim);
                assign[r] = j;
                used[static_cast<std::size_t>(j)] = true;
                for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
                    e_values[r * cfg.latent_dim + c] = codebook[static_cast<std::size_t>(j)][c];
                    jump[r * cfg.latent_dim + c] =
                        codebook[static_cast<std::size_t>(j)][c] - zr[c];
                }
            }
            // Straight-through estimate: the decoder sees the codebook rows but
            // gradients pass to the encoder unchanged.
            Tensor quantized =
                add(&tape, z, Tensor::from_values({b, cfg.latent_dim}, std::move(jump)));
            Tensor recon = mlp_forward(&tape, params, "dec", dec_layers, quantized);

            Tensor recon_err = sum_squares(&tape, sub(&tape, recon, x));
            Tensor commit_err = sum_squares(
                &tape, sub(&tape, z, Tensor::from_values({b, cfg.latent_dim}, std::move(e_values))));
            Tensor loss =
                add(&tape, scale(&tape, recon_err, 1.0 / static_cast<double>(b * feature_dim)),
                    scale(&tape, commit_err,
                          cfg.commitment_beta / static_cast<double>(b * cfg.latent_dim)));

            params.zero_grad();
            tape.backward(loss);
            opt.step();
            epoch_loss += loss.at(0) * static_cast<double>(b);

            // EMA codebook update from this batch's assignments
            std::vector<double> batch_count(k, 0.0);
            std::vector<std::vector<double>> batch_sum(k, std::vector<double>(cfg.latent_dim, 0.0));
            for (std::size_t r = 0; r < b; ++r) {
                auto j = static_cast<std::size_t>(assign[r]);
                batch_count[j] += 1.0;
                const scalar* zr = z.values() + r * cfg.latent_dim;
                for (std::size_t c = 0; c < cfg.latent_dim; ++c) batch_sum[j][c] += zr[c];
            }
            for (std::size_t j = 0; j < k; ++j) {
                ema_count[j] = gamma * ema_count[j] + (1.0 - gamma) * batch_count[j];
                for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
                    ema_sum[j][c] = gamma * ema_sum[j][c] + (1.0 - gamma) * batch_sum[j][c];
                    codebook[j][c] = ema_sum[j][c] / std::max(ema_count[j], count_floor);
                }
            }
        }

        epoch_loss /= static_cast<double>(items);
        out.epochs_run = epoch + 1;
        out.final_loss = epoch_loss;

        // Codes that went a whole epoch without a single assignment restart at
        // the latent of a random item.
        std::vector<std::vector<double>> latents_now;
        for (std::size_t j = 0; j < k; ++j) {
            if (used[j]) continue;
            if (latents_now.empty()) latents_now = encode_all();
            const auto& z = latents_now[reseed_rng.uniform_int(0, static_cast<std::int64_t>(items) - 1)];
            codebook[j] = z;
            ema_sum[j] = z;
            ema_count[j] = 1.0;
            out.reseed_log.emplace_back(epoch, j);
        }

        double rel = (best_loss - epoch_loss) / std::max(std::abs(best_loss), 1e-12);
        if (std::isfinite(best_loss) && rel < cfg.plateau_rel_improvement) {
            ++plateau_streak;
        } else {
            plateau_streak = 0;
        }
        best_loss = std::min(best_loss, epoch_loss);
        if (plateau_streak >= cfg.plateau_epochs) break;
    }

    out.codebook = codebook;
    out.ema_counts = ema_count;
    out.latents = encode_all();
    out.digits.resize(items);
    out.residuals.resize(items);
    for (std::size_t i = 0; i < items; ++i) {
        int j = nearest_row(codebook, out.latents[i].data(), cfg.latent_dim);
        out.digits[i] = j;
        out.residuals[i].resize(cfg.latent_dim);
        for (std::size_t c = 0; c < cfg.latent_dim; ++c) {
            out.residuals[i][c] = out.latents[i][c] - codebook[static_cast<std::size_t>(j)][c];
        }
    }
    for (const auto& [name, tensor] : params) {
        out.autoencoder.add(name, std::vector<std::size_t>(tensor.shape()));
        auto& dst = out.autoencoder.find(name);
        std::copy(tensor.values(), tensor.values() + tensor.numel(),
                  dst.values());
    }
    return out;
}

SemanticIdResult fit_balanced_sid(const std::vector<std::vector<double>>& features,
                                  const TokenizerConfig& cfg) {
    if (cfg.levels != 3) throw ConfigError("balanced semantic ids use exactly 3 levels");
    SemanticIdResult out;
    out.level1 = fit_quantized_autoencoder(features, cfg);
    const std::size_t items = features.size();
    const std::size_t k = cfg.codes_per_level;

    out.codes.levels = 3;
    out.codes.base = k;
    out.codes.codes.assign(items, std::vector<int>(3, 0));
    for (std::size_t i = 0; i < items; ++i) out.codes.codes[i][0] = out.level1.digits[i];

    // Second digit: cluster each first-digit group's residuals on its own.
    out.level2_centroids.assign(k, {});
    std::vector<std::vector<std::size_t>> groups(k);
    for (std::size_t i = 0; i < items; ++i) {
        groups[static_cast<std::size_t>(out.level1.digits[i])].push_back(i);
    }
    for (std::size_t g = 0; g < k; ++g) {
        if (groups[g].empty()) continue;
        std::vector<std::vector<double>> pts;
        pts.reserve(groups[g].size());
        for (std::size_t i : groups[g]) pts.push_back(out.level1.residuals[i]);
        std::size_t kk = std::min(k, pts.size());
        Rng rng(derive_seed(cfg.seed, "sid-level2", g));
        KMeansResult km = kmeans(pts, kk, cfg.kmeans_iters, cfg.kmeans_tol, rng);
        out.level2_centroids[g] = km.centroids;
        for (std::size_t p = 0; p < groups[g].size(); ++p) {
            out.codes.codes[groups[g][p]][1] = km.labels[p];
        }
    }

    // Third digit: a seeded random one-to-one assignment of 0..n-1 inside each
    // (first, second) group keeps full codes unique without touching geometry.
    std::map<std::pair<int, int>, std::vector<std::size_t>> prefix_groups;
    for (std::size_t i = 0; i < items; ++i) {
        prefix_groups[{out.codes.codes[i][0], out.codes.codes[i][1]}].push_back(i);
    }
    for (const auto& [prefix, members] : prefix_groups) {
        if (members.size() > k) {
            throw CapacityError("prefix (" + std::to_string(prefix.first) + ", " +
                                std::to_string(prefix.second) + ") holds " +
                                std::to_string(members.size()) + " items but the last level fits " +
                                std::to_string(k));
        }
        std::uint64_t group_key =
            static_cast<std::uint64_t>(prefix.first) * k + static_cast<std::uint64_t>(prefix.second);
        Rng rng(derive_seed(cfg.seed, "sid-level3", group_key));
        std::vector<std::size_t> digit_order = rng.permutation(members.size());
        for (std::size_t p = 0; p < members.size(); ++p) {
            out.codes.codes[members[p]][2] = static_cast<int>(digit_order[p]);
        }
    }

    out.codes.validate();
    return out;
}

CodeAssignment build_balanced_cid(std::size_t item_count, std::size_t base, std::size_t levels,
                                  std::uint64_t seed) {
    if (base < 2) throw ConfigError("collision-free ids need base >= 2");
    std::size_t capacity = checked_pow(base, levels);
    if (item_count > capacity) {
        throw CapacityError("cannot address " + std::to_string(item_count) + " items with " +
                            std::to_string(levels) + " digits of base " + std::to_string(base));
    }
    CodeAssignment out;
    out.levels = levels;
    out.base = base;
    out.codes.assign(item_count, std::vector<int>(levels, 0));

    // Items are ranked by a seeded permutation; the rank's digits are written
    // least-significant digit first, so consecutive ranks spread across all
    // level-1 codes and every prefix stays balanced to within one item.
    Rng rng(derive_seed(seed, "cid-permutation", 0));
    std::vector<std::size_t> order = rng.permutation(item_count);
    for (std::size_t rank = 0; rank < item_count; ++rank) {
        std::size_t item = order[rank];
        std::size_t v = rank;
        for (std::size_t p = 0; p < levels; ++p) {
            out.codes[item][p] = static_cast<int>(v % base);
            v /= base;
        }
    }
    out.validate();
    return out;
}

ResidualQuantizerResult fit_residual_quantizer(const std::vector<std::vector<double>>& features,
                                               const TokenizerConfig& cfg) {
    ResidualQuantizerResult out;
    out.level1 = fit_quantized_autoencoder(features, cfg);
    const std::size_t items = features.size();
    const std::size_t k = cfg.codes_per_level;

    out.codes.levels = cfg.levels;
    out.codes.base = k;
    out.codes.codes.assign(items, std::vector<int>(cfg.levels, 0));
    for (std::size_t i = 0; i < items; ++i) out.codes.codes[i][0] = out.level1.digits[i];

    // Deeper digits come from one shared codebook per level over the pooled
    // residuals, so crowded regions are not granted extra resolution.
    std::vector<std::vector<double>> residuals = out.level1.residuals;
    for (std::size_t level = 1; level < cfg.levels; ++level) {
        Rng rng(derive_seed(cfg.seed, "rq-level", level));
        KMeansResult km = kmeans(residuals, std::min(k, items), cfg.kmeans_iters, cfg.kmeans_tol, rng);
        for (std::size_t i = 0; i < items; ++i) {
            out.codes.codes[i][level] = km.labels[i];
            const auto& c = km.centroids[static_cast<std::size_t>(km.labels[i])];
            for (std::size_t d = 0; d < residuals[i].size(); ++d) residuals[i][d] -= c[d];
        }
    }
    out.codes.validate();

    std::map<std::vector<int>, std::vector<std::size_t>> by_code;
    for (std::size_t i = 0; i < items; ++i) by_code[out.codes.codes[i]].push_back(i);
    out.disambiguation.assign(items, 0);
    out.collided_items = 0;
    for (const auto& [code, members] : by_code) {
        if (members.size() < 2) continue;
        out.collided_items += members.size();
        for (std::size_t p = 0; p < members.size(); ++p) {
            out.disambiguation[members[p]] = static_cast<int>(p);
        }
    }
    return out;
}

std::vector<CodeLevelStats> code_distribution_stats(const CodeAssignment& codes) {
    codes.validate();
    std::vector<CodeLevelStats> out;
    const double items = static_cast<double>(codes.codes.size());
    for (std::size_t level = 1; level <= codes.levels; ++level) {
        std::map<std::vector<int>, std::size_t> counts;
        for (const auto& code : codes.codes) {
            counts[std::vector<int>(code.begin(), code.begin() + static_cast<std::ptrdiff_t>(level))]++;
        }
        CodeLevelStats st;
        st.level = level;
        st.bins = std::pow(static_cast<double>(codes.base), static_cast<double>(level));
        double sum_sq = 0.0;
        for (const auto& [prefix, n] : counts) {
            sum_sq += static_cast<double>(n) * static_cast<double>(n);
            st.max_count = std::max(st.max_count, n);
        }
        double mean = items / st.bins;
        st.variance = sum_sq / st.bins - mean * mean;
        st.minimal_variance = minimal_possible_variance(codes.codes.size(), st.bins);
        st.nonempty_bins = counts.size();
        out.push_back(st);
    }
    return out;
}

double minimal_possible_variance(std::size_t items, double bins) {
    if (bins <= 0.0) throw ConfigError("bins must be positive");
    double v = static_cast<double>(items);
    double f = std::floor(v / bins);
    double q = v - f * bins;  // bins that get f+1 items in the most even spread
    double mean = v / bins;
    double sum_sq = q * (f + 1.0) * (f + 1.0) + (bins - q) * f * f;
    return sum_sq / bins - mean * mean;
}

std::size_t count_full_code_collisions(const CodeAssignment& codes) {
    std::map<std::vector<int>, std::size_t> counts;
    for (const auto& code : codes.codes) counts[code]++;
    std::size_t collided = 0;
    for (const auto& [code, n] : counts) {
        if (n >= 2) collided += n;
    }
    return collided;
}

Vocabulary TokenizerState::vocabulary() const {
    Vocabulary v;
    v.user_buckets = config.user_buckets;
    v.num_behaviors = behavior_names.size();
    v.digit_positions = codes.levels;
    v.digit_base = codes.base;
    return v;
}

void TokenizerState::save(const std::filesystem::path& path) const {
    Checkpoint cp;
    cp.meta["kind"] = kind;
    cp.meta["config"] = config.to_json();
    cp.meta["item_raw_ids"] = item_raw_ids;
    cp.meta["behavior_names"] = behavior_names;
    cp.meta["target_behavior"] = target_behavior;
    cp.meta["levels"] = codes.levels;
    cp.meta["base"] = codes.base;

    std::vector<std::int64_t> flat;
    flat.reserve(codes.codes.size() * codes.levels);
    for (const auto& code : codes.codes) {
        for (int d : code) flat.push_back(d);
    }
    cp.add_i64("codes", {codes.codes.size(), codes.levels}, flat);

    if (!level1_codebook.empty()) {
        std::vector<double> cb;
        for (const auto& row : level1_codebook) cb.insert(cb.end(), row.begin(), row.end());
        cp.add_f64("level1_codebook", {level1_codebook.size(), level1_codebook[0].size()}, cb);
    }
    for (const auto& [name, values] : aux_arrays) {
        cp.add_f64("aux." + name, {values.size()}, values);
    }
    cp.save(path);
}

TokenizerState TokenizerState::load(const std::filesystem::path& path) {
    Checkpoint cp = Checkpoint::load(path);
    TokenizerState st;
    st.kind = cp.meta.at("kind").get<std::string>();
    st.config = TokenizerConfig::from_json(cp.meta.at("config"));
    st.item_raw_ids = cp.meta.at("item_raw_ids").get<std::vector<std::string>>();
    st.behavior_names = cp.meta.at("behavior_names").get<std::vector<std::string>>();
    st.target_behavior = cp.meta.at("target_behavior").get<int>();
    st.codes.levels = cp.meta.at("levels").get<std::size_t>();
    st.codes.base = cp.meta.at("base").get<std::size_t>();

    const auto& codes_arr = cp.require("codes");
    st.codes.codes.assign(st.item_raw_ids.size(), std::vector<int>(st.codes.levels, 0));
    for (std::size_t i = 0; i < st.item_raw_ids.size(); ++i) {
        for (std::size_t l = 0; l < st.codes.levels; ++l) {
            st.codes.codes[i][l] = static_cast<int>(codes_arr.i64[i * st.codes.levels + l]);
        }
    }
    st.codes.validate();

    if (const auto* cb = cp.find("level1_codebook")) {
        std::size_t rows = cb->dims[0], cols = cb->dims[1];
        st.level1_codebook.assign(rows, std::vector<double>(cols));
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) st.level1_codebook[r][c] = cb->f64[r * cols + c];
        }
    }
    for (const auto& arr : cp.arrays()) {
        if (arr.name.rfind("aux.", 0) == 0) {
            st.aux_arrays.emplace_back(arr.name.substr(4), arr.f64);
        }
    }
    return st;
}

std::string TokenizerState::export_code_table() const {
    std::string out = "item";
    for (std::size_t l = 0; l < codes.levels; ++l) out += "\tc" + std::to_string(l + 1);
    out += "\n";
    for (std::size_t i = 0; i < item_raw_ids.size(); ++i) {
        out += item_raw_ids[i];
        for (int d : codes.codes[i]) out += "\t" + std::to_string(d);
        out += "\n";
    }
    return out;
}

std::vector<std::size_t> TokenizerState::align_items(const data::InteractionDataset& ds) const {
    std::unordered_map<std::string, std::size_t> row_of;
    row_of.reserve(item_raw_ids.size());
    for (std::size_t i = 0; i < item_raw_ids.size(); ++i) row_of[item_raw_ids[i]] = i;
    std::vector<std::size_t> rows(ds.item_raw_ids.size());
    for (std::size_t i = 0; i < ds.item_raw_ids.size(); ++i) {
        auto it = row_of.find(ds.item_raw_ids[i]);
        if (it == row_of.end()) {
            throw DataError("item '" + ds.item_raw_ids[i] + "' has no fitted code");
        }
        rows[i] = it->second;
    }
    return rows;
}

TokenizerState fit_tokenizer(const data::InteractionDataset& ds,
                             const std::vector<std::vector<double>>& features,
                             const TokenizerConfig& cfg, const std::string& kind) {
    cfg.validate();
    TokenizerState st;
    st.kind = kind;
    st.config = cfg;
    st.item_raw_ids = ds.item_raw_ids;
    st.behavior_names = ds.behavior_names;
    st.target_behavior = ds.target_behavior;

    if (kind == "sid") {
        if (features.size() != ds.item_raw_ids.size()) {
            throw DataError("semantic ids need one feature row per item");
        }
        SemanticIdResult sid = fit_balanced_sid(features, cfg);
        st.codes = sid.codes;
        st.level1_codebook = sid.level1.codebook;
        st.aux_arrays.emplace_back("ema_counts", sid.level1.ema_counts);
        for (const auto& [name, tensor] : sid.level1.autoencoder) {
            st.aux_arrays.emplace_back(name, tensor.value_vector());
        }
    } else if (kind == "cid") {
        st.codes = build_balanced_cid(ds.item_raw_ids.size(), cfg.codes_per_level, cfg.levels,
                                      cfg.seed);
    } else if (kind == "rqvae") {
        if (features.size() != ds.item_raw_ids.size()) {
            throw DataError("the residual quantizer needs one feature row per item");
        }
        ResidualQuantizerResult rq = fit_residual_quantizer(features, cfg);
        // Appending the enumeration digit makes every stored code unique.
        int max_dis = 0;
        for (int d : rq.disambiguation) max_dis = std::max(max_dis, d);
        st.codes.levels = rq.codes.levels + 1;
        st.codes.base = std::max(rq.codes.base, static_cast<std::size_t>(max_dis) + 1);
        st.codes.codes.assign(rq.codes.codes.size(), {});
        for (std::size_t i = 0; i < rq.codes.codes.size(); ++i) {
            st.codes.codes[i] = rq.codes.codes[i];
            st.codes.codes[i].push_back(rq.disambiguation[i]);
        }
        st.codes.validate();
        st.level1_codebook = rq.level1.codebook;
    } else {
        throw ConfigError("unknown tokenizer kind '" + kind + "' (expected sid, cid, or rqvae)");
    }

    if (!st.codes.is_injective()) {
        throw DataError("fitted " + kind + " codes are not unique per item");
    }
    return st;
}

std::vector<int> tokenize_interaction(const Vocabulary& vocab, int behavior,
                                      const std::vector<int>& code) {
    if (code.size() != vocab.digit_positions) {
        throw ShapeError("code has " + std::to_string(code.size()) + " digits, vocabulary expects " +
                         std::to_string(vocab.digit_positions));
    }
    std::vector<int> tokens;
    tokens.reserve(1 + code.size());
    tokens.push_back(vocab.behavior_token(behavior));
    for (std::size_t p = 0; p < code.size(); ++p) tokens.push_back(vocab.digit_token(p, code[p]));
    return tokens;
}

std::pair<int, std::vector<int>> detokenize_interaction(const Vocabulary& vocab,
                                                        const std::vector<int>& tokens) {
    if (tokens.size() != 1 + vocab.digit_positions) {
        throw ShapeError("interaction tuple must hold one behavior and " +
                         std::to_string(vocab.digit_positions) + " digit tokens");
    }
    if (vocab.role(tokens[0]) != TokenRole::behavior) {
        throw DataError("tuple does not start with a behavior token");
    }
    int behavior = vocab.behavior_of(tokens[0]);
    std::vector<int> code(vocab.digit_positions);
    for (std::size_t p = 0; p < vocab.digit_positions; ++p) {
        if (vocab.role(tokens[1 + p]) != TokenRole::digit) {
            throw DataError("tuple position " + std::to_string(1 + p) + " is not a digit token");
        }
        auto [pos, value] = vocab.digit_of(tokens[1 + p]);
        if (pos != p) {
            throw DataError("digit for level " + std::to_string(pos) + " found at level " +
                            std::to_string(p));
        }
        code[p] = value;
    }
    return {behavior, code};
}

std::vector<int> encoder_tokens_for(const Vocabulary& vocab, const CodeAssignment& codes,
                                    const std::vector<std::size_t>& item_rows,
                                    const std::string& user_raw_id,
                                    const std::vector<data::Interaction>& history) {
    std::vector<int> tokens;
    tokens.reserve(2 + history.size() * (1 + vocab.digit_positions));
    tokens.push_back(vocab.user_token(hash_user_bucket(user_raw_id, vocab.user_buckets)));
    for (const auto& ev : history) {
        auto tuple = tokenize_interaction(vocab, ev.behavior,
                                          codes.codes.at(item_rows.at(static_cast<std::size_t>(ev.item))));
        tokens.insert(tokens.end(), tuple.begin(), tuple.end());
    }
    tokens.push_back(Vocabulary::kEos);
    return tokens;
}

ModelExample build_model_sequence(const Vocabulary& vocab, const CodeAssignment& codes,
                                  const std::vector<std::size_t>& item_rows,
                                  const std::string& user_raw_id,
                                  const std::vector<data::Interaction>& history,
                                  const data::Interaction& target) {
    ModelExample ex;
    ex.encoder_tokens = encoder_tokens_for(vocab, codes, item_rows, user_raw_id, history);
    auto tuple = tokenize_interaction(
        vocab, target.behavior, codes.codes.at(item_rows.at(static_cast<std::size_t>(target.item))));
    ex.decoder_input.push_back(Vocabulary::kBos);
    ex.decoder_input.insert(ex.decoder_input.end(), tuple.begin(), tuple.end());
    ex.decoder_target = tuple;
    ex.decoder_target.push_back(Vocabulary::kEos);
    return ex;
}

}  // namespace mbrec::tok
