#include "mbrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <unordered_map>

#include "mbrec/io.hpp"
#include "mbrec/rng.hpp"

namespace mbrec::data {

namespace {

void check_stochastic_rows(const std::vector<std::vector<double>>& m, std::size_t cols,
                           const char* what) {
    for (const auto& row : m) {
        if (row.size() != cols)
            throw ConfigError(std::string(what) + ": row has wrong width");
        double sum = 0.0;
        for (double v : row) {
            if (v < 0.0) throw ConfigError(std::string(what) + ": negative probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError(std::string(what) + ": row sums to " + std::to_string(sum) +
                              ", expected 1");
    }
}

}  // namespace

std::size_t SyntheticSpec::item_count() const {
    std::size_t n = 0;
    for (auto s : cluster_sizes) n += s;
    return n;
}

void SyntheticSpec::validate() const {
    if (behavior_names.empty()) throw ConfigError("synthetic: no behaviors");
    if (cluster_sizes.empty()) throw ConfigError("synthetic: no clusters");
    for (auto s : cluster_sizes)
        if (s == 0) throw ConfigError("synthetic: empty cluster");
    if (min_len < InteractionDataset::kMinEventsPerUser)
        throw ConfigError("synthetic: min_len must be at least " +
                          std::to_string(InteractionDataset::kMinEventsPerUser));
    if (max_len < min_len) throw ConfigError("synthetic: max_len < min_len");
    if (num_users == 0) throw ConfigError("synthetic: no users");
    if (feature_dim == 0) throw ConfigError("synthetic: feature_dim must be positive");
    const std::size_t B = behavior_count(), C = cluster_count();
    if (behavior_transition.size() != B)
        throw ConfigError("synthetic: behavior_transition must have one row per behavior");
    check_stochastic_rows(behavior_transition, B, "behavior_transition");
    if (cluster_transition.size() != B)
        throw ConfigError("synthetic: cluster_transition must have one kernel per behavior");
    for (const auto& kernel : cluster_transition) {
        if (kernel.size() != C)
            throw ConfigError("synthetic: cluster kernel must have one row per cluster");
        check_stochastic_rows(kernel, C, "cluster_transition");
    }
    if (target_behavior < 0 || static_cast<std::size_t>(target_behavior) >= B)
        throw ConfigError("synthetic: target behavior out of range");
}

nlohmann::json SyntheticSpec::to_json() const {
    nlohmann::json j;
    j["num_users"] = num_users;
    j["min_len"] = min_len;
    j["max_len"] = max_len;
    j["behavior_names"] = behavior_names;
    j["behavior_transition"] = behavior_transition;
    j["cluster_sizes"] = cluster_sizes;
    j["cluster_transition"] = cluster_transition;
    j["feature_dim"] = feature_dim;
    j["centroid_scale"] = centroid_scale;
    j["noise_scale"] = noise_scale;
    j["target_behavior"] = target_behavior;
    j["seed"] = seed;
    return j;
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.num_users = j.at("num_users").get<std::size_t>();
    s.min_len = j.at("min_len").get<std::size_t>();
    s.max_len = j.at("max_len").get<std::size_t>();
    s.behavior_names = j.at("behavior_names").get<std::vector<std::string>>();
    s.behavior_transition = j.at("behavior_transition").get<std::vector<std::vector<double>>>();
    s.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
    s.cluster_transition =
        j.at("cluster_transition").get<std::vector<std::vector<std::vector<double>>>>();
    s.feature_dim = j.at("feature_dim").get<std::size_t>();
    s.centroid_scale = j.at("centroid_scale").get<double>();
    s.noise_scale = j.at("noise_scale").get<double>();
    s.target_behavior = j.at("target_behavior").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

nlohmann::json BayesReference::to_json() const {
    nlohmann::json j;
    j["stationary_behavior"] = stationary_behavior;
    j["next_behavior_accuracy"] = next_behavior_accuracy;
    nlohmann::json bh = nlohmann::json::object(), jh = nlohmann::json::object();
    for (auto [k, v] : behavior_item_hit) bh[std::to_string(k)] = v;
    for (auto [k, v] : joint_hit) jh[std::to_string(k)] = v;
    j["behavior_item_hit"] = bh;
    j["joint_hit"] = jh;
    return j;
}

BayesReference BayesReference::from_json(const nlohmann::json& j) {
    BayesReference b;
    b.stationary_behavior = j.at("stationary_behavior").get<std::vector<double>>();
    b.next_behavior_accuracy = j.at("next_behavior_accuracy").get<double>();
    for (auto& [k, v] : j.at("behavior_item_hit").items())
        b.behavior_item_hit[std::stoi(k)] = v.get<double>();
    for (auto& [k, v] : j.at("joint_hit").items()) b.joint_hit[std::stoi(k)] = v.get<double>();
    return b;
}

std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& transition) {
    const std::size_t n = transition.size();
    std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
    for (int iter = 0; iter < 100000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) next[j] += pi[i] * transition[i][j];
        double delta = 0.0, sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += next[j];
        for (std::size_t j = 0; j < n; ++j) {
            next[j] /= sum;
            delta = std::max(delta, std::abs(next[j] - pi[j]));
        }
        pi.swap(next);
        if (delta < 1e-14) break;
    }
    return pi;
}

BayesReference bayes_reference(const SyntheticSpec& spec, const std::vector<int>& hit_ks) {
    spec.validate();
    const std::size_t B = spec.behavior_count(), C = spec.cluster_count();
    const auto& T = spec.behavior_transition;
    const auto& M = spec.cluster_transition;

    BayesReference out;
    out.stationary_behavior = stationary_distribution(T);

    // Joint chain over (behavior, cluster) states.
    const std::size_t S = B * C;
    std::vector<std::vector<double>> joint(S, std::vector<double>(S, 0.0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t b2 = 0; b2 < B; ++b2)
                for (std::size_t c2 = 0; c2 < C; ++c2)
                    joint[b * C + c][b2 * C + c2] = T[b][b2] * M[b2][c][c2];
    const std::vector<double> pi_joint = stationary_distribution(joint);

    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double row_max = 0.0;
        for (std::size_t b2 = 0; b2 < B; ++b2) row_max = std::max(row_max, T[b][b2]);
        double pb = 0.0;
        for (std::size_t c = 0; c < C; ++c) pb += pi_joint[b * C + c];
        acc += pb * row_max;
    }
    out.next_behavior_accuracy = acc;

    // Top-K probability mass helpers. Item probabilities within a cluster are
    // uniform, so candidates come as (per-item value, available count) groups.
    auto top_k_mass = [](std::vector<std::pair<double, std::size_t>> groups, int k) {
        std::sort(groups.begin(), groups.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        double mass = 0.0;
        std::size_t left = static_cast<std::size_t>(k);
        for (const auto& [value, count] : groups) {
            const std::size_t take = std::min(left, count);
            mass += value * static_cast<double>(take);
            left -= take;
            if (left == 0) break;
        }
        return mass;
    };

    for (int k : hit_ks) {
        double hit_given_behavior = 0.0;
        double hit_joint = 0.0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double w = pi_joint[b * C + c];
                if (w == 0.0) continue;
                // behavior-specific: true next behavior b2 revealed, rank items
                for (std::size_t b2 = 0; b2 < B; ++b2) {
                    if (T[b][b2] == 0.0) continue;
                    std::vector<std::pair<double, std::size_t>> groups;
                    for (std::size_t c2 = 0; c2 < C; ++c2)
                        groups.emplace_back(M[b2][c][c2] / static_cast<double>(
                                                               spec.cluster_sizes[c2]),
                                            spec.cluster_sizes[c2]);
                    hit_given_behavior += w * T[b][b2] * top_k_mass(std::move(groups), k);
                }
                // joint: rank (behavior, item) pairs together
                std::vector<std::pair<double, std::size_t>> pair_groups;
                for (std::size_t b2 = 0; b2 < B; ++b2)
                    for (std::size_t c2 = 0; c2 < C; ++c2)
                        pair_groups.emplace_back(
                            T[b][b2] * M[b2][c][c2] / static_cast<double>(spec.cluster_sizes[c2]),
                            spec.cluster_sizes[c2]);
                hit_joint += w * top_k_mass(std::move(pair_groups), k);
            }
        out.behavior_item_hit[k] = hit_given_behavior;
        out.joint_hit[k] = hit_joint;
    }
    return out;
}

SyntheticOutput generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t B = spec.behavior_count(), C = spec.cluster_count();
    const std::size_t V = spec.item_count();
    const auto& T = spec.behavior_transition;
    const auto& M = spec.cluster_transition;

    SyntheticOutput out;
    out.bayes = bayes_reference(spec, {1, 5, 10});

    // Item universe: cluster blocks in order, raw ids stable across runs.
    std::vector<std::size_t> cluster_first(C);
    out.item_cluster.resize(V);
    {
        std::size_t next_item = 0;
        for (std::size_t c = 0; c < C; ++c) {
            cluster_first[c] = next_item;
            for (std::size_t i = 0; i < spec.cluster_sizes[c]; ++i)
                out.item_cluster[next_item++] = static_cast<int>(c);
        }
    }

    auto& ds = out.dataset;
    ds.behavior_names = spec.behavior_names;
    ds.target_behavior = spec.target_behavior;
    ds.item_raw_ids.resize(V);
    {
        int width = 1;
        for (std::size_t v = V; v >= 10; v /= 10) ++width;
        for (std::size_t i = 0; i < V; ++i) {
            std::string num = std::to_string(i);
            ds.item_raw_ids[i] = "i" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        }
    }

    // Sequences start at the joint stationary distribution so evaluation-time
    // states match the closed-form reference.
    const std::size_t S = B * C;
    std::vector<std::vector<double>> joint(S, std::vector<double>(S, 0.0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t b2 = 0; b2 < B; ++b2)
                for (std::size_t c2 = 0; c2 < C; ++c2)
                    joint[b * C + c][b2 * C + c2] = T[b][b2] * M[b2][c][c2];
    const std::vector<double> pi_joint = stationary_distribution(joint);

    Rng rng(derive_seed(spec.seed, "synthetic-data"));
    int uwidth = 1;
    for (std::size_t v = spec.num_users; v >= 10; v /= 10) ++uwidth;
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        UserHistory hist;
        std::string num = std::to_string(u);
        hist.raw_id = "u" + std::string(static_cast<std::size_t>(uwidth) - num.size(), '0') + num;
        const std::size_t len = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(spec.min_len),
                            static_cast<std::int64_t>(spec.max_len)));
        std::size_t state = rng.categorical(pi_joint);
        std::size_t b = state / C, c = state % C;
        for (std::size_t t = 0; t < len; ++t) {
            if (t > 0) {
                b = rng.categorical(T[b]);
                c = rng.categorical(M[b][c]);
            }
            const std::size_t item =
                cluster_first[c] + static_cast<std::size_t>(rng.uniform_int(
                                       0, static_cast<std::int64_t>(spec.cluster_sizes[c]) - 1));
            hist.events.push_back({static_cast<int>(item), static_cast<int>(b),
                                   static_cast<std::int64_t>(t + 1)});
        }
        ds.users.push_back(std::move(hist));
    }
    ds.validate();

    // Features: per-cluster Gaussian centroid plus per-item noise.
    Rng frng(derive_seed(spec.seed, "synthetic-features"));
    std::vector<std::vector<double>> centroids(C, std::vector<double>(spec.feature_dim));
    for (auto& ctr : centroids)
        for (auto& v : ctr) v = frng.normal(0.0, spec.centroid_scale);
    out.features.assign(V, std::vector<double>(spec.feature_dim));
    for (std::size_t i = 0; i < V; ++i) {
        const auto& ctr = centroids[static_cast<std::size_t>(out.item_cluster[i])];
        for (std::size_t d = 0; d < spec.feature_dim; ++d)
            out.features[i][d] = ctr[d] + frng.normal(0.0, spec.noise_scale);
    }
    return out;
}

SyntheticSpec planted_spec(std::size_t num_users, std::uint64_t seed) {
    SyntheticSpec s;
    s.num_users = num_users;
    s.seed = seed;
    s.min_len = 6;
    s.max_len = 12;
    s.behavior_names = {"buy", "view", "cart", "wish"};
    s.target_behavior = 0;
    // Every row's most likely next behavior is 0, with probability 0.8.
    s.behavior_transition = {{0.80, 0.10, 0.06, 0.04},
                             {0.80, 0.14, 0.04, 0.02},
                             {0.80, 0.04, 0.13, 0.03},
                             {0.80, 0.05, 0.03, 0.12}};
    // Four large clusters and eight small popular ones.
    s.cluster_sizes = {120, 120, 120, 120, 4, 4, 4, 4, 4, 4, 4, 4};
    const std::size_t C = s.cluster_sizes.size();
    const double spread = 0.2 / static_cast<double>(C);
    auto kernel_towards = [&](auto&& target_of) {
        std::vector<std::vector<double>> k(C, std::vector<double>(C, spread));
        for (std::size_t c = 0; c < C; ++c) k[c][target_of(c)] += 0.8;
        return k;
    };
    s.cluster_transition.resize(4);
    // dominant behavior walks the large clusters in a cycle
    s.cluster_transition[0] =
        kernel_towards([](std::size_t c) { return c < 4 ? (c + 1) % 4 : (c - 4) % 4; });
    // rare behaviors each concentrate on one small cluster
    s.cluster_transition[1] = kernel_towards([](std::size_t) { return std::size_t{4}; });
    s.cluster_transition[2] = kernel_towards([](std::size_t) { return std::size_t{5}; });
    s.cluster_transition[3] = kernel_towards([](std::size_t) { return std::size_t{6}; });
    s.feature_dim = 24;
    s.centroid_scale = 1.0;
    s.noise_scale = 0.08;
    s.validate();
    return s;
}

std::string features_to_tsv(const InteractionDataset& ds,
                            const std::vector<std::vector<double>>& features) {
    if (features.size() != ds.item_count())
        throw ShapeError("features_to_tsv: feature rows do not match item count");
    std::string out = "item";
    if (!features.empty())
        for (std::size_t d = 0; d < features[0].size(); ++d) out += "\tf" + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < features.size(); ++i) {
        out += ds.item_raw_ids[i];
        for (double v : features[i]) {
            out += '\t';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::vector<std::vector<double>> features_from_tsv(const InteractionDataset& ds,
                                                   const std::string& tsv) {
    std::unordered_map<std::string, std::vector<double>> by_raw_id;
    std::size_t line_no = 0, start = 0;
    std::size_t width = 0;
    while (start < tsv.size()) {
        std::size_t end = tsv.find('\n', start);
        if (end == std::string::npos) end = tsv.size();
        std::string line = tsv.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        auto fields = split(line, '\t');
        if (fields[0] == "item") continue;  // header
        if (fields.size() < 2)
            throw DataError("features line " + std::to_string(line_no) + ": no feature columns");
        if (width == 0) width = fields.size() - 1;
        if (fields.size() - 1 != width)
            throw DataError("features line " + std::to_string(line_no) +
                            ": inconsistent column count");
        std::vector<double> row(width);
        for (std::size_t d = 0; d < width; ++d) {
            const std::string& f = fields[d + 1];
            char* parse_end = nullptr;
            row[d] = std::strtod(f.c_str(), &parse_end);
            if (parse_end != f.c_str() + f.size())
                throw DataError("features line " + std::to_string(line_no) + ": bad number '" +
                                f + "'");
        }
        by_raw_id[fields[0]] = std::move(row);
    }
    std::vector<std::vector<double>> out(ds.item_count());
    for (std::size_t i = 0; i < ds.item_count(); ++i) {
        auto it = by_raw_id.find(ds.item_raw_ids[i]);
        if (it == by_raw_id.end())
            throw DataError("features: no row for item " + ds.item_raw_ids[i]);
        out[i] = it->second;
    }
    return out;
}

}  // namespace mbrec::data
