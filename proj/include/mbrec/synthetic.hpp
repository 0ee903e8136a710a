#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <json.hpp>

#include "mbrec/dataset.hpp"

namespace mbrec::data {

// Markov-structured interaction generator: behaviors follow a first-order chain,
// items live in clusters, and the next item's cluster depends on the previous
// item's cluster through a per-behavior transition kernel. Item features are
// Gaussian blobs around per-cluster centroids, so cluster structure is
// recoverable from features alone.
struct SyntheticSpec {
    std::size_t num_users = 200;
    std::size_t min_len = 6;
    std::size_t max_len = 12;
    std::vector<std::string> behavior_names;                        // size B
    std::vector<std::vector<double>> behavior_transition;           // B x B rows sum to 1
    std::vector<std::size_t> cluster_sizes;                         // size C, sums to item count
    std::vector<std::vector<std::vector<double>>> cluster_transition;  // B x C x C rows sum to 1
    std::size_t feature_dim = 24;
    double centroid_scale = 1.0;
    double noise_scale = 0.08;
    int target_behavior = 0;
    std::uint64_t seed = 1;

    std::size_t behavior_count() const { return behavior_names.size(); }
    std::size_t cluster_count() const { return cluster_sizes.size(); }
    std::size_t item_count() const;
    void validate() const;

    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
};

// Closed-form performance of the Bayes-optimal predictor on the generating
// process, evaluated at stationarity.
struct BayesReference {
    std::vector<double> stationary_behavior;
    double next_behavior_accuracy = 0.0;
    std::map<int, double> behavior_item_hit;  // item hit@K given the true next behavior
    std::map<int, double> joint_hit;          // (behavior, item) pair hit@K

    nlohmann::json to_json() const;
    static BayesReference from_json(const nlohmann::json& j);
};

struct SyntheticOutput {
    InteractionDataset dataset;
    std::vector<std::vector<double>> features;  // by internal item index
    std::vector<int> item_cluster;              // by internal item index
    BayesReference bayes;
};

BayesReference bayes_reference(const SyntheticSpec& spec, const std::vector<int>& hit_ks);
SyntheticOutput generate_synthetic(const SyntheticSpec& spec);

// Stationary distribution of a row-stochastic matrix by power iteration.
std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& transition);

// Planted configuration used by examples and end-to-end checks: a dominant
// behavior routes to large clusters while rare behaviors concentrate on small
// popular clusters, which separates beam strategies measurably.
SyntheticSpec planted_spec(std::size_t num_users, std::uint64_t seed);

// Writes features as TSV (item raw id, then one column per dimension).
std::string features_to_tsv(const InteractionDataset& ds,
                            const std::vector<std::vector<double>>& features);
// Loads features for exactly the items in ds; missing items are an error.
std::vector<std::vector<double>> features_from_tsv(const InteractionDataset& ds,
                                                   const std::string& tsv);

}  // namespace mbrec::data
