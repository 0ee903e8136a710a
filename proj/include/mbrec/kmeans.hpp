#pragma once

#include <vector>

#include "mbrec/rng.hpp"

namespace mbrec::tok {

struct KMeansResult {
    std::vector<int> labels;
    std::vector<std::vector<double>> centroids;
    std::size_t iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. Deterministic given the RNG state:
// distance ties assign to the lowest centroid index, and an emptied cluster is
// re-seeded with the point farthest from its current centroid. Stops when the
// total centroid shift relative to the total centroid norm drops below tol.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::size_t max_iters, double tol, Rng& rng);

}  // namespace mbrec::tok
