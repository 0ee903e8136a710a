#include "mbrec/kmeans.hpp"

#include <cmath>
#include <limits>

#include "mbrec/common.hpp"

namespace mbrec::tok {

namespace {

double dist2(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::size_t max_iters, double tol, Rng& rng) {
    const std::size_t n = points.size();
    if (n == 0) throw ConfigError("kmeans: no points");
    if (k == 0 || k > n)
        throw ConfigError("kmeans: k=" + std::to_string(k) + " for " + std::to_string(n) +
                          " points");
    const std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw ShapeError("kmeans: ragged point dimensions");

    KMeansResult res;
    res.centroids.reserve(k);

    // k-means++ seeding
    res.centroids.push_back(points[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
    std::vector<double> nearest(n, std::numeric_limits<double>::max());
    while (res.centroids.size() < k) {
        const auto& latest = res.centroids.back();
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], dist2(points[i], latest));
        double total = 0.0;
        for (double d : nearest) total += d;
        std::size_t pick;
        if (total <= 0.0) {
            // all remaining points coincide with chosen centroids
            pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        } else {
            double u = rng.uniform() * total, acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        }
        res.centroids.push_back(points[pick]);
    }

    res.labels.assign(n, 0);
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim));
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        res.iterations = iter + 1;
        // assign, ties to the lowest index
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            int pick = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = dist2(points[i], res.centroids[c]);
                if (d < best) {
                    best = d;
                    pick = static_cast<int>(c);
                }
            }
            res.labels[i] = pick;
        }
        for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto c = static_cast<std::size_t>(res.labels[i]);
            ++counts[c];
            for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
        }
        // an emptied cluster takes the point farthest from its centroid
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            double worst = -1.0;
            std::size_t pick = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[static_cast<std::size_t>(res.labels[i])] <= 1) continue;
                const double d =
                    dist2(points[i], res.centroids[static_cast<std::size_t>(res.labels[i])]);
                if (d > worst) {
                    worst = d;
                    pick = i;
                }
            }
            const auto old = static_cast<std::size_t>(res.labels[pick]);
            --counts[old];
            for (std::size_t d = 0; d < dim; ++d) sums[old][d] -= points[pick][d];
            res.labels[pick] = static_cast<int>(c);
            counts[c] = 1;
            sums[c] = points[pick];
        }

        double shift = 0.0, base = 1e-12;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double updated = sums[c][d] / static_cast<double>(counts[c]);
                shift += std::abs(updated - res.centroids[c][d]);
                base += std::abs(res.centroids[c][d]);
                res.centroids[c][d] = updated;
            }
        }
        if (shift / base < tol) break;
    }
    // final assignment against the settled centroids
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        int pick = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = dist2(points[i], res.centroids[c]);
            if (d < best) {
                best = d;
                pick = static_cast<int>(c);
            }
        }
        res.labels[i] = pick;
    }
    return res;
}

}  // namespace mbrec::tok
