#include "mbrec/ops.hpp"

#include <cmath>
#include <string>

namespace mbrec::nn {

namespace {

void require_2d(const Tensor& t, const char* op, const char* arg) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(op) + ": " + arg + " must be 2-D, got " + t.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

bool wants_grad(GradientTape* tape, const Tensor& a) { return tape && a.requires_grad(); }
bool wants_grad(GradientTape* tape, const Tensor& a, const Tensor& b) {
    return tape && (a.requires_grad() || b.requires_grad());
}

}  // namespace

Tensor matmul(GradientTape* tape, const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul", "a");
    require_2d(b, "matmul", "b");
    const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
    if (b.rows() != K)
        throw ShapeError("matmul: inner dimensions differ, " + a.shape_string() + " * " +
                         b.shape_string());
    Tensor out = Tensor::zeros({M, N});
    {
        const scalar* av = a.values();
        const scalar* bv = b.values();
        scalar* ov = out.values();
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const scalar amk = av[m * K + k];
                if (amk == 0.0) continue;
                const scalar* brow = bv + k * N;
                scalar* orow = ov + m * N;
                for (std::size_t n = 0; n < N; ++n) orow[n] += amk * brow[n];
            }
    }
    if (wants_grad(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, M, K, N]() mutable {
            const scalar* og = oc.grad();
            if (ac.requires_grad()) {
                scalar* ag = ac.grad();
                const scalar* bv = bc.values();
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t k = 0; k < K; ++k) {
                        const scalar* brow = bv + k * N;
                        const scalar* orow = og + m * N;
                        scalar acc = 0.0;
                        for (std::size_t n = 0; n < N; ++n) acc += orow[n] * brow[n];
                        ag[m * K + k] += acc;
                    }
            }
            if (bc.requires_grad()) {
                scalar* bg = bc.grad();
                const scalar* av = ac.values();
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t k = 0; k < K; ++k) {
                        const scalar amk = av[m * K + k];
                        if (amk == 0.0) continue;
                        const scalar* orow = og + m * N;
                        scalar* brow = bg + k * N;
                        for (std::size_t n = 0; n < N; ++n) brow[n] += amk * orow[n];
                    }
            }
        });
    }
    return out;
}

Tensor matmul_nt(GradientTape* tape, const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt", "a");
    require_2d(b, "matmul_nt", "b");
    const std::size_t M = a.rows(), K = a.cols(), N = b.rows();
    if (b.cols() != K)
        throw ShapeError("matmul_nt: column counts differ, " + a.shape_string() + " vs " +
                         b.shape_string());
    Tensor out = Tensor::zeros({M, N});
    {
        const scalar* av = a.values();
        const scalar* bv = b.values();
        scalar* ov = out.values();
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const scalar* arow = av + m * K;
                const scalar* brow = bv + n * K;
                scalar acc = 0.0;
                for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
                ov[m * N + n] = acc;
            }
    }
    if (wants_grad(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, M, K, N]() mutable {
            const scalar* og = oc.grad();
            if (ac.requires_grad()) {
                scalar* ag = ac.grad();
                const scalar* bv = bc.values();
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t n = 0; n < N; ++n) {
                        const scalar g = og[m * N + n];
                        if (g == 0.0) continue;
                        const scalar* brow = bv + n * K;
                        scalar* arow = ag + m * K;
                        for (std::size_t k = 0; k < K; ++k) arow[k] += g * brow[k];
                    }
            }
            if (bc.requires_grad()) {
                scalar* bg = bc.grad();
                const scalar* av = ac.values();
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t n = 0; n < N; ++n) {
                        const scalar g = og[m * N + n];
                        if (g == 0.0) continue;
                        const scalar* arow = av + m * K;
                        scalar* brow = bg + n * K;
                        for (std::size_t k = 0; k < K; ++k) brow[k] += g * arow[k];
                    }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_elementwise(GradientTape* tape, const Tensor& a, const Tensor& b, const char* name,
                          Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    require_same_shape(a, b, name);
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = fwd(a.at(i), b.at(i));
    if (wants_grad(tape, a, b)) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, n, bwd_a, bwd_b]() mutable {
            const scalar* og = oc.grad();
            if (ac.requires_grad()) {
                scalar* ag = ac.grad();
                for (std::size_t i = 0; i < n; ++i) ag[i] += bwd_a(ac.at(i), bc.at(i)) * og[i];
            }
            if (bc.requires_grad()) {
                scalar* bg = bc.grad();
                for (std::size_t i = 0; i < n; ++i) bg[i] += bwd_b(ac.at(i), bc.at(i)) * og[i];
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(GradientTape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "add", [](scalar x, scalar y) { return x + y; },
        [](scalar, scalar) { return 1.0; }, [](scalar, scalar) { return 1.0; });
}

Tensor sub(GradientTape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "sub", [](scalar x, scalar y) { return x - y; },
        [](scalar, scalar) { return 1.0; }, [](scalar, scalar) { return -1.0; });
}

Tensor mul(GradientTape* tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "mul", [](scalar x, scalar y) { return x * y; },
        [](scalar, scalar y) { return y; }, [](scalar x, scalar) { return x; });
}

Tensor scale(GradientTape* tape, const Tensor& a, scalar c) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.values()[i] = a.at(i) * c;
    if (wants_grad(tape, a)) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, c]() mutable {
            scalar* ag = ac.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < ac.numel(); ++i) ag[i] += c * og[i];
        });
    }
    return out;
}

Tensor add_bias(GradientTape* tape, const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_bias", "x");
    if (bias.ndim() != 1 || bias.numel() != x.cols())
        throw ShapeError("add_bias: bias " + bias.shape_string() + " does not match columns of " +
                         x.shape_string());
    const std::size_t N = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros({N, D});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    if (wants_grad(tape, x, bias)) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = bias, oc = out;
        tape->record([xc, bc, oc, N, D]() mutable {
            const scalar* og = oc.grad();
            if (xc.requires_grad()) {
                scalar* xg = xc.grad();
                for (std::size_t i = 0; i < N * D; ++i) xg[i] += og[i];
            }
            if (bc.requires_grad()) {
                scalar* bg = bc.grad();
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < D; ++j) bg[j] += og[i * D + j];
            }
        });
    }
    return out;
}

Tensor relu(GradientTape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = x.at(i) > 0.0 ? x.at(i) : 0.0;
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < xc.numel(); ++i)
                if (xc.at(i) > 0.0) xg[i] += og[i];
        });
    }
    return out;
}

Tensor softmax_rows(GradientTape* tape, const Tensor& x) {
    require_2d(x, "softmax_rows", "x");
    const std::size_t N = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros({N, D});
    for (std::size_t i = 0; i < N; ++i) {
        scalar mx = x.at(i, 0);
        for (std::size_t j = 1; j < D; ++j) mx = std::max(mx, x.at(i, j));
        scalar denom = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            scalar e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < D; ++j) out.at(i, j) /= denom;
    }
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, N, D]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            const scalar* ov = oc.values();
            for (std::size_t i = 0; i < N; ++i) {
                scalar dot = 0.0;
                for (std::size_t j = 0; j < D; ++j) dot += og[i * D + j] * ov[i * D + j];
                for (std::size_t j = 0; j < D; ++j)
                    xg[i * D + j] += (og[i * D + j] - dot) * ov[i * D + j];
            }
        });
    }
    return out;
}

Tensor layer_norm(GradientTape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  scalar eps) {
    require_2d(x, "layer_norm", "x");
    const std::size_t N = x.rows(), D = x.cols();
    if (gain.numel() != D || bias.numel() != D)
        throw ShapeError("layer_norm: gain/bias do not match feature width of " +
                         x.shape_string());
    Tensor out = Tensor::zeros({N, D});
    Tensor xhat = Tensor::zeros({N, D});
    std::vector<scalar> inv_std(N);
    for (std::size_t i = 0; i < N; ++i) {
        scalar mean = 0.0;
        for (std::size_t j = 0; j < D; ++j) mean += x.at(i, j);
        mean /= static_cast<scalar>(D);
        scalar var = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            scalar d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<scalar>(D);
        const scalar is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < D; ++j) {
            scalar xh = (x.at(i, j) - mean) * is;
            xhat.at(i, j) = xh;
            out.at(i, j) = gain.at(j) * xh + bias.at(j);
        }
    }
    if (tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gain, bc = bias, oc = out, xh = xhat;
        tape->record([xc, gc, bc, oc, xh, inv_std, N, D]() mutable {
            const scalar* og = oc.grad();
            const scalar* xhv = xh.values();
            if (gc.requires_grad()) {
                scalar* gg = gc.grad();
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < D; ++j) gg[j] += og[i * D + j] * xhv[i * D + j];
            }
            if (bc.requires_grad()) {
                scalar* bg = bc.grad();
                for (std::size_t i = 0; i < N; ++i)
                    for (std::size_t j = 0; j < D; ++j) bg[j] += og[i * D + j];
            }
            if (xc.requires_grad()) {
                scalar* xg = xc.grad();
                const scalar Dd = static_cast<scalar>(D);
                for (std::size_t i = 0; i < N; ++i) {
                    scalar sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < D; ++j) {
                        scalar dxhat = og[i * D + j] * gc.at(j);
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhv[i * D + j];
                    }
                    for (std::size_t j = 0; j < D; ++j) {
                        scalar dxhat = og[i * D + j] * gc.at(j);
                        xg[i * D + j] += inv_std[i] / Dd *
                                         (Dd * dxhat - sum_dxhat -
                                          xhv[i * D + j] * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding_gather(GradientTape* tape, const Tensor& table, const std::vector<int>& ids) {
    require_2d(table, "embedding_gather", "table");
    const std::size_t R = table.rows(), D = table.cols(), N = ids.size();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= R)
            throw ShapeError("embedding_gather: id " + std::to_string(id) +
                             " outside table with " + std::to_string(R) + " rows");
    Tensor out = Tensor::zeros({N, D});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j) out.at(i, j) = table.at(ids[i], j);
    if (wants_grad(tape, table)) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        tape->record([tc, oc, ids, N, D]() mutable {
            scalar* tg = tc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < D; ++j)
                    tg[static_cast<std::size_t>(ids[i]) * D + j] += og[i * D + j];
        });
    }
    return out;
}

Tensor gather_rows(GradientTape* tape, const Tensor& x, const std::vector<std::size_t>& idx) {
    require_2d(x, "gather_rows", "x");
    const std::size_t R = x.rows(), D = x.cols(), N = idx.size();
    for (std::size_t i : idx)
        if (i >= R)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " outside " +
                             x.shape_string());
    Tensor out = Tensor::zeros({N, D});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j) out.at(i, j) = x.at(idx[i], j);
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, idx, N, D]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < D; ++j) xg[idx[i] * D + j] += og[i * D + j];
        });
    }
    return out;
}

Tensor scatter_rows(GradientTape* tape, const Tensor& x, const std::vector<std::size_t>& idx,
                    std::size_t n_rows) {
    require_2d(x, "scatter_rows", "x");
    const std::size_t N = x.rows(), D = x.cols();
    if (idx.size() != N)
        throw ShapeError("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                         std::to_string(N) + " rows");
    for (std::size_t i : idx)
        if (i >= n_rows)
            throw ShapeError("scatter_rows: index " + std::to_string(i) + " outside " +
                             std::to_string(n_rows) + " output rows");
    Tensor out = Tensor::zeros({n_rows, D});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < D; ++j) out.at(idx[i], j) += x.at(i, j);
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, idx, N, D]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < D; ++j) xg[i * D + j] += og[idx[i] * D + j];
        });
    }
    return out;
}

Tensor concat_cols(GradientTape* tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t N = parts[0].rows();
    std::size_t total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols", "part");
        if (p.rows() != N)
            throw ShapeError("concat_cols: row counts differ, " + parts[0].shape_string() +
                             " vs " + p.shape_string());
        total += p.cols();
        any_grad = any_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({N, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t D = p.cols();
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < D; ++j) out.at(i, off + j) = p.at(i, j);
        off += D;
    }
    if (tape && any_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        tape->record([pc, oc, N, total]() mutable {
            const scalar* og = oc.grad();
            std::size_t off = 0;
            for (auto& p : pc) {
                const std::size_t D = p.cols();
                if (p.requires_grad()) {
                    scalar* pg = p.grad();
                    for (std::size_t i = 0; i < N; ++i)
                        for (std::size_t j = 0; j < D; ++j)
                            pg[i * D + j] += og[i * total + off + j];
                }
                off += D;
            }
        });
    }
    return out;
}

Tensor slice_cols(GradientTape* tape, const Tensor& x, std::size_t start, std::size_t width) {
    require_2d(x, "slice_cols", "x");
    const std::size_t N = x.rows(), D = x.cols();
    if (start + width > D)
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") outside " + x.shape_string());
    Tensor out = Tensor::zeros({N, width});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < width; ++j) out.at(i, j) = x.at(i, start + j);
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, start, width, N, D]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < width; ++j)
                    xg[i * D + start + j] += og[i * width + j];
        });
    }
    return out;
}

Tensor sum_squares(GradientTape* tape, const Tensor& x) {
    scalar total = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) total += x.at(i) * x.at(i);
    Tensor out = Tensor::scalar_value(total);
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            scalar* xg = xc.grad();
            const scalar g = oc.grad()[0];
            for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += 2.0 * xc.at(i) * g;
        });
    }
    return out;
}

Tensor dropout(GradientTape* tape, const Tensor& x, scalar rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    const scalar keep = 1.0 - rate;
    std::vector<scalar> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = x.at(i) * mask[i];
    if (wants_grad(tape, x)) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, mask = std::move(mask)]() mutable {
            scalar* xg = xc.grad();
            const scalar* og = oc.grad();
            for (std::size_t i = 0; i < xc.numel(); ++i) xg[i] += og[i] * mask[i];
        });
    }
    return out;
}

CrossEntropyResult softmax_cross_entropy(GradientTape* tape, const Tensor& logits,
                                         const std::vector<int>& targets, int ignore_index) {
    require_2d(logits, "softmax_cross_entropy", "logits");
    const std::size_t N = logits.rows(), V = logits.cols();
    if (targets.size() != N)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(N) + " rows");
    for (int t : targets)
        if (t != ignore_index && (t < 0 || static_cast<std::size_t>(t) >= V))
            throw ShapeError("softmax_cross_entropy: target " + std::to_string(t) +
                             " outside vocabulary of " + std::to_string(V));

    Tensor probs = Tensor::zeros({N, V});
    int counted = 0;
    scalar total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (targets[i] == ignore_index) continue;
        ++counted;
        scalar mx = logits.at(i, 0);
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, logits.at(i, j));
        scalar denom = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            scalar e = std::exp(logits.at(i, j) - mx);
            probs.at(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < V; ++j) probs.at(i, j) /= denom;
        total += std::log(denom) + mx - logits.at(i, static_cast<std::size_t>(targets[i]));
    }

    CrossEntropyResult result;
    result.counted = counted;
    if (counted == 0) {
        result.all_ignored = true;
        result.loss = Tensor::scalar_value(0.0);
        return result;
    }
    result.loss = Tensor::scalar_value(total / counted);
    if (wants_grad(tape, logits)) {
        result.loss.set_requires_grad(true);
        Tensor lc = logits, oc = result.loss, pc = probs;
        tape->record([lc, oc, pc, targets, ignore_index, counted, N, V]() mutable {
            scalar* lg = lc.grad();
            const scalar g = oc.grad()[0] / counted;
            const scalar* pv = pc.values();
            for (std::size_t i = 0; i < N; ++i) {
                if (targets[i] == ignore_index) continue;
                for (std::size_t j = 0; j < V; ++j) lg[i * V + j] += g * pv[i * V + j];
                lg[i * V + static_cast<std::size_t>(targets[i])] -= g;
            }
        });
    }
    return result;
}

}  // namespace mbrec::nn
