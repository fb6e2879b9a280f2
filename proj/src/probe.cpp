#include "cemlab/probe.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

#include "cemlab/rng.hpp"

namespace cemlab {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Part {
    Matrix x;
    Eigen::MatrixXd t;  // rows x targets
};

Part gather(const Array& feats, const Array& targets, const std::vector<std::size_t>& rows) {
    Part p{Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feats.cols())),
           Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(targets.cols()))};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < feats.cols(); ++c) p.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = feats(rows[i], c);
        for (std::size_t c = 0; c < targets.cols(); ++c) {
            p.t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = targets(rows[i], c);
        }
    }
    return p;
}

double mean_bce(const Eigen::VectorXd& z, const Eigen::VectorXd& t) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) s += softplus(z(i)) - t(i) * z(i);
    return s / static_cast<double>(z.size());
}

double accuracy(const Eigen::VectorXd& z, const Eigen::VectorXd& t) {
    double hits = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) hits += ((z(i) > 0.0 ? 1.0 : 0.0) == t(i)) ? 1.0 : 0.0;
    return hits / static_cast<double>(z.size());
}

}  // namespace

std::vector<ProbeResult> linear_probe(const Array& bottlenecks, const Array& targets, std::span<const Split> split,
                                      const ProbeOptions& opts) {
    const std::size_t n = bottlenecks.rows();
    if (targets.rows() != n || split.size() != n) throw Error("linear_probe: row counts disagree");
    for (double v : targets.data) {
        if (v != 0.0 && v != 1.0) throw Error("linear_probe: targets must be 0/1");
    }
    std::vector<std::size_t> rows[3];
    for (std::size_t r = 0; r < n; ++r) rows[static_cast<int>(split[r])].push_back(r);
    const auto& tr_rows = rows[static_cast<int>(Split::Train)];
    const auto& va_rows = rows[static_cast<int>(Split::Val)];
    const auto& te_rows = rows[static_cast<int>(Split::Test)];
    if (tr_rows.empty() || va_rows.empty() || te_rows.empty()) {
        throw Error("linear_probe: train, val and test splits must all be non-empty");
    }

    Part tr = gather(bottlenecks, targets, tr_rows);
    Part va = gather(bottlenecks, targets, va_rows);
    Part te = gather(bottlenecks, targets, te_rows);
    const Eigen::RowVectorXd mu = tr.x.colwise().mean();
    Eigen::RowVectorXd sd = ((tr.x.rowwise() - mu).array().square().colwise().sum() /
                             static_cast<double>(tr.x.rows())).sqrt();
    for (Eigen::Index c = 0; c < sd.size(); ++c) {
        if (!(sd(c) > 1e-12)) sd(c) = 1.0;
    }
    for (Part* p : {&tr, &va, &te}) p->x = ((p->x.rowwise() - mu).array().rowwise() / sd.array()).matrix();

    const std::size_t width = bottlenecks.cols();
    std::vector<ProbeResult> results;
    for (std::size_t j = 0; j < targets.cols(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const Eigen::VectorXd t_tr = tr.t.col(col);
        const Eigen::VectorXd t_va = va.t.col(col);
        const Eigen::VectorXd t_te = te.t.col(col);
        const double pos = t_tr.sum();
        ProbeResult res;
        if (pos == 0.0 || pos == static_cast<double>(t_tr.size())) {
            const double majority = pos > 0.0 ? 1.0 : 0.0;
            res.degenerate = true;
            res.accuracy = (t_te.array() == majority).cast<double>().mean();
            results.push_back(res);
            continue;
        }

        Optimizer opt(opts.optimizer, 0.0);
        Array w({width, 1}, 0.0);
        Array b({1, 1}, 0.0);
        Array best_w = w, best_b = b;
        double best = std::numeric_limits<double>::infinity();
        double reference = best;
        std::size_t stale = 0;
        CounterRng rng(derive_seed(opts.seed, "probe", j));
        for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
            const std::vector<std::size_t> order = permutation(tr_rows.size(), rng);
            for (std::size_t s = 0; s < order.size(); s += opts.batch_size) {
                const std::size_t e = std::min(order.size(), s + opts.batch_size);
                Matrix xb(static_cast<Eigen::Index>(e - s), static_cast<Eigen::Index>(width));
                Eigen::VectorXd tb(static_cast<Eigen::Index>(e - s));
                for (std::size_t i = s; i < e; ++i) {
                    xb.row(static_cast<Eigen::Index>(i - s)) = tr.x.row(static_cast<Eigen::Index>(order[i]));
                    tb(static_cast<Eigen::Index>(i - s)) = t_tr(static_cast<Eigen::Index>(order[i]));
                }
                const Eigen::Map<const Eigen::VectorXd> wv(w.data.data(), static_cast<Eigen::Index>(width));
                const Eigen::VectorXd z = (xb * wv).array() + b.data[0];
                Eigen::VectorXd r(z.size());
                for (Eigen::Index i = 0; i < z.size(); ++i) r(i) = stable_sigmoid(z(i)) - tb(i);
                r /= static_cast<double>(z.size());
                const Eigen::VectorXd gw = xb.transpose() * r;
                Array grad_w({width, 1}, std::vector<double>(gw.data(), gw.data() + gw.size()));
                opt.step("w", w, grad_w);
                opt.step("b", b, Array({1, 1}, r.sum()));
            }
            const Eigen::Map<const Eigen::VectorXd> wv(w.data.data(), static_cast<Eigen::Index>(width));
            const double val = mean_bce((va.x * wv).array() + b.data[0], t_va);
            res.epochs = epoch;
            if (!std::isfinite(val)) throw Error("linear_probe: non-finite validation loss");
            if (val < best) {
                best = val;
                best_w = w;
                best_b = b;
            }
            if (val < reference - opts.min_improvement) {
                reference = val;
                stale = 0;
            } else if (++stale >= opts.early_stop_patience) {
                break;
            }
        }
        const Eigen::Map<const Eigen::VectorXd> wv(best_w.data.data(), static_cast<Eigen::Index>(width));
        res.accuracy = accuracy((te.x * wv).array() + best_b.data[0], t_te);
        results.push_back(res);
    }
    return results;
}

}  // namespace cemlab
