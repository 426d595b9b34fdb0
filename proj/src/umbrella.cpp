#include "mcs/umbrella.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

namespace mcs {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    if (m == kNegInf) return kNegInf;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string join(const RowVector& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(v(i));
    return out;
}

double uniform_open(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double x;
    do x = u(rng);
    while (x <= 0.0 || x >= 1.0);
    return x;
}

}  // namespace

RowVector relax_block(const RowVector& logits, double tau, const RowVector& noise) {
    if (!(tau > 0)) throw UserError("gumbel temperature must be positive");
    if (noise.size() != logits.size()) throw ShapeError("relax_block: noise and logits differ in width");
    if ((noise.array() <= 0.0).any() || (noise.array() >= 1.0).any())
        throw UserError("gumbel noise must lie strictly inside (0, 1)");
    RowVector y = (logits.array() - (-noise.array().log()).log()) / tau;
    y.array() -= y.maxCoeff();
    y = y.array().exp().matrix();
    return y / y.sum();
}

RowVector relax_instance(const RowVector& encoded, const DataSchema& schema, double tau, Rng& rng) {
    if (!(tau > 0)) throw UserError("gumbel temperature must be positive");
    if (encoded.size() != schema.width()) throw ShapeError("relax_instance: width does not match schema");
    RowVector out = encoded;
    for (int a = 0; a < schema.size(); ++a) {
        const auto& spec = schema.attribute(a);
        if (spec.kind != AttributeKind::Categorical) continue;
        const Block b = schema.block(a);
        Eigen::Index c;
        encoded.segment(b.offset, b.width).maxCoeff(&c);
        RowVector phi(b.width);
        for (int j = 0; j < b.width; ++j) phi(j) = std::log(std::max(spec.frequencies(j), 1e-12));
        double lse = kNegInf;
        for (int j = 0; j < b.width; ++j) lse = log_sum_exp(lse, phi(j));
        // The maximum of the perturbed logits is Gumbel(lse); the others are
        // Gumbel(phi_j) truncated below it.
        RowVector perturbed(b.width);
        const double top = lse - std::log(-std::log(uniform_open(rng)));
        for (int j = 0; j < b.width; ++j) {
            if (j == c) {
                perturbed(j) = top;
                continue;
            }
            perturbed(j) = -log_sum_exp(-top, -phi(j) + std::log(-std::log(uniform_open(rng))));
        }
        RowVector y = perturbed / tau;
        y.array() -= y.maxCoeff();
        y = y.array().exp().matrix();
        out.segment(b.offset, b.width) = y / y.sum();
    }
    return out;
}

// ---------------------------------------------------------------- focus space

int FocusSpace::width(const DataSchema& schema, int focus) const {
    return categorical(schema, focus) ? schema.attribute(attributes[focus]).width() : 1;
}

bool FocusSpace::categorical(const DataSchema& schema, int focus) const {
    return schema.attribute(attributes[focus]).kind == AttributeKind::Categorical;
}

RowVector FocusSpace::project(const Eigen::Ref<const RowVector>& encoded, const DataSchema& schema) const {
    RowVector p(dim);
    for (std::size_t f = 0; f < attributes.size(); ++f) {
        const auto& spec = schema.attribute(attributes[f]);
        const Block b = schema.block(attributes[f]);
        if (spec.kind == AttributeKind::Categorical) {
            p.segment(offsets[f], b.width) = encoded.segment(b.offset, b.width);
        } else {
            const int k = spec.gmm.modes();
            auto modes = encoded.segment(b.offset, k);
            const double mu = modes.dot(spec.gmm.means.transpose());
            const double sd = modes.dot(spec.gmm.stds.transpose());
            const double raw = mu + 4.0 * sd * encoded(b.offset + k);
            p(offsets[f]) = (raw - center[f]) / spread[f];
        }
    }
    return p;
}

bool FocusSpace::feasible(const RowVector& point, const DataSchema& schema) const {
    for (std::size_t f = 0; f < attributes.size(); ++f) {
        if (!categorical(schema, static_cast<int>(f))) continue;
        auto seg = point.segment(offsets[f], width(schema, static_cast<int>(f)));
        if ((seg.array() < 0.0).any() || (seg.array() > 1.0).any()) return false;
    }
    return point.allFinite();
}

FocusSpace make_focus_space(const DataSchema& schema, const std::vector<std::string>& names, const Matrix& encoded) {
    if (names.empty()) throw UserError("umbrella sampling needs at least one focus attribute");
    FocusSpace fs;
    for (const auto& n : names) {
        const int a = schema.index_of(n);
        if (std::find(fs.attributes.begin(), fs.attributes.end(), a) != fs.attributes.end())
            throw UserError("focus attribute listed twice: " + n);
        fs.attributes.push_back(a);
    }
    fs.center.assign(fs.attributes.size(), 0.0);
    fs.spread.assign(fs.attributes.size(), 1.0);
    for (std::size_t f = 0; f < fs.attributes.size(); ++f) {
        const auto& spec = schema.attribute(fs.attributes[f]);
        fs.offsets.push_back(fs.dim);
        if (spec.kind == AttributeKind::Categorical) {
            fs.dim += spec.width();
            fs.intrinsic_dim += spec.width() - 1;
            continue;
        }
        fs.dim += 1;
        fs.intrinsic_dim += 1;
    }
    // Standardization of continuous coordinates from the hard rows.
    FocusSpace raw = fs;
    Matrix p(encoded.rows(), fs.dim);
    for (Eigen::Index r = 0; r < encoded.rows(); ++r) p.row(r) = raw.project(encoded.row(r), schema);
    for (std::size_t f = 0; f < fs.attributes.size(); ++f) {
        if (fs.categorical(schema, static_cast<int>(f)) || p.rows() == 0) continue;
        auto col = p.col(fs.offsets[f]);
        const double m = col.mean();
        const double sd = std::sqrt((col.array() - m).square().mean());
        fs.center[f] = m;
        fs.spread[f] = sd > 1e-12 ? sd : 1.0;
    }
    return fs;
}

// ---------------------------------------------------------------- windows

double UmbrellaWindow::log_u(const RowVector& point) const {
    double s = 0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double d = (point(coords[i]) - center(i)) / width(i);
        s += d * d;
    }
    return -0.5 * s;
}

double UmbrellaWindow::u(const RowVector& point) const { return std::exp(log_u(point)); }

std::vector<UmbrellaWindow> make_windows(const FocusSpace& focus, const DataSchema& schema, const Matrix& points,
                                         int budget, double categorical_width, double continuous_width) {
    std::vector<UmbrellaWindow> out;
    int categorical_total = 0, continuous_count = 0;
    for (std::size_t f = 0; f < focus.attributes.size(); ++f) {
        if (focus.categorical(schema, static_cast<int>(f)))
            categorical_total += focus.width(schema, static_cast<int>(f));
        else
            ++continuous_count;
    }
    const int per_continuous = continuous_count == 0 ? 0 : std::max(2, (budget - categorical_total) / continuous_count);

    for (std::size_t f = 0; f < focus.attributes.size(); ++f) {
        const int fi = static_cast<int>(f);
        const auto& spec = schema.attribute(focus.attributes[f]);
        const int off = focus.offsets[f];
        if (focus.categorical(schema, fi)) {
            const int k = spec.width();
            const double w = categorical_width * std::sqrt(2.0);
            for (int c = 0; c < k; ++c) {
                UmbrellaWindow win;
                win.focus = fi;
                for (int j = 0; j < k; ++j) win.coords.push_back(off + j);
                win.center = RowVector::Zero(k);
                win.center(c) = 1.0;
                win.width = RowVector::Constant(k, w);
                win.label = spec.name + "=" + spec.categories[c];
                out.push_back(std::move(win));
            }
            continue;
        }
        std::vector<double> col(points.rows());
        for (Eigen::Index r = 0; r < points.rows(); ++r) col[r] = points(r, off);
        std::sort(col.begin(), col.end());
        if (col.empty()) throw UserError("cannot place windows without data");
        std::vector<double> centers(per_continuous);
        for (int i = 0; i < per_continuous; ++i) {
            const double q = (i + 0.5) / per_continuous;
            const double pos = q * (static_cast<double>(col.size()) - 1.0);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, col.size() - 1);
            centers[i] = col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
        }
        for (int i = 0; i < per_continuous; ++i) {
            double gap = 0;
            int gaps = 0;
            if (i > 0) gap += centers[i] - centers[i - 1], ++gaps;
            if (i + 1 < per_continuous) gap += centers[i + 1] - centers[i], ++gaps;
            const double spacing = std::max(gaps ? gap / gaps : 1.0, 1e-3);
            UmbrellaWindow win;
            win.focus = fi;
            win.coords = {off};
            win.center = RowVector::Constant(1, centers[i]);
            win.width = RowVector::Constant(1, continuous_width * spacing);
            win.label = spec.name + "~" + fmt(centers[i] * focus.spread[f] + focus.center[f]);
            out.push_back(std::move(win));
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].index = static_cast<int>(i);
    return out;
}

// ---------------------------------------------------------------- density

KernelDensity::KernelDensity(Matrix points, int intrinsic_dim) : points_(std::move(points)) {
    if (points_.rows() == 0) throw UserError("kernel density needs reference points");
    const double n = static_cast<double>(points_.rows());
    const double factor = std::pow(n, -1.0 / (std::max(intrinsic_dim, 1) + 4.0));
    bandwidth_.resize(points_.cols());
    for (Eigen::Index c = 0; c < points_.cols(); ++c) {
        const double m = points_.col(c).mean();
        const double sd = std::sqrt((points_.col(c).array() - m).square().sum() / std::max(n - 1.0, 1.0));
        bandwidth_(c) = std::max(sd, 1e-3) * factor;
    }
}

double KernelDensity::log_density(const RowVector& x) const {
    Eigen::ArrayXd q =
        -0.5 * ((points_.rowwise() - x).array().rowwise() / bandwidth_.array()).square().rowwise().sum();
    const double m = q.maxCoeff();
    return m + std::log((q - m).exp().sum()) - std::log(static_cast<double>(points_.rows()));
}

// ---------------------------------------------------------------- sampling

Matrix Chains::pooled() const {
    Eigen::Index rows = 0;
    for (const auto& w : walkers) rows += w.rows();
    Matrix out(rows, walkers.empty() ? 0 : walkers[0].cols());
    Eigen::Index r = 0;
    for (const auto& w : walkers) {
        out.middleRows(r, w.rows()) = w;
        r += w.rows();
    }
    return out;
}

Chains ensemble_sample(const LogDensity& log_density, const Matrix& initial, const EnsembleOptions& options,
                       std::uint64_t seed) {
    const auto k = static_cast<int>(initial.rows());
    const auto dim = initial.cols();
    if (k < 2 || k != options.walkers) throw UserError("ensemble sampler needs the configured walker count (>= 2)");
    if (options.steps < 1 || options.burn_in < 0 || options.burn_in >= 1) throw UserError("bad sampler step settings");
    const double n = options.intrinsic_dim > 0 ? options.intrinsic_dim : static_cast<double>(dim);
    const double a = options.stretch;

    Matrix x = initial;
    Vector lp(k);
    for (int i = 0; i < k; ++i) {
        lp(i) = log_density(x.row(i));
        if (!std::isfinite(lp(i)))
            throw NumericalError("log-density is not finite at initial walker " + std::to_string(i));
    }
    const int burn = static_cast<int>(std::floor(options.burn_in * options.steps));
    Chains out;
    out.walkers.assign(k, Matrix(options.steps - burn, dim));

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> other(0, k - 2);
    long accepted = 0;
    int rejected_run = 0;
    for (int t = 0; t < options.steps; ++t) {
        bool any = false;
        for (int i = 0; i < k; ++i) {
            int j = other(rng);
            if (j >= i) ++j;
            const double r = (a - 1.0) * unit(rng) + 1.0;
            const double z = r * r / a;
            RowVector y = x.row(j) + z * (x.row(i) - x.row(j));
            const double lpy = log_density(y);
            const double log_ratio = (n - 1.0) * std::log(z) + lpy - lp(i);
            const double draw = unit(rng);
            if (std::isfinite(lpy) && std::log(draw) < log_ratio) {
                x.row(i) = y;
                lp(i) = lpy;
                any = true;
                ++accepted;
            }
        }
        rejected_run = any ? 0 : rejected_run + 1;
        if (rejected_run >= options.max_rejected_steps)
            throw NumericalError("degenerate window: every proposal rejected for " +
                                 std::to_string(options.max_rejected_steps) + " consecutive steps");
        if (t >= burn)
            for (int i = 0; i < k; ++i) out.walkers[i].row(t - burn) = x.row(i);
    }
    out.acceptance = static_cast<double>(accepted) / (static_cast<double>(options.steps) * k);
    return out;
}

Chains ensemble_sample(const LogDensity& log_density, const UmbrellaWindow& window, const Matrix& initial,
                       const EnsembleOptions& options, std::uint64_t seed) {
    auto biased = [&](const RowVector& x) {
        const double base = log_density(x);
        return base == kNegInf ? kNegInf : base + window.log_u(x);
    };
    return ensemble_sample(biased, initial, options, seed);
}

Vector gelman_rubin(const std::vector<Matrix>& chains) {
    const auto m = static_cast<Eigen::Index>(chains.size());
    if (m < 2) throw UserError("gelman_rubin needs at least two chains");
    const auto n = chains[0].rows();
    const auto dim = chains[0].cols();
    if (n < 10) throw UserError("gelman_rubin needs at least 10 retained steps per chain");
    for (const auto& c : chains)
        if (c.rows() != n || c.cols() != dim) throw ShapeError("gelman_rubin: chains differ in shape");
    Vector out(dim);
    const double nn = static_cast<double>(n);
    for (Eigen::Index d = 0; d < dim; ++d) {
        Vector means(m), vars(m);
        for (Eigen::Index c = 0; c < m; ++c) {
            const auto col = chains[c].col(d);
            means(c) = col.mean();
            vars(c) = (col.array() - means(c)).square().sum() / (nn - 1.0);
        }
        const double within = vars.mean();
        const double between = nn * (means.array() - means.mean()).square().sum() / (static_cast<double>(m) - 1.0);
        if (within <= 0.0) {
            bool identical = true;
            for (Eigen::Index c = 1; c < m && identical; ++c) identical = chains[c].col(d) == chains[0].col(d);
            out(d) = identical ? 0.0 : std::numeric_limits<double>::infinity();
            continue;
        }
        const double pooled = (nn - 1.0) / nn * within + between / nn;
        // Sampling noise can push the ratio below 1; the statistic is floored at 0.
        out(d) = std::max(0.0, std::sqrt(pooled / within) - 1.0);
    }
    return out;
}

// ---------------------------------------------------------------- weights

std::vector<Matrix> profile_matrices(const std::vector<Matrix>& samples, const std::vector<UmbrellaWindow>& windows) {
    std::vector<Matrix> out;
    const auto nw = static_cast<Eigen::Index>(windows.size());
    for (const auto& s : samples) {
        Matrix u(s.rows(), nw);
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            RowVector p = s.row(r);
            for (Eigen::Index j = 0; j < nw; ++j) u(r, j) = windows[j].u(p);
        }
        out.push_back(std::move(u));
    }
    return out;
}

Matrix overlap_matrix(const std::vector<Matrix>& u, const Vector& w) {
    const auto n = static_cast<Eigen::Index>(u.size());
    if (w.size() != n) throw ShapeError("overlap_matrix: weight count differs from window count");
    if ((w.array() <= 0.0).any()) throw NumericalError("overlap_matrix: weights must be strictly positive");
    Matrix m = Matrix::Zero(n, n);
    const RowVector inv = w.cwiseInverse().transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (u[i].rows() == 0) throw UserError("overlap_matrix: window " + std::to_string(i) + " has no samples");
        if (u[i].cols() != n) throw ShapeError("overlap_matrix: profile matrix has wrong width");
        for (Eigen::Index s = 0; s < u[i].rows(); ++s) {
            const double denom = u[i].row(s).dot(inv);
            if (!(denom > 0.0))
                throw NumericalError("windows fail to cover the domain: every profile vanishes at sample " +
                                     std::to_string(s) + " of window " + std::to_string(i));
            m.row(i) += u[i].row(s) / (w(i) * denom);
        }
        m.row(i) /= static_cast<double>(u[i].rows());
    }
    return m;
}

WeightSolution solve_weights(const std::vector<Matrix>& u, const SolveOptions& options) {
    const auto n = static_cast<Eigen::Index>(u.size());
    if (n == 0) throw UserError("solve_weights: no windows");
    WeightSolution sol;
    Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));

    Matrix m0 = overlap_matrix(u, w);
    std::vector<bool> seen(n, false);
    std::queue<Eigen::Index> frontier;
    frontier.push(0);
    seen[0] = true;
    while (!frontier.empty()) {
        const auto i = frontier.front();
        frontier.pop();
        for (Eigen::Index j = 0; j < n; ++j)
            if (!seen[j] && (m0(i, j) > 0.0 || m0(j, i) > 0.0)) {
                seen[j] = true;
                frontier.push(j);
            }
    }
    for (Eigen::Index j = 0; j < n; ++j)
        if (!seen[j]) throw NumericalError("disconnected windows: window " + std::to_string(j) + " has no overlap path to window 0");

    int it = 0;
    for (; it < options.max_iterations; ++it) {
        Vector next = (w.transpose() * overlap_matrix(u, w)).transpose();
        next /= next.sum();
        const double delta = (next - w).lpNorm<1>();
        w = next;
        if (delta <= options.tolerance) {
            ++it;
            break;
        }
    }
    sol.w = w;
    sol.overlap = overlap_matrix(u, w);
    sol.residual = (w.transpose() * sol.overlap - w.transpose()).lpNorm<1>();
    sol.iterations = it;
    if (!(sol.residual <= options.residual_limit))
        throw NumericalError("umbrella weights did not converge: residual " + fmt(sol.residual) + " after " +
                             std::to_string(it) + " iterations");
    return sol;
}

std::vector<WeightedDraw> draw_weighted(const std::vector<Matrix>& u, const Vector& w, int batch, Rng& rng) {
    const int n = static_cast<int>(u.size());
    if (batch < n) throw UserError("batch size must be at least the window count");
    const RowVector inv = w.cwiseInverse().transpose();
    std::vector<WeightedDraw> out;
    out.reserve(batch);
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const int count = batch / n + (i < batch % n ? 1 : 0);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(u[i].rows()) - 1);
        for (int c = 0; c < count; ++c) {
            const int s = pick(rng);
            const double denom = u[i].row(s).dot(inv);
            if (!(u[i](s, i) > 0.0) || !(denom > 0.0))
                throw NumericalError("umbrella profile vanishes at a retained sample of window " + std::to_string(i));
            out.push_back({i, s, 1.0 / denom});
            total += 1.0 / denom;
        }
    }
    for (auto& d : out) d.weight /= total;
    return out;
}

// ---------------------------------------------------------------- plan

bool UmbrellaPlan::converged(double zeta) const {
    return std::all_of(gelman_rubin.begin(), gelman_rubin.end(), [&](double g) { return g <= zeta; });
}

std::string UmbrellaPlan::to_text(const DataSchema& schema) const {
    std::ostringstream os;
    os << "focus:";
    for (int a : focus.attributes) os << ' ' << schema.attribute(a).name;
    os << "\nwindows: " << windows.size() << '\n';
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& win = windows[i];
        os << "window " << i << ' ' << win.label << " attribute=" << schema.attribute(focus.attributes[win.focus]).name
           << " center=[" << join(win.center) << "] width=[" << join(win.width) << "] steps=" << steps[i]
           << " acceptance=" << fmt(acceptance[i]) << " gelman_rubin=" << fmt(gelman_rubin[i]) << '\n';
    }
    os << "w: [" << join(solution.w.transpose()) << "]\n";
    os << "M:\n";
    for (Eigen::Index i = 0; i < solution.overlap.rows(); ++i) os << "  [" << join(solution.overlap.row(i)) << "]\n";
    os << "residual: " << fmt(solution.residual) << "\niterations: " << solution.iterations << '\n';
    return os.str();
}

UmbrellaPlan build_plan(const DataSchema& schema, const Matrix& encoded, const UmbrellaConfig& config,
                        std::uint64_t seed) {
    if (encoded.rows() == 0) throw UserError("umbrella plan needs data");
    UmbrellaPlan plan;
    plan.focus = make_focus_space(schema, config.focus, encoded);

    std::vector<int> rows(encoded.rows());
    std::iota(rows.begin(), rows.end(), 0);
    Rng sub(derive_seed(seed, "kde"));
    std::shuffle(rows.begin(), rows.end(), sub);
    if (static_cast<int>(rows.size()) > config.kde_cap) rows.resize(config.kde_cap);
    std::sort(rows.begin(), rows.end());
    Rng relax(derive_seed(seed, "relax"));
    Matrix points(rows.size(), plan.focus.dim);
    for (std::size_t i = 0; i < rows.size(); ++i)
        points.row(i) = plan.focus.project(relax_instance(encoded.row(rows[i]), schema, config.tau, relax), schema);

    plan.windows = make_windows(plan.focus, schema, points, config.windows, config.categorical_width,
                                config.continuous_width);
    KernelDensity kde(points, plan.focus.intrinsic_dim);
    const FocusSpace& fs = plan.focus;
    LogDensity target = [&](const RowVector& x) { return fs.feasible(x, schema) ? kde.log_density(x) : kNegInf; };

    for (const auto& win : plan.windows) {
        const std::uint64_t wseed = derive_seed(seed, static_cast<std::uint64_t>(win.index));
        Rng init_rng(derive_seed(wseed, "init"));
        std::uniform_int_distribution<int> pick(0, static_cast<int>(points.rows()) - 1);
        std::normal_distribution<double> jitter(0.0, 1.0);
        Matrix initial(config.walkers, fs.dim);
        for (int k = 0; k < config.walkers; ++k) {
            RowVector p = points.row(pick(init_rng));
            if (fs.categorical(schema, win.focus)) {
                const int off = fs.offsets[win.focus];
                const int w = fs.width(schema, win.focus);
                p.segment(off, w) = 0.9 * win.center + 0.1 * p.segment(off, w);
            } else {
                p(win.coords[0]) = win.center(0) + 0.1 * win.width(0) * jitter(init_rng);
            }
            initial.row(k) = p;
        }
        EnsembleOptions opts;
        opts.walkers = config.walkers;
        opts.burn_in = config.burn_in;
        opts.intrinsic_dim = fs.intrinsic_dim;
        int steps = config.steps;
        Chains chains;
        double gr = 0;
        while (true) {
            opts.steps = steps;
            chains = ensemble_sample(target, win, initial, opts, derive_seed(wseed, "chain"));
            gr = gelman_rubin(chains.walkers).maxCoeff();
            if (gr <= config.zeta || steps >= config.max_steps) break;
            steps = std::min(2 * steps, config.max_steps);
        }
        plan.samples.push_back(chains.pooled());
        plan.gelman_rubin.push_back(gr);
        plan.acceptance.push_back(chains.acceptance);
        plan.steps.push_back(steps);
    }
    plan.u = profile_matrices(plan.samples, plan.windows);
    plan.solution = solve_weights(plan.u);
    return plan;
}

}  // namespace mcs
