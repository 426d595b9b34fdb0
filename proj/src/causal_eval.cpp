#include "mcs/causal_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace mcs {

namespace {

using ArrayX = Eigen::ArrayXd;

ArrayX to_array(std::span<const double> v) {
    return Eigen::Map<const ArrayX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ArrayX standardize(const ArrayX& v) {
    const double m = v.mean();
    const double sd = std::sqrt((v - m).square().mean());
    if (!(sd > 0.0)) return ArrayX::Zero(v.size());
    return (v - m) / sd;
}

double median_distance(const ArrayX& x) {
    std::vector<double> d;
    const auto n = x.size();
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) d.push_back(std::abs(x(i) - x(j)));
    if (d.empty()) return 0.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (med <= 0.0) {
        // Heavy ties: fall back to the median of the nonzero distances.
        std::vector<double> nz;
        for (double v : d)
            if (v > 0.0) nz.push_back(v);
        if (nz.empty()) return 0.0;
        auto m2 = nz.begin() + static_cast<std::ptrdiff_t>(nz.size() / 2);
        std::nth_element(nz.begin(), m2, nz.end());
        med = *m2;
    }
    return med;
}

Matrix gaussian_gram(const ArrayX& x, double bandwidth) {
    const auto n = x.size();
    Matrix k(n, n);
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i, j) = std::exp(-(x(i) - x(j)) * (x(i) - x(j)) * inv);
    return k;
}

Matrix center(const Matrix& k) {
    Matrix c = k;
    const Vector row_mean = k.rowwise().mean();
    const RowVector col_mean = k.colwise().mean();
    const double all = k.mean();
    c.colwise() -= row_mean;
    c.rowwise() -= col_mean;
    c.array() += all;
    return c;
}

// Centered Gram matrix, or an empty matrix for constant input.
Matrix centered_gram(const ArrayX& x) {
    const double bw = median_distance(x);
    if (!(bw > 0.0)) return {};
    return center(gaussian_gram(x, bw));
}

double hsic_from(const Matrix& kc, const Matrix& l) {
    const double n = static_cast<double>(kc.rows());
    return (kc.array() * l.array()).sum() / (n * n);
}

double permuted_hsic(const Matrix& kc, const Matrix& l, const std::vector<int>& perm) {
    const auto n = kc.rows();
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto pi = perm[i];
        for (Eigen::Index j = 0; j < n; ++j) s += kc(i, j) * l(pi, perm[j]);
    }
    const double nn = static_cast<double>(n);
    return s / (nn * nn);
}

double null_std(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<std::vector<int>> permutations(int n, const FitnessOptions& options) {
    Rng rng(options.seed);
    std::vector<std::vector<int>> out(options.permutations, std::vector<int>(n));
    for (auto& p : out) {
        std::iota(p.begin(), p.end(), 0);
        std::shuffle(p.begin(), p.end(), rng);
    }
    return out;
}

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_n, const char* op) {
    if (a.size() != b.size()) throw ShapeError(std::string(op) + ": samples differ in length");
    if (a.size() < min_n)
        throw UserError(std::string(op) + ": needs at least " + std::to_string(min_n) + " samples, got " +
                        std::to_string(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw UserError(std::string(op) + ": non-finite sample");
}

}  // namespace

double hsic(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, 10, "hsic");
    Matrix kc = centered_gram(to_array(x));
    if (kc.size() == 0) return 0.0;
    const double bw = median_distance(to_array(y));
    if (!(bw > 0.0)) return 0.0;
    return std::max(0.0, hsic_from(kc, gaussian_gram(to_array(y), bw)));
}

double anm_fitness(std::span<const double> a, std::span<const double> b, const FitnessOptions& options) {
    check_pair(a, b, 50, "anm_fitness");
    const ArrayX as = standardize(to_array(a));
    if (as.isZero(0.0)) throw UserError("anm_fitness: cause candidate has zero variance");
    const ArrayX bs = standardize(to_array(b));
    const auto n = as.size();

    const double bw = median_distance(as);
    Matrix k = gaussian_gram(as, bw);
    Matrix reg = k;
    reg.diagonal().array() += options.ridge;
    const Vector alpha = reg.ldlt().solve(bs.matrix());
    const ArrayX resid = bs - (k * alpha).array();

    const double rbw = median_distance(resid);
    if (!(rbw > 0.0)) return 0.0;
    const Matrix kc = center(k);
    const Matrix l = gaussian_gram(resid, rbw);
    const double raw = hsic_from(kc, l);
    std::vector<double> null;
    for (const auto& p : permutations(static_cast<int>(n), options)) null.push_back(permuted_hsic(kc, l, p));
    const double sd = null_std(null);
    if (!(sd > 0.0)) return 0.0;
    return raw / sd;
}

double cds_spread(std::span<const double> a, std::span<const double> b, const FitnessOptions& options) {
    check_pair(a, b, 50, "cds_fitness");
    const auto n = a.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i] < a[j]; });
    std::vector<double> edges;
    for (int k = 1; k < options.cause_bins; ++k) edges.push_back(a[order[k * n / options.cause_bins]]);

    const auto [lo_it, hi_it] = std::minmax_element(b.begin(), b.end());
    const double lo = *lo_it, hi = *hi_it;
    Matrix hist = Matrix::Zero(options.cause_bins, options.effect_bins);
    for (std::size_t i = 0; i < n; ++i) {
        const auto bin_a = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), a[i]) - edges.begin()) -
                           (std::find(edges.begin(), edges.end(), a[i]) != edges.end() ? 1 : 0);
        int bin_b = hi > lo ? static_cast<int>((b[i] - lo) / (hi - lo) * options.effect_bins) : 0;
        bin_b = std::clamp(bin_b, 0, options.effect_bins - 1);
        hist(std::max(bin_a, 0), bin_b) += 1.0;
    }
    std::vector<int> rows;
    for (int r = 0; r < hist.rows(); ++r)
        if (hist.row(r).sum() > 0) rows.push_back(r);
    if (rows.size() < 3) throw UserError("cds_fitness: fewer than 3 nonempty cause bins");
    Matrix h(rows.size(), options.effect_bins);
    for (std::size_t i = 0; i < rows.size(); ++i) h.row(i) = hist.row(rows[i]) / hist.row(rows[i]).sum();
    const RowVector mean = h.colwise().mean();
    return std::sqrt((h.rowwise() - mean).rowwise().squaredNorm().mean());
}

double cds_fitness(std::span<const double> a, std::span<const double> b, const FitnessOptions& options) {
    const ArrayX as = standardize(to_array(a));
    const ArrayX bs = standardize(to_array(b));
    std::vector<double> av(as.begin(), as.end()), bv(bs.begin(), bs.end());
    const double raw = cds_spread(av, bv, options);
    if (raw == 0.0) return 0.0;
    std::vector<double> null, shuffled(bv.size());
    for (const auto& p : permutations(static_cast<int>(bv.size()), options)) {
        for (std::size_t i = 0; i < p.size(); ++i) shuffled[i] = bv[p[i]];
        null.push_back(cds_spread(av, shuffled, options));
    }
    const double sd = null_std(null);
    if (!(sd > 0.0)) return 0.0;
    return raw / sd;
}

const char* method_name(CausalMethod m) { return m == CausalMethod::Anm ? "ANM" : "CDS"; }

std::string verdict_text(Verdict v, const std::string& a, const std::string& b) {
    switch (v) {
        case Verdict::Forward: return a + "->" + b;
        case Verdict::Backward: return b + "->" + a;
        case Verdict::None: return "none";
    }
    return "none";
}

CausationScore causation_score(std::span<const double> a, std::span<const double> b, CausalMethod method,
                               double threshold, const std::string& a_name, const std::string& b_name,
                               const FitnessOptions& options) {
    CausationScore s;
    s.a = a_name;
    s.b = b_name;
    s.method = method;
    s.n = static_cast<int>(a.size());
    auto fit = [&](std::span<const double> x, std::span<const double> y) {
        return method == CausalMethod::Anm ? anm_fitness(x, y, options) : cds_fitness(x, y, options);
    };
    s.forward = fit(a, b);
    s.backward = fit(b, a);
    s.tau = s.backward - s.forward;
    s.verdict = s.tau >= threshold ? Verdict::Forward : s.tau <= -threshold ? Verdict::Backward : Verdict::None;
    return s;
}

std::vector<double> numeric_column(std::span<const Record> rows, const DataSchema& schema, std::string_view attribute) {
    const int a = schema.index_of(attribute);
    const auto& spec = schema.attribute(a);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (spec.kind == AttributeKind::Continuous)
            out.push_back(std::get<double>(r[a]));
        else
            out.push_back(spec.category_index(std::get<std::string>(r[a])));
    }
    return out;
}

Table causation_table(std::span<const CausationScore> scores) {
    Table t;
    t.columns = {"pair", "method", "n", "tau_f_forward", "tau_f_backward", "tau_c", "verdict"};
    auto f = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    for (const auto& s : scores)
        t.rows.push_back({s.a + "->" + s.b, method_name(s.method), std::to_string(s.n), f(s.forward), f(s.backward),
                          f(s.tau), verdict_text(s.verdict, s.a, s.b)});
    return t;
}

}  // namespace mcs
