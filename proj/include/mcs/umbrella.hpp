#pragma once

#include "mcs/core.hpp"
#include "mcs/encoding.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mcs {

/// Plain Gumbel-softmax of one logit row at fixed uniform noise.
RowVector relax_block(const RowVector& logits, double tau, const RowVector& noise);

/// Replaces every categorical block of a hard encoding with a relaxed
/// simplex point: Gumbel-softmax over log-frequency logits, with the Gumbel
/// draw conditioned on the block's own category being the maximum (top-down
/// truncated Gumbel), so the argmax is preserved. Continuous blocks untouched.
RowVector relax_instance(const RowVector& encoded, const DataSchema& schema, double tau, Rng& rng);

/// Coordinates the umbrella windows act on: the relaxed simplex block of each
/// categorical focus attribute and the standardized raw value of each
/// continuous one.
struct FocusSpace {
    std::vector<int> attributes;  // schema indices
    std::vector<int> offsets;     // first coordinate of each focus attribute
    std::vector<double> center;   // continuous only: raw-value mean
    std::vector<double> spread;   // continuous only: raw-value std
    int dim = 0;
    int intrinsic_dim = 0;  // k - 1 per categorical, 1 per continuous

    int width(const DataSchema& schema, int focus) const;
    bool categorical(const DataSchema& schema, int focus) const;
    /// Focus coordinates of one (hard or relaxed) encoded row.
    RowVector project(const Eigen::Ref<const RowVector>& encoded, const DataSchema& schema) const;
    /// Log of the indicator of the feasible set (simplex blocks): 0 or -inf.
    bool feasible(const RowVector& point, const DataSchema& schema) const;
};

FocusSpace make_focus_space(const DataSchema& schema, const std::vector<std::string>& names, const Matrix& encoded);

/// Gaussian bump over a subset of focus coordinates.
struct UmbrellaWindow {
    int index = 0;
    int focus = 0;             // focus attribute the window acts on
    std::vector<int> coords;   // focus-space coordinates
    RowVector center;          // per coordinate
    RowVector width;           // per coordinate
    std::string label;

    double log_u(const RowVector& point) const;
    double u(const RowVector& point) const;
};

/// One window per category for categorical focus attributes (centered at the
/// vertex, width = categorical_width * vertex spacing); continuous focus
/// attributes share the remaining budget on a quantile grid (at least 2 each,
/// width = continuous_width * local spacing).
std::vector<UmbrellaWindow> make_windows(const FocusSpace& focus, const DataSchema& schema, const Matrix& points,
                                         int budget, double categorical_width, double continuous_width);

/// Product-Gaussian kernel density over reference points, Scott bandwidths.
class KernelDensity {
public:
    KernelDensity(Matrix points, int intrinsic_dim);
    double log_density(const RowVector& x) const;
    const RowVector& bandwidth() const { return bandwidth_; }

private:
    Matrix points_;
    RowVector bandwidth_;
};

struct EnsembleOptions {
    int walkers = 8;
    int steps = 1000;
    double burn_in = 0.2;
    double stretch = 2.0;
    int intrinsic_dim = -1;  // -1: ambient dimension
    int max_rejected_steps = 100;
};

struct Chains {
    std::vector<Matrix> walkers;  // retained steps x dim, one per walker
    double acceptance = 0.0;

    Matrix pooled() const;
};

using LogDensity = std::function<double(const RowVector&)>;

/// Affine-invariant stretch-move ensemble sampler. Walkers update in turn
/// against the current ensemble; the first burn_in fraction is discarded.
Chains ensemble_sample(const LogDensity& log_density, const Matrix& initial, const EnsembleOptions& options,
                       std::uint64_t seed);

/// Targets exp(log_density) * u.
Chains ensemble_sample(const LogDensity& log_density, const UmbrellaWindow& window, const Matrix& initial,
                       const EnsembleOptions& options, std::uint64_t seed);

/// Per-dimension potential scale reduction minus one, floored at 0. Zero within-chain
/// variance gives 0 for identical chains and +inf otherwise.
Vector gelman_rubin(const std::vector<Matrix>& chains);

/// u[i](s, j): profile j at retained sample s of window i.
std::vector<Matrix> profile_matrices(const std::vector<Matrix>& samples, const std::vector<UmbrellaWindow>& windows);

/// M_ij = mean over window-i samples of (u_j / w_i) / sum_k (u_k / w_k).
Matrix overlap_matrix(const std::vector<Matrix>& u, const Vector& w);

struct SolveOptions {
    double tolerance = 1e-10;  // on |w_new - w|_1
    int max_iterations = 10000;
    double residual_limit = 1e-8;
};

struct WeightSolution {
    Vector w;
    Matrix overlap;
    double residual = 0.0;  // |w M(w) - w|_1
    int iterations = 0;
};

/// Self-consistent iteration w <- normalize(w M(w)) from the uniform vector.
WeightSolution solve_weights(const std::vector<Matrix>& u, const SolveOptions& options = {});

/// Per-window draw counts equal (the remainder goes to the first windows).
/// Each draw is weighted by 1 / sum_j u_j / w_j at the sample, normalized.
struct WeightedDraw {
    int window = 0;
    int sample = 0;
    double weight = 0.0;
};
std::vector<WeightedDraw> draw_weighted(const std::vector<Matrix>& u, const Vector& w, int batch, Rng& rng);

struct UmbrellaConfig {
    std::vector<std::string> focus;
    int windows = 8;
    int walkers = 8;
    int steps = 1000;
    int max_steps = 5000;
    double burn_in = 0.2;
    double zeta = 0.01;
    double tau = 0.5;
    int kde_cap = 4000;
    double categorical_width = 0.25;
    double continuous_width = 1.5;
};

struct UmbrellaPlan {
    FocusSpace focus;
    std::vector<UmbrellaWindow> windows;
    std::vector<Matrix> samples;  // pooled retained samples per window
    std::vector<Matrix> u;        // profile matrices of `samples`
    std::vector<double> gelman_rubin;  // max over dimensions, per window
    std::vector<double> acceptance;
    std::vector<int> steps;
    WeightSolution solution;

    bool converged(double zeta) const;
    std::string to_text(const DataSchema& schema) const;
};

/// Relaxes the rows, fits the density, samples every window and solves w.
UmbrellaPlan build_plan(const DataSchema& schema, const Matrix& encoded, const UmbrellaConfig& config,
                        std::uint64_t seed);

}  // namespace mcs
