#pragma once

#include "mcs/core.hpp"
#include "mcs/encoding.hpp"
#include "mcs/table.hpp"

#include <span>
#include <string>
#include <vector>

namespace mcs {

/// Biased HSIC V-statistic trace(K H L H) / n^2 with Gaussian kernels and
/// median-distance bandwidths. Constant input gives 0.
double hsic(std::span<const double> x, std::span<const double> y);

struct FitnessOptions {
    double ridge = 1e-3;
    int permutations = 32;
    std::uint64_t seed = 0x5eedULL;
    int cause_bins = 10;
    int effect_bins = 20;
};

/// Additive-noise fitness of a -> b: kernel ridge regression of b on a, then
/// HSIC(a, residual) divided by the standard deviation of its permutation
/// null. Inputs are standardized first. Smaller means a better fit.
double anm_fitness(std::span<const double> a, std::span<const double> b, const FitnessOptions& options = {});

/// Unstandardized conditional-distribution spread: a is cut into equal-count
/// bins, b is histogrammed per bin over its pooled range, and the result is
/// the root mean squared deviation of those histograms from their mean.
double cds_spread(std::span<const double> a, std::span<const double> b, const FitnessOptions& options = {});

/// cds_spread divided by the standard deviation of its permutation null.
double cds_fitness(std::span<const double> a, std::span<const double> b, const FitnessOptions& options = {});

enum class CausalMethod { Anm, Cds };
enum class Verdict { Forward, Backward, None };

const char* method_name(CausalMethod m);
std::string verdict_text(Verdict v, const std::string& a, const std::string& b);

struct CausationScore {
    std::string a;
    std::string b;
    CausalMethod method = CausalMethod::Anm;
    int n = 0;
    double forward = 0.0;   // fitness of a -> b
    double backward = 0.0;  // fitness of b -> a
    double tau = 0.0;       // backward - forward
    Verdict verdict = Verdict::None;
};

CausationScore causation_score(std::span<const double> a, std::span<const double> b, CausalMethod method,
                               double threshold = 1.0, const std::string& a_name = "A",
                               const std::string& b_name = "B", const FitnessOptions& options = {});

/// Real-valued column of a record set: continuous values as is, categorical
/// values by their category index.
std::vector<double> numeric_column(std::span<const Record> rows, const DataSchema& schema, std::string_view attribute);

/// pair, method, n, tau_f forward, tau_f backward, tau_c, verdict.
Table causation_table(std::span<const CausationScore> scores);

}  // namespace mcs
