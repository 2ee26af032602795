#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace pcpo {

// Whether batch kernels run their element loops under OpenMP or serially.
// Results are bit-identical either way: every element is an independent
// function of its own RNG substream, and reductions use pairwise summation
// over a materialized buffer.
enum class ExecMode { Serial, Parallel };

// Deterministic pairwise (cascade) summation. Independent of thread count
// and of the order in which elements were produced.
double pairwise_sum(std::span<const double> xs);

// Sum of the columns of `cols`, pairwise over the column index.
Eigen::VectorXd pairwise_col_sum(const Eigen::MatrixXd& cols);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares of y on x. r_squared is 1 for a perfect fit and 0
// when x carries no signal; degenerate inputs (constant y) give r_squared 1.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

// Quantile with linear interpolation on the sorted copy; q in [0, 1].
double quantile(std::vector<double> xs, double q);

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

// Regularized lower incomplete gamma P(a, x); series/continued-fraction form.
double gamma_p(double a, double x);

// Shortest decimal string that round-trips to the same double; "inf"/"nan"
// spelled out. Used everywhere files must be byte-reproducible.
std::string format_double(double v);

}  // namespace pcpo
