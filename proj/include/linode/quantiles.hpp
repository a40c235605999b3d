#pragma once

namespace linode {

/// P(a, x), the regularized lower incomplete gamma function.
double regularized_lower_gamma(double a, double x);

double normal_cdf(double x);

/// Inverse of the chi-square CDF with `dof` degrees of freedom.
/// Requires 1 <= dof <= 10^4 and 0 < p < 1.
double chi2_quantile(int dof, double p);

/// Inverse standard-normal CDF, 0 < p < 1.
double normal_quantile(double p);

}  // namespace linode
