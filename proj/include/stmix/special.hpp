#pragma once

namespace stmix {

// log Beta(a, b)
double log_beta(double a, double b);

// Regularized incomplete beta function I_x(a, b) for a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

// Standard Student-t with `df` degrees of freedom (location 0, scale 1).
double student_t_logpdf(double x, double df);
double student_t_pdf(double x, double df);
double student_t_cdf(double x, double df);
double student_t_survival(double x, double df);

// log of the multivariate gamma function Gamma_p(x).
double log_multivariate_gamma(int p, double x);

}  // namespace stmix
