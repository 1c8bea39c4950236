#pragma once

namespace fmue::special {

// Digamma, trigamma and log-gamma for x > 0. Small arguments are shifted up
// with the recurrences until the asymptotic (Stirling / Bernoulli) series is
// accurate to ~1e-14 relative.
double digamma(double x);
double trigamma(double x);
double log_gamma(double x);

}  // namespace fmue::special
