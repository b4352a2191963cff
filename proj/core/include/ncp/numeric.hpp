#pragma once

#include <span>

namespace ncp {

/// log(sum(exp(v))) via max-shift. Entries may be -inf; throws ShapeError on empty input.
double log_sum_exp(std::span<const double> values);

/// log(mean(exp(v))).
double log_mean_exp(std::span<const double> values);

double mean_of(std::span<const double> values);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev_of(std::span<const double> values);

}  // namespace ncp
