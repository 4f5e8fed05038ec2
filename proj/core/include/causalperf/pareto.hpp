#pragma once

#include <cstddef>
#include <vector>

namespace causalperf {

using Point = std::vector<double>;

/// a dominates b (all coordinates <=, at least one <), minimization.
bool dominates(const Point& a, const Point& b);

/// Indices of the nondominated points, ascending. Duplicates keep the first.
std::vector<std::size_t> nondominated(const std::vector<Point>& points);

/// Area dominated by the points and bounded by `reference` (2-D, minimization).
double hypervolume_2d(const std::vector<Point>& points, const Point& reference);

/// Reference point: per coordinate the worst value plus 10% of the span.
Point reference_point(const std::vector<Point>& points);

/// (HV(oracle) - HV(front)) / HV(oracle), clamped at 0 from below.
double hypervolume_error(const std::vector<Point>& front, const std::vector<Point>& oracle, const Point& reference);

}  // namespace causalperf
