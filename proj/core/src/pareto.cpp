#include "causalperf/pareto.hpp"

#include <algorithm>
#include <limits>

#include "causalperf/error.hpp"

namespace causalperf {

bool dominates(const Point& a, const Point& b) {
  bool strictly = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strictly = true;
  }
  return strictly;
}

std::vector<std::size_t> nondominated(const std::vector<Point>& points) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < points.size() && keep; ++j) {
      if (j == i) continue;
      if (dominates(points[j], points[i])) keep = false;
      if (j < i && points[j] == points[i]) keep = false;
    }
    if (keep) out.push_back(i);
  }
  return out;
}

double hypervolume_2d(const std::vector<Point>& points, const Point& reference) {
  if (reference.size() != 2) throw Error(ErrorCode::InvalidArgument, "hypervolume_2d needs 2-D points");
  std::vector<Point> inside;
  for (const auto& p : points) {
    if (p.size() != 2) throw Error(ErrorCode::InvalidArgument, "hypervolume_2d needs 2-D points");
    if (p[0] < reference[0] && p[1] < reference[1]) inside.push_back(p);
  }
  std::sort(inside.begin(), inside.end());
  double area = 0.0;
  double best_y = reference[1];
  for (const auto& p : inside) {
    if (p[1] >= best_y) continue;
    area += (reference[0] - p[0]) * (best_y - p[1]);
    best_y = p[1];
  }
  return area;
}

Point reference_point(const std::vector<Point>& points) {
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "reference point of an empty set");
  const std::size_t d = points.front().size();
  Point lo(d, std::numeric_limits<double>::infinity());
  Point hi(d, -std::numeric_limits<double>::infinity());
  for (const auto& p : points) {
    for (std::size_t i = 0; i < d; ++i) {
      lo[i] = std::min(lo[i], p[i]);
      hi[i] = std::max(hi[i], p[i]);
    }
  }
  Point ref(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double span = hi[i] - lo[i];
    ref[i] = hi[i] + 0.1 * (span > 0.0 ? span : std::max(1.0, std::abs(hi[i])));
  }
  return ref;
}

double hypervolume_error(const std::vector<Point>& front, const std::vector<Point>& oracle, const Point& reference) {
  const double truth = hypervolume_2d(oracle, reference);
  if (truth <= 0.0) return 0.0;
  return std::max(0.0, (truth - hypervolume_2d(front, reference)) / truth);
}

}  // namespace causalperf
