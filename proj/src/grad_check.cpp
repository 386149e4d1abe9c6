#include "eyecue/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "eyecue/rng.hpp"

namespace eyecue {

GradCheckResult grad_check(ParamStore<double>& params, const LossFunction& loss, double sample_fraction,
                           double step, std::uint64_t seed) {
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ValidationError("grad_check: sample fraction must lie in (0, 1]");
  }
  if (!(step > 0.0)) throw ValidationError("grad_check: step must be positive");

  ParamStore<double> analytic = params.zeros_like();
  loss(params, &analytic);
  for (const auto& e : analytic) {
    for (Eigen::Index j = 0; j < e.value.size(); ++j) {
      if (!std::isfinite(e.value.data()[j])) {
        throw NumericError("grad_check: non-finite gradient at " + e.name + "[" + std::to_string(j) + "]");
      }
    }
  }

  // Flat index -> (entry, element).
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& e : params) {
    offsets.push_back(total);
    total += static_cast<std::size_t>(e.value.size());
  }
  if (total == 0) return {};
  const std::size_t count =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(sample_fraction * static_cast<double>(total))));

  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, total - i);
    std::swap(order[i], order[j]);
  }

  GradCheckResult result;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t flat = order[s];
    const std::size_t entry =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
    const std::size_t element = flat - offsets[entry];
    double& x = params.at(entry).value.data()[element];
    const double saved = x;
    auto central = [&](double h) {
      x = saved + h;
      const double up = loss(params, nullptr);
      x = saved - h;
      const double down = loss(params, nullptr);
      x = saved;
      return (up - down) / (2.0 * h);
    };
    // Richardson extrapolation over h and h/2 cancels the O(h^2) term.
    const double numeric = (4.0 * central(0.5 * step) - central(step)) / 3.0;
    const double a = analytic.at(entry).value.data()[element];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++result.checked;
    if (rel > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = rel;
      result.worst_parameter = params.at(entry).name + "[" + std::to_string(element) + "]";
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace eyecue
