#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gdn/graph.hpp"

namespace gdn {

struct GradCheckOptions {
  double epsilon = 1e-3;
  // Entries checked per parameter tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradientSample {
  std::size_t tensor;
  std::size_t index;
  double analytic;
  double numeric;
};

// |analytic - numeric| / max(1, |analytic|)
double relative_error(double analytic, double numeric);
double max_relative_error(std::span<const GradientSample> samples);

// Analytic gradients from backward() next to central differences
// (L(p + eps) - L(p - eps)) / (2 eps) for a sample of parameter entries.
// Parameters are perturbed in double precision and restored afterwards.
std::vector<GradientSample> sample_gradients(const ComputeGraph& graph,
                                             ParameterStore& params,
                                             const Tensor& input,
                                             const ForwardContext& ctx,
                                             NodeId loss,
                                             const GradCheckOptions& options);

// Max relative error between analytic and central-difference gradients.
double finite_diff_check(const ComputeGraph& graph, ParameterStore& params,
                         const Tensor& input, const ForwardContext& ctx,
                         NodeId loss, const GradCheckOptions& options = {});

}  // namespace gdn
