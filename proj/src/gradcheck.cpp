#include "gdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdn/error.hpp"
#include "gdn/random.hpp"

namespace gdn {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

double max_relative_error(std::span<const GradientSample> samples) {
  double worst = 0.0;
  for (const auto& s : samples) {
    worst = std::max(worst, relative_error(s.analytic, s.numeric));
  }
  return worst;
}

std::vector<GradientSample> sample_gradients(const ComputeGraph& graph,
                                             ParameterStore& params,
                                             const Tensor& input,
                                             const ForwardContext& ctx,
                                             NodeId loss,
                                             const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-5 && options.epsilon <= 1e-2)) {
    throw Error("finite difference epsilon must lie in [1e-5, 1e-2]");
  }
  params.zero_grads();
  {
    const Evaluation ev = forward(graph, params, input, ctx);
    backward(graph, ev, loss, params);
  }
  auto loss_at = [&]() {
    return forward(graph, params, input, ctx).value(loss)[0];
  };

  Rng rng(options.seed);
  std::vector<GradientSample> samples;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& tensor = params[t];
    std::vector<std::size_t> entries(tensor.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_tensor != 0 &&
        entries.size() > options.max_entries_per_tensor) {
      shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const double original = tensor[i];
      tensor[i] = original + options.epsilon;
      const double up = loss_at();
      tensor[i] = original - options.epsilon;
      const double down = loss_at();
      tensor[i] = original;
      samples.push_back({t, i, tensor.grad()[i],
                         (up - down) / (2.0 * options.epsilon)});
    }
  }
  return samples;
}

double finite_diff_check(const ComputeGraph& graph, ParameterStore& params,
                         const Tensor& input, const ForwardContext& ctx,
                         NodeId loss, const GradCheckOptions& options) {
  const auto samples =
      sample_gradients(graph, params, input, ctx, loss, options);
  return max_relative_error(samples);
}

}  // namespace gdn
