#include "bams/optim.hpp"

#include <cmath>

namespace bams {

void Rmsprop::step(std::vector<std::pair<std::string, Tensor>>& params) {
  if (accum_.empty()) {
    accum_.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) accum_[p].assign(params[p].second.size(), 0.0);
  }
  if (accum_.size() != params.size()) throw ContractError("rmsprop: parameter set changed");
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    auto& v = accum_[p];
    auto& w = t.values();
    const auto& g = t.grad();
    if (v.size() != w.size()) throw ContractError("rmsprop: shape changed for " + params[p].first);
    for (size_t i = 0; i < w.size(); ++i) {
      if (std::isnan(g[i])) {
        throw TrainAbort("NaN gradient in parameter '" + params[p].first + "' at index " +
                         std::to_string(i));
      }
      v[i] = rho_ * v[i] + (1.0 - rho_) * g[i] * g[i];
      w[i] -= lr_ * g[i] / (std::sqrt(v[i]) + eps_);
    }
  }
}

}  // namespace bams
