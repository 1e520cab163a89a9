#include "fopro/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fopro/errors.hpp"

namespace fopro {

void LossWeights::validate() const {
  if (!(lambda_f >= 0.0)) throw InvalidArgument("lambda_f must be >= 0");
  if (!(mu >= 0.0)) throw InvalidArgument("mu must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
}

namespace losses {

torch::Tensor bn_regularization(const BNStatistics& batch_stats, const BNStatistics& running_stats) {
  if (batch_stats.size() != running_stats.size()) {
    throw ContractViolation("bn_regularization: " + std::to_string(batch_stats.size()) +
                            " batch layers vs " + std::to_string(running_stats.size()) +
                            " running layers");
  }
  if (batch_stats.empty()) throw ContractViolation("bn_regularization: no BN layers");
  torch::Tensor total;
  for (std::size_t l = 0; l < batch_stats.size(); ++l) {
    const auto& b = batch_stats[l];
    const auto& r = running_stats[l];
    if (b.mean.sizes() != r.mean.sizes() || b.var.sizes() != r.var.sizes()) {
      throw ContractViolation("bn_regularization: channel mismatch at layer " + std::to_string(l));
    }
    const auto term = (b.mean - r.mean).pow(2).sum() + (b.var - r.var).pow(2).sum();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor balance_loss(const torch::Tensor& features) {
  if (features.dim() != 2) throw InvalidArgument("balance_loss: expected B x C features");
  if (features.size(1) < 2) throw InvalidArgument("balance_loss: need C >= 2 feature dimensions");
  // log_softmax subtracts the row max internally.
  const auto log_p = torch::log_softmax(features, 1);
  return (log_p.exp() * log_p).sum(1).mean();
}

torch::Tensor inversion_loss(const torch::Tensor& bn_term, const torch::Tensor& bal_term,
                             const LossWeights& weights) {
  return bn_term + weights.mu * bal_term;
}

torch::Tensor ekd_loss(const torch::Tensor& projection, const torch::Tensor& target) {
  if (projection.dim() != 2 || projection.sizes() != target.sizes()) {
    throw InvalidArgument("ekd_loss: projection and target must both be B x C_t");
  }
  const auto y_norm = projection.norm(2, 1);
  const auto t_norm = target.norm(2, 1);
  if ((y_norm.detach() <= kNormEpsilon).any().item<bool>() ||
      (t_norm.detach() <= kNormEpsilon).any().item<bool>()) {
    throw NumericDegeneracy("ekd_loss: zero-norm encoding");
  }
  const auto y_hat = projection / y_norm.clamp_min(kNormEpsilon).unsqueeze(1);
  const auto t_hat = target / t_norm.clamp_min(kNormEpsilon).unsqueeze(1);
  const auto cosine = (y_hat * t_hat).sum(1).clamp(-1.0, 1.0);
  return (2.0 - 2.0 * cosine).mean();
}

torch::Tensor balanced_softmax_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                    const std::vector<int64_t>& class_counts) {
  if (logits.dim() != 2 || static_cast<std::size_t>(logits.size(1)) != class_counts.size()) {
    throw InvalidArgument("balanced_softmax_loss: logits must be B x K with K class counts");
  }
  if (std::any_of(class_counts.begin(), class_counts.end(), [](int64_t n) { return n < 1; })) {
    throw InvalidArgument("balanced_softmax_loss: every class count must be >= 1");
  }
  const bool uniform = std::all_of(class_counts.begin(), class_counts.end(),
                                   [&](int64_t n) { return n == class_counts.front(); });
  if (uniform) return torch::nn::functional::cross_entropy(logits, labels);

  std::vector<double> log_counts(class_counts.size());
  std::transform(class_counts.begin(), class_counts.end(), log_counts.begin(),
                 [](int64_t n) { return std::log(static_cast<double>(n)); });
  const auto prior = torch::tensor(log_counts, logits.options().requires_grad(false));
  return torch::nn::functional::cross_entropy(logits + prior.unsqueeze(0), labels);
}

torch::Tensor exploitation_loss(const torch::Tensor& target_term, const torch::Tensor& distill_term,
                                const LossWeights& weights) {
  return target_term + weights.lambda_f * distill_term;
}

torch::Tensor exploration_loss(const torch::Tensor& distill_term, const torch::Tensor& inv_term,
                               const LossWeights& weights) {
  return -weights.gamma * weights.lambda_f * distill_term + inv_term;
}

}  // namespace losses
}  // namespace fopro
