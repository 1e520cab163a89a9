#pragma once

#include <vector>

#include <torch/torch.h>

namespace fopro {

// Per-channel moments at one batch-norm layer.
struct LayerMoments {
  torch::Tensor mean;
  torch::Tensor var;
};

// One entry per BN layer of the teacher, in a fixed layer order.
using BNStatistics = std::vector<LayerMoments>;

struct LossWeights {
  double lambda_f = 3.0;  // distillation weight in the exploitation loss
  double mu = 10.0;       // balance-term weight in the inversion loss
  double gamma = 0.3;     // adversarial strength in the exploration loss, in [0, 1]

  void validate() const;
};

namespace losses {

// sum_l ||mean_l(batch) - mean_l(running)||^2 + ||var_l(batch) - var_l(running)||^2
torch::Tensor bn_regularization(const BNStatistics& batch_stats, const BNStatistics& running_stats);

// Batch mean of sum_i p_i log p_i with p = softmax(features). In [-log C, 0].
torch::Tensor balance_loss(const torch::Tensor& features);

torch::Tensor inversion_loss(const torch::Tensor& bn_term, const torch::Tensor& bal_term,
                             const LossWeights& weights);

inline constexpr double kNormEpsilon = 1e-12;

// Batch mean of 2 - 2 <y/|y|, t/|t|>. In [0, 4].
torch::Tensor ekd_loss(const torch::Tensor& projection, const torch::Tensor& target);

// Cross-entropy on logits shifted by log class counts. Equal counts take the
// plain cross-entropy path.
torch::Tensor balanced_softmax_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                    const std::vector<int64_t>& class_counts);

torch::Tensor exploitation_loss(const torch::Tensor& target_term, const torch::Tensor& distill_term,
                                const LossWeights& weights);

// -gamma * lambda_f * L_f + L_inv; minimizing it pushes the distillation loss up.
torch::Tensor exploration_loss(const torch::Tensor& distill_term, const torch::Tensor& inv_term,
                               const LossWeights& weights);

}  // namespace losses
}  // namespace fopro
