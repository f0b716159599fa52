#include "auxseg/auxtask.hpp"

namespace F = torch::nn::functional;

namespace auxseg {

torch::Tensor moco_loss(const torch::Tensor& queries, const torch::Tensor& keys,
                        double temperature) {
  require_same_shape(queries, keys, "moco_loss");
  if (queries.dim() != 2) throw std::invalid_argument("moco_loss: embeddings must be B×d");
  const auto batch = queries.size(0);
  if (batch < 2) throw std::invalid_argument("moco_loss: batch size must be at least 2 (no negatives)");
  if (!(temperature > 0.0)) throw std::invalid_argument("moco_loss: temperature must be > 0");

  const auto q = F::normalize(queries, F::NormalizeFuncOptions().dim(1));
  const auto k = F::normalize(keys.detach(), F::NormalizeFuncOptions().dim(1));
  const auto logits = torch::matmul(q, k.t()) / temperature;
  const auto labels = torch::arange(batch, torch::kInt64);
  return 0.5 * (F::cross_entropy(logits, labels) + F::cross_entropy(logits.t(), labels));
}

VicregTerms vicreg_loss(const torch::Tensor& za, const torch::Tensor& zb, const VicregCoeffs& c) {
  require_same_shape(za, zb, "vicreg_loss");
  if (za.dim() != 2) throw std::invalid_argument("vicreg_loss: embeddings must be B×d");
  const auto batch = za.size(0);
  const auto dim = za.size(1);
  if (batch < 2) throw std::invalid_argument("vicreg_loss: batch size must be at least 2");

  VicregTerms t;
  t.invariance = F::mse_loss(za, zb);

  const auto a = za - za.mean(0);
  const auto b = zb - zb.mean(0);
  const auto std_a = torch::sqrt(a.pow(2).sum(0) / static_cast<double>(batch - 1) + c.eps);
  const auto std_b = torch::sqrt(b.pow(2).sum(0) / static_cast<double>(batch - 1) + c.eps);
  t.variance = 0.5 * (torch::relu(c.gamma - std_a).mean() + torch::relu(c.gamma - std_b).mean());

  const auto off_diag_sq = [&](const torch::Tensor& centered) {
    const auto cov = torch::matmul(centered.t(), centered) / static_cast<double>(batch - 1);
    const auto off = cov - torch::diag_embed(torch::diagonal(cov));
    return off.pow(2).sum() / static_cast<double>(dim);
  };
  t.covariance = off_diag_sq(a) + off_diag_sq(b);

  t.total = c.invariance * t.invariance + c.variance * t.variance + c.covariance * t.covariance;
  return t;
}

}  // namespace auxseg
