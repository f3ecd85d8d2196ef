#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "saved/tensor.hpp"

namespace saved {

struct LossConfig {
  double temperature = 0.7;  // tau

  void validate() const {
    if (!(temperature > 0.0)) {
      throw std::invalid_argument("LossConfig: temperature must be positive");
    }
  }
};

/// Two aligned [N, d_emb] view batches: row i of each side embeds a view of
/// the same source table.
struct BatchEmbeddings {
  Tensor z_i;
  Tensor z_j;
};

/// NT-Xent: L2-normalize both views, stack them into r [2N, d], form the
/// temperature-scaled similarity matrix r r^T / tau, mask self-similarities
/// out of the denominators, and average the positive-pair cross-entropy terms
/// with positive(i) = i+N (resp. i-N).  Log-sum-exp terms subtract a detached
/// per-row maximum for stability.  N=1 is the degenerate single-pair case and
/// yields exactly 0.
inline Tensor nt_xent(const BatchEmbeddings& batch, const LossConfig& cfg = {}) {
  cfg.validate();
  const Tensor& z_i = batch.z_i;
  const Tensor& z_j = batch.z_j;
  if (z_i.rank() != 2 || z_j.rank() != 2 || z_i.shape() != z_j.shape()) {
    throw std::invalid_argument("nt_xent: views must be two [N, d] tensors of equal shape");
  }
  const std::size_t n = z_i.dim(0);
  if (n < 1) {
    throw std::invalid_argument("nt_xent: empty batch");
  }
  for (const Tensor* t : {&z_i, &z_j}) {
    for (const double v : t->values()) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("nt_xent: non-finite input");
      }
    }
  }

  const std::size_t rows = 2 * n;
  Tensor r = concat0({l2_normalize_lastdim(z_i), l2_normalize_lastdim(z_j)});
  Tensor theta = scalar_div(matmul(r, transpose_last2(r)), cfg.temperature);

  std::vector<std::uint8_t> self_mask(rows * rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    self_mask[i * rows + i] = 1;
  }
  Tensor masked = masked_fill(theta, self_mask, -1e30);

  // detached per-row maxima; subtracting a constant leaves gradients intact
  std::vector<double> row_max(rows);
  std::vector<double> row_max_full(rows * rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -1e30;
    for (std::size_t j = 0; j < rows; ++j) {
      if (!self_mask[i * rows + j]) {
        mx = std::max(mx, masked.values()[i * rows + j]);
      }
    }
    row_max[i] = mx;
    for (std::size_t j = 0; j < rows; ++j) {
      row_max_full[i * rows + j] = -mx;
    }
  }
  Tensor shifted = add(masked, Tensor::from_values({rows, rows}, std::move(row_max_full)));
  Tensor log_sum = log(sum_lastdim(exp(shifted)));                    // [2N]
  Tensor lse = add(log_sum, Tensor::from_values({rows}, std::move(row_max)));

  std::vector<double> positive_mask(rows * rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t pos = i < n ? i + n : i - n;
    positive_mask[i * rows + pos] = 1.0;
  }
  Tensor positives =
      sum_lastdim(mul(theta, Tensor::from_values({rows, rows}, std::move(positive_mask))));

  Tensor per_row = add(positives, scalar_mul(lse, -1.0));  // [2N]
  return scalar_mul(mean(per_row, 0), -1.0);
}

}  // namespace saved
