#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "qairn/tensor.hpp"

namespace qairn {

/// Gaussian-window SSIM constants. Values are in units of `dynamic_range`.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
  /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
  std::vector<double> taps() const;
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

void to_json(nlohmann::json& j, const SsimParams& p);
void from_json(const nlohmann::json& j, SsimParams& p);

struct LossReport {
  double total = 0.0;
  double l1 = 0.0;
  double ssim_term = 0.0;  // 1 - mean_ssim
  double mean_ssim = 0.0;
};

/// Mean absolute difference. When `grad` is given it receives d/d pred.
double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);

/// Mean local SSIM over every valid window position of every (batch,
/// channel) plane. When `grad` is given it receives d/d pred.
double ssim_index(const Tensor& pred, const Tensor& target,
                  const SsimParams& params = {}, Tensor* grad = nullptr);

/// total = l1 + (1 - ssim). `grad`, when given, receives d total / d pred.
LossReport total_loss(const Tensor& pred, const Tensor& target,
                      Tensor* grad = nullptr, const SsimParams& params = {});

}  // namespace qairn
