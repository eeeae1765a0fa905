#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "qairn/objective.hpp"
#include "qairn/tensor.hpp"

namespace qairn::metrics {

enum class ChannelMode { RgbMean, LumaBt601 };

std::string to_string(ChannelMode mode);
ChannelMode channel_mode_from_string(const std::string& s);

/// BT.601 luma (0.299 R + 0.587 G + 0.114 B); single-channel input passes
/// through unchanged.
Tensor to_luma(const Tensor& rgb);

/// 10 log10(max^2 / MSE) over every element; +infinity when MSE is zero.
double psnr(const Tensor& ref, const Tensor& test, double max_val = 1.0);

/// Same SSIM core as the training loss. RgbMean averages the per-channel
/// values; LumaBt601 evaluates luma only.
double ssim_eval(const Tensor& ref, const Tensor& test,
                 ChannelMode mode = ChannelMode::RgbMean,
                 const SsimParams& params = {});

/// Blocking effect factor of `test`, averaged over its (batch, channel)
/// planes. Per direction: eta * (D_b - D_bc) when boundary pairs differ more
/// than interior pairs, with eta = log2(block) / log2(min(H, W)).
double blocking_effect_factor(const Tensor& test, int block_size = 8);

/// PSNR with MSE replaced by MSE + BEF(test). LumaBt601 (the default)
/// converts colour inputs to luma first; RgbMean works on all channels.
double psnr_b(const Tensor& ref, const Tensor& test, int block_size = 8,
              double max_val = 1.0, ChannelMode mode = ChannelMode::LumaBt601);

/// Power mean (mean of gamma^p)^(1/p) of a quality map.
double minkowski_pool(const Tensor& map, double p);

struct CorrelationReport {
  double pcc = 0.0;
  double srcc = 0.0;
  double kcc = 0.0;
  std::size_t n_samples = 0;
};

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// Tau-b, tie corrected, O(n log n).
double kendall(std::span<const double> x, std::span<const double> y);
/// 1-based ranks with ties given their average rank.
std::vector<double> average_ranks(std::span<const double> v);

CorrelationReport correlate(std::span<const double> predicted,
                            std::span<const double> subjective);

/// f(x) = b2 + (b1 - b2) / (1 + exp(-(x - b3) / |b4|)).
struct Logistic4 {
  std::array<double, 4> beta{};
  double operator()(double x) const;
};

/// Levenberg-Marquardt least-squares fit of a 4-parameter logistic mapping
/// from predictions to subjective scores.
Logistic4 fit_logistic4(std::span<const double> x, std::span<const double> y);

/// Pairwise (cascade) summation with a fixed split order.
double pairwise_sum(std::span<const double> values);
double pairwise_mean(std::span<const double> values);

}  // namespace qairn::metrics
