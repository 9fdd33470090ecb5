#pragma once

#include "colf/image.hpp"

namespace colf {

// 10*log10(1/MSE) over [0,1] images, capped at 99 so identical images stay
// finite in reports.
double psnr(const Image& a, const Image& b);

// Structural similarity per channel with an 11x11 Gaussian window
// (sigma 1.5, K1 0.01, K2 0.03, L 1), averaged over channels; local stats
// are taken over the valid (fully covered) region.
double ssim(const Image& a, const Image& b);

// Two-factor aggregate: geometric mean of MSE = 10^{-PSNR/10} and
// sqrt(1 - SSIM). Columns produced from this are labeled "Average(2-term)";
// a learned perceptual score is deliberately not part of it.
double average_metric(double psnr_db, double ssim_val);

double mean_abs_depth_error(const DepthMap& a, const DepthMap& b);

}  // namespace colf
