#include "colf/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace colf {

namespace {

void check_same(const Image& a, const Image& b, const char* who) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(who) + ": image sizes differ (" + std::to_string(a.width) +
                                "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same(a, b, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.rgb.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr int kRad = kWin / 2;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L=1
  constexpr double kC2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin)
    throw std::invalid_argument("ssim: images smaller than the 11x11 window");

  double kernel[kWin][kWin];
  double ksum = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - kRad, dx = x - kRad;
      kernel[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      ksum += kernel[y][x];
    }
  for (auto& row : kernel)
    for (auto& k : row) k /= ksum;

  double total = 0.0;
  int64_t count = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = kRad; y < a.height - kRad; ++y) {
      for (int x = kRad; x < a.width - kRad; ++x) {
        double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
        for (int wy = -kRad; wy <= kRad; ++wy)
          for (int wx = -kRad; wx <= kRad; ++wx) {
            const double k = kernel[wy + kRad][wx + kRad];
            const double va = a.at(y + wy, x + wx)[c];
            const double vb = b.at(y + wy, x + wx)[c];
            mu_a += k * va;
            mu_b += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        const double var_a = saa - mu_a * mu_a;
        const double var_b = sbb - mu_b * mu_b;
        const double cov = sab - mu_a * mu_b;
        total += ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                 ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double average_metric(double psnr_db, double ssim_val) {
  const double mse = std::pow(10.0, -psnr_db / 10.0);
  const double dssim = std::sqrt(std::max(0.0, 1.0 - ssim_val));
  return std::sqrt(mse * dssim);
}

double mean_abs_depth_error(const DepthMap& a, const DepthMap& b) {
  if (a.width != b.width || a.height != b.height || a.depth.size() != b.depth.size())
    throw std::invalid_argument("mean_abs_depth_error: depth map sizes differ");
  double s = 0.0;
  for (size_t i = 0; i < a.depth.size(); ++i) s += std::abs(a.depth[i] - b.depth[i]);
  return s / static_cast<double>(a.depth.size());
}

}  // namespace colf
