#include "stainforge/synthetic.hpp"

#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "stainforge/error.hpp"
#include "stainforge/patch.hpp"

namespace stainforge {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
};

cv::Mat smooth_noise(int height, int width, double sigma, Rng& rng) {
  cv::Mat noise(height, width, CV_32F);
  for (int y = 0; y < height; ++y) {
    auto* row = noise.ptr<float>(y);
    for (int x = 0; x < width; ++x) row[x] = static_cast<float>(rng.uniform());
  }
  cv::GaussianBlur(noise, noise, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  cv::normalize(noise, noise, 0.0, 1.0, cv::NORM_MINMAX);
  return noise;
}

}  // namespace

StainProfile reference_stain_profile() {
  return {"reference", {0.650, 0.704, 0.286}, {0.072, 0.990, 0.105}, 1.0, 1.0, {0.98, 0.97, 0.98}};
}

StainProfile input_stain_profile(int variant) {
  switch (variant % 3) {
    case 0: return {"lab_a", {0.490, 0.768, 0.412}, {0.210, 0.880, 0.300}, 1.35, 0.70, {0.95, 0.93, 0.97}};
    case 1: return {"lab_b", {0.720, 0.600, 0.350}, {0.040, 1.100, 0.250}, 0.75, 1.30, {0.99, 0.96, 0.90}};
    default: return {"lab_c", {0.550, 0.800, 0.240}, {0.150, 0.850, 0.050}, 1.15, 0.85, {0.92, 0.95, 1.00}};
  }
}

TissueSample generate_tissue(int height, int width, std::uint64_t seed) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "tissue size must be positive");
  Rng rng(seed);
  const double scale = std::sqrt(static_cast<double>(height) * width) / 256.0;

  TissueSample s;
  // Stroma: multi-scale smooth texture.
  cv::Mat coarse = smooth_noise(height, width, 12.0 * scale, rng);
  cv::Mat fine = smooth_noise(height, width, 2.0 * scale, rng);
  s.eosin = 0.35f + 0.45f * coarse + 0.2f * fine;
  s.hematoxylin = 0.06f + 0.08f * smooth_noise(height, width, 4.0 * scale, rng);
  s.blood = cv::Mat::zeros(height, width, CV_32F);

  const int lumens = 1 + static_cast<int>(rng.uniform(0.0, 3.0) * scale * scale);
  for (int i = 0; i < lumens; ++i) {
    const cv::Point c(static_cast<int>(rng.uniform(0, width)), static_cast<int>(rng.uniform(0, height)));
    const cv::Size axes(static_cast<int>(rng.uniform(10, 28) * scale), static_cast<int>(rng.uniform(8, 22) * scale));
    cv::ellipse(s.eosin, c, axes, rng.uniform(0, 180), 0, 360, cv::Scalar(0.02), cv::FILLED, cv::LINE_AA);
    cv::ellipse(s.hematoxylin, c, axes, 0, 0, 360, cv::Scalar(0.0), cv::FILLED, cv::LINE_AA);
  }

  const int nuclei = static_cast<int>(rng.uniform(90, 140) * scale * scale);
  for (int i = 0; i < nuclei; ++i) {
    const cv::Point c(static_cast<int>(rng.uniform(0, width)), static_cast<int>(rng.uniform(0, height)));
    const cv::Size axes(std::max(1, static_cast<int>(rng.uniform(2.5, 6.0) * scale)),
                        std::max(1, static_cast<int>(rng.uniform(2.0, 4.5) * scale)));
    const double density = rng.uniform(0.8, 1.4);
    cv::ellipse(s.hematoxylin, c, axes, rng.uniform(0, 180), 0, 360, cv::Scalar(density), cv::FILLED, cv::LINE_AA);
  }

  const int cells = static_cast<int>(rng.uniform(8, 20) * scale * scale);
  for (int i = 0; i < cells; ++i) {
    const cv::Point c(static_cast<int>(rng.uniform(0, width)), static_cast<int>(rng.uniform(0, height)));
    cv::circle(s.blood, c, std::max(1, static_cast<int>(rng.uniform(2.0, 3.5) * scale)), cv::Scalar(1.0), cv::FILLED,
               cv::LINE_AA);
  }
  cv::GaussianBlur(s.hematoxylin, s.hematoxylin, cv::Size(0, 0), 0.8 * scale);
  cv::GaussianBlur(s.blood, s.blood, cv::Size(0, 0), 0.6 * scale);
  return s;
}

cv::Mat render_tissue(const TissueSample& sample, const StainProfile& profile) {
  // Blood absorbs mostly green and blue regardless of the stain protocol.
  static constexpr std::array<double, 3> kBloodOd = {0.10, 1.10, 0.90};
  const int height = sample.eosin.rows, width = sample.eosin.cols;
  cv::Mat rgb(height, width, CV_8UC3);
  for (int y = 0; y < height; ++y) {
    const auto* h = sample.hematoxylin.ptr<float>(y);
    const auto* e = sample.eosin.ptr<float>(y);
    const auto* b = sample.blood.ptr<float>(y);
    auto* out = rgb.ptr<cv::Vec3b>(y);
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double od = profile.hematoxylin_strength * h[x] * profile.hematoxylin_od[c] +
                          profile.eosin_strength * e[x] * profile.eosin_od[c] + b[x] * kBloodOd[c];
        const double v = profile.illuminant[c] * std::exp(-od);
        out[x][c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return rgb;
}

torch::Tensor render_tissue_tensor(const TissueSample& sample, const StainProfile& profile) {
  return image_to_tensor(render_tissue(sample, profile));
}

}  // namespace stainforge
