// Writes the synthetic 640x640 chest slice used by configs/torso.cfg.
//
// Gray levels follow sigma = gray/255 + 1. Air is 0; a uniform skin and fat
// band (gray 51, sigma 1.2) lines the body wall; inside are soft tissue with a
// deterministic texture, lungs, heart, aorta and a vertebra with its canal.
// Image pixel (c, r) sits at x = o + (c/5) h, y = o + (127 - r/5) h with a
// 0.45 m field of view, so a 128x128 grid samples it exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>

#include "mreit/image_io.hpp"

namespace {

constexpr int kSize = 640;
constexpr double kFov = 0.45;
constexpr double kOrigin = -0.5 * kFov;
constexpr double kSub = kSize / 128.0;
constexpr double kH = kFov / 127.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// uniform in [-1, 1] per lattice point
double lattice(int i, int j, std::uint64_t seed) {
  const auto h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i) * 0x100000001b3ull + static_cast<std::uint32_t>(j)));
  return static_cast<double>(h >> 11) / static_cast<double>(1ull << 52) - 1.0;
}

// bilinear value noise with the given cell size in image pixels
double value_noise(double c, double r, double cell, std::uint64_t seed) {
  const double u = c / cell, v = r / cell;
  const int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
  const double a = u - i, b = v - j;
  const double sa = a * a * (3 - 2 * a), sb = b * b * (3 - 2 * b);
  return (1 - sa) * (1 - sb) * lattice(i, j, seed) + sa * (1 - sb) * lattice(i + 1, j, seed) +
         (1 - sa) * sb * lattice(i, j + 1, seed) + sa * sb * lattice(i + 1, j + 1, seed);
}

bool in_ellipse(double x, double y, double cx, double cy, double a, double b) {
  const double dx = (x - cx) / a, dy = (y - cy) / b;
  return dx * dx + dy * dy <= 1.0;
}

int gray_at(int c, int r) {
  const double x = kOrigin + (c / kSub) * kH;
  const double y = kOrigin + (127.0 - r / kSub) * kH;
  constexpr double a = 0.165, b = 0.115, band = 0.025;
  if (!in_ellipse(x, y, 0, 0, a, b)) return 0;
  if (!in_ellipse(x, y, 0, 0, a - band, b - band)) return 51;
  double g = 118.0 + 10.0 * value_noise(c, r, 48.0, 1) + 6.0 * value_noise(c, r, 5.0, 2);
  if (in_ellipse(x, y, -0.072, 0.008, 0.048, 0.066) || in_ellipse(x, y, 0.076, 0.008, 0.046, 0.064)) {
    g = 24.0 + 6.0 * value_noise(c, r, 12.0, 3);
  }
  if (in_ellipse(x, y, 0.018, 0.018, 0.044, 0.038)) g = 150.0 + 4.0 * value_noise(c, r, 24.0, 4);
  if (in_ellipse(x, y, -0.014, -0.030, 0.011, 0.011)) g = 172.0;
  if (in_ellipse(x, y, 0.0, -0.056, 0.017, 0.014)) g = 232.0;
  if (in_ellipse(x, y, 0.0, -0.077, 0.006, 0.006)) g = 92.0;
  return static_cast<int>(std::lround(std::clamp(g, 1.0, 255.0)));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_torso <output.pgm>\n";
    return 2;
  }
  mreit::GrayImage img{kSize, kSize, std::vector<std::uint8_t>(kSize * kSize)};
  for (int r = 0; r < kSize; ++r)
    for (int c = 0; c < kSize; ++c) img.pixels[static_cast<std::size_t>(r) * kSize + c] = static_cast<std::uint8_t>(gray_at(c, r));
  mreit::write_pgm(argv[1], img);
  return 0;
}
