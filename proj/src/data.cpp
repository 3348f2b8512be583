#include "dckd/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "dckd/degradation.hpp"
#include "dckd/errors.hpp"

namespace dckd {
namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

void blend(Image& img, int y, int x, const Color& c, double a) {
  auto p = img.pixel(y, x);
  for (int ch = 0; ch < 3; ++ch) p[ch] = (1.0 - a) * p[ch] + a * c[ch];
}

void paint_background(Image& img, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Color a = random_color(rng);
  const Color b = random_color(rng);
  const double angle = u(rng) * 2.0 * std::numbers::pi;
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  // Low-frequency sinusoid field on top of a linear gradient.
  const double fx = 0.5 + 2.0 * u(rng);
  const double fy = 0.5 + 2.0 * u(rng);
  const double phase = u(rng) * 2.0 * std::numbers::pi;
  const int n = img.height();
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double s = (dx * x + dy * y) / n;
      const double t = std::clamp(0.5 + 0.5 * s, 0.0, 1.0);
      const double wave =
          0.15 * std::sin(2.0 * std::numbers::pi * (fx * x / n + fy * y / n) + phase);
      auto p = img.pixel(y, x);
      for (int ch = 0; ch < 3; ++ch) p[ch] = (1.0 - t) * a[ch] + t * b[ch] + wave;
    }
  }
}

void paint_blob(Image& img, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = img.height();
  const double cy = u(rng) * n;
  const double cx = u(rng) * img.width();
  const double sigma = (0.04 + 0.15 * u(rng)) * n;
  const Color c = random_color(rng);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      blend(img, y, x, c, 0.9 * std::exp(-0.5 * r2 / (sigma * sigma)));
    }
  }
}

void paint_rectangle(Image& img, Rng& rng) {
  const int n = img.height();
  std::uniform_int_distribution<int> pos(0, n - 2);
  int y0 = pos(rng), y1 = pos(rng), x0 = pos(rng), x1 = pos(rng);
  if (y0 > y1) std::swap(y0, y1);
  if (x0 > x1) std::swap(x0, x1);
  const Color c = random_color(rng);
  for (int y = y0; y <= y1 + 1 && y < n; ++y) {
    for (int x = x0; x <= x1 + 1 && x < img.width(); ++x) blend(img, y, x, c, 1.0);
  }
}

void paint_pattern(Image& img, Rng& rng, bool checker) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = img.height();
  const int period = std::uniform_int_distribution<int>(2, 8)(rng);
  const Color a = random_color(rng);
  const Color b = random_color(rng);
  const int size = std::uniform_int_distribution<int>(n / 4, n / 2)(rng);
  const int oy = std::uniform_int_distribution<int>(0, n - size)(rng);
  const int ox = std::uniform_int_distribution<int>(0, img.width() - size)(rng);
  const bool vertical = u(rng) < 0.5;
  for (int y = oy; y < oy + size; ++y) {
    for (int x = ox; x < ox + size; ++x) {
      bool on;
      if (checker) {
        on = (((y - oy) / period) + ((x - ox) / period)) % 2 == 0;
      } else {
        on = ((vertical ? x - ox : y - oy) / period) % 2 == 0;
      }
      blend(img, y, x, on ? a : b, 1.0);
    }
  }
}

}  // namespace

std::vector<Image> make_toy_corpus(std::uint64_t seed, int count, int size) {
  if (count < 1) throw ParameterError("corpus count must be >= 1");
  if (size < 4) throw ParameterError("corpus image size must be >= 4");
  Rng rng(seed);
  std::vector<Image> corpus;
  corpus.reserve(count);
  for (int i = 0; i < count; ++i) {
    Image img(size, size, 3);
    paint_background(img, rng);
    const int shapes = std::uniform_int_distribution<int>(3, 7)(rng);
    for (int s = 0; s < shapes; ++s) {
      switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: paint_blob(img, rng); break;
        case 1: paint_rectangle(img, rng); break;
        case 2: paint_pattern(img, rng, true); break;
        default: paint_pattern(img, rng, false); break;
      }
    }
    for (double& v : img.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    corpus.push_back(std::move(img));
  }
  return corpus;
}

PairedSample synth_pair(const Image& gt, int scale) {
  if (scale < 1) throw ParameterError("scale must be >= 1");
  if (gt.height() % scale != 0 || gt.width() % scale != 0) {
    throw ShapeError("gt " + gt.shape_string() + " is not divisible by scale " +
                     std::to_string(scale));
  }
  PairedSample s;
  s.gt = gt;
  s.scale = scale;
  if (scale == 1) {
    s.lq = gt;
    s.degradation = "identity";
  } else {
    s.lq = resize_bilinear(gt, gt.height() / scale, gt.width() / scale);
    s.degradation = "bilinear_down_x" + std::to_string(scale);
  }
  return s;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      auto src = img.pixel(y, img.width() - 1 - x);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  }
  return out;
}

Image flip_vertical(const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      auto src = img.pixel(img.height() - 1 - y, x);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  }
  return out;
}

Image transpose(const Image& img) {
  Image out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      auto src = img.pixel(y, x);
      std::copy(src.begin(), src.end(), out.pixel(x, y).begin());
    }
  }
  return out;
}

Image apply_augmentation(const Image& img, const Augmentation& aug) {
  Image out = img;
  if (aug.flip_horizontal) out = flip_horizontal(out);
  if (aug.flip_vertical) out = flip_vertical(out);
  if (aug.transpose) out = transpose(out);
  return out;
}

PairedSample crop_pair(const PairedSample& sample, int patch, int y, int x) {
  if (patch < 1 || y < 0 || x < 0 || y + patch > sample.lq.height() ||
      x + patch > sample.lq.width()) {
    throw ParameterError("crop of " + std::to_string(patch) + " px at (" + std::to_string(y) +
                         ", " + std::to_string(x) + ") exceeds lq " + sample.lq.shape_string());
  }
  const int r = sample.scale;
  PairedSample out;
  out.scale = r;
  out.degradation = sample.degradation;
  out.lq = Image(patch, patch, sample.lq.channels());
  out.gt = Image(patch * r, patch * r, sample.gt.channels());
  for (int dy = 0; dy < patch; ++dy) {
    for (int dx = 0; dx < patch; ++dx) {
      auto src = sample.lq.pixel(y + dy, x + dx);
      std::copy(src.begin(), src.end(), out.lq.pixel(dy, dx).begin());
    }
  }
  for (int dy = 0; dy < patch * r; ++dy) {
    for (int dx = 0; dx < patch * r; ++dx) {
      auto src = sample.gt.pixel(r * y + dy, r * x + dx);
      std::copy(src.begin(), src.end(), out.gt.pixel(dy, dx).begin());
    }
  }
  return out;
}

PairedSample crop_augment(const PairedSample& sample, int patch, Rng& rng) {
  if (patch < 1 || patch > sample.lq.height() || patch > sample.lq.width()) {
    throw ParameterError("patch " + std::to_string(patch) + " exceeds lq " +
                         sample.lq.shape_string());
  }
  const int y = std::uniform_int_distribution<int>(0, sample.lq.height() - patch)(rng);
  const int x = std::uniform_int_distribution<int>(0, sample.lq.width() - patch)(rng);
  PairedSample out = crop_pair(sample, patch, y, x);
  std::bernoulli_distribution coin(0.5);
  Augmentation aug;
  aug.flip_horizontal = coin(rng);
  aug.flip_vertical = coin(rng);
  aug.transpose = coin(rng);
  out.lq = apply_augmentation(out.lq, aug);
  out.gt = apply_augmentation(out.gt, aug);
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 3) throw ShapeError("write_ppm needs a 3-channel image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
    throw LoadError("'" + path.string() + "' is not an 8-bit binary PPM");
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw LoadError("'" + path.string() + "': truncated pixel data");
  Image img(h, w, 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / 255.0;
  return img;
}

void save_corpus(const std::filesystem::path& dir, const std::vector<Image>& images,
                 std::uint64_t seed, int size) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"generator", "make_toy_corpus"},
                             {"seed", seed},
                             {"count", images.size()},
                             {"size", size},
                             {"format", "ppm-p6-8bit"},
                             {"files", nlohmann::json::array()}};
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04zu.ppm", i);
    write_ppm(dir / name, images[i]);
    manifest["files"].push_back(name);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace dckd
