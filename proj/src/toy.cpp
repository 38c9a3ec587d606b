#include "biqa/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"

namespace biqa::toy {

namespace {

void quantize(Raster& r) {
  r.clamp();
  for (float& v : r.data()) v = std::round(v * 255.0F) / 255.0F;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu.png", prefix, i);
  return buf;
}

}  // namespace

Raster source_patch(int size, std::uint64_t seed) {
  if (size < 16) fail(ErrorCode::invalid_argument, "toy patches must be at least 16x16");
  RngStream rng(seed, 0x50C);
  Raster r(size, size, 3);
  double base[3], grad_x[3], grad_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.25, 0.65);
    grad_x[c] = rng.uniform(-0.25, 0.25);
    grad_y[c] = rng.uniform(-0.25, 0.25);
  }
  const double freq = rng.uniform(0.08, 0.3), angle = rng.uniform(0.0, std::numbers::pi);
  const double amp = rng.uniform(0.04, 0.12), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fx = freq * std::cos(angle), fy = freq * std::sin(angle);
  struct Shape {
    bool disk;
    double cx, cy, a, b;
    double color[3];
  };
  std::vector<Shape> shapes(2 + rng.uniform_int(3));
  for (auto& s : shapes) {
    s.disk = rng.bernoulli(0.5);
    s.cx = rng.uniform(0.0, size);
    s.cy = rng.uniform(0.0, size);
    s.a = rng.uniform(size * 0.1, size * 0.35);
    s.b = rng.uniform(size * 0.1, size * 0.35);
    for (double& c : s.color) c = rng.uniform(0.05, 0.95);
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = x / (size - 1.0) - 0.5, v = y / (size - 1.0) - 0.5;
      const double wave = amp * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) + phase);
      for (int c = 0; c < 3; ++c) r.at(c, y, x) = static_cast<float>(base[c] + grad_x[c] * u + grad_y[c] * v + wave);
      for (const auto& s : shapes) {
        const double dx = (x - s.cx) / s.a, dy = (y - s.cy) / s.b;
        const bool inside = s.disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside)
          for (int c = 0; c < 3; ++c) r.at(c, y, x) = static_cast<float>(s.color[c] + 0.5 * wave);
      }
      const double grain = 0.03 * (rng.uniform() - 0.5);
      for (int c = 0; c < 3; ++c) r.at(c, y, x) += static_cast<float>(grain);
    }
  quantize(r);
  return r;
}

std::vector<Raster> source_patches(int count, int size, std::uint64_t seed) {
  std::vector<Raster> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(source_patch(size, mix_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

const std::vector<int>& default_types() {
  static const std::vector<int> types{1, 9, 11, 13, 23};
  return types;
}

std::vector<LabeledImage> corpus(const std::vector<Raster>& sources, const std::vector<int>& types,
                                 std::uint64_t seed) {
  std::vector<LabeledImage> out;
  out.reserve(sources.size() * types.size() * kDistortionLevels);
  for (std::size_t s = 0; s < sources.size(); ++s)
    for (std::size_t t = 0; t < types.size(); ++t)
      for (int level = 1; level <= kDistortionLevels; ++level) {
        const DistortionSpec spec{types[t], level};
        Raster img = apply(sources[s], spec, RngStream(corpus_seed(seed, s, spec.class_index()), 0));
        quantize(img);
        out.push_back({"src" + std::to_string(s) + "_" + label(spec), std::move(img),
                       static_cast<int>(t) * kDistortionLevels + level - 1});
      }
  return out;
}

std::vector<ScoredImage> quality_set(const QualityOptions& o) {
  if (o.n_images < 2 || o.types.empty()) fail(ErrorCode::invalid_argument, "quality set needs images and types");
  const auto sources = source_patches(o.n_images, o.size, mix_seed(o.seed, 0x5005));
  RngStream noise(o.seed, 0x2015E);
  const std::size_t classes = o.types.size() * kDistortionLevels;
  std::vector<ScoredImage> out;
  out.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::size_t cls = i % classes;
    const DistortionSpec spec{o.types[cls / kDistortionLevels], static_cast<int>(cls % kDistortionLevels) + 1};
    Raster img = apply(sources[i], spec, RngStream(mix_seed(o.seed, i), 0xD157));
    quantize(img);
    const double mos =
        std::clamp(o.mos_top - o.mos_slope * (spec.level - 1) + o.noise_sd * noise.normal(), 0.0, 1.0);
    out.push_back({numbered("q", i) + "#" + label(spec), std::move(img), mos});
  }
  return out;
}

std::vector<ScoredImage> natural_set(int n_images, int size, double noise_sd, std::uint64_t seed) {
  if (n_images < 2) fail(ErrorCode::invalid_argument, "natural set needs at least 2 images");
  const auto sources = source_patches(n_images, size, mix_seed(seed, 0xA7));
  RngStream rng(seed, 0xA71);
  constexpr int kStages[] = {1, 11, 17};  // blur, noise, darkening
  std::vector<ScoredImage> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Raster img = sources[i];
    int total = 0;
    for (int stage = 0; stage < 3; ++stage) {
      const int level = static_cast<int>(rng.uniform_int(kDistortionLevels + 1));  // 0 skips the stage
      total += level;
      if (level > 0) img = apply(img, {kStages[stage], level}, rng.derive(i * 3 + static_cast<std::size_t>(stage)));
    }
    quantize(img);
    const double s = total / 15.0;
    const double mos = std::clamp(0.9 - 0.7 * s + noise_sd * rng.normal(), 0.0, 1.0);
    out.push_back({numbered("n", i), std::move(img), mos});
  }
  return out;
}

Manifest write_set(const std::vector<ScoredImage>& images, const std::filesystem::path& dir,
                   const std::string& dataset_id) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string());
  std::string text = "path,score\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string name = numbered(dataset_id.c_str(), i);
    save_image(images[i].image, dir / name);
    text += name + "," + csv::format_double(images[i].mos) + "\n";
  }
  {
    std::ofstream out(dir / "manifest.csv", std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write " + (dir / "manifest.csv").string());
    out << text;
  }
  auto m = load_manifest(dir / "manifest.csv");
  m.dataset_id = dataset_id;
  return m;
}

void write_sources(const std::vector<Raster>& sources, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string());
  for (std::size_t i = 0; i < sources.size(); ++i) save_image(sources[i], dir / numbered("source", i));
}

}  // namespace biqa::toy
