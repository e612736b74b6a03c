#include "fdft/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "fdft/augment.hpp"
#include "fdft/error.hpp"

namespace fdft {

namespace fs = std::filesystem;

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [label](const Sample& s) { return s.label == label; }));
}

namespace {

std::vector<fs::path> ppm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("missing directory '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  if (files.empty()) throw DatasetError("no .ppm images in '" + dir.string() + "'");
  return files;
}

ImageU8 fit(ImageU8 img, std::size_t size) {
  if (img.h == size && img.w == size) return img;
  return to_u8(resize_bilinear(to_tensor(img), size, size));
}

}  // namespace

LabeledDataset load_dataset_dir(const fs::path& root, std::size_t size) {
  struct Entry {
    std::string key;
    fs::path path;
    int label;
  };
  std::vector<Entry> entries;
  for (const auto& [sub, label] : {std::pair{"real", kReal}, std::pair{"fake", kFake}}) {
    for (auto& p : ppm_files(root / sub)) {
      entries.push_back({fs::relative(p, root).generic_string(), p, label});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.key < b.key; });
  LabeledDataset out;
  out.items.reserve(entries.size());
  for (const auto& e : entries) {
    out.items.push_back({fit(load_ppm(e.path), size), e.label, e.key});
  }
  return out;
}

void SyntheticTaskConfig::validate() const {
  if (artifact_amplitude < 0.0 || artifact_amplitude > 1.0) {
    throw ConfigError("artifact_amplitude must lie in [0, 1]");
  }
  if (artifact_region <= 0.0 || artifact_region > 1.0) {
    throw ConfigError("artifact_region must lie in (0, 1]");
  }
  if (artifact_period < 2) throw ConfigError("artifact_period must be >= 2");
  if (image_size < 2) throw ConfigError("image_size must be >= 2");
}

SyntheticImage synthesize(const SyntheticTaskConfig& cfg, int label, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = cfg.image_size;
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(n));
  std::uniform_real_distribution<double> width(8.0, 24.0);
  std::uniform_real_distribution<double> amp(-1.0, 1.0);

  std::vector<double> v(n * n * 3, 0.0);
  for (std::size_t b = 0; b < cfg.blob_count; ++b) {
    const double cy = pos(rng);
    const double cx = pos(rng);
    const double sigma = width(rng);
    const double a[3] = {amp(rng), amp(rng), amp(rng)};
    const double k = -0.5 / (sigma * sigma);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double g = std::exp(k * (dy * dy + dx * dx));
        for (std::size_t ch = 0; ch < 3; ++ch) v[(y * n + x) * 3 + ch] += a[ch] * g;
      }
  }
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo;
  const double range = *hi - *lo;
  for (auto& x : v) x = range > 0.0 ? (x - mn) / range : 0.5;

  SyntheticImage out;
  out.clean = ImageU8(n, n, 3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.clean.data[i] = static_cast<std::uint8_t>(std::lround(v[i] * 255.0));
  }
  out.image = out.clean;
  if (label != kFake) return out;

  // Rectangle of roughly artifact_region of the area with a random aspect.
  const double area = cfg.artifact_region * static_cast<double>(n * n);
  const auto min_h = static_cast<std::size_t>(std::ceil(area / static_cast<double>(n)));
  const std::size_t rh = std::uniform_int_distribution<std::size_t>(std::min(min_h, n), n)(rng);
  const std::size_t rw =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area / static_cast<double>(rh))), 1, n);
  out.y0 = std::uniform_int_distribution<std::size_t>(0, n - rh)(rng);
  out.x0 = std::uniform_int_distribution<std::size_t>(0, n - rw)(rng);
  out.y1 = out.y0 + rh;
  out.x1 = out.x0 + rw;
  const std::size_t half = cfg.artifact_period / 2;
  for (std::size_t y = out.y0; y < out.y1; ++y)
    for (std::size_t x = out.x0; x < out.x1; ++x) {
      const double sign = ((y / half + x / half) % 2 == 0) ? 1.0 : -1.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double& p = v[(y * n + x) * 3 + ch];
        p = std::clamp(p + sign * cfg.artifact_amplitude, 0.0, 1.0);
        out.image.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(p * 255.0));
      }
    }
  return out;
}

LabeledDataset generate_synthetic(const SyntheticTaskConfig& cfg,
                                  const std::optional<fs::path>& out_root) {
  cfg.validate();
  LabeledDataset out;
  std::vector<std::uint64_t> seeds;
  for (const int label : {kFake, kReal}) {
    const char* dir = label == kFake ? "fake" : "real";
    for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
      const std::uint64_t s = stream_seed(cfg.seed, static_cast<std::uint64_t>(label), i);
      char name[32];
      std::snprintf(name, sizeof name, "%s_%05zu.ppm", dir, i);
      out.items.push_back({synthesize(cfg, label, s).image, label, std::string(dir) + "/" + name});
      seeds.push_back(s);
    }
  }
  if (out_root) {
    fs::create_directories(*out_root / "real");
    fs::create_directories(*out_root / "fake");
    std::ofstream manifest(*out_root / "manifest.csv", std::ios::trunc);
    if (!manifest) throw Error("cannot write manifest in '" + out_root->string() + "'");
    manifest << "path,label,seed\n";
    for (std::size_t i = 0; i < out.items.size(); ++i) {
      const Sample& s = out.items[i];
      save_ppm(s.image, *out_root / s.path);
      manifest << s.path << ',' << s.label << ',' << seeds[i] << '\n';
    }
    if (!manifest) throw Error("failed writing manifest in '" + out_root->string() + "'");
  }
  return out;
}

Splits split(const LabeledDataset& data, const std::array<double, 4>& fractions,
             std::uint64_t seed) {
  const double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");

  std::array<LabeledDataset, 4> parts;
  const char* names[4] = {"train", "val", "test", "finetune"};
  for (std::size_t k = 0; k < 4; ++k) parts[k].split = names[k];

  Rng rng(seed);
  for (const int label : {kReal, kFake}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.items[i].label == label) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);

    // Largest-remainder apportionment of this class.
    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 4> counts{};
    std::array<std::pair<double, std::size_t>, 4> rem{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double exact = fractions[k] * n;
      counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[k] = {exact - static_cast<double>(counts[k]), k};
      assigned += counts[k];
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) ++counts[rem[r % 4].second];

    std::size_t at = 0;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < counts[k]; ++j) parts[k].items.push_back(data.items[idx[at++]]);
  }
  for (auto& p : parts) {
    if (p.items.empty()) throw DatasetError("split '" + p.split + "' is empty");
    std::shuffle(p.items.begin(), p.items.end(), rng);
  }
  return Splits{std::move(parts[0]), std::move(parts[1]), std::move(parts[2]),
                std::move(parts[3])};
}

}  // namespace fdft
