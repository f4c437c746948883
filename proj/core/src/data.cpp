#include "evmamba/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evmamba/checkpoint.hpp"
#include "evmamba/random.hpp"

namespace evm {

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw Error("dataset: images must be [K×3×H×W], got " + shape_str(images.shape()));
  }
  if (images.dim(0) != labels.size()) throw Error("dataset: image and label counts differ");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

namespace {

bool inside(std::size_t kind, double dy, double dx, double r) {
  switch (kind) {
    case 0: return std::abs(dy) <= r && std::abs(dx) <= r;
    case 1: return dy * dy + dx * dx <= r * r;
    case 2: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
    case 3: return (std::abs(dy) <= r / 3.0 && std::abs(dx) <= r) || (std::abs(dx) <= r / 3.0 && std::abs(dy) <= r);
    case 4: {
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 >= 0.36 * r * r;
    }
    default: return std::abs(dy) <= r / 4.0 && std::abs(dx) <= r;
  }
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count == 0 || spec.size < 8) throw Error("synthetic dataset: need count >= 1 and size >= 8");
  if (spec.classes < 2 || spec.classes > 6) throw Error("synthetic dataset: classes must be in 2..6");
  Rng rng(spec.seed);
  const std::size_t s = spec.size, plane = s * s;
  std::vector<double> pixels(spec.count * 3 * plane);
  std::vector<int> labels(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t kind = i % spec.classes;
    labels[i] = static_cast<int>(kind);
    const double r = rng.uniform(s / 6.0, s / 3.5);
    const double cy = rng.uniform(r, s - 1 - r);
    const double cx = rng.uniform(r, s - 1 - r);
    double color[3];
    for (auto& c : color) c = rng.uniform(0.4, 1.0);
    double* img = pixels.data() + i * 3 * plane;
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const bool on = inside(kind, static_cast<double>(y) - cy, static_cast<double>(x) - cx, r);
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = (on ? color[c] : 0.0) + spec.noise * rng.normal();
          img[c * plane + y * s + x] = static_cast<float>(v);
        }
      }
  }
  Dataset d{Tensor({spec.count, 3, s, s}, std::move(pixels)), std::move(labels), spec.classes, "train"};
  d.validate();
  return d;
}

void save_dataset_dir(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["count"] = data.size();
  meta["channels"] = 3;
  meta["height"] = data.images.dim(2);
  meta["width"] = data.images.dim(3);
  meta["num_classes"] = data.num_classes;
  meta["split"] = data.split;
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  std::ofstream img(dir / "images.f32", std::ios::binary);
  for (double v : data.images.data()) {
    const float f = static_cast<float>(v);
    img.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  std::ofstream lab(dir / "labels.u32", std::ios::binary);
  for (int y : data.labels) {
    const auto u = static_cast<std::uint32_t>(y);
    lab.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
  if (!img || !lab) throw Error("failed writing dataset to '" + dir.string() + "'");
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw Error("dataset: cannot read '" + (dir / "meta.json").string() + "'");
  nlohmann::json meta;
  std::size_t count = 0, h = 0, w = 0, classes = 0;
  std::string split = "train";
  try {
    meta = nlohmann::json::parse(meta_in);
    count = meta.at("count").get<std::size_t>();
    h = meta.at("height").get<std::size_t>();
    w = meta.at("width").get<std::size_t>();
    classes = meta.at("num_classes").get<std::size_t>();
    if (meta.contains("channels") && meta.at("channels").get<std::size_t>() != 3) {
      throw Error("dataset: only 3-channel images are supported");
    }
    if (meta.contains("split")) split = meta.at("split").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("dataset: bad meta.json: ") + e.what());
  }
  const auto img = read_file_bytes(dir / "images.f32");
  const auto lab = read_file_bytes(dir / "labels.u32");
  const std::size_t numel = count * 3 * h * w;
  if (img.size() != numel * sizeof(float)) throw Error("dataset: images.f32 has the wrong size");
  if (lab.size() != count * sizeof(std::uint32_t)) throw Error("dataset: labels.u32 has the wrong size");
  std::vector<double> pixels(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    float f;
    std::memcpy(&f, img.data() + i * sizeof f, sizeof f);
    pixels[i] = f;
  }
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u;
    std::memcpy(&u, lab.data() + i * sizeof u, sizeof u);
    labels[i] = static_cast<int>(u);
  }
  Dataset d{Tensor({count, 3, h, w}, std::move(pixels)), std::move(labels), classes, split};
  d.validate();
  return d;
}

Dataset load_dataset(const std::string& source) {
  const std::string prefix = "synthetic";
  if (source.compare(0, prefix.size(), prefix) != 0) return load_dataset_dir(source);
  SyntheticSpec spec;
  std::string rest = source.substr(prefix.size());
  if (!rest.empty()) {
    if (rest[0] != ':') throw Error("dataset: expected 'synthetic:key=value,...', got '" + source + "'");
    std::stringstream ss(rest.substr(1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error("dataset: bad synthetic option '" + item + "'");
      const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
      try {
        if (key == "count") spec.count = std::stoul(value);
        else if (key == "classes") spec.classes = std::stoul(value);
        else if (key == "size") spec.size = std::stoul(value);
        else if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "noise") spec.noise = std::stod(value);
        else throw Error("dataset: unknown synthetic option '" + key + "'");
      } catch (const std::logic_error&) {
        throw Error("dataset: bad value for '" + key + "'");
      }
    }
  }
  return make_synthetic(spec);
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw Error("flip_horizontal: expected [C×H×W]");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<double> out(image.numel());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = image[(ch * h + y) * w + (w - 1 - x)];
  return Tensor(image.shape(), std::move(out));
}

}  // namespace evm
