#include "tkcn/segdata.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <stdexcept>

#include "tkcn/parallel.hpp"
#include "tkcn/rng.hpp"
#include "tkcn/tensor_io.hpp"

namespace tkcn {

Tensor4 labels_to_tensor(const LabelMap& labels) {
  Tensor4 t(Shape{labels.n, 1, labels.h, labels.w});
  for (std::size_t i = 0; i < labels.data.size(); ++i) t[i] = labels.data[i];
  return t;
}

LabelMap labels_from_tensor(const Tensor4& t) {
  if (t.c() != 1) throw std::invalid_argument("labels_from_tensor: expected one channel");
  LabelMap labels(t.n(), t.h(), t.w());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (v != std::floor(v) || std::abs(v) > 1e9) {
      throw std::invalid_argument("labels_from_tensor: non-integer label value");
    }
    labels.data[i] = static_cast<std::int32_t>(v);
  }
  return labels;
}

LabelMap stack_labels(const std::vector<const LabelMap*>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_labels: no parts");
  LabelMap out(0, parts[0]->h, parts[0]->w);
  for (const auto* p : parts) {
    if (p->h != out.h || p->w != out.w) throw std::invalid_argument("stack_labels: size mismatch");
    out.data.insert(out.data.end(), p->data.begin(), p->data.end());
    out.n += p->n;
  }
  return out;
}

Tensor4 stack_images(const std::vector<const Tensor4*>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_images: no parts");
  const Shape& s0 = parts[0]->shape();
  std::size_t n = 0;
  for (const auto* p : parts) {
    if (p->c() != s0.c || p->h() != s0.h || p->w() != s0.w) {
      throw std::invalid_argument("stack_images: shape mismatch");
    }
    n += p->n();
  }
  Tensor4 out(Shape{n, s0.c, s0.h, s0.w});
  double* dst = out.raw();
  for (const auto* p : parts) dst = std::copy(p->raw(), p->raw() + p->size(), dst);
  return out;
}

namespace {

constexpr std::array<std::array<double, 3>, 4> kClassColor = {{
    {0.0, 0.0, 0.0},
    {0.85, 0.30, 0.20},  // circle
    {0.25, 0.75, 0.30},  // rectangle
    {0.25, 0.35, 0.90},  // triangle
}};

struct Candidate {
  std::int32_t cls;
  std::vector<std::size_t> pixels;
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

Candidate draw_shape(Rng& rng, std::size_t size) {
  const double side = static_cast<double>(size);
  Candidate c{static_cast<std::int32_t>(1 + rng.below(3)), {}};
  const double r = rng.uniform(0.05, 0.40) * side;
  const double cx = rng.uniform(r, side - r);
  const double cy = rng.uniform(r, side - r);
  double half_w = r;
  double half_h = r;
  std::array<double, 6> tri{};
  if (c.cls == kRectangle) {
    const double aspect = rng.uniform(0.5, 1.0);
    if (rng.bernoulli(0.5)) half_w *= aspect; else half_h *= aspect;
  } else if (c.cls == kTriangle) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int v = 0; v < 3; ++v) {
      const double a = theta + 2.0 * std::numbers::pi * v / 3.0;
      tri[2 * v] = cx + r * std::cos(a);
      tri[2 * v + 1] = cy + r * std::sin(a);
    }
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      bool inside = false;
      if (c.cls == kCircle) {
        inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
      } else if (c.cls == kRectangle) {
        inside = std::abs(px - cx) <= half_w && std::abs(py - cy) <= half_h;
      } else {
        const double e0 = edge(tri[0], tri[1], tri[2], tri[3], px, py);
        const double e1 = edge(tri[2], tri[3], tri[4], tri[5], px, py);
        const double e2 = edge(tri[4], tri[5], tri[0], tri[1], px, py);
        inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
      if (inside) c.pixels.push_back(y * size + x);
    }
  }
  return c;
}

}  // namespace

SegSample synth_sample(std::uint64_t seed, std::size_t index, std::size_t size, int ignore_index) {
  if (size < 16 || size % 4 != 0) {
    throw std::invalid_argument("synth: size " + std::to_string(size) +
                                " must be a multiple of 4 and at least 16 to place shapes");
  }
  Rng rng = Rng(seed).split(index);
  const std::size_t plane = size * size;
  SegSample s{Tensor4(Shape{1, 3, size, size}), LabelMap(1, size, size, kBackground)};

  // Background: grey base, per-channel tint, two plane waves and pixel noise.
  const double base = rng.uniform(0.35, 0.6);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = rng.uniform(-0.05, 0.05);
  std::array<double, 6> wave{};
  for (auto& v : wave) v = rng.uniform(0.1, 0.5);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double tex = 0.06 * std::sin(wave[0] * x + wave[1] * y + wave[2]) +
                           0.04 * std::sin(wave[3] * x - wave[4] * y + wave[5]);
        s.image(0, c, y, x) = base + tint[c] + tex + rng.uniform(-0.04, 0.04);
      }
    }
  }

  std::vector<int> owner(plane, -1);
  const std::size_t wanted = 1 + rng.below(4);
  int placed = 0;
  for (std::size_t shape = 0; shape < wanted; ++shape) {
    for (int attempt = 0; attempt < 30; ++attempt) {
      Candidate cand = draw_shape(rng, size);
      if (cand.pixels.size() < 9) continue;
      // Keep at least one background pixel between shapes, diagonals included.
      const bool clash = std::any_of(cand.pixels.begin(), cand.pixels.end(), [&](std::size_t p) {
        const std::size_t y = p / size;
        const std::size_t x = p % size;
        for (std::size_t ny = y > 0 ? y - 1 : 0; ny <= std::min(y + 1, size - 1); ++ny)
          for (std::size_t nx = x > 0 ? x - 1 : 0; nx <= std::min(x + 1, size - 1); ++nx)
            if (owner[ny * size + nx] >= 0) return true;
        return false;
      });
      if (clash) continue;
      std::array<double, 3> color{};
      for (std::size_t c = 0; c < 3; ++c) {
        color[c] = kClassColor[static_cast<std::size_t>(cand.cls)][c] + rng.uniform(-0.15, 0.15);
      }
      for (std::size_t p : cand.pixels) {
        owner[p] = placed;
        s.labels.data[p] = cand.cls;
        for (std::size_t c = 0; c < 3; ++c) s.image[c * plane + p] = color[c] + rng.uniform(-0.04, 0.04);
      }
      ++placed;
      break;
    }
  }

  // Inner boundary ring of each shape is unlabelled.
  std::vector<std::int32_t> labels = s.labels.data;
  for (std::size_t p = 0; p < plane; ++p) {
    if (owner[p] < 0) continue;
    const std::size_t y = p / size;
    const std::size_t x = p % size;
    const bool edge_pixel = (x > 0 && owner[p - 1] != owner[p]) || (x + 1 < size && owner[p + 1] != owner[p]) ||
                            (y > 0 && owner[p - size] != owner[p]) || (y + 1 < size && owner[p + size] != owner[p]);
    if (edge_pixel) labels[p] = ignore_index;
  }
  s.labels.data = std::move(labels);
  for (double& v : s.image.data()) v = std::clamp(v, 0.0, 1.0);
  return s;
}

Dataset synth_generate(const SynthOptions& opts) {
  if (opts.num_classes != 4) {
    throw std::invalid_argument("synth: the shape generator emits exactly 4 classes");
  }
  Dataset ds;
  ds.seed = opts.seed;
  ds.size = opts.size;
  ds.num_classes = opts.num_classes;
  ds.first_index = opts.first_index;
  ds.ignore_index = opts.ignore_index;
  ds.samples.resize(opts.count);
  // Validate size before fanning out.
  if (opts.count > 0) ds.samples[0] = synth_sample(opts.seed, opts.first_index, opts.size, opts.ignore_index);
  parallel_for(opts.count > 0 ? opts.count - 1 : 0, [&](std::size_t i) {
    ds.samples[i + 1] = synth_sample(opts.seed, opts.first_index + i + 1, opts.size, opts.ignore_index);
  });
  return ds;
}

namespace {

std::string indexed(const char* stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.tkt", stem, i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["seed"] = ds.seed;
  j["count"] = ds.samples.size();
  j["size"] = ds.size;
  j["num_classes"] = ds.num_classes;
  j["first_index"] = ds.first_index;
  j["ignore_index"] = ds.ignore_index;
  j["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const std::string image = indexed("image", i);
    const std::string labels = indexed("labels", i);
    write_tensor(dir / image, ds.samples[i].image);
    write_tensor(dir / labels, labels_to_tensor(ds.samples[i].labels));
    j["samples"].push_back({{"image", image}, {"labels", labels}});
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("save_dataset: cannot write " + (dir / "manifest.json").string());
  f << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("load_dataset: missing " + (dir / "manifest.json").string());
  const nlohmann::json j = nlohmann::json::parse(f);
  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.size = j.at("size").get<std::size_t>();
  ds.num_classes = j.at("num_classes").get<std::size_t>();
  ds.first_index = j.value("first_index", std::size_t{0});
  ds.ignore_index = j.value("ignore_index", kDefaultIgnoreIndex);
  for (const auto& s : j.at("samples")) {
    ds.samples.push_back({read_tensor(dir / s.at("image").get<std::string>()),
                          labels_from_tensor(read_tensor(dir / s.at("labels").get<std::string>()))});
  }
  if (ds.samples.size() != j.at("count").get<std::size_t>()) {
    throw std::runtime_error("load_dataset: manifest count does not match sample list");
  }
  return ds;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string dataset_sha256(const Dataset& ds) {
  std::vector<std::uint8_t> all;
  for (const auto& s : ds.samples) {
    const auto img = encode_tensor(s.image);
    const auto lbl = encode_tensor(labels_to_tensor(s.labels));
    all.insert(all.end(), img.begin(), img.end());
    all.insert(all.end(), lbl.begin(), lbl.end());
  }
  return sha256_hex(all);
}

}  // namespace tkcn
