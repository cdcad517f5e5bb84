#include "divcot/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <set>
#include <stdexcept>
#include <thread>

#include "divcot/freq.hpp"
#include "divcot/image_io.hpp"
#include "divcot/parallel.hpp"
#include "divcot/rng.hpp"

namespace fs = std::filesystem;

namespace divcot {

namespace {

constexpr int kMaxSampleAttempts = 1000;

struct Rgb {
  double r, g, b;
};

Rgb hsv_color(double h, double s, double v) {
  Tensor px({3, 1, 1}, std::vector<double>{h - std::floor(h), s, v});
  const Tensor rgb = hsv_to_rgb(px);
  return {rgb[0], rgb[1], rgb[2]};
}

// Low-frequency field: a coarse random lattice, bilinearly interpolated.
std::vector<double> smooth_field(Rng& rng, int size, int cells, double lo, double hi) {
  std::vector<double> lattice(static_cast<std::size_t>((cells + 1) * (cells + 1)));
  for (double& v : lattice) v = rng.uniform(lo, hi);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fy = (y + 0.5) * cells / size, fx = (x + 0.5) * cells / size;
      const int y0 = std::min(cells - 1, static_cast<int>(fy)), x0 = std::min(cells - 1, static_cast<int>(fx));
      const double wy = fy - y0, wx = fx - x0;
      auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy * (cells + 1) + xx)]; };
      out[static_cast<std::size_t>(y) * size + x] = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                                                    wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    }
  return out;
}

double cross(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Rasterizes one shape of `kind` (0 rectangle, 1 disk, 2 triangle) at pixel centres.
Mask rasterize(int kind, Rng& rng, int size) {
  Mask m(size, size, 0);
  const double cx = rng.uniform(0.15, 0.85) * size, cy = rng.uniform(0.15, 0.85) * size;
  const double r = rng.uniform(0.09, 0.22) * size;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double aspect = rng.uniform(0.6, 1.0);
  double tx[3], ty[3];
  for (int k = 0; k < 3; ++k) {
    const double a = angle + k * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.3, 0.3);
    tx[k] = cx + r * 1.2 * std::cos(a);
    ty[k] = cy + r * 1.2 * std::sin(a);
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      bool in = false;
      if (kind == 0) {
        const double u = ca * px + sa * py, v = -sa * px + ca * py;
        in = std::abs(u) <= r && std::abs(v) <= r * aspect;
      } else if (kind == 1) {
        in = px * px + py * py <= r * r;
      } else {
        const double qx = x + 0.5, qy = y + 0.5;
        const double d0 = cross(tx[1] - tx[0], ty[1] - ty[0], qx - tx[0], qy - ty[0]);
        const double d1 = cross(tx[2] - tx[1], ty[2] - ty[1], qx - tx[1], qy - ty[1]);
        const double d2 = cross(tx[0] - tx[2], ty[0] - ty[2], qx - tx[2], qy - ty[2]);
        in = (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
      }
      m(y, x) = in ? 1 : 0;
    }
  return m;
}

void quantize(Tensor& img) {
  for (double& v : img.values()) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

std::string sample_name(int id, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.%s", id, ext);
  return buf;
}

nlohmann::json stats_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

ChannelStats stats_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

void accumulate(const Tensor& t, std::vector<long double>& sum, std::vector<long double>& sq) {
  const std::size_t c = t.dim(0), p = t.dim(1) * t.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < p; ++i) {
      const long double v = t[ch * p + i];
      sum[ch] += v;
      sq[ch] += v * v;
    }
}

ChannelStats finish(const std::vector<long double>& sum, const std::vector<long double>& sq, double n) {
  ChannelStats s;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    const double mean = n > 0 ? static_cast<double>(sum[c] / n) : 0.0;
    const double var = n > 0 ? static_cast<double>(sq[c] / n) - mean * mean : 0.0;
    const double sd = std::sqrt(std::max(var, 0.0));
    s.mean.push_back(mean);
    s.std.push_back(sd > 1e-8 ? sd : 1.0);
  }
  return s;
}

void validate(const GenerateOptions& opt) {
  if (opt.classes < 2 || opt.classes > 8) throw std::invalid_argument("generate_dataset: classes must be in [2, 8]");
  if (opt.size != 32 && opt.size != 64 && opt.size != 128)
    throw std::invalid_argument("generate_dataset: size must be 32, 64 or 128");
  if (opt.count < 0) throw std::invalid_argument("generate_dataset: count must be non-negative");
  if (opt.val_count > opt.count) throw std::invalid_argument("generate_dataset: val_count exceeds count");
}

int resolved_val_count(const GenerateOptions& opt) { return opt.val_count >= 0 ? opt.val_count : opt.count / 6; }

nlohmann::json manifest_json(const Dataset& ds) {
  nlohmann::json samples = nlohmann::json::array();
  for (const Sample& s : ds.samples)
    samples.push_back({{"id", s.id}, {"image", "images/" + sample_name(s.id, "ppm")},
                       {"mask", "masks/" + sample_name(s.id, "pgm")}});
  const GenerateOptions& o = ds.options;
  return {{"format", "divcot-dataset-1"},
          {"seed", o.seed},
          {"count", o.count},
          {"size", o.size},
          {"classes", o.classes},
          {"val_count", resolved_val_count(o)},
          {"hue_jitter", o.hue_jitter},
          {"noise_sigma", o.noise_sigma},
          {"train_ids", ds.train_ids},
          {"val_ids", ds.val_ids},
          {"samples", samples},
          {"normalization", {{"rgb", stats_json(ds.norm.rgb)}, {"hsv", stats_json(ds.norm.hsv)}, {"dct", stats_json(ds.norm.dct)}}},
          {"content_hash", ds.content_hash}};
}

nlohmann::json read_manifest(const std::string& root) {
  const std::string path = (fs::path(root) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open dataset manifest");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": malformed manifest: " + e.what());
  }
}

GenerateOptions options_from_manifest(const nlohmann::json& j) {
  GenerateOptions o;
  o.seed = j.at("seed").get<std::uint64_t>();
  o.count = j.at("count").get<int>();
  o.size = j.at("size").get<int>();
  o.classes = j.at("classes").get<int>();
  o.val_count = j.at("val_count").get<int>();
  o.hue_jitter = j.at("hue_jitter").get<double>();
  o.noise_sigma = j.at("noise_sigma").get<double>();
  return o;
}

}  // namespace

const ChannelStats& Normalization::of(Domain d) const {
  switch (d) {
    case Domain::Rgb: return rgb;
    case Domain::Hsv: return hsv;
    case Domain::Dct: return dct;
  }
  return rgb;
}

Sample generate_sample(const GenerateOptions& opt, int id) {
  validate(opt);
  const int s = opt.size;
  const std::size_t n = static_cast<std::size_t>(s) * s;
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    Rng rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(attempt)}));
    Sample out;
    out.id = id;
    out.image = Tensor({3, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
    out.mask = LabelMap(s, s, 0);
    const Rgb base = hsv_color(rng.uniform(), rng.uniform(0.0, 0.5), rng.uniform(0.35, 0.8));
    const double bg[3] = {base.r, base.g, base.b};
    for (std::size_t c = 0; c < 3; ++c) {
      const auto field = smooth_field(rng, s, 4, -0.2, 0.2);
      for (std::size_t i = 0; i < n; ++i) out.image[c * n + i] = bg[c] + field[i];
    }

    const int shapes = static_cast<int>(rng.uniform_int(1, 4));
    for (int k = 0; k < shapes; ++k) {
      const int cls = static_cast<int>(rng.uniform_int(1, opt.classes - 1));
      const int kind = (cls - 1) % 3;
      Mask m;
      bool placed = false;
      for (int tries = 0; tries < 30 && !placed; ++tries) {
        m = rasterize(kind, rng, s);
        placed = true;
        std::size_t area = 0;
        for (std::size_t i = 0; i < n; ++i) {
          area += m.data[i];
          if (m.data[i] && out.mask.data[i]) placed = false;
        }
        if (area == 0) placed = false;
      }
      if (!placed) continue;
      const double base_hue = static_cast<double>(cls - 1) / (opt.classes - 1);
      const Rgb col = hsv_color(base_hue + rng.uniform(-opt.hue_jitter, opt.hue_jitter), rng.uniform(0.35, 0.9),
                                rng.uniform(0.35, 0.9));
      // Class-specific stripe texture: orientation and period depend on the class.
      const double theta = (cls - 1) * std::numbers::pi / opt.classes;
      const double period = 3.0 + (cls - 1) % 3;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double amp = rng.uniform(0.08, 0.18);
      const double cols[3] = {col.r, col.g, col.b};
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          if (!m(y, x)) continue;
          const double t = amp * std::cos(2.0 * std::numbers::pi * (x * std::cos(theta) + y * std::sin(theta)) / period + phase);
          const std::size_t i = static_cast<std::size_t>(y) * s + x;
          for (std::size_t c = 0; c < 3; ++c) out.image[c * n + i] = cols[c] + t;
          out.mask.data[i] = static_cast<std::uint8_t>(cls);
        }
    }

    for (double& v : out.image.values()) v += opt.noise_sigma * rng.normal();
    quantize(out.image);
    std::size_t fg = 0;
    for (auto v : out.mask.data) fg += v != 0;
    const double frac = static_cast<double>(fg) / static_cast<double>(n);
    if (frac >= 0.05 && frac <= 0.6) return out;
  }
  throw std::runtime_error("generate_sample: could not meet the shape-fraction bounds for sample " + std::to_string(id));
}

std::string content_hash(const std::vector<Sample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const Sample& s : samples) {
    feed(encode_ppm(s.image));
    feed(encode_pgm(s.mask));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Normalization compute_normalization(const std::vector<Sample>& samples, const std::vector<int>& ids) {
  std::vector<long double> rs(3), rq(3), hs(3), hq(3), ds(64), dq(64);
  double pixels = 0, cells = 0;
  for (int id : ids) {
    const Tensor& img = samples.at(static_cast<std::size_t>(id)).image;
    accumulate(img, rs, rq);
    accumulate(rgb_to_hsv(img), hs, hq);
    Tensor scaled = img;
    for (double& v : scaled.values()) v *= 255.0;
    const Tensor cube = dct_transform(scaled);
    accumulate(cube, ds, dq);
    pixels += static_cast<double>(img.dim(1) * img.dim(2));
    cells += static_cast<double>(cube.dim(1) * cube.dim(2));
  }
  return {finish(rs, rq, pixels), finish(hs, hq, pixels), finish(ds, dq, cells)};
}

Tensor to_domain_input(const Tensor& rgb, Domain domain, const Normalization& norm) {
  Tensor x;
  if (domain == Domain::Rgb) {
    x = rgb;
  } else if (domain == Domain::Hsv) {
    x = rgb_to_hsv(rgb);
  } else {
    Tensor scaled = rgb;
    for (double& v : scaled.values()) v *= 255.0;
    x = dct_transform(scaled);
  }
  const ChannelStats& st = norm.of(domain);
  const std::size_t c = x.dim(0), p = x.dim(1) * x.dim(2);
  if (st.mean.size() != c) throw std::invalid_argument("to_domain_input: normalization stats do not match the domain");
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < p; ++i) x[ch * p + i] = (x[ch * p + i] - st.mean[ch]) / st.std[ch];
  return x;
}

Dataset generate_dataset(const GenerateOptions& opt) {
  validate(opt);
  Dataset ds;
  ds.options = opt;
  ds.options.val_count = resolved_val_count(opt);
  ds.samples.resize(static_cast<std::size_t>(opt.count));
  parallel_for(ds.samples.size(), static_cast<int>(std::thread::hardware_concurrency()), [&](std::size_t i) { ds.samples[i] = generate_sample(opt, static_cast<int>(i)); });
  const int train = opt.count - ds.options.val_count;
  for (int i = 0; i < opt.count; ++i) (i < train ? ds.train_ids : ds.val_ids).push_back(i);
  ds.norm = compute_normalization(ds.samples, ds.train_ids);
  if (ds.train_ids.empty()) ds.norm = compute_normalization(ds.samples, ds.val_ids);
  ds.content_hash = content_hash(ds.samples);
  return ds;
}

Dataset generate_dataset(const GenerateOptions& opt, const std::string& root) {
  Dataset ds = generate_dataset(opt);
  ds.root = root;
  const fs::path base(root);
  std::error_code ec;
  fs::create_directories(base / "images", ec);
  fs::create_directories(base / "masks", ec);
  if (ec) throw std::runtime_error(root + ": cannot create dataset directories: " + ec.message());
  for (const Sample& s : ds.samples) {
    write_ppm((base / "images" / sample_name(s.id, "ppm")).string(), s.image);
    write_pgm((base / "masks" / sample_name(s.id, "pgm")).string(), s.mask);
  }
  const std::string path = (base / "manifest.json").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << manifest_json(ds).dump(2) << '\n';
  if (!out) throw std::runtime_error(path + ": write failed");
  return ds;
}

Dataset load_dataset(const std::string& root) {
  const auto j = read_manifest(root);
  Dataset ds;
  ds.root = root;
  try {
    ds.options = options_from_manifest(j);
    ds.train_ids = j.at("train_ids").get<std::vector<int>>();
    ds.val_ids = j.at("val_ids").get<std::vector<int>>();
    const auto& n = j.at("normalization");
    ds.norm = {stats_from_json(n.at("rgb")), stats_from_json(n.at("hsv")), stats_from_json(n.at("dct"))};
    ds.content_hash = j.at("content_hash").get<std::string>();
    for (const auto& e : j.at("samples")) {
      Sample s;
      s.id = e.at("id").get<int>();
      s.image = read_ppm((fs::path(root) / e.at("image").get<std::string>()).string());
      s.mask = read_pgm((fs::path(root) / e.at("mask").get<std::string>()).string());
      if (s.id != static_cast<int>(ds.samples.size())) throw std::runtime_error(root + ": sample ids must be dense");
      if (static_cast<int>(s.image.dim(1)) != ds.options.size || s.mask.height != ds.options.size)
        throw std::runtime_error(root + ": sample " + std::to_string(s.id) + " has the wrong size");
      for (auto v : s.mask.data)
        if (v != kIgnoreLabel && v >= ds.options.classes)
          throw std::runtime_error(root + ": sample " + std::to_string(s.id) + " has an out-of-range class id");
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(root + "/manifest.json: " + e.what());
  }
  return ds;
}

VerifyResult verify_dataset(const std::string& root) {
  VerifyResult r;
  const auto j = read_manifest(root);
  r.expected_hash = j.at("content_hash").get<std::string>();
  const Dataset regen = generate_dataset(options_from_manifest(j));
  if (regen.content_hash != r.expected_hash)
    r.problems.push_back("regenerated content hash " + regen.content_hash + " differs from manifest");
  try {
    const Dataset disk = load_dataset(root);
    r.actual_hash = content_hash(disk.samples);
    if (r.actual_hash != r.expected_hash) r.problems.push_back("files on disk hash to " + r.actual_hash);
  } catch (const std::exception& e) {
    r.problems.push_back(e.what());
  }
  r.ok = r.problems.empty();
  return r;
}

double parse_ratio(const std::string& tag) {
  double v = 0.0;
  const auto slash = tag.find('/');
  try {
    std::size_t used = 0;
    if (slash == std::string::npos) {
      v = std::stod(tag, &used);
      if (used != tag.size()) throw std::invalid_argument("trailing text");
    } else {
      const std::string a = tag.substr(0, slash), b = tag.substr(slash + 1);
      std::size_t ua = 0, ub = 0;
      v = std::stod(a, &ua) / std::stod(b, &ub);
      if (ua != a.size() || ub != b.size()) throw std::invalid_argument("trailing text");
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("cannot parse labeled ratio '" + tag + "'");
  }
  if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("labeled ratio must be in (0, 1], got '" + tag + "'");
  return v;
}

std::string ratio_tag(double ratio) {
  const double inv = 1.0 / ratio;
  if (std::abs(inv - std::round(inv)) < 1e-9) {
    const long long k = std::llround(inv);
    return k == 1 ? "1" : "1/" + std::to_string(k);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", ratio);
  return buf;
}

Partition make_partition(const Dataset& ds, double ratio, std::uint64_t split_seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("make_partition: ratio must be in (0, 1]");
  if (ds.train_ids.empty()) throw std::invalid_argument("make_partition: empty train split");
  std::set<int> present;
  for (int id : ds.train_ids)
    for (auto v : ds.sample(id).mask.data)
      if (v != kIgnoreLabel) present.insert(v);
  const std::size_t n = ds.train_ids.size();
  const std::size_t labeled = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * ratio)));
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<int> ids = ds.train_ids;
    Rng rng(derive_seed(split_seed, {static_cast<std::uint64_t>(attempt)}));
    rng.shuffle(std::span(ids));
    std::set<int> covered;
    for (std::size_t i = 0; i < labeled; ++i)
      for (auto v : ds.sample(ids[i]).mask.data)
        if (v != kIgnoreLabel) covered.insert(v);
    if (covered != present) continue;
    Partition p;
    p.labeled.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(labeled));
    p.unlabeled.assign(ids.begin() + static_cast<std::ptrdiff_t>(labeled), ids.end());
    p.ratio_tag = ratio_tag(ratio);
    p.split_seed = split_seed;
    return p;
  }
  throw std::runtime_error("make_partition: no labeled subset of size " + std::to_string(labeled) +
                           " covers every class after 100 draws");
}

}  // namespace divcot
