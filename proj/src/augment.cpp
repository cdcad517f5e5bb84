#include "divcot/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "divcot/freq.hpp"

namespace divcot {

namespace {

int nearest_source(int d, int src, int dst) {
  return std::min(src - 1, static_cast<int>(std::floor((d + 0.5) * src / dst)));
}

Tensor resize_bilinear(const Tensor& img, int dst_h, int dst_w) {
  const int c = static_cast<int>(img.dim(0)), h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  Tensor out({img.dim(0), static_cast<std::size_t>(dst_h), static_cast<std::size_t>(dst_w)});
  const double ry = static_cast<double>(h) / dst_h, rx = static_cast<double>(w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
    const double wy = sy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
      const double wx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = img.at(ch, y0, x0) * (1 - wx) + img.at(ch, y0, x1) * wx;
        const double bot = img.at(ch, y1, x0) * (1 - wx) + img.at(ch, y1, x1) * wx;
        out.at(ch, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

void check_rgb(const Tensor& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError(std::string(what) + ": expected 3xHxW image, got " + shape_str(img.shape()));
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void clamp01(Tensor& t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

bool geom_to_source(const GeomRecord& g, int x, int y, int& src_x, int& src_y) {
  const int fx = x + g.crop_x, fy = y + g.crop_y;
  if (fx < 0 || fy < 0 || fx >= g.scaled_w || fy >= g.scaled_h) return false;
  const int sx = g.hflip ? g.scaled_w - 1 - fx : fx;
  src_x = nearest_source(sx, g.src_w, g.scaled_w);
  src_y = nearest_source(fy, g.src_h, g.scaled_h);
  return true;
}

Mask valid_region(const GeomRecord& g) {
  Mask m(g.crop_h, g.crop_w, 0);
  int sx, sy;
  for (int y = 0; y < g.crop_h; ++y)
    for (int x = 0; x < g.crop_w; ++x) m(y, x) = geom_to_source(g, x, y, sx, sy) ? 1 : 0;
  return m;
}

WeakParams sample_weak_params(Rng& rng) {
  WeakParams p;
  p.scale = rng.uniform(0.5, 2.0);
  p.hflip = rng.bernoulli(0.5);
  p.crop_fx = rng.uniform();
  p.crop_fy = rng.uniform();
  return p;
}

AugView apply_weak(const Tensor& image, const LabelMap* label, std::uint64_t source_id, int crop, const WeakParams& p) {
  check_rgb(image, "weak_augment");
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  if (label && (label->height != h || label->width != w)) throw ShapeError("weak_augment: label does not match image");
  if (crop <= 0) throw std::invalid_argument("weak_augment: crop must be positive");
  if (p.scale <= 0.0) throw std::invalid_argument("weak_augment: scale must be positive");

  GeomRecord g;
  g.source_id = source_id;
  g.src_h = h;
  g.src_w = w;
  g.scale = p.scale;
  g.scaled_h = std::max(1, static_cast<int>(std::lround(h * p.scale)));
  g.scaled_w = std::max(1, static_cast<int>(std::lround(w * p.scale)));
  g.hflip = p.hflip;
  g.crop_h = g.crop_w = crop;
  const int range_x = std::max(g.scaled_w, crop) - crop, range_y = std::max(g.scaled_h, crop) - crop;
  g.crop_x = std::min(range_x, static_cast<int>(p.crop_fx * (range_x + 1)));
  g.crop_y = std::min(range_y, static_cast<int>(p.crop_fy * (range_y + 1)));

  const Tensor scaled = (g.scaled_h == h && g.scaled_w == w) ? image : resize_bilinear(image, g.scaled_h, g.scaled_w);
  AugView v;
  v.geom = g;
  v.image = Tensor({3, static_cast<std::size_t>(crop), static_cast<std::size_t>(crop)}, 0.0);
  if (label) v.label = LabelMap(crop, crop, kIgnoreLabel);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const int fx = x + g.crop_x, fy = y + g.crop_y;
      if (fx >= g.scaled_w || fy >= g.scaled_h) continue;
      const int sx = g.hflip ? g.scaled_w - 1 - fx : fx;
      for (int c = 0; c < 3; ++c) v.image.at(c, y, x) = scaled.at(c, fy, sx);
      if (label) v.label(y, x) = (*label)(nearest_source(fy, h, g.scaled_h), nearest_source(sx, w, g.scaled_w));
    }
  return v;
}

AugView weak_augment(const Tensor& image, const LabelMap* label, std::uint64_t source_id, int crop, Rng& rng) {
  return apply_weak(image, label, source_id, crop, sample_weak_params(rng));
}

AugView identity_view(const Tensor& image, const LabelMap* label, std::uint64_t source_id) {
  check_rgb(image, "identity_view");
  AugView v;
  v.image = image;
  if (label) v.label = *label;
  const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  v.geom = GeomRecord{source_id, h, w, 1.0, h, w, false, 0, 0, h, w};
  return v;
}

StrongParams sample_strong_params(Rng& rng) {
  StrongParams p;
  p.jitter = rng.bernoulli(0.8);
  p.brightness = rng.uniform(0.5, 1.5);
  p.contrast = rng.uniform(0.5, 1.5);
  p.saturation = rng.uniform(0.5, 1.5);
  p.hue = rng.uniform(-0.25, 0.25);
  p.grayscale = rng.bernoulli(0.2);
  p.blur = rng.bernoulli(0.5);
  p.sigma = rng.uniform(0.1, 2.0);
  return p;
}

AugView apply_strong(const AugView& view, const StrongParams& p) {
  if (view.strong_applied) throw std::logic_error("strong_augment: view already strongly augmented");
  check_rgb(view.image, "strong_augment");
  AugView out = view;
  out.strong_applied = true;
  Tensor& img = out.image;
  const std::size_t n = img.dim(1) * img.dim(2);
  if (p.jitter) {
    for (double& v : img.values()) v *= p.brightness;
    clamp01(img);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += luma(img[i], img[n + i], img[2 * n + i]);
    mean /= static_cast<double>(n);
    for (double& v : img.values()) v = (v - mean) * p.contrast + mean;
    clamp01(img);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = luma(img[i], img[n + i], img[2 * n + i]);
      for (std::size_t c = 0; c < 3; ++c) img[c * n + i] = (img[c * n + i] - g) * p.saturation + g;
    }
    clamp01(img);
    if (p.hue != 0.0) {
      Tensor hsv = rgb_to_hsv(img);
      for (std::size_t i = 0; i < n; ++i) {
        double h = hsv[i] + p.hue;
        h -= std::floor(h);
        hsv[i] = h;
      }
      img = hsv_to_rgb(hsv);
      clamp01(img);
    }
  }
  if (p.grayscale)
    for (std::size_t i = 0; i < n; ++i) {
      const double g = luma(img[i], img[n + i], img[2 * n + i]);
      img[i] = img[n + i] = img[2 * n + i] = g;
    }
  if (p.blur) img = gaussian_blur(img, p.sigma);
  return out;
}

AugView strong_augment(const AugView& view, Rng& rng) { return apply_strong(view, sample_strong_params(rng)); }

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= s;
  return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
  Tensor tmp(image.shape()), out(image.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * image.at(ch, y, std::clamp(x + i, 0, w - 1));
        tmp.at(ch, y, x) = s;
      }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(ch, std::clamp(y + i, 0, h - 1), x);
        out.at(ch, y, x) = s;
      }
  return out;
}

CutMixPlan plan_cutmix(std::size_t batch, int height, int width, Rng& rng) {
  CutMixPlan plan;
  if (batch < 2) {
    plan.skipped = true;
    return plan;
  }
  std::vector<std::size_t> order(batch);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  plan.partner.resize(batch);
  for (std::size_t k = 0; k < batch; ++k) plan.partner[order[k]] = order[(k + 1) % batch];
  plan.boxes.resize(batch);
  const double area = static_cast<double>(height) * width;
  for (std::size_t i = 0; i < batch; ++i) {
    const double ratio = rng.uniform(0.25, 0.5), aspect = rng.uniform(0.5, 2.0);
    Box& b = plan.boxes[i];
    b.w = std::clamp(static_cast<int>(std::lround(std::sqrt(ratio * area * aspect))), 1, width);
    b.h = std::clamp(static_cast<int>(std::lround(std::sqrt(ratio * area / aspect))), 1, height);
    b.x = static_cast<int>(rng.uniform_int(0, width - b.w));
    b.y = static_cast<int>(rng.uniform_int(0, height - b.h));
  }
  return plan;
}

void apply_cutmix(const CutMixPlan& plan, std::vector<Tensor>& images) {
  if (plan.skipped) return;
  const std::vector<Tensor> src = images;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Box& b = plan.boxes[i];
    const Tensor& from = src[plan.partner[i]];
    for (std::size_t c = 0; c < from.dim(0); ++c)
      for (int y = b.y; y < b.y + b.h; ++y)
        for (int x = b.x; x < b.x + b.w; ++x) images[i].at(c, y, x) = from.at(c, y, x);
  }
}

CutMixResult in_batch_cutmix(const std::vector<AugView>& views, const std::vector<LabelMap>& labels, Rng& rng) {
  if (views.size() != labels.size()) throw std::invalid_argument("in_batch_cutmix: one label map per view required");
  CutMixResult r{views, labels, {}};
  if (views.empty()) {
    r.plan.skipped = true;
    return r;
  }
  const int h = static_cast<int>(views[0].image.dim(1)), w = static_cast<int>(views[0].image.dim(2));
  for (std::size_t i = 0; i < views.size(); ++i)
    if (static_cast<int>(views[i].image.dim(1)) != h || static_cast<int>(views[i].image.dim(2)) != w ||
        labels[i].height != h || labels[i].width != w)
      throw ShapeError("in_batch_cutmix: views and labels must share one size");
  r.plan = plan_cutmix(views.size(), h, w, rng);
  std::vector<Tensor> images;
  for (const auto& v : views) images.push_back(v.image);
  apply_cutmix(r.plan, images);
  apply_cutmix(r.plan, r.labels);
  for (std::size_t i = 0; i < views.size(); ++i) r.views[i].image = std::move(images[i]);
  return r;
}

namespace {

std::vector<int> map_views(const GeomRecord& a, const GeomRecord& b, Mask& mask) {
  std::vector<int> map(static_cast<std::size_t>(a.crop_h) * a.crop_w, -1);
  mask = Mask(a.crop_h, a.crop_w, 0);
  for (int y = 0; y < a.crop_h; ++y)
    for (int x = 0; x < a.crop_w; ++x) {
      const int fx = x + a.crop_x, fy = y + a.crop_y;
      if (fx >= a.scaled_w || fy >= a.scaled_h) continue;
      const int sxa = a.hflip ? a.scaled_w - 1 - fx : fx;
      // Pixel centre in continuous source coordinates, then nearest pixel of B's rescaled grid.
      const double ux = (sxa + 0.5) * a.src_w / a.scaled_w, uy = (fy + 0.5) * a.src_h / a.scaled_h;
      const int sxb = std::min(b.scaled_w - 1, static_cast<int>(std::floor(ux * b.scaled_w / b.src_w)));
      const int syb = std::min(b.scaled_h - 1, static_cast<int>(std::floor(uy * b.scaled_h / b.src_h)));
      const int fxb = b.hflip ? b.scaled_w - 1 - sxb : sxb;
      const int xb = fxb - b.crop_x, yb = syb - b.crop_y;
      if (xb < 0 || yb < 0 || xb >= b.crop_w || yb >= b.crop_h) continue;
      map[static_cast<std::size_t>(y) * a.crop_w + x] = yb * b.crop_w + xb;
      mask(y, x) = 1;
    }
  return map;
}

}  // namespace

Overlap overlap_mask(const GeomRecord& a, const GeomRecord& b) {
  if (a.source_id != b.source_id) throw std::invalid_argument("overlap_mask: views come from different samples");
  if (a.src_h != b.src_h || a.src_w != b.src_w) throw std::invalid_argument("overlap_mask: source extents differ");
  Overlap o;
  o.a_to_b = map_views(a, b, o.mask_a);
  o.b_to_a = map_views(b, a, o.mask_b);
  return o;
}

LabelMap warp_labels(const LabelMap& labels, const std::vector<int>& to_from, int height, int width) {
  if (to_from.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("warp_labels: mapping does not match the target view");
  LabelMap out(height, width, kIgnoreLabel);
  for (std::size_t i = 0; i < to_from.size(); ++i)
    if (to_from[i] >= 0) out.data[i] = labels.data.at(static_cast<std::size_t>(to_from[i]));
  return out;
}

}  // namespace divcot
