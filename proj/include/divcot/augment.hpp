#pragma once

#include <cstdint>
#include <vector>

#include "divcot/rng.hpp"
#include "divcot/tensor.hpp"

namespace divcot {

/// Geometry of a weak view: rescale the source, optionally mirror, pad
/// right/bottom when smaller than the crop, then cut a crop window.
struct GeomRecord {
  std::uint64_t source_id = 0;
  int src_h = 0, src_w = 0;
  double scale = 1.0;
  int scaled_h = 0, scaled_w = 0;
  bool hflip = false;
  int crop_x = 0, crop_y = 0;
  int crop_h = 0, crop_w = 0;

  bool operator==(const GeomRecord&) const = default;
};

/// Original-image pixel under output pixel (x, y), or false for padding.
bool geom_to_source(const GeomRecord& g, int x, int y, int& src_x, int& src_y);

/// Pixels of the view that come from the source image (padding excluded).
Mask valid_region(const GeomRecord& g);

struct AugView {
  Tensor image;     // 3 x crop_h x crop_w RGB in [0,1]
  LabelMap label;   // empty for unlabeled samples
  GeomRecord geom;
  bool strong_applied = false;
};

struct WeakParams {
  double scale = 1.0;
  bool hflip = false;
  // Crop origin as a fraction of the feasible range [0, padded - crop].
  double crop_fx = 0.0, crop_fy = 0.0;
};

WeakParams sample_weak_params(Rng& rng);

/// Resize (bilinear image, nearest label), flip, pad (zero image, ignore label), crop.
AugView apply_weak(const Tensor& image, const LabelMap* label, std::uint64_t source_id, int crop, const WeakParams& p);
AugView weak_augment(const Tensor& image, const LabelMap* label, std::uint64_t source_id, int crop, Rng& rng);

/// The un-augmented view of a whole sample.
AugView identity_view(const Tensor& image, const LabelMap* label, std::uint64_t source_id);

struct StrongParams {
  bool jitter = false;
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
  bool grayscale = false;
  bool blur = false;
  double sigma = 1.0;
};

StrongParams sample_strong_params(Rng& rng);

/// Photometric ops in order: jitter (brightness, contrast, saturation, hue), grayscale, blur.
AugView apply_strong(const AugView& view, const StrongParams& p);
AugView strong_augment(const AugView& view, Rng& rng);

/// Normalized 1-D Gaussian taps for radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur of every channel with edge replication.
Tensor gaussian_blur(const Tensor& image, double sigma);

struct Box {
  int x = 0, y = 0, w = 0, h = 0;
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
};

/// Target i receives box[i] from sample partner[i].
struct CutMixPlan {
  std::vector<std::size_t> partner;
  std::vector<Box> boxes;
  bool skipped = false;  // batch of one: nothing mixed
};

CutMixPlan plan_cutmix(std::size_t batch, int height, int width, Rng& rng);

void apply_cutmix(const CutMixPlan& plan, std::vector<Tensor>& images);

template <class T>
void apply_cutmix(const CutMixPlan& plan, std::vector<Grid<T>>& maps) {
  if (plan.skipped) return;
  const std::vector<Grid<T>> src = maps;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Box& b = plan.boxes[i];
    const Grid<T>& from = src[plan.partner[i]];
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x) maps[i](y, x) = from(y, x);
  }
}

struct CutMixResult {
  std::vector<AugView> views;
  std::vector<LabelMap> labels;
  CutMixPlan plan;
};

/// Mixes views and their pseudo labels with one seeded plan.
CutMixResult in_batch_cutmix(const std::vector<AugView>& views, const std::vector<LabelMap>& labels, Rng& rng);

/// Pixel correspondence between two views of the same source.
struct Overlap {
  Mask mask_a, mask_b;
  // Flat index into the other view for each pixel, -1 outside the overlap.
  std::vector<int> a_to_b, b_to_a;
};

Overlap overlap_mask(const GeomRecord& a, const GeomRecord& b);

/// Moves a label map from view `from` into view `to`; pixels without a counterpart become ignore.
LabelMap warp_labels(const LabelMap& labels, const std::vector<int>& to_from, int height, int width);

}  // namespace divcot
