#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tcprune/tensor.hpp"

namespace tcprune {

// Source images with labels plus unlabeled target images. Target labels are
// generated alongside the images but kept private: training code cannot reach
// them, only evaluation via target_labels_for_eval().
class DomainPair {
 public:
  Tensor source_x;                    // [N,C,H,W]
  std::vector<std::int32_t> source_y;
  Tensor target_x;
  int classes{0};
  std::string provenance;             // generator spec or file path

  DomainPair() = default;
  DomainPair(Tensor sx, std::vector<std::int32_t> sy, Tensor tx,
             std::vector<std::int32_t> ty, int class_count, std::string origin)
      : source_x(std::move(sx)), source_y(std::move(sy)), target_x(std::move(tx)),
        classes(class_count), provenance(std::move(origin)), target_y_(std::move(ty)) {}

  const std::vector<std::int32_t>& target_labels_for_eval() const { return target_y_; }
  void set_target_labels(std::vector<std::int32_t> ty) { target_y_ = std::move(ty); }

 private:
  std::vector<std::int32_t> target_y_;
};

// Target-domain covariate shift applied on top of the shared renderer. The
// label-conditional geometry is unchanged: rotation stays well below the
// angular spacing between classes.
struct ShiftParams {
  float brightness{0.0f};   // additive offset, [-1, 1]
  float contrast{1.0f};     // gain around 0.5, (0, 4]
  float rotation{0.0f};     // radians added to every bar angle
  float noise_sigma{0.0f};  // extra Gaussian pixel noise, [0, 1]
};

struct GenSpec {
  int classes{4};
  std::int64_t n_source{256};
  std::int64_t n_target{256};
  int height{16};
  int width{16};
  int channels{1};
  float base_noise{0.05f};
  ShiftParams shift;  // target-only

  void validate() const;  // throws config_error on out-of-range values
};

// Oriented-bar classes: class c draws a bar at angle pi*c/classes with small
// per-example jitter; labels are assigned round robin so counts stay within
// one of n/classes. Bit-reproducible from the seed.
DomainPair generate_synthetic_domains(const GenSpec& spec, std::uint64_t seed);

// Tensor container file: magic "TCPT", u16 version, u8 dtype (0 = f32),
// u8 rank, rank x u64 dims, row-major f32 payload, all little endian.
void save_tcpt(const Tensor& t, const std::string& path);
Tensor load_tcpt(const std::string& path);

// Companion label file: raw little-endian u32 class ids, count given by size.
void save_labels(const std::vector<std::int32_t>& labels, const std::string& path);
std::vector<std::int32_t> load_labels(const std::string& path);

// Writes source.tcpt / source.labels / target.tcpt into `dir`, plus
// target.labels, which only evaluation reads back.
void save_domain_pair(const DomainPair& pair, const std::string& dir);
DomainPair load_domain_pair(const std::string& dir);

// Per-channel standardization fitted on the source split and applied to both.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

NormStats fit_norm_stats(const Tensor& x);
void apply_norm(Tensor& x, const NormStats& stats);

struct AugmentConfig {
  bool hflip{false};
  int crop_pad{0};  // zero-pad then random-crop back to size
};

// Deterministic shuffled mini-batches; each epoch reshuffles from a stream
// seeded by (seed, epoch). Augmentation draws from the same stream.
class BatchStream {
 public:
  BatchStream(const Tensor& x, const std::vector<std::int32_t>* y, std::int64_t batch,
              std::uint64_t seed, AugmentConfig aug = {});

  void start_epoch(std::int64_t epoch);
  // Fills the next batch; returns false when the epoch is exhausted.
  // Labels are written only when the stream has them.
  bool next(Tensor& xb, std::vector<std::int32_t>& yb);
  std::int64_t batches_per_epoch() const;

 private:
  const Tensor* x_;
  const std::vector<std::int32_t>* y_;
  std::int64_t batch_;
  std::uint64_t seed_;
  AugmentConfig aug_;
  std::vector<std::int64_t> order_;
  std::int64_t cursor_{0};
  std::mt19937_64 rng_;
};

void apply_hflip(Tensor& x, std::int64_t n);  // flips sample n in place

// Zero-pads sample n by `pad` on each side, then crops back to the original
// size at offset (dy, dx) with 0 <= dy,dx <= 2*pad.
void apply_crop(Tensor& x, std::int64_t n, int pad, int dy, int dx);

}  // namespace tcprune
