#include "tcprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace tcprune {

namespace {

constexpr double kPi = 3.14159265358979323846;

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_le(std::ofstream& out, T v) {
  // Little-endian host assumed (x86/aarch64); serialize byte by byte anyway.
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  write_bytes(out, buf, sizeof(T));
}

template <class T>
bool read_le(std::ifstream& in, T& v) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(T)) return false;
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

}  // namespace

void GenSpec::validate() const {
  if (classes < 2) throw config_error("generator needs at least 2 classes");
  if (n_source < 1 || n_target < 1) throw config_error("domain sizes must be positive");
  if (height < 4 || width < 4) throw config_error("images must be at least 4x4");
  if (channels < 1 || channels > 4) throw config_error("channel count must be in [1,4]");
  if (!(base_noise >= 0 && base_noise <= 1)) throw config_error("base noise must be in [0,1]");
  if (!(shift.brightness >= -1 && shift.brightness <= 1))
    throw config_error("brightness shift must be in [-1,1]");
  if (!(shift.contrast > 0 && shift.contrast <= 4))
    throw config_error("contrast shift must be in (0,4]");
  if (!(shift.noise_sigma >= 0 && shift.noise_sigma <= 1))
    throw config_error("noise shift must be in [0,1]");
  const double spacing = kPi / classes;
  if (!(std::abs(shift.rotation) < spacing / 2))
    throw config_error("rotation shift must stay below half the class angle spacing");
}

namespace {

// Renders one oriented bar: a soft-edged line through the image center at
// `angle`, identical geometry for every class in both domains.
void render_bar(float* img, int h, int w, int channels, double angle, double offset,
                double thickness) {
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double nx = -std::sin(angle), ny = std::cos(angle);  // normal to the bar
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = std::abs((x - cx) * nx + (y - cy) * ny - offset);
      const double v = std::exp(-(d * d) / (2.0 * thickness * thickness));
      for (int c = 0; c < channels; ++c) img[(c * h + y) * w + x] = static_cast<float>(v);
    }
}

Tensor render_domain(const GenSpec& spec, std::int64_t n, bool shifted, std::uint64_t seed,
                     std::vector<std::int32_t>& labels) {
  const int h = spec.height, w = spec.width, ch = spec.channels;
  Tensor x({n, ch, h, w});
  labels.resize(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  const double spacing = kPi / spec.classes;
  const double jitter_max = spacing / 6.0;  // well inside the class wedge

  for (std::int64_t i = 0; i < n; ++i) {
    const std::int32_t label = static_cast<std::int32_t>(i % spec.classes);
    labels[static_cast<std::size_t>(i)] = label;
    double angle = spacing * label + uni(rng) * jitter_max;
    double offset = uni(rng) * 1.5;
    double thickness = 1.2 + 0.3 * uni(rng);
    if (shifted) angle += spec.shift.rotation;

    float* img = x.data() + i * ch * h * w;
    render_bar(img, h, w, ch, angle, offset, thickness);

    double gain = 1.0, bias = 0.0, extra_noise = 0.0;
    if (shifted) {
      gain = spec.shift.contrast;
      bias = spec.shift.brightness;
      extra_noise = spec.shift.noise_sigma;
    }
    for (std::int64_t k = 0; k < std::int64_t(ch) * h * w; ++k) {
      double v = img[k];
      v = (v - 0.5) * gain + 0.5 + bias;
      v += noise(rng) * (spec.base_noise + extra_noise);
      img[k] = static_cast<float>(v);
    }
  }
  return x;
}

}  // namespace

DomainPair generate_synthetic_domains(const GenSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::int32_t> sy, ty;
  Tensor sx = render_domain(spec, spec.n_source, false, mix_seed(seed, "gen/source"), sy);
  Tensor tx = render_domain(spec, spec.n_target, true, mix_seed(seed, "gen/target"), ty);
  char prov[160];
  std::snprintf(prov, sizeof prov, "bars:classes=%d,ns=%lld,nt=%lld,seed=%llu", spec.classes,
                static_cast<long long>(spec.n_source), static_cast<long long>(spec.n_target),
                static_cast<unsigned long long>(seed));
  return DomainPair(std::move(sx), std::move(sy), std::move(tx), std::move(ty), spec.classes,
                    prov);
}

void save_tcpt(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out.write("TCPT", 4);
  write_le<std::uint16_t>(out, 1);   // version
  write_le<std::uint8_t>(out, 0);    // dtype f32
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::int64_t d : t.shape) write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  write_bytes(out, t.values.data(), t.values.size() * sizeof(float));
  if (!out) throw io_error("write to '" + path + "' failed");
}

Tensor load_tcpt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "TCPT", 4) != 0)
    throw format_error("'" + path + "': bad magic", 0);
  std::uint16_t version;
  if (!read_le(in, version)) throw format_error("'" + path + "': truncated header", 4);
  if (version != 1)
    throw format_error("'" + path + "': unsupported version " + std::to_string(version), 4);
  std::uint8_t dtype, rank;
  if (!read_le(in, dtype)) throw format_error("'" + path + "': truncated header", 6);
  if (dtype != 0)
    throw format_error("'" + path + "': unsupported dtype " + std::to_string(dtype), 6);
  if (!read_le(in, rank)) throw format_error("'" + path + "': truncated header", 7);
  if (rank < 1 || rank > 8) throw format_error("'" + path + "': bad rank", 7);

  std::vector<std::int64_t> shape;
  for (int i = 0; i < rank; ++i) {
    std::uint64_t d;
    if (!read_le(in, d)) throw format_error("'" + path + "': truncated dims", 8 + 8ll * i);
    if (d == 0 || d > static_cast<std::uint64_t>(kMaxTensorElems))
      throw format_error("'" + path + "': dimension " + std::to_string(d) + " out of range",
                         8 + 8ll * i);
    shape.push_back(static_cast<std::int64_t>(d));
  }
  std::int64_t n;
  try {
    n = checked_numel(shape);  // rejects overflowing products before allocation
  } catch (const format_error&) {
    throw format_error("'" + path + "': element count exceeds limit", 8);
  }

  const long long payload_at = 8 + 8ll * rank;
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.values.data()),
          static_cast<std::streamsize>(n * static_cast<std::int64_t>(sizeof(float))));
  const std::int64_t got = in.gcount();
  if (got != n * static_cast<std::int64_t>(sizeof(float)))
    throw format_error("'" + path + "': payload truncated, expected " + std::to_string(4 * n) +
                           " bytes, got " + std::to_string(got),
                       payload_at + got);
  char extra;
  if (in.read(&extra, 1), in.gcount() != 0)
    throw format_error("'" + path + "': trailing bytes after payload", payload_at + 4 * n);
  return t;
}

void save_labels(const std::vector<std::int32_t>& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  for (std::int32_t v : labels) {
    if (v < 0) throw data_error("negative label cannot be saved");
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  if (!out) throw io_error("write to '" + path + "' failed");
}

std::vector<std::int32_t> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  std::vector<std::int32_t> out;
  std::uint32_t v;
  while (read_le(in, v)) {
    if (v > 0x7fffffffu)
      throw format_error("'" + path + "': label value out of range", 4ll * std::int64_t(out.size()));
    out.push_back(static_cast<std::int32_t>(v));
  }
  if (in.gcount() != 0)
    throw format_error("'" + path + "': trailing partial label record",
                       4ll * std::int64_t(out.size()));
  return out;
}

void save_domain_pair(const DomainPair& pair, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_tcpt(pair.source_x, dir + "/source.tcpt");
  save_labels(pair.source_y, dir + "/source.labels");
  save_tcpt(pair.target_x, dir + "/target.tcpt");
  save_labels(pair.target_labels_for_eval(), dir + "/target.labels");
}

DomainPair load_domain_pair(const std::string& dir) {
  Tensor sx = load_tcpt(dir + "/source.tcpt");
  std::vector<std::int32_t> sy = load_labels(dir + "/source.labels");
  Tensor tx = load_tcpt(dir + "/target.tcpt");
  std::vector<std::int32_t> ty = load_labels(dir + "/target.labels");
  if (sx.rank() != 4 || tx.rank() != 4)
    throw data_error("domain tensors must be [N,C,H,W]");
  if (static_cast<std::int64_t>(sy.size()) != sx.dim(0))
    throw data_error("source labels do not match source tensor");
  if (static_cast<std::int64_t>(ty.size()) != tx.dim(0))
    throw data_error("target labels do not match target tensor");
  if (sx.dim(1) != tx.dim(1) || sx.dim(2) != tx.dim(2) || sx.dim(3) != tx.dim(3))
    throw data_error("source and target image shapes differ");
  std::int32_t classes = 0;
  for (std::int32_t y : sy) classes = std::max(classes, y + 1);
  for (std::int32_t y : ty) classes = std::max(classes, y + 1);
  return DomainPair(std::move(sx), std::move(sy), std::move(tx), std::move(ty), classes, dir);
}

NormStats fit_norm_stats(const Tensor& x) {
  if (x.rank() != 4) throw structural_error("norm stats need [N,C,H,W] input");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  NormStats st;
  st.mean.resize(static_cast<std::size_t>(C));
  st.stddev.resize(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    double sum = 0, sq = 0;
    for (std::int64_t n = 0; n < N; ++n) {
      const float* slab = x.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        sum += slab[i];
        sq += double(slab[i]) * slab[i];
      }
    }
    const double count = double(N) * double(HW);
    const double mean = sum / count;
    double var = sq / count - mean * mean;
    if (var < 1e-12) var = 1e-12;
    st.mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
    st.stddev[static_cast<std::size_t>(c)] = static_cast<float>(std::sqrt(var));
  }
  return st;
}

void apply_norm(Tensor& x, const NormStats& stats) {
  if (x.rank() != 4) throw structural_error("normalization needs [N,C,H,W] input");
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (static_cast<std::int64_t>(stats.mean.size()) != C)
    throw structural_error("normalization stats channel count mismatch");
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      float* slab = x.data() + (n * C + c) * HW;
      const float m = stats.mean[static_cast<std::size_t>(c)];
      const float s = stats.stddev[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < HW; ++i) slab[i] = (slab[i] - m) / s;
    }
}

void apply_hflip(Tensor& x, std::int64_t n) {
  const std::int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t h = 0; h < H; ++h) {
      float* row = x.data() + ((n * C + c) * H + h) * W;
      std::reverse(row, row + W);
    }
}

void apply_crop(Tensor& x, std::int64_t n, int pad, int dy, int dx) {
  if (pad <= 0) return;
  if (dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad)
    throw structural_error("crop offset outside padded range");
  const std::int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<float> padded(static_cast<std::size_t>((H + 2 * pad) * (W + 2 * pad)));
  for (std::int64_t c = 0; c < C; ++c) {
    std::fill(padded.begin(), padded.end(), 0.0f);
    float* plane = x.data() + (n * C + c) * H * W;
    for (std::int64_t h = 0; h < H; ++h)
      std::copy_n(plane + h * W, W, padded.data() + (h + pad) * (W + 2 * pad) + pad);
    for (std::int64_t h = 0; h < H; ++h)
      std::copy_n(padded.data() + (h + dy) * (W + 2 * pad) + dx, W, plane + h * W);
  }
}

BatchStream::BatchStream(const Tensor& x, const std::vector<std::int32_t>* y, std::int64_t batch,
                         std::uint64_t seed, AugmentConfig aug)
    : x_(&x), y_(y), batch_(batch), seed_(seed), aug_(aug), rng_(seed) {
  if (x.rank() != 4) throw structural_error("batch stream needs [N,C,H,W] data");
  if (batch < 1) throw config_error("batch size must be at least 1");
  if (y && static_cast<std::int64_t>(y->size()) != x.dim(0))
    throw data_error("label count does not match data");
  if (batch > x.dim(0)) {
    std::fprintf(stderr, "warning: batch size %lld exceeds dataset size %lld; using one batch\n",
                 static_cast<long long>(batch), static_cast<long long>(x.dim(0)));
    batch_ = x.dim(0);
  }
  order_.resize(static_cast<std::size_t>(x.dim(0)));
  start_epoch(0);
}

void BatchStream::start_epoch(std::int64_t epoch) {
  rng_.seed(mix_seed(seed_, "epoch", static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::int64_t BatchStream::batches_per_epoch() const {
  return static_cast<std::int64_t>(order_.size()) / batch_;
}

bool BatchStream::next(Tensor& xb, std::vector<std::int32_t>& yb) {
  const std::int64_t N = static_cast<std::int64_t>(order_.size());
  if (cursor_ + batch_ > N) return false;  // trailing partial batch is dropped
  const std::int64_t C = x_->dim(1), H = x_->dim(2), W = x_->dim(3);
  if (xb.shape != std::vector<std::int64_t>{batch_, C, H, W})
    xb = Tensor({batch_, C, H, W});
  yb.resize(y_ ? static_cast<std::size_t>(batch_) : 0);

  std::uniform_int_distribution<int> flip(0, 1);
  for (std::int64_t i = 0; i < batch_; ++i) {
    const std::int64_t src = order_[static_cast<std::size_t>(cursor_ + i)];
    std::copy_n(x_->data() + src * C * H * W, C * H * W, xb.data() + i * C * H * W);
    if (y_) yb[static_cast<std::size_t>(i)] = (*y_)[static_cast<std::size_t>(src)];
    if (aug_.hflip && flip(rng_)) apply_hflip(xb, i);
    if (aug_.crop_pad > 0) {
      std::uniform_int_distribution<int> off(0, 2 * aug_.crop_pad);
      const int dy = off(rng_), dx = off(rng_);
      apply_crop(xb, i, aug_.crop_pad, dy, dx);
    }
  }
  cursor_ += batch_;
  return true;
}

}  // namespace tcprune
