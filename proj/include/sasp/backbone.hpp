#pragma once

// Source of the deep feature map F [n, C, H', W']: either a small trainable
// CNN (conv3x3 -> relu -> 2x2 mean-downsample per stage) or features loaded
// from a precomputed file.

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sasp/autograd.hpp"
#include "sasp/binary_io.hpp"
#include "sasp/random.hpp"

namespace sasp {

enum class BackboneMode : std::uint32_t { kPrecomputed = 0, kTinyCnn = 1 };

inline const char* to_string(BackboneMode m) {
  return m == BackboneMode::kTinyCnn ? "tiny-cnn" : "precomputed";
}

inline BackboneMode parse_backbone_mode(const std::string& s) {
  if (s == "tiny-cnn") return BackboneMode::kTinyCnn;
  if (s == "precomputed") return BackboneMode::kPrecomputed;
  throw ConfigError("unknown backbone mode '" + s + "' (expected tiny-cnn or precomputed)");
}

struct BackboneConfig {
  BackboneMode mode = BackboneMode::kPrecomputed;
  std::size_t channels = 2048;  // C
  std::size_t height = 7;       // H'
  std::size_t width = 7;        // W'
  // Widths of the tiny-CNN stages before the last; the last stage emits `channels`.
  std::vector<std::size_t> stage_widths{16, 32, 64, 128};
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};

  std::size_t stage_count() const { return stage_widths.size() + 1; }

  void validate() const {
    if (channels < 1 || height < 1 || width < 1) throw ConfigError("feature dimensions must be >= 1");
    for (double s : norm_std)
      if (!(s > 0)) throw ConfigError("normalization std must be positive");
    if (mode != BackboneMode::kTinyCnn) return;
    for (std::size_t w : stage_widths)
      if (w < 1) throw ConfigError("tiny-cnn stage widths must be >= 1");
    const std::size_t factor = std::size_t{1} << stage_count();
    if (input_height != height * factor || input_width != width * factor)
      throw ConfigError("tiny-cnn with " + std::to_string(stage_count()) + " stages maps " +
                        std::to_string(input_height) + "x" + std::to_string(input_width) + " to " +
                        std::to_string(input_height / factor) + "x" + std::to_string(input_width / factor) +
                        ", not the configured " + std::to_string(height) + "x" + std::to_string(width));
  }
};

template <typename Scalar>
class TinyCnn {
 public:
  explicit TinyCnn(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = 3;
    for (std::size_t s = 0; s < cfg_.stage_count(); ++s) {
      const std::size_t out = s + 1 < cfg_.stage_count() ? cfg_.stage_widths[s] : cfg_.channels;
      const std::string tag = "backbone.stage" + std::to_string(s);
      kernels_.emplace_back(tag + ".kernel", Shape::nchw(out, in, 3, 3), true);
      biases_.emplace_back(tag + ".bias", Shape::nd(1, out), false);
      in = out;
    }
  }

  void init(Rng& rng) {
    for (auto& k : kernels_) kaiming_uniform(k.value, rng, k.value.shape().c() * 9);
    for (auto& b : biases_) b.value.fill(Scalar(0));
  }

  Var<Scalar> forward(Var<Scalar> x) {
    const Shape& s = x.shape();
    if (s.rank != 4 || s.c() != 3 || s.h() != cfg_.input_height || s.w() != cfg_.input_width)
      throw InvalidArgument("backbone expects [n,3," + std::to_string(cfg_.input_height) + "," +
                            std::to_string(cfg_.input_width) + "], got " + s.str());
    for (std::size_t i = 0; i < kernels_.size(); ++i)
      x = avg_pool2x2(relu(conv2d(x, kernels_[i], biases_[i], Padding{1, 1})));
    return x;
  }

  std::vector<Param<Scalar>*> params() {
    std::vector<Param<Scalar>*> out;
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
      out.push_back(&kernels_[i]);
      out.push_back(&biases_[i]);
    }
    return out;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<Param<Scalar>> kernels_;
  std::vector<Param<Scalar>> biases_;
};

// Runs the tiny CNN on a batch: x [n,3,H,W] -> [n,C,H',W'].
template <typename Scalar>
Var<Scalar> extract(Var<Scalar> x, TinyCnn<Scalar>& net) {
  return net.forward(x);
}

// ---------------------------------------------------------------------------
// Feature file format (little-endian):
//   "SASPFEAT" u32 version=1 u32 C u32 H' u32 W' u32 K u64 count
//   per record: u32 id_len, id bytes, u32 label, C*H'*W' float32

inline constexpr char kFeatureMagic[8] = {'S', 'A', 'S', 'P', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureRecord {
  std::string sample_id;
  std::uint32_t label = 0;
  Tensor<float> features;  // [1, C, H', W']
};

struct FeatureHeader {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t classes = 0;
};

struct FeatureFile {
  FeatureHeader header;
  std::vector<FeatureRecord> records;
};

inline void save_features(std::ostream& os, const FeatureHeader& h, const std::vector<FeatureRecord>& records) {
  const Shape expect = Shape::nchw(1, h.channels, h.height, h.width);
  binary::Writer w(os);
  w.bytes(kFeatureMagic, sizeof kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(h.channels);
  w.u32(h.height);
  w.u32(h.width);
  w.u32(h.classes);
  w.u64(records.size());
  for (const auto& r : records) {
    if (!(r.features.shape() == expect))
      throw InvalidArgument("record '" + r.sample_id + "' has shape " + r.features.shape().str() +
                            ", header says " + expect.str());
    if (r.label >= h.classes) throw InvalidArgument("record '" + r.sample_id + "' label out of range");
    w.str(r.sample_id);
    w.u32(r.label);
    w.array(r.features.ptr(), r.features.size());
  }
  if (!os) throw std::runtime_error("failed writing feature file");
}

inline void save_features(const std::string& path, const FeatureHeader& h, const std::vector<FeatureRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_features(os, h, records);
}

inline FeatureFile load_features(std::istream& is) {
  binary::Reader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) throw ParseError("bad feature file magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kFeatureVersion) throw ParseError("unsupported feature file version", version_at);
  FeatureFile f;
  const std::size_t dims_at = r.offset();
  f.header.channels = r.u32("C");
  f.header.height = r.u32("H'");
  f.header.width = r.u32("W'");
  f.header.classes = r.u32("K");
  if (f.header.channels == 0 || f.header.height == 0 || f.header.width == 0 || f.header.classes == 0)
    throw ParseError("zero dimension in feature header", dims_at);
  const std::uint64_t count = r.u64("count");
  const Shape shape = Shape::nchw(1, f.header.channels, f.header.height, f.header.width);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord rec;
    rec.sample_id = r.str("sample id");
    const std::size_t label_at = r.offset();
    rec.label = r.u32("label");
    if (rec.label >= f.header.classes)
      throw ParseError("label " + std::to_string(rec.label) + " >= K=" + std::to_string(f.header.classes), label_at);
    rec.features = Tensor<float>(shape);
    r.array(rec.features.ptr(), rec.features.size(), "feature payload");
    f.records.push_back(std::move(rec));
  }
  if (!r.at_eof()) throw ParseError("trailing bytes after " + std::to_string(count) + " records", r.offset());
  return f;
}

inline FeatureFile load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature file " + path);
  return load_features(is);
}

}  // namespace sasp
