#pragma once

// Full classifier: backbone (or precomputed features) -> EPA -> CSW -> head,
// plus the binary checkpoint format.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sasp/backbone.hpp"
#include "sasp/binary_io.hpp"
#include "sasp/csw.hpp"
#include "sasp/epa.hpp"
#include "sasp/head.hpp"

namespace sasp {

struct SaspConfig {
  BackboneConfig backbone;
  std::size_t classes = 200;
  std::size_t csw_reduction = 16;
  std::size_t head_hidden1 = 512;
  std::size_t head_hidden2 = 256;
  double dropout = 0.5;

  std::size_t channels() const { return backbone.channels; }

  void validate() const {
    backbone.validate();
    if (classes < 1) throw ConfigError("classes must be >= 1");
    if (channels() % 4 != 0) throw ConfigError("channels must be divisible by 4, got " + std::to_string(channels()));
    if (csw_reduction < 1 || channels() % csw_reduction != 0)
      throw ConfigError("channels " + std::to_string(channels()) + " not divisible by csw_reduction " +
                        std::to_string(csw_reduction));
    if (head_hidden1 < 1 || head_hidden2 < 1) throw ConfigError("head hidden sizes must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  }

  // Shape of one model input sample (features or image).
  Shape input_shape(std::size_t n) const {
    if (backbone.mode == BackboneMode::kTinyCnn)
      return Shape::nchw(n, 3, backbone.input_height, backbone.input_width);
    return Shape::nchw(n, backbone.channels, backbone.height, backbone.width);
  }
};

template <typename Scalar>
struct ModelOutputs {
  Var<Scalar> features;  // F
  Var<Scalar> epa;       // F_out
  Var<Scalar> alpha;     // CSW gate
  Var<Scalar> logits;
};

template <typename Scalar>
class SaspModel {
 public:
  SaspModel(const SaspConfig& cfg, std::uint64_t seed)
      : cfg_((cfg.validate(), cfg)),
        epa_(cfg.channels()),
        csw_(cfg.channels(), cfg.csw_reduction),
        head_(cfg.channels(), cfg.head_hidden1, cfg.head_hidden2, cfg.classes, cfg.dropout) {
    if (cfg_.backbone.mode == BackboneMode::kTinyCnn) backbone_.emplace(cfg_.backbone);
    Rng rng(seed);
    if (backbone_) backbone_->init(rng);
    epa_.init(rng);
    csw_.init(rng);
    head_.init(rng);
  }

  ModelOutputs<Scalar> forward(Var<Scalar> input, bool training, Rng* rng) {
    const Shape expect = cfg_.input_shape(input.shape().n());
    if (!(input.shape() == expect))
      throw InvalidArgument("model expects input " + expect.str() + ", got " + input.shape().str());
    ModelOutputs<Scalar> out;
    out.features = backbone_ ? extract(input, *backbone_) : input;
    out.epa = epa_forward(out.features, epa_);
    CswOutput<Scalar> gated = csw_forward(out.epa, csw_);
    out.alpha = gated.alpha;
    out.logits = head_forward(gated.features, head_, training, rng);
    return out;
  }

  // Fixed order: backbone stages, EPA, CSW, head. The checkpoint follows it.
  std::vector<Param<Scalar>*> params() {
    std::vector<Param<Scalar>*> out;
    if (backbone_)
      for (auto* p : backbone_->params()) out.push_back(p);
    for (auto* p : epa_.params()) out.push_back(p);
    for (auto* p : csw_.params()) out.push_back(p);
    for (auto* p : head_.params()) out.push_back(p);
    return out;
  }

  const SaspConfig& config() const { return cfg_; }
  EpaParams<Scalar>& epa() { return epa_; }
  CswParams<Scalar>& csw() { return csw_; }
  HeadParams<Scalar>& head() { return head_; }
  TinyCnn<Scalar>* backbone() { return backbone_ ? &*backbone_ : nullptr; }

 private:
  SaspConfig cfg_;
  std::optional<TinyCnn<Scalar>> backbone_;
  EpaParams<Scalar> epa_;
  CswParams<Scalar> csw_;
  HeadParams<Scalar> head_;
};

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "SASPCKPT" u32 version=1 u32 scalar_bytes (4 or 8)
//   config: u32 mode u32 C u32 H' u32 W' u32 K u32 r u32 d1 u32 d2 f64 dropout
//           u32 input_h u32 input_w u32 n_widths u32 widths[n] f64 mean[3] f64 std[3]
//   u32 param_count, then per param in SaspModel::params() order:
//           u32 name_len name u32 rank u32 dims[rank] scalar data[prod(dims)]

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'S', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_config(binary::Writer& w, const SaspConfig& c) {
  const BackboneConfig& b = c.backbone;
  w.u32(static_cast<std::uint32_t>(b.mode));
  w.u32(static_cast<std::uint32_t>(b.channels));
  w.u32(static_cast<std::uint32_t>(b.height));
  w.u32(static_cast<std::uint32_t>(b.width));
  w.u32(static_cast<std::uint32_t>(c.classes));
  w.u32(static_cast<std::uint32_t>(c.csw_reduction));
  w.u32(static_cast<std::uint32_t>(c.head_hidden1));
  w.u32(static_cast<std::uint32_t>(c.head_hidden2));
  w.f64(c.dropout);
  w.u32(static_cast<std::uint32_t>(b.input_height));
  w.u32(static_cast<std::uint32_t>(b.input_width));
  w.u32(static_cast<std::uint32_t>(b.stage_widths.size()));
  for (std::size_t s : b.stage_widths) w.u32(static_cast<std::uint32_t>(s));
  for (double m : b.norm_mean) w.f64(m);
  for (double s : b.norm_std) w.f64(s);
}

inline SaspConfig read_config(binary::Reader& r) {
  SaspConfig c;
  BackboneConfig& b = c.backbone;
  const std::size_t mode_at = r.offset();
  const std::uint32_t mode = r.u32("backbone mode");
  if (mode > 1) throw ParseError("unknown backbone mode " + std::to_string(mode), mode_at);
  b.mode = static_cast<BackboneMode>(mode);
  b.channels = r.u32("channels");
  b.height = r.u32("height");
  b.width = r.u32("width");
  c.classes = r.u32("classes");
  c.csw_reduction = r.u32("csw_reduction");
  c.head_hidden1 = r.u32("head_hidden1");
  c.head_hidden2 = r.u32("head_hidden2");
  c.dropout = r.f64("dropout");
  b.input_height = r.u32("input_height");
  b.input_width = r.u32("input_width");
  const std::size_t widths_at = r.offset();
  const std::uint32_t n = r.u32("stage width count");
  if (n > 64) throw ParseError("implausible stage count", widths_at);
  b.stage_widths.resize(n);
  for (auto& s : b.stage_widths) s = r.u32("stage width");
  for (auto& m : b.norm_mean) m = r.f64("norm mean");
  for (auto& s : b.norm_std) s = r.f64("norm std");
  return c;
}

template <typename Scalar>
void save_checkpoint(std::ostream& os, SaspModel<Scalar>& model) {
  binary::Writer w(os);
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(Scalar));
  write_config(w, model.config());
  const auto params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param<Scalar>* p : params) {
    w.str(p->name);
    const Shape& s = p->value.shape();
    w.u32(static_cast<std::uint32_t>(s.rank));
    for (std::size_t i = 0; i < s.rank; ++i) w.u32(static_cast<std::uint32_t>(s.dims[i]));
    w.array(p->value.ptr(), p->value.size());
  }
  if (!os) throw std::runtime_error("failed writing checkpoint");
}

template <typename Scalar>
void save_checkpoint(const std::string& path, SaspModel<Scalar>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(os, model);
}

namespace detail {
template <typename Stored, typename Scalar>
void read_param_data(binary::Reader& r, Param<Scalar>& p) {
  std::vector<Stored> buf(p.value.size());
  r.array(buf.data(), buf.size(), "parameter data");
  for (std::size_t i = 0; i < buf.size(); ++i) p.value[i] = static_cast<Scalar>(buf[i]);
}
}  // namespace detail

template <typename Scalar>
SaspModel<Scalar> load_checkpoint(std::istream& is) {
  binary::Reader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw ParseError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kCheckpointVersion) throw ParseError("unsupported checkpoint version", version_at);
  const std::size_t width_at = r.offset();
  const std::uint32_t scalar_bytes = r.u32("scalar width");
  if (scalar_bytes != 4 && scalar_bytes != 8) throw ParseError("unsupported scalar width", width_at);
  const std::size_t config_at = r.offset();
  const SaspConfig cfg = read_config(r);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid config block: ") + e.what(), config_at);
  }
  SaspModel<Scalar> model(cfg, 0);
  auto params = model.params();
  const std::size_t count_at = r.offset();
  if (r.u32("param count") != params.size()) throw ParseError("parameter count mismatch", count_at);
  for (Param<Scalar>* p : params) {
    const std::size_t at = r.offset();
    if (r.str("param name") != p->name) throw ParseError("expected parameter " + p->name, at);
    const std::size_t shape_at = r.offset();
    Shape s;
    s.rank = r.u32("rank");
    if (s.rank != 2 && s.rank != 4) throw ParseError("bad parameter rank", shape_at);
    for (std::size_t i = 0; i < s.rank; ++i) s.dims[i] = r.u32("dim");
    if (!(s == p->value.shape())) throw ParseError("shape mismatch for " + p->name, shape_at);
    if (scalar_bytes == 4)
      detail::read_param_data<float>(r, *p);
    else
      detail::read_param_data<double>(r, *p);
  }
  return model;
}

template <typename Scalar>
SaspModel<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return load_checkpoint<Scalar>(is);
}

}  // namespace sasp
