#pragma once

// Dataset manifests, CUB-200-2011 ingestion, the synthetic feature generator,
// and PPM image decoding/preprocessing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sasp/backbone.hpp"
#include "sasp/random.hpp"
#include "sasp/train.hpp"

namespace sasp {

enum class Split { kTrain, kTest };

inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct ManifestRecord {
  std::string sample_id;
  std::string source;  // image path, or "feat:<index>" into a feature file
  std::size_t label = 0;
  Split split = Split::kTrain;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::size_t classes = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;

  bool operator==(const DatasetManifest&) const = default;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.split == s; }));
  }

  void validate() const {
    if (classes == 0) throw IngestError("manifest has zero classes");
    if (class_names.size() != classes) throw IngestError("manifest class name count does not match K");
    std::unordered_set<std::string> seen;
    std::set<std::size_t> referenced, trained;
    for (const auto& r : records) {
      if (r.label >= classes)
        throw IngestError("record '" + r.sample_id + "' label " + std::to_string(r.label) + " >= K");
      if (!seen.insert(r.sample_id).second)
        throw IngestError("sample '" + r.sample_id + "' appears more than once");
      referenced.insert(r.label);
      if (r.split == Split::kTrain) trained.insert(r.label);
    }
    for (std::size_t c : referenced)
      if (!trained.count(c)) throw IngestError("class " + std::to_string(c) + " has no training record");
  }
};

// Tab-separated text:
//   sasp-manifest 1
//   classes <K>
//   class <index> <name>
//   record <sample_id> <source> <label> <train|test>
inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << "sasp-manifest\t1\n";
  os << "classes\t" << m.classes << '\n';
  for (std::size_t i = 0; i < m.class_names.size(); ++i) os << "class\t" << i << '\t' << m.class_names[i] << '\n';
  for (const auto& r : m.records)
    os << "record\t" << r.sample_id << '\t' << r.source << '\t' << r.label << '\t' << to_string(r.split) << '\n';
}

namespace detail {
inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t t = line.find('\t', start);
    out.push_back(line.substr(start, t == std::string::npos ? std::string::npos : t - start));
    if (t == std::string::npos) break;
    start = t + 1;
  }
  return out;
}

inline std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size() || s.front() == '-') throw IngestError(where + ": expected a non-negative integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}
}  // namespace detail

inline DatasetManifest parse_manifest(std::istream& is) {
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    const auto f = detail::split_tabs(line);
    if (!header) {
      if (f.size() != 2 || f[0] != "sasp-manifest" || f[1] != "1") throw IngestError(where + ": missing manifest header");
      header = true;
    } else if (f[0] == "classes" && f.size() == 2) {
      m.classes = detail::parse_index(f[1], where);
    } else if (f[0] == "class" && f.size() == 3) {
      if (detail::parse_index(f[1], where) != m.class_names.size()) throw IngestError(where + ": class indices out of order");
      m.class_names.push_back(f[2]);
    } else if (f[0] == "record" && f.size() == 5) {
      ManifestRecord r{f[1], f[2], detail::parse_index(f[3], where), Split::kTrain};
      if (f[4] == "test")
        r.split = Split::kTest;
      else if (f[4] != "train")
        throw IngestError(where + ": split must be train or test");
      m.records.push_back(std::move(r));
    } else {
      throw IngestError(where + ": unrecognized entry");
    }
  }
  if (!header) throw IngestError("empty manifest");
  m.validate();
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_manifest(os, m);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestError("cannot open manifest " + path);
  return parse_manifest(is);
}

// ---------------------------------------------------------------------------
// CUB-200-2011: classes.txt, images.txt, image_class_labels.txt and
// train_test_split.txt, each "<id> <value>" per line; images under images/.

namespace detail {
struct IdLine {
  std::size_t id;
  std::string value;
  std::size_t line;
};

inline std::vector<IdLine> read_id_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestError("missing index file " + path.string());
  std::vector<IdLine> out;
  std::string line;
  std::size_t lineno = 0;
  const std::string name = path.filename().string();
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = name + " line " + std::to_string(lineno);
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos) throw IngestError(where + ": expected '<id> <value>'");
    out.push_back({parse_index(line.substr(0, sp), where), line.substr(sp + 1), lineno});
  }
  return out;
}
}  // namespace detail

inline DatasetManifest ingest_cub(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const auto classes = detail::read_id_file(root / "classes.txt");
  const auto images = detail::read_id_file(root / "images.txt");
  const auto labels = detail::read_id_file(root / "image_class_labels.txt");
  const auto splits = detail::read_id_file(root / "train_test_split.txt");

  DatasetManifest m;
  m.classes = classes.size();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id != i + 1)
      throw IngestError("classes.txt line " + std::to_string(classes[i].line) + ": expected class id " + std::to_string(i + 1));
    m.class_names.push_back(classes[i].value);
  }

  std::map<std::size_t, std::size_t> slot;  // image id -> record index
  for (const auto& im : images) {
    const std::string where = "images.txt line " + std::to_string(im.line);
    if (slot.count(im.id)) throw IngestError(where + ": duplicate image id " + std::to_string(im.id));
    const fs::path file = root / "images" / im.value;
    if (!fs::exists(file)) throw IngestError(where + ": image not found: " + file.string());
    slot.emplace(im.id, m.records.size());
    m.records.push_back({im.value, file.string(), 0, Split::kTrain});
  }

  std::vector<bool> has_label(m.records.size(), false), has_split(m.records.size(), false);
  for (const auto& l : labels) {
    const std::string where = "image_class_labels.txt line " + std::to_string(l.line);
    auto it = slot.find(l.id);
    if (it == slot.end()) throw IngestError(where + ": unknown image id " + std::to_string(l.id));
    const std::size_t label = detail::parse_index(l.value, where);
    if (label < 1 || label > m.classes)
      throw IngestError(where + ": label " + std::to_string(label) + " outside 1.." + std::to_string(m.classes));
    m.records[it->second].label = label - 1;
    has_label[it->second] = true;
  }
  for (const auto& s : splits) {
    const std::string where = "train_test_split.txt line " + std::to_string(s.line);
    auto it = slot.find(s.id);
    if (it == slot.end()) throw IngestError(where + ": unknown image id " + std::to_string(s.id));
    if (s.value != "0" && s.value != "1") throw IngestError(where + ": split flag must be 0 or 1");
    m.records[it->second].split = s.value == "1" ? Split::kTrain : Split::kTest;
    has_split[it->second] = true;
  }
  for (const auto& [id, idx] : slot) {
    if (!has_label[idx]) throw IngestError("image id " + std::to_string(id) + " has no class label");
    if (!has_split[idx]) throw IngestError("image id " + std::to_string(id) + " has no train/test assignment");
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic features: each class has a mean pattern (per-channel offset plus
// a spatial component); samples add isotropic gaussian noise.

struct SynthSpec {
  std::size_t classes = 8;
  std::size_t per_class = 5;
  std::size_t channels = 64;
  std::size_t height = 7;
  std::size_t width = 7;
  std::uint64_t seed = 42;
  double noise_std = 0.25;
};

struct SynthResult {
  FeatureHeader header;
  std::vector<FeatureRecord> records;
  DatasetManifest manifest;
  std::vector<Tensor<float>> class_means;
  std::vector<std::string> warnings;
};

// Samples per class held out for the test split.
inline std::size_t synth_test_count(std::size_t per_class) {
  return per_class < 2 ? 0 : std::max<std::size_t>(1, per_class / 5);
}

inline SynthResult synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1) throw InvalidArgument("synth needs classes >= 1 and per_class >= 1");
  if (spec.channels < 1 || spec.height < 1 || spec.width < 1) throw InvalidArgument("synth feature dims must be >= 1");
  if (!(spec.noise_std > 0)) throw InvalidArgument("synth noise_std must be positive");

  SynthResult out;
  out.header = {static_cast<std::uint32_t>(spec.channels), static_cast<std::uint32_t>(spec.height),
                static_cast<std::uint32_t>(spec.width), static_cast<std::uint32_t>(spec.classes)};
  const Shape shape = Shape::nchw(1, spec.channels, spec.height, spec.width);
  const std::size_t plane = spec.height * spec.width;
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> offset(0.0, 2.0);
  std::normal_distribution<double> unit(0.0, 1.0);

  for (std::size_t k = 0; k < spec.classes; ++k) {
    Tensor<float> mean(shape);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const double a = offset(rng);
      for (std::size_t i = 0; i < plane; ++i) mean[c * plane + i] = static_cast<float>(a + 0.5 * unit(rng));
    }
    out.class_means.push_back(std::move(mean));
  }
  // Enforce mean separation >= 4 noise std by scaling the patterns if needed.
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < spec.classes; ++a)
    for (std::size_t b = a + 1; b < spec.classes; ++b) {
      double d2 = 0;
      for (std::size_t i = 0; i < shape.size(); ++i) {
        const double d = out.class_means[a][i] - out.class_means[b][i];
        d2 += d * d;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  if (spec.classes > 1 && min_dist < 4 * spec.noise_std) {
    const float factor = static_cast<float>(4 * spec.noise_std / min_dist * 1.01);
    for (auto& m : out.class_means)
      for (auto& v : m.data()) v *= factor;
  }

  const std::size_t n_test = synth_test_count(spec.per_class);
  if (spec.per_class == 1)
    out.warnings.push_back("per_class=1 leaves no sample for a test split; all samples placed in train");

  out.manifest.classes = spec.classes;
  for (std::size_t k = 0; k < spec.classes; ++k) out.manifest.class_names.push_back("class_" + std::to_string(k));
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      FeatureRecord rec;
      rec.sample_id = "synth_c" + std::to_string(k) + "_" + std::to_string(i);
      rec.label = static_cast<std::uint32_t>(k);
      rec.features = Tensor<float>(shape);
      for (std::size_t j = 0; j < shape.size(); ++j)
        rec.features[j] = static_cast<float>(out.class_means[k][j] + noise(rng));
      const Split split = i + n_test >= spec.per_class ? Split::kTest : Split::kTrain;
      out.manifest.records.push_back({rec.sample_id, "feat:" + std::to_string(out.records.size()), k, split});
      out.records.push_back(std::move(rec));
    }
  }
  out.manifest.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Images

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> rgb;  // interleaved, [0, 1]
};

// Binary (P6) and ASCII (P3) PPM.
inline Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestError("cannot open image " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P3") throw IngestError(path + ": not a P3/P6 PPM image");
  Image img;
  unsigned long maxval = 0;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IngestError(path + ": malformed PPM header");
  }
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) throw IngestError(path + ": bad PPM dimensions");
  const std::size_t count = img.width * img.height * 3;
  img.rgb.resize(count);
  const float scale = 1.0f / static_cast<float>(maxval);
  if (magic == "P3") {
    for (auto& v : img.rgb) {
      const std::string t = token();
      if (t.empty()) throw IngestError(path + ": truncated PPM data");
      v = static_cast<float>(std::stoul(t)) * scale;
    }
  } else {
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(count * bytes);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw IngestError(path + ": truncated PPM data");
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned v = bytes == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
      img.rgb[i] = static_cast<float>(v) * scale;
    }
  }
  return img;
}

// Bilinear resize (half-pixel centres) then per-channel (x - mean) / std.
template <typename Scalar>
Tensor<Scalar> preprocess(const Image& img, const BackboneConfig& cfg) {
  const std::size_t H = cfg.input_height, W = cfg.input_width;
  Tensor<Scalar> out(Shape::nchw(1, 3, H, W));
  auto src = [&](std::size_t y, std::size_t x, std::size_t c) { return img.rgb[(y * img.width + x) * 3 + c]; };
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(s);
    i1 = std::min(i0 + 1, in - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < H; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, img.height, H, y0, y1, fy);
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, img.width, W, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - fx) * src(y0, x0, c) + fx * src(y0, x1, c);
        const double bot = (1 - fx) * src(y1, x0, c) + fx * src(y1, x1, c);
        const double v = (1 - fy) * top + fy * bot;
        out.at(0, c, y, x) = static_cast<Scalar>((v - cfg.norm_mean[c]) / cfg.norm_std[c]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest -> in-memory datasets

template <typename Scalar>
struct SplitData {
  Dataset<Scalar> train;
  Dataset<Scalar> test;
};

// Without a manifest every record is a training sample.
template <typename Scalar>
SplitData<Scalar> datasets_from_features(const FeatureFile& file, const DatasetManifest* manifest) {
  SplitData<Scalar> out;
  if (!manifest) {
    for (const auto& r : file.records) out.train.add(r.sample_id, r.label, r.features.template cast<Scalar>());
    return out;
  }
  if (manifest->classes != file.header.classes)
    throw IngestError("manifest K=" + std::to_string(manifest->classes) + " but feature file K=" +
                      std::to_string(file.header.classes));
  for (const auto& m : manifest->records) {
    if (m.source.rfind("feat:", 0) != 0)
      throw IngestError("record '" + m.sample_id + "' does not reference a feature index");
    const std::size_t idx = detail::parse_index(m.source.substr(5), "record '" + m.sample_id + "'");
    if (idx >= file.records.size())
      throw IngestError("record '" + m.sample_id + "' references missing feature " + std::to_string(idx));
    const FeatureRecord& r = file.records[idx];
    if (r.sample_id != m.sample_id || r.label != m.label)
      throw IngestError("record '" + m.sample_id + "' disagrees with feature file entry " + std::to_string(idx));
    auto& dst = m.split == Split::kTrain ? out.train : out.test;
    dst.add(r.sample_id, r.label, r.features.template cast<Scalar>());
  }
  return out;
}

template <typename Scalar>
SplitData<Scalar> datasets_from_images(const DatasetManifest& manifest, const BackboneConfig& cfg) {
  SplitData<Scalar> out;
  for (const auto& m : manifest.records) {
    auto& dst = m.split == Split::kTrain ? out.train : out.test;
    dst.add(m.sample_id, m.label, preprocess<Scalar>(read_ppm(m.source), cfg));
  }
  return out;
}

}  // namespace sasp
