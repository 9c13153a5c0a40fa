#include "hrmedseg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

namespace hrmedseg {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(path_ + ": truncated file");
  }
  const std::vector<char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename Scalar>
void write_tensors(const std::filesystem::path& path, const NamedTensors<Scalar>& tensors, DType dtype) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("too many tensors");
  std::set<std::string> seen;
  std::string out;
  out.append("HRMS");
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) throw FormatError("duplicate tensor name " + name);
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + name);
    if (t.ndim() > 255) throw FormatError("too many dimensions in " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
    for (Index d : t.shape()) {
      if (d < 0 || static_cast<std::uint64_t>(d) > std::numeric_limits<std::uint32_t>::max())
        throw FormatError("dimension overflow in " + name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    for (Scalar v : t.data()) {
      if (dtype == DType::f32)
        put<float>(out, static_cast<float>(v));
      else
        put<double>(out, static_cast<double>(v));
    }
  }
  write_file(path, out);
}

template <typename Scalar>
NamedTensors<Scalar> read_tensors(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes, path.string());
  if (r.text(4) != "HRMS") throw FormatError(path.string() + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  NamedTensors<Scalar> out;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.text(len);
    if (!seen.insert(name).second) throw FormatError(path.string() + ": duplicate tensor name " + name);
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    std::uint64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint32_t>();
      if (dim != 0 && n > std::numeric_limits<std::uint64_t>::max() / 8 / dim)
        throw FormatError(path.string() + ": dimension overflow in " + name);
      n *= dim;
      shape.push_back(static_cast<Index>(dim));
    }
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError(path.string() + ": unknown dtype tag " + std::to_string(tag) + " in " + name);
    const std::size_t width = tag == 0 ? 4 : 8;
    if (n > r.remaining() / width) throw FormatError(path.string() + ": truncated file");
    const char* p = r.take(n * width);
    std::vector<Scalar> values(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (tag == 0) {
        float v;
        std::memcpy(&v, p + k * 4, 4);
        values[k] = static_cast<Scalar>(v);
      } else {
        double v;
        std::memcpy(&v, p + k * 8, 8);
        values[k] = static_cast<Scalar>(v);
      }
    }
    out.emplace_back(std::move(name), Tensor<Scalar>(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after last tensor");
  return out;
}

template <typename Scalar>
void save_checkpoint(const ParamStore<Scalar>& store, const std::filesystem::path& path, DType dtype) {
  NamedTensors<Scalar> entries;
  for (const auto& [name, t] : store.entries()) entries.emplace_back(name, t.detach());
  write_tensors(path, entries, dtype);
}

template <typename Scalar>
ParamStore<Scalar> load_checkpoint(const std::filesystem::path& path) {
  ParamStore<Scalar> store;
  for (auto& [name, t] : read_tensors<Scalar>(path)) store.add(name, std::move(t));
  return store;
}

std::uint8_t label_to_gray(std::uint8_t label, Index classes) {
  if (classes == 1) return label ? 255 : 0;
  return static_cast<std::uint8_t>(255 * static_cast<Index>(label) / classes);
}

std::string pgm_header(Index width, Index height) {
  return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

void write_mask_pgm(const LabelMap& labels, Index classes, const std::filesystem::path& path) {
  if (classes < 1 || classes > 255) throw std::invalid_argument("write_mask_pgm: classes must be in 1..255");
  std::string out = pgm_header(labels.width, labels.height);
  for (std::uint8_t l : labels.labels) {
    if (l >= std::max<Index>(classes, 2)) throw std::invalid_argument("write_mask_pgm: label out of range");
    out.push_back(static_cast<char>(label_to_gray(l, classes)));
  }
  write_file(path, out);
}

namespace {

struct Netpbm {
  std::string magic;
  Index width = 0, height = 0;
  std::vector<std::uint8_t> payload;
};

Netpbm read_netpbm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t.push_back(bytes[pos++]);
    if (t.empty()) throw FormatError(path.string() + ": truncated header");
    return t;
  };
  Netpbm img;
  img.magic = token();
  if (img.magic != "P5" && img.magic != "P6") throw FormatError(path.string() + ": not a binary PGM/PPM file");
  try {
    img.width = std::stol(token());
    img.height = std::stol(token());
    if (std::stol(token()) != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed header");
  }
  if (img.width <= 0 || img.height <= 0) throw FormatError(path.string() + ": bad dimensions");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width * img.height * (img.magic == "P6" ? 3 : 1));
  if (bytes.size() < pos || bytes.size() - pos < n) throw FormatError(path.string() + ": truncated raster");
  img.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

}  // namespace

LabelMap read_mask_pgm(const std::filesystem::path& path, Index classes) {
  const auto img = read_netpbm(path);
  if (img.magic != "P5") throw FormatError(path.string() + ": masks must be P5");
  std::vector<int> inverse(256, -1);
  for (Index k = 0; k < std::max<Index>(classes, 2); ++k) inverse[label_to_gray(static_cast<std::uint8_t>(k), classes)] = static_cast<int>(k);
  LabelMap out{img.height, img.width, {}};
  out.labels.reserve(img.payload.size());
  for (std::uint8_t g : img.payload) {
    if (inverse[g] < 0) throw FormatError(path.string() + ": grey level " + std::to_string(g) + " is not a class code");
    out.labels.push_back(static_cast<std::uint8_t>(inverse[g]));
  }
  return out;
}

void write_image_ppm(const std::vector<float>& planar, Index height, Index width, const std::filesystem::path& path) {
  const Index plane = height * width;
  if (static_cast<Index>(planar.size()) != 3 * plane) throw ShapeError("write_image_ppm: expected 3 x H x W data");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (Index i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(planar[c * plane + i], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f))));
    }
  write_file(path, out);
}

std::vector<float> read_image(const std::filesystem::path& path, Index& height, Index& width) {
  const auto img = read_netpbm(path);
  height = img.height;
  width = img.width;
  const Index plane = height * width;
  const int channels = img.magic == "P6" ? 3 : 1;
  std::vector<float> out(static_cast<std::size_t>(3 * plane));
  for (Index i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) out[c * plane + i] = img.payload[i * channels + (channels == 3 ? c : 0)] / 255.0f;
  return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::ostringstream manifest;
  for (const auto& s : samples) {
    const auto image = std::filesystem::path("images") / (s.id + ".ppm");
    const auto mask = std::filesystem::path("masks") / (s.id + ".pgm");
    write_image_ppm(s.image, s.height, s.width, dir / image);
    write_mask_pgm(s.labels(), s.classes, dir / mask);
    manifest << s.id << '\t' << image.string() << '\t' << mask.string() << '\n';
  }
  write_file(dir / "manifest.tsv", manifest.str());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());
  const auto root = manifest.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": expected id<TAB>image<TAB>mask");
    out.push_back({fields[0], root / fields[1], root / fields[2]});
  }
  return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest, Index classes) {
  std::vector<Sample> out;
  for (const auto& e : read_manifest(manifest)) {
    Sample s;
    s.id = e.id;
    s.classes = classes;
    s.image = read_image(e.image, s.height, s.width);
    const auto labels = read_mask_pgm(e.mask, classes);
    if (labels.height != s.height || labels.width != s.width)
      throw ShapeError("mask and image sizes differ for " + e.id);
    s.mask = one_hot_mask(labels, classes);
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar>
NamedTensors<Scalar> load_teacher_features(const std::filesystem::path& path, const Shape& expected) {
  auto features = read_tensors<Scalar>(path);
  for (const auto& [id, t] : features)
    if (t.shape() != expected)
      throw ShapeError("teacher features for " + id + " have shape " + to_string(t.shape()) +
                       " but the neck produces " + to_string(expected));
  return features;
}

#define HRMEDSEG_INSTANTIATE_IO(S)                                                                       \
  template void write_tensors(const std::filesystem::path&, const NamedTensors<S>&, DType);              \
  template NamedTensors<S> read_tensors(const std::filesystem::path&);                                   \
  template void save_checkpoint(const ParamStore<S>&, const std::filesystem::path&, DType);              \
  template ParamStore<S> load_checkpoint(const std::filesystem::path&);                                  \
  template NamedTensors<S> load_teacher_features(const std::filesystem::path&, const Shape&);

HRMEDSEG_INSTANTIATE_IO(float)
HRMEDSEG_INSTANTIATE_IO(double)

#undef HRMEDSEG_INSTANTIATE_IO

}  // namespace hrmedseg
