#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hrmedseg/data.hpp"
#include "hrmedseg/losses.hpp"
#include "hrmedseg/param_store.hpp"

// Persistence. The tensor container is
//
//   "HRMS" | u32 version | u32 count | count x entry
//   entry: u16 name bytes | name | u8 ndim | ndim x u32 dim | u8 dtype | payload
//
// little-endian throughout; dtype 0 is 32-bit IEEE, 1 is 64-bit IEEE.
namespace hrmedseg {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

// Writes `tensors` in order. The payload uses `dtype`, converting if needed.
template <typename Scalar>
void write_tensors(const std::filesystem::path& path, const NamedTensors<Scalar>& tensors, DType dtype = DType::f32);
// Reads the whole file and validates it before returning anything.
template <typename Scalar>
NamedTensors<Scalar> read_tensors(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const ParamStore<Scalar>& store, const std::filesystem::path& path, DType dtype = DType::f32);
template <typename Scalar>
ParamStore<Scalar> load_checkpoint(const std::filesystem::path& path);

// Binary PGM with maxval 255. Binary maps store 0/255, otherwise class k is
// stored as floor(255 k / C2).
std::string pgm_header(Index width, Index height);
void write_mask_pgm(const LabelMap& labels, Index classes, const std::filesystem::path& path);
LabelMap read_mask_pgm(const std::filesystem::path& path, Index classes);
std::uint8_t label_to_gray(std::uint8_t label, Index classes);

// 8-bit RGB (P6) or grey (P5, replicated to three channels) images, values
// scaled to [0, 1].
void write_image_ppm(const std::vector<float>& planar, Index height, Index width, const std::filesystem::path& path);
std::vector<float> read_image(const std::filesystem::path& path, Index& height, Index& width);

// Dataset directory: images/<id>.ppm, masks/<id>.pgm and manifest.tsv with
// one "id<TAB>image<TAB>mask" line per sample (paths relative to the
// manifest). Images are quantized to 8 bits on disk.
struct ManifestEntry {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
};
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest, Index classes);

// Teacher features stored as one named tensor per image id in the container
// format. Every tensor must have shape `expected` (the neck output for one
// image); a mismatch throws ShapeError naming both shapes.
template <typename Scalar>
NamedTensors<Scalar> load_teacher_features(const std::filesystem::path& path, const Shape& expected);

}  // namespace hrmedseg
