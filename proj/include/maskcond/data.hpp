#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskcond/conditions.hpp"
#include "maskcond/tensor.hpp"

namespace maskcond {

/// Per-coordinate z-scoring computed on a training split.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const noexcept { return mean.empty(); }
  /// Rows of (N, D) data units -> standardized units.
  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& z) const;
  bool operator==(const Standardization&) const = default;
};

/// Throws InvalidRange if any coordinate has zero spread.
Standardization compute_standardization(const Tensor& rows);

struct PointCloudDataset {
  ConditionSchema schema;
  Tensor keypoints;  // (N, 2K) in data units
  std::vector<ConditionVector> conditions;
  Standardization standardization;

  std::size_t size() const noexcept { return conditions.size(); }
  std::size_t num_keypoints() const { return keypoints.dim(1) / 2; }
  PointCloudDataset subset(std::span<const std::size_t> rows) const;
  PointCloudDataset prefix(std::size_t n) const;
};

struct LoadStats {
  std::size_t clamped_numericals = 0;
  std::size_t masked_cells = 0;
};

/// Columns `kp{i}_x, kp{i}_y` (or the schema's keypoint_columns) followed by one
/// column per condition. Empty cells become Masked; out-of-range numericals
/// are clamped and counted.
PointCloudDataset load_pointcloud_csv(const std::string& path, const ConditionSchema& schema,
                                      LoadStats* stats = nullptr);
PointCloudDataset load_pointcloud_csv(const std::string& path, const std::string& schema_path,
                                      LoadStats* stats = nullptr);
void write_pointcloud_csv(const PointCloudDataset& data, const std::string& path);

/// Deterministic shuffle by seed; standardization from the train split is
/// attached to both halves. Throws EmptySplit if either side would be empty.
std::pair<PointCloudDataset, PointCloudDataset> split(const PointCloudDataset& data, double test_fraction,
                                                      std::uint64_t seed);

/// Permutation used by `split` (first n_test entries form the test split).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Synthetic oracle dataset: style rotates a regular K-gon, variant offsets
/// it, scale multiplies it by (0.5 + u).
struct SynthSpec {
  std::size_t num_styles = 4;
  std::size_t num_variants = 3;
  double scale_min = 0.0;
  double scale_max = 1.0;
  double noise_std = 0.01;
  std::size_t num_keypoints = 6;
  std::size_t d_cat = 4;
  std::size_t d_num = 4;
};

void validate_synth_spec(const SynthSpec& spec);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

ConditionSchema synth_schema(const SynthSpec& spec);
/// Noise-free keypoints (2K, interleaved x, y). Style is periodic in S;
/// variant must be < V.
std::vector<double> oracle_mean(std::size_t style, std::size_t variant, double scale, const SynthSpec& spec);
PointCloudDataset synth_generate(const SynthSpec& spec, std::size_t n, std::uint64_t seed);

/// Largest coordinate magnitude the generator can produce without noise.
double synth_extent(const SynthSpec& spec);

/// Image tensor (C, H, W) in [0, 1]: white background, keypoints as filled
/// discs of radius 1.5 px joined by 1-px segments in ring order. Keypoints are
/// (2K) in [-1, 1] layout space, y pointing up.
Tensor render_image(std::span<const double> keypoints, const Shape& image_shape);

struct ImageDataset {
  ConditionSchema schema;
  Tensor images;  // (N, C, H, W) in [-1, 1]
  std::vector<ConditionVector> conditions;
  std::vector<std::string> filenames;

  std::size_t size() const noexcept { return conditions.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  ImageDataset subset(std::span<const std::size_t> rows) const;
};

/// Renders a synthetic point-cloud dataset into an image dataset.
ImageDataset render_dataset(const PointCloudDataset& clouds, const SynthSpec& spec, const Shape& image_shape);

/// `<dir>/annotations.csv` (filename + condition columns) next to PNG files.
ImageDataset load_image_dataset(const std::string& dir, const ConditionSchema& schema, LoadStats* stats = nullptr);
void write_image_dataset(const ImageDataset& data, const std::string& dir);

std::pair<ImageDataset, ImageDataset> split(const ImageDataset& data, double test_fraction, std::uint64_t seed);

}  // namespace maskcond
