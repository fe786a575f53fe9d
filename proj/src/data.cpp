#include "maskcond/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "maskcond/csv.hpp"
#include "maskcond/error.hpp"
#include "maskcond/image_io.hpp"
#include "maskcond/rng.hpp"

namespace maskcond {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor Standardization::apply(const Tensor& x) const {
  const std::size_t d = mean.size();
  if (x.rank() != 2 || x.dim(1) != d) throw Error(Errc::ShapeMismatch, "standardize: expected (N, " + std::to_string(d) + ")");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i % d]) / stddev[i % d];
  return out;
}

Tensor Standardization::invert(const Tensor& z) const {
  const std::size_t d = mean.size();
  if (z.rank() != 2 || z.dim(1) != d) throw Error(Errc::ShapeMismatch, "destandardize: expected (N, " + std::to_string(d) + ")");
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * stddev[i % d] + mean[i % d];
  return out;
}

Standardization compute_standardization(const Tensor& rows) {
  if (rows.rank() != 2 || rows.dim(0) == 0) throw Error(Errc::EmptySplit, "cannot standardize an empty set");
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  Standardization s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += rows.at(i, j);
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) s.stddev[j] += (rows.at(i, j) - s.mean[j]) * (rows.at(i, j) - s.mean[j]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n));
    if (!(s.stddev[j] > 0.0)) throw Error(Errc::InvalidRange, "coordinate " + std::to_string(j) + " has zero spread");
  }
  return s;
}

PointCloudDataset PointCloudDataset::subset(std::span<const std::size_t> rows) const {
  PointCloudDataset out;
  out.schema = schema;
  out.standardization = standardization;
  const std::size_t d = keypoints.dim(1);
  out.keypoints = Tensor({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw Error(Errc::IndexOutOfRange, "row " + std::to_string(rows[i]));
    std::copy_n(keypoints.ptr() + rows[i] * d, d, out.keypoints.ptr() + i * d);
    out.conditions.push_back(conditions[rows[i]]);
  }
  return out;
}

PointCloudDataset PointCloudDataset::prefix(std::size_t n) const {
  if (n > size()) throw Error(Errc::SizeTooLarge, std::to_string(n) + " rows requested from " + std::to_string(size()));
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return subset(rows);
}

namespace {

std::vector<std::pair<std::string, std::string>> keypoint_column_names(const ConditionSchema& schema,
                                                                       const csv::Row& header) {
  if (!schema.keypoint_columns.empty()) return schema.keypoint_columns;
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0;; ++i) {
    std::string x = "kp" + std::to_string(i) + "_x", y = "kp" + std::to_string(i) + "_y";
    if (std::find(header.begin(), header.end(), x) == header.end()) break;
    out.emplace_back(std::move(x), std::move(y));
  }
  return out;
}

std::size_t column_index(const std::unordered_map<std::string, std::size_t>& index, const std::string& name,
                         const std::string& path) {
  auto it = index.find(name);
  if (it == index.end()) throw Error(Errc::MissingColumn, "column '" + name + "' not found in " + path);
  return it->second;
}

std::string cell_ref(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

struct ConditionColumns {
  std::vector<std::size_t> categorical;
  std::vector<std::size_t> numerical;
  std::vector<std::unordered_map<std::string, std::size_t>> labels;
};

ConditionColumns condition_columns(const ConditionSchema& schema,
                                   const std::unordered_map<std::string, std::size_t>& index,
                                   const std::string& path) {
  ConditionColumns cols;
  for (const auto& f : schema.categorical) {
    cols.categorical.push_back(column_index(index, f.column.value_or(f.name), path));
    std::unordered_map<std::string, std::size_t> lookup;
    for (std::size_t c = 0; c < f.categories.size(); ++c) lookup.emplace(f.categories[c], c);
    cols.labels.push_back(std::move(lookup));
  }
  for (const auto& f : schema.numerical) cols.numerical.push_back(column_index(index, f.column.value_or(f.name), path));
  return cols;
}

ConditionVector parse_conditions(const ConditionSchema& schema, const ConditionColumns& cols, const csv::Row& row,
                                 std::size_t row_number, LoadStats& stats) {
  ConditionVector cv;
  for (std::size_t i = 0; i < schema.k_cat(); ++i) {
    const auto& f = schema.categorical[i];
    const std::string& cell = row.at(cols.categorical[i]);
    if (cell.empty()) {
      cv.categorical.emplace_back(Masked{});
      ++stats.masked_cells;
      continue;
    }
    auto it = cols.labels[i].find(cell);
    if (it == cols.labels[i].end()) {
      throw Error(Errc::UnknownCategoryLabel, "'" + cell + "' at " + cell_ref(row_number, f.column.value_or(f.name)));
    }
    cv.categorical.emplace_back(ObservedCategory{it->second});
  }
  for (std::size_t j = 0; j < schema.k_num(); ++j) {
    const auto& f = schema.numerical[j];
    const std::string& cell = row.at(cols.numerical[j]);
    if (cell.empty()) {
      cv.numerical.emplace_back(Masked{});
      ++stats.masked_cells;
      continue;
    }
    double raw = 0.0;
    if (!csv::parse_double(cell, raw) || !std::isfinite(raw)) {
      throw Error(Errc::MalformedNumber, "'" + cell + "' at " + cell_ref(row_number, f.column.value_or(f.name)));
    }
    double unit = f.normalize(raw);
    if (unit < 0.0 || unit > 1.0) {
      unit = std::clamp(unit, 0.0, 1.0);
      ++stats.clamped_numericals;
    }
    cv.numerical.emplace_back(ObservedValue{unit});
  }
  return cv;
}

std::vector<std::string> condition_cells(const ConditionSchema& schema, const ConditionVector& cv) {
  std::vector<std::string> cells;
  for (std::size_t i = 0; i < schema.k_cat(); ++i) {
    const auto* c = std::get_if<ObservedCategory>(&cv.categorical[i]);
    cells.push_back(c ? schema.categorical[i].categories.at(c->index) : std::string());
  }
  for (std::size_t j = 0; j < schema.k_num(); ++j) {
    const auto* v = std::get_if<ObservedValue>(&cv.numerical[j]);
    cells.push_back(v ? csv::format_double(schema.numerical[j].denormalize(v->value)) : std::string());
  }
  return cells;
}

std::vector<std::string> condition_header(const ConditionSchema& schema) {
  std::vector<std::string> out;
  for (const auto& f : schema.categorical) out.push_back(f.column.value_or(f.name));
  for (const auto& f : schema.numerical) out.push_back(f.column.value_or(f.name));
  return out;
}

std::unordered_map<std::string, std::size_t> header_index(const csv::Row& header) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) index.emplace(header[c], c);
  return index;
}

}  // namespace

PointCloudDataset load_pointcloud_csv(const std::string& path, const ConditionSchema& schema, LoadStats* stats) {
  validate_schema(schema);
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw Error(Errc::MissingColumn, path + " has no header");
  const csv::Row& header = rows.front();
  const auto index = header_index(header);
  const auto kp_names = keypoint_column_names(schema, header);
  if (kp_names.empty()) throw Error(Errc::MissingColumn, "no keypoint columns (kp0_x, ...) in " + path);
  std::vector<std::size_t> kp_cols;
  for (const auto& [x, y] : kp_names) {
    kp_cols.push_back(column_index(index, x, path));
    kp_cols.push_back(column_index(index, y, path));
  }
  const ConditionColumns cond_cols = condition_columns(schema, index, path);

  LoadStats local;
  PointCloudDataset out;
  out.schema = schema;
  const std::size_t n = rows.size() - 1, d = kp_cols.size();
  out.keypoints = Tensor({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const csv::Row& row = rows[r + 1];
    if (row.size() != header.size()) {
      throw Error(Errc::MalformedNumber, "row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                                             " fields, header has " + std::to_string(header.size()));
    }
    for (std::size_t k = 0; k < d; ++k) {
      double v = 0.0;
      if (!csv::parse_double(row[kp_cols[k]], v) || !std::isfinite(v)) {
        throw Error(Errc::MalformedNumber, "'" + row[kp_cols[k]] + "' at " + cell_ref(r + 1, header[kp_cols[k]]));
      }
      out.keypoints.at(r, k) = v;
    }
    out.conditions.push_back(parse_conditions(schema, cond_cols, row, r + 1, local));
  }
  if (stats) *stats = local;
  return out;
}

PointCloudDataset load_pointcloud_csv(const std::string& path, const std::string& schema_path, LoadStats* stats) {
  return load_pointcloud_csv(path, load_schema(schema_path), stats);
}

void write_pointcloud_csv(const PointCloudDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  const std::size_t k = data.num_keypoints();
  csv::Row header;
  for (std::size_t i = 0; i < k; ++i) {
    if (!data.schema.keypoint_columns.empty()) {
      header.push_back(data.schema.keypoint_columns.at(i).first);
      header.push_back(data.schema.keypoint_columns.at(i).second);
    } else {
      header.push_back("kp" + std::to_string(i) + "_x");
      header.push_back("kp" + std::to_string(i) + "_y");
    }
  }
  for (auto& name : condition_header(data.schema)) header.push_back(name);
  out << csv::join(header) << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    csv::Row row;
    for (std::size_t j = 0; j < 2 * k; ++j) row.push_back(csv::format_double(data.keypoints.at(r, j)));
    for (auto& cell : condition_cells(data.schema, data.conditions[r])) row.push_back(std::move(cell));
    out << csv::join(row) << '\n';
  }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5b1d));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

namespace {

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double test_fraction,
                                                                            std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(Errc::EmptySplit, "test fraction must lie strictly between 0 and 1");
  }
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test >= n) {
    throw Error(Errc::EmptySplit, "fraction " + csv::format_double(test_fraction) + " of " + std::to_string(n) +
                                      " rows leaves an empty split");
  }
  auto idx = shuffled_indices(n, seed);
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return {std::move(train), std::move(test)};
}

}  // namespace

std::pair<PointCloudDataset, PointCloudDataset> split(const PointCloudDataset& data, double test_fraction,
                                                      std::uint64_t seed) {
  auto [train_idx, test_idx] = split_indices(data.size(), test_fraction, seed);
  PointCloudDataset train = data.subset(train_idx);
  PointCloudDataset test = data.subset(test_idx);
  train.standardization = compute_standardization(train.keypoints);
  test.standardization = train.standardization;
  return {std::move(train), std::move(test)};
}

void validate_synth_spec(const SynthSpec& spec) {
  if (spec.num_styles < 2 || spec.num_variants < 2) throw Error(Errc::InvalidConfig, "synthetic spec needs S, V >= 2");
  if (!(spec.noise_std >= 0.0)) throw Error(Errc::InvalidConfig, "noise_std must be nonnegative");
  if (spec.num_keypoints < 3) throw Error(Errc::InvalidConfig, "synthetic polygons need K >= 3");
  if (!(spec.scale_min < spec.scale_max)) throw Error(Errc::InvalidRange, "scale range must satisfy min < max");
}

json synth_spec_to_json(const SynthSpec& spec) {
  return {{"num_styles", spec.num_styles},   {"num_variants", spec.num_variants},
          {"scale_min", spec.scale_min},     {"scale_max", spec.scale_max},
          {"noise_std", spec.noise_std},     {"num_keypoints", spec.num_keypoints},
          {"d_cat", spec.d_cat},             {"d_num", spec.d_num}};
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.num_styles = j.value("num_styles", s.num_styles);
    s.num_variants = j.value("num_variants", s.num_variants);
    s.scale_min = j.value("scale_min", s.scale_min);
    s.scale_max = j.value("scale_max", s.scale_max);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.num_keypoints = j.value("num_keypoints", s.num_keypoints);
    s.d_cat = j.value("d_cat", s.d_cat);
    s.d_num = j.value("d_num", s.d_num);
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("synthetic spec: ") + ex.what());
  }
  validate_synth_spec(s);
  return s;
}

ConditionSchema synth_schema(const SynthSpec& spec) {
  validate_synth_spec(spec);
  ConditionSchema schema;
  CategoricalFeature style{"style", {}, std::nullopt};
  for (std::size_t s = 0; s < spec.num_styles; ++s) style.categories.push_back("s" + std::to_string(s));
  CategoricalFeature variant{"variant", {}, std::nullopt};
  for (std::size_t v = 0; v < spec.num_variants; ++v) variant.categories.push_back("v" + std::to_string(v));
  schema.categorical = {std::move(style), std::move(variant)};
  schema.numerical = {NumericalFeature{"scale", spec.scale_min, spec.scale_max, std::nullopt}};
  schema.d_cat = spec.d_cat;
  schema.d_num = spec.d_num;
  return schema;
}

std::vector<double> oracle_mean(std::size_t style, std::size_t variant, double scale, const SynthSpec& spec) {
  if (variant >= spec.num_variants) {
    throw Error(Errc::IndexOutOfRange, "variant " + std::to_string(variant) + " of " + std::to_string(spec.num_variants));
  }
  if (!std::isfinite(scale)) throw Error(Errc::NonFiniteValue, "scale");
  const std::size_t k = spec.num_keypoints;
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(style % spec.num_styles) /
                       static_cast<double>(spec.num_styles);
  const double c = std::cos(angle), s = std::sin(angle);
  const double factor = 0.5 + scale;
  const double offset = static_cast<double>(variant) / static_cast<double>(spec.num_variants);
  std::vector<double> out(2 * k);
  for (std::size_t i = 0; i < k; ++i) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    const double bx = std::cos(theta), by = std::sin(theta);
    out[2 * i] = (c * bx - s * by) * factor + offset;
    out[2 * i + 1] = (s * bx + c * by) * factor - offset;
  }
  return out;
}

PointCloudDataset synth_generate(const SynthSpec& spec, std::size_t n, std::uint64_t seed) {
  validate_synth_spec(spec);
  if (n == 0) throw Error(Errc::EmptySplit, "synthetic dataset needs at least one sample");
  Rng rng(seed);
  PointCloudDataset out;
  out.schema = synth_schema(spec);
  const std::size_t d = 2 * spec.num_keypoints;
  out.keypoints = Tensor({n, d});
  const auto& scale_feature = out.schema.numerical[0];
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t s = rng.index(spec.num_styles);
    const std::size_t v = rng.index(spec.num_variants);
    const double u = rng.uniform(spec.scale_min, spec.scale_max);
    const auto mean = oracle_mean(s, v, u, spec);
    for (std::size_t j = 0; j < d; ++j) out.keypoints.at(r, j) = mean[j] + spec.noise_std * rng.normal();
    ConditionVector cv;
    cv.categorical = {ObservedCategory{s}, ObservedCategory{v}};
    cv.numerical = {ObservedValue{std::clamp(scale_feature.normalize(u), 0.0, 1.0)}};
    out.conditions.push_back(std::move(cv));
  }
  return out;
}

double synth_extent(const SynthSpec& spec) {
  const double offset = static_cast<double>(spec.num_variants - 1) / static_cast<double>(spec.num_variants);
  return 0.5 + std::max(std::abs(spec.scale_min), std::abs(spec.scale_max)) + offset;
}

Tensor render_image(std::span<const double> keypoints, const Shape& image_shape) {
  if (image_shape.size() != 3) throw Error(Errc::ShapeMismatch, "image shape must be (C, H, W)");
  if (keypoints.size() % 2 != 0) throw Error(Errc::ShapeMismatch, "keypoints must be (x, y) pairs");
  const std::size_t channels = image_shape[0], height = image_shape[1], width = image_shape[2];
  const std::size_t k = keypoints.size() / 2;
  std::vector<double> plane(height * width, 1.0);
  auto to_px = [&](std::size_t i) {
    const double px = (keypoints[2 * i] + 1.0) * 0.5 * static_cast<double>(width - 1);
    const double py = (1.0 - keypoints[2 * i + 1]) * 0.5 * static_cast<double>(height - 1);
    return std::pair{px, py};
  };
  auto plot = [&](long x, long y) {
    if (x >= 0 && y >= 0 && x < static_cast<long>(width) && y < static_cast<long>(height)) {
      plane[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = 0.0;
    }
  };
  // Segments in ring order (Bresenham between rounded endpoints).
  for (std::size_t i = 0; k > 1 && i < k; ++i) {
    auto [x0f, y0f] = to_px(i);
    auto [x1f, y1f] = to_px((i + 1) % k);
    long x0 = std::lround(x0f), y0 = std::lround(y0f);
    const long x1 = std::lround(x1f), y1 = std::lround(y1f);
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      plot(x0, y0);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  constexpr double kRadius = 1.5;
  for (std::size_t i = 0; i < k; ++i) {
    auto [px, py] = to_px(i);
    for (long y = static_cast<long>(std::floor(py - kRadius)); y <= static_cast<long>(std::ceil(py + kRadius)); ++y) {
      for (long x = static_cast<long>(std::floor(px - kRadius)); x <= static_cast<long>(std::ceil(px + kRadius)); ++x) {
        const double ddx = static_cast<double>(x) - px, ddy = static_cast<double>(y) - py;
        if (ddx * ddx + ddy * ddy <= kRadius * kRadius) plot(x, y);
      }
    }
  }
  Tensor out({channels, height, width});
  for (std::size_t c = 0; c < channels; ++c) std::copy(plane.begin(), plane.end(), out.ptr() + c * height * width);
  return out;
}

ImageDataset ImageDataset::subset(std::span<const std::size_t> rows) const {
  ImageDataset out;
  out.schema = schema;
  const Shape s = image_shape();
  const std::size_t per = shape_numel(s);
  out.images = Tensor({rows.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw Error(Errc::IndexOutOfRange, "row " + std::to_string(rows[i]));
    std::copy_n(images.ptr() + rows[i] * per, per, out.images.ptr() + i * per);
    out.conditions.push_back(conditions[rows[i]]);
    if (!filenames.empty()) out.filenames.push_back(filenames[rows[i]]);
  }
  return out;
}

ImageDataset render_dataset(const PointCloudDataset& clouds, const SynthSpec& spec, const Shape& image_shape) {
  ImageDataset out;
  out.schema = clouds.schema;
  const std::size_t n = clouds.size(), d = clouds.keypoints.dim(1), per = shape_numel(image_shape);
  out.images = Tensor({n, image_shape.at(0), image_shape.at(1), image_shape.at(2)});
  // Leave a margin so that noisy points and disc radii stay on the canvas.
  const double layout = 1.0 / (1.1 * synth_extent(spec));
  std::vector<double> kp(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) kp[j] = clouds.keypoints.at(r, j) * layout;
    Tensor img = render_image(kp, image_shape);
    for (std::size_t i = 0; i < per; ++i) out.images[r * per + i] = 2.0 * img[i] - 1.0;
    out.conditions.push_back(clouds.conditions[r]);
    out.filenames.push_back("img" + std::to_string(r) + ".png");
  }
  return out;
}

ImageDataset load_image_dataset(const std::string& dir, const ConditionSchema& schema, LoadStats* stats) {
  validate_schema(schema);
  const std::string path = (fs::path(dir) / "annotations.csv").string();
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw Error(Errc::MissingColumn, path + " has no header");
  const auto index = header_index(rows.front());
  const std::size_t file_col = column_index(index, "filename", path);
  const ConditionColumns cols = condition_columns(schema, index, path);
  LoadStats local;
  ImageDataset out;
  out.schema = schema;
  std::vector<Tensor> images;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != rows.front().size()) {
      throw Error(Errc::MalformedNumber, "row " + std::to_string(r) + " field count differs from the header");
    }
    images.push_back(read_png((fs::path(dir) / row[file_col]).string()));
    if (images.back().shape() != images.front().shape()) {
      throw Error(Errc::ShapeMismatch, row[file_col] + " has shape " + shape_str(images.back().shape()) + ", expected " +
                                           shape_str(images.front().shape()));
    }
    out.filenames.push_back(row[file_col]);
    out.conditions.push_back(parse_conditions(schema, cols, row, r, local));
  }
  if (images.empty()) throw Error(Errc::EmptySplit, path + " lists no images");
  const Shape s = images.front().shape();
  const std::size_t per = shape_numel(s);
  out.images = Tensor({images.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = 0; j < per; ++j) out.images[i * per + j] = 2.0 * images[i][j] - 1.0;
  }
  if (stats) *stats = local;
  return out;
}

void write_image_dataset(const ImageDataset& data, const std::string& dir) {
  fs::create_directories(dir);
  const Shape s = data.image_shape();
  const std::size_t per = shape_numel(s);
  std::ofstream out(fs::path(dir) / "annotations.csv", std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write annotations in " + dir);
  csv::Row header{"filename"};
  for (auto& name : condition_header(data.schema)) header.push_back(name);
  out << csv::join(header) << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = data.filenames.empty() ? "img" + std::to_string(i) + ".png" : data.filenames[i];
    Tensor img(s);
    for (std::size_t j = 0; j < per; ++j) img[j] = 0.5 * (data.images[i * per + j] + 1.0);
    write_png((fs::path(dir) / name).string(), img);
    csv::Row row{name};
    for (auto& cell : condition_cells(data.schema, data.conditions[i])) row.push_back(std::move(cell));
    out << csv::join(row) << '\n';
  }
}

std::pair<ImageDataset, ImageDataset> split(const ImageDataset& data, double test_fraction, std::uint64_t seed) {
  auto [train_idx, test_idx] = split_indices(data.size(), test_fraction, seed);
  return {data.subset(train_idx), data.subset(test_idx)};
}

}  // namespace maskcond
