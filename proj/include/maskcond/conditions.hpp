#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskcond/autograd.hpp"
#include "maskcond/nn.hpp"
#include "maskcond/rng.hpp"

namespace maskcond {

struct CategoricalFeature {
  std::string name;
  std::vector<std::string> categories;  // code order; cardinality = size()
  std::optional<std::string> column;    // CSV column, defaults to name

  std::size_t cardinality() const noexcept { return categories.size(); }
  bool operator==(const CategoricalFeature&) const = default;
};

struct NumericalFeature {
  std::string name;
  double min = 0.0;
  double max = 1.0;
  std::optional<std::string> column;

  double normalize(double raw) const { return (raw - min) / (max - min); }
  double denormalize(double unit) const { return min + unit * (max - min); }
  bool operator==(const NumericalFeature&) const = default;
};

/// Declaration of the mixed condition set. Categorical features are embedded
/// before numerical ones, each in declaration order.
struct ConditionSchema {
  std::vector<CategoricalFeature> categorical;
  std::vector<NumericalFeature> numerical;
  std::size_t d_cat = 4;
  std::size_t d_num = 4;
  // Optional CSV column names for keypoints, pairs of (x, y).
  std::vector<std::pair<std::string, std::string>> keypoint_columns;

  std::size_t k_cat() const noexcept { return categorical.size(); }
  std::size_t k_num() const noexcept { return numerical.size(); }
  std::size_t num_features() const noexcept { return k_cat() + k_num(); }
  std::size_t embedding_dim() const noexcept { return k_cat() * d_cat + k_num() * d_num; }

  bool operator==(const ConditionSchema&) const = default;
};

/// Throws Error with EmptyFeatureSet, DuplicateCategory or InvalidRange.
void validate_schema(const ConditionSchema& schema);

nlohmann::json schema_to_json(const ConditionSchema& schema);
ConditionSchema schema_from_json(const nlohmann::json& j);
ConditionSchema load_schema(const std::string& path);
void save_schema(const ConditionSchema& schema, const std::string& path);

struct Masked {
  bool operator==(const Masked&) const = default;
};
struct ObservedCategory {
  std::size_t index;
  bool operator==(const ObservedCategory&) const = default;
};
struct ObservedValue {
  double value;  // normalized to [0, 1]
  bool operator==(const ObservedValue&) const = default;
};

using CategoricalEntry = std::variant<ObservedCategory, Masked>;
using NumericalEntry = std::variant<ObservedValue, Masked>;

inline bool is_masked(const CategoricalEntry& e) noexcept { return std::holds_alternative<Masked>(e); }
inline bool is_masked(const NumericalEntry& e) noexcept { return std::holds_alternative<Masked>(e); }

struct ConditionVector {
  std::vector<CategoricalEntry> categorical;
  std::vector<NumericalEntry> numerical;

  std::size_t size() const noexcept { return categorical.size() + numerical.size(); }
  std::size_t masked_count() const noexcept;

  static ConditionVector all_masked(const ConditionSchema& schema);

  bool operator==(const ConditionVector&) const = default;
};

/// Throws SchemaMismatch (lengths), IndexOutOfRange (category) or
/// NonFiniteValue / InvalidRange (numerical outside [0, 1]).
void validate_conditions(const ConditionSchema& schema, const ConditionVector& cv);

/// Independently replaces each entry by Masked with probability p_t.
/// Entries are visited categorical first, then numerical.
ConditionVector mask_conditions(const ConditionVector& cv, double p_t, Rng& rng);

/// Value substituted for a masked numerical condition before projection.
inline constexpr double kMaskedNumericalSentinel = -1.0;

/// Trainable embedding of a ConditionVector into e_y. Categorical feature i
/// owns a (n_i + 1) x d_cat table whose last row is the mask token; numerical
/// feature j owns a 1 -> d_num affine map.
class ConditionEmbedder {
 public:
  ConditionEmbedder() = default;
  /// Registers parameters under `prefix` in `params`.
  ConditionEmbedder(const ConditionSchema& schema, nn::ParameterSet& params, Rng& rng,
                    const std::string& prefix = "embedder");

  const ConditionSchema& schema() const noexcept { return schema_; }
  std::size_t output_dim() const noexcept { return schema_.embedding_dim(); }

  const Var& table(std::size_t i) const;
  const Var& projection_weight(std::size_t j) const;
  const Var& projection_bias(std::size_t j) const;

  std::vector<double> embed_categorical(std::size_t i, const CategoricalEntry& entry) const;
  std::vector<double> embed_numerical(std::size_t j, const NumericalEntry& entry) const;
  std::vector<double> embed(const ConditionVector& cv) const;

  /// Differentiable batched embedding, (B, d_y).
  Var embed_batch(std::span<const ConditionVector> batch) const;

  /// Column range of feature `feature` (categoricals first) inside e_y.
  std::pair<std::size_t, std::size_t> slice_of(std::size_t feature) const;

 private:
  ConditionSchema schema_;
  std::vector<Var> tables_;
  std::vector<Var> weights_;
  std::vector<Var> biases_;
};

}  // namespace maskcond
