#include "maskcond/conditions.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "maskcond/error.hpp"
#include "maskcond/ops.hpp"

namespace maskcond {

using nlohmann::json;

void validate_schema(const ConditionSchema& schema) {
  if (schema.num_features() == 0) throw Error(Errc::EmptyFeatureSet, "schema declares no conditions");
  if (schema.d_cat == 0 || schema.d_num == 0) throw Error(Errc::InvalidConfig, "embedding dimensions must be positive");
  std::set<std::string> names;
  for (const auto& f : schema.categorical) {
    if (!names.insert(f.name).second) throw Error(Errc::DuplicateCategory, "feature name '" + f.name + "' repeated");
    if (f.categories.empty()) throw Error(Errc::InvalidRange, "feature '" + f.name + "' has no categories");
    std::set<std::string> labels;
    for (const auto& label : f.categories) {
      if (!labels.insert(label).second) {
        throw Error(Errc::DuplicateCategory, "feature '" + f.name + "' repeats category '" + label + "'");
      }
    }
  }
  for (const auto& f : schema.numerical) {
    if (!names.insert(f.name).second) throw Error(Errc::DuplicateCategory, "feature name '" + f.name + "' repeated");
    if (!std::isfinite(f.min) || !std::isfinite(f.max) || !(f.min < f.max)) {
      throw Error(Errc::InvalidRange, "feature '" + f.name + "' needs finite min < max");
    }
  }
}

json schema_to_json(const ConditionSchema& schema) {
  json j;
  j["categorical_features"] = json::array();
  for (const auto& f : schema.categorical) {
    json e{{"name", f.name}, {"cardinality", f.cardinality()}, {"categories", f.categories}};
    if (f.column) e["column"] = *f.column;
    j["categorical_features"].push_back(std::move(e));
  }
  j["numerical_features"] = json::array();
  for (const auto& f : schema.numerical) {
    json e{{"name", f.name}, {"min", f.min}, {"max", f.max}};
    if (f.column) e["column"] = *f.column;
    j["numerical_features"].push_back(std::move(e));
  }
  j["d_cat"] = schema.d_cat;
  j["d_num"] = schema.d_num;
  if (!schema.keypoint_columns.empty()) {
    j["keypoint_columns"] = json::array();
    for (const auto& [x, y] : schema.keypoint_columns) j["keypoint_columns"].push_back({x, y});
  }
  return j;
}

ConditionSchema schema_from_json(const json& j) {
  ConditionSchema s;
  try {
    for (const auto& e : j.value("categorical_features", json::array())) {
      CategoricalFeature f;
      f.name = e.at("name").get<std::string>();
      f.categories = e.at("categories").get<std::vector<std::string>>();
      if (e.contains("cardinality") && e.at("cardinality").get<std::size_t>() != f.categories.size()) {
        throw Error(Errc::InvalidRange, "feature '" + f.name + "' cardinality disagrees with its category list");
      }
      if (e.contains("column")) f.column = e.at("column").get<std::string>();
      s.categorical.push_back(std::move(f));
    }
    for (const auto& e : j.value("numerical_features", json::array())) {
      NumericalFeature f;
      f.name = e.at("name").get<std::string>();
      f.min = e.at("min").get<double>();
      f.max = e.at("max").get<double>();
      if (e.contains("column")) f.column = e.at("column").get<std::string>();
      s.numerical.push_back(std::move(f));
    }
    s.d_cat = j.at("d_cat").get<std::size_t>();
    s.d_num = j.at("d_num").get<std::size_t>();
    for (const auto& e : j.value("keypoint_columns", json::array())) {
      s.keypoint_columns.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    }
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("schema JSON: ") + ex.what());
  }
  validate_schema(s);
  return s;
}

ConditionSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open schema " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, path + ": " + ex.what());
  }
  return schema_from_json(j);
}

void save_schema(const ConditionSchema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write schema " + path);
  out << schema_to_json(schema).dump(2) << '\n';
}

std::size_t ConditionVector::masked_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : categorical) n += is_masked(e);
  for (const auto& e : numerical) n += is_masked(e);
  return n;
}

ConditionVector ConditionVector::all_masked(const ConditionSchema& schema) {
  ConditionVector cv;
  cv.categorical.assign(schema.k_cat(), Masked{});
  cv.numerical.assign(schema.k_num(), Masked{});
  return cv;
}

void validate_conditions(const ConditionSchema& schema, const ConditionVector& cv) {
  if (cv.categorical.size() != schema.k_cat() || cv.numerical.size() != schema.k_num()) {
    throw Error(Errc::SchemaMismatch, "condition vector has " + std::to_string(cv.categorical.size()) + "+" +
                                          std::to_string(cv.numerical.size()) + " entries, schema expects " +
                                          std::to_string(schema.k_cat()) + "+" + std::to_string(schema.k_num()));
  }
  for (std::size_t i = 0; i < cv.categorical.size(); ++i) {
    if (const auto* c = std::get_if<ObservedCategory>(&cv.categorical[i])) {
      if (c->index >= schema.categorical[i].cardinality()) {
        throw Error(Errc::IndexOutOfRange, "category " + std::to_string(c->index) + " for feature '" +
                                               schema.categorical[i].name + "'");
      }
    }
  }
  for (std::size_t j = 0; j < cv.numerical.size(); ++j) {
    if (const auto* v = std::get_if<ObservedValue>(&cv.numerical[j])) {
      if (!std::isfinite(v->value)) throw Error(Errc::NonFiniteValue, "feature '" + schema.numerical[j].name + "'");
      if (v->value < 0.0 || v->value > 1.0) {
        throw Error(Errc::InvalidRange, "normalized value of '" + schema.numerical[j].name + "' outside [0, 1]");
      }
    }
  }
}

ConditionVector mask_conditions(const ConditionVector& cv, double p_t, Rng& rng) {
  if (!(p_t >= 0.0 && p_t <= 1.0)) throw Error(Errc::InvalidProbability, "p_t = " + std::to_string(p_t));
  ConditionVector out = cv;
  for (auto& e : out.categorical) {
    if (rng.bernoulli(p_t)) e = Masked{};
  }
  for (auto& e : out.numerical) {
    if (rng.bernoulli(p_t)) e = Masked{};
  }
  return out;
}

ConditionEmbedder::ConditionEmbedder(const ConditionSchema& schema, nn::ParameterSet& params, Rng& rng,
                                     const std::string& prefix)
    : schema_(schema) {
  validate_schema(schema_);
  const double cat_bound = 1.0 / std::sqrt(static_cast<double>(schema_.d_cat));
  const double num_bound = 1.0 / std::sqrt(static_cast<double>(schema_.d_num));
  for (std::size_t i = 0; i < schema_.k_cat(); ++i) {
    const std::size_t rows = schema_.categorical[i].cardinality() + 1;
    tables_.push_back(params.add(prefix + ".cat" + std::to_string(i),
                                 nn::uniform_tensor({rows, schema_.d_cat}, cat_bound, rng)));
  }
  for (std::size_t j = 0; j < schema_.k_num(); ++j) {
    weights_.push_back(params.add(prefix + ".num" + std::to_string(j) + ".weight",
                                  nn::uniform_tensor({schema_.d_num}, num_bound, rng)));
    biases_.push_back(params.add(prefix + ".num" + std::to_string(j) + ".bias",
                                 nn::uniform_tensor({schema_.d_num}, num_bound, rng)));
  }
}

const Var& ConditionEmbedder::table(std::size_t i) const {
  if (i >= tables_.size()) throw Error(Errc::IndexOutOfRange, "categorical feature " + std::to_string(i));
  return tables_[i];
}

const Var& ConditionEmbedder::projection_weight(std::size_t j) const {
  if (j >= weights_.size()) throw Error(Errc::IndexOutOfRange, "numerical feature " + std::to_string(j));
  return weights_[j];
}

const Var& ConditionEmbedder::projection_bias(std::size_t j) const {
  if (j >= biases_.size()) throw Error(Errc::IndexOutOfRange, "numerical feature " + std::to_string(j));
  return biases_[j];
}

namespace {

std::size_t row_index(const CategoricalFeature& f, const CategoricalEntry& entry) {
  if (const auto* c = std::get_if<ObservedCategory>(&entry)) {
    if (c->index >= f.cardinality()) {
      throw Error(Errc::IndexOutOfRange, "category " + std::to_string(c->index) + " for feature '" + f.name + "'");
    }
    return c->index;
  }
  return f.cardinality();
}

double projection_input(const NumericalFeature& f, const NumericalEntry& entry) {
  if (const auto* v = std::get_if<ObservedValue>(&entry)) {
    if (!std::isfinite(v->value)) throw Error(Errc::NonFiniteValue, "feature '" + f.name + "'");
    return v->value;
  }
  return kMaskedNumericalSentinel;
}

}  // namespace

std::vector<double> ConditionEmbedder::embed_categorical(std::size_t i, const CategoricalEntry& entry) const {
  const Tensor& t = table(i).value();
  const std::size_t row = row_index(schema_.categorical[i], entry);
  const std::size_t d = schema_.d_cat;
  return {t.ptr() + row * d, t.ptr() + (row + 1) * d};
}

std::vector<double> ConditionEmbedder::embed_numerical(std::size_t j, const NumericalEntry& entry) const {
  const Tensor& w = projection_weight(j).value();
  const Tensor& b = projection_bias(j).value();
  const double v = projection_input(schema_.numerical[j], entry);
  std::vector<double> out(schema_.d_num);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = v * w[k] + b[k];
  return out;
}

std::vector<double> ConditionEmbedder::embed(const ConditionVector& cv) const {
  if (cv.categorical.size() != schema_.k_cat() || cv.numerical.size() != schema_.k_num()) {
    throw Error(Errc::SchemaMismatch, "condition vector does not match embedder schema");
  }
  std::vector<double> out;
  out.reserve(output_dim());
  for (std::size_t i = 0; i < cv.categorical.size(); ++i) {
    auto e = embed_categorical(i, cv.categorical[i]);
    out.insert(out.end(), e.begin(), e.end());
  }
  for (std::size_t j = 0; j < cv.numerical.size(); ++j) {
    auto e = embed_numerical(j, cv.numerical[j]);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

Var ConditionEmbedder::embed_batch(std::span<const ConditionVector> batch) const {
  std::vector<Var> parts;
  std::vector<std::size_t> rows(batch.size());
  std::vector<double> values(batch.size());
  for (const auto& cv : batch) {
    if (cv.categorical.size() != schema_.k_cat() || cv.numerical.size() != schema_.k_num()) {
      throw Error(Errc::SchemaMismatch, "condition vector does not match embedder schema");
    }
  }
  for (std::size_t i = 0; i < schema_.k_cat(); ++i) {
    for (std::size_t b = 0; b < batch.size(); ++b) rows[b] = row_index(schema_.categorical[i], batch[b].categorical[i]);
    parts.push_back(ops::gather_rows(tables_[i], rows));
  }
  for (std::size_t j = 0; j < schema_.k_num(); ++j) {
    for (std::size_t b = 0; b < batch.size(); ++b) values[b] = projection_input(schema_.numerical[j], batch[b].numerical[j]);
    parts.push_back(ops::scalar_affine(values, weights_[j], biases_[j]));
  }
  return ops::concat_cols(parts);
}

std::pair<std::size_t, std::size_t> ConditionEmbedder::slice_of(std::size_t feature) const {
  if (feature >= schema_.num_features()) throw Error(Errc::IndexOutOfRange, "feature " + std::to_string(feature));
  if (feature < schema_.k_cat()) return {feature * schema_.d_cat, schema_.d_cat};
  const std::size_t j = feature - schema_.k_cat();
  return {schema_.k_cat() * schema_.d_cat + j * schema_.d_num, schema_.d_num};
}

}  // namespace maskcond
