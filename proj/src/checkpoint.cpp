#include "maskcond/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "maskcond/error.hpp"

namespace maskcond {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Entry {
  std::string name;
  const Tensor* tensor;
};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t at, const std::string& path) {
  if (at + sizeof(T) > in.size()) throw Error(Errc::CorruptCheckpoint, path + " is truncated");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

json standardization_json(const Standardization& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

void write_file(const std::string& path, const std::string& kind, json config, json schema, json extra,
                const std::vector<Entry>& entries, json more) {
  json manifest = json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    manifest.push_back({{"name", e.name}, {"shape", e.tensor->shape()}, {"offset", offset}});
    offset += e.tensor->size() * sizeof(double);
  }
  json header = {{"kind", kind},          {"config", std::move(config)}, {"schema", std::move(schema)},
                 {"manifest", manifest},  {"dtype", "f64"},              {"payload_bytes", offset},
                 {"extra", std::move(extra)}};
  for (auto& [k, v] : more.items()) header[k] = v;
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& e : entries) {
    out.append(reinterpret_cast<const char*>(e.tensor->ptr()), e.tensor->size() * sizeof(double));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::Io, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(Errc::Io, "write failed for " + path);
}

struct Loaded {
  json header;
  std::string bytes;
  std::size_t payload_at = 0;
};

Loaded read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot open " + path);
  Loaded l;
  l.bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  if (l.bytes.size() < 16 || std::memcmp(l.bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::CorruptCheckpoint, path + " lacks the checkpoint magic");
  }
  const auto version = take<std::uint32_t>(l.bytes, 4, path);
  if (version != kCheckpointVersion) {
    throw Error(Errc::IncompatibleVersion, path + " has format version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(l.bytes, 8, path);
  if (len > l.bytes.size() - 16) throw Error(Errc::CorruptCheckpoint, path + " header is truncated");
  try {
    l.header = json::parse(l.bytes.begin() + 16, l.bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& ex) {
    throw Error(Errc::CorruptCheckpoint, path + " header: " + ex.what());
  }
  l.payload_at = 16 + len;
  if (!l.header.is_object() || !l.header.contains("manifest") || !l.header.contains("kind") ||
      l.header.value("dtype", "") != "f64") {
    throw Error(Errc::CorruptCheckpoint, path + " header is missing required fields");
  }
  return l;
}

void expect_kind(const Loaded& l, const std::string& kind, const std::string& path) {
  const std::string got = l.header["kind"].get<std::string>();
  if (got != kind) throw Error(Errc::IncompatibleVersion, path + " holds a '" + got + "' model, expected '" + kind + "'");
}

/// Copies each manifest tensor into the matching target, verifying names,
/// shapes, contiguity and payload bounds.
void restore(const Loaded& l, const std::vector<std::pair<std::string, Tensor*>>& targets, const std::string& path) {
  const json& manifest = l.header["manifest"];
  if (!manifest.is_array() || manifest.size() != targets.size()) {
    throw Error(Errc::CorruptCheckpoint, path + " manifest lists " + std::to_string(manifest.size()) +
                                             " tensors, model has " + std::to_string(targets.size()));
  }
  const std::size_t payload = l.bytes.size() - l.payload_at;
  std::size_t expected_offset = 0;
  try {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const json& m = manifest[i];
      const auto& [name, tensor] = targets[i];
      if (m.at("name").get<std::string>() != name) {
        throw Error(Errc::CorruptCheckpoint, path + " manifest entry " + std::to_string(i) + " is '" +
                                                 m.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      if (m.at("shape").get<Shape>() != tensor->shape()) {
        throw Error(Errc::CorruptCheckpoint, path + " tensor '" + name + "' has the wrong shape");
      }
      const auto offset = m.at("offset").get<std::size_t>();
      const std::size_t bytes = tensor->size() * sizeof(double);
      if (offset != expected_offset || offset + bytes > payload) {
        throw Error(Errc::CorruptCheckpoint, path + " tensor '" + name + "' lies outside the payload");
      }
      std::memcpy(tensor->ptr(), l.bytes.data() + l.payload_at + offset, bytes);
      expected_offset += bytes;
    }
  } catch (const json::exception& ex) {
    throw Error(Errc::CorruptCheckpoint, path + " manifest: " + ex.what());
  }
  if (expected_offset != payload) throw Error(Errc::CorruptCheckpoint, path + " has trailing payload bytes");
}

std::vector<std::pair<std::string, Tensor*>> parameter_targets(nn::ParameterSet& params) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : params.items()) out.emplace_back(p.name, &p.var.mutable_value());
  return out;
}

template <typename F>
auto guarded(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& ex) {
    throw Error(Errc::CorruptCheckpoint, path + ": " + ex.what());
  }
}

}  // namespace

void save_checkpoint(const McVae& model, const std::string& path, const json& extra) {
  std::vector<Entry> entries;
  for (const auto& p : model.parameters().items()) entries.push_back({p.name, &p.var.value()});
  write_file(path, "vae", to_json(model.config()), schema_to_json(model.schema()), extra, entries,
             {{"standardization", standardization_json(model.standardization())}});
}

void save_checkpoint(const McDiffusion& model, const std::string& path, const json& extra) {
  std::vector<Entry> entries;
  for (const auto& p : model.parameters().items()) entries.push_back({p.name, &p.var.value()});
  for (const auto& [name, t] : model.buffers()) entries.push_back({name, t});
  write_file(path, "diffusion", to_json(model.config()), schema_to_json(model.schema()), extra, entries,
             json::object());
}

McVae load_vae_checkpoint(const std::string& path) {
  const Loaded l = read_file(path);
  expect_kind(l, "vae", path);
  return guarded(path, [&] {
    McVae model(vae_config_from_json(l.header.at("config")), schema_from_json(l.header.at("schema")), 0);
    restore(l, parameter_targets(model.parameters()), path);
    const json& s = l.header.at("standardization");
    Standardization st{s.at("mean").get<std::vector<double>>(), s.at("stddev").get<std::vector<double>>()};
    if (!st.empty()) model.set_standardization(std::move(st));
    return model;
  });
}

McDiffusion load_diffusion_checkpoint(const std::string& path) {
  const Loaded l = read_file(path);
  expect_kind(l, "diffusion", path);
  return guarded(path, [&] {
    McDiffusion model(diffusion_config_from_json(l.header.at("config")), schema_from_json(l.header.at("schema")), 0);
    auto targets = parameter_targets(model.parameters());
    for (const auto& b : model.buffers()) targets.push_back(b);
    restore(l, targets, path);
    return model;
  });
}

json read_checkpoint_header(const std::string& path) { return read_file(path).header; }

}  // namespace maskcond
