#include "pvtformer/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace pvt {
namespace {

using nlohmann::json;

template <std::size_t N>
json array_to_json(const std::array<Index, N>& a) {
  json j = json::array();
  for (auto v : a) j.push_back(v);
  return j;
}

template <std::size_t N>
void array_from_json(const json& j, std::array<Index, N>& a) {
  if (!j.is_array() || j.size() != N)
    throw std::runtime_error("checkpoint: malformed stage array in config");
  for (std::size_t i = 0; i < N; ++i) a[i] = j[i].get<Index>();
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] =
      static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  std::array<unsigned char, 8> b;
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t offset = 0;
  const float* data = nullptr;

  std::int64_t count() const {
    std::int64_t c = 1;
    for (auto d : shape) c *= d;
    return c;
  }
};

json index_json(const std::vector<TensorSpec>& tensors) {
  json arr = json::array();
  for (const auto& t : tensors) {
    arr.push_back(json{{"name", t.name},
                       {"dtype", "f32"},
                       {"shape", t.shape},
                       {"offset", t.offset}});
  }
  return arr;
}

json parse_index(const std::string& path, std::ifstream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t len = read_u64_le(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated index in " + path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: invalid index in " + path + ": " +
                             e.what());
  }
}

}  // namespace

json config_to_json(const PVTFormerConfig& cfg) {
  json enc;
  enc["embed_dims"] = array_to_json(cfg.encoder.embed_dims);
  enc["depths"] = array_to_json(cfg.encoder.depths);
  enc["heads"] = array_to_json(cfg.encoder.heads);
  enc["mlp_ratios"] = array_to_json(cfg.encoder.mlp_ratios);
  enc["sr_ratios"] = array_to_json(cfg.encoder.sr_ratios);
  enc["in_channels"] = cfg.encoder.in_channels;
  enc["linear_sra"] = cfg.encoder.linear_sra;
  return json{{"encoder", enc},
              {"reduce_c", cfg.reduce_c},
              {"head_channels", cfg.head_channels},
              {"out_h", cfg.out_h},
              {"out_w", cfg.out_w}};
}

PVTFormerConfig config_from_json(const json& j) {
  PVTFormerConfig cfg;
  try {
    const json& enc = j.at("encoder");
    array_from_json(enc.at("embed_dims"), cfg.encoder.embed_dims);
    array_from_json(enc.at("depths"), cfg.encoder.depths);
    array_from_json(enc.at("heads"), cfg.encoder.heads);
    array_from_json(enc.at("mlp_ratios"), cfg.encoder.mlp_ratios);
    array_from_json(enc.at("sr_ratios"), cfg.encoder.sr_ratios);
    cfg.encoder.in_channels = enc.at("in_channels").get<Index>();
    cfg.encoder.linear_sra = enc.at("linear_sra").get<bool>();
    cfg.reduce_c = j.at("reduce_c").get<Index>();
    cfg.head_channels = j.at("head_channels").get<Index>();
    cfg.out_h = j.at("out_h").get<Index>();
    cfg.out_w = j.at("out_w").get<Index>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed config: ") +
                             e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, const PVTFormerConfig& cfg,
                     const ParamRegistry<float>& reg, int epoch,
                     double best_val_loss, Adam<float>* opt) {
  std::vector<TensorSpec> tensors;
  std::uint64_t offset = 0;
  auto push = [&](std::string name, std::vector<std::int64_t> shape,
                  const float* data) {
    TensorSpec t{std::move(name), std::move(shape), offset, data};
    offset += static_cast<std::uint64_t>(t.count()) * sizeof(float);
    tensors.push_back(std::move(t));
  };
  for (const auto& e : reg.entries()) push(e.name, e.shape, e.value);
  if (opt) {
    opt->ensure_state(reg);
    std::size_t slot = 0;
    for (const auto& e : reg.entries()) {
      if (!e.trainable) continue;
      push("adam.m." + e.name, e.shape, opt->m()[slot].data());
      push("adam.v." + e.name, e.shape, opt->v()[slot].data());
      ++slot;
    }
  }

  json index;
  index["format"] = 1;
  index["epoch"] = epoch;
  index["best_val_loss"] = best_val_loss;
  index["adam_t"] = opt ? opt->t() : 0;
  index["has_optimizer"] = opt != nullptr;
  index["config"] = config_to_json(cfg);
  index["tensors"] = index_json(tensors);
  const std::string text = index.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  write_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors)
    os.write(reinterpret_cast<const char*>(t.data),
             static_cast<std::streamsize>(t.count() * sizeof(float)));
  os.flush();
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

PVTFormerConfig checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  const json index = parse_index(path, is);
  if (!index.contains("config"))
    throw std::runtime_error("checkpoint: missing config in " + path);
  return config_from_json(index["config"]);
}

CheckpointMeta load_checkpoint(const std::string& path,
                               ParamRegistry<float>& reg, Adam<float>* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  const json index = parse_index(path, is);
  const std::streampos blob_start = is.tellg();

  CheckpointMeta meta;
  try {
    meta.epoch = index.at("epoch").get<int>();
    meta.best_val_loss = index.at("best_val_loss").get<double>();
    meta.adam_t = index.at("adam_t").get<std::int64_t>();
    meta.has_optimizer = index.at("has_optimizer").get<bool>();
    meta.config = config_from_json(index.at("config"));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed index in " + path + ": " +
                             e.what());
  }

  struct Stored {
    std::vector<std::int64_t> shape;
    std::uint64_t offset;
  };
  std::unordered_map<std::string, Stored> table;
  try {
    for (const auto& t : index.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32")
        throw std::runtime_error("checkpoint: unsupported dtype in " + path);
      table[t.at("name").get<std::string>()] =
          Stored{t.at("shape").get<std::vector<std::int64_t>>(),
                 t.at("offset").get<std::uint64_t>()};
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: malformed tensor table in " + path +
                             ": " + e.what());
  }

  auto read_into = [&](const std::string& name,
                       const std::vector<std::int64_t>& shape, float* dst,
                       std::int64_t count) {
    auto it = table.find(name);
    if (it == table.end())
      throw std::runtime_error("checkpoint: missing tensor " + name + " in " +
                               path);
    if (it->second.shape != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name +
                               " in " + path);
    is.seekg(blob_start + static_cast<std::streamoff>(it->second.offset));
    is.read(reinterpret_cast<char*>(dst),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is)
      throw std::runtime_error("checkpoint: truncated blob for " + name +
                               " in " + path);
  };

  for (auto& e : reg.entries()) read_into(e.name, e.shape, e.value, e.count());
  if (opt) {
    if (!meta.has_optimizer)
      throw std::runtime_error("checkpoint: no optimizer state in " + path);
    opt->ensure_state(reg);
    opt->set_t(meta.adam_t);
    std::size_t slot = 0;
    for (const auto& e : reg.entries()) {
      if (!e.trainable) continue;
      read_into("adam.m." + e.name, e.shape, opt->m()[slot].data(), e.count());
      read_into("adam.v." + e.name, e.shape, opt->v()[slot].data(), e.count());
      ++slot;
    }
  }
  return meta;
}

}  // namespace pvt
