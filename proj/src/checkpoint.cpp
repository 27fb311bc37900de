#include "pseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace pseg {

namespace {

using nlohmann::json;

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

void save_checkpoint(Model& model, const std::string& prefix, std::uint64_t step,
                     const std::map<std::string, std::string>& config_echo) {
  std::string blob;
  json tensors = json::array();
  model.for_each_param([&](const std::string& name, Tensor& t, bool trainable) {
    json rec;
    rec["name"] = name;
    rec["shape"] = t.shape();
    rec["offset"] = blob.size();
    rec["bytes"] = t.size() * 8;
    rec["trainable"] = trainable;
    tensors.push_back(std::move(rec));
    for (double v : t.data()) put_f64(blob, v);
  });
  json manifest;
  manifest["version"] = 1;
  manifest["step"] = step;
  manifest["config"] = config_echo;
  manifest["tensors"] = tensors;
  write_file(prefix + ".json", manifest.dump(2) + "\n");
  write_file(prefix + ".bin", blob);
}

CheckpointMeta read_checkpoint_meta(const std::string& prefix) {
  const json manifest = json::parse(read_file(prefix + ".json"));
  if (manifest.at("version").get<int>() != 1) {
    throw CheckpointError("unsupported checkpoint version");
  }
  CheckpointMeta meta;
  meta.step = manifest.at("step").get<std::uint64_t>();
  meta.config = manifest.at("config").get<std::map<std::string, std::string>>();
  return meta;
}

CheckpointMeta load_checkpoint(Model& model, const std::string& prefix) {
  const json manifest = json::parse(read_file(prefix + ".json"));
  if (manifest.at("version").get<int>() != 1) {
    throw CheckpointError("unsupported checkpoint version");
  }
  const std::string blob = read_file(prefix + ".bin");

  std::map<std::string, const json*> by_name;
  for (const auto& rec : manifest.at("tensors")) {
    by_name[rec.at("name").get<std::string>()] = &rec;
  }
  std::size_t visited = 0;
  model.for_each_param([&](const std::string& name, Tensor& t, bool) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint is missing tensor '" + name + "'");
    }
    const json& rec = *it->second;
    if (rec.at("shape").get<Shape>() != t.shape()) {
      throw CheckpointError("checkpoint shape mismatch for '" + name + "'");
    }
    const std::size_t offset = rec.at("offset").get<std::size_t>();
    if (offset + t.size() * 8 > blob.size()) {
      throw CheckpointError("checkpoint blob too small for '" + name + "'");
    }
    auto& data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f64(blob, offset + 8 * i);
    ++visited;
  });
  if (visited != by_name.size()) {
    throw CheckpointError("checkpoint holds tensors the model does not have");
  }
  CheckpointMeta meta;
  meta.step = manifest.at("step").get<std::uint64_t>();
  meta.config = manifest.at("config").get<std::map<std::string, std::string>>();
  return meta;
}

}  // namespace pseg
