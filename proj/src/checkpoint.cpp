#include "ccrec/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ccrec/error.hpp"
#include "json.hpp"

namespace ccrec::nn {

using nlohmann::json;

void save_tensor_container(
    const std::string& prefix,
    const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  json manifest;
  manifest["dtype"] = "f32";
  json entries = json::array();
  size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    json e;
    e["name"] = name;
    e["shape"] = t->shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["length"] = t->size();
    entries.push_back(e);
    offset += t->size() * sizeof(float);
  }
  manifest["tensors"] = entries;
  manifest["total_bytes"] = offset;

  std::ofstream mf(prefix + ".json", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";
  mf.close();

  std::ofstream bf(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot write " + prefix + ".bin");
  for (const auto& [name, t] : tensors) {
    (void)name;
    bf.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!bf) throw IoError("short write to " + prefix + ".bin");
}

std::vector<std::pair<std::string, Tensor<float>>> load_tensor_container(
    const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw IoError("cannot read " + prefix + ".json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint manifest " + prefix + ".json: " + e.what());
  }

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw IoError("cannot read " + prefix + ".bin");
  bf.seekg(0, std::ios::end);
  size_t blob_size = static_cast<size_t>(bf.tellg());

  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<size_t> shape = e.at("shape").get<std::vector<size_t>>();
    size_t offset = e.at("offset").get<size_t>();
    size_t length = e.at("length").get<size_t>();
    if (e.at("dtype").get<std::string>() != "f32")
      throw DataError("unsupported dtype in " + prefix + ".json");
    if (Tensor<float>::count(shape) != length)
      throw DataError("manifest shape/length mismatch for tensor " + name);
    if (offset + length * sizeof(float) > blob_size)
      throw DataError("manifest range exceeds blob for tensor " + name);
    Tensor<float> t(shape);
    bf.seekg(static_cast<std::streamoff>(offset));
    bf.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(length * sizeof(float)));
    if (!bf) throw IoError("short read from " + prefix + ".bin");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_params(const std::string& prefix,
                 const std::vector<Parameter<float>*>& params) {
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  tensors.reserve(params.size());
  for (auto* p : params) tensors.emplace_back(p->name, &p->value);
  save_tensor_container(prefix, tensors);
}

void load_params(const std::string& prefix,
                 const std::vector<Parameter<float>*>& params) {
  auto loaded = load_tensor_container(prefix);
  for (auto* p : params) {
    bool found = false;
    for (auto& [name, t] : loaded) {
      if (name != p->name) continue;
      if (t.shape != p->value.shape)
        throw DataError("checkpoint shape mismatch for " + name);
      p->value = std::move(t);
      found = true;
      break;
    }
    if (!found) throw DataError("checkpoint missing tensor " + p->name);
  }
}

}  // namespace ccrec::nn
