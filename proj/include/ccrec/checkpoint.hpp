#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ccrec/tensor.hpp"

namespace ccrec::nn {

// Tensor container on disk: <prefix>.json manifest listing
// {name, shape, dtype:"f32", offset, length} entries plus <prefix>.bin with
// the raw little-endian float32 payload in manifest order. offset counts
// bytes into the blob, length counts elements. Round-trips are bit-exact.
void save_tensor_container(
    const std::string& prefix,
    const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);

std::vector<std::pair<std::string, Tensor<float>>> load_tensor_container(
    const std::string& prefix);

void save_params(const std::string& prefix,
                 const std::vector<Parameter<float>*>& params);

// Loads by name; every parameter must be present with a matching shape.
void load_params(const std::string& prefix,
                 const std::vector<Parameter<float>*>& params);

}  // namespace ccrec::nn
