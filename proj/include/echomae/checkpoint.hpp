// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Weight container: magic "EAIW", little-endian u32 version=1 and tensor
// count; per tensor a u16 name length, UTF-8 name, u8 ndim, u32 dims, then
// the float32 payload. Byte-exact round trips.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "echomae/tensor.hpp"

namespace echomae {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_checkpoint(const std::string& path, std::span<Variable* const> tensors);
std::vector<NamedTensor> load_checkpoint_file(const std::string& path);

enum class RestorePolicy {
  kExact,       // file must carry exactly the given tensor set
  kAllowExtra,  // extra file tensors are ignored (e.g. a discarded decoder)
};

// Copies checkpoint values into the variables, verifying the name schema and
// shapes; failures name every missing/extra tensor.
void restore_variables(std::span<Variable* const> variables,
                       const std::vector<NamedTensor>& tensors, RestorePolicy policy);

}  // namespace echomae
