// checkpoint.hpp: named parameter tensors on disk.
//
// <dir>/manifest.json lists the model kind, architecture, metadata and every
// tensor's name, shape and blob file; each blob is the raw little-endian
// float64 values.

#pragma once

#include "qfc/serialize.hpp"
#include "qfc/tensor.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfc {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

struct Checkpoint {
  std::string kind;   // "transformer", "rnn" or "gru"
  Json architecture;
  Json metadata;      // data normalization, grid, training state
  std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const Json& architecture,
                     const Json& metadata, const ParameterList& params);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies values into `params` by name; every name must exist with the same
// shape.
void assign_parameters(const Checkpoint& ckpt, ParameterList& params);

}  // namespace qfc
