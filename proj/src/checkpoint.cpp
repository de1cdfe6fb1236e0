#include "qfc/checkpoint.hpp"

#include "qfc/fileio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace qfc {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

std::string blob_name(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == '/' || c == '\\') c = '_';
  }
  return out + ".bin";
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const Json& architecture,
                     const Json& metadata, const ParameterList& params) {
  std::filesystem::create_directories(dir);
  Json manifest;
  manifest["format"] = "qfc-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = kind;
  manifest["architecture"] = architecture;
  manifest["metadata"] = metadata;
  Json list = Json::array();
  for (const NamedParameter& p : params) {
    const std::string file = blob_name(p.name);
    const auto& v = p.tensor.values();
    std::string bytes(v.size() * sizeof(double), '\0');
    if (!v.empty()) std::memcpy(bytes.data(), v.data(), bytes.size());
    atomic_write(dir / file, bytes);
    list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"file", file}});
  }
  manifest["tensors"] = list;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  Checkpoint ck;
  try {
    const Json m = Json::parse(read_text(path));
    if (m.value("format", "") != "qfc-checkpoint") throw CheckpointError("not a checkpoint: " + path.string());
    ck.kind = m.at("kind").get<std::string>();
    ck.architecture = m.at("architecture");
    ck.metadata = m.at("metadata");
    for (const Json& t : m.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      const auto file = dir / t.at("file").get<std::string>();
      std::ifstream in(file, std::ios::binary);
      if (!in) throw CheckpointError("checkpoint blob missing: " + file.string());
      std::vector<double> values(shape_size(shape));
      in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(double)) || in.peek() != EOF) {
        throw CheckpointError("checkpoint blob has the wrong size: " + file.string());
      }
      ck.tensors.emplace(name, Tensor::from(shape, std::move(values)));
    }
  } catch (const Json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  return ck;
}

void assign_parameters(const Checkpoint& ckpt, ParameterList& params) {
  for (NamedParameter& p : params) {
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second.shape() != p.tensor.shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " + shape_string(it->second.shape()) +
                            " in the checkpoint, expected " + shape_string(p.tensor.shape()));
    }
    p.tensor.mutable_values() = it->second.values();
  }
  if (ckpt.tensors.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
}

}  // namespace qfc
