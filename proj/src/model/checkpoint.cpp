#include <cstring>

#include "auxseg/core.hpp"
#include "auxseg/model.hpp"

namespace auxseg {
namespace {

torch::Tensor string_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  if (!s.empty()) std::memcpy(t.data_ptr<uint8_t>(), s.data(), s.size());
  return t;
}

std::string tensor_string(const torch::Tensor& t) {
  const auto c = t.contiguous();
  return std::string(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()),
                     static_cast<size_t>(c.numel()));
}

torch::Tensor read_key(torch::serialize::InputArchive& ar, const std::string& key) {
  torch::Tensor t;
  if (!ar.try_read(key, t)) throw CheckpointError("checkpoint is missing entry '" + key + "'");
  return t;
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive ar;
  ar.write("format_version", torch::tensor({kCheckpointVersion}, torch::kInt64));
  nlohmann::json header{{"arch", bundle->arch()},
                        {"heads", bundle->head_specs()},
                        {"seed", bundle->meta.seed},
                        {"step", bundle->meta.step}};
  ar.write("header", string_tensor(header.dump()));
  for (const auto& item : bundle->named_parameters()) {
    ar.write("param/" + item.key(), item.value().detach());
  }
  // Write to a sibling file and rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  ar.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw CheckpointError("checkpoint not found: " + path.string());
  }
  try {
    torch::serialize::InputArchive ar;
    ar.load_from(path.string());
    const auto version = read_key(ar, "format_version").item<int64_t>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint format version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(kCheckpointVersion) +
                            ")");
    }
    const auto header = nlohmann::json::parse(tensor_string(read_key(ar, "header")));
    auto model = ModelBundle(header.at("arch").get<ArchConfig>(),
                             header.at("heads").get<std::vector<HeadSpec>>(),
                             header.at("seed").get<uint64_t>());
    model->meta.step = header.at("step").get<int64_t>();
    torch::NoGradGuard no_grad;
    for (auto& item : model->named_parameters()) {
      const auto value = read_key(ar, "param/" + item.key());
      if (value.sizes() != item.value().sizes()) {
        throw CheckpointError("checkpoint parameter '" + item.key() + "' has shape " +
                              shape_string(value) + ", expected " + shape_string(item.value()));
      }
      item.value().copy_(value);
    }
    return model;
  } catch (const c10::Error&) {
    throw CheckpointError("corrupt checkpoint file " + path.string());
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError("corrupt checkpoint header in " + path.string());
  }
}

}  // namespace auxseg
