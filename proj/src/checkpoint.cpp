#include "pbl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pbl/errors.hpp"

namespace pbl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'B', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IntegrityError("checkpoint is truncated");
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 32)) throw IntegrityError("checkpoint field length is implausible");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IntegrityError("checkpoint is truncated");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::string& kind, const nlohmann::json& metadata,
                      const nn::ParameterSet& params) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, kind);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  auto list = params.list();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
  for (const auto* p : list) {
    put_string(out, p->name);
    put<std::int64_t>(out, p->value.rows());
    put<std::int64_t>(out, p->value.cols());
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!out) throw IoError("checkpoint write failed");
}

CheckpointData read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw IntegrityError("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  data.kind = get_bytes(in, get<std::uint32_t>(in));
  const std::string meta = get_bytes(in, get<std::uint64_t>(in));
  try {
    data.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_bytes(in, get<std::uint32_t>(in));
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 31)) throw IntegrityError("bad tensor shape for " + name);
    Eigen::MatrixXd m(rows, cols);
    if (m.size() && !in.read(reinterpret_cast<char*>(m.data()),
                             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size()))))
      throw IntegrityError("checkpoint is truncated in tensor " + name);
    data.tensors.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

namespace {

void save(const std::filesystem::path& path, const std::string& kind, nlohmann::json meta,
          const nn::ParameterSet& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_checkpoint(out, kind, meta, params);
}

void restore(nn::ParameterSet& params, const CheckpointData& data) {
  if (data.tensors.size() != params.list().size())
    throw IntegrityError("checkpoint holds " + std::to_string(data.tensors.size()) + " tensors, model expects " +
                         std::to_string(params.list().size()));
  for (const auto& [name, value] : data.tensors) {
    auto* p = params.find(name);
    if (!p) throw IntegrityError("checkpoint tensor " + name + " is not a model parameter");
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
      throw IntegrityError("shape mismatch for " + name);
    p->value = value;
  }
}

}  // namespace

void save_listener(const std::filesystem::path& path, const ListenerModel& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["model"] = to_json(model.config());
  meta["backbone"] = model.backbone().identifier();
  save(path, "listener", std::move(meta), model.parameters());
}

void save_baseline(const std::filesystem::path& path, const BaselineModel& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["model"] = to_json(model.config());
  save(path, "baseline", std::move(meta), model.parameters());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

ListenerModel listener_from_checkpoint(const CheckpointData& data) {
  if (data.kind != "listener") throw IntegrityError("checkpoint kind is '" + data.kind + "', not listener");
  ListenerModel model(model_config_from_json(data.metadata.at("model")));
  restore(model.parameters(), data);
  return model;
}

BaselineModel baseline_from_checkpoint(const CheckpointData& data) {
  if (data.kind != "baseline") throw IntegrityError("checkpoint kind is '" + data.kind + "', not baseline");
  BaselineModel model(baseline_config_from_json(data.metadata.at("model")));
  restore(model.parameters(), data);
  return model;
}

}  // namespace pbl
