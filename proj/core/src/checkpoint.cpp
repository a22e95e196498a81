#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "protofuse/errors.hpp"
#include "protofuse/pipeline.hpp"

namespace protofuse {

namespace {

constexpr char kBlobMagic[4] = {'P', 'F', 'P', '1'};
constexpr int kCheckpointVersion = 1;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ofstream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& where) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("truncated checkpoint blob " + where);
  return to_little(v);
}

struct NamedTensor {
  std::string name;
  Matrix value;
};

void write_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(kBlobMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put<float>(out, static_cast<float>(t.value(r, c)));
  }
}

std::vector<NamedTensor> read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint blob " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kBlobMagic, 4) != 0) {
    throw SchemaError(path.string() + " is not a parameter blob");
  }
  const std::string where = path.string();
  const auto count = get<std::uint32_t>(in, where);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get<std::uint32_t>(in, where));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) throw LoadError("truncated " + where);
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(in, where));
    const auto cols = static_cast<Eigen::Index>(get<std::uint64_t>(in, where));
    t.value.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) t.value(r, c) = get<float>(in, where);
    out.push_back(std::move(t));
  }
  return out;
}

constexpr ParamGroup kAllGroups[] = {ParamGroup::prototyping, ParamGroup::alignment, ParamGroup::imputation,
                                     ParamGroup::fusion, ParamGroup::heads};

ParamGroup parse_group(const std::string& s) {
  for (ParamGroup g : kAllGroups)
    if (to_string(g) == s) return g;
  throw SchemaError("unknown parameter group '" + s + "' in checkpoint");
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "protofuse-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = state.config.to_map();
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(state.config.hash()));
  manifest["config_hash"] = hash;
  manifest["step"] = state.step;
  manifest["phase"] = state.phase;
  manifest["alignment_frozen"] = state.alignment_frozen;
  manifest["freeze_epoch"] = state.freeze_epoch;
  manifest["dim"] = state.dim;
  manifest["cut_points"] = state.cut_points;
  manifest["histology_category_names"] = state.histology_names;
  manifest["gene_group_names"] = state.gene_group_names;
  nlohmann::json groups = nlohmann::json::array();
  for (ParamGroup g : kAllGroups) {
    std::vector<NamedTensor> tensors;
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < state.params.size(); ++i) {
      if (state.groups[i] != g) continue;
      tensors.push_back({state.params[i].name, state.params[i].value});
      entries.push_back({{"name", state.params[i].name},
                         {"rows", state.params[i].value.rows()},
                         {"cols", state.params[i].value.cols()}});
    }
    const std::string file = "params_" + to_string(g) + ".pfp";
    write_blob(dir / file, tensors);
    groups.push_back({{"group", to_string(g)}, {"file", file}, {"tensors", entries}});
  }
  manifest["groups"] = groups;
  write_blob(dir / "state.pfp", {{"mean_fill_tokens", state.mean_fill_tokens}});
  manifest["state_file"] = "state.pfp";

  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw LoadError("cannot write " + (dir / "checkpoint.json").string());
  out << manifest.dump(2) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / "checkpoint.json";
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  nlohmann::json m;
  try {
    in >> m;
    if (m.at("format") != "protofuse-checkpoint") throw SchemaError(path.string() + " is not a checkpoint");
    if (m.at("version").get<int>() != kCheckpointVersion) {
      throw SchemaError("unsupported checkpoint version " + m.at("version").dump());
    }
    ModelState s;
    for (const auto& [k, v] : m.at("config").items()) s.config.set(k, v.get<std::string>());
    s.config.validate();
    s.step = m.at("step").get<long>();
    s.phase = m.at("phase").get<int>();
    s.alignment_frozen = m.at("alignment_frozen").get<bool>();
    s.freeze_epoch = m.at("freeze_epoch").get<int>();
    s.dim = m.at("dim").get<Eigen::Index>();
    s.cut_points = m.at("cut_points").get<std::vector<double>>();
    s.histology_names = m.at("histology_category_names").get<NameList>();
    s.gene_group_names = m.at("gene_group_names").get<NameList>();
    for (const auto& g : m.at("groups")) {
      const ParamGroup group = parse_group(g.at("group").get<std::string>());
      for (auto& t : read_blob(dir / g.at("file").get<std::string>())) s.add(t.name, group, std::move(t.value));
    }
    const auto state = read_blob(dir / m.at("state_file").get<std::string>());
    if (state.empty() || state.front().name != "mean_fill_tokens") throw SchemaError("checkpoint state blob is malformed");
    s.mean_fill_tokens = state.front().value;
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace protofuse
