#include "cbct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cbct {

namespace {

constexpr char kMagic[8] = {'C', 'B', 'C', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("checkpoint truncated while reading " + what);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& what) {
  const auto n = get<std::uint64_t>(is, what);
  if (n > (1u << 26)) throw SchemaError("checkpoint string length for " + what + " is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated while reading " + what);
  return s;
}

void put_tensor(std::ostream& os, const std::string& name, const ad::Tensor& t) {
  put_string(os, name);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

}  // namespace

std::string config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["encoder"]["channels"] = c.encoder.channels;
  j["decoder"]["hidden_channels"] = c.decoder.hidden_channels;
  j["decoder"]["residual_blocks"] = c.decoder.residual_blocks;
  j["decoder"]["upsample_blocks"] = c.decoder.upsample_blocks;
  j["decoder"]["output_scale"] = c.decoder.output_scale;
  j["downsample"] = c.downsample;
  j["normalization"]["mean"] = c.normalization.mean;
  j["normalization"]["std"] = c.normalization.std;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.encoder.channels = j.at("encoder").at("channels").get<std::vector<int>>();
    c.decoder.hidden_channels = j.at("decoder").at("hidden_channels").get<int>();
    c.decoder.residual_blocks = j.at("decoder").at("residual_blocks").get<int>();
    c.decoder.upsample_blocks = j.at("decoder").at("upsample_blocks").get<int>();
    c.decoder.output_scale = j.at("decoder").at("output_scale").get<double>();
    c.downsample = j.at("downsample").get<int>();
    c.normalization.mean = j.at("normalization").at("mean").get<double>();
    c.normalization.std = j.at("normalization").at("std").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model configuration: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put_string(os, config_to_json(state.config));
  put<std::int64_t>(os, state.step);
  put<std::uint64_t>(os, state.params.size() * 3);
  for (const auto& p : state.params) {
    put_tensor(os, p.name, p.value);
    put_tensor(os, p.name + "@m", p.first_moment);
    put_tensor(os, p.name + "@v", p.second_moment);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic))) throw IoError("checkpoint truncated while reading magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw SchemaError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  ModelState state = ModelState::initialize(config_from_json(get_string(is, "configuration")), 0);
  state.step = get<std::int64_t>(is, "step");
  const auto count = get<std::uint64_t>(is, "tensor count");
  if (count != state.params.size() * 3)
    throw SchemaError("checkpoint holds " + std::to_string(count) + " tensors, configuration expects " +
                      std::to_string(state.params.size() * 3));
  for (std::uint64_t n = 0; n < count; ++n) {
    const std::string name = get_string(is, "tensor name");
    const auto rank = get<std::uint32_t>(is, name + " rank");
    if (rank > 8) throw SchemaError("tensor '" + name + "' has implausible rank");
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(get<std::int64_t>(is, name + " shape")));
    const auto at = name.rfind('@');
    const std::string base = at == std::string::npos ? name : name.substr(0, at);
    const std::string suffix = at == std::string::npos ? "" : name.substr(at);
    Parameter* p = nullptr;
    for (auto& q : state.params)
      if (q.name == base) p = &q;
    if (!p || (suffix != "" && suffix != "@m" && suffix != "@v"))
      throw SchemaError("unexpected tensor '" + name + "' in checkpoint");
    ad::Tensor& dst = suffix == "@m" ? p->first_moment : suffix == "@v" ? p->second_moment : p->value;
    if (shape != dst.shape)
      throw SchemaError("tensor '" + name + "' has shape " + ad::to_string(shape) + ", expected " +
                        ad::to_string(dst.shape));
    if (!is.read(reinterpret_cast<char*>(dst.data.data()), static_cast<std::streamsize>(dst.size() * sizeof(double))))
      throw IoError("checkpoint truncated while reading '" + name + "'");
  }
  return state;
}

}  // namespace cbct
