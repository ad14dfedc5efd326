#include "lanebev/checkpoint.hpp"

#include "lanebev/binary_io.hpp"
#include "lanebev/config.hpp"
#include "lanebev/errors.hpp"

namespace lanebev {

namespace {

constexpr char kMagic[4] = {'L', 'B', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  binio::Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.str(model_to_text(net.config()));
  const ParameterSet& params = net.parameters();
  w.u32(static_cast<std::uint32_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    const Tensor& t = params.value(i);
    w.str(params.name(i));
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  binio::write_file(path.string(), w.bytes());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingCheckpoint("checkpoint not found: " + path.string());
  binio::Reader r(binio::read_file(path.string()));
  char magic[4];
  r.raw(magic, 4);
  if (std::string(magic, 4) != std::string(kMagic, 4)) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.model = model_from_text(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad model config in checkpoint: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    std::vector<int> shape(rank);
    for (int& d : shape) d = static_cast<int>(r.u32());
    nt.value = Tensor(shape);
    for (double& v : nt.value.values()) v = r.f64();
    ckpt.tensors.push_back(std::move(nt));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in checkpoint");
  return ckpt;
}

void load_into(Network& net, const Checkpoint& ckpt) {
  const ModelConfig& want = net.config();
  if (!(ckpt.model == want)) {
    throw DimensionMismatch("checkpoint model does not match the configured model (checkpoint D=" +
                            std::to_string(ckpt.model.dims.depth_bins) + ", C=" +
                            std::to_string(ckpt.model.dims.channels) + "; config D=" +
                            std::to_string(want.dims.depth_bins) + ", C=" +
                            std::to_string(want.dims.channels) + ")");
  }
  ParameterSet& params = net.parameters();
  if (static_cast<int>(ckpt.tensors.size()) != params.count()) {
    throw DimensionMismatch("checkpoint tensor count differs from the model");
  }
  for (const NamedTensor& nt : ckpt.tensors) {
    const auto id = params.find(nt.name);
    if (!id) throw DimensionMismatch("checkpoint tensor '" + nt.name + "' is not a model parameter");
    if (!params.value(*id).same_shape(nt.value)) {
      throw DimensionMismatch("tensor '" + nt.name + "' has shape " + shape_string(nt.value.shape()) +
                              ", model expects " + shape_string(params.value(*id).shape()));
    }
    params.value(*id) = nt.value;
  }
}

void load_into(Network& net, const std::filesystem::path& path) { load_into(net, read_checkpoint(path)); }

Network load_network(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Network net(ckpt.model);
  load_into(net, ckpt);
  return net;
}

}  // namespace lanebev
