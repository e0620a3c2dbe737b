#include "igan/models/classifier.hpp"

#include "igan/io.hpp"

#include <optional>

namespace igan::models {

using nlohmann::json;

namespace {

std::string type_name(LayerType t) {
  switch (t) {
    case LayerType::conv: return "conv";
    case LayerType::pool: return "pool";
    case LayerType::fc: return "fc";
  }
  return "?";
}

LayerType parse_type(const std::string& s) {
  if (s == "conv") return LayerType::conv;
  if (s == "pool") return LayerType::pool;
  if (s == "fc") return LayerType::fc;
  throw std::invalid_argument("unknown layer type: " + s);
}

PoolKind parse_pool(const std::string& s) {
  if (s == "max") return PoolKind::max;
  if (s == "avg") return PoolKind::avg;
  throw std::invalid_argument("unknown pooling kind: " + s);
}

constexpr char kMagic[9] = "IGANCKPT";

}  // namespace

std::vector<std::string> ArchitectureSpec::tap_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers)
    if (!l.tap.empty()) out.push_back(l.tap);
  return out;
}

std::vector<std::string> ArchitectureSpec::pool_site_names() const {
  std::vector<std::string> out;
  int k = 0;
  for (const auto& l : layers)
    if (l.type == LayerType::pool) out.push_back("Pool" + std::to_string(++k));
  return out;
}

ArchitectureSpec ArchitectureSpec::with_pooling(PoolKind kind) const {
  ArchitectureSpec out = *this;
  for (auto& l : out.layers)
    if (l.type == LayerType::pool) l.pool = kind;
  return out;
}

PoolKind ArchitectureSpec::pooling() const {
  std::optional<PoolKind> kind;
  for (const auto& l : layers) {
    if (l.type != LayerType::pool) continue;
    if (kind && *kind != l.pool) throw std::invalid_argument(name + ": mixed pooling kinds");
    kind = l.pool;
  }
  if (!kind) throw std::invalid_argument(name + ": no pooling sites");
  return *kind;
}

json ArchitectureSpec::to_json() const {
  json ls = json::array();
  for (const auto& l : layers) {
    json j{{"type", type_name(l.type)}};
    switch (l.type) {
      case LayerType::conv:
        j["kernel"] = l.kernel;
        j["channels"] = l.channels;
        j["activation"] = l.relu ? "relu" : "none";
        break;
      case LayerType::pool:
        j["pool"] = nn::to_string(l.pool);
        j["window"] = 2;
        j["stride"] = 2;
        break;
      case LayerType::fc:
        j["width"] = l.width;
        j["activation"] = l.relu ? "relu" : "none";
        break;
    }
    if (!l.tap.empty()) j["tap"] = l.tap;
    ls.push_back(std::move(j));
  }
  return json{{"name", name},
              {"input", {input.channels, input.height, input.width}},
              {"label_count", label_count},
              {"layers", std::move(ls)}};
}

ArchitectureSpec ArchitectureSpec::from_json(const json& j) {
  ArchitectureSpec s;
  s.name = j.at("name").get<std::string>();
  const auto& in = j.at("input");
  s.input = Shape{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
  s.label_count = j.at("label_count").get<int>();
  for (const auto& lj : j.at("layers")) {
    LayerDescriptor d;
    d.type = parse_type(lj.at("type").get<std::string>());
    if (d.type == LayerType::conv) {
      d.kernel = lj.at("kernel").get<int>();
      d.channels = lj.at("channels").get<int>();
      d.relu = lj.value("activation", "relu") == "relu";
    } else if (d.type == LayerType::pool) {
      d.pool = parse_pool(lj.at("pool").get<std::string>());
      if (lj.value("window", 2) != 2 || lj.value("stride", 2) != 2)
        throw std::invalid_argument("only 2x2/2 pooling is supported");
    } else {
      d.width = lj.at("width").get<int>();
      d.relu = lj.value("activation", "relu") == "relu";
    }
    d.tap = lj.value("tap", "");
    s.layers.push_back(d);
  }
  return s;
}

std::string ArchitectureSpec::hash() const { return hex64(fnv1a(to_json().dump())); }

ArchitectureSpec ArchitectureSpec::mnist(PoolKind pool) {
  ArchitectureSpec s;
  s.name = "mnist-smallcnn";
  s.input = Shape{1, 32, 32};
  s.label_count = 10;
  auto conv = [](int ch, std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::conv;
    d.kernel = 3;
    d.channels = ch;
    d.tap = std::move(tap);
    return d;
  };
  auto pooling = [pool](std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::pool;
    d.pool = pool;
    d.tap = std::move(tap);
    return d;
  };
  auto fc = [](int w, bool relu, std::string tap) {
    LayerDescriptor d;
    d.type = LayerType::fc;
    d.width = w;
    d.relu = relu;
    d.tap = std::move(tap);
    return d;
  };
  s.layers = {conv(32, "Conv1"), conv(32, ""),      pooling("Conv2"), conv(64, "Conv3"),
              conv(64, ""),      pooling("Conv4"),  fc(200, true, "FC1"),
              fc(200, true, "FC2"), fc(10, false, "FC3")};
  return s;
}

void save_checkpoint(const Classifier<float>& model, const std::filesystem::path& path) {
  const auto& spec = model.spec();
  const json header{{"spec", spec.to_json()}, {"spec_hash", spec.hash()}};
  io::BinaryWriter w;
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  const auto params = model.network().parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    w.str("p" + std::to_string(i) + "." + p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    w.f32({p->value.data(), static_cast<std::size_t>(p->value.size())});
  }
  w.commit(path);
}

namespace {

ArchitectureSpec read_header(io::BinaryReader& r) {
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw io::VersionError("checkpoint " + r.path().string() + " has version " +
                           std::to_string(version) + ", expected " +
                           std::to_string(kCheckpointVersion));
  const auto off = r.offset();
  json header;
  try {
    header = json::parse(r.str());
  } catch (const json::parse_error& e) {
    throw io::CorruptFileError(r.path(), off, std::string("header: ") + e.what());
  }
  auto spec = ArchitectureSpec::from_json(header.at("spec"));
  const auto stored = header.at("spec_hash").get<std::string>();
  if (stored != spec.hash())
    throw SpecMismatchError("checkpoint " + r.path().string() + ": stored spec hash " + stored +
                            " does not match its spec (" + spec.hash() + "); file was tampered with");
  return spec;
}

void read_params(io::BinaryReader& r, Classifier<float>& model) {
  auto params = model.network().parameters();
  const auto count = r.u32();
  if (count != params.size()) r.fail("parameter count mismatch");
  for (auto* p : params) {
    r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows != p->value.rows() || cols != p->value.cols()) r.fail("parameter shape mismatch");
    r.f32({p->value.data(), static_cast<std::size_t>(p->value.size())});
  }
  if (!r.at_end()) r.fail("trailing bytes");
}

}  // namespace

void load_checkpoint(Classifier<float>& model, const std::filesystem::path& path) {
  io::BinaryReader r(path);
  const auto spec = read_header(r);
  if (!(spec == model.spec()))
    throw SpecMismatchError("checkpoint " + path.string() + " holds spec " + spec.name + " [" +
                            spec.hash() + "] but the model expects " + model.spec().name + " [" +
                            model.spec().hash() + "]");
  read_params(r, model);
}

Classifier<float> load_classifier(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  Classifier<float> model(read_header(r), 0);
  read_params(r, model);
  return model;
}

ArchitectureSpec read_checkpoint_spec(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  return read_header(r);
}

}  // namespace igan::models
