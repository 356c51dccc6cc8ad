#include "mumoe/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "mumoe/init.hpp"

namespace mumoe {

namespace {

constexpr char kMagic[4] = {'M', 'U', 'M', 'O'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(std::uint8_t(v >> (8 * k)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) throw FormatError(std::string("checkpoint length mismatch: truncated ") + what);
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) v |= U(buf[pos + k]) << (8 * k);
    pos += sizeof(U);
    return v;
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

// Metadata doubles travel as four 16-bit words, exact in f32 and f64.
void push_word_encoded(std::vector<double>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 3; k >= 0; --k) out.push_back(double((bits >> (16 * k)) & 0xffff));
}

std::vector<double> word_decode(const CheckpointArray& a) {
  if (a.values.size() % 4 != 0) throw FormatError(a.name + ": malformed metadata");
  std::vector<double> out;
  for (std::size_t k = 0; k < a.values.size(); k += 4) {
    std::uint64_t bits = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double w = a.values[k + j];
      if (!(w >= 0.0 && w <= 65535.0) || w != std::floor(w)) throw FormatError(a.name + ": malformed metadata");
      bits = (bits << 16) | std::uint64_t(w);
    }
    out.push_back(std::bit_cast<double>(bits));
  }
  return out;
}

CheckpointArray meta_array(std::string name, const std::vector<double>& values) {
  CheckpointArray a;
  a.name = std::move(name);
  for (double v : values) push_word_encoded(a.values, v);
  a.shape = {a.values.size()};
  return a;
}

template <typename T>
CheckpointArray tensor_array(std::string name, const Tensor<T>& t) {
  return {std::move(name), t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

std::vector<double> encode_layer_config(const LayerConfig& c) {
  std::vector<double> v{double(c.kind),          double(c.input_dim),   double(c.output_dim),
                        double(c.bias),          double(c.gate_activation), double(c.gate_norm),
                        double(c.gated),         c.norm_momentum,       c.norm_eps,
                        double(c.cp_rank),       double(c.levels())};
  for (auto n : c.experts) v.push_back(double(n));
  v.push_back(double(c.tr_ranks.size()));
  for (auto r : c.tr_ranks) v.push_back(double(r));
  return v;
}

LayerConfig decode_layer_config(const std::vector<double>& v, const std::string& name) {
  auto at = [&](std::size_t k) {
    if (k >= v.size()) throw FormatError(name + ": truncated layer config");
    return v[k];
  };
  auto count = [&](std::size_t k) {
    const double x = at(k);
    if (!(x >= 0.0 && x < 1e15) || x != std::floor(x)) throw FormatError(name + ": bad integer field");
    return std::size_t(x);
  };
  LayerConfig c;
  const std::size_t kind = count(0), act = count(4), norm = count(5);
  if (kind > 2 || act > 1 || norm > 2) throw FormatError(name + ": unknown enum value");
  c.kind = LayerKind(kind);
  c.input_dim = count(1);
  c.output_dim = count(2);
  c.bias = count(3) != 0;
  c.gate_activation = GateActivation(act);
  c.gate_norm = NormKind(norm);
  c.gated = count(6) != 0;
  c.norm_momentum = at(7);
  c.norm_eps = at(8);
  c.cp_rank = count(9);
  const std::size_t levels = count(10);
  c.experts.clear();
  for (std::size_t e = 0; e < levels; ++e) c.experts.push_back(count(11 + e));
  const std::size_t n_tr = count(11 + levels);
  for (std::size_t k = 0; k < n_tr; ++k) c.tr_ranks.push_back(count(12 + levels + k));
  if (v.size() != 12 + levels + n_tr) throw FormatError(name + ": trailing layer config fields");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(name + ": " + e.what());
  }
  return c;
}

template <typename T>
void add_layer(CheckpointFile& f, const MoeLayer<T>& layer, const std::string& prefix) {
  f.arrays.push_back(meta_array(prefix + "config", encode_layer_config(layer.config)));
  for (std::size_t e = 0; e < layer.expert_masks.size(); ++e) {
    const auto& m = layer.expert_masks[e];
    if (m.empty()) continue;
    f.arrays.push_back({prefix + "mask" + std::to_string(e + 1), {m.size()}, std::vector<double>(m.begin(), m.end())});
  }
  for (const auto& p : layer.parameters()) f.arrays.push_back(tensor_array(prefix + p.name, *p.tensor));
  for (std::size_t e = 0; e < layer.gates.size(); ++e) {
    const auto& n = layer.gates[e].norm;
    if (n.kind != NormKind::batch) continue;
    const std::string g = prefix + "gate" + std::to_string(e + 1) + ".";
    f.arrays.push_back(tensor_array(g + "running_mean", n.running_mean));
    f.arrays.push_back(tensor_array(g + "running_var", n.running_var));
  }
}

class Consumer {
 public:
  explicit Consumer(const CheckpointFile& f) : file(f) {}

  const CheckpointArray& take(const std::string& name) {
    const CheckpointArray* a = file.find(name);
    if (!a) throw FormatError("checkpoint is missing array " + name);
    used.insert(name);
    return *a;
  }
  bool has(const std::string& name) const { return file.find(name) != nullptr; }

  template <typename T>
  void into(const std::string& name, Tensor<T>& t) {
    const auto& a = take(name);
    if (a.shape != t.shape())
      throw FormatError(name + " has shape " + shape_string(a.shape) + ", expected " + shape_string(t.shape()));
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<T>(a.values[k]);
  }

  void finish() const {
    for (const auto& a : file.arrays)
      if (!used.count(a.name)) throw FormatError("unexpected checkpoint array " + a.name);
  }

  const CheckpointFile& file;
  std::set<std::string> used;
};

template <typename T>
MoeLayer<T> read_layer(Consumer& in, const std::string& prefix) {
  const std::string cname = prefix + "config";
  const LayerConfig cfg = decode_layer_config(word_decode(in.take(cname)), cname);
  MoeLayer<T> layer = init_layer<T>(cfg, InitConfig{});
  for (std::size_t e = 0; e < cfg.levels(); ++e) {
    const std::string mname = prefix + "mask" + std::to_string(e + 1);
    if (!in.has(mname)) continue;
    if (layer.expert_masks.empty()) layer.expert_masks.assign(cfg.levels(), {});
    const auto& a = in.take(mname);
    if (a.shape != Shape{cfg.experts[e]}) throw FormatError(mname + " has the wrong length");
    for (double v : a.values) {
      if (v != 0.0 && v != 1.0) throw FormatError(mname + " must hold 0/1 entries");
      layer.expert_masks[e].push_back(std::uint8_t(v));
    }
  }
  for (auto& p : layer.parameters()) in.into(prefix + p.name, *p.tensor);
  for (std::size_t e = 0; e < layer.gates.size(); ++e) {
    auto& n = layer.gates[e].norm;
    if (n.kind != NormKind::batch) continue;
    const std::string g = prefix + "gate" + std::to_string(e + 1) + ".";
    in.into(g + "running_mean", n.running_mean);
    in.into(g + "running_var", n.running_var);
  }
  return layer;
}

}  // namespace

const CheckpointArray* CheckpointFile::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint8_t>(std::uint8_t(file.dtype));
  w.le<std::uint32_t>(std::uint32_t(file.arrays.size()));
  std::set<std::string> names;
  for (const auto& a : file.arrays) {
    if (!names.insert(a.name).second) throw FormatError("duplicate checkpoint array " + a.name);
    if (a.name.size() > 0xffff) throw FormatError("array name too long");
    if (a.shape.empty() || a.shape.size() > 255) throw FormatError(a.name + ": unsupported order");
    if (shape_volume(a.shape) != a.values.size()) throw FormatError(a.name + ": data length differs from shape");
    w.le<std::uint16_t>(std::uint16_t(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.le<std::uint8_t>(std::uint8_t(a.shape.size()));
    for (auto e : a.shape) w.le<std::uint64_t>(e);
    for (double v : a.values) {
      if (file.dtype == DType::f32) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(float(v)));
      else w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
    }
  }
  return std::move(w.out);
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  r.pos = 4;
  const auto version = r.le<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto dtype = r.le<std::uint8_t>("dtype");
  if (dtype > 1) throw FormatError("unsupported checkpoint dtype " + std::to_string(dtype));
  CheckpointFile file;
  file.dtype = DType(dtype);
  const std::size_t scalar = file.dtype == DType::f32 ? 4 : 8;
  const auto count = r.le<std::uint32_t>("array count");
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointArray a;
    const auto len = r.le<std::uint16_t>("name length");
    r.need(len, "name");
    a.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
    r.pos += len;
    if (!names.insert(a.name).second) throw FormatError("duplicate checkpoint array " + a.name);
    const auto order = r.le<std::uint8_t>("order");
    if (order == 0) throw FormatError(a.name + ": order 0 array");
    std::size_t volume = 1;
    for (std::uint8_t d = 0; d < order; ++d) {
      const auto e = r.le<std::uint64_t>("extent");
      if (e == 0) throw FormatError(a.name + ": zero extent");
      if (volume > (bytes.size() / scalar) / e + 1) throw FormatError("checkpoint length mismatch: " + a.name);
      volume *= e;
      a.shape.push_back(e);
    }
    r.need(volume * scalar, "array data");
    a.values.resize(volume);
    for (std::size_t i = 0; i < volume; ++i) {
      if (file.dtype == DType::f32) a.values[i] = std::bit_cast<float>(r.le<std::uint32_t>("scalar"));
      else a.values[i] = std::bit_cast<double>(r.le<std::uint64_t>("scalar"));
    }
    file.arrays.push_back(std::move(a));
  }
  if (r.pos != bytes.size()) throw FormatError("checkpoint length mismatch: trailing bytes");
  return file;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  const auto bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

template <typename T>
CheckpointFile model_to_checkpoint(const Model<T>& model, const OptimState<T>* optim) {
  model.validate();
  CheckpointFile f;
  f.dtype = dtype_of<T>();
  f.arrays.push_back(meta_array("model.meta", {1.0, double(model.hidden), double(model.is_block())}));
  add_layer(f, model.first, "layer1.");
  if (model.second) add_layer(f, *model.second, "layer2.");
  if (optim && !optim->slot1.empty()) {
    const auto& c = optim->config;
    f.arrays.push_back(meta_array(
        "optim.state", {double(c.kind), c.lr, c.momentum, c.beta1, c.beta2, c.eps, double(optim->step)}));
    const auto params = model.parameters();
    if (optim->slot1.size() != params.size()) throw UsageError("optimizer state does not match the model");
    for (std::size_t k = 0; k < params.size(); ++k) {
      f.arrays.push_back(tensor_array("optim.slot1." + params[k].name, optim->slot1[k]));
      if (c.kind == OptimKind::adam) f.arrays.push_back(tensor_array("optim.slot2." + params[k].name, optim->slot2[k]));
    }
  }
  return f;
}

template <typename T>
Model<T> model_from_checkpoint(const CheckpointFile& file, OptimState<T>* optim) {
  if (file.dtype != dtype_of<T>()) throw FormatError("checkpoint dtype differs from the requested precision");
  Consumer in(file);
  const auto meta = word_decode(in.take("model.meta"));
  if (meta.size() != 3 || meta[0] != 1.0) throw FormatError("unsupported model.meta");
  if (meta[1] != 0.0 && meta[1] != 1.0 && meta[1] != 2.0) throw FormatError("unknown hidden activation");
  Model<T> model;
  model.hidden = Pointwise(int(meta[1]));
  model.first = read_layer<T>(in, "layer1.");
  if (meta[2] != 0.0) model.second = read_layer<T>(in, "layer2.");
  try {
    model.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
  }

  if (in.has("optim.state")) {
    const auto s = word_decode(in.take("optim.state"));
    if (s.size() != 7 || (s[0] != 0.0 && s[0] != 1.0)) throw FormatError("malformed optim.state");
    OptimState<T> st;
    st.config.kind = OptimKind(int(s[0]));
    st.config.lr = s[1];
    st.config.momentum = s[2];
    st.config.beta1 = s[3];
    st.config.beta2 = s[4];
    st.config.eps = s[5];
    st.step = std::uint64_t(s[6]);
    for (const auto& p : model.parameters()) {
      st.slot1.emplace_back(p.tensor->shape());
      in.into("optim.slot1." + p.name, st.slot1.back());
      if (st.config.kind == OptimKind::adam) {
        st.slot2.emplace_back(p.tensor->shape());
        in.into("optim.slot2." + p.name, st.slot2.back());
      }
    }
    if (optim) *optim = std::move(st);
  }
  in.finish();
  return model;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path, const OptimState<T>* optim) {
  write_checkpoint_file(path, model_to_checkpoint(model, optim));
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, OptimState<T>* optim) {
  return model_from_checkpoint<T>(read_checkpoint_file(path), optim);
}

#define MUMOE_INSTANTIATE(T)                                                                      \
  template CheckpointFile model_to_checkpoint(const Model<T>&, const OptimState<T>*);             \
  template Model<T> model_from_checkpoint(const CheckpointFile&, OptimState<T>*);                 \
  template void save_checkpoint(const Model<T>&, const std::filesystem::path&, const OptimState<T>*); \
  template Model<T> load_checkpoint(const std::filesystem::path&, OptimState<T>*);

MUMOE_INSTANTIATE(float)
MUMOE_INSTANTIATE(double)

#undef MUMOE_INSTANTIATE

}  // namespace mumoe
