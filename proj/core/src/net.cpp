#include "neurohybrid/net.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "neurohybrid/errors.hpp"

namespace neurohybrid {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'N', 'H', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

template <typename T>
uint8_t dtype_code();
template <>
uint8_t dtype_code<float>() {
  return 1;
}
template <>
uint8_t dtype_code<double>() {
  return 2;
}

ordered_json arch_to_json(const ArchitectureConfig& cfg) {
  ordered_json j;
  j["branches"] = ordered_json::array();
  for (int r = 0; r < kRegionCount; ++r) {
    const auto& b = cfg.branches[static_cast<size_t>(r)];
    ordered_json jb;
    jb["name"] = region_name(static_cast<Region>(r));
    jb["channels"] = b.channels;
    jb["crop"] = {b.crop.d, b.crop.h, b.crop.w};
    j["branches"].push_back(jb);
  }
  j["filters"] = cfg.filters;
  j["kernel"] = cfg.kernel;
  j["pool_window"] = cfg.pool_window;
  j["pool_stride"] = cfg.pool_stride;
  j["dense_width"] = cfg.dense_width;
  j["dropout_rate"] = cfg.dropout_rate;
  j["use_mri"] = cfg.use_mri;
  j["use_mask"] = cfg.use_mask;
  return j;
}

ArchitectureConfig arch_from_json(const ordered_json& j) {
  ArchitectureConfig cfg;
  const auto& branches = j.at("branches");
  if (!branches.is_array() || branches.size() != kRegionCount)
    throw FormatError("checkpoint: architecture must describe exactly 3 branches");
  for (int r = 0; r < kRegionCount; ++r) {
    const auto& jb = branches.at(static_cast<size_t>(r));
    if (jb.at("name").get<std::string>() != region_name(static_cast<Region>(r)))
      throw FormatError("checkpoint: branch " + std::to_string(r) + " is not named " +
                        region_name(static_cast<Region>(r)));
    auto& b = cfg.branches[static_cast<size_t>(r)];
    b.channels = jb.at("channels").get<int64_t>();
    const auto& crop = jb.at("crop");
    b.crop = Dims3{crop.at(0).get<int64_t>(), crop.at(1).get<int64_t>(), crop.at(2).get<int64_t>()};
  }
  const auto& f = j.at("filters");
  for (int i = 0; i < 3; ++i) cfg.filters[static_cast<size_t>(i)] = f.at(static_cast<size_t>(i)).get<int64_t>();
  cfg.kernel = j.at("kernel").get<int64_t>();
  cfg.pool_window = j.at("pool_window").get<int64_t>();
  cfg.pool_stride = j.at("pool_stride").get<int64_t>();
  cfg.dense_width = j.at("dense_width").get<int64_t>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.use_mri = j.at("use_mri").get<bool>();
  cfg.use_mask = j.at("use_mask").get<bool>();
  return cfg;
}

void write_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_pod(std::ofstream& out, U v) {
  write_bytes(out, &v, sizeof(v));
}

void read_bytes(std::ifstream& in, void* p, size_t n, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw FormatError("checkpoint: " + path.string() + ": truncated file");
}

template <typename U>
U read_pod(std::ifstream& in, const std::filesystem::path& path) {
  U v;
  read_bytes(in, &v, sizeof(v), path);
  return v;
}

ordered_json read_header_json(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  read_bytes(in, magic, 4, path);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("checkpoint: " + path.string() + ": bad magic, not a model checkpoint");
  const auto version = read_pod<uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: " + path.string() + ": unsupported format version " +
                      std::to_string(version));
  const auto json_len = read_pod<uint64_t>(in, path);
  if (json_len > (1u << 20))
    throw FormatError("checkpoint: " + path.string() + ": implausible config block size");
  std::string text(json_len, '\0');
  read_bytes(in, text.data(), json_len, path);
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw FormatError("checkpoint: " + path.string() + ": config block is not valid JSON");
  return j;
}

}  // namespace

void ArchitectureConfig::validate() const {
  if (!use_mri && !use_mask)
    throw std::invalid_argument("architecture: at least one of use_mri/use_mask must be set");
  if (dense_width < 1) throw std::invalid_argument("architecture: dense width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw std::invalid_argument("architecture: dropout rate must be in [0,1)");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("architecture: kernel size must be odd so convolutions preserve extent");
  if (pool_window < 1 || pool_stride < 1)
    throw std::invalid_argument("architecture: pool window and stride must be positive");
  for (const int64_t f : filters)
    if (f < 1) throw std::invalid_argument("architecture: filter counts must be positive");
  for (int r = 0; r < kRegionCount; ++r) {
    const auto& b = branches[static_cast<size_t>(r)];
    const char* name = region_name(static_cast<Region>(r));
    if (b.channels != channels_per_branch())
      throw std::invalid_argument(std::string("architecture: ") + name + " channel count " +
                                  std::to_string(b.channels) + " does not match the modality flags (" +
                                  std::to_string(channels_per_branch()) + ")");
    int64_t dims[3] = {b.crop.d, b.crop.h, b.crop.w};
    for (int block = 0; block < 3; ++block)
      for (auto& d : dims) {
        if (d < pool_window || (d - pool_window) % pool_stride != 0)
          throw std::invalid_argument(std::string("architecture: ") + name + " crop " +
                                      std::to_string(b.crop.d) + " does not pool evenly through block " +
                                      std::to_string(block + 1));
        d = (d - pool_window) / pool_stride + 1;
      }
  }
}

ArchitectureConfig ArchitectureConfig::defaults() {
  ArchitectureConfig cfg;
  cfg.branches[static_cast<size_t>(Region::Brainstem)] = {5, {24, 24, 24}};
  cfg.branches[static_cast<size_t>(Region::Ventricles)] = {5, {32, 32, 32}};
  cfg.branches[static_cast<size_t>(Region::Striatum)] = {5, {24, 24, 24}};
  return cfg;
}

template <typename T>
Model<T> Model<T>::build(const ArchitectureConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  m.seed = seed;
  Rng rng(derive_seed(seed, "model-init"));

  const auto uniform_fill = [&](Tensor<T>& t, int64_t fan_in) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  };

  for (int r = 0; r < kRegionCount; ++r) {
    int64_t in_ch = cfg.branches[static_cast<size_t>(r)].channels;
    for (int b = 0; b < 3; ++b) {
      auto& blk = m.blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      const int64_t f = cfg.filters[static_cast<size_t>(b)];
      blk.kernel = Tensor<T>(Shape{f, in_ch, cfg.kernel, cfg.kernel, cfg.kernel});
      uniform_fill(blk.kernel, in_ch * cfg.kernel * cfg.kernel * cfg.kernel);
      blk.bias = Tensor<T>(Shape{f}, T(0));
      blk.gamma = Tensor<T>(Shape{f}, T(1));
      blk.beta = Tensor<T>(Shape{f}, T(0));
      blk.bn = BatchNormState<T>::init(f);
      in_ch = f;
    }
  }
  m.fc1_weight = Tensor<T>(Shape{cfg.concat_width(), cfg.dense_width});
  uniform_fill(m.fc1_weight, cfg.concat_width());
  m.fc1_bias = Tensor<T>(Shape{cfg.dense_width}, T(0));
  m.fc2_weight = Tensor<T>(Shape{cfg.dense_width, 1});
  uniform_fill(m.fc2_weight, cfg.dense_width);
  m.fc2_bias = Tensor<T>(Shape{1}, T(0));
  return m;
}

template <typename T>
ForwardResult<T> Model<T>::forward(const BranchBatch<T>& batch, Mode mode, Tape<T>* tape,
                                   Rng* dropout_rng) {
  const int64_t N = batch[0].rank() == 5 ? batch[0].extent(0) : -1;
  for (int r = 0; r < kRegionCount; ++r) {
    const auto& x = batch[static_cast<size_t>(r)];
    const auto& spec = cfg.branches[static_cast<size_t>(r)];
    const char* name = region_name(static_cast<Region>(r));
    if (x.rank() != 5)
      throw std::invalid_argument(std::string("forward: ") + name + " input must be [N,C,D,H,W], got " +
                                  shape_str(x.shape()));
    if (x.extent(0) != N)
      throw std::invalid_argument(std::string("forward: ") + name + " batch size differs between branches");
    if (x.extent(1) != spec.channels || x.extent(2) != spec.crop.d || x.extent(3) != spec.crop.h ||
        x.extent(4) != spec.crop.w)
      throw std::invalid_argument(std::string("forward: ") + name + " input " + shape_str(x.shape()) +
                                  " does not match the configured branch shape");
  }
  if (mode == Mode::Train && cfg.dropout_rate > 0.0 && dropout_rng == nullptr)
    throw std::invalid_argument("forward: train mode with dropout needs a dropout generator");

  ForwardResult<T> out;
  const Dims3 stride1{1, 1, 1};
  const Dims3 pad{cfg.kernel / 2, cfg.kernel / 2, cfg.kernel / 2};
  const Dims3 pool{cfg.pool_window, cfg.pool_window, cfg.pool_window};
  const Dims3 pstride{cfg.pool_stride, cfg.pool_stride, cfg.pool_stride};

  std::vector<Tensor<T>> pooled;
  for (int r = 0; r < kRegionCount; ++r) {
    Tensor<T> x = batch[static_cast<size_t>(r)];
    for (int b = 0; b < 3; ++b) {
      auto& blk = blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      x = conv3d(x, blk.kernel, blk.bias, stride1, pad, tape);
      x = batchnorm3d(x, blk.gamma, blk.beta, blk.bn, mode, static_cast<T>(kBnEps),
                      static_cast<T>(kBnMomentum), tape);
      x = relu(x, tape);
      if (b == 2) out.branch_activations[static_cast<size_t>(r)] = x;
      x = maxpool3d(x, pool, pstride, tape);
    }
    pooled.push_back(global_avg_pool(x, tape));
  }

  Tensor<T> cat = concat(pooled, 1, tape);
  Tensor<T> h = dense(cat, fc1_weight, fc1_bias, tape);
  h = relu(h, tape);
  out.features = h;
  if (mode == Mode::Train && cfg.dropout_rate > 0.0)
    h = dropout(h, cfg.dropout_rate, mode, *dropout_rng, tape);
  out.logits = dense(h, fc2_weight, fc2_bias, tape);
  out.probabilities = sigmoid(out.logits, tape);
  return out;
}

template <typename T>
Tensor<T> Model<T>::extract_features(const BranchBatch<T>& batch) {
  return forward(batch, Mode::Infer).features;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (int r = 0; r < kRegionCount; ++r) {
    const std::string base = region_name(static_cast<Region>(r));
    for (int b = 0; b < 3; ++b) {
      auto& blk = blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      const std::string pre = base + ".block" + std::to_string(b + 1);
      out.push_back({pre + ".conv.kernel", blk.kernel});
      out.push_back({pre + ".conv.bias", blk.bias});
      out.push_back({pre + ".bn.gamma", blk.gamma});
      out.push_back({pre + ".bn.beta", blk.beta});
    }
  }
  out.push_back({"head.dense1.weight", fc1_weight});
  out.push_back({"head.dense1.bias", fc1_bias});
  out.push_back({"head.dense2.weight", fc2_weight});
  out.push_back({"head.dense2.bias", fc2_bias});
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Model<T>::state_tensors() {
  std::vector<NamedTensor<T>> out;
  for (int r = 0; r < kRegionCount; ++r) {
    const std::string base = region_name(static_cast<Region>(r));
    for (int b = 0; b < 3; ++b) {
      auto& blk = blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      const std::string pre = base + ".block" + std::to_string(b + 1);
      out.push_back({pre + ".conv.kernel", blk.kernel});
      out.push_back({pre + ".conv.bias", blk.bias});
      out.push_back({pre + ".bn.gamma", blk.gamma});
      out.push_back({pre + ".bn.beta", blk.beta});
      out.push_back({pre + ".bn.running_mean", blk.bn.running_mean});
      out.push_back({pre + ".bn.running_var", blk.bn.running_var});
    }
  }
  out.push_back({"head.dense1.weight", fc1_weight});
  out.push_back({"head.dense1.bias", fc1_bias});
  out.push_back({"head.dense2.weight", fc2_weight});
  out.push_back({"head.dense2.bias", fc2_bias});
  return out;
}

template <typename T>
void Model<T>::set_requires_grad(bool b) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(b);
}

template <typename T>
Model<T> Model<T>::deep_copy() const {
  Model<T> copy = *this;  // shares tensor storage until the clones below
  auto& self = const_cast<Model<T>&>(*this);
  for (int r = 0; r < kRegionCount; ++r)
    for (int b = 0; b < 3; ++b) {
      auto& sblk = self.blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      auto& dblk = copy.blocks[static_cast<size_t>(r)][static_cast<size_t>(b)];
      dblk.kernel = sblk.kernel.clone();
      dblk.bias = sblk.bias.clone();
      dblk.gamma = sblk.gamma.clone();
      dblk.beta = sblk.beta.clone();
      dblk.bn.running_mean = sblk.bn.running_mean.clone();
      dblk.bn.running_var = sblk.bn.running_var.clone();
    }
  copy.fc1_weight = self.fc1_weight.clone();
  copy.fc1_bias = self.fc1_bias.clone();
  copy.fc2_weight = self.fc2_weight.clone();
  copy.fc2_bias = self.fc2_bias.clone();
  return copy;
}

template <typename T>
void Model<T>::copy_values_from(const Model<T>& other) {
  auto& o = const_cast<Model<T>&>(other);
  auto dst = state_tensors();
  auto src = o.state_tensors();
  if (dst.size() != src.size())
    throw std::invalid_argument("model: cannot copy values between different architectures");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape())
      throw std::invalid_argument("model: tensor " + dst[i].name + " differs between architectures");
    std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(),
              dst[i].tensor.values().begin());
  }
  epochs_run = other.epochs_run;
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  ordered_json j;
  j["format"] = "model";
  j["dtype"] = dtype_name<T>();
  j["seed"] = model.seed;
  j["epochs_run"] = model.epochs_run;
  j["architecture"] = arch_to_json(model.cfg);
  const std::string text = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  write_bytes(out, kCheckpointMagic, 4);
  write_pod(out, kCheckpointVersion);
  write_pod(out, static_cast<uint64_t>(text.size()));
  write_bytes(out, text.data(), text.size());

  auto tensors = model.state_tensors();
  write_pod(out, static_cast<uint64_t>(tensors.size()));
  for (auto& t : tensors) {
    write_pod(out, static_cast<uint32_t>(t.name.size()));
    write_bytes(out, t.name.data(), t.name.size());
    write_pod(out, dtype_code<T>());
    write_pod(out, static_cast<uint32_t>(t.tensor.rank()));
    for (const int64_t e : t.tensor.shape()) write_pod(out, static_cast<uint64_t>(e));
    write_bytes(out, t.tensor.data(), static_cast<size_t>(t.tensor.numel()) * sizeof(T));
  }
  if (!out) throw IoError("checkpoint: short write to " + path.string());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const ordered_json j = read_header_json(in, path);
  const std::string dtype = j.at("dtype").get<std::string>();
  if (dtype != dtype_name<T>())
    throw FormatError("checkpoint: " + path.string() + ": stores dtype " + dtype + ", expected " +
                      dtype_name<T>());

  Model<T> model = Model<T>::build(arch_from_json(j.at("architecture")), j.at("seed").get<uint64_t>());
  model.epochs_run = j.at("epochs_run").get<int64_t>();

  auto tensors = model.state_tensors();
  const auto count = read_pod<uint64_t>(in, path);
  if (count != tensors.size())
    throw FormatError("checkpoint: " + path.string() + ": has " + std::to_string(count) +
                      " tensors, architecture needs " + std::to_string(tensors.size()));
  for (auto& expected : tensors) {
    const auto name_len = read_pod<uint32_t>(in, path);
    if (name_len > 4096) throw FormatError("checkpoint: " + path.string() + ": implausible tensor name");
    std::string name(name_len, '\0');
    read_bytes(in, name.data(), name_len, path);
    if (name != expected.name)
      throw FormatError("checkpoint: " + path.string() + ": tensor '" + name + "' where '" +
                        expected.name + "' was expected");
    const auto code = read_pod<uint8_t>(in, path);
    if (code != dtype_code<T>())
      throw FormatError("checkpoint: " + path.string() + ": tensor " + name + " has dtype code " +
                        std::to_string(code));
    const auto rank = read_pod<uint32_t>(in, path);
    if (rank != expected.tensor.rank())
      throw FormatError("checkpoint: " + path.string() + ": tensor " + name + " rank mismatch");
    for (size_t a = 0; a < rank; ++a) {
      const auto e = read_pod<uint64_t>(in, path);
      if (e != static_cast<uint64_t>(expected.tensor.shape()[a]))
        throw FormatError("checkpoint: " + path.string() + ": tensor " + name + " extent mismatch on axis " +
                          std::to_string(a));
    }
    read_bytes(in, expected.tensor.data(), static_cast<size_t>(expected.tensor.numel()) * sizeof(T), path);
  }
  return model;
}

std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  const ordered_json j = read_header_json(in, path);
  return j.at("dtype").get<std::string>();
}

template struct Model<float>;
template struct Model<double>;
template void save_checkpoint<float>(Model<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Model<double>&, const std::filesystem::path&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace neurohybrid
