#include "neurohybrid/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "neurohybrid/errors.hpp"

namespace neurohybrid {

namespace {

template <typename T>
Shape spatial_shape(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw std::invalid_argument(std::string(what) + ": expected [K, D, H, W], got shape " +
                                shape_str(t.shape()));
  return t.shape();
}

// One separable pass: resamples `axis` (0/1/2 for d/h/w) to `target` samples.
std::vector<double> resample_axis(const std::vector<double>& src, Dims3 sdims, int axis,
                                  int64_t target, Dims3* out_dims) {
  const int64_t S = axis == 0 ? sdims.d : axis == 1 ? sdims.h : sdims.w;
  Dims3 ddims = sdims;
  (axis == 0 ? ddims.d : axis == 1 ? ddims.h : ddims.w) = target;
  std::vector<double> dst(static_cast<size_t>(ddims.volume()));
  const double scale =
      target == 1 ? 0.0 : static_cast<double>(S - 1) / static_cast<double>(target - 1);

  const auto raw = [&](int64_t d, int64_t h, int64_t w, int64_t a) {
    const int64_t dd = axis == 0 ? a : d;
    const int64_t hh = axis == 1 ? a : h;
    const int64_t ww = axis == 2 ? a : w;
    return src[static_cast<size_t>((dd * sdims.h + hh) * sdims.w + ww)];
  };
  // Boundary samples extrapolate linearly so degree-1 fields stay exact
  // right up to the volume faces.
  const auto fetch = [&](int64_t d, int64_t h, int64_t w, int64_t a) {
    if (a < 0) {
      const double e0 = raw(d, h, w, 0), e1 = raw(d, h, w, 1);
      return e0 + static_cast<double>(-a) * (e0 - e1);
    }
    if (a >= S) {
      const double e0 = raw(d, h, w, S - 1), e1 = raw(d, h, w, S - 2);
      return e0 + static_cast<double>(a - (S - 1)) * (e0 - e1);
    }
    return raw(d, h, w, a);
  };

  size_t o = 0;
  for (int64_t d = 0; d < ddims.d; ++d)
    for (int64_t h = 0; h < ddims.h; ++h)
      for (int64_t w = 0; w < ddims.w; ++w, ++o) {
        const int64_t oa = axis == 0 ? d : axis == 1 ? h : w;
        const double x = static_cast<double>(oa) * scale;
        const int64_t i = static_cast<int64_t>(std::floor(x));
        const double t = x - static_cast<double>(i);
        const double p0 = fetch(d, h, w, i - 1);
        const double p1 = fetch(d, h, w, i);
        const double p2 = fetch(d, h, w, i + 1);
        const double p3 = fetch(d, h, w, i + 2);
        // Difference form keeps grid points and constant fields bit-exact.
        const double w0 = 0.5 * (-t + 2.0 * t * t - t * t * t);
        const double w2 = 0.5 * (t + 4.0 * t * t - 3.0 * t * t * t);
        const double w3 = 0.5 * (-t * t + t * t * t);
        dst[o] = p1 + w0 * (p0 - p1) + w2 * (p2 - p1) + w3 * (p3 - p1);
      }
  *out_dims = ddims;
  return dst;
}

}  // namespace

template <typename T>
std::vector<double> neuron_weights(const Tensor<T>& grads) {
  const Shape s = spatial_shape(grads, "neuron weights");
  const int64_t k = s[0], vol = s[1] * s[2] * s[3];
  std::vector<double> alphas(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c) {
    double acc = 0.0;
    const T* p = grads.data() + c * vol;
    for (int64_t i = 0; i < vol; ++i) acc += static_cast<double>(p[i]);
    alphas[static_cast<size_t>(c)] = acc / static_cast<double>(vol);
  }
  return alphas;
}

template <typename T>
std::vector<double> cam(const std::vector<double>& alphas, const Tensor<T>& maps) {
  const Shape s = spatial_shape(maps, "cam");
  const int64_t k = s[0], vol = s[1] * s[2] * s[3];
  if (static_cast<int64_t>(alphas.size()) != k)
    throw std::invalid_argument("cam: " + std::to_string(alphas.size()) + " weights for " +
                                std::to_string(k) + " feature maps");
  std::vector<double> out(static_cast<size_t>(vol), 0.0);
  for (int64_t c = 0; c < k; ++c) {
    const T* p = maps.data() + c * vol;
    const double a = alphas[static_cast<size_t>(c)];
    for (int64_t i = 0; i < vol; ++i) out[static_cast<size_t>(i)] += a * static_cast<double>(p[i]);
  }
  for (auto& v : out) v = std::max(0.0, v);
  return out;
}

std::vector<double> upsample_tricubic(const std::vector<double>& src, Dims3 src_dims,
                                      Dims3 dst_dims) {
  if (src_dims.d < 2 || src_dims.h < 2 || src_dims.w < 2)
    throw std::invalid_argument("upsample: source extents must be >= 2, got " +
                                std::to_string(src_dims.d) + "x" + std::to_string(src_dims.h) +
                                "x" + std::to_string(src_dims.w));
  if (dst_dims.d < 1 || dst_dims.h < 1 || dst_dims.w < 1)
    throw std::invalid_argument("upsample: target extents must be >= 1");
  if (static_cast<int64_t>(src.size()) != src_dims.volume())
    throw std::invalid_argument("upsample: " + std::to_string(src.size()) + " values for a " +
                                std::to_string(src_dims.volume()) + "-voxel source");
  Dims3 dims = src_dims;
  std::vector<double> cur = resample_axis(src, dims, 2, dst_dims.w, &dims);
  cur = resample_axis(cur, dims, 1, dst_dims.h, &dims);
  cur = resample_axis(cur, dims, 0, dst_dims.d, &dims);
  for (auto& v : cur) v = std::max(0.0, v);
  return cur;
}

template <typename T>
std::array<AttentionMap, kRegionCount> subject_attention(Model<T>& model,
                                                         const BranchBatch<T>& subject,
                                                         int target_class) {
  if (target_class != 0 && target_class != 1)
    throw std::invalid_argument("attention: target class must be 0 or 1");
  for (const auto& t : subject)
    if (t.rank() != 5 || t.extent(0) != 1)
      throw std::invalid_argument("attention: expected a single-subject batch, got shape " +
                                  shape_str(t.shape()));

  model.set_requires_grad(true);
  Tape<T> tape;
  auto fwd = model.forward(subject, Mode::Infer, &tape);
  auto score = sum(fwd.logits, &tape);
  if (target_class == 0) score = scale(score, T(-1), &tape);
  tape.backward(score);

  std::array<AttentionMap, kRegionCount> out;
  for (size_t r = 0; r < kRegionCount; ++r) {
    auto& act = fwd.branch_activations[r];
    const Shape s4(act.shape().begin() + 1, act.shape().end());
    Tensor<T> grads(s4, std::vector<T>(act.grad().begin(), act.grad().end()));
    Tensor<T> maps(s4, act.values());

    AttentionMap& m = out[r];
    m.branch = region_name(static_cast<Region>(r));
    m.target_class = target_class;
    m.low_dims = Dims3{s4[1], s4[2], s4[3]};
    m.dims = model.cfg.branches[r].crop;
    m.low = cam(neuron_weights(grads), maps);
    m.values = upsample_tricubic(m.low, m.low_dims, m.dims);

    double mn = std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    for (const double v : m.values) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    m.raw_min = mn;
    m.raw_max = mx;
    if (mx > mn)
      for (auto& v : m.values) v = (v - mn) / (mx - mn);
    else
      std::fill(m.values.begin(), m.values.end(), 0.0);
  }
  return out;
}

PopulationMap population_average(const std::vector<AttentionMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("population map: no subject maps");
  PopulationMap pop;
  pop.branch = maps.front().branch;
  pop.target_class = maps.front().target_class;
  pop.dims = maps.front().dims;
  pop.subjects = static_cast<int64_t>(maps.size());
  pop.values.assign(static_cast<size_t>(pop.dims.volume()), 0.0);
  for (const auto& m : maps) {
    if (m.branch != pop.branch || m.target_class != pop.target_class || !(m.dims == pop.dims))
      throw std::invalid_argument("population map: subject maps disagree on branch/class/shape");
    if (m.values.size() != pop.values.size())
      throw std::invalid_argument("population map: subject map size mismatch");
    for (size_t i = 0; i < pop.values.size(); ++i) pop.values[i] += m.values[i];
  }
  for (auto& v : pop.values) v /= static_cast<double>(pop.subjects);
  return pop;
}

void render_overlay(const std::vector<double>& attention, const std::vector<double>& anatomy,
                    Dims3 dims, int axis, int64_t slice_index,
                    const std::filesystem::path& path) {
  if (static_cast<int64_t>(attention.size()) != dims.volume() ||
      static_cast<int64_t>(anatomy.size()) != dims.volume())
    throw std::invalid_argument("overlay: volume sizes do not match the given extents");
  if (axis < 0 || axis > 2) throw std::invalid_argument("overlay: axis must be 0, 1, or 2");
  const int64_t extent = axis == 0 ? dims.d : axis == 1 ? dims.h : dims.w;
  if (slice_index < 0 || slice_index >= extent)
    throw std::invalid_argument("overlay: slice " + std::to_string(slice_index) +
                                " out of range [0, " + std::to_string(extent) + ")");

  double amin = std::numeric_limits<double>::infinity();
  double amax = -std::numeric_limits<double>::infinity();
  for (const double v : anatomy) {
    amin = std::min(amin, v);
    amax = std::max(amax, v);
  }
  const double aspan = amax > amin ? amax - amin : 1.0;

  const int64_t rows = axis == 0 ? dims.h : dims.d;
  const int64_t cols = axis == 2 ? dims.h : dims.w;
  const auto flat = [&](int64_t row, int64_t col) {
    int64_t d, h, w;
    if (axis == 0) {
      d = slice_index, h = row, w = col;
    } else if (axis == 1) {
      d = row, h = slice_index, w = col;
    } else {
      d = row, h = col, w = slice_index;
    }
    return static_cast<size_t>((d * dims.h + h) * dims.w + w);
  };

  std::vector<uint8_t> rgb(static_cast<size_t>(rows * cols * 3));
  size_t o = 0;
  for (int64_t row = 0; row < rows; ++row)
    for (int64_t col = 0; col < cols; ++col) {
      const size_t i = flat(row, col);
      const double gray = (anatomy[i] - amin) / aspan;
      const double v = std::clamp(attention[i], 0.0, 1.0);
      double r = gray, g = gray, b = gray;
      if (v > 0.2) {
        const double a = (v - 0.2) / 0.8;
        const double cr = std::min(1.0, 2.0 * v);
        const double cg = std::max(0.0, 2.0 * v - 1.0);
        r = (1.0 - a) * gray + a * cr;
        g = (1.0 - a) * gray + a * cg;
        b = (1.0 - a) * gray;
      }
      rgb[o++] = static_cast<uint8_t>(std::lround(std::clamp(r, 0.0, 1.0) * 255.0));
      rgb[o++] = static_cast<uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255.0));
      rgb[o++] = static_cast<uint8_t>(std::lround(std::clamp(b, 0.0, 1.0) * 255.0));
    }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << cols << " " << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

PpmImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto next_token = [&]() {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
      if (c == '#') {
        while ((c = in.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError(path.string() + ": truncated pixmap header");
    return tok;
  };
  if (next_token() != "P6") throw FormatError(path.string() + ": not a binary pixmap");
  PpmImage img;
  img.width = std::stoll(next_token());
  img.height = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  if (img.width < 1 || img.height < 1 || maxval != 255)
    throw FormatError(path.string() + ": unsupported pixmap geometry");
  img.rgb.resize(static_cast<size_t>(img.width * img.height * 3));
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

template std::vector<double> neuron_weights<float>(const Tensor<float>&);
template std::vector<double> neuron_weights<double>(const Tensor<double>&);
template std::vector<double> cam<float>(const std::vector<double>&, const Tensor<float>&);
template std::vector<double> cam<double>(const std::vector<double>&, const Tensor<double>&);
template std::array<AttentionMap, kRegionCount> subject_attention<float>(Model<float>&,
                                                                         const BranchBatch<float>&,
                                                                         int);
template std::array<AttentionMap, kRegionCount> subject_attention<double>(
    Model<double>&, const BranchBatch<double>&, int);

}  // namespace neurohybrid
