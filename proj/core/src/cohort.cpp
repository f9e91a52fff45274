#include "neurohybrid/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "neurohybrid/errors.hpp"
#include "neurohybrid/nifti.hpp"

namespace neurohybrid {

namespace {

struct StructureInfo {
  const char* name;
  Region region;
};

constexpr StructureInfo kStructures[kStructureCount] = {
    {"midbrain", Region::Brainstem},     {"pons", Region::Brainstem},
    {"medulla", Region::Brainstem},      {"scp", Region::Brainstem},
    {"left_lateral", Region::Ventricles},{"right_lateral", Region::Ventricles},
    {"third", Region::Ventricles},       {"fourth", Region::Ventricles},
    {"left_putamen", Region::Striatum},  {"right_putamen", Region::Striatum},
    {"left_caudate", Region::Striatum},  {"right_caudate", Region::Striatum},
};

double clamped_normal(Rng& rng, double lo, double hi) {
  return std::clamp(rng.normal(), lo, hi);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& tok, size_t row, const char* col) {
  const char* s = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0')
    throw FormatError("manifest: row " + std::to_string(row) + ": column " + col + ": '" + tok +
                      "' is not a number");
  return v;
}

// Marks every voxel whose center lies inside the ellipsoid; returns the count.
int64_t rasterize(const Ellipsoid& e, int64_t grid, const std::function<bool(int64_t, int64_t, int64_t)>& mark) {
  int64_t count = 0;
  const auto lo = [&](int axis) {
    return std::max<int64_t>(0, static_cast<int64_t>(std::ceil(e.center[axis] - e.radii[axis])));
  };
  const auto hi = [&](int axis) {
    return std::min<int64_t>(grid - 1, static_cast<int64_t>(std::floor(e.center[axis] + e.radii[axis])));
  };
  for (int64_t z = lo(2); z <= hi(2); ++z)
    for (int64_t y = lo(1); y <= hi(1); ++y)
      for (int64_t x = lo(0); x <= hi(0); ++x) {
        const double dx = (static_cast<double>(x) - e.center[0]) / e.radii[0];
        const double dy = (static_cast<double>(y) - e.center[1]) / e.radii[1];
        const double dz = (static_cast<double>(z) - e.center[2]) / e.radii[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) {
          if (!mark(x, y, z)) return -1;
          ++count;
        }
      }
  return count;
}

void dilate_axis(std::vector<uint8_t>& data, int64_t nx, int64_t ny, int64_t nz, int axis, int radius) {
  std::vector<uint8_t> out(data.size(), 0);
  const int64_t n[3] = {nx, ny, nz};
  const int64_t stride[3] = {1, nx, nx * ny};
  const int64_t len = n[axis];
  const int64_t a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  for (int64_t i = 0; i < n[a1]; ++i)
    for (int64_t j = 0; j < n[a2]; ++j) {
      const int64_t base = i * stride[a1] + j * stride[a2];
      for (int64_t k = 0; k < len; ++k) {
        if (!data[static_cast<size_t>(base + k * stride[axis])]) continue;
        const int64_t lo = std::max<int64_t>(0, k - radius);
        const int64_t hi = std::min<int64_t>(len - 1, k + radius);
        for (int64_t t = lo; t <= hi; ++t) out[static_cast<size_t>(base + t * stride[axis])] = 1;
      }
    }
  data.swap(out);
}

}  // namespace

Region region_of(StructureId s) { return kStructures[static_cast<int>(s)].region; }
const char* structure_name(StructureId s) { return kStructures[static_cast<int>(s)].name; }

const char* region_name(Region r) {
  switch (r) {
    case Region::Brainstem: return "brainstem";
    case Region::Ventricles: return "ventricles";
    case Region::Striatum: return "striatum";
  }
  return "?";
}

std::array<StructureId, kStructuresPerRegion> region_structures(Region r) {
  std::array<StructureId, kStructuresPerRegion> out{};
  int n = 0;
  for (int i = 0; i < kStructureCount; ++i)
    if (kStructures[i].region == r) out[static_cast<size_t>(n++)] = static_cast<StructureId>(i);
  return out;
}

const char* diagnosis_name(Diagnosis d) {
  switch (d) {
    case Diagnosis::PD: return "PD";
    case Diagnosis::PSP: return "PSP";
    case Diagnosis::MSA: return "MSA";
  }
  return "?";
}

Diagnosis parse_diagnosis(const std::string& token) {
  if (token == "PD") return Diagnosis::PD;
  if (token == "PSP") return Diagnosis::PSP;
  if (token == "MSA") return Diagnosis::MSA;
  throw FormatError("diagnosis '" + token + "' is not one of PD, PSP, MSA");
}

PhantomSpec PhantomSpec::defaults() {
  PhantomSpec s;
  s.grid = 48;
  s.head = {{24, 24, 23}, {20, 21, 20}};
  s.structures[static_cast<int>(StructureId::Midbrain)] = {{24, 27.5, 24}, {3.5, 3, 2.5}};
  s.structures[static_cast<int>(StructureId::Pons)] = {{24, 28.5, 17.5}, {4.25, 3.75, 3}};
  s.structures[static_cast<int>(StructureId::Medulla)] = {{24, 29.5, 10}, {2.5, 2.5, 3.25}};
  s.structures[static_cast<int>(StructureId::Scp)] = {{24, 34, 26}, {1.5, 1.25, 1.75}};
  s.structures[static_cast<int>(StructureId::LeftLateral)] = {{18, 23, 31.5}, {2.5, 5.5, 3}};
  s.structures[static_cast<int>(StructureId::RightLateral)] = {{30, 23, 31.5}, {2.5, 5.5, 3}};
  s.structures[static_cast<int>(StructureId::Third)] = {{24, 19, 27}, {1.25, 3, 2.25}};
  s.structures[static_cast<int>(StructureId::Fourth)] = {{24, 35.5, 17}, {1.5, 1.5, 1.75}};
  s.structures[static_cast<int>(StructureId::LeftPutamen)] = {{15, 22, 24}, {2, 3.25, 2.5}};
  s.structures[static_cast<int>(StructureId::RightPutamen)] = {{33, 22, 24}, {2, 3.25, 2.5}};
  s.structures[static_cast<int>(StructureId::LeftCaudate)] = {{16.5, 12.5, 28}, {1.75, 2.75, 2.25}};
  s.structures[static_cast<int>(StructureId::RightCaudate)] = {{31.5, 12.5, 28}, {1.75, 2.75, 2.25}};

  ClassProfile pd;
  pd.name = "PD";
  pd.label = Diagnosis::PD;
  pd.count_weight = 285;

  ClassProfile psp;
  psp.name = "PSP";
  psp.label = Diagnosis::PSP;
  psp.count_weight = 192;
  psp.factors[static_cast<int>(StructureId::Midbrain)] = 0.7;
  psp.factors[static_cast<int>(StructureId::Scp)] = 0.8;
  psp.factors[static_cast<int>(StructureId::Third)] = 1.3;

  ClassProfile msa_c;
  msa_c.name = "MSA-C";
  msa_c.label = Diagnosis::MSA;
  msa_c.count_weight = 20;
  msa_c.factors[static_cast<int>(StructureId::Pons)] = 0.75;
  msa_c.factors[static_cast<int>(StructureId::LeftPutamen)] = 0.75;
  msa_c.factors[static_cast<int>(StructureId::RightPutamen)] = 0.75;
  msa_c.factors[static_cast<int>(StructureId::Fourth)] = 1.2;

  ClassProfile msa_p = msa_c;
  msa_p.name = "MSA-P";
  msa_p.count_weight = 34;

  ClassProfile msa_u = msa_c;
  msa_u.name = "MSA-U";
  msa_u.count_weight = 23;

  s.profiles = {pd, psp, msa_c, msa_p, msa_u};
  return s;
}

void PhantomSpec::validate() const {
  if (grid <= 0) throw std::invalid_argument("phantom: grid must be positive");
  if (spacing_mm <= 0) throw std::invalid_argument("phantom: spacing must be positive");
  if (noise_std < 0) throw std::invalid_argument("phantom: noise std must be non-negative");
  if (radius_jitter_std < 0 || center_jitter_std < 0)
    throw std::invalid_argument("phantom: jitter std must be non-negative");
  for (int a = 0; a < 3; ++a)
    if (head.radii[static_cast<size_t>(a)] <= 0)
      throw std::invalid_argument("phantom: head radii must be positive");
  for (int i = 0; i < kStructureCount; ++i)
    for (int a = 0; a < 3; ++a)
      if (structures[static_cast<size_t>(i)].radii[static_cast<size_t>(a)] <= 0)
        throw std::invalid_argument(std::string("phantom: ") + kStructures[i].name +
                                    " radii must be positive");
  if (profiles.empty()) throw std::invalid_argument("phantom: at least one class profile required");
  for (const auto& p : profiles) {
    if (p.name.empty()) throw std::invalid_argument("phantom: profile name must not be empty");
    if (p.count_weight <= 0)
      throw std::invalid_argument("phantom: profile " + p.name + ": count weight must be positive");
    for (int i = 0; i < kStructureCount; ++i)
      if (!(p.factors[static_cast<size_t>(i)] > 0))
        throw std::invalid_argument("phantom: profile " + p.name + ": factor for " +
                                    kStructures[i].name + " must be positive");
  }
}

const ClassProfile& PhantomSpec::profile(const std::string& name) const {
  for (const auto& p : profiles)
    if (p.name == name) return p;
  throw std::invalid_argument("phantom: no profile named " + name);
}

Subject generate_subject(const PhantomSpec& spec, const ClassProfile& profile, const std::string& id,
                         Rng& rng) {
  spec.validate();
  const int64_t g = spec.grid;
  const int64_t voxels = g * g * g;

  std::vector<int8_t> label(static_cast<size_t>(voxels));
  Ellipsoid head = spec.head;
  std::array<Ellipsoid, kStructureCount> placed{};

  bool ok = false;
  for (int attempt = 0; attempt <= spec.max_placement_retries && !ok; ++attempt) {
    const double head_k = 1.0 + spec.radius_jitter_std * clamped_normal(rng, -3, 3);
    head = spec.head;
    for (auto& r : head.radii) r *= head_k;

    for (int i = 0; i < kStructureCount; ++i) {
      Ellipsoid e = spec.structures[static_cast<size_t>(i)];
      const double k =
          profile.factors[static_cast<size_t>(i)] * (1.0 + spec.radius_jitter_std * clamped_normal(rng, -3, 3));
      for (auto& r : e.radii) r *= k;
      for (auto& c : e.center)
        c += std::clamp(spec.center_jitter_std * rng.normal(), -spec.center_jitter_clamp,
                        spec.center_jitter_clamp);
      placed[static_cast<size_t>(i)] = e;
    }

    std::fill(label.begin(), label.end(), int8_t(0));
    ok = true;
    for (int i = 0; i < kStructureCount && ok; ++i) {
      const int64_t n = rasterize(placed[static_cast<size_t>(i)], g, [&](int64_t x, int64_t y, int64_t z) {
        auto& cell = label[static_cast<size_t>(x + g * (y + g * z))];
        if (cell != 0) return false;
        cell = static_cast<int8_t>(i + 1);
        return true;
      });
      if (n < 0) ok = false;
      if (n == 0)
        throw std::runtime_error("phantom: structure " + std::string(kStructures[i].name) +
                                 " rasterized to zero voxels for subject " + id);
    }
  }
  if (!ok)
    throw std::runtime_error("phantom: structures still overlap after " +
                             std::to_string(spec.max_placement_retries) + " jitter retries for subject " + id);

  Subject subj;
  subj.id = id;
  subj.diagnosis = profile.label;

  subj.image = Volume3D<float>(g, g, g, spec.spacing_mm);
  std::fill(subj.image.data.begin(), subj.image.data.end(), static_cast<float>(spec.background_intensity));
  const int64_t head_count = rasterize(head, g, [&](int64_t x, int64_t y, int64_t z) {
    subj.image.at(x, y, z) = static_cast<float>(spec.brain_intensity);
    return true;
  });
  subj.icv_mm3 = static_cast<double>(head_count) * subj.image.voxel_volume();

  std::array<int64_t, kStructureCount> counts{};
  for (int i = 0; i < kStructureCount; ++i) {
    auto& m = subj.masks[static_cast<size_t>(i)];
    m = Volume3D<uint8_t>(g, g, g, spec.spacing_mm);
    const float intensity = static_cast<float>(
        spec.region_intensity[static_cast<size_t>(static_cast<int>(kStructures[i].region))]);
    for (int64_t v = 0; v < voxels; ++v)
      if (label[static_cast<size_t>(v)] == i + 1) {
        m.data[static_cast<size_t>(v)] = 1;
        subj.image.data[static_cast<size_t>(v)] = intensity;
        ++counts[static_cast<size_t>(i)];
      }
  }

  if (spec.noise_std > 0)
    for (int64_t v = 0; v < voxels; ++v)
      subj.image.data[static_cast<size_t>(v)] += static_cast<float>(spec.noise_std * rng.normal());

  const double vv = subj.image.voxel_volume();
  for (int i = 0; i < kStructureCount; ++i)
    subj.volumes[static_cast<size_t>(i)] = static_cast<double>(counts[static_cast<size_t>(i)]) * vv / subj.icv_mm3;
  return subj;
}

std::vector<int64_t> cohort_counts(const PhantomSpec& spec, double scale) {
  if (scale <= 0) throw std::invalid_argument("phantom: cohort scale must be positive");
  std::vector<int64_t> counts(spec.profiles.size(), 0);
  std::vector<Diagnosis> seen;
  for (const auto& p : spec.profiles)
    if (std::find(seen.begin(), seen.end(), p.label) == seen.end()) seen.push_back(p.label);
  for (const Diagnosis diag : seen) {
    std::vector<size_t> members;
    double total = 0.0;
    for (size_t i = 0; i < spec.profiles.size(); ++i)
      if (spec.profiles[i].label == diag) {
        members.push_back(i);
        total += spec.profiles[i].count_weight;
      }
    const int64_t quota =
        std::max<int64_t>(1, static_cast<int64_t>(std::floor(total * scale + 1e-9)));
    std::vector<double> frac(members.size());
    int64_t assigned = 0;
    for (size_t j = 0; j < members.size(); ++j) {
      const double exact =
          static_cast<double>(quota) * spec.profiles[members[j]].count_weight / total;
      counts[members[j]] = static_cast<int64_t>(std::floor(exact + 1e-9));
      frac[j] = exact - static_cast<double>(counts[members[j]]);
      assigned += counts[members[j]];
    }
    std::vector<size_t> order(members.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    for (size_t k = 0; assigned < quota; ++k, ++assigned) ++counts[members[order[k % order.size()]]];
  }
  return counts;
}

void generate_cohort(const PhantomSpec& spec, double scale, uint64_t master_seed,
                     const std::function<void(Subject&&)>& sink) {
  spec.validate();
  const std::vector<int64_t> counts = cohort_counts(spec, scale);
  for (size_t pi = 0; pi < spec.profiles.size(); ++pi) {
    const auto& profile = spec.profiles[pi];
    const int64_t count = counts[pi];
    const std::string prefix = lower(profile.name);
    for (int64_t i = 0; i < count; ++i) {
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%04lld", prefix.c_str(), static_cast<long long>(i));
      Rng rng(derive_seed(master_seed, idbuf));
      sink(generate_subject(spec, profile, idbuf, rng));
    }
  }
}

std::array<std::optional<double>, kStructureCount> compute_volumes(
    const std::array<Volume3D<uint8_t>, kStructureCount>& masks, double voxel_volume_mm3,
    double icv_mm3) {
  if (!(icv_mm3 > 0)) throw std::invalid_argument("volumes: icv must be positive");
  if (!(voxel_volume_mm3 > 0)) throw std::invalid_argument("volumes: voxel volume must be positive");
  std::array<std::optional<double>, kStructureCount> out;
  for (int i = 0; i < kStructureCount; ++i) {
    int64_t count = 0;
    for (const uint8_t v : masks[static_cast<size_t>(i)].data) {
      if (v > 1)
        throw std::invalid_argument(std::string("volumes: mask ") + kStructures[i].name +
                                    " is not binary");
      count += v;
    }
    if (count == 0)
      out[static_cast<size_t>(i)] = std::nullopt;
    else
      out[static_cast<size_t>(i)] = static_cast<double>(count) * voxel_volume_mm3 / icv_mm3;
  }
  return out;
}

RegionCrop extract_region_crop(const Subject& subject, Region region, Dims3 crop_shape) {
  const auto ids = region_structures(region);
  const int64_t nx = subject.image.nx, ny = subject.image.ny, nz = subject.image.nz;
  if (crop_shape.w > nx || crop_shape.h > ny || crop_shape.d > nz)
    throw std::invalid_argument("crop: shape exceeds the volume grid");

  // Union bounding box and centroid over the region's masks.
  int64_t lo[3] = {nx, ny, nz}, hi[3] = {-1, -1, -1};
  double centroid[3] = {0, 0, 0};
  int64_t total = 0;
  for (const StructureId sid : ids) {
    const auto& m = subject.masks[static_cast<size_t>(static_cast<int>(sid))];
    for (int64_t z = 0; z < nz; ++z)
      for (int64_t y = 0; y < ny; ++y)
        for (int64_t x = 0; x < nx; ++x)
          if (m.at(x, y, z)) {
            const int64_t p[3] = {x, y, z};
            for (int a = 0; a < 3; ++a) {
              lo[a] = std::min(lo[a], p[a]);
              hi[a] = std::max(hi[a], p[a]);
              centroid[a] += static_cast<double>(p[a]);
            }
            ++total;
          }
  }
  if (total == 0)
    throw std::invalid_argument(std::string("crop: all ") + region_name(region) +
                                " masks are empty for subject " + subject.id);
  for (auto& c : centroid) c /= static_cast<double>(total);

  const int64_t shape[3] = {crop_shape.w, crop_shape.h, crop_shape.d};
  const int64_t grid[3] = {nx, ny, nz};
  int64_t start[3];
  for (int a = 0; a < 3; ++a) {
    int64_t s = static_cast<int64_t>(std::llround(centroid[a] - static_cast<double>(shape[a]) / 2.0));
    if (hi[a] - lo[a] + 1 <= shape[a]) s = std::clamp(s, hi[a] + 1 - shape[a], lo[a]);
    start[a] = std::clamp<int64_t>(s, 0, grid[a] - shape[a]);
  }

  RegionCrop crop;
  crop.shape = crop_shape;
  crop.origin = {start[0], start[1], start[2]};
  const int64_t n = crop_shape.volume();

  crop.mri.resize(static_cast<size_t>(n));
  double mean = 0.0;
  for (int64_t dz = 0; dz < crop_shape.d; ++dz)
    for (int64_t dy = 0; dy < crop_shape.h; ++dy)
      for (int64_t dx = 0; dx < crop_shape.w; ++dx) {
        const float v = subject.image.at(start[0] + dx, start[1] + dy, start[2] + dz);
        crop.mri[static_cast<size_t>((dz * crop_shape.h + dy) * crop_shape.w + dx)] = v;
        mean += static_cast<double>(v);
      }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const float v : crop.mri) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-12);
  for (auto& v : crop.mri) v = static_cast<float>((static_cast<double>(v) - mean) / sd);

  for (int c = 0; c < kStructuresPerRegion; ++c) {
    const auto& m = subject.masks[static_cast<size_t>(static_cast<int>(ids[static_cast<size_t>(c)]))];
    auto& dst = crop.masks[static_cast<size_t>(c)];
    dst.resize(static_cast<size_t>(n));
    int64_t inside = 0;
    for (int64_t dz = 0; dz < crop_shape.d; ++dz)
      for (int64_t dy = 0; dy < crop_shape.h; ++dy)
        for (int64_t dx = 0; dx < crop_shape.w; ++dx) {
          const uint8_t v = m.at(start[0] + dx, start[1] + dy, start[2] + dz);
          dst[static_cast<size_t>((dz * crop_shape.h + dy) * crop_shape.w + dx)] = v;
          inside += v;
        }
    int64_t mask_total = 0;
    for (const uint8_t v : m.data) mask_total += v;
    crop.clipped_voxels += mask_total - inside;
  }
  return crop;
}

template <typename T>
Tensor<T> crop_region(const Subject& subject, Region region, Dims3 crop_shape, bool use_mri,
                      bool use_mask) {
  if (!use_mri && !use_mask)
    throw std::invalid_argument("crop: at least one of the MRI and mask channels must be enabled");
  const RegionCrop crop = extract_region_crop(subject, region, crop_shape);
  const int64_t channels = (use_mri ? 1 : 0) + (use_mask ? kStructuresPerRegion : 0);
  const int64_t n = crop_shape.volume();
  Tensor<T> out(Shape{channels, crop_shape.d, crop_shape.h, crop_shape.w});
  int64_t c = 0;
  if (use_mri) {
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(crop.mri[static_cast<size_t>(i)]);
    c = 1;
  }
  if (use_mask)
    for (int m = 0; m < kStructuresPerRegion; ++m, ++c)
      for (int64_t i = 0; i < n; ++i)
        out[c * n + i] = static_cast<T>(crop.masks[static_cast<size_t>(m)][static_cast<size_t>(i)]);
  return out;
}

template Tensor<float> crop_region<float>(const Subject&, Region, Dims3, bool, bool);
template Tensor<double> crop_region<double>(const Subject&, Region, Dims3, bool, bool);

Volume3D<uint8_t> dilate(const Volume3D<uint8_t>& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate: radius must be non-negative");
  Volume3D<uint8_t> out = mask;
  if (radius == 0) return out;
  for (int axis = 0; axis < 3; ++axis) dilate_axis(out.data, out.nx, out.ny, out.nz, axis, radius);
  return out;
}

const char* const kManifestHeader =
    "subject_id,diagnosis,icv_mm3,vol_midbrain,vol_pons,vol_medulla,vol_scp,vol_left_lateral,"
    "vol_right_lateral,vol_third,vol_fourth,vol_left_putamen,vol_right_putamen,vol_left_caudate,"
    "vol_right_caudate,image_path,mask_dir";

ManifestRow manifest_row_for(const Subject& subject) {
  ManifestRow row;
  row.subject_id = subject.id;
  row.diagnosis = subject.diagnosis;
  row.icv_mm3 = subject.icv_mm3;
  row.volumes = subject.volumes;
  row.image_path = subject.id + "/image.nii";
  row.mask_dir = subject.id + "/masks";
  return row;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot open " + path.string() + " for writing");
  out << kManifestHeader << "\n";
  for (const auto& r : rows) {
    out << r.subject_id << ',' << diagnosis_name(r.diagnosis) << ',' << fmt_double(r.icv_mm3);
    for (const double v : r.volumes) out << ',' << fmt_double(v);
    out << ',' << r.image_path << ',' << r.mask_dir << "\n";
  }
  if (!out) throw IoError("manifest: short write to " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest: " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw FormatError("manifest: " + path.string() + ": header does not match the expected column layout");

  std::vector<ManifestRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (!line.empty() && line.back() == ',') f.push_back("");
    if (f.size() != 17)
      throw FormatError("manifest: row " + std::to_string(lineno) + ": expected 17 columns, got " +
                        std::to_string(f.size()));
    ManifestRow r;
    r.subject_id = f[0];
    if (r.subject_id.empty())
      throw FormatError("manifest: row " + std::to_string(lineno) + ": empty subject id");
    try {
      r.diagnosis = parse_diagnosis(f[1]);
    } catch (const FormatError& e) {
      throw FormatError("manifest: row " + std::to_string(lineno) + ": " + e.what());
    }
    r.icv_mm3 = parse_double(f[2], lineno, "icv_mm3");
    for (int i = 0; i < kStructureCount; ++i)
      r.volumes[static_cast<size_t>(i)] =
          parse_double(f[static_cast<size_t>(3 + i)], lineno, kStructures[i].name);
    r.image_path = f[15];
    r.mask_dir = f[16];
    if (r.image_path.empty() || r.mask_dir.empty())
      throw FormatError("manifest: row " + std::to_string(lineno) + ": empty file reference");
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_subject_files(const Subject& subject, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cohort: cannot create " + (dir / "masks").string() + ": " + ec.message());
  write_nifti(dir / "image.nii", subject.image);
  for (int i = 0; i < kStructureCount; ++i)
    write_nifti(dir / "masks" / (std::string(kStructures[i].name) + ".nii"),
                subject.masks[static_cast<size_t>(i)]);
}

Subject load_subject(const ManifestRow& row, const std::filesystem::path& base_dir) {
  Subject s;
  s.id = row.subject_id;
  s.diagnosis = row.diagnosis;
  s.volumes = row.volumes;
  s.icv_mm3 = row.icv_mm3;
  s.image = read_nifti_f32(base_dir / row.image_path);
  for (int i = 0; i < kStructureCount; ++i) {
    auto& m = s.masks[static_cast<size_t>(i)];
    m = read_nifti_u8(base_dir / row.mask_dir / (std::string(kStructures[i].name) + ".nii"));
    if (m.nx != s.image.nx || m.ny != s.image.ny || m.nz != s.image.nz)
      throw FormatError("cohort: subject " + s.id + ": mask " + kStructures[i].name +
                        " dimensions do not match the image");
  }
  return s;
}

}  // namespace neurohybrid
