#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neurohybrid/ops.hpp"
#include "neurohybrid/rng.hpp"
#include "neurohybrid/volume.hpp"

namespace neurohybrid {

// The 12 deep-brain structures, grouped by the three network regions. The
// enum order fixes the manifest column order and the mask channel order.
enum class StructureId : int {
  Midbrain = 0,
  Pons,
  Medulla,
  Scp,
  LeftLateral,
  RightLateral,
  Third,
  Fourth,
  LeftPutamen,
  RightPutamen,
  LeftCaudate,
  RightCaudate,
};
constexpr int kStructureCount = 12;

enum class Region : int { Brainstem = 0, Ventricles = 1, Striatum = 2 };
constexpr int kRegionCount = 3;
constexpr int kStructuresPerRegion = 4;

Region region_of(StructureId s);
const char* structure_name(StructureId s);
const char* region_name(Region r);
std::array<StructureId, kStructuresPerRegion> region_structures(Region r);

enum class Diagnosis : int { PD = 0, PSP = 1, MSA = 2 };
const char* diagnosis_name(Diagnosis d);
Diagnosis parse_diagnosis(const std::string& token);  // throws FormatError outside {PD,PSP,MSA}

struct Subject {
  std::string id;
  Diagnosis diagnosis = Diagnosis::PD;
  Volume3D<float> image;
  std::array<Volume3D<uint8_t>, kStructureCount> masks;
  std::array<double, kStructureCount> volumes{};  // structure volume / ICV
  double icv_mm3 = 0.0;
};

struct Ellipsoid {
  std::array<double, 3> center{};  // voxel coordinates, x/y/z
  std::array<double, 3> radii{};   // voxels
};

// One generation profile: a diagnosis label plus per-structure radius scale
// factors. Several profiles may share a label (the MSA subtypes all carry
// label MSA).
struct ClassProfile {
  std::string name;
  Diagnosis label = Diagnosis::PD;
  double count_weight = 0.0;  // subject count at cohort scale 1.0
  std::array<double, kStructureCount> factors;

  ClassProfile() { factors.fill(1.0); }
};

struct PhantomSpec {
  int64_t grid = 48;
  double spacing_mm = 1.0;
  Ellipsoid head;
  std::array<Ellipsoid, kStructureCount> structures;
  double background_intensity = 0.0;
  double brain_intensity = 0.5;
  std::array<double, kRegionCount> region_intensity{0.68, 0.12, 0.80};
  double noise_std = 0.04;
  double radius_jitter_std = 0.03;
  double center_jitter_std = 0.3;
  double center_jitter_clamp = 0.75;
  int max_placement_retries = 10;
  std::vector<ClassProfile> profiles;

  // 48-voxel template with the default five profiles (PD, PSP, MSA-C, MSA-P,
  // unclassified MSA) at the 285/192/77 class proportions.
  static PhantomSpec defaults();
  void validate() const;
  const ClassProfile& profile(const std::string& name) const;
};

// Rasterizes the spec's ellipsoids with diagnosis-scaled radii and
// per-subject jitter. Throws if structures still overlap after the
// configured number of jitter retries.
Subject generate_subject(const PhantomSpec& spec, const ClassProfile& profile, const std::string& id,
                         Rng& rng);

// Subjects per profile, in profile order. Each diagnosis gets a quota of
// max(1, floor(sum-of-its-profile-weights * scale)) subjects, apportioned
// over its profiles by largest remainder, so scaled diagnosis totals match
// floor arithmetic on the full-cohort class sizes.
std::vector<int64_t> cohort_counts(const PhantomSpec& spec, double scale);

// Streams cohort_counts(spec, scale) subjects per profile to the sink. Each
// subject draws from an independent generator derived from (master seed, id),
// so generation order cannot change content.
void generate_cohort(const PhantomSpec& spec, double scale, uint64_t master_seed,
                     const std::function<void(Subject&&)>& sink);

// Per-structure voxel count x voxel volume / icv; empty masks yield nullopt.
std::array<std::optional<double>, kStructureCount> compute_volumes(
    const std::array<Volume3D<uint8_t>, kStructureCount>& masks, double voxel_volume_mm3,
    double icv_mm3);

struct RegionCrop {
  Dims3 shape;                                                   // d=z, h=y, w=x
  std::vector<float> mri;                                        // z-scored over the crop
  std::array<std::vector<uint8_t>, kStructuresPerRegion> masks;  // region structures in enum order
  std::array<int64_t, 3> origin{};                               // window start, x/y/z
  int64_t clipped_voxels = 0;  // mask voxels falling outside the window
};

// Window centered on the mask-union centroid, shifted to contain the union
// bounding box whenever it fits, then clamped to the volume.
RegionCrop extract_region_crop(const Subject& subject, Region region, Dims3 crop_shape);

// Channel tensor [C, d, h, w] for one branch: optional z-scored MRI channel
// followed by the region's four mask channels.
template <typename T>
Tensor<T> crop_region(const Subject& subject, Region region, Dims3 crop_shape, bool use_mri,
                      bool use_mask);

// Chebyshev (box) dilation, used to evaluate attention localization.
Volume3D<uint8_t> dilate(const Volume3D<uint8_t>& mask, int radius);

struct ManifestRow {
  std::string subject_id;
  Diagnosis diagnosis = Diagnosis::PD;
  double icv_mm3 = 0.0;
  std::array<double, kStructureCount> volumes{};
  std::string image_path;  // relative to the manifest directory
  std::string mask_dir;
};

extern const char* const kManifestHeader;

ManifestRow manifest_row_for(const Subject& subject);
void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Writes <dir>/image.nii and <dir>/masks/<structure>.nii.
void write_subject_files(const Subject& subject, const std::filesystem::path& dir);
// Reads the volumes referenced by a manifest row; base_dir is the manifest's directory.
Subject load_subject(const ManifestRow& row, const std::filesystem::path& base_dir);

}  // namespace neurohybrid
