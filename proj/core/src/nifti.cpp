#include "neurohybrid/nifti.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "neurohybrid/errors.hpp"

namespace neurohybrid {

namespace {

constexpr int32_t kHeaderSize = 348;
constexpr int16_t kDtypeU8 = 2;
constexpr int16_t kDtypeF32 = 16;

static_assert(std::endian::native == std::endian::little,
              "nifti i/o assumes a little-endian host");

#pragma pack(push, 1)
struct NiftiHeader {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope, scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min, slice_duration, toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == kHeaderSize, "nifti header must be 348 bytes");

NiftiHeader read_header(const std::filesystem::path& path, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw IoError("nifti: cannot open " + path.string());
  NiftiHeader h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (in.gcount() != sizeof(h)) throw FormatError("nifti: " + path.string() + ": truncated header");
  if (h.sizeof_hdr != kHeaderSize) {
    if (h.sizeof_hdr == 1543569408)  // 348 with the bytes reversed
      throw FormatError("nifti: " + path.string() + ": sizeof_hdr is byte-swapped; big-endian files are not supported");
    throw FormatError("nifti: " + path.string() + ": sizeof_hdr is " + std::to_string(h.sizeof_hdr) +
                      ", expected 348");
  }
  if (std::memcmp(h.magic, "ni1", 4) == 0)
    throw FormatError("nifti: " + path.string() +
                      ": magic 'ni1' marks a detached header/image pair, which is not supported");
  if (std::memcmp(h.magic, "n+1", 4) != 0)
    throw FormatError("nifti: " + path.string() + ": magic is not 'n+1'");
  if (h.dim[0] != 3)
    throw FormatError("nifti: " + path.string() + ": dim[0] is " + std::to_string(h.dim[0]) +
                      ", only 3-d volumes are supported");
  for (int a = 1; a <= 3; ++a)
    if (h.dim[a] <= 0)
      throw FormatError("nifti: " + path.string() + ": dim[" + std::to_string(a) + "] is " +
                        std::to_string(h.dim[a]) + ", must be positive");
  for (int a = 1; a <= 3; ++a)
    if (!(h.pixdim[a] > 0.0f))
      throw FormatError("nifti: " + path.string() + ": pixdim[" + std::to_string(a) + "] must be positive");
  if (h.vox_offset < static_cast<float>(kHeaderSize + 4))
    throw FormatError("nifti: " + path.string() + ": vox_offset " + std::to_string(h.vox_offset) +
                      " overlaps the header");
  return h;
}

template <typename T>
Volume3D<T> read_payload(const std::filesystem::path& path, std::ifstream& in, const NiftiHeader& h) {
  Volume3D<T> v;
  v.nx = h.dim[1];
  v.ny = h.dim[2];
  v.nz = h.dim[3];
  v.spacing = {static_cast<double>(h.pixdim[1]), static_cast<double>(h.pixdim[2]),
               static_cast<double>(h.pixdim[3])};
  v.data.resize(static_cast<size_t>(v.count()));
  in.seekg(static_cast<std::streamoff>(h.vox_offset));
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(T)))
    throw FormatError("nifti: " + path.string() + ": file is shorter than dim and bitpix imply");
  return v;
}

void check_dtype(const std::filesystem::path& path, const NiftiHeader& h, int16_t dtype, int16_t bits,
                 const char* what) {
  if (h.datatype != dtype)
    throw FormatError("nifti: " + path.string() + ": datatype is " + std::to_string(h.datatype) +
                      ", expected " + std::to_string(dtype) + " (" + what + ")");
  if (h.bitpix != bits)
    throw FormatError("nifti: " + path.string() + ": bitpix is " + std::to_string(h.bitpix) +
                      ", expected " + std::to_string(bits) + " for datatype " + std::to_string(dtype));
}

template <typename T>
void write_impl(const std::filesystem::path& path, const Volume3D<T>& vol, int16_t dtype, int16_t bits) {
  if (vol.nx <= 0 || vol.ny <= 0 || vol.nz <= 0)
    throw std::invalid_argument("nifti: refusing to write a volume with non-positive dimensions");
  if (vol.count() != static_cast<int64_t>(vol.data.size()))
    throw std::invalid_argument("nifti: volume data size does not match its dimensions");
  NiftiHeader h{};
  h.sizeof_hdr = kHeaderSize;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(vol.nx);
  h.dim[2] = static_cast<int16_t>(vol.ny);
  h.dim[3] = static_cast<int16_t>(vol.nz);
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  h.datatype = dtype;
  h.bitpix = bits;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(vol.spacing[0]);
  h.pixdim[2] = static_cast<float>(vol.spacing[1]);
  h.pixdim[3] = static_cast<float>(vol.spacing[2]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // millimetres
  std::memcpy(h.magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("nifti: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char extender[4] = {0, 0, 0, 0};
  out.write(extender, 4);
  out.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * sizeof(T)));
  if (!out) throw IoError("nifti: short write to " + path.string());
}

}  // namespace

Volume3D<float> read_nifti_f32(const std::filesystem::path& path) {
  std::ifstream in;
  const NiftiHeader h = read_header(path, in);
  check_dtype(path, h, kDtypeF32, 32, "float32");
  return read_payload<float>(path, in, h);
}

Volume3D<uint8_t> read_nifti_u8(const std::filesystem::path& path) {
  std::ifstream in;
  const NiftiHeader h = read_header(path, in);
  check_dtype(path, h, kDtypeU8, 8, "uint8");
  return read_payload<uint8_t>(path, in, h);
}

void write_nifti(const std::filesystem::path& path, const Volume3D<float>& vol) {
  write_impl(path, vol, kDtypeF32, 32);
}

void write_nifti(const std::filesystem::path& path, const Volume3D<uint8_t>& vol) {
  write_impl(path, vol, kDtypeU8, 8);
}

}  // namespace neurohybrid
