#pragma once

#include <filesystem>

#include "neurohybrid/volume.hpp"

namespace neurohybrid {

// Single-file little-endian NIfTI-1 (.nii) I/O restricted to 3-d volumes of
// uint8 (masks) or float32 (images). Detached header pairs (.hdr/.img) and
// byte-swapped files are rejected with a diagnostic naming the bad field.

Volume3D<float> read_nifti_f32(const std::filesystem::path& path);
Volume3D<uint8_t> read_nifti_u8(const std::filesystem::path& path);

void write_nifti(const std::filesystem::path& path, const Volume3D<float>& vol);
void write_nifti(const std::filesystem::path& path, const Volume3D<uint8_t>& vol);

}  // namespace neurohybrid
