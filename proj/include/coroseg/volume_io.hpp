#pragma once

#include <filesystem>

#include "coroseg/grid.hpp"

namespace coroseg {

/// On-disk container, chosen from the file extension.
enum class VolumeFormat { Nifti, NiftiGz, Nrrd };

/// Maps `.nii`, `.nii.gz` and `.nrrd` to a format; throws FormatError otherwise.
VolumeFormat format_from_path(const std::filesystem::path& path);

/// Reads an image. Any stored scalar type is converted to float; NIfTI
/// scl_slope/scl_inter are applied only when they are not the identity.
/// Throws FileNotFound, FormatError, or ValidationError (bad spacing, non-finite data).
Volume load_volume(const std::filesystem::path& path);

/// Reads a label map and checks that it is binary.
Mask load_mask(const std::filesystem::path& path);

/// Images are written as float32.
void save_volume(const Volume& volume, const std::filesystem::path& path);

/// Masks are written as uint8. Throws ValidationError on non-binary values.
void save_mask(const Mask& mask, const std::filesystem::path& path);

}  // namespace coroseg
