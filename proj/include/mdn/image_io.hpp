#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mdn/image.hpp"

namespace mdn {

enum class ImageFormat { Pgm, Tiff, Mdtn };

// An image as read from disk plus what is needed to write a result back in the
// same container and sample type.
struct LoadedImage {
  Image image;
  ImageFormat format = ImageFormat::Pgm;
  int bits = 16;          // 8/16/32
  bool is_float = false;  // TIFF SampleFormat 3
  double maxval = 65535;  // PGM maxval
};

ImageFormat format_from_path(const std::filesystem::path& path);

// PGM (P2/P5, 8/16-bit), uncompressed strip-organised grayscale TIFF
// (8/16/32-bit unsigned or 32-bit float, either byte order) and MDTN (rank 2,
// or 4 with N = C = 1). Pixel values are returned unscaled.
LoadedImage read_image(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const Image& img, int bits = 16,
               bool ascii = false);
// 16-bit unsigned, or 32-bit float when `float32` is set.
void write_tiff(const std::filesystem::path& path, const Image& img, bool float32);
void write_mdtn_image(const std::filesystem::path& path, const Image& img);

// Writes `img` (already in the sample range of `like`) using the container and
// sample type `like` came from. Integer formats are rounded and clamped.
void write_like(const std::filesystem::path& path, const Image& img, const LoadedImage& like);

// Manifest: one path per line, '#' starts a comment, blank lines ignored.
// Relative paths resolve against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest,
                    const std::vector<std::filesystem::path>& entries);

}  // namespace mdn
