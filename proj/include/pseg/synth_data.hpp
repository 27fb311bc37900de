#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pseg/mask.hpp"

namespace pseg {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One geometric shape, recorded in full so masks can be re-derived from the
/// manifest. Geometry is per slice (one entry for 2D).
struct ShapeParams {
  std::string kind;  // "ellipse" | "rect" | "blob"
  bool target = false;
  double intensity = 0.5;
  double angle = 0.0;                            // ellipse rotation, radians
  std::array<double, 2> radii{4.0, 4.0};         // (row, col) half-extents
  std::vector<std::array<double, 2>> centers;    // (row, col) per slice
  std::vector<std::array<double, 4>> lobes;      // blob: (d_row, d_col, r_row, r_col)
  std::vector<std::uint8_t> visible;             // per slice; affects image only
};

struct SynthSpec {
  std::size_t extent = 64;  // pixels per side
  std::size_t depth = 1;    // slices; 1 = 2D
  std::size_t count = 16;
  std::uint64_t seed = 0;

  int decoys = 0;            // target look-alikes, distinguishable only by prompt
  int clutter = 1;           // dim non-target shapes
  double noise = 0.04;       // gaussian sigma added to the image
  bool low_contrast = false; // shrink fg/bg intensity gap to 0.1
  double drift = 0.0;        // 3D: per-slice center drift, pixels
  int slice_decoys = 0;      // 3D: fresh look-alikes per slice, no depth continuity
  double invisible_frac = 0.0;  // 3D: fraction of target slices drawn at bg intensity
};

struct SynthSample {
  std::vector<double> image;  // D*H*W, single channel, values in [0,1]
  BinaryMask mask;            // {H,W} or {D,H,W}
  std::vector<ShapeParams> shapes;
};

using Dataset = std::vector<SynthSample>;

/// Deterministic per spec.seed; every sample's mask is nonempty.
Dataset gen_dataset(const SynthSpec& spec);

/// Rasterizes one shape's slice geometry onto a {H,W} grid (voxel centers at
/// integer coordinates).
void rasterize_slice(const ShapeParams& shape, std::size_t slice, std::size_t extent,
                     std::vector<std::uint8_t>& out);

/// Seeded shuffle split; disjoint and exhaustive.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Writes manifest.json + images.f32 (little-endian float32) + masks.bit
/// (bit-packed LSB-first, byte-padded per sample) under `dir`.
void write_dataset(const std::string& dir, const SynthSpec& spec, const Dataset& data);

struct LoadedDataset {
  SynthSpec spec;
  Dataset data;
};
LoadedDataset load_dataset(const std::string& dir);

}  // namespace pseg
