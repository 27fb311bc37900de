#include "pseg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pseg/rng.hpp"

namespace pseg {

namespace {

using nlohmann::json;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

bool inside_ellipse(double dr, double dc, double rr, double rc, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double u = (dr * ca + dc * sa) / rr;
  const double v = (-dr * sa + dc * ca) / rc;
  return u * u + v * v <= 1.0;
}

ShapeParams sample_shape(Rng& rng, const SynthSpec& spec, bool target, double intensity) {
  ShapeParams s;
  const double ext = static_cast<double>(spec.extent);
  const int kind = static_cast<int>(rng.index(3));
  s.kind = kind == 0 ? "ellipse" : (kind == 1 ? "rect" : "blob");
  s.target = target;
  s.intensity = intensity;
  s.angle = s.kind == "ellipse" ? rng.uniform(0.0, 3.14159265358979) : 0.0;
  s.radii = {rng.uniform(ext / 10.0, ext / 5.0), rng.uniform(ext / 10.0, ext / 5.0)};
  std::array<double, 2> c{rng.uniform(0.2 * ext, 0.8 * ext), rng.uniform(0.2 * ext, 0.8 * ext)};
  s.centers.assign(spec.depth, c);
  if (spec.depth > 1 && spec.drift > 0.0) {
    for (std::size_t d = 1; d < spec.depth; ++d) {
      for (int ax = 0; ax < 2; ++ax) {
        c[ax] = std::clamp(c[ax] + rng.uniform(-spec.drift, spec.drift), 0.15 * ext, 0.85 * ext);
      }
      s.centers[d] = c;
    }
  }
  if (s.kind == "blob") {
    const int n_lobes = 1 + static_cast<int>(rng.index(2));
    for (int i = 0; i < n_lobes; ++i) {
      s.lobes.push_back({rng.uniform(-0.8, 0.8) * s.radii[0], rng.uniform(-0.8, 0.8) * s.radii[1],
                         rng.uniform(0.5, 0.9) * s.radii[0], rng.uniform(0.5, 0.9) * s.radii[1]});
    }
  }
  s.visible.assign(spec.depth, 1);
  return s;
}

double center_distance(const ShapeParams& a, const ShapeParams& b) {
  const double dr = a.centers[0][0] - b.centers[0][0];
  const double dc = a.centers[0][1] - b.centers[0][1];
  return std::sqrt(dr * dr + dc * dc);
}

}  // namespace

void rasterize_slice(const ShapeParams& shape, std::size_t slice, std::size_t extent,
                     std::vector<std::uint8_t>& out) {
  const long H = static_cast<long>(extent), W = static_cast<long>(extent);
  const auto& c = shape.centers.at(slice);
  for (long r = 0; r < H; ++r) {
    for (long cc = 0; cc < W; ++cc) {
      const double dr = static_cast<double>(r) - c[0];
      const double dc = static_cast<double>(cc) - c[1];
      bool in = false;
      if (shape.kind == "rect") {
        in = std::abs(dr) <= shape.radii[0] && std::abs(dc) <= shape.radii[1];
      } else {
        in = inside_ellipse(dr, dc, shape.radii[0], shape.radii[1], shape.angle);
        if (!in && shape.kind == "blob") {
          for (const auto& lobe : shape.lobes) {
            if (inside_ellipse(dr - lobe[0], dc - lobe[1], lobe[2], lobe[3], 0.0)) {
              in = true;
              break;
            }
          }
        }
      }
      if (in) out[static_cast<std::size_t>(r * W + cc)] = 1;
    }
  }
}

Dataset gen_dataset(const SynthSpec& spec) {
  if (spec.count == 0) throw DataError("gen_dataset: count must be >= 1");
  if (spec.extent == 0 || spec.depth == 0) throw DataError("gen_dataset: bad extents");
  Dataset data;
  data.reserve(spec.count);
  Rng root(spec.seed);
  const std::size_t HW = spec.extent * spec.extent;
  const bool is3d = spec.depth > 1;

  for (std::size_t si = 0; si < spec.count; ++si) {
    Rng rng = root.fork(si);
    SynthSample sample;
    sample.mask = BinaryMask(is3d ? std::vector<std::size_t>{spec.depth, spec.extent, spec.extent}
                                  : std::vector<std::size_t>{spec.extent, spec.extent});

    const double bg = rng.uniform(0.15, 0.35);
    const double gap = spec.low_contrast ? 0.1 : rng.uniform(0.35, 0.55);
    const double fg = clamp01(bg + gap);

    ShapeParams target = sample_shape(rng, spec, true, fg);
    if (spec.invisible_frac > 0.0 && is3d) {
      for (std::size_t d = 0; d < spec.depth; ++d) {
        if (rng.uniform() < spec.invisible_frac) target.visible[d] = 0;
      }
      // keep at least one visible slice so the prompt has something to anchor
      bool any = false;
      for (auto v : target.visible) any = any || v;
      if (!any) target.visible[spec.depth / 2] = 1;
    }
    sample.shapes.push_back(target);

    for (int i = 0; i < spec.decoys; ++i) {
      // look-alike: same intensity, kept away from the target
      for (int tries = 0; tries < 64; ++tries) {
        ShapeParams decoy = sample_shape(rng, spec, false, fg);
        if (center_distance(decoy, target) >
            0.6 * (decoy.radii[0] + decoy.radii[1] + target.radii[0] + target.radii[1]) + 6.0) {
          sample.shapes.push_back(decoy);
          break;
        }
      }
    }
    for (int i = 0; i < spec.clutter; ++i) {
      ShapeParams c = sample_shape(rng, spec, false, clamp01(bg + rng.uniform(-0.12, 0.12)));
      sample.shapes.push_back(c);
    }
    if (is3d && spec.slice_decoys > 0) {
      for (int i = 0; i < spec.slice_decoys; ++i) {
        for (std::size_t d = 0; d < spec.depth; ++d) {
          ShapeParams s = sample_shape(rng, spec, false, fg);
          // confine to one slice
          std::array<double, 2> c = {rng.uniform(0.15, 0.85) * spec.extent,
                                     rng.uniform(0.15, 0.85) * spec.extent};
          s.centers.assign(spec.depth, c);
          s.visible.assign(spec.depth, 0);
          s.visible[d] = 1;
          sample.shapes.push_back(s);
        }
      }
    }

    // rasterize: image gets every visible shape, the mask only the target
    sample.image.assign(spec.depth * HW, bg);
    std::vector<std::uint8_t> slice_bits(HW);
    for (const auto& shape : sample.shapes) {
      for (std::size_t d = 0; d < spec.depth; ++d) {
        std::fill(slice_bits.begin(), slice_bits.end(), 0);
        rasterize_slice(shape, d, spec.extent, slice_bits);
        for (std::size_t i = 0; i < HW; ++i) {
          if (!slice_bits[i]) continue;
          if (shape.visible[d]) sample.image[d * HW + i] = shape.intensity;
          if (shape.target) sample.mask.bits[d * HW + i] = 1;
        }
      }
    }
    for (auto& v : sample.image) v = clamp01(v + rng.normal(0.0, spec.noise));

    if (sample.mask.empty_mask()) {
      // geometry degenerate (clipped away); force a small central disc
      ShapeParams& t = sample.shapes.front();
      t.kind = "ellipse";
      t.radii = {spec.extent / 8.0, spec.extent / 8.0};
      t.centers.assign(spec.depth, {spec.extent / 2.0, spec.extent / 2.0});
      for (std::size_t d = 0; d < spec.depth; ++d) {
        std::fill(slice_bits.begin(), slice_bits.end(), 0);
        rasterize_slice(t, d, spec.extent, slice_bits);
        for (std::size_t i = 0; i < HW; ++i) {
          if (slice_bits[i]) {
            sample.mask.bits[d * HW + i] = 1;
            if (t.visible[d]) sample.image[d * HW + i] = clamp01(t.intensity);
          }
        }
      }
    }
    data.push_back(std::move(sample));
  }
  return data;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("split: train_fraction must be in (0,1)");
  }
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.index(i)]);
  }
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(data[idx[i]]);
  }
  return out;
}

// ---- file format -------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

json shape_to_json(const ShapeParams& s) {
  json j;
  j["kind"] = s.kind;
  j["target"] = s.target;
  j["intensity"] = s.intensity;
  j["angle"] = s.angle;
  j["radii"] = s.radii;
  j["centers"] = s.centers;
  j["lobes"] = s.lobes;
  j["visible"] = s.visible;
  return j;
}

ShapeParams shape_from_json(const json& j) {
  ShapeParams s;
  s.kind = j.at("kind").get<std::string>();
  s.target = j.at("target").get<bool>();
  s.intensity = j.at("intensity").get<double>();
  s.angle = j.at("angle").get<double>();
  s.radii = j.at("radii").get<std::array<double, 2>>();
  s.centers = j.at("centers").get<std::vector<std::array<double, 2>>>();
  s.lobes = j.at("lobes").get<std::vector<std::array<double, 4>>>();
  s.visible = j.at("visible").get<std::vector<std::uint8_t>>();
  return s;
}

json spec_to_json(const SynthSpec& s) {
  json j;
  j["extent"] = s.extent;
  j["depth"] = s.depth;
  j["count"] = s.count;
  j["seed"] = s.seed;
  j["decoys"] = s.decoys;
  j["clutter"] = s.clutter;
  j["noise"] = s.noise;
  j["low_contrast"] = s.low_contrast;
  j["drift"] = s.drift;
  j["slice_decoys"] = s.slice_decoys;
  j["invisible_frac"] = s.invisible_frac;
  return j;
}

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  s.extent = j.at("extent").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.count = j.at("count").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.decoys = j.at("decoys").get<int>();
  s.clutter = j.at("clutter").get<int>();
  s.noise = j.at("noise").get<double>();
  s.low_contrast = j.at("low_contrast").get<bool>();
  s.drift = j.at("drift").get<double>();
  s.slice_decoys = j.at("slice_decoys").get<int>();
  s.invisible_frac = j.at("invisible_frac").get<double>();
  return s;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::string out((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return out;
}

}  // namespace

void write_dataset(const std::string& dir, const SynthSpec& spec, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::string images, masks;
  json samples = json::array();
  for (const auto& s : data) {
    json rec;
    rec["image_offset"] = images.size();
    for (double v : s.image) {
      const float fv = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &fv, 4);
      put_u32(images, bits);
    }
    rec["image_bytes"] = images.size() - rec["image_offset"].get<std::size_t>();
    rec["mask_offset"] = masks.size();
    std::uint8_t acc = 0;
    int nbits = 0;
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      acc |= static_cast<std::uint8_t>((s.mask.bits[i] & 1) << nbits);
      if (++nbits == 8) {
        masks.push_back(static_cast<char>(acc));
        acc = 0;
        nbits = 0;
      }
    }
    if (nbits) masks.push_back(static_cast<char>(acc));
    rec["mask_bytes"] = masks.size() - rec["mask_offset"].get<std::size_t>();
    json shapes = json::array();
    for (const auto& sh : s.shapes) shapes.push_back(shape_to_json(sh));
    rec["shapes"] = shapes;
    samples.push_back(std::move(rec));
  }
  json manifest;
  manifest["version"] = 1;
  manifest["spec"] = spec_to_json(spec);
  manifest["samples"] = samples;
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
  write_file(dir + "/images.f32", images);
  write_file(dir + "/masks.bit", masks);
}

LoadedDataset load_dataset(const std::string& dir) {
  const json manifest = json::parse(read_file(dir + "/manifest.json"));
  if (manifest.at("version").get<int>() != 1) {
    throw DataError("unsupported dataset manifest version");
  }
  LoadedDataset out;
  out.spec = spec_from_json(manifest.at("spec"));
  const std::string images = read_file(dir + "/images.f32");
  const std::string masks = read_file(dir + "/masks.bit");
  const bool is3d = out.spec.depth > 1;
  const std::size_t voxels = out.spec.depth * out.spec.extent * out.spec.extent;
  for (const auto& rec : manifest.at("samples")) {
    SynthSample s;
    const std::size_t ioff = rec.at("image_offset").get<std::size_t>();
    s.image.resize(voxels);
    for (std::size_t i = 0; i < voxels; ++i) {
      const std::uint32_t bits = get_u32(images, ioff + 4 * i);
      float fv;
      std::memcpy(&fv, &bits, 4);
      s.image[i] = static_cast<double>(fv);
    }
    s.mask = BinaryMask(is3d
                            ? std::vector<std::size_t>{out.spec.depth, out.spec.extent, out.spec.extent}
                            : std::vector<std::size_t>{out.spec.extent, out.spec.extent});
    const std::size_t moff = rec.at("mask_offset").get<std::size_t>();
    for (std::size_t i = 0; i < voxels; ++i) {
      const auto byte = static_cast<std::uint8_t>(masks[moff + i / 8]);
      s.mask.bits[i] = (byte >> (i % 8)) & 1;
    }
    for (const auto& sj : rec.at("shapes")) s.shapes.push_back(shape_from_json(sj));
    out.data.push_back(std::move(s));
  }
  return out;
}

}  // namespace pseg
