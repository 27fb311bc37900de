#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pseg/synth_data.hpp"

using namespace pseg;

namespace {

// independent rasterization oracle reading only the recorded parameters
bool oracle_inside(const ShapeParams& s, std::size_t slice, double r, double c) {
  const double dr = r - s.centers[slice][0];
  const double dc = c - s.centers[slice][1];
  if (s.kind == "rect") {
    return std::abs(dr) <= s.radii[0] && std::abs(dc) <= s.radii[1];
  }
  auto in_ell = [](double yr, double yc, double rr, double rc, double ang) {
    const double u = (yr * std::cos(ang) + yc * std::sin(ang)) / rr;
    const double v = (-yr * std::sin(ang) + yc * std::cos(ang)) / rc;
    return u * u + v * v <= 1.0;
  };
  if (in_ell(dr, dc, s.radii[0], s.radii[1], s.angle)) return true;
  if (s.kind == "blob") {
    for (const auto& lobe : s.lobes) {
      if (in_ell(dr - lobe[0], dc - lobe[1], lobe[2], lobe[3], 0.0)) return true;
    }
  }
  return false;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is bitwise deterministic per seed") {
  SynthSpec spec;
  spec.extent = 32;
  spec.count = 6;
  spec.seed = 123;
  spec.decoys = 1;
  Dataset a = gen_dataset(spec);
  Dataset b = gen_dataset(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
  }
  spec.seed = 124;
  Dataset c = gen_dataset(spec);
  CHECK(a[0].image != c[0].image);
}

TEST_CASE("every mask is nonempty, 2D and 3D") {
  SynthSpec spec;
  spec.extent = 32;
  spec.count = 24;
  spec.seed = 7;
  for (auto depth : {std::size_t{1}, std::size_t{6}}) {
    spec.depth = depth;
    spec.drift = depth > 1 ? 1.5 : 0.0;
    for (const auto& s : gen_dataset(spec)) {
      CHECK_FALSE(s.mask.empty_mask());
      for (double v : s.image) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("masks equal the analytic rasterization of the recorded target shapes") {
  SynthSpec spec;
  spec.extent = 24;
  spec.depth = 3;
  spec.count = 8;
  spec.seed = 99;
  spec.drift = 1.0;
  spec.decoys = 1;
  for (const auto& s : gen_dataset(spec)) {
    BinaryMask oracle({3, 24, 24});
    for (const auto& shape : s.shapes) {
      if (!shape.target) continue;
      for (std::size_t d = 0; d < 3; ++d) {
        for (std::size_t r = 0; r < 24; ++r) {
          for (std::size_t c = 0; c < 24; ++c) {
            if (oracle_inside(shape, d, double(r), double(c))) {
              oracle.bits[(d * 24 + r) * 24 + c] = 1;
            }
          }
        }
      }
    }
    CHECK(oracle == s.mask);
  }
}

TEST_CASE("low-contrast mode pins the intensity gap at 0.1") {
  SynthSpec spec;
  spec.extent = 32;
  spec.count = 6;
  spec.seed = 5;
  spec.noise = 0.0;
  spec.clutter = 0;
  spec.low_contrast = true;
  for (const auto& s : gen_dataset(spec)) {
    double in_mean = 0, out_mean = 0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      if (s.mask.bits[i]) {
        in_mean += s.image[i];
        ++n_in;
      } else {
        out_mean += s.image[i];
        ++n_out;
      }
    }
    in_mean /= double(n_in);
    out_mean /= double(n_out);
    CHECK(in_mean - out_mean == doctest::Approx(0.1).epsilon(1e-9));
  }
}

TEST_CASE("split is exact, disjoint, exhaustive, seeded") {
  SynthSpec spec;
  spec.extent = 16;
  spec.count = 10;
  spec.seed = 3;
  Dataset data = gen_dataset(spec);
  auto [train, test] = split(data, 0.5, 11);
  CHECK(train.size() == 5);
  CHECK(test.size() == 5);

  // union equals the dataset (match by image payload)
  std::vector<std::vector<double>> all;
  for (const auto& s : train) all.push_back(s.image);
  for (const auto& s : test) all.push_back(s.image);
  for (const auto& s : data) {
    CHECK(std::count(all.begin(), all.end(), s.image) == 1);
  }

  auto [train2, test2] = split(data, 0.5, 11);
  for (std::size_t i = 0; i < train.size(); ++i) CHECK(train[i].image == train2[i].image);

  CHECK_THROWS_AS(split(data, 0.0, 0), DataError);
  CHECK_THROWS_AS(split(data, 1.0, 0), DataError);
}

TEST_CASE("dataset files round-trip and regenerate bitwise") {
  const std::string dir = std::filesystem::temp_directory_path() / "pseg_synth_test";
  std::filesystem::remove_all(dir);
  SynthSpec spec;
  spec.extent = 32;
  spec.depth = 8;
  spec.count = 3;
  spec.seed = 21;
  spec.drift = 1.0;
  Dataset data = gen_dataset(spec);
  write_dataset(dir, spec, data);
  const std::string m1 = slurp(dir + "/manifest.json");
  const std::string i1 = slurp(dir + "/images.f32");
  const std::string k1 = slurp(dir + "/masks.bit");

  // per-sample mask payload: ceil(8*32*32 / 8) bytes
  CHECK(k1.size() == 3 * (8 * 32 * 32 / 8));
  CHECK(i1.size() == 3 * (8 * 32 * 32 * 4));

  write_dataset(dir, spec, gen_dataset(spec));
  CHECK(slurp(dir + "/manifest.json") == m1);
  CHECK(slurp(dir + "/images.f32") == i1);
  CHECK(slurp(dir + "/masks.bit") == k1);

  LoadedDataset loaded = load_dataset(dir);
  CHECK(loaded.spec.seed == spec.seed);
  CHECK(loaded.spec.depth == spec.depth);
  REQUIRE(loaded.data.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(loaded.data[i].mask == data[i].mask);
    REQUIRE(loaded.data[i].image.size() == data[i].image.size());
    for (std::size_t j = 0; j < data[i].image.size(); ++j) {
      // images persist as float32
      CHECK(loaded.data[i].image[j] == double(float(data[i].image[j])));
    }
    CHECK(loaded.data[i].shapes.size() == data[i].shapes.size());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("decoys share the target's look and keep their distance") {
  SynthSpec spec;
  spec.extent = 64;
  spec.count = 12;
  spec.seed = 31;
  spec.decoys = 1;
  spec.clutter = 0;
  for (const auto& s : gen_dataset(spec)) {
    const ShapeParams* target = nullptr;
    const ShapeParams* decoy = nullptr;
    for (const auto& sh : s.shapes) {
      if (sh.target) {
        target = &sh;
      } else {
        decoy = &sh;
      }
    }
    REQUIRE(target != nullptr);
    if (!decoy) continue;  // placement can fail on crowded draws
    CHECK(decoy->intensity == target->intensity);
    const double dr = decoy->centers[0][0] - target->centers[0][0];
    const double dc = decoy->centers[0][1] - target->centers[0][1];
    CHECK(std::sqrt(dr * dr + dc * dc) > 6.0);
  }
}
