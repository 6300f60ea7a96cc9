#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace partmem::io {

enum class Split { train, gallery, query };

std::string split_name(Split s);
Split parse_split(const std::string& token);

struct SampleRecord {
  std::string sample_id;
  std::string identity;
  std::string camera;
  Split split = Split::train;
  std::string source;  // feature file path, relative to the manifest directory
};

// CSV with header `sample_id,identity,camera,split,source`. Malformed rows
// are rejected naming the line and field; duplicate sample ids are rejected.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<SampleRecord>& records);

// Little-endian binary tensor container: magic "PAMF", version u32, rank u32,
// dims u32 x rank, payload f64 x product(dims).
struct TensorBlob {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

TensorBlob read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const TensorBlob& blob);

// Desk-scale stand-in for a real dataset: per identity a Gaussian cluster
// center, per sample center + N(0, intra_spread^2) noise + a fixed per-camera
// offset of norm camera_shift. Cameras rotate round-robin within an identity.
struct SyntheticSpec {
  std::size_t num_identities = 20;
  std::size_t samples_per_identity = 20;
  std::size_t num_cameras = 4;
  double intra_spread = 0.05;
  double camera_shift = 0.1;
  std::uint64_t seed = 1;
  std::size_t feature_dim = 256;
  std::size_t train_per_identity = 12;
  std::size_t gallery_per_identity = 4;
};

struct SynthResult {
  std::filesystem::path manifest;
  std::vector<SampleRecord> records;
};

SynthResult synth_generate(const SyntheticSpec& spec,
                           const std::filesystem::path& out_dir);

// Sample with its feature payload loaded (rank-1 vector in toy mode, rank-3
// map in precomputed mode).
struct LoadedSample {
  SampleRecord record;
  TensorBlob features;
};

std::vector<LoadedSample> load_samples(const std::filesystem::path& manifest_path,
                                       const std::vector<SampleRecord>& records);

}  // namespace partmem::io
