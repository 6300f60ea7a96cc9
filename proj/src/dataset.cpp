#include "partmem/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "partmem/errors.hpp"

namespace partmem::io {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'M', 'F'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr const char* kManifestHeader = "sample_id,identity,camera,split,source";

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& what,
                       const std::filesystem::path& path) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4))
    throw DataError(path.string() + ": truncated while reading " + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::gallery: return "gallery";
    case Split::query: return "query";
  }
  return "train";
}

Split parse_split(const std::string& token) {
  if (token == "train") return Split::train;
  if (token == "gallery") return Split::gallery;
  if (token == "query") return Split::query;
  throw DataError("unknown split token '" + token + "'");
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw DataError(path.string() + ": line 1: header must be '" +
                    std::string(kManifestHeader) + "'");

  std::vector<SampleRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    if (fields.size() != 5)
      throw DataError(where + ": expected 5 fields, got " + std::to_string(fields.size()));
    SampleRecord rec;
    rec.sample_id = fields[0];
    rec.identity = fields[1];
    rec.camera = fields[2];
    rec.source = fields[4];
    if (rec.sample_id.empty()) throw DataError(where + ": field sample_id is empty");
    if (rec.identity.empty()) throw DataError(where + ": field identity is empty");
    if (rec.camera.empty()) throw DataError(where + ": field camera is empty");
    try {
      rec.split = parse_split(fields[3]);
    } catch (const DataError& e) {
      throw DataError(where + ": field split: " + e.what());
    }
    if (!seen.insert(rec.sample_id).second)
      throw DataError(where + ": duplicate sample_id '" + rec.sample_id + "'");
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError(path.string() + ": manifest has no records");
  return records;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<SampleRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : records)
    out << r.sample_id << ',' << r.identity << ',' << r.camera << ','
        << split_name(r.split) << ',' << r.source << '\n';
  if (!out) throw DataError("write failed for manifest " + path.string());
}

TensorBlob read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw DataError(path.string() + ": truncated magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path.string() + ": bad magic, not a feature file");
  const std::uint32_t version = read_u32(in, "version", path);
  if (version != kFormatVersion)
    throw DataError(path.string() + ": unsupported format version " +
                    std::to_string(version));
  const std::uint32_t rank = read_u32(in, "rank", path);
  if (rank == 0) throw DataError(path.string() + ": rank 0 tensor rejected");
  TensorBlob blob;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = read_u32(in, "dimension", path);
    if (d == 0) throw DataError(path.string() + ": zero-sized dimension");
    blob.shape.push_back(d);
    count *= d;
  }
  blob.values.resize(count);
  if (!in.read(reinterpret_cast<char*>(blob.values.data()),
               static_cast<std::streamsize>(count * sizeof(double))))
    throw DataError(path.string() + ": truncated payload, expected " +
                    std::to_string(count) + " doubles");
  in.peek();
  if (!in.eof())
    throw DataError(path.string() + ": trailing bytes after payload");
  return blob;
}

void write_feature_file(const std::filesystem::path& path, const TensorBlob& blob) {
  if (blob.shape.empty()) throw DataError("refusing to write rank 0 tensor");
  std::size_t count = 1;
  for (std::size_t d : blob.shape) {
    if (d == 0) throw DataError("refusing to write zero-sized dimension");
    count *= d;
  }
  if (count != blob.values.size())
    throw DataError("shape/element-count disagreement: shape has " +
                    std::to_string(count) + ", payload has " +
                    std::to_string(blob.values.size()));
  for (double v : blob.values)
    if (!std::isfinite(v)) throw DataError("refusing to write non-finite value");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write(kMagic, 4);
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
  for (std::size_t d : blob.shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(blob.values.data()),
            static_cast<std::streamsize>(blob.values.size() * sizeof(double)));
  if (!out) throw DataError("write failed for feature file " + path.string());
}

SynthResult synth_generate(const SyntheticSpec& spec,
                           const std::filesystem::path& out_dir) {
  if (spec.num_identities < 2) throw DataError("synthetic spec needs at least 2 identities");
  if (spec.intra_spread < 0 || spec.camera_shift < 0)
    throw DataError("synthetic spreads must be nonnegative");
  if (spec.num_cameras < 1) throw DataError("synthetic spec needs at least 1 camera");
  if (spec.train_per_identity + spec.gallery_per_identity > spec.samples_per_identity)
    throw DataError("train + gallery exceeds samples per identity");

  std::filesystem::create_directories(out_dir / "features");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  const std::size_t dim = spec.feature_dim;
  std::vector<std::vector<double>> centers(spec.num_identities,
                                           std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = unit(rng);

  std::vector<std::vector<double>> camera_offsets(spec.num_cameras,
                                                  std::vector<double>(dim, 0.0));
  for (auto& off : camera_offsets) {
    double sq = 0.0;
    for (double& v : off) {
      v = unit(rng);
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > 0.0)
      for (double& v : off) v = v / norm * spec.camera_shift;
  }

  SynthResult result;
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    std::ostringstream id_name;
    id_name << "id" << std::setw(3) << std::setfill('0') << id;
    for (std::size_t s = 0; s < spec.samples_per_identity; ++s) {
      const std::size_t cam = s % spec.num_cameras;
      std::vector<double> x(dim);
      for (std::size_t d = 0; d < dim; ++d)
        x[d] = centers[id][d] + spec.intra_spread * unit(rng) + camera_offsets[cam][d];

      SampleRecord rec;
      {
        std::ostringstream sid;
        sid << id_name.str() << "_s" << std::setw(3) << std::setfill('0') << s;
        rec.sample_id = sid.str();
      }
      rec.identity = id_name.str();
      rec.camera = "cam" + std::to_string(cam);
      if (s < spec.train_per_identity)
        rec.split = Split::train;
      else if (s < spec.train_per_identity + spec.gallery_per_identity)
        rec.split = Split::gallery;
      else
        rec.split = Split::query;
      rec.source = "features/" + rec.sample_id + ".pamf";
      write_feature_file(out_dir / rec.source, TensorBlob{{dim}, x});
      result.records.push_back(std::move(rec));
    }
  }
  result.manifest = out_dir / "manifest.csv";
  write_manifest(result.manifest, result.records);
  return result;
}

std::vector<LoadedSample> load_samples(const std::filesystem::path& manifest_path,
                                       const std::vector<SampleRecord>& records) {
  const auto base = manifest_path.parent_path();
  std::vector<LoadedSample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    LoadedSample s;
    s.record = rec;
    s.features = read_feature_file(base / rec.source);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace partmem::io
