#include "partmem/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "partmem/errors.hpp"

namespace partmem::io {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kSectionTensor = 0;
constexpr std::uint8_t kSectionStrings = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;
  std::string where;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw DataError(where + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string encode_tensor(const TensorBlob& blob) {
  std::string buf;
  buf.append("PAMF", 4);
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(blob.shape.size()));
  std::size_t count = 1;
  for (std::size_t d : blob.shape) {
    put_u32(buf, static_cast<std::uint32_t>(d));
    count *= d;
  }
  if (count != blob.values.size())
    throw DataError("checkpoint tensor shape/element-count disagreement");
  const char* raw = reinterpret_cast<const char*>(blob.values.data());
  buf.append(raw, blob.values.size() * sizeof(double));
  return buf;
}

TensorBlob decode_tensor(const std::string& payload, const std::string& name) {
  Reader r{payload, 0, "section " + name};
  const std::string magic = r.bytes(4);
  if (magic != "PAMF") throw DataError("section " + name + ": bad tensor magic");
  if (r.u32() != 1) throw DataError("section " + name + ": bad tensor version");
  const std::uint32_t rank = r.u32();
  if (rank == 0) throw DataError("section " + name + ": rank 0 tensor");
  TensorBlob blob;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    blob.shape.push_back(d);
    count *= d;
  }
  const std::string raw = r.bytes(count * sizeof(double));
  blob.values.resize(count);
  std::memcpy(blob.values.data(), raw.data(), raw.size());
  if (r.pos != payload.size())
    throw DataError("section " + name + ": trailing bytes in tensor payload");
  return blob;
}

std::string encode_strings(const std::vector<std::string>& items) {
  std::string buf;
  put_u32(buf, static_cast<std::uint32_t>(items.size()));
  for (const auto& s : items) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
  }
  return buf;
}

std::vector<std::string> decode_strings(const std::string& payload,
                                        const std::string& name) {
  Reader r{payload, 0, "section " + name};
  const std::uint32_t n = r.u32();
  std::vector<std::string> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.bytes(r.u32()));
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, std::pair<std::uint8_t, std::string>>> sections;
  auto add_tensor = [&](const std::string& name, const TensorBlob& blob) {
    sections.emplace_back(name, std::make_pair(kSectionTensor, encode_tensor(blob)));
  };

  add_tensor("epoch", TensorBlob{{1}, {static_cast<double>(ckpt.epoch)}});
  const ModelDims& d = ckpt.dims;
  add_tensor("dims",
             TensorBlob{{8},
                        {static_cast<double>(d.height), static_cast<double>(d.width),
                         static_cast<double>(d.channels), static_cast<double>(d.p1),
                         static_cast<double>(d.p2), static_cast<double>(d.input_dim),
                         static_cast<double>(d.patches),
                         static_cast<double>(d.patch_embed)}});
  for (const auto& p : ckpt.params)
    add_tensor("param:" + p.name, TensorBlob{p.shape, p.values});
  for (const auto& v : ckpt.velocities)
    add_tensor("vel:" + v.name, TensorBlob{v.shape, v.values});
  if (ckpt.bank) {
    const MemoryBank& bank = *ckpt.bank;
    add_tensor("bank:slots", TensorBlob{{bank.images(), bank.parts(), bank.channels()},
                                        bank.raw_slots()});
    std::vector<double> flags(bank.raw_flags().begin(), bank.raw_flags().end());
    add_tensor("bank:init", TensorBlob{{bank.images(), bank.parts()}, flags});
    add_tensor("bank:delta", TensorBlob{{1}, {ckpt.bank_delta}});
    add_tensor("bank:normalize",
               TensorBlob{{1}, {bank.normalize_slots() ? 1.0 : 0.0}});
    sections.emplace_back(
        "bank:ids", std::make_pair(kSectionStrings, encode_strings(bank.identities())));
  }

  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, typed] : sections) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(typed.first));
    put_u64(buf, typed.second.size());
    buf.append(typed.second);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();

  Reader r{data, 0, path.string()};
  if (r.bytes(4) != "PAMC") throw DataError(path.string() + ": bad checkpoint magic");
  if (r.u32() != kVersion)
    throw DataError(path.string() + ": unsupported checkpoint version");
  const std::uint32_t count = r.u32();

  std::map<std::string, std::pair<std::uint8_t, std::string>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    const std::uint8_t type = r.u8();
    const std::uint64_t len = r.u64();
    sections[name] = {type, r.bytes(len)};
  }
  if (r.pos != data.size())
    throw DataError(path.string() + ": trailing bytes after sections");

  auto tensor = [&](const std::string& name) -> TensorBlob {
    auto it = sections.find(name);
    if (it == sections.end())
      throw DataError(path.string() + ": missing section '" + name + "'");
    if (it->second.first != kSectionTensor)
      throw DataError(path.string() + ": section '" + name + "' is not a tensor");
    return decode_tensor(it->second.second, name);
  };

  Checkpoint ckpt;
  ckpt.epoch = static_cast<std::uint32_t>(tensor("epoch").values.at(0));
  {
    const auto dims = tensor("dims").values;
    if (dims.size() != 8) throw DataError(path.string() + ": dims section malformed");
    ckpt.dims.height = static_cast<std::size_t>(dims[0]);
    ckpt.dims.width = static_cast<std::size_t>(dims[1]);
    ckpt.dims.channels = static_cast<std::size_t>(dims[2]);
    ckpt.dims.p1 = static_cast<std::size_t>(dims[3]);
    ckpt.dims.p2 = static_cast<std::size_t>(dims[4]);
    ckpt.dims.input_dim = static_cast<std::size_t>(dims[5]);
    ckpt.dims.patches = static_cast<std::size_t>(dims[6]);
    ckpt.dims.patch_embed = static_cast<std::size_t>(dims[7]);
  }
  for (const auto& [name, typed] : sections) {
    if (name.rfind("param:", 0) == 0) {
      TensorBlob blob = decode_tensor(typed.second, name);
      ckpt.params.push_back({name.substr(6), blob.shape, blob.values});
    } else if (name.rfind("vel:", 0) == 0) {
      TensorBlob blob = decode_tensor(typed.second, name);
      ckpt.velocities.push_back({name.substr(4), blob.shape, blob.values});
    }
  }
  if (sections.count("bank:slots") != 0) {
    auto ids_it = sections.find("bank:ids");
    if (ids_it == sections.end())
      throw DataError(path.string() + ": bank slots without bank ids");
    const auto ids = decode_strings(ids_it->second.second, "bank:ids");
    const TensorBlob slots = tensor("bank:slots");
    const TensorBlob init = tensor("bank:init");
    if (slots.shape.size() != 3 || slots.shape[0] != ids.size())
      throw DataError(path.string() + ": bank slot shape disagrees with id table");
    const bool normalize = tensor("bank:normalize").values.at(0) != 0.0;
    MemoryBank bank(ids, slots.shape[1], slots.shape[2], normalize);
    std::vector<char> flags(init.values.size());
    for (std::size_t i = 0; i < flags.size(); ++i)
      flags[i] = init.values[i] != 0.0 ? 1 : 0;
    bank.restore(slots.values, std::move(flags));
    ckpt.bank = std::move(bank);
    ckpt.bank_delta = tensor("bank:delta").values.at(0);
  }
  return ckpt;
}

PartModel build_model(const Checkpoint& ckpt) {
  PartModel model(ckpt.dims, 0);
  std::unordered_map<std::string, const ParamTensor*> by_name;
  for (const auto& p : ckpt.params) by_name[p.name] = &p;
  for (auto* p : model.all_params()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw DataError("checkpoint missing parameter '" + p->name + "'");
    if (it->second->shape != p->shape)
      throw DataError("checkpoint parameter '" + p->name + "' has wrong shape");
    p->values = it->second->values;
  }
  return model;
}

}  // namespace partmem::io
