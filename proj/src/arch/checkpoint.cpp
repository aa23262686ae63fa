#include "arch/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "config/serde.hpp"

namespace tbsn {

namespace {

constexpr char kMagic[8] = {'T', 'B', 'S', 'N', 'C', 'K', 'P', 'T'};

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParameterStore<T>& store) {
  nlohmann::json manifest{{"format_version", kCheckpointVersion},
                          {"kind", meta.kind},
                          {"config", meta.config},
                          {"seed", meta.seed},
                          {"iteration", meta.iteration},
                          {"metrics", meta.metrics}};
  nlohmann::json params = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : store.all()) {
    const uint64_t nbytes = p->size() * sizeof(float);
    params.push_back({{"name", p->name},
                      {"shape", p->shape},
                      {"offset", offset},
                      {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["params"] = std::move(params);
  const std::string text = manifest.dump();

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open checkpoint for writing", path);
  const uint32_t version = kCheckpointVersion;
  const uint64_t mlen = text.size();
  if (std::fwrite(kMagic, 1, 8, fp.get()) != 8 ||
      std::fwrite(&version, sizeof(version), 1, fp.get()) != 1 ||
      std::fwrite(&mlen, sizeof(mlen), 1, fp.get()) != 1 ||
      std::fwrite(text.data(), 1, text.size(), fp.get()) != text.size())
    fail("short write on checkpoint header", path);
  std::vector<float> buf;
  for (const auto& p : store.all()) {
    buf.resize(p->size());
    for (size_t i = 0; i < p->size(); ++i) buf[i] = static_cast<float>(p->value[i]);
    if (std::fwrite(buf.data(), sizeof(float), buf.size(), fp.get()) != buf.size())
      fail("short write on checkpoint blob", path);
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open checkpoint", path);
  char magic[8];
  uint32_t version = 0;
  uint64_t mlen = 0;
  if (std::fread(magic, 1, 8, fp.get()) != 8 || std::memcmp(magic, kMagic, 8) != 0)
    fail("not a checkpoint file", path);
  if (std::fread(&version, sizeof(version), 1, fp.get()) != 1)
    fail("truncated checkpoint header", path);
  if (version != kCheckpointVersion)
    fail("unsupported checkpoint format version " + std::to_string(version), path);
  if (std::fread(&mlen, sizeof(mlen), 1, fp.get()) != 1)
    fail("truncated checkpoint header", path);
  std::string text(mlen, '\0');
  if (std::fread(text.data(), 1, mlen, fp.get()) != mlen)
    fail("truncated checkpoint manifest", path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(std::string("checkpoint manifest is not valid JSON (") + e.what() + ")", path);
  }

  LoadedCheckpoint out;
  out.meta.kind = manifest.at("kind").get<std::string>();
  out.meta.config = manifest.at("config");
  out.meta.seed = manifest.at("seed").get<uint64_t>();
  out.meta.iteration = manifest.at("iteration").get<int64_t>();
  out.meta.metrics = manifest.value("metrics", nlohmann::json::object());

  const long blob_start = std::ftell(fp.get());
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    LoadedParam lp;
    lp.shape = p.at("shape").get<std::vector<int>>();
    const uint64_t offset = p.at("offset").get<uint64_t>();
    const uint64_t nbytes = p.at("nbytes").get<uint64_t>();
    if (nbytes % sizeof(float) != 0) fail("parameter blob not float-aligned", path);
    lp.values.resize(nbytes / sizeof(float));
    if (std::fseek(fp.get(), blob_start + static_cast<long>(offset), SEEK_SET) != 0 ||
        std::fread(lp.values.data(), 1, nbytes, fp.get()) != nbytes)
      fail("truncated checkpoint blob for " + name, path);
    out.params.emplace(name, std::move(lp));
  }
  return out;
}

template <typename T>
void apply_params(const LoadedCheckpoint& ckpt, ParameterStore<T>& store) {
  for (auto& p : store.all()) {
    const auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end())
      throw std::runtime_error("checkpoint is missing parameter " + p->name);
    if (it->second.shape != p->shape || it->second.values.size() != p->size())
      throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    for (size_t i = 0; i < p->size(); ++i)
      p->value[i] = static_cast<T>(it->second.values[i]);
  }
}

template <typename T>
std::unique_ptr<TBSNModel<T>> load_tbsn_model(const std::string& path,
                                              CheckpointMeta* meta_out) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.kind != "tbsn")
    throw std::runtime_error("checkpoint kind is \"" + ckpt.meta.kind +
                             "\", expected \"tbsn\": " + path);
  const TBSNConfig cfg = tbsn_config_from_json(ckpt.meta.config);
  auto model = TBSNModel<T>::build(cfg, ckpt.meta.seed);
  apply_params(ckpt, model->store);
  if (meta_out) *meta_out = ckpt.meta;
  return model;
}

template <typename T>
std::unique_ptr<StudentModel<T>> load_student_model(const std::string& path,
                                                    CheckpointMeta* meta_out) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.kind != "student")
    throw std::runtime_error("checkpoint kind is \"" + ckpt.meta.kind +
                             "\", expected \"student\": " + path);
  const StudentUNetConfig cfg = student_config_from_json(ckpt.meta.config);
  auto model = StudentModel<T>::build(cfg, ckpt.meta.seed);
  apply_params(ckpt, model->store);
  if (meta_out) *meta_out = ckpt.meta;
  return model;
}

template void save_checkpoint<float>(const std::string&, const CheckpointMeta&,
                                     const ParameterStore<float>&);
template void save_checkpoint<double>(const std::string&, const CheckpointMeta&,
                                      const ParameterStore<double>&);
template void apply_params<float>(const LoadedCheckpoint&, ParameterStore<float>&);
template void apply_params<double>(const LoadedCheckpoint&, ParameterStore<double>&);
template std::unique_ptr<TBSNModel<float>> load_tbsn_model<float>(const std::string&,
                                                                  CheckpointMeta*);
template std::unique_ptr<TBSNModel<double>> load_tbsn_model<double>(const std::string&,
                                                                    CheckpointMeta*);
template std::unique_ptr<StudentModel<float>> load_student_model<float>(const std::string&,
                                                                        CheckpointMeta*);
template std::unique_ptr<StudentModel<double>> load_student_model<double>(
    const std::string&, CheckpointMeta*);

}  // namespace tbsn
