#include "eyecue/checkpoint.hpp"

#include "eyecue/image_io.hpp"

namespace eyecue {

namespace {

constexpr char kMagic[8] = {'E', 'Y', 'E', 'C', 'U', 'E', 'C', 'K'};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError("checkpoint: truncated file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return le::get_u32(take(4)); }
  std::uint64_t u64() { return le::get_u64(take(8)); }
  std::string str(std::size_t n) { return std::string(reinterpret_cast<const char*>(take(n)), n); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelConfig& config, const ParamStore<float>& params) {
  const ParamStore<float> expected = declare_model_params<float>(config);
  if (expected.size() != params.size()) {
    throw ValidationError("checkpoint: " + std::to_string(params.size()) + " arrays, config implies " +
                          std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& want = expected.at(i);
    const auto& got = params.at(i);
    if (want.name != got.name || want.value.rows() != got.value.rows() || want.value.cols() != got.value.cols()) {
      throw ValidationError("checkpoint: parameter '" + got.name + "' does not match the config's '" + want.name +
                            "' (" + std::to_string(want.value.rows()) + "x" + std::to_string(want.value.cols()) +
                            ")");
    }
  }
  std::string out(kMagic, sizeof(kMagic));
  le::put_u32(out, kCheckpointSchemaVersion);
  const std::string cfg = to_json(config).dump();
  le::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  le::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params) {
    le::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    le::put_u32(out, 2);
    le::put_u64(out, static_cast<std::uint64_t>(e.value.rows()));
    le::put_u64(out, static_cast<std::uint64_t>(e.value.cols()));
    for (Eigen::Index i = 0; i < e.value.size(); ++i) le::put_f32(out, e.value.data()[i]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ValidationError("checkpoint: bad magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointSchemaVersion) {
    throw ValidationError("checkpoint: unsupported schema version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t cfg_len = r.u32();
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(r.str(cfg_len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: config is not valid JSON: ") + e.what());
  }
  ck.config = model_config_from_json(cfg);
  ck.params = declare_model_params<float>(ck.config);

  const std::uint32_t count = r.u32();
  if (count != ck.params.size()) {
    throw ValidationError("checkpoint: " + std::to_string(count) + " arrays, config implies " +
                          std::to_string(ck.params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw ValidationError("checkpoint: array '" + name + "' has rank " + std::to_string(rank));
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    MatrixF& dst = ck.params.get(name);
    if (static_cast<std::uint64_t>(dst.rows()) != rows || static_cast<std::uint64_t>(dst.cols()) != cols) {
      throw ValidationError("checkpoint: array '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + std::to_string(dst.rows()) + "x" +
                            std::to_string(dst.cols()));
    }
    const unsigned char* p = r.take(static_cast<std::size_t>(rows * cols * 4));
    for (std::uint64_t k = 0; k < rows * cols; ++k) dst.data()[k] = le::get_f32(p + 4 * k);
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamStore<float>& params) {
  write_file_bytes(path, serialize_checkpoint(config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace eyecue
