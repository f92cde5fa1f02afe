#include "mst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mst/errors.hpp"

namespace mst {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof v);
  }
  void bytes(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  template <typename T>
  void tensor(const std::string& name, const Shape& shape, std::span<const T> data) {
    bytes(name);
    put(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put(static_cast<std::uint32_t>(e));
    for (T v : data) put(static_cast<float>(v));
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string bytes() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void write_file(const std::filesystem::path& path, const std::string& data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Writer header(const RunConfig& config, std::uint64_t step, std::uint64_t adam_steps, const RngState& rng) {
  Writer w;
  w.put('M');
  w.put('S');
  w.put('C');
  w.put('K');
  w.put(kCheckpointVersion);
  w.bytes(format_run_config(config));
  w.put(step);
  w.put(adam_steps);
  w.put(rng.seed);
  w.put(rng.counter);
  return w;
}

void check_tensor(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
  const RawTensor* t = ckpt.find(name);
  if (t == nullptr) throw CompatibilityError("checkpoint lacks tensor " + name);
  if (t->shape != shape) {
    throw CompatibilityError("checkpoint tensor " + name + " has shape " + shape_str(t->shape) + ", model expects " +
                             shape_str(shape));
  }
}

template <typename T>
void copy_into(const RawTensor& src, std::span<T> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
}

}  // namespace

const RawTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer, const RunConfig& config) {
  RunConfig echo = config;
  echo.model = trainer.model().config();
  echo.train = trainer.config();
  Writer w = header(echo, trainer.step_count(), trainer.adam().steps(), trainer.rng());
  const auto& params = trainer.adam().parameters();
  const auto& adam = trainer.adam();
  w.put(static_cast<std::uint32_t>(params.size() * 3));
  for (const auto& p : params) w.tensor<float>(p.name, p.value.shape(), p.value.data());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.tensor<float>("adam.m." + params[i].name, params[i].value.shape(), std::span<const float>(adam.first_moments()[i]));
    w.tensor<float>("adam.v." + params[i].name, params[i].value.shape(), std::span<const float>(adam.second_moments()[i]));
  }
  write_file(path, w.str());
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const LossParams<float>& loss_params,
                     const RunConfig& config) {
  RunConfig echo = config;
  echo.model = model.config();
  Writer w = header(echo, 0, 0, RngState{});
  const auto loss = loss_params.parameters();
  w.put(static_cast<std::uint32_t>(model.parameters().size() + loss.size()));
  for (const auto& p : model.parameters()) w.tensor<float>(p.name, p.value.shape(), p.value.data());
  for (const auto& p : loss) w.tensor<float>(p.name, p.value.shape(), p.value.data());
  write_file(path, w.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{}));

  Checkpoint c;
  char magic[4];
  for (char& ch : magic) ch = r.get<char>();
  if (std::string(magic, 4) != "MSCK") throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(c.version));
  }
  c.config_text = r.bytes();
  std::istringstream text(c.config_text);
  try {
    c.config = parse_run_config(text);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad config echo: " + e.what());
  }
  c.step = r.get<std::uint64_t>();
  c.adam_steps = r.get<std::uint64_t>();
  c.rng.seed = r.get<std::uint64_t>();
  c.rng.counter = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes();
    RawTensor t;
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::uint32_t>());
    t.data.resize(shape_numel(t.shape));
    for (float& v : t.data) v = r.get<float>();
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after tensor table");
  return c;
}

void restore_model(const Checkpoint& ckpt, Model<float>& model) {
  if (!(ckpt.config.model == model.config())) {
    throw CompatibilityError("checkpoint architecture differs from the model (config echo mismatch)");
  }
  std::set<std::string> model_names;
  for (const auto& p : model.parameters()) {
    check_tensor(ckpt, p.name, p.value.shape());
    model_names.insert(p.name);
  }
  for (const auto& [name, t] : ckpt.tensors) {
    const bool aux = name.rfind("loss.", 0) == 0 || name.rfind("adam.", 0) == 0;
    if (!aux && model_names.count(name) == 0) throw CompatibilityError("checkpoint has unknown tensor " + name);
  }
  for (auto& p : model.parameters()) copy_into(*ckpt.find(p.name), p.value.mutable_data());
}

void restore_trainer(const Checkpoint& ckpt, Trainer& trainer) {
  auto& adam = trainer.adam();
  const auto& params = adam.parameters();
  for (const auto& p : params) {
    check_tensor(ckpt, p.name, p.value.shape());
    check_tensor(ckpt, "adam.m." + p.name, p.value.shape());
    check_tensor(ckpt, "adam.v." + p.name, p.value.shape());
  }
  restore_model(ckpt, trainer.model());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float> value = params[i].value;
    copy_into(*ckpt.find(params[i].name), value.mutable_data());
    const RawTensor& m = *ckpt.find("adam.m." + params[i].name);
    const RawTensor& v = *ckpt.find("adam.v." + params[i].name);
    adam.first_moments()[i].assign(m.data.begin(), m.data.end());
    adam.second_moments()[i].assign(v.data.begin(), v.data.end());
  }
  adam.set_steps(ckpt.adam_steps);
  trainer.rng() = ckpt.rng;
  trainer.set_step_count(ckpt.step);
}

}  // namespace mst
