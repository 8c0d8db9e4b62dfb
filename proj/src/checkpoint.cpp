#include "hdlm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "hdlm/errors.hpp"
#include "hdlm/io.hpp"
#include "hdlm/run_config.hpp"

namespace hdlm::persist {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint8_t kFloat64 = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_tensor(std::string& out, const std::string& name, const num::Tensor& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, kFloat64);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
}

class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw IntegrityError(std::string("truncated while reading ") + what, pos_);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
    return v;
  }

  std::size_t offset() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  num::Tensor tensor;
};

NamedTensor get_tensor(Cursor& c) {
  const std::size_t start = c.offset();
  NamedTensor nt;
  const auto name_len = c.get<std::uint32_t>("array name length");
  nt.name = std::string(c.take(name_len, "array name"));
  const auto dtype = c.get<std::uint8_t>("array dtype");
  if (dtype != kFloat64) throw IntegrityError("unsupported dtype " + std::to_string(dtype) + " for " + nt.name, start);
  const auto rank = c.get<std::uint32_t>("array rank");
  if (rank > 8) throw IntegrityError("implausible rank for " + nt.name, start);
  num::Shape shape;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = c.get<std::uint64_t>("array shape");
    if (d != 0 && count > (std::uint64_t{1} << 40) / d) throw IntegrityError("implausible shape for " + nt.name, start);
    count *= d;
    shape.push_back(d);
  }
  const auto raw = c.take(count * sizeof(double), "array data");
  std::vector<double> data(count);
  std::memcpy(data.data(), raw.data(), raw.size());
  nt.tensor = num::Tensor(std::move(shape), std::move(data));
  return nt;
}

// Copies `arrays` (consumed in order, prefixed by `prefix`) into `params`.
void fill(model::Parameters& params, const std::vector<NamedTensor>& arrays, std::size_t& next,
          const std::string& prefix, std::size_t offset) {
  params.for_each([&](const std::string& name, num::Tensor& t) {
    if (next >= arrays.size()) throw IntegrityError("missing array " + prefix + name, offset);
    const auto& a = arrays[next++];
    if (a.name != prefix + name) throw IntegrityError("expected array " + prefix + name + ", found " + a.name, offset);
    if (a.tensor.shape() != t.shape()) {
      throw IntegrityError("array " + a.name + " has shape " + num::shape_string(a.tensor.shape()) + ", expected " +
                               num::shape_string(t.shape()),
                           offset);
    }
    t = a.tensor;
  });
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header{{"model", to_json(ckpt.params.config)},
              {"step", ckpt.step},
              {"rng_state", ckpt.rng_state},
              {"vocab", ckpt.vocab},
              {"has_optimizer", ckpt.optimizer.has_value()},
              {"optimizer_step", ckpt.optimizer ? ckpt.optimizer->step : 0}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;

  std::vector<std::pair<std::string, const num::Tensor*>> arrays;
  ckpt.params.for_each([&](const std::string& name, const num::Tensor& t) { arrays.emplace_back(name, &t); });
  if (ckpt.optimizer) {
    ckpt.optimizer->first_moment.for_each(
        [&](const std::string& name, const num::Tensor& t) { arrays.emplace_back("adam.m." + name, &t); });
    ckpt.optimizer->second_moment.for_each(
        [&](const std::string& name, const num::Tensor& t) { arrays.emplace_back("adam.v." + name, &t); });
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) put_tensor(out, name, *t);
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Cursor c(bytes);
  if (c.take(sizeof kCheckpointMagic, "magic") != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw IntegrityError("not an HdLM checkpoint (bad magic)", 0);
  }
  const std::size_t version_at = c.offset();
  const auto version = c.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(version) + " (this build reads version " +
                             std::to_string(kCheckpointVersion) + ")",
                         version_at);
  }
  const auto header_len = c.get<std::uint64_t>("header length");
  const std::size_t header_at = c.offset();
  const auto header_text = c.take(header_len, "header");

  Checkpoint ckpt;
  bool has_optimizer = false;
  std::int64_t optimizer_step = 0;
  try {
    const json header = json::parse(header_text);
    ckpt.params.config = model_config_from_json(header.at("model"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.vocab = header.at("vocab").get<std::vector<std::string>>();
    has_optimizer = header.at("has_optimizer").get<bool>();
    optimizer_step = header.at("optimizer_step").get<std::int64_t>();
    ckpt.params.config.validate();
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("corrupt header: ") + e.what(), header_at);
  }

  const std::size_t arrays_at = c.offset();
  const auto count = c.get<std::uint32_t>("array count");
  std::vector<NamedTensor> arrays;
  for (std::uint32_t i = 0; i < count; ++i) arrays.push_back(get_tensor(c));

  const std::size_t checksum_at = c.offset();
  const auto stored = c.get<std::uint64_t>("checksum");
  if (c.offset() != bytes.size()) throw IntegrityError("trailing bytes after checksum", c.offset());
  if (stored != fnv1a(bytes.substr(0, checksum_at))) throw IntegrityError("checksum mismatch", checksum_at);

  ckpt.params = model::zeros_like(model::init_model(ckpt.params.config, 0));
  std::size_t next = 0;
  fill(ckpt.params, arrays, next, "", arrays_at);
  if (has_optimizer) {
    train::OptimizerState opt = train::init_optimizer(ckpt.params);
    fill(opt.first_moment, arrays, next, "adam.m.", arrays_at);
    fill(opt.second_moment, arrays, next, "adam.v.", arrays_at);
    opt.step = optimizer_step;
    ckpt.optimizer = std::move(opt);
  }
  if (next != arrays.size()) throw IntegrityError("unexpected extra array " + arrays[next].name, arrays_at);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace hdlm::persist
