#include "mxfer/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mxfer/data.hpp"
#include "mxfer/hash.hpp"

namespace mxfer::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), {});
  }
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::span<double> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  void expect_magic(const char* magic) {
    if (str(4) != magic) throw FormatError(path_.string() + ": bad magic, expected " + magic, 0);
  }
  void expect_end() {
    if (pos_ != bytes_.size()) throw FormatError(path_.string() + ": trailing bytes", pos_);
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError(path_.string() + ": truncated file", bytes_.size());
  }
  fs::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

}  // namespace

void write_parameters(const fs::path& path, const ParameterVector& params) {
  auto os = open_out(path);
  os.write("MXB1", 4);
  const Layout& layout = params.layout();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.size()));
  for (const auto& e : layout.entries()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) put<std::uint64_t>(os, d);
  }
  put<std::uint64_t>(os, params.size());
  os.write(reinterpret_cast<const char*>(params.data().data()), static_cast<std::streamsize>(params.size() * 8));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ParameterVector read_parameters(const fs::path& path) {
  Reader r(path);
  r.expect_magic("MXB1");
  const auto n = r.get<std::uint32_t>();
  std::vector<LayerEntry> entries;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerEntry e;
    e.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    entries.push_back(std::move(e));
  }
  Layout layout(std::move(entries));
  const auto count = r.get<std::uint64_t>();
  if (count != layout.total())
    throw FormatError(path.string() + ": payload has " + std::to_string(count) + " values, layout needs " +
                          std::to_string(layout.total()),
                      0);
  std::vector<double> data(count);
  r.doubles(data);
  r.expect_end();
  return ParameterVector(std::move(layout), std::move(data));
}

json to_json(const ModelSpec& spec) {
  return json{{"architecture", to_string(spec.architecture)},
              {"input_side", spec.input_side},
              {"hidden", spec.hidden},
              {"conv_channels", spec.conv_channels},
              {"head_classes", spec.head_classes}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.architecture = parse_architecture(j.at("architecture").get<std::string>());
  s.input_side = j.at("input_side").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.conv_channels = j.at("conv_channels").get<std::size_t>();
  s.head_classes = j.at("head_classes").get<std::vector<std::size_t>>();
  return s;
}

json to_json(const attacks::AttackSpec& s) {
  return json{{"method", attacks::to_string(s.method)},
              {"epsilon", s.epsilon},
              {"alpha", s.alpha},
              {"iterations", s.iterations},
              {"momentum", s.momentum},
              {"lookahead", s.lookahead},
              {"random_init", s.random_init},
              {"kernel_size", s.kernel_size},
              {"query_budget", s.query_budget},
              {"square_fraction", s.square_fraction},
              {"targeted", s.targeted},
              {"seed", s.seed}};
}

attacks::AttackSpec attack_spec_from_json(const json& j) {
  attacks::AttackSpec s;
  s.method = attacks::parse_method(j.at("method").get<std::string>());
  s.epsilon = j.at("epsilon").get<double>();
  s.alpha = j.at("alpha").get<double>();
  s.iterations = j.at("iterations").get<std::size_t>();
  s.momentum = j.at("momentum").get<double>();
  s.lookahead = j.at("lookahead").get<bool>();
  s.random_init = j.at("random_init").get<bool>();
  s.kernel_size = j.at("kernel_size").get<std::size_t>();
  s.query_budget = j.at("query_budget").get<std::size_t>();
  s.square_fraction = j.at("square_fraction").get<double>();
  s.targeted = j.at("targeted").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

void save_checkpoint(const fs::path& path, const ParameterVector& params, const json& meta) {
  write_parameters(path, params);
  json side = meta;
  side["format"] = "MXB1";
  side["values"] = params.size();
  side["sha256"] = sha256_file(path);
  write_text(sidecar(path), side.dump(1) + "\n");
}

ParameterVector load_checkpoint(const fs::path& path) {
  const fs::path meta = sidecar(path);
  if (fs::exists(meta)) {
    const json side = json::parse(read_text(meta));
    if (side.contains("sha256") && side["sha256"].get<std::string>() != sha256_file(path))
      throw FormatError(path.string() + ": content hash does not match its sidecar", 0);
  }
  return read_parameters(path);
}

namespace {
std::string adapter_name(std::size_t t, const char* part) {
  return "rs.adapter." + std::to_string(t) + "." + part;
}
}  // namespace

void save_merged(const fs::path& path, const merging::MergedModel& model, json meta) {
  std::vector<LayerEntry> extra;
  std::vector<Tensor> layers = model.theta.unflatten();
  for (std::size_t t = 0; t < model.adapters.size(); ++t) {
    extra.push_back({adapter_name(t, "down"), model.adapters[t].down.shape()});
    extra.push_back({adapter_name(t, "up"), model.adapters[t].up.shape()});
    layers.push_back(model.adapters[t].down);
    layers.push_back(model.adapters[t].up);
  }
  meta["method"] = model.method;
  meta["model"] = to_json(model.spec);
  meta["adapters"] = model.adapters.size();
  save_checkpoint(path, ParameterVector::flatten(model.theta.layout().extended(extra), layers), meta);
}

merging::MergedModel load_merged(const fs::path& path) {
  const json side = json::parse(read_text(sidecar(path)));
  const ParameterVector all = load_checkpoint(path);
  merging::MergedModel m;
  m.spec = model_spec_from_json(side.at("model"));
  m.method = side.at("method").get<std::string>();
  const Layout base = make_layout(m.spec);
  m.theta = ParameterVector(base);
  for (std::size_t i = 0; i < base.size(); ++i) m.theta.set(i, all.tensor(base.entries()[i].name));
  const auto n = side.at("adapters").get<std::size_t>();
  for (std::size_t t = 0; t < n; ++t)
    m.adapters.push_back({all.tensor(adapter_name(t, "down")), all.tensor(adapter_name(t, "up"))});
  return m;
}

std::string adv_cache_key(const attacks::AttackSpec& spec, const std::string& surrogate_hash,
                          const std::string& data_hash) {
  return sha256_hex(to_json(spec).dump() + "|" + surrogate_hash + "|" + data_hash);
}

void save_adv_batch(const fs::path& path, const attacks::AdvBatch& batch, const std::string& cache_key) {
  const json header{{"spec", to_json(batch.spec)}, {"surrogate", batch.surrogate},
                    {"labels", batch.labels},      {"queries", batch.queries},
                    {"cache_key", cache_key},      {"shape", batch.clean.shape()}};
  const std::string h = header.dump();
  auto os = open_out(path);
  os.write("MXA1", 4);
  put<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const Tensor* t : {&batch.clean, &batch.adversarial})
    os.write(reinterpret_cast<const char*>(t->data().data()), static_cast<std::streamsize>(t->size() * 8));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

attacks::AdvBatch load_adv_batch(const fs::path& path, std::string* cache_key) {
  Reader r(path);
  r.expect_magic("MXA1");
  const json header = json::parse(r.str(r.get<std::uint64_t>()));
  attacks::AdvBatch b;
  b.spec = attack_spec_from_json(header.at("spec"));
  b.surrogate = header.at("surrogate").get<std::string>();
  b.labels = header.at("labels").get<std::vector<std::size_t>>();
  b.queries = header.at("queries").get<std::size_t>();
  const Shape shape = header.at("shape").get<Shape>();
  b.clean = Tensor(shape);
  b.adversarial = Tensor(shape);
  r.doubles(b.clean.data());
  r.doubles(b.adversarial.data());
  r.expect_end();
  if (cache_key) *cache_key = header.at("cache_key").get<std::string>();
  return b;
}

std::string read_adv_cache_key(const fs::path& path) {
  Reader r(path);
  r.expect_magic("MXA1");
  return json::parse(r.str(r.get<std::uint64_t>())).at("cache_key").get<std::string>();
}

json to_json(const evaluation::AsrMatrix& m) {
  return json{{"task", m.task},
              {"attack", m.attack},
              {"surrogates", m.surrogates},
              {"targets", m.targets},
              {"values", m.values}};
}

evaluation::AsrMatrix asr_matrix_from_json(const json& j) {
  evaluation::AsrMatrix m;
  m.task = j.at("task").get<std::size_t>();
  m.attack = j.at("attack").get<std::string>();
  m.surrogates = j.at("surrogates").get<std::vector<std::string>>();
  m.targets = j.at("targets").get<std::vector<std::string>>();
  m.values = j.at("values").get<std::vector<std::vector<double>>>();
  return m;
}

std::string split_hash(const Split& split) {
  std::vector<double> labels(split.y.begin(), split.y.end());
  return sha256_hex(sha256_hex(split.x.data()) + sha256_hex(std::span<const double>(labels)));
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mxfer::io
