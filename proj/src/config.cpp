#include "mxfer/config.hpp"

#include <json.hpp>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "mxfer/format.hpp"
#include "mxfer/hash.hpp"
#include "mxfer/io.hpp"

namespace mxfer::config {

ConfigError::ConfigError(const std::string& file, std::size_t line, std::size_t column, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

namespace {

using nlohmann::json;

// A TOML table whose keys must all be consumed; leftovers are unknown-key errors.
class Section {
 public:
  Section(const toml::table& table, std::string path, std::string file)
      : table_(table), path_(std::move(path)), file_(std::move(file)) {}
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() == 0) finish();
  }
  Section(const Section&) = delete;

  [[noreturn]] void fail(const toml::source_region& where, const std::string& what) const {
    throw ConfigError(file_, where.begin.line, where.begin.column, what);
  }

  const toml::node* node(const std::string& key) {
    used_.insert(key);
    return table_.get(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T scalar(const std::string& key, T fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->value_exact<bool>()) return *v;
      fail(n->source(), "'" + name(key) + "' must be a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n->value_exact<std::string>()) return *v;
      fail(n->source(), "'" + name(key) + "' must be a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = n->value_exact<double>()) return *v;
      if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
      fail(n->source(), "'" + name(key) + "' must be a number");
    } else {
      if (auto v = n->value_exact<std::int64_t>()) {
        if (*v < 0 && std::is_unsigned_v<T>) fail(n->source(), "'" + name(key) + "' must be non-negative");
        return static_cast<T>(*v);
      }
      fail(n->source(), "'" + name(key) + "' must be an integer");
    }
  }

  template <typename T>
  std::vector<T> list(const std::string& key, std::vector<T> fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    const toml::array* arr = n->as_array();
    if (!arr) fail(n->source(), "'" + name(key) + "' must be an array");
    std::vector<T> out;
    for (const auto& item : *arr) {
      if constexpr (std::is_same_v<T, std::string>) {
        auto v = item.value_exact<std::string>();
        if (!v) fail(item.source(), "'" + name(key) + "' must contain strings");
        out.push_back(*v);
      } else {
        auto v = item.value_exact<std::int64_t>();
        if (!v || *v < 0) fail(item.source(), "'" + name(key) + "' must contain non-negative integers");
        out.push_back(static_cast<T>(*v));
      }
    }
    return out;
  }

  const toml::table* table(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(n->source(), "'" + name(key) + "' must be a table");
    return n->as_table();
  }

  const toml::array* array_of_tables(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) return nullptr;
    if (!n->is_array_of_tables()) fail(n->source(), "'" + name(key) + "' must be an array of tables");
    return n->as_array();
  }

  template <typename F>
  auto parse_as(const std::string& key, const toml::source_region& where, F&& f) {
    try {
      return f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(where, "'" + name(key) + "': " + e.what());
    }
  }

  const toml::source_region& where(const std::string& key) const {
    const toml::node* n = table_.get(key);
    return n ? n->source() : table_.source();
  }

  void finish() {
    for (auto&& [k, v] : table_)
      if (!used_.contains(std::string(k.str())))
        fail(k.source(), "unknown key '" + name(std::string(k.str())) + "'");
    used_.clear();
    for (auto&& [k, v] : table_) used_.insert(std::string(k.str()));
  }

  const std::string& file() const { return file_; }

 private:
  const toml::table& table_;
  std::string path_;
  std::string file_;
  std::set<std::string> used_;
};

toml::table parse_toml(const std::string& text, const std::string& origin) {
  try {
    return toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    throw ConfigError(origin, e.source().begin.line, e.source().begin.column, std::string(e.description()));
  }
}

void check_schema(Section& root, const toml::table& t, const std::string& file) {
  const toml::node* n = root.node("schema");
  if (!n) throw ConfigError(file, 1, 1, "missing 'schema' version key");
  auto v = n->value_exact<std::int64_t>();
  if (!v || *v != kSchemaVersion)
    root.fail(n->source(), "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
  (void)t;
}

hypotheses::SampleSpec parse_sample(const toml::table& t, const std::string& file) {
  Section s(t, "hypothesis.group.sample", file);
  hypotheses::SampleSpec out;
  out.label = s.scalar<std::string>("label", "");
  if (out.label.empty()) s.fail(t.source(), "sample needs a 'label'");
  out.surrogates = s.parse_as("surrogates", s.where("surrogates"), [&] {
    return hypotheses::parse_surrogate_filter(s.scalar<std::string>("surrogates", "all"));
  });
  out.attacks = s.list<std::string>("attacks", {});
  for (const auto& a : out.attacks) s.parse_as("attacks", s.where("attacks"), [&] { return attacks::parse_method(a); });
  const toml::node* pairs = s.node("pairs");
  if (!pairs || !pairs->is_array()) s.fail(t.source(), "sample '" + out.label + "' needs 'pairs' = [[minuend, subtrahend], ...]");
  for (const auto& p : *pairs->as_array()) {
    const toml::array* pa = p.as_array();
    if (!pa || pa->size() != 2 || !(*pa)[0].is_string() || !(*pa)[1].is_string())
      s.fail(p.source(), "each pair must be [minuend, subtrahend]");
    out.pairs.emplace_back(*(*pa)[0].value<std::string>(), *(*pa)[1].value<std::string>());
  }
  return out;
}

attacks::Method method_or_fail(Section& s, const std::string& key, const std::string& name) {
  return s.parse_as(key, s.where(key), [&] { return attacks::parse_method(name); });
}

}  // namespace

std::vector<hypotheses::HypothesisSpec> parse_hypotheses(const std::string& text, const std::string& origin) {
  const toml::table root = parse_toml(text, origin);
  Section top(root, "", origin);
  check_schema(top, root, origin);
  std::vector<hypotheses::HypothesisSpec> out;
  const toml::array* hs = top.array_of_tables("hypothesis");
  if (!hs) throw ConfigError(origin, 1, 1, "no [[hypothesis]] entries");
  for (const auto& h : *hs) {
    Section hsec(*h.as_table(), "hypothesis", origin);
    hypotheses::HypothesisSpec spec;
    spec.id = hsec.scalar<std::string>("id", "");
    if (spec.id.empty()) hsec.fail(h.source(), "hypothesis needs an 'id'");
    const toml::array* groups = hsec.array_of_tables("group");
    if (!groups) hsec.fail(h.source(), "hypothesis '" + spec.id + "' has no [[hypothesis.group]]");
    for (const auto& g : *groups) {
      Section gsec(*g.as_table(), "hypothesis.group", origin);
      const toml::array* samples = gsec.array_of_tables("sample");
      if (!samples) gsec.fail(g.source(), "group without [[hypothesis.group.sample]]");
      std::vector<hypotheses::SampleSpec> group;
      for (const auto& s : *samples) group.push_back(parse_sample(*s.as_table(), origin));
      spec.groups.push_back(std::move(group));
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<hypotheses::HypothesisSpec> load_hypotheses(const std::filesystem::path& path) {
  return parse_hypotheses(io::read_text(path), path.string());
}

ExperimentConfig parse(const std::string& text, const std::filesystem::path& origin) {
  const std::string file = origin.string();
  const toml::table root = parse_toml(text, file);
  ExperimentConfig c;
  Section top(root, "", file);
  check_schema(top, root, file);
  c.seed = top.scalar<std::uint64_t>("seed", 1);
  c.output = top.scalar<std::string>("output", c.output.string());
  const auto base_dir = origin.has_parent_path() ? origin.parent_path() : std::filesystem::path(".");

  static const toml::table empty;
  auto section = [&](const std::string& key) -> const toml::table& {
    const toml::table* t = top.table(key);
    return t ? *t : empty;
  };

  {
    Section s(section("data"), "data", file);
    c.data.source = s.scalar<std::string>("source", "synthetic");
    auto& p = c.data.synthetic;
    p.seed = c.seed;
    p.tasks = s.scalar<std::size_t>("tasks", 3);
    p.input_side = s.scalar<std::size_t>("input_side", 8);
    p.classes = s.scalar<std::size_t>("classes", 4);
    p.train_per_task = s.scalar<std::size_t>("train_per_task", 768);
    p.test_per_task = s.scalar<std::size_t>("test_per_task", 512);
    p.separation = s.scalar<double>("separation", 0.06);
    p.noise = s.scalar<double>("noise", 0.07);
    c.data.test_fraction = s.scalar<double>("test_fraction", 0.5);
    if (const toml::array* idx = s.array_of_tables("idx")) {
      for (const auto& e : *idx) {
        Section es(*e.as_table(), "data.idx", file);
        IdxSource src;
        src.images = base_dir / es.scalar<std::string>("images", "");
        const std::string labels = es.scalar<std::string>("labels", "");
        if (!labels.empty()) src.labels = base_dir / labels;
        c.data.idx.push_back(src);
      }
    }
    if (c.data.source != "synthetic" && c.data.source != "idx")
      s.fail(s.where("source"), "data.source must be \"synthetic\" or \"idx\"");
    if (c.data.source == "idx" && c.data.idx.size() < 2)
      s.fail(s.where("source"), "data.source = \"idx\" needs at least two [[data.idx]] tasks");
    if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0))
      s.fail(s.where("test_fraction"), "data.test_fraction must be in (0, 1)");
  }
  {
    Section s(section("model"), "model", file);
    c.model.architecture = s.parse_as("architecture", s.where("architecture"), [&] {
      return parse_architecture(s.scalar<std::string>("architecture", "mlp"));
    });
    c.model.hidden = s.list<std::size_t>("hidden", {128, 64});
    c.model.conv_channels = s.scalar<std::size_t>("conv_channels", 4);
    if (c.model.hidden.empty()) s.fail(s.where("hidden"), "model.hidden must not be empty");
    c.model.input_side = c.data.synthetic.input_side;
    c.model.head_classes.assign(c.data.synthetic.tasks, c.data.synthetic.classes);
  }
  {
    Section s(section("pretrain"), "pretrain", file);
    auto& b = c.pretrain.backbone;
    b.epochs = s.scalar<std::size_t>("epochs", 2);
    b.learning_rate = s.scalar<double>("learning_rate", 0.01);
    b.momentum = s.scalar<double>("momentum", 0.9);
    b.batch_size = s.scalar<std::size_t>("batch_size", 32);
    b.seed = c.seed;
    c.pretrain.pretext_clusters = s.scalar<std::size_t>("pretext_clusters", 8);
    c.pretrain.kmeans_iterations = s.scalar<std::size_t>("kmeans_iterations", 25);
    c.pretrain.probe = b;
    c.pretrain.probe.epochs = s.scalar<std::size_t>("probe_epochs", 1);
    c.pretrain.probe.learning_rate = s.scalar<double>("probe_learning_rate", 0.01);
  }
  {
    Section s(section("finetune"), "finetune", file);
    c.finetune.epochs = s.scalar<std::size_t>("epochs", 10);
    c.finetune.learning_rate = s.scalar<double>("learning_rate", 0.02);
    c.finetune.momentum = s.scalar<double>("momentum", 0.9);
    c.finetune.batch_size = s.scalar<std::size_t>("batch_size", 32);
    c.finetune.seed = c.seed;
  }
  {
    Section s(section("merge"), "merge", file);
    for (const auto& m : s.list<std::string>("methods", {"WA", "TA", "TM", "AM"}))
      c.merge_methods.push_back(s.parse_as("methods", s.where("methods"), [&] { return merging::parse_method(m); }));
    c.surgery = s.scalar<bool>("surgery", true);
    c.merge.lambda = s.scalar<double>("lambda", 0.3);
    c.merge.trim_fraction = s.scalar<double>("trim_fraction", 0.2);
    if (const toml::table* am = s.table("adamerging")) {
      Section a(*am, "merge.adamerging", file);
      const std::string mode = a.scalar<std::string>("mode", "taskwise");
      if (mode != "taskwise" && mode != "layerwise")
        a.fail(a.where("mode"), "merge.adamerging.mode must be \"taskwise\" or \"layerwise\"");
      c.merge.ada.mode = mode == "taskwise" ? merging::AdaMode::TaskWise : merging::AdaMode::LayerWise;
      c.merge.ada.learning_rate = a.scalar<double>("learning_rate", 1e-3);
      c.merge.ada.iterations = a.scalar<std::size_t>("iterations", 300);
      c.merge.ada.initial_lambda = a.scalar<double>("initial_lambda", 0.3);
    } else {
      c.merge.ada.learning_rate = 1e-3;
    }
    merging::SurgeryConfig rs;
    if (const toml::table* st = s.table("surgery_adapter")) {
      Section a(*st, "merge.surgery_adapter", file);
      rs.rank = a.scalar<std::size_t>("rank", 8);
      rs.iterations = a.scalar<std::size_t>("iterations", 500);
      rs.batch_size = a.scalar<std::size_t>("batch_size", 16);
      rs.learning_rate = a.scalar<double>("learning_rate", 1e-3);
    }
    rs.seed = c.seed;
    c.merge.surgery = rs;
    s.parse_as("lambda", s.where("lambda"), [&] {
      c.merge.validate();
      return 0;
    });
    if (c.merge_methods.empty()) s.fail(s.where("methods"), "merge.methods must not be empty");
  }
  {
    Section s(section("attacks"), "attacks", file);
    const bool idx = c.data.source == "idx";
    attacks::AttackSpec base;
    base.epsilon = s.scalar<double>("epsilon", idx ? 0.3 : 16.0 / 255.0);
    base.alpha = s.scalar<double>("alpha", idx ? 0.03 : 1.6 / 255.0);
    base.iterations = s.scalar<std::size_t>("iterations", 10);
    base.momentum = s.scalar<double>("momentum", 1.0);
    base.lookahead = s.scalar<bool>("lookahead", true);
    base.random_init = s.scalar<bool>("random_init", true);
    base.kernel_size = s.scalar<std::size_t>("kernel_size", 3);
    base.query_budget = s.scalar<std::size_t>("query_budget", 500);
    base.square_fraction = s.scalar<double>("square_fraction", 0.8);
    base.seed = c.seed;
    const std::vector<std::string> all = {"FGSM", "I-FGSM", "PGD", "NI-FGSM", "TI-FGSM", "SQUARE"};
    for (const auto& m : s.list<std::string>("methods", all)) {
      attacks::AttackSpec a = base;
      a.method = method_or_fail(s, "methods", m);
      c.attacks.push_back(a);
    }
    for (const auto& m : s.list<std::string>("targeted_methods", {"NI-FGSM"})) {
      attacks::AttackSpec a = base;
      a.method = method_or_fail(s, "targeted_methods", m);
      a.targeted = true;
      c.targeted_attacks.push_back(a);
    }
    if (!(base.epsilon > 0.0)) s.fail(s.where("epsilon"), "attacks.epsilon must be > 0");
    for (const auto& a : c.attacks)
      s.parse_as("methods", s.where("epsilon"), [&] {
        a.validate();
        return 0;
      });
  }
  {
    Section s(section("defenses"), "defenses", file);
    defenses::DefenseSpec base;
    base.crops = s.scalar<std::size_t>("crops", 30);
    base.crop_fraction = s.scalar<double>("crop_fraction", 0.9);
    base.bits = s.scalar<int>("bits", 4);
    base.quality = s.scalar<int>("quality", 75);
    base.sigma = s.scalar<double>("sigma", 0.02);
    base.seed = c.seed;
    c.defense_task = s.scalar<std::size_t>("task", 0);
    for (const auto& k : s.list<std::string>("kinds", {"CROP_ENSEMBLE", "BIT_DEPTH", "LOSSY_DCT", "SND"})) {
      defenses::DefenseSpec d = base;
      d.kind = s.parse_as("kinds", s.where("kinds"), [&] { return defenses::parse_kind(k); });
      s.parse_as("kinds", s.where("kinds"), [&] {
        d.validate();
        return 0;
      });
      c.defenses.push_back(d);
    }
  }
  std::string hyp_file;
  {
    Section s(section("statistics"), "statistics", file);
    c.alpha = s.scalar<double>("alpha", 0.05);
    c.q = s.scalar<double>("q", 0.05);
    hyp_file = s.scalar<std::string>("hypotheses", "");
    if (!(c.alpha > 0.0 && c.alpha < 1.0) || !(c.q > 0.0 && c.q < 1.0))
      s.fail(s.where("alpha"), "statistics.alpha and statistics.q must be in (0, 1)");
  }
  {
    Section s(section("analysis"), "analysis", file);
    c.probe_count = s.scalar<std::size_t>("probes", 256);
    c.probe_task = s.scalar<std::size_t>("task", 0);
  }
  {
    Section s(section("cross_architecture"), "cross_architecture", file);
    c.cross_arch.enabled = s.scalar<bool>("enabled", false);
    c.cross_arch.model = c.model;
    c.cross_arch.model.architecture = s.parse_as("architecture", s.where("architecture"), [&] {
      return parse_architecture(s.scalar<std::string>("architecture", "smallconv"));
    });
    c.cross_arch.model.hidden = s.list<std::size_t>("hidden", {64});
    c.cross_arch.model.conv_channels = s.scalar<std::size_t>("conv_channels", 4);
    c.cross_arch.training = c.finetune;
    c.cross_arch.training.epochs = s.scalar<std::size_t>("epochs", 10);
    c.cross_arch.training.learning_rate = s.scalar<double>("learning_rate", 0.02);
  }
  top.finish();
  reseed(c, c.seed);

  if (hyp_file.empty()) {
    c.hypotheses = parse_hypotheses(default_hypotheses_text(), "<default hypotheses>");
  } else {
    c.hypotheses = load_hypotheses(base_dir / hyp_file);
  }
  return c;
}

void reseed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.data.synthetic.seed = seed;
  c.pretrain.backbone.seed = seed;
  c.pretrain.probe.seed = seed;
  c.finetune.seed = seed;
  c.cross_arch.training.seed = seed;
  if (c.merge.surgery) c.merge.surgery->seed = seed;
  for (auto& a : c.attacks) a.seed = seed;
  for (auto& a : c.targeted_attacks) a.seed = seed;
  for (auto& d : c.defenses) d.seed = seed;
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string(), 0, 0, e.what());
  }
  return parse(text, path);
}

std::string ExperimentConfig::canonical() const {
  json j;
  j["seed"] = seed;
  j["data"] = {{"source", data.source},
               {"tasks", data.synthetic.tasks},
               {"input_side", data.synthetic.input_side},
               {"classes", data.synthetic.classes},
               {"train_per_task", data.synthetic.train_per_task},
               {"test_per_task", data.synthetic.test_per_task},
               {"separation", format_double(data.synthetic.separation)},
               {"noise", format_double(data.synthetic.noise)},
               {"test_fraction", format_double(data.test_fraction)}};
  for (const auto& s : data.idx)
    j["data"]["idx"].push_back({{"images", s.images.string()}, {"labels", s.labels ? s.labels->string() : ""}});
  j["model"] = io::to_json(model);
  auto sgd = [](const SgdConfig& s) {
    return json{{"epochs", s.epochs},
                {"learning_rate", format_double(s.learning_rate)},
                {"momentum", format_double(s.momentum)},
                {"batch_size", s.batch_size},
                {"seed", s.seed}};
  };
  j["pretrain"] = {{"backbone", sgd(pretrain.backbone)},
                   {"probe", sgd(pretrain.probe)},
                   {"clusters", pretrain.pretext_clusters},
                   {"kmeans_iterations", pretrain.kmeans_iterations}};
  j["finetune"] = sgd(finetune);
  for (auto m : merge_methods) j["merge"]["methods"].push_back(merging::method_tag(m, false));
  j["merge"]["surgery"] = surgery;
  j["merge"]["lambda"] = format_double(merge.lambda);
  j["merge"]["trim"] = format_double(merge.trim_fraction);
  j["merge"]["ada"] = {{"mode", merge.ada.mode == merging::AdaMode::TaskWise ? "taskwise" : "layerwise"},
                       {"learning_rate", format_double(merge.ada.learning_rate)},
                       {"iterations", merge.ada.iterations},
                       {"initial_lambda", format_double(merge.ada.initial_lambda)}};
  if (merge.surgery)
    j["merge"]["rs"] = {{"rank", merge.surgery->rank},
                        {"iterations", merge.surgery->iterations},
                        {"batch_size", merge.surgery->batch_size},
                        {"learning_rate", format_double(merge.surgery->learning_rate)},
                        {"seed", merge.surgery->seed}};
  for (const auto& a : attacks) j["attacks"].push_back(io::to_json(a));
  for (const auto& a : targeted_attacks) j["targeted_attacks"].push_back(io::to_json(a));
  for (const auto& d : defenses)
    j["defenses"].push_back({{"kind", defenses::to_string(d.kind)},
                             {"params", d.params()},
                             {"seed", d.seed}});
  j["defense_task"] = defense_task;
  j["statistics"] = {{"alpha", format_double(alpha)}, {"q", format_double(q)}};
  j["analysis"] = {{"probes", probe_count}, {"task", probe_task}};
  j["cross_architecture"] = {{"enabled", cross_arch.enabled},
                             {"model", io::to_json(cross_arch.model)},
                             {"training", sgd(cross_arch.training)}};
  return j.dump();
}

std::string ExperimentConfig::hash() const { return sha256_hex(canonical()); }

std::string default_config_text() {
  return R"(# Desk-scale experiment: three synthetic 8x8 tasks, MLP backbone.
schema = 1
seed = 1
output = "runs/desk"

[data]
source = "synthetic"
tasks = 3
input_side = 8
classes = 4
train_per_task = 768
test_per_task = 512
separation = 0.06
noise = 0.07

[model]
architecture = "mlp"
hidden = [128, 64]

[pretrain]
epochs = 2
learning_rate = 0.01
momentum = 0.9
batch_size = 32
pretext_clusters = 8
kmeans_iterations = 25
probe_epochs = 1
probe_learning_rate = 0.01

[finetune]
epochs = 10
learning_rate = 0.02
momentum = 0.9
batch_size = 32

[merge]
methods = ["WA", "TA", "TM", "AM"]
surgery = true
lambda = 0.3
trim_fraction = 0.2

[merge.adamerging]
mode = "taskwise"
learning_rate = 0.001
iterations = 300
initial_lambda = 0.3

[merge.surgery_adapter]
rank = 8
iterations = 500
batch_size = 16
learning_rate = 0.001

[attacks]
methods = ["FGSM", "I-FGSM", "PGD", "NI-FGSM", "TI-FGSM", "SQUARE"]
targeted_methods = ["NI-FGSM"]
epsilon = 0.06274509803921569  # 16/255
alpha = 0.006274509803921569   # 1.6/255
iterations = 10
momentum = 1.0
kernel_size = 3
query_budget = 500
square_fraction = 0.8

[defenses]
kinds = ["CROP_ENSEMBLE", "BIT_DEPTH", "LOSSY_DCT", "SND"]
task = 0
crops = 30
crop_fraction = 0.9
bits = 4
quality = 75
sigma = 0.02

[statistics]
alpha = 0.05
q = 0.05
hypotheses = "hypotheses.toml"

[analysis]
probes = 256
task = 0

[cross_architecture]
enabled = true
architecture = "smallconv"
hidden = [64]
conv_channels = 4
epochs = 10
learning_rate = 0.02
)";
}

std::string default_hypotheses_text() {
  std::ostringstream os;
  os << "# Pre-registered hypothesis specs. Their hashes are recorded by `init`;\n"
        "# `stats` refuses specs that were not registered.\n"
        "schema = 1\n";
  auto quote_list = [](const std::vector<std::string>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", \"" : "\"") + v[i] + "\"";
    return s + "]";
  };
  for (const auto& h : hypotheses::default_hypotheses({"FGSM", "I-FGSM", "PGD", "NI-FGSM", "TI-FGSM"})) {
    os << "\n[[hypothesis]]\nid = \"" << h.id << "\"\n";
    for (const auto& g : h.groups) {
      os << "\n[[hypothesis.group]]\n";
      for (const auto& s : g) {
        os << "[[hypothesis.group.sample]]\nlabel = \"" << s.label << "\"\nsurrogates = \""
           << hypotheses::to_string(s.surrogates) << "\"\nattacks = " << quote_list(s.attacks) << "\npairs = [";
        for (std::size_t i = 0; i < s.pairs.size(); ++i)
          os << (i ? ", " : "") << "[\"" << s.pairs[i].first << "\", \"" << s.pairs[i].second << "\"]";
        os << "]\n";
      }
    }
  }
  return os.str();
}

}  // namespace mxfer::config
