#include "mxfer/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "mxfer/attacks.hpp"
#include "mxfer/defenses.hpp"
#include "mxfer/evaluation.hpp"
#include "mxfer/format.hpp"
#include "mxfer/hash.hpp"
#include "mxfer/hypotheses.hpp"
#include "mxfer/io.hpp"
#include "mxfer/merging.hpp"
#include "mxfer/statistics.hpp"
#include "mxfer/training.hpp"

#ifndef MXFER_VERSION
#define MXFER_VERSION "0.1.0"
#endif

namespace mxfer::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return MXFER_VERSION; }

namespace {

const std::vector<std::pair<Stage, std::string>> kStageNames = {
    {Stage::Init, "init"},     {Stage::Pretrain, "pretrain"}, {Stage::Finetune, "finetune"},
    {Stage::Merge, "merge"},   {Stage::Attack, "attack"},     {Stage::Eval, "eval"},
    {Stage::Stats, "stats"},   {Stage::Defend, "defend"},     {Stage::GradAnalysis, "grad-analysis"},
    {Stage::Report, "report"},
};

// "TA+RS" -> "TA_RS", safe as a file name.
std::string file_tag(std::string s) {
  std::replace(s.begin(), s.end(), '+', '_');
  return s;
}

std::string median_text(std::vector<double> v) {
  if (v.empty()) return "undefined";
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return format_double(n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

// CSV body (meta comment lines dropped) as a Markdown table.
std::string csv_to_markdown(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream os;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    os << "|";
    for (const auto& c : cells) os << " " << c << " |";
    os << "\n";
    if (header) {
      os << "|";
      for (std::size_t i = 0; i < cells.size(); ++i) os << "---|";
      os << "\n";
      header = false;
    }
  }
  return os.str();
}

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& [s, n] : kStageNames)
    if (s == stage) return n;
  throw std::invalid_argument("unknown stage");
}

std::optional<Stage> parse_stage(const std::string& name) {
  for (const auto& [s, n] : kStageNames)
    if (n == name) return s;
  return std::nullopt;
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> v;
    for (const auto& [s, n] : kStageNames) v.push_back(s);
    return v;
  }();
  return stages;
}

std::vector<Stage> dependencies(Stage stage) {
  switch (stage) {
    case Stage::Init: return {};
    case Stage::Pretrain: return {Stage::Init};
    case Stage::Finetune: return {Stage::Pretrain};
    case Stage::Merge: return {Stage::Finetune};
    case Stage::Attack: return {Stage::Merge};
    case Stage::Eval: return {Stage::Attack};
    case Stage::Stats: return {Stage::Eval};
    case Stage::Defend: return {Stage::Attack};
    case Stage::GradAnalysis: return {Stage::Merge};
    case Stage::Report: return {Stage::Stats, Stage::Defend, Stage::GradAnalysis};
  }
  return {};
}

DependencyError::DependencyError(Stage stage, Stage missing)
    : std::runtime_error("stage '" + to_string(stage) + "' needs stage '" + to_string(missing) +
                         "' to complete first"),
      missing_(missing) {}

namespace {

void transitive(Stage s, std::set<Stage>& out) {
  for (Stage d : dependencies(s))
    if (out.insert(d).second) transitive(d, out);
}

bool depends_on(Stage s, Stage upstream) {
  std::set<Stage> deps;
  transitive(s, deps);
  return deps.contains(upstream);
}

}  // namespace

struct Runner::Impl {
  config::ExperimentConfig cfg;
  Options opt;
  std::string config_hash;
  json manifest;
  std::vector<Stage> executed;

  // Lazily loaded state.
  std::optional<std::vector<TaskDataset>> tasks_;
  std::optional<ModelSpec> spec_, cross_spec_;
  std::shared_ptr<const ParameterVector> theta0_;
  std::vector<std::shared_ptr<const ParameterVector>> finetuned_, crossarch_;
  std::vector<std::shared_ptr<const merging::MergedModel>> merged_;

  // Artifacts written by the running stage.
  std::vector<fs::path> written;

  Impl(config::ExperimentConfig c, Options o) : cfg(std::move(c)), opt(std::move(o)), config_hash(cfg.hash()) {}

  fs::path path(const std::string& rel) const { return opt.out / rel; }
  fs::path manifest_path() const { return path("manifest.json"); }

  // ---- metadata embedded in every output ----

  json meta() const { return json{{"config_hash", config_hash}, {"version", version()}, {"seed", cfg.seed}}; }
  std::string meta_line() const {
    return "# mxfer " + version() + " config=" + config_hash + " seed=" + std::to_string(cfg.seed) + "\n";
  }

  void write(const std::string& rel, const std::string& text) {
    io::write_text(path(rel), text);
    written.push_back(rel);
  }
  void write_csv(const std::string& rel, const std::string& body) { write(rel, meta_line() + body); }
  void write_json(const std::string& rel, json j) {
    j["meta"] = meta();
    write(rel, j.dump(1) + "\n");
  }
  void save_params(const std::string& rel, const ParameterVector& p, const std::string& role) {
    json m = meta();
    m["role"] = role;
    io::save_checkpoint(path(rel), p, m);
    written.push_back(rel);
    written.push_back(rel + ".json");
  }

  // ---- manifest ----

  bool has_manifest() const { return fs::exists(manifest_path()); }

  void load_manifest() {
    if (!manifest.is_null()) return;
    try {
      manifest = json::parse(io::read_text(manifest_path()));
    } catch (const json::exception& e) {
      throw ManifestError("corrupt manifest " + manifest_path().string() + ": " + e.what());
    }
  }

  void save_manifest() {
    const fs::path tmp = path("manifest.json.tmp");
    io::write_text(tmp, manifest.dump(1) + "\n");
    fs::rename(tmp, manifest_path());
  }

  bool done(Stage s) const {
    return manifest.contains("stages") && manifest["stages"].contains(to_string(s));
  }

  void verify(Stage s) const {
    if (!done(s)) return;
    for (const auto& [rel, sha] : manifest["stages"][to_string(s)]["artifacts"].items()) {
      const fs::path p = path(rel);
      if (!fs::exists(p))
        throw ManifestError("artifact " + p.string() + " recorded by stage '" + to_string(s) +
                            "' is missing; rerun that stage with --force");
      if (sha256_file(p) != sha.get<std::string>())
        throw ManifestError("artifact " + p.string() + " does not match the hash recorded by stage '" +
                            to_string(s) + "'; rerun that stage with --force");
    }
  }

  void record(Stage s) {
    json artifacts = json::object();
    std::sort(written.begin(), written.end());
    written.erase(std::unique(written.begin(), written.end()), written.end());
    for (const auto& rel : written) artifacts[rel.generic_string()] = sha256_file(path(rel));
    manifest["stages"][to_string(s)] = {{"artifacts", artifacts}};
    written.clear();
    save_manifest();
  }

  // ---- data and models ----

  const std::vector<TaskDataset>& tasks() {
    if (tasks_) return *tasks_;
    std::vector<TaskDataset> out;
    if (cfg.data.source == "synthetic") {
      out = generate_tasks(cfg.data.synthetic);
    } else {
      for (std::size_t i = 0; i < cfg.data.idx.size(); ++i) {
        const auto& src = cfg.data.idx[i];
        TaskDataset t = load_idx_images(src.images, src.labels, cfg.data.test_fraction, cfg.seed * 7919 + i);
        t.task = i;
        t.name = src.images.stem().string();
        if (!out.empty() && t.input_side != out.front().input_side)
          throw std::runtime_error("IDX tasks must share one image size: " + src.images.string());
        out.push_back(std::move(t));
      }
    }
    tasks_ = std::move(out);
    return *tasks_;
  }

  ModelSpec with_tasks(ModelSpec s) {
    s.input_side = tasks().front().input_side;
    s.head_classes.clear();
    for (const auto& t : tasks()) s.head_classes.push_back(t.classes);
    return s;
  }
  const ModelSpec& spec() {
    if (!spec_) spec_ = with_tasks(cfg.model);
    return *spec_;
  }
  const ModelSpec& cross_spec() {
    if (!cross_spec_) cross_spec_ = with_tasks(cfg.cross_arch.model);
    return *cross_spec_;
  }
  std::size_t task_count() { return tasks().size(); }

  static std::string pretrained_rel() { return "checkpoints/pretrained.mxb"; }
  static std::string finetuned_rel(std::size_t t) { return "checkpoints/finetuned_" + std::to_string(t) + ".mxb"; }
  static std::string crossarch_rel(std::size_t t) { return "checkpoints/crossarch_" + std::to_string(t) + ".mxb"; }
  static std::string merged_rel(const std::string& tag) { return "merged/" + file_tag(tag) + ".mxb"; }

  std::shared_ptr<const ParameterVector> theta0() {
    if (!theta0_) theta0_ = std::make_shared<const ParameterVector>(io::load_checkpoint(path(pretrained_rel())));
    return theta0_;
  }
  const std::vector<std::shared_ptr<const ParameterVector>>& finetuned() {
    if (finetuned_.empty())
      for (std::size_t t = 0; t < task_count(); ++t)
        finetuned_.push_back(std::make_shared<const ParameterVector>(io::load_checkpoint(path(finetuned_rel(t)))));
    return finetuned_;
  }
  const std::vector<std::shared_ptr<const ParameterVector>>& crossarch() {
    if (crossarch_.empty() && cfg.cross_arch.enabled)
      for (std::size_t t = 0; t < task_count(); ++t)
        crossarch_.push_back(std::make_shared<const ParameterVector>(io::load_checkpoint(path(crossarch_rel(t)))));
    return crossarch_;
  }

  std::vector<std::string> merged_tags() const {
    std::vector<std::string> tags;
    for (auto m : cfg.merge_methods) tags.push_back(merging::method_tag(m, false));
    if (cfg.surgery)
      for (auto m : cfg.merge_methods) tags.push_back(merging::method_tag(m, true));
    return tags;
  }
  const std::vector<std::shared_ptr<const merging::MergedModel>>& merged() {
    if (merged_.empty())
      for (const auto& tag : merged_tags())
        merged_.push_back(std::make_shared<const merging::MergedModel>(io::load_merged(path(merged_rel(tag)))));
    return merged_;
  }

  // Owns the per-task classifier views.
  struct TaskModels {
    std::vector<std::unique_ptr<Classifier>> owned;
    std::vector<evaluation::NamedModel> surrogates;
    std::vector<evaluation::NamedModel> targets;
    std::map<std::string, std::string> checkpoint;  // name -> checkpoint path
  };

  TaskModels task_models(std::size_t t, bool with_merged) {
    TaskModels m;
    auto add = [&](const std::string& name, std::unique_ptr<Classifier> c, const std::string& rel, bool surrogate) {
      evaluation::NamedModel nm{name, c.get()};
      m.owned.push_back(std::move(c));
      if (surrogate) m.surrogates.push_back(nm);
      m.targets.push_back(nm);
      m.checkpoint[name] = rel;
    };
    add(hypotheses::kPretrained, std::make_unique<TaskModel>(spec(), theta0(), t), pretrained_rel(), true);
    add(hypotheses::kFinetuned, std::make_unique<TaskModel>(spec(), finetuned().at(t), t), finetuned_rel(t), true);
    if (cfg.cross_arch.enabled)
      add("crossarch", std::make_unique<TaskModel>(cross_spec(), crossarch().at(t), t), crossarch_rel(t), true);
    if (with_merged)
      for (const auto& mm : merged())
        add(mm->method, std::make_unique<merging::MergedTaskModel>(mm, t), merged_rel(mm->method), false);
    return m;
  }

  // ---- stages ----

  void stage_init() {
    json hyps = json::object();
    for (const auto& h : cfg.hypotheses) hyps[h.id] = h.hash();
    manifest = json{{"schema", 1},
                    {"config_hash", config_hash},
                    {"seed", cfg.seed},
                    {"version", version()},
                    {"hypotheses", hyps},
                    {"stages", json::object()}};
    write_json("config.canonical.json", json{{"config", json::parse(cfg.canonical())}});
  }

  void stage_pretrain() {
    const ParameterVector theta = pretrain(spec(), tasks(), cfg.pretrain);
    save_params(pretrained_rel(), theta, "pretrained");
    json splits = json::array();
    for (const auto& t : tasks())
      splits.push_back({{"task", t.task},
                        {"name", t.name},
                        {"classes", t.classes},
                        {"train", io::split_hash(t.train)},
                        {"eval", io::split_hash(t.eval_half())},
                        {"attack", io::split_hash(t.attack_half())}});
    write_json("data/splits.json", json{{"splits", splits}});
    theta0_.reset();
  }

  void stage_finetune() {
    for (const auto& task : tasks()) {
      SgdConfig c = cfg.finetune;
      c.seed = cfg.seed + 10 + task.task;
      save_params(finetuned_rel(task.task), finetune(spec(), *theta0(), task, c), "finetuned");
    }
    finetuned_.clear();
    if (cfg.cross_arch.enabled) {
      for (const auto& task : tasks()) {
        SgdConfig c = cfg.cross_arch.training;
        c.seed = cfg.seed + 20 + task.task;
        const ParameterVector init = init_parameters(cross_spec(), cfg.seed + 30 + task.task);
        save_params(crossarch_rel(task.task), finetune(cross_spec(), init, task, c), "crossarch");
      }
      crossarch_.clear();
    }
  }

  void stage_merge() {
    std::vector<ParameterVector> models;
    for (const auto& f : finetuned()) models.push_back(*f);
    std::vector<Tensor> unlabeled;
    for (const auto& t : tasks()) unlabeled.push_back(t.eval_half().x);

    std::vector<merging::MergedModel> base;
    for (auto method : cfg.merge_methods) {
      merging::MergeSpec ms = cfg.merge;
      ms.method = method;
      merging::MergedModel m{spec(), {}, merging::method_tag(method, false), {}};
      if (method == merging::Method::AdaMerging) {
        const auto r = merging::ada_merge(spec(), *theta0(), models, unlabeled, cfg.merge.ada);
        m.theta = r.merged;
        write_json("merged/AM.lambdas.json", json{{"layer_groups", r.layer_groups},
                                                  {"lambdas", r.lambdas},
                                                  {"entropy_curve", r.entropy_curve}});
      } else {
        m.theta = merging::merge_checkpoints(spec(), *theta0(), models, ms);
      }
      base.push_back(std::move(m));
    }
    auto save = [&](const merging::MergedModel& m) {
      const std::string rel = merged_rel(m.method);
      io::save_merged(path(rel), m, meta());
      written.push_back(rel);
      written.push_back(rel + ".json");
    };
    for (const auto& m : base) save(m);
    if (cfg.surgery)
      for (const auto& m : base) save(merging::train_surgery(m, models, unlabeled, *cfg.merge.surgery));
    merged_.clear();
  }

  static std::string attack_dir(const attacks::AttackSpec& a) {
    return attacks::to_string(a.method) + (a.targeted ? "-targeted" : "");
  }
  static std::string adv_rel(std::size_t t, const std::string& dir, const std::string& model) {
    return "adv/t" + std::to_string(t) + "/" + dir + "/" + file_tag(model) + ".mxa";
  }

  // Loads a cached batch when its key matches, otherwise crafts and stores it.
  attacks::AdvBatch cached_attack(const std::string& rel, const Classifier& model, const std::string& checkpoint,
                                  const Split& split, const attacks::AttackSpec& spec) {
    const std::string key = io::adv_cache_key(spec, sha256_file(path(checkpoint)), io::split_hash(split));
    const fs::path p = path(rel);
    written.push_back(rel);
    if (!opt.force && fs::exists(p)) {
      std::string stored;
      try {
        stored = io::read_adv_cache_key(p);
      } catch (const std::exception&) {
      }
      if (stored == key) return io::load_adv_batch(p);
    }
    attacks::AdvBatch b = attacks::run_attack(model, split.x, spec, std::nullopt, opt.workers);
    io::save_adv_batch(p, b, key);
    return b;
  }

  void stage_attack() {
    for (const auto& task : tasks()) {
      const Split split = task.attack_half();
      TaskModels m = task_models(task.task, true);
      std::vector<attacks::AttackSpec> all = cfg.attacks;
      all.insert(all.end(), cfg.targeted_attacks.begin(), cfg.targeted_attacks.end());
      for (const auto& a : all)
        for (const auto& s : m.surrogates)
          cached_attack(adv_rel(task.task, attack_dir(a), s.name), *s.model, m.checkpoint[s.name], split, a);
      // Query-based attack run directly against every merged target.
      for (const auto& a : cfg.attacks) {
        if (a.method != attacks::Method::Square) continue;
        for (const auto& tg : m.targets)
          if (!std::any_of(m.surrogates.begin(), m.surrogates.end(), [&](const auto& s) { return s.name == tg.name; }))
            cached_attack(adv_rel(task.task, "SQUARE-direct", tg.name), *tg.model, m.checkpoint[tg.name], split, a);
      }
    }
  }

  attacks::AdvBatch load_batch(std::size_t t, const std::string& dir, const std::string& model) {
    return io::load_adv_batch(path(adv_rel(t, dir, model)));
  }

  void stage_eval() {
    json untargeted = json::array(), targeted = json::array();
    std::ostringstream rbar;
    rbar << "task,attack,mode,surrogate,white_box,rbar\n";
    std::ostringstream square;
    square << "task,target,asr,queries\n";
    std::ostringstream acc;
    acc << "model";
    for (const auto& t : tasks()) acc << "," << csv_field(t.name);
    acc << ",mean\n";
    std::map<std::string, std::vector<double>> acc_rows;
    std::vector<std::string> acc_order;

    for (const auto& task : tasks()) {
      TaskModels m = task_models(task.task, true);
      const Split eval = task.eval_half();
      for (const auto& tg : m.targets) {
        if (!acc_rows.contains(tg.name)) acc_order.push_back(tg.name);
        acc_rows[tg.name].push_back(evaluate_accuracy(*tg.model, eval));
      }
      std::vector<attacks::AttackSpec> all = cfg.attacks;
      all.insert(all.end(), cfg.targeted_attacks.begin(), cfg.targeted_attacks.end());
      for (const auto& a : all) {
        std::map<std::string, attacks::AdvBatch> batches;
        for (const auto& s : m.surrogates) batches[s.name] = load_batch(task.task, attack_dir(a), s.name);
        const auto matrix =
            evaluation::build_asr_matrix(task.task, attacks::to_string(a.method), m.surrogates, m.targets, batches);
        const std::string mode = a.targeted ? "targeted" : "untargeted";
        write_csv("eval/asr/t" + std::to_string(task.task) + "_" + attack_dir(a) + ".csv", evaluation::to_csv(matrix));
        (a.targeted ? targeted : untargeted).push_back(io::to_json(matrix));
        for (const auto& s : matrix.surrogates) {
          const auto r = evaluation::relative_transfer_asr(matrix, s);
          rbar << task.task << "," << csv_field(matrix.attack) << "," << mode << "," << csv_field(s) << ","
               << format_double(matrix.white_box(s)) << "," << (r.value ? format_double(*r.value) : "undefined")
               << "\n";
        }
      }
      for (const auto& a : cfg.attacks) {
        if (a.method != attacks::Method::Square) continue;
        for (const auto& tg : m.targets) {
          const fs::path p = path(adv_rel(task.task, "SQUARE-direct", tg.name));
          if (!fs::exists(p)) continue;
          const auto b = io::load_adv_batch(p);
          square << task.task << "," << csv_field(tg.name) << "," << format_double(evaluation::asr(*tg.model, b))
                 << "," << b.queries << "\n";
        }
      }
    }
    for (const auto& name : acc_order) {
      const auto& v = acc_rows[name];
      acc << csv_field(name);
      for (double x : v) acc << "," << format_double(x);
      acc << "," << format_double(stats::mean(v)) << "\n";
    }
    write_csv("eval/accuracy.csv", acc.str());
    write_csv("eval/rbar.csv", rbar.str());
    write_csv("eval/square_direct.csv", square.str());
    write_json("eval/asr_matrices.json", json{{"untargeted", untargeted}, {"targeted", targeted}});
  }

  std::vector<evaluation::AsrMatrix> load_matrices(const std::string& kind) {
    const json j = json::parse(io::read_text(path("eval/asr_matrices.json")));
    std::vector<evaluation::AsrMatrix> out;
    for (const auto& m : j.at(kind)) out.push_back(io::asr_matrix_from_json(m));
    return out;
  }

  void stage_stats() {
    std::set<std::string> registered;
    for (const auto& [id, h] : manifest["hypotheses"].items()) registered.insert(h.get<std::string>());
    const auto reports = hypotheses::run_hypotheses(load_matrices("untargeted"), cfg.hypotheses, registered,
                                                    cfg.alpha, cfg.q);
    json deltas = json::array();
    for (const auto& r : reports) {
      std::ostringstream os;
      for (std::size_t g = 0; g < r.groups.size(); ++g) {
        std::istringstream body(stats::to_csv(r.groups[g]));
        std::string line;
        bool header = true;
        while (std::getline(body, line)) {
          if (header) {
            if (g == 0) os << "group," << line << "\n";
            header = false;
          } else {
            os << g << "," << line << "\n";
          }
        }
      }
      write_csv("stats/" + r.id + ".csv", os.str());
      json groups = json::array();
      for (const auto& g : r.samples) {
        json samples = json::array();
        for (const auto& s : g) samples.push_back({{"label", s.label}, {"values", s.values}});
        groups.push_back(samples);
      }
      deltas.push_back({{"id", r.id}, {"groups", groups}});
    }
    write_json("stats/deltas.json", json{{"unit", "percentage points"}, {"hypotheses", deltas}});
    write("stats/hypotheses.md", "<!-- mxfer " + version() + " config=" + config_hash +
                                     " seed=" + std::to_string(cfg.seed) + " -->\n\n" +
                                     hypotheses::to_markdown(reports));
  }

  void stage_defend() {
    const std::size_t d = cfg.defense_task;
    if (d >= task_count()) throw std::runtime_error("defenses.task out of range");
    const TaskDataset& task = tasks().at(d);
    TaskModels m = task_models(d, true);
    attacks::AttackSpec ni = cfg.attacks.empty() ? attacks::AttackSpec{} : cfg.attacks.front();
    ni.method = attacks::Method::NiFgsm;
    ni.targeted = false;
    for (const auto& a : cfg.attacks)
      if (a.method == attacks::Method::NiFgsm) ni = a;
    const Split split = task.attack_half();
    std::map<std::string, attacks::AdvBatch> batches;
    for (const auto& s : m.surrogates) {
      if (s.name != hypotheses::kPretrained && s.name != hypotheses::kFinetuned) continue;
      batches[s.name] = cached_attack(adv_rel(d, attack_dir(ni), s.name), *s.model, m.checkpoint[s.name], split, ni);
    }
    // Adversarial batches belong to the attack stage; only the report is this stage's output.
    written.clear();
    std::vector<evaluation::NamedModel> merged_targets(m.targets.begin() + static_cast<std::ptrdiff_t>(m.surrogates.size()),
                                                       m.targets.end());
    const auto rows = defenses::defense_report(merged_targets, batches, split.y, cfg.defenses);
    write_csv("defense/defense.csv", defenses::to_csv(rows));
  }

  void stage_grad_analysis() {
    const std::size_t t = cfg.probe_task;
    if (t >= task_count()) throw std::runtime_error("analysis.task out of range");
    const Split split = tasks().at(t).attack_half();
    const std::size_t n = std::min(cfg.probe_count, split.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const Tensor probes = split.subset(idx).x;

    TaskModels m = task_models(t, true);
    const Classifier& surrogate = *m.surrogates.at(1).model;
    const auto labels = surrogate.predict(probes);
    std::vector<TaskModel> ft;
    for (const auto& f : finetuned()) ft.emplace_back(spec(), f, t);
    std::vector<const Classifier*> ftp;
    for (const auto& f : ft) ftp.push_back(&f);
    std::vector<evaluation::NamedModel> base;
    for (const auto& tg : m.targets)
      if (merged_is_base(tg.name)) base.push_back(tg);
    const auto report = hypotheses::center_score(base, ftp, surrogate, probes, labels);

    std::ostringstream os;
    os << "model,mean_center,mean_alignment,probes\n";
    json models = json::array();
    for (const auto& s : report.models) {
      os << csv_field(s.name) << "," << format_double(s.mean_center()) << "," << format_double(s.mean_alignment())
         << "," << s.center.size() << "\n";
      models.push_back({{"name", s.name},
                        {"mean_center", s.mean_center()},
                        {"mean_alignment", s.mean_alignment()},
                        {"center", s.center},
                        {"alignment", s.alignment}});
    }
    write_csv("analysis/gradient.csv", os.str());
    json j{{"task", t}, {"probes", report.probes}, {"skipped", report.skipped}, {"models", models}};
    if (report.center_test)
      j["center_test"] = {{"u", report.center_test->u}, {"p", report.center_test->p}, {"exact", report.center_test->exact}};
    if (report.alignment_test)
      j["alignment_test"] = {
          {"u", report.alignment_test->u}, {"p", report.alignment_test->p}, {"exact", report.alignment_test->exact}};
    write_json("analysis/gradient.json", j);

    const auto lemma = hypotheses::verify_cosine_lemma(cfg.seed, 16, 5, 50, 1000);
    write_json("analysis/lemma.json", json{{"trials", lemma.trials},
                                           {"probes", lemma.probes},
                                           {"violations", lemma.violations},
                                           {"max_value_error", lemma.max_value_error},
                                           {"passed", lemma.passed()}});
  }

  bool merged_is_base(const std::string& name) const {
    for (auto mth : cfg.merge_methods)
      if (merging::method_tag(mth, false) == name) return true;
    return false;
  }

  std::string read_body(const std::string& rel) { return io::read_text(path(rel)); }

  void stage_report() {
    std::ostringstream os;
    os << "# Transfer-attack report\n\n"
       << "toolkit " << version() << ", config `" << config_hash << "`, seed " << cfg.seed << "\n\n";

    os << "## Clean accuracy (eval half)\n\n" << csv_to_markdown(read_body("eval/accuracy.csv")) << "\n";

    const auto matrices = load_matrices("untargeted");
    os << "## ASR matrices (NI-FGSM, untargeted)\n\n"
       << "Rows are surrogates, columns are targets; Rbar averages the merged targets relative to the white-box "
          "entry. Every (task, attack) matrix is under `eval/asr/`.\n\n";
    for (const auto& m : matrices) {
      if (m.attack != "NI-FGSM") continue;
      os << "### Task " << m.task << "\n\n" << csv_to_markdown(evaluation::to_csv(m)) << "\n";
    }

    // Mean Rbar per attack and surrogate, untargeted and targeted.
    os << "## Mean relative transfer ASR over tasks\n\n| mode | attack | surrogate | mean white-box | mean Rbar |\n"
          "|---|---|---|---|---|\n";
    for (const std::string mode : {"untargeted", "targeted"}) {
      std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> agg;
      std::vector<std::pair<std::string, std::string>> order;
      for (const auto& m : load_matrices(mode))
        for (const auto& s : m.surrogates) {
          const auto key = std::make_pair(m.attack, s);
          if (!agg.contains(key)) order.push_back(key);
          agg[key].first.push_back(m.white_box(s));
          if (auto r = evaluation::relative_transfer_asr(m, s); r.value) agg[key].second.push_back(*r.value);
        }
      for (const auto& key : order) {
        const auto& [wb, rb] = agg[key];
        os << "| " << mode << " | " << key.first << " | " << key.second << " | " << format_double(stats::mean(wb))
           << " | " << (rb.empty() ? std::string("undefined") : format_double(stats::mean(rb))) << " |\n";
      }
    }
    os << "\n";

    const std::string square = read_body("eval/square_direct.csv");
    if (square.find('\n', square.find("task,")) + 1 < square.size())
      os << "## Square attack queried directly against merged targets\n\n" << csv_to_markdown(square) << "\n";

    os << "## Hypothesis tests\n\nDeltas are in percentage points; BH correction is applied per group.\n\n";
    {
      std::string md = read_body("stats/hypotheses.md");
      md.erase(0, md.find("###"));
      os << md;
    }

    os << "## Input-transformation defenses (task " << cfg.defense_task << ", NI-FGSM)\n\n"
       << csv_to_markdown(read_body("defense/defense.csv")) << "\n";

    const json g = json::parse(read_body("analysis/gradient.json"));
    os << "## Gradient center score (task " << g["task"].get<std::size_t>() << ", " << g["probes"].get<std::size_t>()
       << " probes, " << g["skipped"].get<std::size_t>() << " skipped)\n\n"
       << csv_to_markdown(read_body("analysis/gradient.csv")) << "\n";
    if (g.contains("center_test"))
      os << "Mann-Whitney, WA center score above the other base methods: U = "
         << format_double(g["center_test"]["u"].get<double>())
         << ", one-sided p = " << format_double(g["center_test"]["p"].get<double>()) << "\n\n";
    if (g.contains("alignment_test"))
      os << "Mann-Whitney, WA alignment above the other base methods: U = "
         << format_double(g["alignment_test"]["u"].get<double>())
         << ", one-sided p = " << format_double(g["alignment_test"]["p"].get<double>()) << "\n\n";
    const json lemma = json::parse(read_body("analysis/lemma.json"));
    os << "Cosine lemma check: " << lemma["trials"].get<std::size_t>() << " trials x "
       << lemma["probes"].get<std::size_t>() / std::max<std::size_t>(1, lemma["trials"].get<std::size_t>())
       << " probes, " << lemma["violations"].get<std::size_t>() << " violations, max value error "
       << format_double(lemma["max_value_error"].get<double>()) << "\n\n";

    os << "## Desk checks\n\n" << desk_checks(matrices, g);
    write("report.md", os.str());
  }

  std::string desk_checks(const std::vector<evaluation::AsrMatrix>& matrices, const json& gradient) {
    std::ostringstream os;
    std::vector<double> wb, rb;
    for (const auto& m : matrices) {
      if (m.attack != "NI-FGSM") continue;
      wb.push_back(m.white_box(hypotheses::kFinetuned));
      if (auto r = evaluation::relative_transfer_asr(m, hypotheses::kFinetuned); r.value) rb.push_back(*r.value);
    }
    if (!wb.empty())
      os << "- fine-tuned NI-FGSM white-box ASR: min " << format_double(*std::min_element(wb.begin(), wb.end()))
         << ", mean " << format_double(stats::mean(wb)) << "\n";
    if (!rb.empty()) os << "- mean Rbar, fine-tuned surrogate to merged targets: " << format_double(stats::mean(rb)) << "\n";
    const json deltas = json::parse(read_body("stats/deltas.json"));
    for (const auto& h : deltas["hypotheses"])
      if (h["id"] == "H3")
        for (const auto& s : h["groups"][0])
          os << "- median delta " << s["label"].get<std::string>() << ": "
             << median_text(s["values"].get<std::vector<double>>()) << " pp\n";
    double wa = 0.0, others = 0.0;
    std::size_t n_others = 0;
    bool has_wa = false;
    for (const auto& mdl : gradient["models"]) {
      if (mdl["name"] == "WA") {
        wa = mdl["mean_center"].get<double>();
        has_wa = true;
      } else {
        others += mdl["mean_center"].get<double>();
        ++n_others;
      }
    }
    if (has_wa && n_others)
      os << "- mean center score: WA " << format_double(wa) << ", other base methods "
         << format_double(others / static_cast<double>(n_others)) << "\n";
    return os.str();
  }

  void execute(Stage s) {
    switch (s) {
      case Stage::Init: stage_init(); break;
      case Stage::Pretrain: stage_pretrain(); break;
      case Stage::Finetune: stage_finetune(); break;
      case Stage::Merge: stage_merge(); break;
      case Stage::Attack: stage_attack(); break;
      case Stage::Eval: stage_eval(); break;
      case Stage::Stats: stage_stats(); break;
      case Stage::Defend: stage_defend(); break;
      case Stage::GradAnalysis: stage_grad_analysis(); break;
      case Stage::Report: stage_report(); break;
    }
  }

  bool run(Stage s) {
    written.clear();
    if (s == Stage::Init) {
      if (has_manifest()) {
        load_manifest();
        const std::string recorded = manifest.value("config_hash", "");
        if (recorded == config_hash && !opt.force) {
          verify(Stage::Init);
          return false;
        }
        if (recorded != config_hash && !opt.force)
          throw ManifestError(opt.out.string() + " holds a run with config hash " + recorded +
                              "; use --force to reinitialize it");
      }
      execute(s);
      record(s);
      executed.push_back(s);
      return true;
    }
    if (!has_manifest()) throw DependencyError(s, Stage::Init);
    load_manifest();
    if (manifest.value("config_hash", "") != config_hash)
      throw ManifestError("config hash " + config_hash + " differs from the one recorded at init (" +
                          manifest.value("config_hash", "") + "); rerun init with --force");
    for (Stage d : dependencies(s))
      if (!done(d)) throw DependencyError(s, d);
    std::set<Stage> upstream;
    transitive(s, upstream);
    for (Stage d : upstream) verify(d);
    if (done(s) && !opt.force) {
      verify(s);
      return false;
    }
    // Downstream results no longer describe the recomputed artifacts.
    for (Stage other : all_stages())
      if (depends_on(other, s)) manifest["stages"].erase(to_string(other));
    manifest["stages"].erase(to_string(s));
    save_manifest();
    execute(s);
    record(s);
    executed.push_back(s);
    return true;
  }
};

Runner::Runner(config::ExperimentConfig config, Options options)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(options))) {}
Runner::~Runner() = default;

bool Runner::run(Stage stage) { return impl_->run(stage); }

void Runner::run_all(std::optional<Stage> last) {
  for (Stage s : all_stages()) {
    impl_->run(s);
    if (last && s == *last) break;
  }
}

const std::vector<Stage>& Runner::executed() const { return impl_->executed; }
std::filesystem::path Runner::manifest_path() const { return impl_->manifest_path(); }

}  // namespace mxfer::pipeline
