#include "entk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "entk/disentangle.hpp"
#include "entk/entk.hpp"
#include "entk/errors.hpp"
#include "entk/io.hpp"
#include "entk/models.hpp"
#include "entk/spectral.hpp"
#include "entk/training.hpp"

#ifndef ENTK_VERSION
#define ENTK_VERSION "0.0.0"
#endif

namespace entk {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.experiment == DatasetKind::tms) return gen_tms_dataset(cfg.n, cfg.num_points, cfg.sparsity, cfg.seed);
  return split_train_test(gen_modadd_dataset(cfg.p), cfg.alpha, cfg.seed);
}

Dataset eval_dataset(const ExperimentConfig& cfg, const Dataset& ds) {
  if (cfg.experiment == DatasetKind::modadd) {
    if (cfg.eval_set == "train") {
      Dataset out = ds.subset(ds.split->train);
      out.kind = ds.kind;
      out.size_param = ds.size_param;
      return out;
    }
    return ds;
  }
  if (cfg.eval_set == "lattice") throw ConfigError("eval_set = lattice only applies to modadd");
  return ds;
}

std::vector<int> checkpoint_schedule(const ExperimentConfig& cfg) {
  std::vector<int> out = {0};
  const int every = std::max(1, cfg.checkpoint_every);
  for (int e = every; e < cfg.train.epochs; e += every) out.push_back(e);
  if (cfg.train.epochs > 0) out.push_back(cfg.train.epochs);
  return out;
}

namespace {

std::string epoch_name(const std::string& prefix, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06d", prefix.c_str(), epoch);
  return buf;
}

std::string beta_name(double beta) { return "beta" + io::format_double(beta); }

// Config identity for resuming: everything except the epoch budget.
std::string training_identity(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.train.epochs = 0;
  c.out = "";
  c.kernel_specs.clear();
  c.steps.clear();
  return config_hash(c);
}

struct KernelResult {
  Spectrum<double> spectrum;   // top eigenpairs
  Eigen::VectorXd eigenvalues;  // every computed eigenvalue (all of them when dense)
  Index dim = 0;
  int epoch = 0;
};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log)
      : cfg_(cfg), opts_(opts), log_(log), root_(cfg.out), hash_(config_hash(cfg)) {}

  void train();
  void kernels();
  void analyze();
  void report();

 private:
  fs::path ckpt_dir() const { return root_ / "checkpoints"; }
  fs::path last_ckpt() const { return ckpt_dir() / "last.ckpt"; }

  void emit(const std::string& rel, const std::string& content, int epoch, const std::string& spec = "");
  void emit_json(const std::string& rel, const json& j, int epoch, const std::string& spec = "") {
    emit(rel, j.dump(2) + "\n", epoch, spec);
  }
  void provenance(const std::string& rel, int epoch, const std::string& spec);
  void emit_heatmap(const std::string& rel_base, const AlignmentHeatmap& h, int epoch, const std::string& spec);

  const Dataset& dataset();
  const Dataset& eval();
  bool trained() const;
  void ensure_trained();
  Checkpoint final_checkpoint();
  std::vector<std::pair<int, ModelParams>> checkpoints(const std::vector<int>& epochs);
  std::vector<std::pair<std::string, KernelSpec>> kernel_jobs() const;
  KernelResult kernel(const std::string& tag, const KernelSpec& spec, bool log_cached = false);

  void analyze_tms();
  void analyze_modadd();

  ExperimentConfig cfg_;
  RunOptions opts_;
  std::ostream& log_;
  fs::path root_;
  std::string hash_;
  std::optional<Dataset> ds_, eval_;
  std::optional<Checkpoint> final_, init_;
};

void Pipeline::provenance(const std::string& rel, int epoch, const std::string& spec) {
  json p = {{"file", rel}, {"config_hash", hash_}, {"checkpoint_epoch", epoch}, {"version", ENTK_VERSION}};
  if (!spec.empty()) p["kernel_spec"] = spec;
  io::write_atomic(root_ / (rel + ".prov.json"), p.dump(2) + "\n");
}

void Pipeline::emit(const std::string& rel, const std::string& content, int epoch, const std::string& spec) {
  const fs::path path = root_ / rel;
  fs::create_directories(path.parent_path());
  io::write_atomic(path, content);
  provenance(rel, epoch, spec);
}

void Pipeline::emit_heatmap(const std::string& rel_base, const AlignmentHeatmap& h, int epoch,
                            const std::string& spec) {
  fs::create_directories((root_ / rel_base).parent_path());
  write_heatmap(h, root_ / rel_base);
  provenance(rel_base + ".csv", epoch, spec);
  provenance(rel_base + ".pgm", epoch, spec);
}

const Dataset& Pipeline::dataset() {
  if (!ds_) ds_ = build_dataset(cfg_);
  return *ds_;
}

const Dataset& Pipeline::eval() {
  if (!eval_) eval_ = eval_dataset(cfg_, dataset());
  return *eval_;
}

bool Pipeline::trained() const {
  if (!fs::exists(last_ckpt()) || !fs::exists(root_ / "run.json")) return false;
  try {
    const json run = json::parse(io::read_file(root_ / "run.json"));
    return run.value("identity", "") == training_identity(cfg_) && run.value("epochs", -1) >= cfg_.train.epochs;
  } catch (const std::exception&) {
    return false;
  }
}

void Pipeline::train() {
  const Dataset& ds = dataset();
  fs::create_directories(ckpt_dir());
  save_dataset(ds, root_ / "dataset");
  for (const char* f : {"dataset/inputs.csv", "dataset/labels.csv", "dataset/meta.json"}) provenance(f, 0, "");

  std::optional<Checkpoint> resume;
  TrainHistory old;
  if (opts_.resume && fs::exists(last_ckpt())) {
    if (fs::exists(root_ / "run.json")) {
      const json run = json::parse(io::read_file(root_ / "run.json"));
      if (run.value("identity", "") != training_identity(cfg_))
        throw ConfigError("cannot resume: " + last_ckpt().string() + " was produced by a different configuration");
    }
    resume = load_checkpoint(last_ckpt());
    if (resume->epoch >= cfg_.train.epochs) {
      log_ << "train: up to date at epoch " << resume->epoch << "\n";
      return;
    }
    if (fs::exists(root_ / "history.csv")) old = TrainHistory::from_csv(io::read_file(root_ / "history.csv"));
    log_ << "train: resuming from epoch " << resume->epoch << "\n";
  } else if (!opts_.force && trained()) {
    log_ << "train: outputs up to date (use --force to retrain)\n";
    return;
  }

  TrainConfig tc = cfg_.train;
  tc.seed = cfg_.seed;
  tc.checkpoint_dir = ckpt_dir();
  tc.checkpoint_epochs = checkpoint_schedule(cfg_);
  log_ << "train: " << to_string(cfg_.experiment) << ", " << tc.epochs << " epochs, " << tc.checkpoint_epochs.size()
       << " checkpoints\n";

  TrainHistory hist;
  ModelParams final_params;
  if (cfg_.experiment == DatasetKind::tms) {
    auto [params, h] = train_tms(ds, ImportanceSpec{cfg_.importance_base}, tc, resume);
    final_params = params;
    hist = std::move(h);
  } else {
    auto [params, h] = train_modadd(ds, tc, resume);
    final_params = params;
    hist = std::move(h);
  }
  if (resume) {
    const int start = resume->epoch;
    std::erase_if(old.records, [&](const EpochRecord& r) { return r.epoch >= start; });
    old.records.insert(old.records.end(), hist.records.begin(), hist.records.end());
    old.stopped_at = hist.stopped_at;
    hist.records = std::move(old.records);
  }
  const int final_epoch = hist.records.empty() ? 0 : hist.records.back().epoch;
  for (const auto& path : hist.checkpoint_paths) {
    const Checkpoint c = load_checkpoint(path);
    provenance(fs::relative(path, root_).string(), c.epoch, "");
  }
  provenance("checkpoints/last.ckpt", final_epoch, "");
  emit("history.csv", hist.to_csv(), final_epoch);

  json summary = {{"final_epoch", final_epoch}, {"params_hash", params_hash(final_params)}};
  if (!hist.records.empty()) {
    const auto& r = hist.records.back();
    summary["train_loss"] = r.train_loss;
    if (r.test_loss) summary["test_loss"] = *r.test_loss;
    if (r.train_acc) summary["train_acc"] = *r.train_acc;
    if (r.test_acc) summary["test_acc"] = *r.test_acc;
  }
  if (hist.stopped_at) summary["stopped_at"] = *hist.stopped_at;
  if (const auto* t = std::get_if<TmsParams>(&final_params))
    summary["reconstructed_features"] = reconstructed_feature_count(*t, cfg_.recon_threshold);
  if (cfg_.experiment == DatasetKind::modadd) {
    if (const auto g = detect_grokking(hist)) summary["grokking_epoch"] = *g;
    else summary["grokking_epoch"] = nullptr;
  }
  emit_json("train.json", summary, final_epoch);
  emit_json("run.json", {{"identity", training_identity(cfg_)}, {"epochs", cfg_.train.epochs}}, final_epoch);
  emit("config.ini", to_ini(cfg_), final_epoch);
  log_ << "train: done at epoch " << final_epoch << ", loss " << io::format_double(summary.value("train_loss", 0.0))
       << "\n";
  final_.reset();
  init_.reset();
}

void Pipeline::ensure_trained() {
  if (opts_.checkpoint) return;
  if (trained()) return;
  log_ << "train: checkpoints missing or stale, training first\n";
  train();
}

Checkpoint Pipeline::final_checkpoint() {
  if (!final_) {
    ensure_trained();
    final_ = load_checkpoint(opts_.checkpoint ? *opts_.checkpoint : last_ckpt());
  }
  return *final_;
}

std::vector<std::pair<int, ModelParams>> Pipeline::checkpoints(const std::vector<int>& epochs) {
  ensure_trained();
  std::vector<std::pair<int, ModelParams>> out;
  for (int e : epochs) {
    const fs::path path = ckpt_dir() / (epoch_name("epoch_", e) + ".ckpt");
    out.emplace_back(e, load_checkpoint(path).params);
  }
  return out;
}

std::vector<std::pair<std::string, KernelSpec>> Pipeline::kernel_jobs() const {
  std::vector<std::pair<std::string, KernelSpec>> jobs;
  const auto& specs = cfg_.kernel_specs.empty() ? default_kernel_specs(cfg_) : cfg_.kernel_specs;
  for (const auto& s : specs) {
    KernelSpec spec = parse_kernel_spec(s);
    spec.importance_base = cfg_.importance_base;
    spec.eval_set = cfg_.eval_set;
    jobs.emplace_back("final", spec);
  }
  if (cfg_.experiment == DatasetKind::modadd) {
    KernelSpec spec;
    spec.collapse = Collapse::class_trace;
    spec.layers = LayerSel::layer1;
    spec.eval_set = cfg_.eval_set;
    jobs.emplace_back("init", spec);
  }
  return jobs;
}

KernelResult Pipeline::kernel(const std::string& tag, const KernelSpec& spec_in, bool log_cached) {
  Checkpoint ckpt;
  if (tag == "init") {
    ensure_trained();
    if (!init_) init_ = load_checkpoint(ckpt_dir() / (epoch_name("epoch_", 0) + ".ckpt"));
    ckpt = *init_;
  } else {
    ckpt = final_checkpoint();
  }
  KernelSpec spec = spec_in;
  spec.epoch = ckpt.epoch;
  const Dataset& ev = eval();
  const Index num_classes = ev.num_classes();
  const Index dim = spec.collapse == Collapse::flattened ? ev.num_points() * num_classes : ev.num_points();
  const bool dense = dim <= cfg_.dense_cap;
  const Index keep = std::min<Index>(cfg_.topk, dim);

  const std::string rel = "kernels/" + tag + "/" + spec.key();
  const std::string cache_key =
      io::hex64(io::fnv1a64(spec.key() + "|" + cfg_.eval_set + "|" + params_hash(ckpt.params) + "|" +
                            (dense ? "dense" : "topk") + "|" + std::to_string(keep) + "|" +
                            io::format_double(spec.importance_base) + "|" + hash_));
  const fs::path meta_path = root_ / (rel + ".spectrum.json");

  if (!opts_.force && fs::exists(meta_path)) {
    try {
      const json meta = json::parse(io::read_file(meta_path));
      if (meta.value("cache_key", "") == cache_key) {
        KernelResult r;
        r.dim = meta.at("dim").get<Index>();
        r.epoch = ckpt.epoch;
        const Eigen::MatrixXd ev_all = io::read_csv(root_ / (rel + ".spectrum.csv"), true);
        r.eigenvalues = ev_all.col(1);
        const Index kv = meta.at("vectors").get<Index>();
        r.spectrum.eigenvalues = r.eigenvalues.head(kv);
        r.spectrum.eigenvectors =
            io::decode_f64_row_major(io::read_file(root_ / (rel + ".eigvecs.f64")), r.dim, kv);
        if (log_cached) log_ << "kernel: " << tag << "/" << spec.key() << " cached\n";
        return r;
      }
    } catch (const std::exception& e) {
      io::warn("ignoring unreadable kernel cache " + meta_path.string() + ": " + e.what());
    }
  }

  log_ << "kernel: " << tag << "/" << spec.key() << " (dim " << dim << ", " << (dense ? "dense" : "top-k") << ")\n";
  KernelResult r;
  r.dim = dim;
  r.epoch = ckpt.epoch;
  json meta = {{"cache_key", cache_key}, {"dim", dim}, {"spec", spec.key()}, {"epoch", ckpt.epoch}};
  if (dense) {
    AssembleOptions ao;
    ao.dense_cap = cfg_.dense_cap;
    const KernelMatrix K = assemble_kernel(ckpt.params, ev, spec, ao);
    const Spectrum<double> full = eigh_descending(K.matrix);
    r.eigenvalues = full.eigenvalues;
    r.spectrum.eigenvalues = full.eigenvalues.head(keep);
    r.spectrum.eigenvectors = full.eigenvectors.leftCols(keep);
    r.spectrum.solver = full.solver;
    meta["solver"] = "dense";
    meta["asymmetry"] = K.asymmetry;
    meta["matrix_saved"] = dim <= 2000;
    if (dim <= 2000) {
      fs::create_directories((root_ / rel).parent_path());
      save_kernel(K, root_ / rel, json{{"config_hash", hash_}, {"checkpoint_epoch", ckpt.epoch}}.dump());
      for (const char* ext : {".json", ".f64", ".csv"})
        if (fs::exists(root_ / (rel + ext))) provenance(rel + ext, ckpt.epoch, spec.key());
    }
  } else {
    const KernelOperator op = make_kernel_operator(ckpt.params, ev, spec);
    TopkOptions to;
    to.max_iter = 5000;
    to.seed = cfg_.seed;
    r.spectrum = kernel_topk(op, keep, to);
    r.eigenvalues = r.spectrum.eigenvalues;
    meta["solver"] = "topk";
    meta["matrix_saved"] = false;
  }
  meta["vectors"] = r.spectrum.k();

  Eigen::MatrixXd table(r.eigenvalues.size(), 2);
  for (Index i = 0; i < r.eigenvalues.size(); ++i) table(i, 0) = static_cast<double>(i + 1);
  table.col(1) = r.eigenvalues;
  emit(rel + ".spectrum.csv", io::matrix_to_csv(table, {"index", "eigenvalue"}), ckpt.epoch, spec.key());
  emit(rel + ".eigvecs.f64", io::encode_f64_row_major(r.spectrum.eigenvectors), ckpt.epoch, spec.key());
  emit_json(rel + ".spectrum.json", meta, ckpt.epoch, spec.key());
  return r;
}

void Pipeline::kernels() {
  for (const auto& [tag, spec] : kernel_jobs()) kernel(tag, spec, true);
}

bool wants(const ExperimentConfig& cfg, const std::string& step) {
  return std::find(cfg.steps.begin(), cfg.steps.end(), step) != cfg.steps.end();
}

json cliff_json(const CliffReport& r) { return json::parse(cliff_report_json(r)); }

json match_json(const MatchResult& m, const AlignmentHeatmap& h) {
  json pairs = json::array();
  for (std::size_t c = 0; c < m.assignment.size(); ++c) {
    if (m.assignment[c] < 0) continue;
    pairs.push_back({{"feature", h.cols[c]},
                     {"row", h.rows[static_cast<std::size_t>(m.assignment[c])]},
                     {"score", m.scores[c]}});
  }
  return {{"mean_score", m.mean_score}, {"min_score", m.min_score}, {"pairs", pairs}};
}

void Pipeline::analyze_tms() {
  const Checkpoint ckpt = final_checkpoint();
  const auto& params = std::get<TmsParams>(ckpt.params);
  const Index n = params.n();
  json summary = {{"reconstructed_features", reconstructed_feature_count(params, cfg_.recon_threshold)},
                  {"recon_threshold", cfg_.recon_threshold}};
  const FeatureMatrix features = expanded_data_matrix(eval());

  std::vector<double> betas = {0.0};
  for (double b : cfg_.betas)
    if (b != 0.0) betas.push_back(b);
  json per_beta = json::object();
  for (double beta : betas) {
    KernelSpec spec;
    spec.collapse = Collapse::flattened;
    spec.beta = beta;
    spec.importance_base = cfg_.importance_base;
    spec.eval_set = cfg_.eval_set;
    const KernelResult r = kernel("final", spec);
    const std::string name = beta_name(beta);
    json entry;
    if (wants(cfg_, "cliffs")) {
      const CliffReport cliffs = detect_cliffs(r.eigenvalues, cfg_.cliff_threshold, cfg_.cliff_floor);
      emit("fig1/spectrum_" + name + ".csv", spectrum_csv(r.eigenvalues), r.epoch, spec.key());
      emit("fig1/cliffs_" + name + ".json", cliff_report_json(cliffs), r.epoch, spec.key());
      entry["cliffs"] = cliff_json(cliffs);
      entry["ratio_at_n"] = n <= r.eigenvalues.size() - 1 ? cliffs.ratio_at(n) : 0.0;
    }
    if (wants(cfg_, "heatmaps")) {
      const Index rows = std::min<Index>(n, r.spectrum.k());
      const AlignmentHeatmap h = alignment_heatmap(r.spectrum, features, 0, rows);
      emit_heatmap("fig1/heatmap_" + name, h, r.epoch, spec.key());
      const MatchResult m = match_features(h, features.excluded);
      entry["match"] = match_json(m, h);
      emit_json("fig1/match_" + name + ".json", entry["match"], r.epoch, spec.key());
    }
    per_beta[name] = entry;
  }
  summary["kernels"] = per_beta;
  emit_json("fig1/summary.json", summary, ckpt.epoch);
}

void Pipeline::analyze_modadd() {
  const int p = cfg_.p;
  const Index m = p / 2;
  const Dataset& ev = eval();
  const bool lattice = ev.num_points() == static_cast<Index>(p) * p;

  KernelSpec all_spec, l1_spec, l2_spec;
  all_spec.eval_set = l1_spec.eval_set = l2_spec.eval_set = cfg_.eval_set;
  l1_spec.layers = LayerSel::layer1;
  l2_spec.layers = LayerSel::layer2;
  const KernelResult k_all = kernel("final", all_spec);
  const KernelResult k_l1 = kernel("final", l1_spec);
  const KernelResult k_l2 = kernel("final", l2_spec);
  const Index u = leading_uniform_modes(k_all.spectrum.eigenvectors, std::min<Index>(3, k_all.spectrum.k()));
  const Index first = 4 * m + u, second = 8 * m + u;

  // fig2: layerwise spectra and cliffs
  json fig2 = {{"uniform_modes", u}, {"expected_boundaries", {first, second}}};
  if (wants(cfg_, "cliffs")) {
    const std::vector<std::pair<std::string, const KernelResult*>> layerwise = {
        {"all", &k_all}, {"layer1", &k_l1}, {"layer2", &k_l2}};
    for (const auto& [name, res] : layerwise) {
      const CliffReport c = detect_cliffs(res->eigenvalues, cfg_.cliff_threshold, cfg_.cliff_floor);
      emit("fig2/spectrum_" + name + ".csv", spectrum_csv(res->eigenvalues), res->epoch);
      emit("fig2/cliffs_" + name + ".json", cliff_report_json(c), res->epoch);
      json e = {{"cliffs", cliff_json(c)}};
      if (second < res->eigenvalues.size()) {
        e["ratio_first"] = c.ratio_at(first);
        e["ratio_second"] = c.ratio_at(second);
      }
      fig2[name] = e;
    }
    if (ev.num_points() <= cfg_.dense_cap) {
      const Checkpoint ckpt = final_checkpoint();
      const KernelMatrix a = assemble_kernel(ckpt.params, ev, all_spec);
      const KernelMatrix b = assemble_kernel(ckpt.params, ev, l1_spec);
      const KernelMatrix c = assemble_kernel(ckpt.params, ev, l2_spec);
      fig2["additivity_rel_error"] =
          (a.matrix.matrix() - b.matrix.matrix() - c.matrix.matrix()).norm() / a.matrix.matrix().norm();
    }
    emit_json("fig2/summary.json", fig2, k_all.epoch);
  }

  // fig3: accuracy, spectrum over time, second-cliff ratio
  if (wants(cfg_, "timeseries")) {
    const TrainHistory hist = TrainHistory::from_csv(io::read_file(root_ / "history.csv"));
    std::vector<int> epochs;
    for (const auto& r : hist.records) epochs.push_back(r.epoch);
    Eigen::MatrixXd acc(static_cast<Index>(hist.records.size()), 3);
    for (std::size_t i = 0; i < hist.records.size(); ++i) {
      const auto& r = hist.records[i];
      acc.row(static_cast<Index>(i)) << r.epoch, r.train_acc.value_or(NAN), r.test_acc.value_or(NAN);
    }
    emit("fig3/accuracy.csv", io::matrix_to_csv(acc, {"epoch", "train_acc", "test_acc"}), epochs.back());

    const auto ckpts = checkpoints(checkpoint_schedule(cfg_));
    const Index k = std::min<Index>(second + 8, ev.num_points());
    const SpectrumSeries series = spectrum_over_time(ckpts, ev, all_spec, k);
    emit("fig3/spectra.csv", series.to_csv(), ckpts.back().first, all_spec.key());

    Eigen::MatrixXd ratios(series.eigenvalues.rows(), 3);
    std::optional<int> second_cliff_epoch;
    for (Index t = 0; t < series.eigenvalues.rows(); ++t) {
      const Eigen::VectorXd lam = series.eigenvalues.row(t).transpose();
      const CliffReport c = detect_cliffs(lam, cfg_.cliff_threshold, cfg_.cliff_floor);
      const double r1 = first < lam.size() ? c.ratio_at(first) : NAN;
      const double r2 = second < lam.size() ? c.ratio_at(second) : NAN;
      ratios.row(t) << series.epochs[static_cast<std::size_t>(t)], r1, r2;
      if (!second_cliff_epoch && r2 >= cfg_.cliff_threshold) second_cliff_epoch = series.epochs[static_cast<std::size_t>(t)];
    }
    emit("fig3/cliff_ratios.csv", io::matrix_to_csv(ratios, {"epoch", "ratio_first", "ratio_second"}),
         ckpts.back().first, all_spec.key());
    json fig3;
    if (const auto g = detect_grokking(hist)) fig3["grokking_epoch"] = *g;
    else fig3["grokking_epoch"] = nullptr;
    fig3["second_cliff_epoch"] = second_cliff_epoch ? json(*second_cliff_epoch) : json(nullptr);
    emit_json("fig3/summary.json", fig3, ckpts.back().first);
  }

  if (!lattice) {
    if (wants(cfg_, "heatmaps") || wants(cfg_, "disentangle"))
      io::warn("skipping Fourier heatmaps: the evaluation set is not the full lattice");
    return;
  }

  // fig4: layer-1 first cliff against the a/b families, before and after rotation
  std::vector<FamilyPair> fam_ab = family_pairs(fourier_feature_matrix(p, FourierFamily::a, ev));
  for (auto& f : family_pairs(fourier_feature_matrix(p, FourierFamily::b, ev))) fam_ab.push_back(std::move(f));
  const TorusLaplacian La = axis_laplacian(p, Axis::a), Lb = axis_laplacian(p, Axis::b);
  if (wants(cfg_, "heatmaps")) {
    json fig4;
    for (const std::string tag : {"init", "final"}) {
      const KernelResult r = kernel(tag, l1_spec);
      const Index u1 = leading_uniform_modes(r.spectrum.eigenvectors, std::min<Index>(3, r.spectrum.k()));
      const Index end = std::min<Index>(4 * m + u1, r.spectrum.k());
      const Eigen::MatrixXd basis = range_selector(0, end, u1 > 0)(r.spectrum);
      const AlignmentHeatmap pre = family_heatmap(basis, fam_ab);
      emit_heatmap("fig4/" + tag + "_pre", pre, r.epoch, l1_spec.key());
      json e = {{"uniform_modes", u1}, {"pre", match_json(match_features(pre), pre)}};
      if (wants(cfg_, "disentangle")) {
        TwoStageOptions to;
        to.offset = cfg_.disentangle_offset;
        const RotatedBasis rot = two_stage_rotation(basis, La, Lb, to);
        const AlignmentHeatmap post = family_heatmap(rot.columns, fam_ab);
        emit_heatmap("fig4/" + tag + "_post", post, r.epoch, l1_spec.key());
        emit("fig4/" + tag + "_energies.csv", rotated_basis_energies_csv(rot), r.epoch, l1_spec.key());
        e["post"] = match_json(match_features(post), post);
      }
      fig4[tag] = e;
    }
    emit_json("fig4/summary.json", fig4, k_l1.epoch);
  }

  // fig5: second cliff of the full kernel against the sum/diff families over training
  if (wants(cfg_, "disentangle")) {
    std::vector<FamilyPair> fam_sd = family_pairs(fourier_feature_matrix(p, FourierFamily::sum, ev));
    for (auto& f : family_pairs(fourier_feature_matrix(p, FourierFamily::diff, ev))) fam_sd.push_back(std::move(f));
    std::vector<int> frame_epochs;
    for (int e : checkpoint_schedule(cfg_))
      if (e % std::max(1, cfg_.frame_every) == 0 || e == cfg_.train.epochs) frame_epochs.push_back(e);
    const auto ckpts = checkpoints(frame_epochs);
    TwoStageOptions to;
    to.offset = cfg_.disentangle_offset;
    const auto frames = disentangle_over_time(ckpts, ev, all_spec, range_selector(first, second, false),
                                              axis_laplacian(p, Axis::sum), axis_laplacian(p, Axis::diff), fam_sd,
                                              to);
    Eigen::MatrixXd table(static_cast<Index>(frames.size()), 3);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& f = frames[i];
      emit_heatmap("fig5/" + epoch_name("epoch_", f.epoch), f.heatmap, f.epoch, all_spec.key());
      table.row(static_cast<Index>(i)) << f.epoch, f.match.mean_score, f.match.min_score;
    }
    emit("fig5/frames.csv", io::matrix_to_csv(table, {"epoch", "mean_score", "min_score"}),
         frames.empty() ? 0 : frames.back().epoch, all_spec.key());
  }
}

void Pipeline::analyze() {
  if (cfg_.experiment == DatasetKind::tms) analyze_tms();
  else analyze_modadd();
  log_ << "analyze: done\n";
}

void Pipeline::report() {
  if (!fs::exists(root_ / "train.json")) ensure_trained();
  const std::vector<std::string> figs = cfg_.experiment == DatasetKind::tms
                                            ? std::vector<std::string>{"fig1"}
                                            : std::vector<std::string>{"fig2", "fig3", "fig4"};
  bool missing = false;
  for (const auto& f : figs) missing |= !fs::exists(root_ / f / "summary.json");
  if (missing) {
    log_ << "report: analysis outputs missing, running analyze\n";
    analyze();
  }
  json rep = {{"experiment", to_string(cfg_.experiment)},
              {"preset", cfg_.preset},
              {"seed", cfg_.seed},
              {"config_hash", hash_},
              {"version", ENTK_VERSION}};
  rep["train"] = json::parse(io::read_file(root_ / "train.json"));
  for (const auto& f : figs)
    if (fs::exists(root_ / f / "summary.json")) rep[f] = json::parse(io::read_file(root_ / f / "summary.json"));
  const int epoch = rep["train"].value("final_epoch", 0);
  emit_json("report.json", rep, epoch);

  std::ostringstream md;
  md << "# Run report\n\n";
  md << "- experiment: " << to_string(cfg_.experiment) << (cfg_.preset.empty() ? "" : " (" + cfg_.preset + ")")
     << "\n- seed: " << cfg_.seed << "\n- config hash: " << hash_ << "\n- final epoch: " << epoch << "\n\n";
  md << "## Training\n\n";
  for (const auto& [k, v] : rep["train"].items()) md << "- " << k << ": " << v.dump() << "\n";
  for (const auto& f : figs) {
    if (!rep.contains(f)) continue;
    md << "\n## " << f << "\n\n```json\n" << rep[f].dump(2) << "\n```\n";
  }
  emit("report.md", md.str(), epoch);
  log_ << "report: " << (root_ / "report.md").string() << "\n";
}

}  // namespace

std::vector<std::string> plan(const std::string& command, const ExperimentConfig& cfg) {
  const auto sched = checkpoint_schedule(cfg);
  const std::string train = "train   -> " + (cfg.out / "checkpoints").string() + " (" +
                            std::to_string(cfg.train.epochs) + " epochs, " + std::to_string(sched.size()) +
                            " checkpoints), history.csv, train.json";
  std::string kern = "kernel  <- train: final[";
  const auto& specs = cfg.kernel_specs.empty() ? default_kernel_specs(cfg) : cfg.kernel_specs;
  for (std::size_t i = 0; i < specs.size(); ++i) kern += (i ? ", " : "") + specs[i];
  kern += "]";
  if (cfg.experiment == DatasetKind::modadd) kern += " init[class_trace/layer1]";
  std::string an = "analyze <- kernel, train: ";
  an += cfg.experiment == DatasetKind::tms ? "fig1" : "fig2 fig3 fig4 fig5";
  an += " (steps:";
  for (const auto& s : cfg.steps) an += " " + s;
  an += ")";
  const std::string rep = "report  <- analyze: report.md, report.json";

  if (command == "train") return {train};
  if (command == "kernel") return {train + " [if missing]", kern};
  if (command == "analyze") return {train + " [if missing]", kern + " [if missing]", an};
  if (command == "report") return {train + " [if missing]", kern + " [if missing]", an + " [if missing]", rep};
  if (command == "all") return {train, kern, an, rep};
  throw ConfigError("unknown command '" + command + "'");
}

int run_command(const std::string& command, const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log,
                std::ostream& err) {
  try {
    validate(cfg);
    const auto steps = plan(command, cfg);
    if (opts.dry_run) {
      log << "dry run: " << command << " (config " << config_hash(cfg) << ")\n";
      for (const auto& s : steps) log << "  " << s << "\n";
      return kExitOk;
    }
    fs::create_directories(cfg.out);
    Pipeline pipe(cfg, opts, log);
    if (command == "train") {
      pipe.train();
    } else if (command == "kernel") {
      pipe.kernels();
    } else if (command == "analyze") {
      pipe.analyze();
    } else if (command == "report") {
      pipe.report();
    } else {
      pipe.train();
      pipe.kernels();
      pipe.analyze();
      pipe.report();
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const CheckpointError& e) {
    err << "error: corrupt or unusable checkpoint: " << e.what() << "\n";
    return kExitCorruptCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace entk
