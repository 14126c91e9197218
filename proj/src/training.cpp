#include "entk/training.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"

namespace entk {

std::string to_string(Optimizer opt) { return opt == Optimizer::adam ? "adam" : "adamw"; }

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "adamw") return Optimizer::adamw;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or adamw)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (hidden < 1) fail("hidden width must be >= 1");
  if (init_scale_rule != "fan_in_gaussian") fail("unknown init rule '" + init_scale_rule + "'");
  for (std::size_t i = 0; i < checkpoint_epochs.size(); ++i) {
    if (checkpoint_epochs[i] < 0 || checkpoint_epochs[i] > epochs) fail("checkpoint epochs must lie in [0, epochs]");
    if (i > 0 && checkpoint_epochs[i] <= checkpoint_epochs[i - 1]) fail("checkpoint epochs must be strictly increasing");
  }
  if (early_stop_window < 1) fail("early_stop_window must be >= 1");
}

TrainConfig tms_default_config() {
  TrainConfig cfg;
  cfg.epochs = 10000;
  cfg.lr = 1e-3;
  cfg.optimizer = Optimizer::adam;
  cfg.weight_decay = 0.0;
  cfg.hidden = 10;
  return cfg;
}

TrainConfig modadd_default_config() {
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.lr = 1e-2;
  cfg.optimizer = Optimizer::adamw;
  cfg.weight_decay = 1.0;
  cfg.hidden = 512;
  cfg.early_stop = false;
  return cfg;
}

// --- history -------------------------------------------------------------

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,test_loss,train_acc,test_acc\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + io::format_double(r.train_loss) + "," + opt_field(r.test_loss) + "," +
           opt_field(r.train_acc) + "," + opt_field(r.test_acc) + "\n";
  }
  return out;
}

TrainHistory TrainHistory::from_csv(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t stop = line.find(',', start);
      f.push_back(line.substr(start, stop == std::string::npos ? std::string::npos : stop - start));
      if (stop == std::string::npos) break;
      start = stop + 1;
    }
    if (f.size() != 5) throw Error("history CSV row has " + std::to_string(f.size()) + " fields");
    EpochRecord r;
    r.epoch = std::stoi(f[0]);
    r.train_loss = std::stod(f[1]);
    r.test_loss = parse_opt(f[2]);
    r.train_acc = parse_opt(f[3]);
    r.test_acc = parse_opt(f[4]);
    h.records.push_back(r);
  }
  return h;
}

void TrainHistory::save_csv(const std::filesystem::path& path) const { io::write_atomic(path, to_csv()); }

// --- init ----------------------------------------------------------------

namespace {

void fill_gaussian(Eigen::MatrixXd& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = gauss(rng);
}

}  // namespace

TmsParams init_tms_params(int m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TmsParams params;
  params.W.resize(m, n);
  fill_gaussian(params.W, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  params.b = Eigen::VectorXd::Zero(n);
  return params;
}

ModMlpParams init_modmlp_params(int p, int n_hid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModMlpParams params;
  params.W1.resize(n_hid, 2 * p);
  params.W2.resize(p, n_hid);
  fill_gaussian(params.W1, 1.0 / std::sqrt(2.0 * p), rng);
  fill_gaussian(params.W2, 1.0 / std::sqrt(static_cast<double>(n_hid)), rng);
  return params;
}

std::string init_rng_state_hash(std::uint64_t seed, Index draws) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  for (Index i = 0; i < draws; ++i) (void)gauss(rng);
  std::ostringstream state;
  state << rng;
  return io::hex64(io::fnv1a64(state.str()));
}

// --- optimizer -----------------------------------------------------------

Adam::Adam(Optimizer kind, double lr, double weight_decay, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

Adam::Adam(const TrainConfig& cfg) : Adam(cfg.optimizer, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  if (state_.empty()) {
    state_.m = Eigen::VectorXd::Zero(theta.size());
    state_.v = Eigen::VectorXd::Zero(theta.size());
    state_.step = 0;
  }
  if (state_.m.size() != theta.size()) throw ShapeError("optimizer state does not match parameter count");
  Eigen::VectorXd g = grad;
  if (kind_ == Optimizer::adamw)
    theta *= 1.0 - lr_ * wd_;
  else if (wd_ != 0.0)
    g += wd_ * theta;
  ++state_.step;
  state_.m = beta1_ * state_.m + (1.0 - beta1_) * g;
  state_.v = beta2_ * state_.v + (1.0 - beta2_) * g.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  const double step_size = lr_ / bc1;
  const Eigen::ArrayXd denom = (state_.v.array() / bc2).sqrt() + eps_;
  theta.array() -= step_size * state_.m.array() / denom;
}

// --- loops ---------------------------------------------------------------

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%06d.ckpt", epoch);
  return dir / name;
}

template <typename Params>
void maybe_checkpoint(const TrainConfig& cfg, int epoch, const Params& params, const Adam& opt, Index draws,
                      TrainHistory& hist, std::size_t& next) {
  if (next >= cfg.checkpoint_epochs.size() || cfg.checkpoint_epochs[next] != epoch) return;
  ++next;
  if (cfg.keep_snapshots) hist.snapshots.emplace_back(epoch, params);
  if (cfg.checkpoint_dir.empty()) return;
  Checkpoint ckpt;
  ckpt.params = params;
  ckpt.epoch = epoch;
  ckpt.seed = cfg.seed;
  ckpt.rng_state_hash = init_rng_state_hash(cfg.seed, draws);
  const auto path = checkpoint_path(cfg.checkpoint_dir, epoch);
  save_checkpoint(ckpt, path);
  hist.checkpoint_paths.push_back(path);
  // Optimizer moments only go into the rolling resume point.
  ckpt.optimizer = opt.state();
  save_checkpoint(ckpt, cfg.checkpoint_dir / "last.ckpt");
}

std::size_t first_checkpoint_after(const TrainConfig& cfg, int epoch) {
  std::size_t next = 0;
  while (next < cfg.checkpoint_epochs.size() && cfg.checkpoint_epochs[next] < epoch) ++next;
  return next;
}

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "training diverged at epoch " << epoch << " (loss " << loss << ")";
    throw DivergenceError(msg.str(), epoch);
  }
}

}  // namespace

std::pair<TmsParams, TrainHistory> train_tms(const Dataset& ds, const ImportanceSpec& imp, const TrainConfig& cfg,
                                             const std::optional<Checkpoint>& resume) {
  cfg.validate();
  if (ds.kind != DatasetKind::tms) throw Error("train_tms expects a tms dataset");
  const int n = static_cast<int>(ds.input_dim());
  TmsParams params;
  Adam opt(cfg);
  int start = 0;
  if (resume) {
    const auto* p = std::get_if<TmsParams>(&resume->params);
    if (!p) throw CheckpointError("resume checkpoint is not a TMS model");
    params = *p;
    if (!resume->optimizer.empty()) opt.set_state(resume->optimizer);
    start = resume->epoch;
  } else {
    params = init_tms_params(cfg.hidden, n, cfg.seed);
  }
  if (params.n() != n) throw ShapeError("TMS parameters do not match the dataset width");
  const Index draws = params.W.size();

  TrainHistory hist;
  std::size_t next = first_checkpoint_after(cfg, start);
  for (int epoch = start;; ++epoch) {
    const double loss = tms_loss(params, ds, imp);
    check_finite(loss, epoch);
    hist.records.push_back({epoch, loss, std::nullopt, std::nullopt, std::nullopt});
    maybe_checkpoint(cfg, epoch, params, opt, draws, hist, next);
    if (epoch >= cfg.epochs) break;
    const std::size_t r = hist.records.size();
    if (cfg.early_stop && r > static_cast<std::size_t>(cfg.early_stop_window)) {
      const double before = hist.records[r - 1 - static_cast<std::size_t>(cfg.early_stop_window)].train_loss;
      if (before - loss < cfg.early_stop_tol) {
        hist.stopped_at = epoch;
        // Still honour the remaining checkpoint requests with the final parameters.
        while (next < cfg.checkpoint_epochs.size()) maybe_checkpoint(cfg, cfg.checkpoint_epochs[next], params, opt, draws, hist, next);
        break;
      }
    }
    Eigen::VectorXd theta = flatten(params);
    opt.step(theta, flatten(tms_grad(params, ds, imp)));
    params = unflatten_tms(theta, params.m(), params.n());
  }
  return {params, hist};
}

std::pair<ModMlpParams, TrainHistory> train_modadd(const Dataset& ds, const TrainConfig& cfg,
                                                   const std::optional<Checkpoint>& resume) {
  cfg.validate();
  if (ds.kind != DatasetKind::modadd) throw Error("train_modadd expects a modadd dataset");
  if (!ds.split) throw InvalidFraction("train_modadd needs a train/test split");
  if (ds.split->test.empty() || ds.split->train.empty())
    throw InvalidFraction("train_modadd needs non-empty train and test sets");
  const int p = ds.size_param;
  const Dataset train = ds.subset(ds.split->train);
  const Dataset test = ds.subset(ds.split->test);

  ModMlpParams params;
  Adam opt(cfg);
  int start = 0;
  if (resume) {
    const auto* mm = std::get_if<ModMlpParams>(&resume->params);
    if (!mm) throw CheckpointError("resume checkpoint is not a modular MLP");
    params = *mm;
    if (!resume->optimizer.empty()) opt.set_state(resume->optimizer);
    start = resume->epoch;
  } else {
    params = init_modmlp_params(p, cfg.hidden, cfg.seed);
  }
  if (params.p() != p) throw ShapeError("modular MLP parameters do not match the dataset modulus");
  const Index draws = params.num_params();

  TrainHistory hist;
  std::size_t next = first_checkpoint_after(cfg, start);
  for (int epoch = start;; ++epoch) {
    const Eigen::MatrixXd out_train = modmlp_forward_batch(params, train.inputs);
    const Eigen::MatrixXd out_test = modmlp_forward_batch(params, test.inputs);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = (out_train - train.labels).squaredNorm() / static_cast<double>(train.num_points());
    rec.test_loss = (out_test - test.labels).squaredNorm() / static_cast<double>(test.num_points());
    rec.train_acc = argmax_accuracy(out_train, train.labels);
    rec.test_acc = argmax_accuracy(out_test, test.labels);
    check_finite(rec.train_loss, epoch);
    hist.records.push_back(rec);
    maybe_checkpoint(cfg, epoch, params, opt, draws, hist, next);
    if (epoch >= cfg.epochs) break;
    Eigen::VectorXd theta = flatten(params);
    opt.step(theta, flatten(modmlp_grad(params, train.inputs, train.labels)));
    params = unflatten_modmlp(theta, params.n_hid(), params.p());
  }
  return {params, hist};
}

std::optional<int> detect_grokking(const TrainHistory& history) {
  constexpr double kLevel = 0.99;
  constexpr int kPrior = 5;
  int streak = 0;  // consecutive epochs with train accuracy >= 0.99, ending at the previous record
  for (const auto& r : history.records) {
    if (r.test_acc && *r.test_acc >= kLevel && streak >= kPrior) return r.epoch;
    streak = (r.train_acc && *r.train_acc >= kLevel) ? streak + 1 : 0;
  }
  return std::nullopt;
}

}  // namespace entk
