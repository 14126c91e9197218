#include "entk/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"
#include "json.hpp"

namespace entk {

using json = nlohmann::json;

std::string to_string(Arch arch) { return arch == Arch::tms ? "tms" : "modmlp"; }

std::string to_string(LayerSel layers) {
  switch (layers) {
    case LayerSel::all: return "all";
    case LayerSel::layer1: return "layer1";
    case LayerSel::layer2: return "layer2";
  }
  return "?";
}

LayerSel layer_sel_from_string(const std::string& s) {
  if (s == "all" || s == "both") return LayerSel::all;
  if (s == "layer1" || s == "1") return LayerSel::layer1;
  if (s == "layer2" || s == "2") return LayerSel::layer2;
  throw Error("unknown layer selection '" + s + "'");
}

Eigen::VectorXd ImportanceSpec::weights(Index n) const {
  Eigen::VectorXd w(n);
  for (Index i = 0; i < n; ++i) w(i) = std::pow(base, static_cast<double>(i));
  return w;
}

namespace {

void check_tms_shapes(const TmsParams& params, Index input_dim) {
  if (params.b.size() != params.n() || input_dim != params.n()) {
    std::ostringstream msg;
    msg << "TMS shape mismatch: W is " << params.m() << "x" << params.n() << ", b has " << params.b.size()
        << " entries, input has " << input_dim;
    throw ShapeError(msg.str());
  }
}

void check_modmlp_shapes(const ModMlpParams& params, Index input_dim) {
  if (params.W1.cols() != 2 * params.p() || params.W2.cols() != params.n_hid() || input_dim != params.W1.cols()) {
    std::ostringstream msg;
    msg << "ModMLP shape mismatch: W1 is " << params.W1.rows() << "x" << params.W1.cols() << ", W2 is "
        << params.W2.rows() << "x" << params.W2.cols() << ", input has " << input_dim;
    throw ShapeError(msg.str());
  }
}

}  // namespace

// --- TMS -----------------------------------------------------------------

Eigen::VectorXd tms_forward(const TmsParams& params, const Eigen::VectorXd& x) {
  check_tms_shapes(params, x.size());
  Eigen::VectorXd pre = params.W.transpose() * (params.W * x) + params.b;
  return pre.cwiseMax(0.0);
}

Eigen::MatrixXd tms_forward_batch(const TmsParams& params, const Eigen::MatrixXd& X) {
  check_tms_shapes(params, X.cols());
  Eigen::MatrixXd pre = (X * params.W.transpose()) * params.W;
  pre.rowwise() += params.b.transpose();
  return pre.cwiseMax(0.0);
}

double tms_loss(const TmsParams& params, const Dataset& ds, const ImportanceSpec& imp) {
  const Eigen::MatrixXd out = tms_forward_batch(params, ds.inputs);
  const Eigen::VectorXd w = imp.weights(params.n());
  const Eigen::MatrixXd diff = ds.labels - out;
  return (diff.array().square().rowwise() * w.transpose().array()).sum() / static_cast<double>(ds.num_points());
}

TmsParams tms_grad(const TmsParams& params, const Dataset& ds, const ImportanceSpec& imp) {
  check_tms_shapes(params, ds.input_dim());
  const Eigen::MatrixXd& X = ds.inputs;
  Eigen::MatrixXd pre = (X * params.W.transpose()) * params.W;
  pre.rowwise() += params.b.transpose();
  const Eigen::VectorXd w = imp.weights(params.n());
  const double scale = -2.0 / static_cast<double>(ds.num_points());
  // dL/dpre, with the ReLU subgradient at 0 taken as 0.
  Eigen::MatrixXd dpre = ((ds.labels - pre.cwiseMax(0.0)).array().rowwise() * w.transpose().array()) * scale;
  dpre = (pre.array() > 0.0).select(dpre, 0.0);
  const Eigen::MatrixXd dG = X.transpose() * dpre;  // n x n
  TmsParams g;
  g.W = params.W * (dG + dG.transpose());
  g.b = dpre.colwise().sum().transpose();
  return g;
}

Eigen::MatrixXd tms_jacobian(const TmsParams& params, const Eigen::VectorXd& x) {
  check_tms_shapes(params, x.size());
  const Index m = params.m(), n = params.n();
  const Eigen::VectorXd wx = params.W * x;
  const Eigen::VectorXd pre = params.W.transpose() * wx + params.b;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, m * n + n);
  for (Index i = 0; i < n; ++i) {
    if (pre(i) <= 0.0) continue;
    for (Index a = 0; a < m; ++a) {
      auto row = J.row(i).segment(a * n, n);
      row = params.W(a, i) * x.transpose();
      row(i) += wx(a);
    }
    J(i, m * n + i) = 1.0;
  }
  return J;
}

int reconstructed_feature_count(const TmsParams& params, double threshold) {
  const Eigen::VectorXd diag = params.W.colwise().squaredNorm().transpose();
  return static_cast<int>((diag.array() > threshold).count());
}

// --- modular-addition MLP ------------------------------------------------

Eigen::VectorXd modmlp_forward(const ModMlpParams& params, const Eigen::VectorXd& x) {
  check_modmlp_shapes(params, x.size());
  return params.W2 * (params.W1 * x).array().square().matrix();
}

Eigen::MatrixXd modmlp_forward_batch(const ModMlpParams& params, const Eigen::MatrixXd& X) {
  check_modmlp_shapes(params, X.cols());
  const Eigen::MatrixXd H = X * params.W1.transpose();
  return H.array().square().matrix() * params.W2.transpose();
}

double modmlp_loss(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd out = modmlp_forward_batch(params, X);
  return (out - Y).squaredNorm() / static_cast<double>(X.rows());
}

ModMlpParams modmlp_grad(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  check_modmlp_shapes(params, X.cols());
  const Eigen::MatrixXd H = X * params.W1.transpose();  // N x n_hid
  const Eigen::MatrixXd Q = H.array().square().matrix();
  const Eigen::MatrixXd R = (Q * params.W2.transpose() - Y) * (2.0 / static_cast<double>(X.rows()));
  ModMlpParams g;
  g.W2 = R.transpose() * Q;
  const Eigen::MatrixXd dH = ((R * params.W2).array() * H.array() * 2.0).matrix();
  g.W1 = dH.transpose() * X;
  return g;
}

Eigen::MatrixXd modmlp_jacobian(const ModMlpParams& params, const Eigen::VectorXd& x, LayerSel layers) {
  check_modmlp_shapes(params, x.size());
  const Index p = params.p(), nh = params.n_hid(), d = x.size();
  const Eigen::VectorXd h = params.W1 * x;
  const Index n1 = layers == LayerSel::layer2 ? 0 : nh * d;
  const Index n2 = layers == LayerSel::layer1 ? 0 : p * nh;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(p, n1 + n2);
  if (n1 > 0) {
    // d f_i / d W1(k, m) = 2 W2(i, k) h_k x_m
    for (Index i = 0; i < p; ++i)
      for (Index k = 0; k < nh; ++k) J.row(i).segment(k * d, d) = (2.0 * params.W2(i, k) * h(k)) * x.transpose();
  }
  if (n2 > 0) {
    // d f_i / d W2(i', k) = delta_{i i'} h_k^2
    const Eigen::RowVectorXd h2 = h.array().square().matrix().transpose();
    for (Index i = 0; i < p; ++i) J.row(i).segment(n1 + i * nh, nh) = h2;
  }
  return J;
}

double argmax_accuracy(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& labels) {
  if (outputs.rows() != labels.rows() || outputs.cols() != labels.cols())
    throw ShapeError("argmax_accuracy: outputs and labels differ in shape");
  if (outputs.rows() == 0) return 0.0;
  Index hits = 0;
  for (Index r = 0; r < outputs.rows(); ++r) {
    Index po = 0, pl = 0;
    outputs.row(r).maxCoeff(&po);
    labels.row(r).maxCoeff(&pl);
    hits += po == pl;
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.rows());
}

ModMlpParams ground_truth_weights(int p, int n_hid, std::uint64_t seed, const GroundTruthOptions& opts) {
  if (p < 2) throw ShapeError("ground_truth_weights: need p >= 2");
  if (n_hid < 8) throw ShapeError("ground_truth_weights: need n_hid >= 8 (one group of eight units)");
  const int half = p / 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  // Frequencies coprime to p first, each block shuffled, then reused cyclically:
  // any single group already gives a unique argmax, and ceil(half) groups cover all k.
  std::vector<int> coprime, other;
  for (int k = 1; k <= half; ++k) (std::gcd(k, p) == 1 ? coprime : other).push_back(k);
  auto shuffle = [&rng](std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(v[i - 1], v[pick(rng)]);
    }
  };
  shuffle(coprime);
  shuffle(other);
  std::vector<int> order = coprime;
  order.insert(order.end(), other.begin(), other.end());

  ModMlpParams params;
  params.W1 = Eigen::MatrixXd::Zero(n_hid, 2 * p);
  params.W2 = Eigen::MatrixXd::Zero(p, n_hid);
  const double quarter = std::numbers::pi / 2.0;
  const int groups = n_hid / 8;
  for (int g = 0; g < groups; ++g) {
    const int k = order[static_cast<std::size_t>(g) % order.size()];
    const double phi1 = phase(rng);
    const double phi2 = phase(rng);
    const double broken = opts.violate_phase_constraint ? phase(rng) : 0.0;
    Index unit = 8 * g;
    for (int u = 0; u < 2; ++u) {
      for (int v = 0; v < 2; ++v) {
        for (int s = 0; s < 2; ++s) {
          const double a1 = phi1 + u * quarter + s * std::numbers::pi;
          const double a2 = phi2 + v * quarter;
          const double a3 = a1 + a2 + broken;
          for (int q = 0; q < p; ++q) {
            const double theta = 2.0 * std::numbers::pi * k * q / p;
            params.W1(unit, q) = std::cos(theta + a1);
            params.W1(unit, p + q) = std::cos(theta + a2);
            params.W2(q, unit) = opts.scale * std::cos(-theta - a3);
          }
          ++unit;
        }
      }
    }
  }
  return params;
}

double calibrate_output_scale(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd out = modmlp_forward_batch(params, X);
  const double denom = out.squaredNorm();
  if (denom == 0.0) return 0.0;
  return (out.array() * Y.array()).sum() / denom;
}

// --- flattening and checkpoints ------------------------------------------

namespace {

template <typename Derived>
void append_row_major(Eigen::VectorXd& out, Index& pos, const Eigen::MatrixBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out(pos++) = m(i, j);
}

Eigen::MatrixXd take_row_major(const Eigen::VectorXd& theta, Index& pos, Index rows, Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = theta(pos++);
  return m;
}

}  // namespace

Eigen::VectorXd flatten(const TmsParams& params) {
  Eigen::VectorXd theta(params.num_params());
  Index pos = 0;
  append_row_major(theta, pos, params.W);
  theta.tail(params.b.size()) = params.b;
  return theta;
}

Eigen::VectorXd flatten(const ModMlpParams& params) {
  Eigen::VectorXd theta(params.num_params());
  Index pos = 0;
  append_row_major(theta, pos, params.W1);
  append_row_major(theta, pos, params.W2);
  return theta;
}

TmsParams unflatten_tms(const Eigen::VectorXd& theta, Index m, Index n) {
  if (theta.size() != m * n + n) throw ShapeError("unflatten_tms: wrong parameter count");
  TmsParams params;
  Index pos = 0;
  params.W = take_row_major(theta, pos, m, n);
  params.b = theta.tail(n);
  return params;
}

ModMlpParams unflatten_modmlp(const Eigen::VectorXd& theta, Index n_hid, Index p) {
  if (theta.size() != n_hid * 2 * p + p * n_hid) throw ShapeError("unflatten_modmlp: wrong parameter count");
  ModMlpParams params;
  Index pos = 0;
  params.W1 = take_row_major(theta, pos, n_hid, 2 * p);
  params.W2 = take_row_major(theta, pos, p, n_hid);
  return params;
}

Arch arch_of(const ModelParams& params) {
  return std::holds_alternative<TmsParams>(params) ? Arch::tms : Arch::modmlp;
}

namespace {

constexpr char kMagic[8] = {'E', 'N', 'T', 'K', 'C', 'K', 'P', 'T'};

struct Block {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Eigen::MatrixXd data;
};

std::vector<Block> weight_blocks(const ModelParams& params) {
  std::vector<Block> blocks;
  if (const auto* t = std::get_if<TmsParams>(&params)) {
    blocks.push_back({"W", t->W.rows(), t->W.cols(), t->W});
    blocks.push_back({"b", t->b.size(), 1, t->b});
  } else {
    const auto& mm = std::get<ModMlpParams>(params);
    blocks.push_back({"W1", mm.W1.rows(), mm.W1.cols(), mm.W1});
    blocks.push_back({"W2", mm.W2.rows(), mm.W2.cols(), mm.W2});
  }
  return blocks;
}

std::string encode_payload(const std::vector<Block>& blocks) {
  std::string payload;
  for (const auto& b : blocks) payload += io::encode_f64_row_major(b.data);
  return payload;
}

}  // namespace

std::string params_hash(const ModelParams& params) {
  return io::hex64(io::fnv1a64(to_string(arch_of(params)) + encode_payload(weight_blocks(params))));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<Block> blocks = weight_blocks(ckpt.params);
  if (!ckpt.optimizer.empty()) {
    blocks.push_back({"adam_m", ckpt.optimizer.m.size(), 1, ckpt.optimizer.m});
    blocks.push_back({"adam_v", ckpt.optimizer.v.size(), 1, ckpt.optimizer.v});
  }
  const std::string payload = encode_payload(blocks);
  json header;
  header["arch"] = to_string(arch_of(ckpt.params));
  header["epoch"] = ckpt.epoch;
  header["seed"] = ckpt.seed;
  header["rng_state_hash"] = ckpt.rng_state_hash;
  header["payload_hash"] = io::hex64(io::fnv1a64(payload));
  header["adam_step"] = ckpt.optimizer.step;
  json shapes = json::array();
  for (const auto& b : blocks) shapes.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  header["shapes"] = shapes;
  const std::string text = header.dump();

  std::string bytes(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint64_t>(text.size());
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  bytes += text;
  bytes += payload;
  io::write_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const Error& e) {
    throw CheckpointError(e.what());
  }
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint: bad magic" + where);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (len > bytes.size() - 16) throw CheckpointError("truncated checkpoint header" + where);
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint header: ") + e.what() + where);
  }
  const std::string_view payload = std::string_view(bytes).substr(16 + len);

  Checkpoint ckpt;
  std::vector<Block> blocks;
  try {
    if (io::hex64(io::fnv1a64(payload)) != header.at("payload_hash").get<std::string>())
      throw CheckpointError("checkpoint payload hash mismatch" + where);
    std::size_t offset = 0;
    for (const auto& s : header.at("shapes")) {
      Block b{s.at("name").get<std::string>(), s.at("rows").get<Index>(), s.at("cols").get<Index>(), {}};
      const auto size = static_cast<std::size_t>(b.rows * b.cols) * 8;
      if (b.rows < 0 || b.cols < 0 || offset + size > payload.size())
        throw CheckpointError("checkpoint payload shorter than its shapes" + where);
      b.data = io::decode_f64_row_major(payload.substr(offset, size), b.rows, b.cols);
      offset += size;
      blocks.push_back(std::move(b));
    }
    if (offset != payload.size()) throw CheckpointError("checkpoint has trailing bytes" + where);
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.rng_state_hash = header.at("rng_state_hash").get<std::string>();
    ckpt.optimizer.step = header.value("adam_step", std::int64_t{0});
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what() + where);
  }

  auto find = [&](const std::string& name) -> const Block& {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw CheckpointError("checkpoint is missing block '" + name + "'" + where);
  };
  const std::string arch = header.at("arch").get<std::string>();
  if (arch == "tms") {
    TmsParams t;
    t.W = find("W").data;
    t.b = find("b").data.col(0);
    if (t.b.size() != t.W.cols()) throw CheckpointError("checkpoint shapes are inconsistent" + where);
    ckpt.params = std::move(t);
  } else if (arch == "modmlp") {
    ModMlpParams mm;
    mm.W1 = find("W1").data;
    mm.W2 = find("W2").data;
    if (mm.W1.cols() != 2 * mm.W2.rows() || mm.W2.cols() != mm.W1.rows())
      throw CheckpointError("checkpoint shapes are inconsistent" + where);
    ckpt.params = std::move(mm);
  } else {
    throw CheckpointError("unknown architecture '" + arch + "'" + where);
  }
  for (const auto& b : blocks) {
    if (b.name == "adam_m") ckpt.optimizer.m = b.data.col(0);
    if (b.name == "adam_v") ckpt.optimizer.v = b.data.col(0);
  }
  return ckpt;
}

}  // namespace entk
