#include "capflow/neural.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace capflow::neural {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "none";
}

Activation activation_from_name(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

int NetSpec::embed_dim() const {
  int d = 0;
  for (const auto& e : embeddings) d += e.dim;
  return d;
}

void NetSpec::validate() const {
  if (input_dim <= 0 || width <= 0 || output_dim <= 0 || blocks < 0)
    throw std::invalid_argument("net spec: non-positive dimension");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("net spec: dropout must be in [0,1)");
  for (const auto& e : embeddings)
    if (e.vocab <= 0 || e.dim <= 0)
      throw std::invalid_argument("net spec: bad embedding shape");
  if (feature_dim() <= 0)
    throw std::invalid_argument("net spec: embeddings exceed input_dim");
}

std::int64_t NetSpec::param_count() const {
  return Layout::of(*this).total;
}

Layout Layout::of(const NetSpec& spec) {
  Layout l;
  auto add = [&](std::string name, int rows, int cols) {
    l.entries.push_back({std::move(name), l.total, rows, cols});
    l.total += std::int64_t(rows) * cols;
  };
  add("stem.W", spec.width, spec.input_dim);
  add("stem.b", spec.width, 1);
  for (int i = 0; i < spec.blocks; ++i) {
    add("block" + std::to_string(i) + ".W", spec.width, spec.width);
    add("block" + std::to_string(i) + ".b", spec.width, 1);
  }
  add("head.W", spec.output_dim, spec.width);
  add("head.b", spec.output_dim, 1);
  for (std::size_t j = 0; j < spec.embeddings.size(); ++j)
    add("embed" + std::to_string(j), spec.embeddings[j].dim, spec.embeddings[j].vocab);
  return l;
}

const Layout::Entry& Layout::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::invalid_argument("no parameter segment '" + name + "'");
}

Params init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Layout l = Layout::of(spec);
  Params p;
  p.spec = spec;
  p.flat = Eigen::VectorXd::Zero(l.total);
  for (std::size_t i = 0; i < l.entries.size(); ++i) {
    const auto& e = l.entries[i];
    Rng rng(Rng::mix(seed, i));
    auto m = p.seg(e);
    if (e.name.ends_with(".b")) {
      m.setZero();
    } else if (e.name.starts_with("embed")) {
      for (int c = 0; c < e.cols; ++c)
        for (int r = 0; r < e.rows; ++r) m(r, c) = rng.uniform(-0.1, 0.1);
    } else {
      double lim = std::sqrt(6.0 / e.cols);  // fan-in
      for (int c = 0; c < e.cols; ++c)
        for (int r = 0; r < e.rows; ++r) m(r, c) = rng.uniform(-lim, lim);
    }
  }
  return p;
}

namespace {

Eigen::MatrixXd dropout_mask(const NetSpec& spec, const Mode& mode, int layer, int cols) {
  Eigen::MatrixXd mask(spec.width, cols);
  const double keep_scale = 1.0 / (1.0 - spec.dropout);
  for (int c = 0; c < cols; ++c) {
    Rng r(Rng::mix(Rng::mix(mode.dropout_seed, std::uint64_t(mode.step)),
                   Rng::mix(std::uint64_t(layer) + 1, std::uint64_t(mode.row_offset + c))));
    for (int u = 0; u < spec.width; ++u)
      mask(u, c) = r.uniform() >= spec.dropout ? keep_scale : 0.0;
  }
  return mask;
}

}  // namespace

Eigen::MatrixXd forward(const Params& p, const Eigen::MatrixXd& feats,
                        const std::vector<std::vector<int>>& labels, const Mode& mode,
                        Tape* tape) {
  const NetSpec& spec = p.spec;
  const int B = int(feats.cols());
  if (int(feats.rows()) != spec.feature_dim())
    throw std::invalid_argument("forward: expected " + std::to_string(spec.feature_dim()) +
                                " feature rows, got " + std::to_string(feats.rows()));
  if (labels.size() != spec.embeddings.size())
    throw std::invalid_argument("forward: label table count mismatch");

  Layout l = Layout::of(spec);

  Eigen::MatrixXd x0(spec.input_dim, B);
  x0.topRows(spec.feature_dim()) = feats;
  int row = spec.feature_dim();
  for (std::size_t j = 0; j < spec.embeddings.size(); ++j) {
    const auto& es = spec.embeddings[j];
    if (int(labels[j].size()) != B)
      throw std::invalid_argument("forward: label vector size mismatch");
    auto E = p.seg(l.find("embed" + std::to_string(j)));
    for (int c = 0; c < B; ++c) {
      int id = labels[j][c];
      if (id < 0 || id >= es.vocab)
        throw std::out_of_range("forward: label " + std::to_string(id) + " outside vocab of " +
                                std::to_string(es.vocab));
      x0.block(row, c, es.dim, 1) = E.col(id);
    }
    row += es.dim;
  }

  if (tape) {
    tape->mode = mode;
    tape->x0 = x0;
    tape->labels = labels;
    tape->block_in.clear();
    tape->block_pre.clear();
    tape->block_mask.clear();
  }

  Eigen::MatrixXd x = (p.seg(l.find("stem.W")) * x0).colwise() +
                      Eigen::VectorXd(p.seg(l.find("stem.b")).col(0));
  const bool use_dropout = mode.train && spec.dropout > 0.0;
  for (int i = 0; i < spec.blocks; ++i) {
    auto W = p.seg(l.find("block" + std::to_string(i) + ".W"));
    auto b = p.seg(l.find("block" + std::to_string(i) + ".b"));
    Eigen::MatrixXd pre = (W * x).colwise() + Eigen::VectorXd(b.col(0));
    Eigen::MatrixXd a = pre.cwiseMax(0.0);
    Eigen::MatrixXd mask;
    if (use_dropout) {
      mask = dropout_mask(spec, mode, i, B);
      a.array() *= mask.array();
    }
    if (tape) {
      tape->block_in.push_back(x);
      tape->block_pre.push_back(std::move(pre));
      tape->block_mask.push_back(std::move(mask));
    }
    x += a;
  }

  Eigen::MatrixXd head_pre = (p.seg(l.find("head.W")) * x).colwise() +
                             Eigen::VectorXd(p.seg(l.find("head.b")).col(0));
  Eigen::MatrixXd y;
  switch (spec.output_activation) {
    case Activation::None: y = head_pre; break;
    case Activation::ReLU: y = head_pre.cwiseMax(0.0); break;
    case Activation::Sigmoid:
      y = (1.0 + (-head_pre.array()).exp()).inverse().matrix();
      break;
  }
  if (tape) {
    tape->head_in = std::move(x);
    tape->head_pre = std::move(head_pre);
    tape->y = y;
  }
  return y;
}

Eigen::VectorXd backward(const Params& p, const Tape& tape, const Eigen::MatrixXd& dY,
                         bool from_logits) {
  const NetSpec& spec = p.spec;
  Layout l = Layout::of(spec);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(l.total);
  auto gseg = [&](const std::string& name) {
    const auto& e = l.find(name);
    return Eigen::Map<Eigen::MatrixXd>(g.data() + e.offset, e.rows, e.cols);
  };

  Eigen::MatrixXd dH;
  if (from_logits) {
    dH = dY;
  } else {
    switch (spec.output_activation) {
      case Activation::None: dH = dY; break;
      case Activation::ReLU:
        dH = dY.array() * (tape.head_pre.array() > 0.0).cast<double>();
        break;
      case Activation::Sigmoid:
        dH = dY.array() * tape.y.array() * (1.0 - tape.y.array());
        break;
    }
  }

  gseg("head.W") = dH * tape.head_in.transpose();
  gseg("head.b").col(0) = dH.rowwise().sum();
  Eigen::MatrixXd dx = p.seg(l.find("head.W")).transpose() * dH;

  const bool use_dropout = tape.mode.train && spec.dropout > 0.0;
  for (int i = spec.blocks - 1; i >= 0; --i) {
    Eigen::MatrixXd da = dx;
    if (use_dropout) da.array() *= tape.block_mask[i].array();
    Eigen::MatrixXd dpre = da.array() * (tape.block_pre[i].array() > 0.0).cast<double>();
    std::string base = "block" + std::to_string(i);
    gseg(base + ".W") = dpre * tape.block_in[i].transpose();
    gseg(base + ".b").col(0) = dpre.rowwise().sum();
    dx += p.seg(l.find(base + ".W")).transpose() * dpre;  // skip path plus branch
  }

  gseg("stem.W") = dx * tape.x0.transpose();
  gseg("stem.b").col(0) = dx.rowwise().sum();

  if (!spec.embeddings.empty()) {
    Eigen::MatrixXd dx0 = p.seg(l.find("stem.W")).transpose() * dx;
    int row = spec.feature_dim();
    for (std::size_t j = 0; j < spec.embeddings.size(); ++j) {
      const auto& es = spec.embeddings[j];
      auto gE = gseg("embed" + std::to_string(j));
      for (int c = 0; c < int(tape.labels[j].size()); ++c)
        gE.col(tape.labels[j][c]) += dx0.block(row, c, es.dim, 1);
      row += es.dim;
    }
  }
  return g;
}

AdamState AdamState::init(const NetSpec& spec) {
  Layout l = Layout::of(spec);
  AdamState st;
  st.m = Eigen::VectorXd::Zero(l.total);
  st.v = Eigen::VectorXd::Zero(l.total);
  st.decay_mask = Eigen::VectorXd::Ones(l.total);
  for (const auto& e : l.entries)
    if (e.name.ends_with(".b"))
      st.decay_mask.segment(e.offset, std::int64_t(e.rows) * e.cols).setZero();
  return st;
}

void adam_step(AdamState& st, Params& p, const Eigen::VectorXd& grad, const AdamConfig& cfg) {
  if (grad.size() != p.flat.size() || st.m.size() != p.flat.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++st.t;
  Eigen::VectorXd g = grad;
  if (!cfg.decoupled && cfg.weight_decay > 0.0)
    g += cfg.weight_decay * st.decay_mask.cwiseProduct(p.flat);
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  if (cfg.decoupled && cfg.weight_decay > 0.0)
    p.flat.array() -= cfg.lr * cfg.weight_decay * (st.decay_mask.array() * p.flat.array());
  p.flat.array() -= cfg.lr * (st.m.array() / bc1) /
                    ((st.v.array() / bc2).sqrt() + cfg.eps);
}

void save_checkpoint(const Params& p, const std::map<std::string, std::string>& extra,
                     const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  const NetSpec& s = p.spec;
  f << "#net v1\n";
  f << "input_dim " << s.input_dim << "\nblocks " << s.blocks << "\nwidth " << s.width
    << "\ndropout " << s.dropout << "\noutput_dim " << s.output_dim << "\noutput_activation "
    << activation_name(s.output_activation) << "\nembeddings " << s.embeddings.size() << "\n";
  for (std::size_t j = 0; j < s.embeddings.size(); ++j)
    f << "embed " << j << " vocab " << s.embeddings[j].vocab << " dim " << s.embeddings[j].dim
      << "\n";
  f << "extras " << extra.size() << "\n";
  for (const auto& [k, v] : extra) {
    if (k.find(' ') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos)
      throw std::invalid_argument("checkpoint extras: key with space or value with newline");
    f << k << ' ' << v << "\n";
  }
  f << "params " << p.flat.size() << "\n";
  char buf[48];
  for (Eigen::Index i = 0; i < p.flat.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a\n", p.flat[i]);
    f << buf;
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::pair<Params, std::map<std::string, std::string>> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string line;
  auto next = [&]() -> std::string& {
    if (!std::getline(f, line)) throw std::runtime_error("checkpoint truncated: " + path.string());
    return line;
  };
  if (next() != "#net v1") throw std::runtime_error("not a checkpoint: " + path.string());

  NetSpec spec;
  spec.embeddings.clear();
  auto field = [&](const char* key) -> std::string {
    next();
    auto sp = line.find(' ');
    if (sp == std::string::npos || line.substr(0, sp) != key)
      throw std::runtime_error("checkpoint: expected '" + std::string(key) + "', got '" + line + "'");
    return line.substr(sp + 1);
  };
  spec.input_dim = std::stoi(field("input_dim"));
  spec.blocks = std::stoi(field("blocks"));
  spec.width = std::stoi(field("width"));
  spec.dropout = std::stod(field("dropout"));
  spec.output_dim = std::stoi(field("output_dim"));
  spec.output_activation = activation_from_name(field("output_activation"));
  int n_embed = std::stoi(field("embeddings"));
  for (int j = 0; j < n_embed; ++j) {
    std::istringstream is(next());
    std::string kw;
    int idx, vocab, dim;
    std::string kv, kd;
    if (!(is >> kw >> idx >> kv >> vocab >> kd >> dim) || kw != "embed" || kv != "vocab" ||
        kd != "dim" || idx != j)
      throw std::runtime_error("checkpoint: bad embedding line '" + line + "'");
    spec.embeddings.push_back({vocab, dim});
  }
  int n_extra = std::stoi(field("extras"));
  std::map<std::string, std::string> extra;
  for (int i = 0; i < n_extra; ++i) {
    next();
    auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("checkpoint: bad extra line");
    extra[line.substr(0, sp)] = line.substr(sp + 1);
  }
  std::int64_t n_params = std::stoll(field("params"));
  spec.validate();
  if (n_params != spec.param_count())
    throw std::runtime_error("checkpoint: parameter count does not match spec");
  Params p;
  p.spec = spec;
  p.flat.resize(n_params);
  for (std::int64_t i = 0; i < n_params; ++i) {
    next();
    char* end = nullptr;
    p.flat[i] = std::strtod(line.c_str(), &end);
    if (end == line.c_str()) throw std::runtime_error("checkpoint: bad parameter value");
  }
  return {std::move(p), std::move(extra)};
}

}  // namespace capflow::neural
