#include "pgdpo/nn.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace pgdpo {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
  }
  return "?";
}

const char* to_string(OutputTransform t) {
  switch (t) {
    case OutputTransform::identity: return "identity";
    case OutputTransform::neg_exp: return "neg_exp";
    case OutputTransform::pos_exp: return "pos_exp";
    case OutputTransform::raw_control: return "raw_control";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation: " + s);
}

OutputTransform transform_from_string(const std::string& s) {
  if (s == "identity") return OutputTransform::identity;
  if (s == "neg_exp") return OutputTransform::neg_exp;
  if (s == "pos_exp") return OutputTransform::pos_exp;
  if (s == "raw_control") return OutputTransform::raw_control;
  throw ConfigError("unknown output transform: " + s);
}

// ------------------------------------------------------------------ tape ----

namespace {

inline double softplus_f(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
inline double sigmoid_f(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tape::Id Tape::param(Mat* value, Mat* grad) {
  Id id = push(*value, true);
  nodes_[id].param_grad = grad;
  return id;
}

void Tape::ensure_adj(Id id) {
  Node& n = nodes_[id];
  if (n.adjoint.size() == 0)
    n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
}

Tape::Id Tape::affine(Id x, Id W, Id b) {
  const Mat& X = nodes_[x].value;
  const Mat& Wm = nodes_[W].value;
  const Mat& bm = nodes_[b].value;
  Mat out = X * Wm.transpose();
  out.rowwise() += bm.row(0);
  bool ng = nodes_[x].needs_grad || nodes_[W].needs_grad || nodes_[b].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, W, b](Tape& t, const Mat& G) {
      if (t.nodes_[x].needs_grad) {
        t.ensure_adj(x);
        t.nodes_[x].adjoint.noalias() += G * t.nodes_[W].value;
      }
      if (t.nodes_[W].needs_grad) {
        t.ensure_adj(W);
        t.nodes_[W].adjoint.noalias() += G.transpose() * t.nodes_[x].value;
      }
      if (t.nodes_[b].needs_grad) {
        t.ensure_adj(b);
        t.nodes_[b].adjoint.row(0) += G.colwise().sum();
      }
    };
  return id;
}

Tape::Id Tape::activation(Id x, Activation a) {
  const Mat& X = nodes_[x].value;
  Mat out;
  if (a == Activation::softplus)
    out = X.unaryExpr([](double v) { return softplus_f(v); });
  else
    out = X.cwiseMax(0.0);
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, a](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      const Mat& X2 = t.nodes_[x].value;
      if (a == Activation::softplus)
        t.nodes_[x].adjoint.array() +=
            G.array() * X2.unaryExpr([](double v) { return sigmoid_f(v); }).array();
      else
        t.nodes_[x].adjoint.array() +=
            G.array() * (X2.array() > 0.0).cast<double>();
    };
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  Mat out = nodes_[a].value + nodes_[b].value;
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [a, b](Tape& t, const Mat& G) {
      for (Id p : {a, b})
        if (t.nodes_[p].needs_grad) {
          t.ensure_adj(p);
          t.nodes_[p].adjoint += G;
        }
    };
  return id;
}

Tape::Id Tape::sub(Id a, Id b) {
  Mat out = nodes_[a].value - nodes_[b].value;
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [a, b](Tape& t, const Mat& G) {
      if (t.nodes_[a].needs_grad) {
        t.ensure_adj(a);
        t.nodes_[a].adjoint += G;
      }
      if (t.nodes_[b].needs_grad) {
        t.ensure_adj(b);
        t.nodes_[b].adjoint -= G;
      }
    };
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  Mat out = nodes_[a].value.cwiseProduct(nodes_[b].value);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [a, b](Tape& t, const Mat& G) {
      if (t.nodes_[a].needs_grad) {
        t.ensure_adj(a);
        t.nodes_[a].adjoint.array() += G.array() * t.nodes_[b].value.array();
      }
      if (t.nodes_[b].needs_grad) {
        t.ensure_adj(b);
        t.nodes_[b].adjoint.array() += G.array() * t.nodes_[a].value.array();
      }
    };
  return id;
}

Tape::Id Tape::cmul(Id x, Mat c) {
  Mat out = nodes_[x].value.cwiseProduct(c);
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    auto cc = std::make_shared<Mat>(std::move(c));
    nodes_[id].back = [x, cc](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += G.array() * cc->array();
    };
  }
  return id;
}

Tape::Id Tape::axpb(Id x, double a, double b) {
  Mat out = (nodes_[x].value.array() * a + b).matrix();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, a](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint += a * G;
    };
  return id;
}

Tape::Id Tape::pow(Id x, double e) {
  Mat out = nodes_[x].value.array().pow(e).matrix();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, e](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() +=
          G.array() * e * t.nodes_[x].value.array().pow(e - 1.0);
    };
  return id;
}

Tape::Id Tape::exp(Id x) {
  Mat out = nodes_[x].value.array().exp().matrix();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, id](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += G.array() * t.nodes_[id].value.array();
    };
  return id;
}

Tape::Id Tape::log(Id x) {
  Mat out = nodes_[x].value.array().log().matrix();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += G.array() / t.nodes_[x].value.array();
    };
  return id;
}

Tape::Id Tape::square(Id x) {
  Mat out = nodes_[x].value.array().square().matrix();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += 2.0 * G.array() * t.nodes_[x].value.array();
    };
  return id;
}

Tape::Id Tape::sum_all(Id x) {
  Mat out(1, 1);
  out(0, 0) = nodes_[x].value.sum();
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += G(0, 0);
    };
  return id;
}

Tape::Id Tape::mean_all(Id x) {
  const double n = static_cast<double>(nodes_[x].value.size());
  Mat out(1, 1);
  out(0, 0) = nodes_[x].value.sum() / n;
  bool ng = nodes_[x].needs_grad;
  Id id = push(std::move(out), ng);
  if (ng)
    nodes_[id].back = [x, n](Tape& t, const Mat& G) {
      t.ensure_adj(x);
      t.nodes_[x].adjoint.array() += G(0, 0) / n;
    };
  return id;
}

void Tape::backward(Id root) {
  const Mat& rv = nodes_[root].value;
  require(rv.rows() == 1 && rv.cols() == 1, "Tape::backward: root must be 1x1");
  backward_seed(root, Mat::Ones(1, 1));
}

void Tape::backward_seed(Id node, const Mat& seed) {
  require(seed.rows() == nodes_[node].value.rows() &&
              seed.cols() == nodes_[node].value.cols(),
          "Tape::backward_seed: seed shape mismatch");
  ensure_adj(node);
  nodes_[node].adjoint += seed;
  run_backward();
}

void Tape::run_backward() {
  for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || nd.adjoint.size() == 0) continue;
    if (nd.param_grad) *nd.param_grad += nd.adjoint;
    if (nd.back) nd.back(*this, nd.adjoint);
  }
}

// ------------------------------------------------------------------- mlp ----

void NetworkSpec::validate() const {
  require(in_dim >= 1 && out_dim >= 1, "network: dims must be >= 1");
  require(hidden_layers >= 0 && width >= 1, "network: bad topology");
  require(norm_offset.size() == in_dim && norm_scale.size() == in_dim,
          "network: normalization vectors must match in_dim");
  for (int i = 0; i < in_dim; ++i)
    require(norm_scale[i] > 0.0, "network: norm_scale must be > 0");
  if (transform == OutputTransform::neg_exp || transform == OutputTransform::pos_exp)
    require(out_dim == 1, "network: exp transforms require scalar output");
}

Mlp::Mlp(NetworkSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(seed);
  int in = spec_.in_dim;
  for (int l = 0; l < spec_.hidden_layers; ++l) {
    Layer L;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    L.W.resize(spec_.width, in);
    for (int i = 0; i < L.W.rows(); ++i)
      for (int j = 0; j < L.W.cols(); ++j) L.W(i, j) = rng.uniform(-bound, bound);
    L.b.resize(1, spec_.width);
    for (int j = 0; j < L.b.cols(); ++j) L.b(0, j) = rng.uniform(-bound, bound);
    L.gW = Mat::Zero(L.W.rows(), L.W.cols());
    L.gb = Mat::Zero(1, L.b.cols());
    layers_.push_back(std::move(L));
    in = spec_.width;
  }
  Layer out;
  out.W = Mat::Zero(spec_.out_dim, in);
  out.b = Mat::Zero(1, spec_.out_dim);
  out.gW = Mat::Zero(out.W.rows(), out.W.cols());
  out.gb = Mat::Zero(1, out.b.cols());
  layers_.push_back(std::move(out));
}

Mat Mlp::normalize(const Mat& X) const {
  require(X.cols() == spec_.in_dim, "Mlp: input width mismatch");
  Mat Z = X;
  for (int j = 0; j < spec_.in_dim; ++j)
    Z.col(j) = (Z.col(j).array() - spec_.norm_offset[j]) / spec_.norm_scale[j];
  return Z;
}

Tape::Id Mlp::forward(Tape& tape, const Mat& X, Tape::Id* x_node) {
  Tape::Id x = tape.leaf(normalize(X), true);
  if (x_node) *x_node = x;
  Tape::Id h = x;
  const int nl = static_cast<int>(layers_.size());
  for (int l = 0; l < nl; ++l) {
    Tape::Id W = tape.param(&layers_[l].W, &layers_[l].gW);
    Tape::Id b = tape.param(&layers_[l].b, &layers_[l].gb);
    h = tape.affine(h, W, b);
    if (l + 1 < nl) h = tape.activation(h, spec_.act);
  }
  switch (spec_.transform) {
    case OutputTransform::neg_exp: h = tape.axpb(tape.exp(h), -1.0, 0.0); break;
    case OutputTransform::pos_exp: h = tape.exp(h); break;
    default: break;
  }
  return h;
}

Mat Mlp::forward(const Mat& X) const {
  Mat h = normalize(X);
  const int nl = static_cast<int>(layers_.size());
  for (int l = 0; l < nl; ++l) {
    Mat z = h * layers_[l].W.transpose();
    z.rowwise() += layers_[l].b.row(0);
    if (l + 1 < nl) {
      if (spec_.act == Activation::softplus)
        z = z.unaryExpr([](double v) { return softplus_f(v); });
      else
        z = z.cwiseMax(0.0);
    }
    h = std::move(z);
  }
  switch (spec_.transform) {
    case OutputTransform::neg_exp: h = (-h.array().exp()).matrix(); break;
    case OutputTransform::pos_exp: h = h.array().exp().matrix(); break;
    default: break;
  }
  return h;
}

Mat Mlp::input_gradient(const Mat& X) const {
  require(spec_.out_dim == 1, "input_gradient: scalar output required");
  const int nl = static_cast<int>(layers_.size());
  std::vector<Mat> pre(nl);  // pre-activation values
  Mat h = normalize(X);
  for (int l = 0; l < nl; ++l) {
    Mat z = h * layers_[l].W.transpose();
    z.rowwise() += layers_[l].b.row(0);
    pre[l] = z;
    if (l + 1 < nl) {
      if (spec_.act == Activation::softplus)
        h = z.unaryExpr([](double v) { return softplus_f(v); });
      else
        h = z.cwiseMax(0.0);
    }
  }
  // seed: d out / d h_final
  Mat G;
  const Mat& hf = pre[nl - 1];  // B x 1
  switch (spec_.transform) {
    case OutputTransform::neg_exp: G = (-hf.array().exp()).matrix(); break;
    case OutputTransform::pos_exp: G = hf.array().exp().matrix(); break;
    default: G = Mat::Ones(X.rows(), 1); break;
  }
  for (int l = nl - 1; l >= 0; --l) {
    G = G * layers_[l].W;  // to the layer's input
    if (l > 0) {
      if (spec_.act == Activation::softplus)
        G.array() *= pre[l - 1].unaryExpr([](double v) { return sigmoid_f(v); }).array();
      else
        G.array() *= (pre[l - 1].array() > 0.0).cast<double>();
    }
  }
  for (int j = 0; j < spec_.in_dim; ++j) G.col(j) /= spec_.norm_scale[j];
  return G;  // B x in_dim, in original units
}

void Mlp::zero_grad() {
  for (auto& L : layers_) {
    L.gW.setZero();
    L.gb.setZero();
  }
}

std::vector<Mat*> Mlp::param_values() {
  std::vector<Mat*> v;
  for (auto& L : layers_) {
    v.push_back(&L.W);
    v.push_back(&L.b);
  }
  return v;
}

std::vector<Mat*> Mlp::param_grads() {
  std::vector<Mat*> v;
  for (auto& L : layers_) {
    v.push_back(&L.gW);
    v.push_back(&L.gb);
  }
  return v;
}

// ------------------------------------------------------------------ adam ----

Adam::Adam(std::vector<Mat*> values, std::vector<Mat*> grads, double lr_,
           double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_),
      values_(std::move(values)), grads_(std::move(grads)) {
  require(values_.size() == grads_.size(), "Adam: values/grads size mismatch");
  for (auto* p : values_) {
    m.emplace_back(Mat::Zero(p->rows(), p->cols()));
    v.emplace_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void Adam::step() {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < values_.size(); ++i) {
    const Mat& g = *grads_[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = (beta2 * v[i].array() + (1.0 - beta2) * g.array().square()).matrix();
    values_[i]->array() -=
        lr * (m[i].array() / bc1) / ((v[i].array() / bc2).sqrt() + eps);
  }
}

// ------------------------------------------------------------ checkpoint ----

namespace {

std::string hexd(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hexd(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  require(end && *end == '\0', "checkpoint: bad float token '" + s + "'");
  return v;
}

void write_mat(std::ostream& os, const char* tag, const Mat& m) {
  os << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) os << (j ? " " : "") << hexd(m(i, j));
    os << '\n';
  }
}

Mat read_mat(std::istream& is, const char* tag) {
  std::string t;
  long r, c;
  is >> t >> r >> c;
  require(is.good() && t == tag, std::string("checkpoint: expected ") + tag);
  Mat m(r, c);
  std::string tok;
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) {
      is >> tok;
      m(i, j) = parse_hexd(tok);
    }
  return m;
}

std::string escape_meta(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '\n') out += "\\n";
    else if (ch == '\\') out += "\\\\";
    else out += ch;
  }
  return out;
}

std::string unescape_meta(const std::string& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out += (s[i + 1] == 'n') ? '\n' : s[i + 1];
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream os;
  os << "pgdpo-checkpoint 1\n";
  for (const auto& [k, v] : ck.meta)
    os << "meta " << k << ' ' << escape_meta(v) << '\n';
  for (const auto& e : ck.entries) {
    const NetworkSpec& s = e.net.spec();
    os << "net " << e.name << '\n';
    os << "spec " << s.in_dim << ' ' << s.out_dim << ' ' << s.hidden_layers
       << ' ' << s.width << ' ' << to_string(s.act) << ' '
       << to_string(s.transform) << '\n';
    os << "norm";
    for (int j = 0; j < s.in_dim; ++j)
      os << ' ' << hexd(s.norm_offset[j]) << ' ' << hexd(s.norm_scale[j]);
    os << '\n';
    const auto& layers = e.net.layers();
    os << "layers " << layers.size() << '\n';
    for (const auto& L : layers) {
      write_mat(os, "W", L.W);
      write_mat(os, "b", L.b);
    }
    if (e.has_adam) {
      const Adam& a = e.adam;
      os << "adam " << hexd(a.lr) << ' ' << hexd(a.beta1) << ' ' << hexd(a.beta2)
         << ' ' << hexd(a.eps) << ' ' << a.t << ' ' << a.m.size() << '\n';
      for (size_t i = 0; i < a.m.size(); ++i) {
        write_mat(os, "m", a.m[i]);
        write_mat(os, "v", a.v[i]);
      }
    } else {
      os << "adam none\n";
    }
  }
  os << "end\n";
  // atomic-ish: tmp then rename
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    require(f.good(), "checkpoint: cannot open " + tmp);
    f << os.str();
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0,
          "checkpoint: rename failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open " + path);
  std::string tok;
  int version;
  f >> tok >> version;
  require(tok == "pgdpo-checkpoint" && version == 1,
          "checkpoint: unrecognized header in " + path);
  Checkpoint ck;
  while (f >> tok) {
    if (tok == "end") break;
    if (tok == "meta") {
      std::string k, rest;
      f >> k;
      std::getline(f, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      ck.meta.emplace_back(k, unescape_meta(rest));
      continue;
    }
    require(tok == "net", "checkpoint: expected 'net', got '" + tok + "'");
    Checkpoint::Entry e;
    f >> e.name;
    NetworkSpec s;
    std::string act, tr;
    f >> tok >> s.in_dim >> s.out_dim >> s.hidden_layers >> s.width >> act >> tr;
    require(tok == "spec", "checkpoint: expected 'spec'");
    s.act = activation_from_string(act);
    s.transform = transform_from_string(tr);
    s.norm_offset.resize(s.in_dim);
    s.norm_scale.resize(s.in_dim);
    f >> tok;
    require(tok == "norm", "checkpoint: expected 'norm'");
    for (int j = 0; j < s.in_dim; ++j) {
      std::string a, b;
      f >> a >> b;
      s.norm_offset[j] = parse_hexd(a);
      s.norm_scale[j] = parse_hexd(b);
    }
    size_t nlayers;
    f >> tok >> nlayers;
    require(tok == "layers", "checkpoint: expected 'layers'");
    e.net = Mlp(s, 0);
    require(e.net.layers().size() == nlayers, "checkpoint: layer count mismatch");
    for (auto& L : e.net.layers()) {
      L.W = read_mat(f, "W");
      L.b = read_mat(f, "b");
      L.gW = Mat::Zero(L.W.rows(), L.W.cols());
      L.gb = Mat::Zero(L.b.rows(), L.b.cols());
    }
    f >> tok;
    require(tok == "adam", "checkpoint: expected 'adam'");
    std::string first;
    f >> first;
    if (first != "none") {
      e.has_adam = true;
      Adam& a = e.adam;
      a.lr = parse_hexd(first);
      std::string b1, b2, ep;
      size_t nm;
      f >> b1 >> b2 >> ep >> a.t >> nm;
      a.beta1 = parse_hexd(b1);
      a.beta2 = parse_hexd(b2);
      a.eps = parse_hexd(ep);
      for (size_t i = 0; i < nm; ++i) {
        a.m.push_back(read_mat(f, "m"));
        a.v.push_back(read_mat(f, "v"));
      }
    }
    ck.entries.push_back(std::move(e));
  }
  require(tok == "end", "checkpoint: truncated file " + path);
  return ck;
}

}  // namespace pgdpo
