#include "d3desk/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace d3desk::ad {

Adam::Adam(std::vector<Tensor> params, Scalar lr, Scalar beta1, Scalar beta2, Scalar eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].v().size(), Scalar(0));
    v_[i].assign(params_[i].v().size(), Scalar(0));
  }
}

void Adam::step() {
  ++t_;
  const Scalar bc1 = Scalar(1) - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = Scalar(1) - std::pow(beta2_, static_cast<Scalar>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto& vals = p.v();
    auto& grads = p.g();
    for (size_t j = 0; j < vals.size(); ++j) {
      const Scalar g = grads[j];
      m_[i][j] = beta1_ * m_[i][j] + (Scalar(1) - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (Scalar(1) - beta2_) * g * g;
      const Scalar mhat = m_[i][j] / bc1;
      const Scalar vhat = v_[i][j] / bc2;
      vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Adam::State Adam::export_state() const { return State{m_, v_, t_}; }

void Adam::import_state(const State& s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size())
    throw std::runtime_error("adam: state size mismatch");
  m_ = s.m;
  v_ = s.v;
  t_ = s.t;
}

namespace {

constexpr char kMagic[8] = {'D', '3', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ostream& os, uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
  return x;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void write_f64(std::ostream& os, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  const uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  write_u64(os, meta.size());
  for (const auto& [k, v] : meta) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u64(os, params.size());
  for (const auto& [name, t] : params) {
    write_str(os, name);
    write_u64(os, t.shape().size());
    for (int d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
    for (Scalar x : t.v()) write_f64(os, static_cast<double>(x));
  }
  if (!os) throw std::runtime_error("checkpoint: write failure for " + path);
}

void load_checkpoint(const std::string& path, NamedParams* params,
                     std::map<std::string, std::string>* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad header in " + path);
  const uint64_t nmeta = read_u64(is);
  for (uint64_t i = 0; i < nmeta; ++i) {
    std::string k = read_str(is);
    std::string v = read_str(is);
    if (meta) (*meta)[k] = v;
  }
  const uint64_t n = read_u64(is);
  params->clear();
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(is);
    const uint64_t ndim = read_u64(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u64(is));
    std::vector<Scalar> vals(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : vals) x = static_cast<Scalar>(read_f64(is));
    params->emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(vals)));
  }
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
}

void load_into(const std::string& path, NamedParams& params,
               std::map<std::string, std::string>* meta) {
  NamedParams loaded;
  load_checkpoint(path, &loaded, meta);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : loaded) by_name.emplace(name, t);
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "' in " + path);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "' in " + path);
    t.v() = it->second.v();
  }
}

}  // namespace d3desk::ad
