#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adsac/matrix.hpp"
#include "adsac/rng.hpp"
#include "adsac/tape.hpp"

namespace adsac::nn {

// Named collection of learnable matrices, each with a same-shape gradient slot.
// Entry order is insertion order and is part of the determinism contract
// (optimizer state and checkpoints are aligned by it).
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
  };

  Matrix& add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::logic_error("ParamSet: duplicate parameter " + name);
    index_[name] = static_cast<int>(entries_.size());
    Entry e;
    e.name = name;
    e.grad = Matrix(init.rows, init.cols);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  int count() const { return static_cast<int>(entries_.size()); }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("ParamSet: unknown parameter " + name);
    return it->second;
  }

  Entry& entry(int i) { return entries_.at(static_cast<std::size_t>(i)); }
  const Entry& entry(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  Matrix& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Matrix& value(const std::string& name) const { return entries_[index_of(name)].value; }
  Matrix& grad(const std::string& name) { return entries_[index_of(name)].grad; }

  void zero_grads() {
    for (Entry& e : entries_) e.grad.fill(0.0);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  // Inserts every parameter as a tracked leaf; result is aligned with entry order.
  std::vector<Tape::NodeId> emit(Tape& tape) const {
    std::vector<Tape::NodeId> ids;
    ids.reserve(entries_.size());
    for (const Entry& e : entries_) ids.push_back(tape.leaf(e.value, true));
    return ids;
  }

  // Accumulates tape gradients (from the latest backward) into the grad slots.
  void harvest(const Tape& tape, const std::vector<Tape::NodeId>& ids) {
    if (ids.size() != entries_.size()) throw std::logic_error("ParamSet::harvest: id count");
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Matrix& g = tape.grad(ids[k]);
      Matrix& dst = entries_[k].grad;
      check_shape(g.same_shape(dst), "ParamSet::harvest");
      for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
    }
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Handles for one ParamSet's leaves on one tape, addressable by name.
struct ParamGraph {
  const ParamSet* params = nullptr;
  std::vector<Tape::NodeId> nodes;

  Tape::NodeId operator[](const std::string& name) const {
    return nodes[static_cast<std::size_t>(params->index_of(name))];
  }
};

inline ParamGraph emit_params(Tape& tape, const ParamSet& ps) {
  return ParamGraph{&ps, ps.emit(tape)};
}

// Dense layer: weight (out,in) ~ U(-1/sqrt(in), 1/sqrt(in)), zero bias.
inline void add_dense(ParamSet& ps, const std::string& prefix, int out, int in, Rng& rng,
                      bool bias = true) {
  Matrix w(out, in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& x : w.data) x = rng.uniform(-bound, bound);
  ps.add(prefix + ".W", std::move(w));
  if (bias) ps.add(prefix + ".b", Matrix(1, out));
}

inline Tape::NodeId dense(Tape& tape, const ParamGraph& pg, const std::string& prefix,
                          Tape::NodeId x) {
  return tape.linear(x, pg[prefix + ".W"], pg[prefix + ".b"]);
}

// Adaptive-moment optimizer state (one first/second moment per parameter).
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& ps, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(ps.count());
    v_.reserve(ps.count());
    for (int i = 0; i < ps.count(); ++i) {
      const Matrix& val = ps.entry(i).value;
      m_.emplace_back(val.rows, val.cols);
      v_.emplace_back(val.rows, val.cols);
    }
  }

  std::int64_t step_count() const { return step_; }
  double lr() const { return lr_; }

  // One update from the gradients currently stored in the ParamSet.
  void step(ParamSet& ps) {
    if (static_cast<int>(m_.size()) != ps.count())
      throw std::logic_error("AdamState: parameter count mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (int k = 0; k < ps.count(); ++k) {
      auto& e = ps.entry(k);
      Matrix& m = m_[static_cast<std::size_t>(k)];
      Matrix& v = v_[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad.data[i];
        m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g;
        v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g * g;
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        e.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

inline void adam_step(ParamSet& ps, AdamState& opt) { opt.step(ps); }

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian flat binary.
//   magic "ADSACKPT" | u32 version | u32 count
//   per parameter: u32 name_len | name bytes | u32 rows | u32 cols | f64 values
// Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'S', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_params(std::ostream& os, const ParamSet& ps) {
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    const auto& e = ps.entry(i);
    detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(e.value.rows));
    detail::put_u32(os, static_cast<std::uint32_t>(e.value.cols));
    os.write(reinterpret_cast<const char*>(e.value.data.data()),
             static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  }
}

inline void save_params(const std::string& path, const ParamSet& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_params(os, ps);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline ParamSet load_params(std::istream& is) {
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: bad magic number");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is);
  ParamSet ps;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rows = detail::get_u32(is);
    const std::uint32_t cols = detail::get_u32(is);
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    is.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated values for " + name);
    ps.add(name, std::move(m));
  }
  return ps;
}

inline ParamSet load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_params(is);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Builds a scalar loss on the given tape from parameter leaves aligned with
// the ParamSet entry order. Must be deterministic across calls.
using LossBuilder = std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double eval_loss(const ParamSet& ps, const LossBuilder& f) {
  Tape tape;
  auto ids = ps.emit(tape);
  const Tape::NodeId root = f(tape, ids);
  return tape.value(root).data[0];
}

// Compares the gradients currently stored in `ps` against central finite
// differences of f, sampling up to `coords_per_param` coordinates per entry.
inline GradCheckResult compare_grads_to_fd(ParamSet& ps, const LossBuilder& f, double h,
                                           int coords_per_param, std::uint64_t seed) {
  GradCheckResult res;
  Rng rng(derive_seed(seed, "grad-check"));
  for (int k = 0; k < ps.count(); ++k) {
    auto& e = ps.entry(k);
    const std::size_t n = e.value.size();
    const int take = coords_per_param <= 0
                         ? static_cast<int>(n)
                         : static_cast<int>(std::min<std::size_t>(n, coords_per_param));
    for (int c = 0; c < take; ++c) {
      const std::size_t i =
          coords_per_param <= 0
              ? static_cast<std::size_t>(c)
              : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      const double saved = e.value.data[i];
      e.value.data[i] = saved + h;
      const double fp = eval_loss(ps, f);
      e.value.data[i] = saved - h;
      const double fm = eval_loss(ps, f);
      e.value.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = e.grad.data[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = e.name;
        res.worst_coord = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

// Full check: analytic gradients via backward(), then finite differences.
inline GradCheckResult grad_check(ParamSet& ps, const LossBuilder& f, double h = 1e-5,
                                  int coords_per_param = 4, std::uint64_t seed = 0) {
  Tape tape;
  auto ids = ps.emit(tape);
  const Tape::NodeId root = f(tape, ids);
  tape.backward(root);
  ps.zero_grads();
  ps.harvest(tape, ids);
  return compare_grads_to_fd(ps, f, h, coords_per_param, seed);
}

}  // namespace adsac::nn
