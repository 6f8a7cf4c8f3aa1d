#include "pwps/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace pwps {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::config: return "config";
    case Stage::spectral: return "spectral";
    case Stage::fields: return "fields";
    case Stage::quantum: return "quantum";
    case Stage::wigner: return "wigner";
    case Stage::kinetic: return "kinetic";
    case Stage::limitlab: return "limitlab";
    case Stage::io: return "io";
  }
  return "unknown";
}

void fail(Stage s, const std::string& msg) { throw Error(s, msg); }

// ---------------------------------------------------------------------------

Grid make_grid(int d, std::span<const int> n, std::span<const double> L) {
  if (d < 1 || d > 3) fail(Stage::spectral, "dimension must be 1, 2 or 3");
  if (static_cast<int>(n.size()) < d || static_cast<int>(L.size()) < d)
    fail(Stage::spectral, "need n and L for every axis");
  Grid g;
  g.d = d;
  for (int a = 0; a < d; ++a) {
    if (n[a] < 8 || n[a] % 2 != 0)
      fail(Stage::spectral, "odd grid size or n < 8 on axis " + std::to_string(a));
    if (!(L[a] > 0.0)) fail(Stage::spectral, "non-positive box length");
    g.n[a] = n[a];
    g.L[a] = L[a];
    g.h[a] = L[a] / n[a];
    g.k[a].resize(n[a]);
    const double base = kTwoPi / L[a];
    for (int i = 0; i < n[a]; ++i) {
      const int freq = (i < n[a] / 2) ? i : i - n[a];
      g.k[a][i] = base * freq;
    }
  }
  return g;
}

Grid make_grid_1d(int n, double L) {
  const int nn[1] = {n};
  const double ll[1] = {L};
  return make_grid(1, std::span<const int>(nn, 1), std::span<const double>(ll, 1));
}

// ---------------------------------------------------------------------------
// Plan cache. Plan creation is not thread-safe in FFTW, execution via
// fftw_execute_dft is; a mutex guards the cache so the library stays safe if
// a host application drives it from several threads.

namespace {

struct PlanKey {
  std::array<int, 4> dims;  // rank then up to 3 dims
  int howmany;
  int sign;
  bool operator<(const PlanKey& o) const {
    return std::tie(dims, howmany, sign) < std::tie(o.dims, o.howmany, o.sign);
  }
};

class PlanCache {
public:
  fftw_plan get(std::span<const int> dims, int howmany, int sign) {
    PlanKey key{};
    key.dims[0] = static_cast<int>(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) key.dims[i + 1] = dims[i];
    key.howmany = howmany;
    key.sign = sign;

    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    std::size_t len = 1;
    for (int v : dims) len *= static_cast<std::size_t>(v);
    std::vector<cplx> scratch(len * howmany);
    auto* ptr = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan p = fftw_plan_many_dft(
        static_cast<int>(dims.size()), dims.data(), howmany, ptr, nullptr, 1,
        static_cast<int>(len), ptr, nullptr, 1, static_cast<int>(len), sign,
        FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) fail(Stage::spectral, "fftw plan creation failed");
    cache_.emplace(key, p);
    return p;
  }

private:
  std::mutex mu_;
  std::map<PlanKey, fftw_plan> cache_;
};

PlanCache& plans() {
  static PlanCache c;
  return c;
}

void execute(fftw_plan p, cplx* data) {
  auto* ptr = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(p, ptr, ptr);
}

}  // namespace

void fft_blocks(std::span<const int> dims, int howmany, cplx* data, int sign) {
  fftw_plan p = plans().get(dims, howmany, sign);
  execute(p, data);
}

void fft_rows(int len, int howmany, cplx* data, int sign) {
  const int dims[1] = {len};
  fft_blocks(std::span<const int>(dims, 1), howmany, data, sign);
}

void fft_forward(const Grid& g, std::span<const cplx> in, std::span<cplx> out) {
  if (in.size() != g.size() || out.size() != g.size())
    fail(Stage::spectral, "fft size mismatch");
  if (out.data() != in.data()) std::memcpy(out.data(), in.data(), in.size() * sizeof(cplx));
  std::array<int, 3> dims;
  for (int a = 0; a < g.d; ++a) dims[a] = g.n[a];
  fft_blocks(std::span<const int>(dims.data(), g.d), 1, out.data(), FFTW_FORWARD);
  const double scale = 1.0 / static_cast<double>(g.size());
  for (auto& z : out) z *= scale;
}

void fft_inverse(const Grid& g, std::span<const cplx> in, std::span<cplx> out) {
  if (in.size() != g.size() || out.size() != g.size())
    fail(Stage::spectral, "fft size mismatch");
  if (out.data() != in.data()) std::memcpy(out.data(), in.data(), in.size() * sizeof(cplx));
  std::array<int, 3> dims;
  for (int a = 0; a < g.d; ++a) dims[a] = g.n[a];
  fft_blocks(std::span<const int>(dims.data(), g.d), 1, out.data(), FFTW_BACKWARD);
}

// ---------------------------------------------------------------------------

namespace {

// Applies fn(flat_spectral_index, per-axis frequency indices) -> multiplier
// to the spectrum of f and transforms back.
template <typename Fn>
ScalarField apply_multiplier(const ScalarField& f, Fn&& fn) {
  ScalarField out(f.grid);
  fft_forward(f.grid, f.v, out.v);
  const Grid& g = f.grid;
  std::array<int, 3> idx{0, 0, 0};
  const std::size_t total = g.size();
  for (std::size_t fl = 0; fl < total; ++fl) {
    out.v[fl] *= fn(idx);
    for (int a = g.d - 1; a >= 0; --a) {
      if (++idx[a] < g.n[a]) break;
      idx[a] = 0;
    }
  }
  fft_inverse(g, out.v, out.v);
  return out;
}

}  // namespace

ScalarField spectral_derivative(const ScalarField& f, int axis) {
  const Grid& g = f.grid;
  if (axis < 0 || axis >= g.d) fail(Stage::spectral, "derivative axis out of range");
  return apply_multiplier(f, [&](const std::array<int, 3>& idx) {
    const int i = idx[axis];
    // zero the Nyquist mode: its derivative has no consistent sign
    if (i == g.n[axis] / 2) return cplx(0.0, 0.0);
    return cplx(0.0, g.k[axis][i]);
  });
}

ScalarField spectral_laplacian(const ScalarField& f) {
  const Grid& g = f.grid;
  return apply_multiplier(f, [&](const std::array<int, 3>& idx) {
    double k2 = 0.0;
    for (int a = 0; a < g.d; ++a) k2 += g.k[a][idx[a]] * g.k[a][idx[a]];
    return cplx(-k2, 0.0);
  });
}

ScalarField spectral_shift(const ScalarField& f, std::span<const double> offset) {
  const Grid& g = f.grid;
  if (static_cast<int>(offset.size()) < g.d) fail(Stage::spectral, "offset size mismatch");
  for (int a = 0; a < g.d; ++a)
    if (!std::isfinite(offset[a])) fail(Stage::spectral, "non-finite shift offset");
  // phase tables per axis
  std::array<std::vector<cplx>, 3> phase;
  for (int a = 0; a < g.d; ++a) {
    phase[a].resize(g.n[a]);
    for (int i = 0; i < g.n[a]; ++i)
      phase[a][i] = std::polar(1.0, g.k[a][i] * offset[a]);
  }
  return apply_multiplier(f, [&](const std::array<int, 3>& idx) {
    cplx p(1.0, 0.0);
    for (int a = 0; a < g.d; ++a) p *= phase[a][idx[a]];
    return p;
  });
}

SpinorField spectral_shift(const SpinorField& u, std::span<const double> offset) {
  SpinorField out(u.grid);
  for (int c = 0; c < 2; ++c) {
    ScalarField tmp(u.grid);
    tmp.v = u.c[c];
    out.c[c] = spectral_shift(tmp, offset).v;
  }
  return out;
}

ScalarField spectral_upsample(const ScalarField& f, int factor) {
  if (factor < 1) fail(Stage::spectral, "upsample factor must be >= 1");
  const Grid& g = f.grid;
  std::array<int, 3> nn;
  std::array<double, 3> ll;
  for (int a = 0; a < g.d; ++a) {
    nn[a] = g.n[a] * factor;
    ll[a] = g.L[a];
  }
  Grid fine = make_grid(g.d, std::span<const int>(nn.data(), g.d),
                        std::span<const double>(ll.data(), g.d));
  if (factor == 1) {
    ScalarField out(fine);
    out.v = f.v;
    return out;
  }
  ScalarField spec(g);
  fft_forward(g, f.v, spec.v);
  ScalarField out(fine);
  // scatter coarse spectrum into the fine spectral array (zero padding)
  const std::size_t total = g.size();
  std::array<int, 3> idx{0, 0, 0};
  for (std::size_t fl = 0; fl < total; ++fl) {
    std::array<int, 3> fidx{0, 0, 0};
    bool nyq = false;
    for (int a = 0; a < g.d; ++a) {
      const int i = idx[a];
      if (i == g.n[a] / 2) nyq = true;  // split below
      fidx[a] = (i < g.n[a] / 2) ? i : fine.n[a] - (g.n[a] - i);
    }
    if (!nyq) {
      out.v[fine.flat(fidx)] = spec.v[fl];
    } else {
      // split the Nyquist amplitude evenly between +/- modes on the fine grid
      // so the upsampled field stays real for real input
      std::vector<std::array<int, 3>> targets;
      targets.push_back({0, 0, 0});
      for (int a = 0; a < g.d; ++a) {
        const int i = idx[a];
        std::vector<std::array<int, 3>> next;
        for (auto t : targets) {
          if (i == g.n[a] / 2) {
            auto tp = t; tp[a] = g.n[a] / 2;            next.push_back(tp);
            auto tm = t; tm[a] = fine.n[a] - g.n[a] / 2; next.push_back(tm);
          } else {
            t[a] = (i < g.n[a] / 2) ? i : fine.n[a] - (g.n[a] - i);
            next.push_back(t);
          }
        }
        targets.swap(next);
      }
      const cplx share = spec.v[fl] / static_cast<double>(targets.size());
      for (const auto& t : targets) out.v[fine.flat(t)] += share;
    }
    for (int a = g.d - 1; a >= 0; --a) {
      if (++idx[a] < g.n[a]) break;
      idx[a] = 0;
    }
  }
  fft_inverse(fine, out.v, out.v);
  return out;
}

// ---------------------------------------------------------------------------

double integral_real(const ScalarField& f) {
  double s = 0.0;
  for (const auto& z : f.v) s += z.real();
  return s * f.grid.cell_volume();
}

cplx integral(const ScalarField& f) {
  cplx s(0.0, 0.0);
  for (const auto& z : f.v) s += z;
  return s * f.grid.cell_volume();
}

double l2_norm(const ScalarField& f) {
  double s = 0.0;
  for (const auto& z : f.v) s += std::norm(z);
  return std::sqrt(s * f.grid.cell_volume());
}

double l2_norm(const SpinorField& u) {
  double s = 0.0;
  for (int c = 0; c < 2; ++c)
    for (const auto& z : u.c[c]) s += std::norm(z);
  return std::sqrt(s * u.grid.cell_volume());
}

double linf_norm(const ScalarField& f) {
  double m = 0.0;
  for (const auto& z : f.v) m = std::max(m, std::abs(z));
  return m;
}

double max_imag(const ScalarField& f) {
  double m = 0.0;
  for (const auto& z : f.v) m = std::max(m, std::abs(z.imag()));
  return m;
}

cplx inner(const SpinorField& a, const SpinorField& b) {
  if (!a.grid.same_shape(b.grid)) fail(Stage::spectral, "inner product grid mismatch");
  cplx s(0.0, 0.0);
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < a.c[c].size(); ++i)
      s += std::conj(a.c[c][i]) * b.c[c][i];
  return s * a.grid.cell_volume();
}

double lp_norm_real(const ScalarField& f, double p) {
  double s = 0.0;
  for (const auto& z : f.v) s += std::pow(std::max(z.real(), 0.0), p);
  return std::pow(s * f.grid.cell_volume(), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Binary dumps.

namespace {

constexpr std::uint32_t kDumpVersion = 1;

void put_u32(std::FILE* fp, std::uint32_t v) { std::fwrite(&v, sizeof(v), 1, fp); }
void put_f64(std::FILE* fp, double v) { std::fwrite(&v, sizeof(v), 1, fp); }

struct FileCloser {
  void operator()(std::FILE* fp) const { if (fp) std::fclose(fp); }
};

void write_header(std::FILE* fp, const Grid& g, int ncomp, bool is_complex) {
  std::fwrite("PWPS", 1, 4, fp);
  put_u32(fp, kDumpVersion);
  put_f64(fp, static_cast<double>(g.d));
  for (int a = 0; a < g.d; ++a) put_f64(fp, static_cast<double>(g.n[a]));
  for (int a = 0; a < g.d; ++a) put_f64(fp, g.L[a]);
  put_u32(fp, static_cast<std::uint32_t>(ncomp));
  put_u32(fp, is_complex ? 1u : 0u);
}

}  // namespace

void write_field_dump(const std::string& path, const Grid& g,
                      std::span<const cplx> values, int ncomp, bool is_complex) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(Stage::io, "cannot open " + path + " for writing");
  write_header(fp.get(), g, ncomp, is_complex);
  if (is_complex) {
    std::fwrite(values.data(), sizeof(cplx), values.size(), fp.get());
  } else {
    for (const auto& z : values) put_f64(fp.get(), z.real());
  }
}

void write_field_dump_real(const std::string& path, const Grid& g,
                           std::span<const double> values, int ncomp) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(Stage::io, "cannot open " + path + " for writing");
  write_header(fp.get(), g, ncomp, false);
  std::fwrite(values.data(), sizeof(double), values.size(), fp.get());
}

FieldDump read_field_dump(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(Stage::io, "cannot open " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, fp.get()) != 4 || std::memcmp(magic, "PWPS", 4) != 0)
    fail(Stage::io, "bad magic in " + path);
  std::uint32_t version = 0;
  if (std::fread(&version, sizeof(version), 1, fp.get()) != 1 || version != kDumpVersion)
    fail(Stage::io, "unsupported dump version in " + path);
  auto get_f64 = [&]() {
    double v = 0.0;
    if (std::fread(&v, sizeof(v), 1, fp.get()) != 1) fail(Stage::io, "truncated " + path);
    return v;
  };
  const int d = static_cast<int>(get_f64());
  if (d < 1 || d > 3) fail(Stage::io, "bad dimension in " + path);
  std::array<int, 3> n{};
  std::array<double, 3> L{};
  for (int a = 0; a < d; ++a) n[a] = static_cast<int>(get_f64());
  for (int a = 0; a < d; ++a) L[a] = get_f64();
  std::uint32_t ncomp = 0, cflag = 0;
  if (std::fread(&ncomp, sizeof(ncomp), 1, fp.get()) != 1 ||
      std::fread(&cflag, sizeof(cflag), 1, fp.get()) != 1)
    fail(Stage::io, "truncated header in " + path);

  FieldDump out;
  out.grid = make_grid(d, std::span<const int>(n.data(), d), std::span<const double>(L.data(), d));
  out.ncomp = static_cast<int>(ncomp);
  out.is_complex = cflag != 0;
  const std::size_t count = out.grid.size() * out.ncomp;
  if (out.is_complex) {
    out.values.resize(count);
    if (std::fread(out.values.data(), sizeof(cplx), count, fp.get()) != count)
      fail(Stage::io, "truncated payload in " + path);
  } else {
    out.rvalues.resize(count);
    if (std::fread(out.rvalues.data(), sizeof(double), count, fp.get()) != count)
      fail(Stage::io, "truncated payload in " + path);
  }
  return out;
}

}  // namespace pwps
