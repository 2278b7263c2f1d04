#include "mfrelax/schemes.hpp"

#include "mfrelax/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

namespace mfrelax {

namespace {

using Triplet = Eigen::Triplet<double>;
using Mat3 = Eigen::Matrix3d;
using V3 = Eigen::Vector3d;

Mat3 skew(const V3 &v) {
  Mat3 s;
  s << 0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0;
  return s;
}

V3 to_v3(const Vec3 &a) { return {a[0], a[1], a[2]}; }

// Shared, step-independent data: operators, quadrature for the nonlinear
// terms, and frequently used products.
struct Shared {
  const OperatorSet *ops = nullptr;
  CellTabulation tab;
  CellDofMap dofs;
  SparseMatrix curlT_md;  // curl^T Md : (B, curl k)
  Eigen::Index nF = 0;
  Eigen::Index nE = 0;

  explicit Shared(const OperatorSet &o)
      : ops(&o),
        tab({o.mesh->spacing()[0], o.mesh->spacing()[1], o.mesh->spacing()[2]}, 3),
        dofs(build_cell_dofs(o)),
        curlT_md(SparseMatrix(o.curl.transpose()) * o.mass_div),
        nF(o.hdiv->size()), nE(o.hcurl->size()) {}
};

template <std::size_t N>
std::array<double, N> gather(const std::array<std::int64_t, N> &idx,
                             const double *base) {
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i)
    if (idx[i] >= 0) out[i] = base[idx[i]];
  return out;
}

// Adds w * g[dir(i)] * value_i to the local residual of each test function.
template <std::size_t N>
void add_test(std::array<double, N> &loc, const std::array<double, N> &vals,
              const V3 &g, double w) {
  constexpr std::size_t per = N / 3;
  for (std::size_t i = 0; i < N; ++i) loc[i] += w * g[i / per] * vals[i];
}

template <std::size_t N>
void scatter(Vector &r, Eigen::Index offset, const std::array<std::int64_t, N> &idx,
             const std::array<double, N> &loc) {
  for (std::size_t i = 0; i < N; ++i)
    if (idx[i] >= 0) r[offset + idx[i]] += loc[i];
}

// Local Jacobian block: loc(i,k) += w * phi_i * phi_k * D(dir_i, dir_k).
template <class Local, std::size_t NI, std::size_t NK>
void add_block(Local &loc, const std::array<double, NI> &vi,
               const std::array<double, NK> &vk, const Mat3 &d, double w) {
  constexpr int pi = NI / 3, pk = NK / 3;
  for (int i = 0; i < int(NI); ++i) {
    const double wi = w * vi[i];
    for (int k = 0; k < int(NK); ++k) loc(i, k) += wi * vk[k] * d(i / pi, k / pk);
  }
}

class TripletSink {
public:
  void add(const SparseMatrix &m, Eigen::Index r0, Eigen::Index c0, double s = 1.0) {
    for (Eigen::Index c = 0; c < m.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(m, c); it; ++it)
        t_.emplace_back(r0 + it.row(), c0 + it.col(), s * it.value());
  }
  void identity(Eigen::Index r0, Eigen::Index c0, Eigen::Index n, double s) {
    for (Eigen::Index i = 0; i < n; ++i) t_.emplace_back(r0 + i, c0 + i, s);
  }
  template <int NI, int NK, std::size_t SI, std::size_t SK>
  void add(const Eigen::Matrix<double, NI, NK> &loc,
           const std::array<std::int64_t, SI> &ri, Eigen::Index r0,
           const std::array<std::int64_t, SK> &ck, Eigen::Index c0, double s = 1.0) {
    for (int i = 0; i < NI; ++i) {
      if (ri[i] < 0) continue;
      for (int k = 0; k < NK; ++k) {
        if (ck[k] < 0 || loc(i, k) == 0.0) continue;
        t_.emplace_back(r0 + ri[i], c0 + ck[k], s * loc(i, k));
      }
    }
  }
  void dense_column(const Vector &v, Eigen::Index r0, Eigen::Index col) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v[i] != 0.0) t_.emplace_back(r0 + i, col, v[i]);
  }
  void dense_row(const Vector &v, Eigen::Index row, Eigen::Index c0) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v[i] != 0.0) t_.emplace_back(row, c0 + i, v[i]);
  }
  SparseMatrix build(Eigen::Index n) {
    SparseMatrix m(n, n);
    m.setFromTriplets(t_.begin(), t_.end());
    m.makeCompressed();
    return m;
  }

private:
  std::vector<Triplet> t_;
};

using Edge12 = Eigen::Matrix<double, 12, 12>;
using EdgeFace = Eigen::Matrix<double, 12, 6>;
using FaceEdge = Eigen::Matrix<double, 6, 12>;
using Face6 = Eigen::Matrix<double, 6, 6>;

// Crank-Nicolson step of the unconstrained scheme. Unknowns (B^{n+1},
// E^{n+1/2}, j^{n+1/2}); the induction equation is posed in strong form,
// which is equivalent since curl maps H0(curl) into H0(div).
class NonConservativeSystem final : public NonlinearSystem {
public:
  NonConservativeSystem(const Shared &sh, Vector b0, double dt, double tau)
      : sh_(sh), b0_(std::move(b0)), dt_(dt), tau_(tau) {}

  Eigen::Index size() const override { return sh_.nF + 2 * sh_.nE; }

  Vector residual(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector b1 = x.segment(0, nF);
    const Vector e = x.segment(nF, nE);
    const Vector j = x.segment(nF + nE, nE);
    const Vector bh = 0.5 * (b1 + b0_);
    Vector r(size());
    r.segment(0, nF) = (b1 - b0_) / dt_ + o.curl * e;
    r.segment(nF, nE) = o.mass_curl * e;
    r.segment(nF + nE, nE) = o.mass_curl * j - sh_.curlT_md * bh;
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto jl = gather(sh_.dofs.edges[c], j.data());
      const auto bl = gather(sh_.dofs.faces[c], bh.data());
      std::array<double, 12> loc{};
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 bv = to_v3(sh_.tab.face_field(q, bl.data()));
        const V3 g = jv.cross(bv).cross(bv);
        add_test(loc, sh_.tab.edge[q], g, tau_ * sh_.tab.weights[q]);
      }
      scatter(r, nF, sh_.dofs.edges[c], loc);
    }
    return r;
  }

  SparseMatrix jacobian(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector b1 = x.segment(0, nF);
    const Vector j = x.segment(nF + nE, nE);
    const Vector bh = 0.5 * (b1 + b0_);
    TripletSink t;
    t.identity(0, 0, nF, 1.0 / dt_);
    t.add(o.curl, 0, nF);
    t.add(o.mass_curl, nF, nF);
    t.add(o.mass_curl, nF + nE, nF + nE);
    t.add(sh_.curlT_md, nF + nE, 0, -0.5);
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto jl = gather(sh_.dofs.edges[c], j.data());
      const auto bl = gather(sh_.dofs.faces[c], bh.data());
      Edge12 dj = Edge12::Zero();
      EdgeFace db = EdgeFace::Zero();
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 bv = to_v3(sh_.tab.face_field(q, bl.data()));
        const V3 cv = jv.cross(bv);
        const Mat3 sb = skew(bv);
        // g = (j x b) x b
        const Mat3 g_j = sb * sb;
        const Mat3 g_b = -sb * skew(jv) + skew(cv);
        const double w = tau_ * sh_.tab.weights[q];
        add_block(dj, sh_.tab.edge[q], sh_.tab.edge[q], g_j, w);
        add_block(db, sh_.tab.edge[q], sh_.tab.face[q], g_b, 0.5 * w);
      }
      t.add(dj, sh_.dofs.edges[c], nF, sh_.dofs.edges[c], nF + nE);
      t.add(db, sh_.dofs.edges[c], nF, sh_.dofs.faces[c], 0);
    }
    return t.build(size());
  }

private:
  const Shared &sh_;
  Vector b0_;
  double dt_, tau_;
};

// Crank-Nicolson step of the projection scheme. Unknowns (B^{n+1},
// u^{n+1/2}, E^{n+1/2}, j^{n+1/2}, H^{n+1/2}).
class ProjectionSystem final : public NonlinearSystem {
public:
  ProjectionSystem(const Shared &sh, Vector b0, double dt, double tau)
      : sh_(sh), b0_(std::move(b0)), dt_(dt), tau_(tau) {}

  Eigen::Index size() const override { return 2 * sh_.nF + 3 * sh_.nE; }

  Vector residual(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector b1 = x.segment(0, nF);
    const Vector u = x.segment(nF, nF);
    const Vector e = x.segment(2 * nF, nE);
    const Vector j = x.segment(2 * nF + nE, nE);
    const Vector h = x.segment(2 * nF + 2 * nE, nE);
    const Vector bh = 0.5 * (b1 + b0_);
    Vector r(size());
    r.segment(0, nF) = (b1 - b0_) / dt_ + o.curl * e;
    r.segment(nF, nF) = o.mass_div * u;
    r.segment(2 * nF, nE) = o.mass_curl * e;
    r.segment(2 * nF + nE, nE) = o.mass_curl * j - sh_.curlT_md * bh;
    r.segment(2 * nF + 2 * nE, nE) = o.mass_curl * h - o.mass_curl_div * bh;
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto &ei = sh_.dofs.edges[c];
      const auto &fi = sh_.dofs.faces[c];
      const auto jl = gather(ei, j.data());
      const auto hl = gather(ei, h.data());
      const auto ul = gather(fi, u.data());
      std::array<double, 6> loc_u{};
      std::array<double, 12> loc_e{};
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 hv = to_v3(sh_.tab.edge_field(q, hl.data()));
        const V3 uv = to_v3(sh_.tab.face_field(q, ul.data()));
        const double w = sh_.tab.weights[q];
        add_test(loc_u, sh_.tab.face[q], jv.cross(hv), -tau_ * w);
        add_test(loc_e, sh_.tab.edge[q], uv.cross(hv), w);
      }
      scatter(r, nF, fi, loc_u);
      scatter(r, 2 * nF, ei, loc_e);
    }
    return r;
  }

  SparseMatrix jacobian(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector u = x.segment(nF, nF);
    const Vector j = x.segment(2 * nF + nE, nE);
    const Vector h = x.segment(2 * nF + 2 * nE, nE);
    const Eigen::Index oB = 0, oU = nF, oE = 2 * nF, oJ = 2 * nF + nE, oH = 2 * nF + 2 * nE;
    TripletSink t;
    t.identity(oB, oB, nF, 1.0 / dt_);
    t.add(o.curl, oB, oE);
    t.add(o.mass_div, oU, oU);
    t.add(o.mass_curl, oE, oE);
    t.add(o.mass_curl, oJ, oJ);
    t.add(sh_.curlT_md, oJ, oB, -0.5);
    t.add(o.mass_curl, oH, oH);
    t.add(o.mass_curl_div, oH, oB, -0.5);
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto &ei = sh_.dofs.edges[c];
      const auto &fi = sh_.dofs.faces[c];
      const auto jl = gather(ei, j.data());
      const auto hl = gather(ei, h.data());
      const auto ul = gather(fi, u.data());
      FaceEdge uj = FaceEdge::Zero(), uh = FaceEdge::Zero();
      EdgeFace eu = EdgeFace::Zero();
      Edge12 eh = Edge12::Zero();
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 hv = to_v3(sh_.tab.edge_field(q, hl.data()));
        const V3 uv = to_v3(sh_.tab.face_field(q, ul.data()));
        const double w = sh_.tab.weights[q];
        const Mat3 sh = skew(hv);
        add_block(uj, sh_.tab.face[q], sh_.tab.edge[q], -sh, -tau_ * w);
        add_block(uh, sh_.tab.face[q], sh_.tab.edge[q], skew(jv), -tau_ * w);
        add_block(eu, sh_.tab.edge[q], sh_.tab.face[q], -sh, w);
        add_block(eh, sh_.tab.edge[q], sh_.tab.edge[q], skew(uv), w);
      }
      t.add(uj, fi, oU, ei, oJ);
      t.add(uh, fi, oU, ei, oH);
      t.add(eu, ei, oE, fi, oU);
      t.add(eh, ei, oE, ei, oH);
    }
    return t.build(size());
  }

private:
  const Shared &sh_;
  Vector b0_;
  double dt_, tau_;
};

// Implicit Euler step of the multiplier scheme. Unknowns (B, u, A, E, j)
// followed by the multipliers: (lambda_E, lambda_H) in full mode, lambda_H
// alone in reduced mode.
class LagrangeSystem final : public NonlinearSystem {
public:
  LagrangeSystem(const Shared &sh, Vector a0, double energy0, double helicity0,
                 double dt, double tau, LmMode mode)
      : sh_(sh), a0_(std::move(a0)), energy0_(energy0), helicity0_(helicity0),
        dt_(dt), tau_(tau), mode_(mode) {}

  Eigen::Index field_size() const { return 2 * sh_.nF + 3 * sh_.nE; }
  Eigen::Index multipliers() const { return mode_ == LmMode::full ? 2 : 1; }
  Eigen::Index size() const override { return field_size() + multipliers(); }

  Eigen::Index oB() const { return 0; }
  Eigen::Index oU() const { return sh_.nF; }
  Eigen::Index oA() const { return 2 * sh_.nF; }
  Eigen::Index oE() const { return 2 * sh_.nF + sh_.nE; }
  Eigen::Index oJ() const { return 2 * sh_.nF + 2 * sh_.nE; }

  double lambda_e(const Vector &x) const {
    return mode_ == LmMode::full ? x[field_size()] : 0.0;
  }
  double lambda_h(const Vector &x) const { return x[size() - 1]; }

  /// 2 tau |B x j|^2, the dissipation in the enforced energy law.
  double dissipation(const Vector &b, const Vector &j) const {
    double acc = 0.0;
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto jl = gather(sh_.dofs.edges[c], j.data());
      const auto bl = gather(sh_.dofs.faces[c], b.data());
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 bv = to_v3(sh_.tab.face_field(q, bl.data()));
        acc += sh_.tab.weights[q] * bv.cross(jv).squaredNorm();
      }
    }
    return 2.0 * tau_ * acc;
  }

  double energy_law(const Vector &x) const {
    const Vector b = x.segment(oB(), sh_.nF);
    const Vector j = x.segment(oJ(), sh_.nE);
    return (energy(*sh_.ops, b) - energy0_) / dt_ + dissipation(b, j);
  }

  double helicity_law(const Vector &x) const {
    return helicity(*sh_.ops, x.segment(oA(), sh_.nE), x.segment(oB(), sh_.nF)) -
           helicity0_;
  }

  Vector residual(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector b = x.segment(oB(), nF);
    const Vector u = x.segment(oU(), nF);
    const Vector a = x.segment(oA(), nE);
    const Vector e = x.segment(oE(), nE);
    const Vector j = x.segment(oJ(), nE);
    const double le = lambda_e(x), lh = lambda_h(x);
    Vector r(size());
    r.segment(oB(), nF) = b - o.curl * a;
    r.segment(oU(), nF) = o.mass_div * u;
    r.segment(oA(), nE) = o.mass_curl * ((a - a0_) / dt_ + e + le * j) +
                          lh * (o.mass_curl_div * b);
    r.segment(oE(), nE) = o.mass_curl * e;
    r.segment(oJ(), nE) = o.mass_curl * j - sh_.curlT_md * b;
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto &ei = sh_.dofs.edges[c];
      const auto &fi = sh_.dofs.faces[c];
      const auto jl = gather(ei, j.data());
      const auto bl = gather(fi, b.data());
      const auto ul = gather(fi, u.data());
      std::array<double, 6> loc_u{};
      std::array<double, 12> loc_e{};
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 bv = to_v3(sh_.tab.face_field(q, bl.data()));
        const V3 uv = to_v3(sh_.tab.face_field(q, ul.data()));
        const double w = sh_.tab.weights[q];
        add_test(loc_u, sh_.tab.face[q], jv.cross(bv), -tau_ * w);
        add_test(loc_e, sh_.tab.edge[q], uv.cross(bv), w);
      }
      scatter(r, oU(), fi, loc_u);
      scatter(r, oE(), ei, loc_e);
    }
    if (mode_ == LmMode::full) r[field_size()] = energy_law(x);
    r[size() - 1] = helicity_law(x);
    return r;
  }

  std::optional<BlockSaddleSystem> saddle(const Vector &x) const override {
    const auto nF = sh_.nF, nE = sh_.nE;
    const auto &o = *sh_.ops;
    const Vector b = x.segment(oB(), nF);
    const Vector u = x.segment(oU(), nF);
    const Vector a = x.segment(oA(), nE);
    const Vector j = x.segment(oJ(), nE);
    const double le = lambda_e(x), lh = lambda_h(x);
    const Eigen::Index n = field_size(), m = multipliers();

    TripletSink t;
    t.identity(oB(), oB(), nF, 1.0);
    t.add(o.curl, oB(), oA(), -1.0);
    t.add(o.mass_div, oU(), oU());
    t.add(o.mass_curl, oA(), oA(), 1.0 / dt_);
    t.add(o.mass_curl, oA(), oE());
    if (le != 0.0) t.add(o.mass_curl, oA(), oJ(), le);
    if (lh != 0.0) t.add(o.mass_curl_div, oA(), oB(), lh);
    t.add(o.mass_curl, oE(), oE());
    t.add(o.mass_curl, oJ(), oJ());
    t.add(sh_.curlT_md, oJ(), oB(), -1.0);

    // Gradient of |B x j|^2 for the energy-law row.
    Vector ds_b = Vector::Zero(nF), ds_j = Vector::Zero(nE);
    for (std::size_t c = 0; c < sh_.dofs.edges.size(); ++c) {
      const auto &ei = sh_.dofs.edges[c];
      const auto &fi = sh_.dofs.faces[c];
      const auto jl = gather(ei, j.data());
      const auto bl = gather(fi, b.data());
      const auto ul = gather(fi, u.data());
      FaceEdge uj = FaceEdge::Zero();
      Face6 ub = Face6::Zero();
      EdgeFace e_u = EdgeFace::Zero(), e_b = EdgeFace::Zero();
      std::array<double, 6> sb{};
      std::array<double, 12> sj{};
      for (std::size_t q = 0; q < sh_.tab.size(); ++q) {
        const V3 jv = to_v3(sh_.tab.edge_field(q, jl.data()));
        const V3 bv = to_v3(sh_.tab.face_field(q, bl.data()));
        const V3 uv = to_v3(sh_.tab.face_field(q, ul.data()));
        const double w = sh_.tab.weights[q];
        const Mat3 sbv = skew(bv);
        add_block(uj, sh_.tab.face[q], sh_.tab.edge[q], -sbv, -tau_ * w);
        add_block(ub, sh_.tab.face[q], sh_.tab.face[q], skew(jv), -tau_ * w);
        add_block(e_u, sh_.tab.edge[q], sh_.tab.face[q], -sbv, w);
        add_block(e_b, sh_.tab.edge[q], sh_.tab.face[q], skew(uv), w);
        if (mode_ == LmMode::full) {
          const V3 cv = bv.cross(jv);
          add_test(sb, sh_.tab.face[q], 2.0 * jv.cross(cv), w);
          add_test(sj, sh_.tab.edge[q], -2.0 * bv.cross(cv), w);
        }
      }
      t.add(uj, fi, oU(), ei, oJ());
      t.add(ub, fi, oU(), fi, oB());
      t.add(e_u, ei, oE(), fi, oU());
      t.add(e_b, ei, oE(), fi, oB());
      if (mode_ == LmMode::full) {
        scatter(ds_b, 0, fi, sb);
        scatter(ds_j, 0, ei, sj);
      }
    }

    BlockSaddleSystem sys;
    sys.field = t.build(n);
    sys.right = Eigen::MatrixXd::Zero(n, m);
    sys.bottom = Eigen::MatrixXd::Zero(m, n);
    const Vector mcd_b = o.mass_curl_div * b;
    const Eigen::Index h = m - 1;  // column/row of lambda_H
    sys.right.col(h).segment(oA(), nE) = mcd_b;
    sys.bottom.row(h).segment(oA(), nE) = mcd_b.transpose();
    sys.bottom.row(h).segment(oB(), nF) =
        (o.mass_curl_div.transpose() * a).transpose();
    if (mode_ == LmMode::full) {
      sys.right.col(0).segment(oA(), nE) = o.mass_curl * j;
      sys.bottom.row(0).segment(oB(), nF) =
          (2.0 / dt_ * (o.mass_div * b) + 2.0 * tau_ * ds_b).transpose();
      sys.bottom.row(0).segment(oJ(), nE) = (2.0 * tau_ * ds_j).transpose();
    }
    return sys;
  }

  SparseMatrix jacobian(const Vector &x) const override {
    return saddle(x)->monolithic();
  }

private:
  const Shared &sh_;
  Vector a0_;
  double energy0_, helicity0_;
  double dt_, tau_;
  LmMode mode_;
};

bool is_finite(const Vector &v) { return v.allFinite(); }

} // namespace

const char *to_string(SchemeKind kind) {
  switch (kind) {
  case SchemeKind::NonConservative: return "nonconservative";
  case SchemeKind::Projection: return "projection";
  case SchemeKind::LagrangeMultiplier: return "lagrange";
  }
  return "?";
}

std::optional<SchemeKind> parse_scheme(std::string_view name) {
  if (name == "nonconservative") return SchemeKind::NonConservative;
  if (name == "projection") return SchemeKind::Projection;
  if (name == "lagrange") return SchemeKind::LagrangeMultiplier;
  return std::nullopt;
}

void TimePhase::validate() const {
  if (!(dt > 0.0)) throw ConfigError("phase: dt must be positive");
  if (!(tau > 0.0)) throw ConfigError("phase: tau must be positive");
  if (n_steps < 1) throw ConfigError("phase: n_steps must be >= 1");
}

void NewtonConfig::validate() const {
  if (!(abs_tol > 0.0)) throw ConfigError("newton_abs_tol must be positive");
  if (!(rel_tol > 0.0)) throw ConfigError("newton_rel_tol must be positive");
  if (max_iter < 1) throw ConfigError("newton_max_iter must be >= 1");
}

NewtonResult newton_solve(const NonlinearSystem &system, Vector x0,
                          const NewtonConfig &cfg, LinearSolverKind solver,
                          const SolverConfig &solver_cfg, bool compare_direct) {
  NewtonResult out;
  out.x = std::move(x0);
  Vector r = system.residual(out.x);
  double rn = r.norm();
  out.initial_residual = rn;
  const double target = std::max(cfg.abs_tol, cfg.rel_tol * rn);
  for (int it = 0;; ++it) {
    if (!std::isfinite(rn))
      throw ConvergenceError("newton: residual became non-finite at iteration " +
                             std::to_string(it));
    if (rn <= target) {
      out.iterations = it;
      out.final_residual = rn;
      return out;
    }
    if (it >= cfg.max_iter) {
      std::ostringstream msg;
      msg << "newton: no convergence after " << cfg.max_iter
          << " iterations (residual " << rn << ", target " << target << ")";
      throw ConvergenceError(msg.str());
    }

    Vector dx;
    if (solver == LinearSolverKind::block_preconditioned) {
      auto sys = system.saddle(out.x);
      if (!sys)
        throw LinearAlgebraError("newton: system has no saddle-point structure");
      const auto res = solve_block_system(*sys, r, solver_cfg);
      dx = res.x;
      out.max_outer_iterations = std::max(out.max_outer_iterations, res.outer_iterations);
      auto &w = out.worst_schur;
      w.iterations = std::max(w.iterations, res.worst_schur.iterations);
      w.relative_residual =
          std::max(w.relative_residual, res.worst_schur.relative_residual);
      w.condition = std::max(w.condition, res.worst_schur.condition);
      if (compare_direct) {
        const Vector ref = solve_direct(sys->monolithic(), r, solver_cfg.direct_residual_bound);
        const double gap = (ref - dx).norm() / std::max(ref.norm(), 1e-300);
        out.block_vs_direct = std::max(out.block_vs_direct.value_or(0.0), gap);
      }
    } else {
      dx = solve_direct(system.jacobian(out.x), r, solver_cfg.direct_residual_bound);
    }

    double step = 1.0;
    Vector trial = out.x - dx;
    Vector rt = system.residual(trial);
    if (cfg.damping) {
      while (!(rt.norm() < rn) && step > 1.0 / 64.0) {
        step *= 0.5;
        trial = out.x - step * dx;
        rt = system.residual(trial);
      }
    }
    out.x = std::move(trial);
    r = std::move(rt);
    rn = r.norm();
  }
}

struct Stepper::Impl {
  Shared shared;
  DiscreteCurl curl;
  CurlProjector projector;
  std::unique_ptr<PotentialRecovery> recovery;

  explicit Impl(const OperatorSet &ops)
      : shared(ops), curl(ops), projector(ops),
        recovery(std::make_unique<PotentialRecovery>(ops)) {}
};

Stepper::Stepper(std::shared_ptr<const OperatorSet> ops, SchemeKind kind,
                 StepperOptions options)
    : ops_(std::move(ops)), kind_(kind), options_(options),
      impl_(std::make_unique<Impl>(*ops_)) {
  options_.newton.validate();
}

Stepper::~Stepper() = default;
Stepper::Stepper(Stepper &&) noexcept = default;

SchemeState Stepper::initial_state(const Vector &b) const {
  const auto nF = impl_->shared.nF, nE = impl_->shared.nE;
  if (b.size() != nF)
    throw PreconditionError("initial_state: B has wrong length");
  SchemeState s;
  s.B = b;
  s.E = Vector::Zero(nE);
  switch (kind_) {
  case SchemeKind::NonConservative:
    s.j = impl_->curl.apply(b);
    break;
  case SchemeKind::Projection:
    s.j = impl_->curl.apply(b);
    s.u = Vector::Zero(nF);
    s.H = impl_->projector.apply(b);
    break;
  case SchemeKind::LagrangeMultiplier:
    s.A = impl_->recovery->recover(b);
    s.B = ops_->curl * s.A;
    s.j = impl_->curl.apply(s.B);
    s.u = Vector::Zero(nF);
    s.helicity_ref = helicity(*ops_, s.A, s.B);
    break;
  }
  return s;
}

LmMode Stepper::select_mode(const SchemeState &state) const {
  if (options_.switch_rule == LmSwitchRule::literal)
    return (!state.last_energy_rate || *state.last_energy_rate < options_.gamma)
               ? LmMode::full
               : LmMode::reduced;
  if (state.last_energy_rate && std::abs(*state.last_energy_rate) < options_.gamma)
    return LmMode::full;
  return LmMode::reduced;
}

std::unique_ptr<NonlinearSystem> Stepper::system(const SchemeState &s, double dt,
                                                 double tau, LmMode mode) const {
  const auto &sh = impl_->shared;
  switch (kind_) {
  case SchemeKind::NonConservative:
    return std::make_unique<NonConservativeSystem>(sh, s.B, dt, tau);
  case SchemeKind::Projection:
    return std::make_unique<ProjectionSystem>(sh, s.B, dt, tau);
  case SchemeKind::LagrangeMultiplier:
    return std::make_unique<LagrangeSystem>(sh, s.A, energy(*ops_, s.B),
                                            helicity(*ops_, s.A, s.B), dt, tau, mode);
  }
  return nullptr;
}

Vector Stepper::pack(const SchemeState &s, LmMode mode) const {
  const auto nF = impl_->shared.nF, nE = impl_->shared.nE;
  Vector x;
  switch (kind_) {
  case SchemeKind::NonConservative:
    x.resize(nF + 2 * nE);
    x << s.B, s.E, s.j;
    break;
  case SchemeKind::Projection:
    x.resize(2 * nF + 3 * nE);
    x << s.B, s.u, s.E, s.j, s.H;
    break;
  case SchemeKind::LagrangeMultiplier:
    if (mode == LmMode::full) {
      x.resize(2 * nF + 3 * nE + 2);
      x << s.B, s.u, s.A, s.E, s.j, s.lambda_E, s.lambda_H;
    } else {
      x.resize(2 * nF + 3 * nE + 1);
      x << s.B, s.u, s.A, s.E, s.j, s.lambda_H;
    }
    break;
  }
  return x;
}

double Stepper::energy_of(const SchemeState &s) const { return energy(*ops_, s.B); }

double Stepper::helicity_of(const SchemeState &s) const {
  if (kind_ == SchemeKind::LagrangeMultiplier) return helicity(*ops_, s.A, s.B);
  return helicity(*ops_, impl_->recovery->recover(s.B), s.B);
}

Vector Stepper::current_of(const SchemeState &s) const {
  return impl_->curl.apply(s.B);
}

StepReport Stepper::step(SchemeState &state, double dt, double tau) const {
  if (!(dt > 0.0) || !(tau > 0.0))
    throw ConfigError("step: dt and tau must be positive");
  if (kind_ == SchemeKind::LagrangeMultiplier) {
    const LmMode mode = select_mode(state);
    if (mode == LmMode::reduced) return step_lm(state, dt, tau, mode);
    try {
      return step_lm(state, dt, tau, LmMode::full);
    } catch (const std::runtime_error &e) {
      // Degenerate multiplier block near a steady state: keep helicity only.
      StepReport rep = step_lm(state, dt, tau, LmMode::reduced);
      rep.fallback = true;
      rep.fallback_reason = e.what();
      return rep;
    }
  }

  const auto nF = impl_->shared.nF, nE = impl_->shared.nE;
  const auto sys = system(state, dt, tau);
  const auto res = newton_solve(*sys, pack(state), options_.newton,
                                LinearSolverKind::direct, options_.solver);
  if (!is_finite(res.x)) throw ConvergenceError("step: non-finite solution");

  SchemeState next = state;
  StepReport rep;
  rep.dt = dt;
  rep.newton_iters = res.iterations;
  rep.residual_norm = res.final_residual;
  const Vector &x = res.x;
  if (kind_ == SchemeKind::NonConservative) {
    next.E = x.segment(nF, nE);
    next.j = x.segment(nF + nE, nE);
  } else {
    next.u = x.segment(nF, nF);
    next.E = x.segment(2 * nF, nE);
    next.j = x.segment(2 * nF + nE, nE);
    next.H = x.segment(2 * nF + 2 * nE, nE);
    rep.eh_inner = next.E.dot(ops_->mass_curl * next.H);
    rep.e_norm = std::sqrt(next.E.dot(ops_->mass_curl * next.E));
    rep.h_norm = std::sqrt(next.H.dot(ops_->mass_curl * next.H));
  }
  // Rebuild B^{n+1} from E so that div B^{n+1} = div B^n to roundoff.
  next.B = state.B - dt * (ops_->curl * next.E);
  const double e_old = energy(*ops_, state.B);
  next.last_energy_rate = (energy(*ops_, next.B) - e_old) / dt;
  next.t = state.t + dt;
  state = std::move(next);
  return rep;
}

StepReport Stepper::step_lm(SchemeState &state, double dt, double tau,
                            LmMode mode) const {
  const auto nF = impl_->shared.nF, nE = impl_->shared.nE;
  auto sys_ptr = system(state, dt, tau, mode);
  const auto &sys = static_cast<const LagrangeSystem &>(*sys_ptr);
  const auto res = newton_solve(sys, pack(state, mode), options_.newton,
                                LinearSolverKind::block_preconditioned,
                                options_.solver, options_.compare_direct);
  if (!is_finite(res.x)) throw ConvergenceError("step: non-finite solution");

  Vector x = res.x;
  // B = curl A holds exactly on the coefficient level.
  x.segment(sys.oB(), nF) = ops_->curl * x.segment(sys.oA(), nE);

  SchemeState next = state;
  StepReport rep;
  rep.dt = dt;
  rep.mode = mode;
  rep.newton_iters = res.iterations;
  rep.residual_norm = res.final_residual;
  rep.max_outer_iterations = res.max_outer_iterations;
  rep.worst_schur = res.worst_schur;
  rep.block_vs_direct = res.block_vs_direct;
  rep.energy_law_residual = sys.energy_law(x);
  rep.helicity_residual = sys.helicity_law(x);

  next.B = x.segment(sys.oB(), nF);
  next.u = x.segment(sys.oU(), nF);
  next.A = x.segment(sys.oA(), nE);
  next.E = x.segment(sys.oE(), nE);
  next.j = x.segment(sys.oJ(), nE);
  next.lambda_E = sys.lambda_e(x);
  next.lambda_H = sys.lambda_h(x);
  next.last_energy_rate = (energy(*ops_, next.B) - energy(*ops_, state.B)) / dt;
  next.t = state.t + dt;
  state = std::move(next);
  return rep;
}

StepReport Stepper::advance(SchemeState &state, double dt, double tau) const {
  std::function<StepReport(SchemeState &, double, int)> attempt =
      [&](SchemeState &s, double h, int depth) -> StepReport {
    try {
      return step(s, h, tau);
    } catch (const std::runtime_error &e) {
      if (depth >= options_.max_retries) {
        std::ostringstream msg;
        msg << "step rejected at t=" << s.t << " with dt=" << h << " after "
            << depth << " retries: " << e.what();
        throw ConvergenceError(msg.str());
      }
    }
    SchemeState trial = s;
    StepReport first = attempt(trial, 0.5 * h, depth + 1);
    StepReport second = attempt(trial, 0.5 * h, depth + 1);
    s = std::move(trial);
    StepReport merged = second;
    merged.dt = h;
    merged.substeps = first.substeps + second.substeps;
    merged.newton_iters = std::max(first.newton_iters, second.newton_iters);
    merged.fallback = first.fallback || second.fallback;
    merged.energy_law_residual =
        std::abs(first.energy_law_residual) > std::abs(second.energy_law_residual)
            ? first.energy_law_residual
            : second.energy_law_residual;
    merged.helicity_residual =
        std::abs(first.helicity_residual) > std::abs(second.helicity_residual)
            ? first.helicity_residual
            : second.helicity_residual;
    merged.max_outer_iterations =
        std::max(first.max_outer_iterations, second.max_outer_iterations);
    if (first.block_vs_direct)
      merged.block_vs_direct =
          std::max(*first.block_vs_direct, second.block_vs_direct.value_or(0.0));
    merged.worst_schur.iterations =
        std::max(first.worst_schur.iterations, second.worst_schur.iterations);
    if (std::abs(first.eh_inner) > std::abs(second.eh_inner)) {
      merged.eh_inner = first.eh_inner;
      merged.e_norm = first.e_norm;
      merged.h_norm = first.h_norm;
    }
    return merged;
  };
  return attempt(state, dt, 0);
}

StepReport step_nonconservative(SchemeState &state, const Stepper &stepper,
                                const TimePhase &phase) {
  if (stepper.kind() != SchemeKind::NonConservative)
    throw ConfigError("step_nonconservative: stepper has a different scheme");
  return stepper.advance(state, phase.dt, phase.tau);
}

StepReport step_projection(SchemeState &state, const Stepper &stepper,
                           const TimePhase &phase) {
  if (stepper.kind() != SchemeKind::Projection)
    throw ConfigError("step_projection: stepper has a different scheme");
  return stepper.advance(state, phase.dt, phase.tau);
}

StepReport step_lagrange(SchemeState &state, const Stepper &stepper,
                         const TimePhase &phase) {
  if (stepper.kind() != SchemeKind::LagrangeMultiplier)
    throw ConfigError("step_lagrange: stepper has a different scheme");
  return stepper.advance(state, phase.dt, phase.tau);
}

} // namespace mfrelax
