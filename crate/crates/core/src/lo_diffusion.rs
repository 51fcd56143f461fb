//! Low-order SMM diffusion systems: P1, LDG and interior penalty, each with
//! consistent or independent correction sources and half- or full-range
//! boundary conditions.
//!
//! Unknowns are ordered `x = [J; φ]` with the current stored per element as
//! `J_x` (4 nodes) then `J_y` (4 nodes), so the system reads
//!
//! ```text
//! [ M_J  G   ] [J]   [b_J]
//! [ D    M_φ ] [φ] = [b_φ]
//! ```
//!
//! where the first block row is the first-moment equation (tested with
//! vector `v`) and the second the zeroth-moment equation (tested with `u`).
//! Every discretization here satisfies `G = −Dᵀ/3`.

use std::fmt;

use crate::closures::{ClosureState, SideMoments};
use crate::dg_space::{face_mass, face_rule, DgScalarField, DgVectorField, FACE_POINTS, NODES};
use crate::error::{Error, Result};
use crate::linalg::{block_diag_invert, cg_solve, Block8, EnvelopeLu, Preconditioner, PreconditionerKind, SparseMatrix, TripletBuilder};
use crate::mesh::BoundaryTag;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoMethod {
    P1,
    Ldg,
    Ip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Consistent,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Half,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IpMode {
    /// `κ = max(κ_IP, α/2)`
    Mip,
    /// `κ = κ_IP`
    Plain,
}

impl fmt::Display for LoMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoMethod::P1 => "p1",
            LoMethod::Ldg => "ldg",
            LoMethod::Ip => "ip",
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Consistent => "consistent",
            Variant::Independent => "independent",
        })
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::Half => "half",
            BoundaryMode::Full => "full",
        })
    }
}

impl fmt::Display for IpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IpMode::Mip => "mip",
            IpMode::Plain => "plain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LoConfig {
    pub method: LoMethod,
    pub variant: Variant,
    pub bc: BoundaryMode,
    /// LDG switch direction `w`; `s = sign(w·n)` with ties resolved to `+1`.
    pub ldg_w: [f64; 2],
    /// LDG jump penalty; `None` selects `α/2`.
    pub ldg_kappa: Option<f64>,
    /// Interior penalty constant `C` in `κ_IP = C / (3 σ_t h)`.
    pub ip_c: f64,
    pub ip_mode: IpMode,
    pub preconditioner: PreconditionerKind,
    /// Relative residual tolerance of the Schur-complement CG solve.
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl Default for LoConfig {
    fn default() -> Self {
        Self {
            method: LoMethod::Ldg,
            variant: Variant::Consistent,
            bc: BoundaryMode::Half,
            ldg_w: [1.0, 1.0],
            ldg_kappa: None,
            ip_c: 4.0,
            ip_mode: IpMode::Mip,
            preconditioner: PreconditionerKind::Jacobi,
            inner_tol: 1e-8,
            max_inner: 100_000,
        }
    }
}

impl LoConfig {
    pub fn new(method: LoMethod, variant: Variant, bc: BoundaryMode) -> Self {
        Self { method, variant, bc, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == LoMethod::P1 && (self.variant != Variant::Consistent || self.bc != BoundaryMode::Half) {
            return Err(Error::Config("P1 supports only the consistent variant with half-range boundary conditions".into()));
        }
        if self.variant == Variant::Independent && self.bc == BoundaryMode::Half {
            return Err(Error::Config("independent variants use full-range boundary conditions (--bc full)".into()));
        }
        if self.ldg_w == [0.0, 0.0] {
            return Err(Error::Config("LDG switch vector w must be nonzero".into()));
        }
        if !(self.ip_c > 0.0) {
            return Err(Error::Config(format!("IP penalty constant must be positive, got {}", self.ip_c)));
        }
        if let Some(k) = self.ldg_kappa {
            if !(k >= 0.0) {
                return Err(Error::Config(format!("LDG penalty must be non-negative, got {k}")));
            }
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::Config("inner tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Short label such as `ldg-consistent-half`.
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}-{}", self.method, self.variant, self.bc);
        if self.method == LoMethod::Ip && self.ip_mode == IpMode::Plain {
            s.push_str("-plain");
        }
        s
    }

    /// `s = sign(w·n)`, `+1` on ties.
    pub fn ldg_switch(&self, n: [f64; 2]) -> f64 {
        if self.ldg_w[0] * n[0] + self.ldg_w[1] * n[1] < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Interior penalty coefficient on a face with adjacent total cross
/// sections `s1`, `s2` and face-normal element extents `h1`, `h2`.
pub fn ip_kappa(c: f64, mode: IpMode, alpha: f64, s1: f64, s2: f64, h1: f64, h2: f64) -> f64 {
    let sigma = if s1 + s2 > 0.0 { 2.0 * s1 * s2 / (s1 + s2) } else { 0.0 };
    let h = h1.min(h2);
    let k_ip = if sigma > 0.0 { c / (3.0 * sigma * h) } else { f64::INFINITY };
    match mode {
        IpMode::Mip => k_ip.max(alpha / 2.0),
        IpMode::Plain => k_ip,
    }
}

/// Jump penalty `κ` on interior face `f` for the configured method.
pub fn face_kappa(spec: &ProblemSpec, cfg: &LoConfig, f: usize) -> f64 {
    let face = &spec.mesh.interior_faces[f];
    let alpha = spec.quadrature.alpha(face.normal);
    match cfg.method {
        LoMethod::P1 => alpha / 2.0,
        LoMethod::Ldg => cfg.ldg_kappa.unwrap_or(alpha / 2.0),
        LoMethod::Ip => {
            let (e1, e2) = (&spec.mesh.elements[face.elem1], &spec.mesh.elements[face.elem2]);
            ip_kappa(
                cfg.ip_c,
                cfg.ip_mode,
                alpha,
                spec.material(face.elem1).sigma_t,
                spec.material(face.elem2).sigma_t,
                e1.normal_extent(face.face1),
                e2.normal_extent(face.face2),
            )
        }
    }
}

#[inline]
fn jdof(e: usize, k: usize, a: usize) -> usize {
    8 * e + 4 * k + a
}

#[inline]
fn pdof(e: usize, a: usize) -> usize {
    NODES * e + a
}

/// The assembled LO operator and right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub method: LoMethod,
    pub m_j: SparseMatrix,
    pub g: SparseMatrix,
    pub d: SparseMatrix,
    pub m_phi: SparseMatrix,
    pub rhs_j: Vec<f64>,
    pub rhs_phi: Vec<f64>,
    /// True when `M_J` is block diagonal by element.
    pub current_local: bool,
}

impl BlockSystem {
    pub fn num_elements(&self) -> usize {
        self.m_phi.nrows / NODES
    }

    /// The whole `[[M_J, G], [D, M_φ]]` matrix.
    pub fn full_matrix(&self) -> SparseMatrix {
        let nj = self.m_j.nrows;
        let n = nj + self.m_phi.nrows;
        let mut b = TripletBuilder::with_capacity(n, n, self.m_j.nnz() + self.g.nnz() + self.d.nnz() + self.m_phi.nnz());
        let mut put = |m: &SparseMatrix, r0: usize, c0: usize| {
            for r in 0..m.nrows {
                let (cols, vals) = m.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    b.add(r0 + r, c0 + c, v);
                }
            }
        };
        put(&self.m_j, 0, 0);
        put(&self.g, 0, nj);
        put(&self.d, nj, 0);
        put(&self.m_phi, nj, nj);
        b.build()
    }

    pub fn full_rhs(&self) -> Vec<f64> {
        let mut r = self.rhs_j.clone();
        r.extend_from_slice(&self.rhs_phi);
        r
    }

    /// Residual `b − A x` split into its first- and zeroth-moment parts.
    pub fn residual(&self, j: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mj = self.m_j.mul(j);
        let g = self.g.mul(phi);
        let d = self.d.mul(j);
        let mp = self.m_phi.mul(phi);
        let rj = (0..j.len()).map(|i| self.rhs_j[i] - mj[i] - g[i]).collect();
        let rp = (0..phi.len()).map(|i| self.rhs_phi[i] - d[i] - mp[i]).collect();
        (rj, rp)
    }
}

/// Packs a vector field into the LO current ordering.
pub fn current_to_vec(j: &DgVectorField) -> Vec<f64> {
    let ne = j.x.num_elements();
    let mut out = vec![0.0; 8 * ne];
    for e in 0..ne {
        for a in 0..NODES {
            out[jdof(e, 0, a)] = j.x.coeffs[pdof(e, a)];
            out[jdof(e, 1, a)] = j.y.coeffs[pdof(e, a)];
        }
    }
    out
}

pub fn vec_to_current(v: &[f64]) -> DgVectorField {
    let ne = v.len() / 8;
    let mut j = DgVectorField::zeros(ne);
    for e in 0..ne {
        for a in 0..NODES {
            j.x.coeffs[pdof(e, a)] = v[jdof(e, 0, a)];
            j.y.coeffs[pdof(e, a)] = v[jdof(e, 1, a)];
        }
    }
    j
}

/// One side of an interior face: element, its two face nodes, jump sign.
#[derive(Clone, Copy)]
struct Side {
    elem: usize,
    nodes: [usize; 2],
    sign: f64,
}

fn interior_sides(spec: &ProblemSpec, f: usize) -> [Side; 2] {
    let face = &spec.mesh.interior_faces[f];
    [
        Side { elem: face.elem1, nodes: face.face1.nodes(), sign: 1.0 },
        Side { elem: face.elem2, nodes: face.face2.nodes(), sign: -1.0 },
    ]
}

/// Assembles the left-hand side only (right-hand sides zero).
pub fn assemble_operator(spec: &ProblemSpec, cfg: &LoConfig) -> Result<BlockSystem> {
    cfg.validate()?;
    let mesh = &spec.mesh;
    let ne = spec.num_elements();
    let (nj, np) = (8 * ne, NODES * ne);
    let mut m_j = TripletBuilder::with_capacity(nj, nj, 40 * ne);
    let mut g = TripletBuilder::with_capacity(nj, np, 60 * ne);
    let mut d = TripletBuilder::with_capacity(np, nj, 60 * ne);
    let mut m_phi = TripletBuilder::with_capacity(np, np, 40 * ne);

    for e in 0..ne {
        let em = spec.element_matrices(e);
        let mat = spec.material(e);
        for a in 0..NODES {
            for b in 0..NODES {
                m_phi.add(pdof(e, a), pdof(e, b), mat.sigma_a() * em.mass[a][b]);
                for k in 0..2 {
                    let dk = if k == 0 { em.dx[a][b] } else { em.dy[a][b] };
                    m_j.add(jdof(e, k, a), jdof(e, k, b), mat.sigma_t * em.mass[a][b]);
                    // −∫ ∇u · J
                    d.add(pdof(e, a), jdof(e, k, b), -dk);
                    // −(1/3) ∫ (∇·v) φ
                    g.add(jdof(e, k, a), pdof(e, b), -dk / 3.0);
                }
            }
        }
    }

    for (f, face) in mesh.interior_faces.iter().enumerate() {
        let n = face.normal;
        let fm = face_mass(face.length);
        let alpha = spec.quadrature.alpha(n);
        let kappa = face_kappa(spec, cfg, f);
        let s = cfg.ldg_switch(n);
        let sides = interior_sides(spec, f);
        for su in &sides {
            for sr in &sides {
                for (ia, &a) in su.nodes.iter().enumerate() {
                    for (ib, &b) in sr.nodes.iter().enumerate() {
                        let m = fm[ia][ib];
                        let jj = su.sign * sr.sign * m;
                        let ja = su.sign * 0.5 * m;
                        // κ ∫ [[u]] [[φ]]
                        m_phi.add(pdof(su.elem, a), pdof(sr.elem, b), kappa * jj);
                        for k in 0..2 {
                            // ∫ [[u]] {J·n}
                            d.add(pdof(su.elem, a), jdof(sr.elem, k, b), n[k] * ja);
                            // (1/3) ∫ [[v·n]] {φ}
                            g.add(jdof(su.elem, k, a), pdof(sr.elem, b), n[k] * ja / 3.0);
                            if cfg.method == LoMethod::Ldg {
                                // (s/2) ∫ [[u]] [[J·n]]
                                d.add(pdof(su.elem, a), jdof(sr.elem, k, b), 0.5 * s * n[k] * jj);
                                // −(s/6) ∫ [[v·n]] [[φ]]
                                g.add(jdof(su.elem, k, a), pdof(sr.elem, b), -s / 6.0 * n[k] * jj);
                            }
                            if cfg.method == LoMethod::P1 {
                                // (1/(6α)) ∫ [[v·n]] [[J·n]]
                                for l in 0..2 {
                                    m_j.add(jdof(su.elem, k, a), jdof(sr.elem, l, b), n[k] * n[l] * jj / (6.0 * alpha));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    for face in &mesh.boundary_faces {
        let n = face.normal;
        let fm = face_mass(face.length);
        let alpha = spec.quadrature.alpha(n);
        let e = face.elem;
        let nodes = face.face.nodes();
        let reflecting = face.tag == BoundaryTag::Reflecting;
        for (ia, &a) in nodes.iter().enumerate() {
            for (ib, &b) in nodes.iter().enumerate() {
                let m = fm[ia][ib];
                if reflecting {
                    for k in 0..2 {
                        g.add(jdof(e, k, a), pdof(e, b), n[k] * m / 3.0);
                    }
                    continue;
                }
                match cfg.bc {
                    BoundaryMode::Half => {
                        m_phi.add(pdof(e, a), pdof(e, b), 0.5 * alpha * m);
                        for k in 0..2 {
                            d.add(pdof(e, a), jdof(e, k, b), 0.5 * n[k] * m);
                            g.add(jdof(e, k, a), pdof(e, b), n[k] * m / 6.0);
                            for l in 0..2 {
                                m_j.add(jdof(e, k, a), jdof(e, l, b), n[k] * n[l] * m / (6.0 * alpha));
                            }
                        }
                    }
                    BoundaryMode::Full => {
                        m_phi.add(pdof(e, a), pdof(e, b), alpha * m);
                        for k in 0..2 {
                            g.add(jdof(e, k, a), pdof(e, b), n[k] * m / 3.0);
                        }
                    }
                }
            }
        }
    }

    Ok(BlockSystem {
        method: cfg.method,
        m_j: m_j.build(),
        g: g.build(),
        d: d.build(),
        m_phi: m_phi.build(),
        rhs_j: vec![0.0; nj],
        rhs_phi: vec![0.0; np],
        current_local: cfg.method != LoMethod::P1,
    })
}

/// Adds `Σ_q w_q L l_a(t_q) g_q` to `out[idx(a)]` for the two face nodes.
fn add_face_load(out: &mut [f64], nodes: [usize; 2], idx: impl Fn(usize) -> usize, length: f64, g: [f64; FACE_POINTS]) {
    let (tq, wq) = face_rule();
    for q in 0..FACE_POINTS {
        let l = [1.0 - tq[q], tq[q]];
        for (ia, &a) in nodes.iter().enumerate() {
            out[idx(a)] += wq[q] * length * l[ia] * g[q];
        }
    }
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Right-hand sides `(b_J, b_φ)` for the given closures.
pub fn assemble_rhs(spec: &ProblemSpec, cfg: &LoConfig, state: &ClosureState) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let mesh = &spec.mesh;
    let ne = spec.num_elements();
    let (q0, q1) = spec.source_moment_loads();
    let mut bp = q0;
    let mut bj = vec![0.0; 8 * ne];
    for e in 0..ne {
        for k in 0..2 {
            for a in 0..NODES {
                bj[jdof(e, k, a)] = q1[k][pdof(e, a)];
            }
        }
    }
    let consistent = cfg.variant == Variant::Consistent;

    // Volume model correction: +∫ ∇v : T.
    for e in 0..ne {
        let em = spec.element_matrices(e);
        let txx = state.t.xx.element(e);
        let txy = state.t.xy.element(e);
        let tyy = state.t.yy.element(e);
        for a in 0..NODES {
            let mut vx = 0.0;
            let mut vy = 0.0;
            for b in 0..NODES {
                vx += em.dx[a][b] * txx[b] + em.dy[a][b] * txy[b];
                vy += em.dx[a][b] * txy[b] + em.dy[a][b] * tyy[b];
            }
            bj[jdof(e, 0, a)] += vx;
            bj[jdof(e, 1, a)] += vy;
        }
    }

    for (f, face) in mesh.interior_faces.iter().enumerate() {
        let n = face.normal;
        let cl = &state.interior[f];
        let alpha = cl.alpha;
        let kappa = face_kappa(spec, cfg, f);
        let s = cfg.ldg_switch(n);
        let sides = interior_sides(spec, f);
        let pts = |g: &dyn Fn(&SideMoments, &SideMoments) -> f64| -> [f64; FACE_POINTS] {
            let mut out = [0.0; FACE_POINTS];
            for q in 0..FACE_POINTS {
                out[q] = g(&cl.sides[q][0], &cl.sides[q][1]);
            }
            out
        };

        // Zeroth moment, integrand multiplying [[u]].
        let zeroth = pts(&|s1, s2| {
            if !consistent {
                return 0.0;
            }
            let mut v = -0.5 * (s1.beta - s2.beta) + (kappa - 0.5 * alpha) * (s1.phi - s2.phi);
            if cfg.method == LoMethod::Ldg {
                v += 0.5 * s * (s1.jn - s2.jn);
            }
            v
        });
        // First moment, vector integrand multiplying [[v]].
        let first: [[f64; FACE_POINTS]; 2] = [0, 1].map(|k| {
            pts(&|s1, s2| {
                let mut v = -0.5 * (s1.tn[k] + s2.tn[k]);
                if consistent {
                    let jump = sub2(sub2(s1.p_plus, s1.p_minus), sub2(s2.p_plus, s2.p_minus))[k];
                    let mut extra = 0.0;
                    match cfg.method {
                        LoMethod::P1 => extra = -n[k] / (3.0 * alpha) * (s1.jn - s2.jn),
                        LoMethod::Ldg => extra = n[k] * s / 3.0 * (s1.phi - s2.phi),
                        LoMethod::Ip => {}
                    }
                    v -= 0.5 * (jump + extra);
                }
                v
            })
        });
        for side in &sides {
            let e = side.elem;
            let sg = side.sign;
            add_face_load(&mut bp, side.nodes, |a| pdof(e, a), face.length, zeroth.map(|v| sg * v));
            for k in 0..2 {
                add_face_load(&mut bj, side.nodes, |a| jdof(e, k, a), face.length, first[k].map(|v| sg * v));
            }
        }
    }

    for (f, face) in mesh.boundary_faces.iter().enumerate() {
        let n = face.normal;
        let cl = &state.boundary[f];
        let alpha = cl.alpha;
        let e = face.elem;
        let nodes = face.face.nodes();
        let mut zeroth = [0.0; FACE_POINTS];
        let mut first = [[0.0; FACE_POINTS]; 2];
        for q in 0..FACE_POINTS {
            let sm = &cl.inner[q];
            let (j_in, p_in) = (cl.j_in[q], cl.p_in[q]);
            if face.tag == BoundaryTag::Reflecting {
                zeroth[q] = -(sm.j_plus + j_in);
                for k in 0..2 {
                    first[k][q] = -(sm.p_plus[k] + p_in[k] - n[k] / 3.0 * sm.phi);
                }
                continue;
            }
            match (cfg.variant, cfg.bc) {
                (Variant::Consistent, BoundaryMode::Half) => {
                    zeroth[q] = -j_in - 0.5 * sm.beta;
                    for k in 0..2 {
                        first[k][q] =
                            -p_in[k] - (sm.p_plus[k] - n[k] / (6.0 * alpha) * sm.jn - n[k] / 6.0 * sm.phi);
                    }
                }
                (Variant::Consistent, BoundaryMode::Full) => {
                    zeroth[q] = -2.0 * j_in - (sm.j_plus - alpha * sm.phi - j_in);
                    for k in 0..2 {
                        first[k][q] = -p_in[k] - (sm.p_plus[k] - n[k] / 3.0 * sm.phi);
                    }
                }
                (Variant::Independent, _) => {
                    zeroth[q] = -2.0 * j_in - sm.beta;
                    for k in 0..2 {
                        first[k][q] = -sm.tn[k];
                    }
                }
            }
        }
        add_face_load(&mut bp, nodes, |a| pdof(e, a), face.length, zeroth);
        for k in 0..2 {
            add_face_load(&mut bj, nodes, |a| jdof(e, k, a), face.length, first[k]);
        }
    }
    Ok((bj, bp))
}

/// Operator and right-hand side for the given closures.
pub fn assemble(spec: &ProblemSpec, cfg: &LoConfig, state: &ClosureState) -> Result<BlockSystem> {
    let mut sys = assemble_operator(spec, cfg)?;
    let (bj, bp) = assemble_rhs(spec, cfg, state)?;
    sys.rhs_j = bj;
    sys.rhs_phi = bp;
    Ok(sys)
}

/// Multiplies the first-moment equations by −3, which makes the P1 system
/// symmetric without changing its solution.
pub fn symmetrize_p1(sys: &BlockSystem) -> Result<BlockSystem> {
    if sys.method != LoMethod::P1 {
        return Err(Error::Config(format!("symmetrization applies to the P1 system, not {}", sys.method)));
    }
    let mut out = sys.clone();
    let s = vec![-3.0; out.m_j.nrows];
    out.m_j.scale_rows(&s);
    out.g.scale_rows(&s);
    for v in &mut out.rhs_j {
        *v *= -3.0;
    }
    Ok(out)
}

/// Element-local elimination of the current:
/// `S_φ = M_φ − D M_J⁻¹ G = M_φ + (1/3) D M_J⁻¹ Dᵀ`.
#[derive(Debug, Clone)]
pub struct SchurReduction {
    pub s: SparseMatrix,
    pub m_j_inv: Vec<Block8>,
    d: SparseMatrix,
    g: SparseMatrix,
}

pub fn schur_reduce(sys: &BlockSystem) -> Result<SchurReduction> {
    if !sys.current_local {
        return Err(Error::Config(format!(
            "{} couples the current across faces; solve the full block system instead",
            sys.method
        )));
    }
    let ne = sys.num_elements();
    let mut blocks = vec![Block8::zeros(); ne];
    for r in 0..sys.m_j.nrows {
        let (cols, vals) = sys.m_j.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            if r / 8 != c / 8 {
                return Err(Error::Config("current mass matrix is not block diagonal".into()));
            }
            blocks[r / 8][(r % 8, c % 8)] = v;
        }
    }
    let m_j_inv = block_diag_invert(&blocks)?;

    let dt = sys.d.transpose();
    let np = sys.m_phi.nrows;
    let mut s = TripletBuilder::with_capacity(np, np, sys.m_phi.nnz() * 4);
    for r in 0..np {
        let (cols, vals) = sys.m_phi.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            s.add(r, c, v);
        }
    }
    for e in 0..ne {
        // D[:, J_e] as (row, 8-vector) and G[J_e, :] as (col, 8-vector).
        let mut d_rows: Vec<(usize, [f64; 8])> = Vec::new();
        let mut g_cols: Vec<(usize, [f64; 8])> = Vec::new();
        for k in 0..8 {
            let (cols, vals) = dt.row(8 * e + k);
            for (&r, &v) in cols.iter().zip(vals) {
                match d_rows.iter_mut().find(|(rr, _)| *rr == r) {
                    Some((_, arr)) => arr[k] = v,
                    None => {
                        let mut arr = [0.0; 8];
                        arr[k] = v;
                        d_rows.push((r, arr));
                    }
                }
            }
            let (cols, vals) = sys.g.row(8 * e + k);
            for (&c, &v) in cols.iter().zip(vals) {
                match g_cols.iter_mut().find(|(cc, _)| *cc == c) {
                    Some((_, arr)) => arr[k] = v,
                    None => {
                        let mut arr = [0.0; 8];
                        arr[k] = v;
                        g_cols.push((c, arr));
                    }
                }
            }
        }
        let inv = &m_j_inv[e];
        // W = M_J⁻¹ G[J_e, c] for every column c.
        let w: Vec<(usize, [f64; 8])> = g_cols
            .iter()
            .map(|(c, gv)| {
                let mut out = [0.0; 8];
                for i in 0..8 {
                    out[i] = (0..8).map(|j| inv[(i, j)] * gv[j]).sum();
                }
                (*c, out)
            })
            .collect();
        for (r, dv) in &d_rows {
            for (c, wv) in &w {
                let v: f64 = (0..8).map(|i| dv[i] * wv[i]).sum();
                s.add(*r, *c, -v);
            }
        }
    }
    Ok(SchurReduction { s: s.build(), m_j_inv, d: sys.d.clone(), g: sys.g.clone() })
}

impl SchurReduction {
    /// Reduced right-hand side `b_φ − D M_J⁻¹ b_J`.
    pub fn reduce_rhs(&self, rhs_j: &[f64], rhs_phi: &[f64]) -> Vec<f64> {
        let y = self.apply_inverse(rhs_j);
        let dy = self.d.mul(&y);
        rhs_phi.iter().zip(&dy).map(|(b, d)| b - d).collect()
    }

    fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (e, inv) in self.m_j_inv.iter().enumerate() {
            for i in 0..8 {
                out[8 * e + i] = (0..8).map(|j| inv[(i, j)] * v[8 * e + j]).sum();
            }
        }
        out
    }

    /// `J = M_J⁻¹ (b_J − G φ)` as a flat vector.
    pub fn back_substitute_vec(&self, rhs_j: &[f64], phi: &[f64]) -> Vec<f64> {
        let gp = self.g.mul(phi);
        let r: Vec<f64> = rhs_j.iter().zip(&gp).map(|(b, g)| b - g).collect();
        self.apply_inverse(&r)
    }
}

/// Element-local recovery of the current from a solved scalar flux.
pub fn back_substitute(elim: &SchurReduction, rhs_j: &[f64], phi: &DgScalarField) -> DgVectorField {
    vec_to_current(&elim.back_substitute_vec(rhs_j, &phi.coeffs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoSolution {
    pub phi: DgScalarField,
    pub current: DgVectorField,
    pub inner_iterations: usize,
}

enum Backend {
    Direct { lu: EnvelopeLu, row_scale: f64 },
    Schur { red: SchurReduction, precond: Box<dyn Preconditioner> },
}

/// Factorized or reduced LO operator, reused across outer iterations (the
/// left-hand side depends only on the problem and configuration).
pub struct LoSolver {
    pub cfg: LoConfig,
    pub operator: BlockSystem,
    backend: Backend,
    warm_start: Option<Vec<f64>>,
}

impl fmt::Debug for LoSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoSolver").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl LoSolver {
    pub fn new(spec: &ProblemSpec, cfg: &LoConfig) -> Result<Self> {
        let operator = assemble_operator(spec, cfg)?;
        let backend = if operator.current_local {
            let red = schur_reduce(&operator)?;
            let precond = cfg.preconditioner.build(&red.s)?;
            Backend::Schur { red, precond }
        } else {
            // Scaling the first-moment rows by 3 turns −Dᵀ/3 into −Dᵀ, so the
            // symmetric part is block diagonal and positive definite, which
            // keeps LU without pivoting well defined.
            let row_scale = 3.0;
            let mut scaled = operator.clone();
            let s = vec![row_scale; scaled.m_j.nrows];
            scaled.m_j.scale_rows(&s);
            scaled.g.scale_rows(&s);
            let lu = EnvelopeLu::factor(&scaled.full_matrix())?;
            Backend::Direct { lu, row_scale }
        };
        Ok(Self { cfg: cfg.clone(), operator, backend, warm_start: None })
    }

    /// Solves with the right-hand side built from `state`.
    pub fn solve(&mut self, spec: &ProblemSpec, state: &ClosureState) -> Result<LoSolution> {
        let (bj, bp) = assemble_rhs(spec, &self.cfg, state)?;
        self.solve_rhs(&bj, &bp)
    }

    /// `b − A x` for the stored operator and an external right-hand side.
    pub fn operator_residual(&self, rhs_j: &[f64], rhs_phi: &[f64], j: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let op = &self.operator;
        let mj = op.m_j.mul(j);
        let g = op.g.mul(phi);
        let d = op.d.mul(j);
        let mp = op.m_phi.mul(phi);
        let rj = (0..j.len()).map(|i| rhs_j[i] - mj[i] - g[i]).collect();
        let rp = (0..phi.len()).map(|i| rhs_phi[i] - d[i] - mp[i]).collect();
        (rj, rp)
    }

    pub fn solve_rhs(&mut self, rhs_j: &[f64], rhs_phi: &[f64]) -> Result<LoSolution> {
        let nj = rhs_j.len();
        match &self.backend {
            Backend::Direct { lu, row_scale } => {
                let mut b: Vec<f64> = rhs_j.iter().map(|v| v * row_scale).collect();
                b.extend_from_slice(rhs_phi);
                let x = lu.solve(&b);
                Ok(LoSolution {
                    phi: DgScalarField::from_coeffs(x[nj..].to_vec()),
                    current: vec_to_current(&x[..nj]),
                    inner_iterations: 0,
                })
            }
            Backend::Schur { red, precond } => {
                let rhs = red.reduce_rhs(rhs_j, rhs_phi);
                let out = cg_solve(
                    &red.s,
                    &rhs,
                    precond.as_ref(),
                    self.cfg.inner_tol,
                    self.warm_start.as_deref(),
                    self.cfg.max_inner,
                )?;
                let j = red.back_substitute_vec(rhs_j, &out.x);
                self.warm_start = Some(out.x.clone());
                Ok(LoSolution {
                    phi: DgScalarField::from_coeffs(out.x),
                    current: vec_to_current(&j),
                    inner_iterations: out.iterations,
                })
            }
        }
    }
}

/// Zeroth and first angular moments of a per-direction residual, laid out
/// like the LO unknowns: `(first-moment part, zeroth-moment part)`.
pub fn residual_moments(spec: &ProblemSpec, r: &crate::transport::AngularFlux) -> (Vec<f64>, Vec<f64>) {
    let ne = spec.num_elements();
    let mut rj = vec![0.0; 8 * ne];
    let mut rp = vec![0.0; NODES * ne];
    for d in 0..spec.quadrature.len() {
        let w = spec.quadrature.weights[d];
        let om = spec.quadrature.omega(d);
        for e in 0..ne {
            for a in 0..NODES {
                let v = r.psi[d].coeffs[pdof(e, a)];
                rp[pdof(e, a)] += w * v;
                rj[jdof(e, 0, a)] += w * om[0] * v;
                rj[jdof(e, 1, a)] += w * om[1] * v;
            }
        }
    }
    (rj, rp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular_quad::SnQuadrature;
    use crate::closures::compute_closures;
    use crate::mesh::{BoundingBox, Mesh, RegionMap, SideTags};
    use crate::problem::{AngularFn, Material};
    use crate::transport::{residual, AngularFlux};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn spec(nx: usize, ny: usize, tags: SideTags, inflow: bool) -> ProblemSpec {
        let mesh = Mesh::build_cartesian(nx, ny, BoundingBox::new(0.0, 0.0, 1.0, 0.8), RegionMap::default(), tags).unwrap();
        let g: Option<AngularFn> =
            if inflow { Some(Arc::new(|x, y, o| 1.0 + 0.3 * x - 0.2 * y + 0.1 * o[0])) } else { None };
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(4).unwrap(), vec![Material::new(1.5, 1.2, 0.4)], None, g)
            .unwrap()
    }

    fn all_consistent() -> Vec<LoConfig> {
        let mut out = vec![LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Half)];
        for m in [LoMethod::Ldg, LoMethod::Ip] {
            for bc in [BoundaryMode::Half, BoundaryMode::Full] {
                out.push(LoConfig::new(m, Variant::Consistent, bc));
            }
        }
        let mut plain = LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Full);
        plain.ip_mode = IpMode::Plain;
        out.push(plain);
        out
    }

    fn random_flux(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> AngularFlux {
        let mut psi = AngularFlux::zeros(spec.quadrature.len(), spec.num_elements());
        for f in &mut psi.psi {
            for v in &mut f.coeffs {
                *v = rng.gen_range(0.0..2.0);
            }
        }
        psi
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn check_cancellation(p: &ProblemSpec, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_flux(p, &mut rng);
        let st = compute_closures(p, &psi);
        let r = residual(p, &psi, &st.phi);
        let (mj, mp) = residual_moments(p, &r);
        for cfg in all_consistent() {
            let sys = assemble(p, &cfg, &st).unwrap();
            let (rj, rp) = sys.residual(&current_to_vec(&st.current), &st.phi.coeffs);
            // b − A x_HO must equal −(moments of the HO residual).
            let scale = max_abs(&sys.rhs_phi).max(max_abs(&sys.rhs_j)).max(1.0);
            let ej = rj.iter().zip(&mj).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            let ep = rp.iter().zip(&mp).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(ej <= 1e-12 * scale && ep <= 1e-12 * scale, "{}: {ej:e} {ep:e}", cfg.label());
        }
    }

    #[test]
    fn consistency_cancellation_inflow() {
        check_cancellation(&spec(3, 2, SideTags::default(), true), 1);
    }

    #[test]
    fn consistency_cancellation_reflecting() {
        let tags = SideTags { bottom: BoundaryTag::Reflecting, ..SideTags::default() };
        check_cancellation(&spec(2, 3, tags, true), 2);
    }

    #[test]
    fn gradient_block_is_scaled_divergence_transpose() {
        let tags = SideTags { bottom: BoundaryTag::Reflecting, ..SideTags::default() };
        let p = spec(3, 3, tags, false);
        for cfg in all_consistent() {
            let sys = assemble_operator(&p, &cfg).unwrap();
            let dt = sys.d.transpose();
            for r in 0..sys.g.nrows {
                for c in 0..sys.g.ncols {
                    let diff = (sys.g.get(r, c) + dt.get(r, c) / 3.0).abs();
                    assert!(diff < 1e-14, "{} ({r},{c})", cfg.label());
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LoConfig::new(LoMethod::P1, Variant::Independent, BoundaryMode::Half).validate().is_err());
        assert!(LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Full).validate().is_err());
        assert!(LoConfig::new(LoMethod::Ldg, Variant::Independent, BoundaryMode::Half).validate().is_err());
        assert!(LoConfig::new(LoMethod::Ip, Variant::Independent, BoundaryMode::Full).validate().is_ok());
        let c = LoConfig { ip_c: 0.0, ..LoConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ldg_switch_signs() {
        let c = LoConfig::default();
        assert_eq!(c.ldg_switch([1.0, 0.0]), 1.0);
        assert_eq!(c.ldg_switch([0.0, 1.0]), 1.0);
        assert_eq!(c.ldg_switch([-1.0, 0.0]), -1.0);
        let tie = LoConfig { ldg_w: [1.0, 0.0], ..LoConfig::default() };
        assert_eq!(tie.ldg_switch([0.0, 1.0]), 1.0);
    }

    #[test]
    fn mip_never_below_half_alpha() {
        for (s, h) in [(1e-3, 0.01), (1.0, 0.1), (1e4, 0.125), (200.0, 1.0 / 32.0)] {
            let k = ip_kappa(4.0, IpMode::Mip, 0.5, s, s, h, h);
            assert!(k >= 0.25);
        }
        // Thick and under-resolved: κ_MIP collapses to α/2.
        assert_eq!(ip_kappa(4.0, IpMode::Mip, 0.5, 1e4, 1e4, 0.125, 0.125), 0.25);
        let plain = ip_kappa(4.0, IpMode::Plain, 0.5, 1e4, 1e4, 0.125, 0.125);
        assert!((plain - 4.0 / (3.0 * 1e4 * 0.125)).abs() < 1e-15);
        // Harmonic mean across a material interface.
        let k = ip_kappa(3.0, IpMode::Plain, 0.5, 1.0, 3.0, 1.0, 1.0);
        assert!((k - 1.0 / 1.5).abs() < 1e-14);
    }

    #[test]
    fn isotropic_flux_variants_agree_away_from_boundary() {
        let p = spec(4, 4, SideTags::default(), false);
        let mut psi = AngularFlux::zeros(p.quadrature.len(), p.num_elements());
        for f in &mut psi.psi {
            f.coeffs.iter_mut().for_each(|v| *v = 0.37);
        }
        let st = compute_closures(&p, &psi);
        for f in &st.interior {
            for [a, b] in f.sides {
                assert!(a.beta.abs() < 1e-12 && b.beta.abs() < 1e-12);
                assert!(a.tn[0].abs() < 1e-12 && a.tn[1].abs() < 1e-12);
            }
        }
        for m in [LoMethod::Ldg, LoMethod::Ip] {
            let c = assemble_rhs(&p, &LoConfig::new(m, Variant::Consistent, BoundaryMode::Full), &st).unwrap();
            let i = assemble_rhs(&p, &LoConfig::new(m, Variant::Independent, BoundaryMode::Full), &st).unwrap();
            for e in [5, 6, 9, 10] {
                for a in 0..NODES {
                    assert!((c.1[pdof(e, a)] - i.1[pdof(e, a)]).abs() < 1e-13);
                    for k in 0..2 {
                        assert!((c.0[jdof(e, k, a)] - i.0[jdof(e, k, a)]).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn p1_symmetrized_is_symmetric_and_same_solution() {
        let p = spec(2, 1, SideTags::default(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = compute_closures(&p, &random_flux(&p, &mut rng));
        let sys = assemble(&p, &LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Half), &st).unwrap();
        let sym = symmetrize_p1(&sys).unwrap();
        let a = sym.full_matrix();
        assert!(a.asymmetry() <= 1e-12 * a.max_abs());
        let x1 = crate::linalg::lu_solve(&sys.full_matrix(), &sys.full_rhs()).unwrap();
        let x2 = crate::linalg::lu_solve(&a, &sym.full_rhs()).unwrap();
        let diff = x1.iter().zip(&x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-10 * max_abs(&x1).max(1.0));
        let ldg = assemble(&p, &LoConfig::default(), &st).unwrap();
        assert!(symmetrize_p1(&ldg).is_err());
    }

    #[test]
    fn schur_reduction_properties() {
        let p = spec(4, 4, SideTags::default(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let st = compute_closures(&p, &random_flux(&p, &mut rng));
        for cfg in [
            LoConfig::new(LoMethod::Ldg, Variant::Consistent, BoundaryMode::Half),
            LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Half),
        ] {
            let sys = assemble(&p, &cfg, &st).unwrap();
            let red = schur_reduce(&sys).unwrap();
            assert!(red.s.asymmetry() <= 1e-12 * red.s.max_abs());
            let rhs = red.reduce_rhs(&sys.rhs_j, &sys.rhs_phi);
            let pre = PreconditionerKind::Jacobi.build(&red.s).unwrap();
            let phi = cg_solve(&red.s, &rhs, pre.as_ref(), 1e-13, None, 10_000).unwrap().x;
            let j = red.back_substitute_vec(&sys.rhs_j, &phi);
            let (rj, rp) = sys.residual(&j, &phi);
            let scale = max_abs(&sys.rhs_j).max(max_abs(&sys.rhs_phi));
            assert!(max_abs(&rj) <= 1e-12 * scale, "{}", cfg.label());
            assert!(max_abs(&rp) <= 1e-10 * scale, "{}", cfg.label());
            // Zero φ and zero right-hand side give zero current.
            let zero = back_substitute(&red, &vec![0.0; sys.rhs_j.len()], &DgScalarField::zeros(p.num_elements()));
            assert!(zero.x.coeffs.iter().chain(&zero.y.coeffs).all(|&v| v == 0.0));
        }
        let p1 = assemble_operator(&p, &LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Half)).unwrap();
        assert!(!p1.current_local);
        assert!(schur_reduce(&p1).is_err());
    }

    #[test]
    fn solver_backends_agree_with_dense_solution() {
        let p = spec(3, 3, SideTags::default(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let st = compute_closures(&p, &random_flux(&p, &mut rng));
        for mut cfg in all_consistent() {
            cfg.inner_tol = 1e-13;
            let sys = assemble(&p, &cfg, &st).unwrap();
            let x = crate::linalg::lu_solve(&sys.full_matrix(), &sys.full_rhs()).unwrap();
            let mut solver = LoSolver::new(&p, &cfg).unwrap();
            let sol = solver.solve(&p, &st).unwrap();
            let nj = sys.rhs_j.len();
            let dphi = sol.phi.coeffs.iter().zip(&x[nj..]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let jv = current_to_vec(&sol.current);
            let dj = jv.iter().zip(&x[..nj]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dphi < 1e-9 && dj < 1e-9, "{}: {dphi:e} {dj:e}", cfg.label());
        }
    }
}
