//! Upwind DG transport sweep for a fixed scattering source.

use crate::dg_space::{face_mass, face_rule, DgScalarField, Mat4, FACE_POINTS, NODES};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, LocalFace, Mesh, Side};
use crate::problem::{ProblemSpec, INV_FOUR_PI};

/// One DG field per folded direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularFlux {
    pub psi: Vec<DgScalarField>,
}

impl AngularFlux {
    pub fn zeros(num_directions: usize, num_elements: usize) -> Self {
        Self { psi: vec![DgScalarField::zeros(num_elements); num_directions] }
    }

    pub fn num_directions(&self) -> usize {
        self.psi.len()
    }

    pub fn num_elements(&self) -> usize {
        self.psi.first().map_or(0, DgScalarField::num_elements)
    }

    pub fn direction(&self, d: usize) -> &DgScalarField {
        &self.psi[d]
    }
}

/// Where the upwind state across a face of an element comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Neighbor {
    Element(usize, LocalFace),
    Boundary(usize),
}

/// Neighbor across local face `face` of element `e` on the structured grid.
pub(crate) fn neighbor(mesh: &Mesh, e: usize, face: LocalFace) -> Neighbor {
    let el = &mesh.elements[e];
    let (i, j) = (el.i, el.j);
    match face {
        LocalFace::Left if i > 0 => Neighbor::Element(e - 1, LocalFace::Right),
        LocalFace::Right if i + 1 < mesh.nx => Neighbor::Element(e + 1, LocalFace::Left),
        LocalFace::Bottom if j > 0 => Neighbor::Element(e - mesh.nx, LocalFace::Top),
        LocalFace::Top if j + 1 < mesh.ny => Neighbor::Element(e + mesh.nx, LocalFace::Bottom),
        LocalFace::Left => Neighbor::Boundary(mesh.boundary_face_index(Side::Left, j)),
        LocalFace::Right => Neighbor::Boundary(mesh.boundary_face_index(Side::Right, j)),
        LocalFace::Bottom => Neighbor::Boundary(mesh.boundary_face_index(Side::Bottom, i)),
        LocalFace::Top => Neighbor::Boundary(mesh.boundary_face_index(Side::Top, i)),
    }
}

pub(crate) fn face_length(mesh: &Mesh, e: usize, face: LocalFace) -> f64 {
    let el = &mesh.elements[e];
    match face {
        LocalFace::Left | LocalFace::Right => el.hy(),
        LocalFace::Bottom | LocalFace::Top => el.hx(),
    }
}

/// Local system `A ψ_e = b` of direction `d` in element `e`; upwind traces
/// are read from `own` (same direction) and, on the reflecting plane, from
/// `mirror` (the reflected direction).
fn local_system(
    spec: &ProblemSpec,
    d: usize,
    e: usize,
    scattering: &DgScalarField,
    own: &[f64],
    mirror: Option<&[f64]>,
) -> (Mat4, [f64; 4]) {
    let mesh = &spec.mesh;
    let mat = spec.material(e);
    let em = spec.element_matrices(e);
    let om = spec.quadrature.omega(d);

    let mut a = [[0.0; 4]; 4];
    let mut b = spec.source_load(d, e);
    let phi = scattering.element(e);
    let scat = mat.sigma_s * INV_FOUR_PI;
    for i in 0..NODES {
        for j in 0..NODES {
            a[i][j] = mat.sigma_t * em.mass[i][j] - (om[0] * em.dx[i][j] + om[1] * em.dy[i][j]);
            b[i] += scat * em.mass[i][j] * phi[j];
        }
    }

    let (tq, wq) = face_rule();
    for face in LocalFace::ALL {
        let n = face.outward_normal();
        let on = om[0] * n[0] + om[1] * n[1];
        if on == 0.0 {
            continue;
        }
        let len = face_length(mesh, e, face);
        let fm = face_mass(len);
        let nodes = face.nodes();
        if on > 0.0 {
            for (ra, &na) in nodes.iter().enumerate() {
                for (rb, &nb) in nodes.iter().enumerate() {
                    a[na][nb] += on * fm[ra][rb];
                }
            }
            continue;
        }
        match neighbor(mesh, e, face) {
            Neighbor::Element(nb_e, nb_face) => {
                let up = nb_face.nodes().map(|k| own[NODES * nb_e + k]);
                for (ra, &na) in nodes.iter().enumerate() {
                    b[na] -= on * (fm[ra][0] * up[0] + fm[ra][1] * up[1]);
                }
            }
            Neighbor::Boundary(f) => match mesh.boundary_faces[f].tag {
                BoundaryTag::Inflow => {
                    for q in 0..FACE_POINTS {
                        let g = spec.inflow_value(f, q, d);
                        if g == 0.0 {
                            continue;
                        }
                        let l = [1.0 - tq[q], tq[q]];
                        for (ra, &na) in nodes.iter().enumerate() {
                            b[na] -= on * wq[q] * len * l[ra] * g;
                        }
                    }
                }
                BoundaryTag::Reflecting => {
                    let m = mirror.expect("reflecting face requires the mirror direction");
                    let up = nodes.map(|k| m[NODES * e + k]);
                    for (ra, &na) in nodes.iter().enumerate() {
                        b[na] -= on * (fm[ra][0] * up[0] + fm[ra][1] * up[1]);
                    }
                }
            },
        }
    }
    (a, b)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub(crate) fn solve4(mut a: Mat4, mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for k in 0..4 {
        let p = (k..4).max_by(|&r, &s| a[r][k].abs().total_cmp(&a[s][k].abs())).unwrap();
        if a[p][k].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for r in k + 1..4 {
            let f = a[r][k] / a[k][k];
            for c in k..4 {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = [0.0; 4];
    for k in (0..4).rev() {
        let mut s = b[k];
        for c in k + 1..4 {
            s -= a[k][c] * x[c];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

/// Element visiting order compatible with the upwind dependencies of `Ω`.
fn element_order(mesh: &Mesh, om: [f64; 2]) -> impl Iterator<Item = usize> + '_ {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let fwd_x = om[0] >= 0.0;
    let fwd_y = om[1] >= 0.0;
    (0..ny).flat_map(move |jj| {
        let j = if fwd_y { jj } else { ny - 1 - jj };
        (0..nx).map(move |ii| {
            let i = if fwd_x { ii } else { nx - 1 - ii };
            j * nx + i
        })
    })
}

/// Inverts streaming plus collision for every direction against the
/// isotropic scattering source built from `scattering`.
pub fn sweep(spec: &ProblemSpec, scattering: &DgScalarField) -> Result<AngularFlux> {
    let ne = spec.num_elements();
    let mut flux = AngularFlux::zeros(spec.quadrature.len(), ne);
    for &d in spec.sweep_order() {
        let om = spec.quadrature.omega(d);
        let mut own = std::mem::take(&mut flux.psi[d].coeffs);
        let mirror = spec.mirror(d).filter(|_| om[1] > 0.0).map(|m| flux.psi[m].coeffs.as_slice());
        for e in element_order(&spec.mesh, om) {
            let (a, b) = local_system(spec, d, e, scattering, &own, mirror);
            let x = solve4(a, b).ok_or(Error::SingularLocalSystem { element: e, direction: d })?;
            own[NODES * e..NODES * e + NODES].copy_from_slice(&x);
        }
        flux.psi[d].coeffs = own;
    }
    Ok(flux)
}

/// Per-direction residual `A ψ_d − b(ψ)` of the element weak forms, with
/// upwind traces taken from `psi` itself.
pub fn residual(spec: &ProblemSpec, psi: &AngularFlux, scattering: &DgScalarField) -> AngularFlux {
    let ne = spec.num_elements();
    let mut out = AngularFlux::zeros(psi.num_directions(), ne);
    for d in 0..psi.num_directions() {
        let mirror = spec.mirror(d).map(|m| psi.psi[m].coeffs.as_slice());
        let own = &psi.psi[d].coeffs;
        for e in 0..ne {
            let (a, b) = local_system(spec, d, e, scattering, own, mirror);
            let x = &own[NODES * e..NODES * e + NODES];
            for i in 0..NODES {
                let ax: f64 = (0..NODES).map(|j| a[i][j] * x[j]).sum();
                out.psi[d].coeffs[NODES * e + i] = ax - b[i];
            }
        }
    }
    out
}

/// Global particle balance terms of the zeroth-moment weak form with `u = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BalanceTerms {
    /// `Σ_d w ∫ q_d`
    pub source: f64,
    /// Incoming partial current through non-reflecting boundaries.
    pub inflow: f64,
    /// `∫ σ_s φ_scat`
    pub scattering: f64,
    /// `∫ σ_t φ`
    pub collision: f64,
    /// Net outgoing current through all boundaries (reflecting faces net to zero).
    pub leakage: f64,
}

impl BalanceTerms {
    pub fn residual(&self) -> f64 {
        let imbalance = self.source + self.inflow + self.scattering - self.collision - self.leakage;
        let scale = self.source + self.inflow;
        if scale > 0.0 {
            imbalance.abs() / scale
        } else {
            imbalance.abs()
        }
    }
}

pub fn balance_terms(spec: &ProblemSpec, psi: &AngularFlux, scattering: &DgScalarField) -> BalanceTerms {
    let mesh = &spec.mesh;
    let quad = &spec.quadrature;
    let mut t = BalanceTerms::default();
    let (q0, _) = spec.source_moment_loads();
    t.source = q0.iter().sum();
    for e in 0..spec.num_elements() {
        let mat = spec.material(e);
        let em = spec.element_matrices(e);
        let phi = scattering.element(e);
        for d in 0..quad.len() {
            let c = psi.psi[d].element(e);
            for i in 0..NODES {
                for j in 0..NODES {
                    t.collision += quad.weights[d] * mat.sigma_t * em.mass[i][j] * c[j];
                }
            }
        }
        for i in 0..NODES {
            for j in 0..NODES {
                t.scattering += mat.sigma_s * em.mass[i][j] * phi[j];
            }
        }
    }
    let (_, wq) = face_rule();
    for (f, face) in mesh.boundary_faces.iter().enumerate() {
        let nodes = face.face.nodes();
        for d in 0..quad.len() {
            let om = quad.omega(d);
            let on = om[0] * face.normal[0] + om[1] * face.normal[1];
            let w = quad.weights[d];
            if on > 0.0 {
                let c = psi.psi[d].element(face.elem);
                t.leakage += w * on * face.length * 0.5 * (c[nodes[0]] + c[nodes[1]]);
            } else if on < 0.0 {
                let incoming = match face.tag {
                    BoundaryTag::Inflow => (0..FACE_POINTS)
                        .map(|q| wq[q] * face.length * spec.inflow_value(f, q, d))
                        .sum::<f64>(),
                    BoundaryTag::Reflecting => {
                        let m = spec.mirror(d).expect("reflecting face has mirror directions");
                        let c = psi.psi[m].element(face.elem);
                        face.length * 0.5 * (c[nodes[0]] + c[nodes[1]])
                    }
                };
                if face.tag == BoundaryTag::Inflow {
                    t.inflow += w * (-on) * incoming;
                } else {
                    t.leakage -= w * (-on) * incoming;
                }
            }
        }
    }
    t
}

/// Relative global balance residual of `psi` against the scattering field
/// that produced it.
pub fn balance_check(spec: &ProblemSpec, psi: &AngularFlux, scattering: &DgScalarField) -> f64 {
    balance_terms(spec, psi, scattering).residual()
}

/// Upwind value `ψ̂` of the numerical flux on an interior face point: the
/// trace from side 1 when `Ω·n > 0`, side 2 otherwise.
pub fn upwind_value(on: f64, psi1: f64, psi2: f64) -> f64 {
    if on > 0.0 {
        psi1
    } else {
        psi2
    }
}

/// The same flux in jump/average form: `{ψ} + sign(Ω·n)/2 [[ψ]]`.
pub fn upwind_value_jump_avg(on: f64, psi1: f64, psi2: f64) -> f64 {
    let s = if on > 0.0 { 1.0 } else { -1.0 };
    0.5 * (psi1 + psi2) + 0.5 * s * (psi1 - psi2)
}
