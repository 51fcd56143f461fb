//! Discrete angular moments of the transport solution and the face-wise
//! half-range quantities consumed by the low-order correction sources.
//!
//! Volumetric moments are coefficient-wise quadrature sums (moments of Q1
//! fields stay Q1). Half-range sums are stored at the face Gauss points,
//! separately for each side of a face.

use crate::dg_space::{face_rule, DgScalarField, DgTensorField, DgVectorField, FACE_POINTS, NODES};
use crate::mesh::{BoundaryTag, LocalFace};
use crate::problem::ProblemSpec;
use crate::transport::AngularFlux;

/// Moments of one side's trace at a face point, relative to the face normal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SideMoments {
    pub phi: f64,
    /// `J·n`
    pub jn: f64,
    /// `Σ_{Ω·n>0} w (Ω·n) ψ`
    pub j_plus: f64,
    /// `Σ_{Ω·n<0} w (Ω·n) ψ` (non-positive for non-negative ψ)
    pub j_minus: f64,
    /// `Σ_{Ω·n>0} w Ω (Ω·n) ψ`
    pub p_plus: [f64; 2],
    /// `Σ_{Ω·n<0} w Ω (Ω·n) ψ`
    pub p_minus: [f64; 2],
    /// `Σ w (|Ω·n| − α) ψ`
    pub beta: f64,
    /// `T n`
    pub tn: [f64; 2],
}

/// Per-point data of an interior face, indexed `[point][side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorClosure {
    pub alpha: f64,
    pub sides: [[SideMoments; 2]; FACE_POINTS],
}

/// Per-point data of a boundary face: the interior trace plus the inflow
/// moments (from `ψ̄`, or from the mirrored traces on a reflecting face).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryClosure {
    pub alpha: f64,
    pub inner: [SideMoments; FACE_POINTS],
    /// `Σ_{Ω·n<0} w (Ω·n) ψ_in`
    pub j_in: [f64; FACE_POINTS],
    /// `Σ_{Ω·n<0} w Ω (Ω·n) ψ_in`
    pub p_in: [[f64; 2]; FACE_POINTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureState {
    pub phi: DgScalarField,
    pub current: DgVectorField,
    /// In-plane pressure components.
    pub pressure: DgTensorField,
    /// `Σ w Ω_z² ψ`, the out-of-plane diagonal of the pressure.
    pub pressure_zz: DgScalarField,
    /// `T = P − I φ / 3` (in-plane block).
    pub t: DgTensorField,
    pub interior: Vec<InteriorClosure>,
    pub boundary: Vec<BoundaryClosure>,
}

fn trace(c: &[f64], face: LocalFace, t: f64) -> f64 {
    let [a, b] = face.nodes();
    (1.0 - t) * c[a] + t * c[b]
}

fn side_moments(
    spec: &ProblemSpec,
    psi: &AngularFlux,
    t_field: &DgTensorField,
    e: usize,
    face: LocalFace,
    t: f64,
    n: [f64; 2],
    alpha: f64,
) -> SideMoments {
    let quad = &spec.quadrature;
    let mut m = SideMoments::default();
    for d in 0..quad.len() {
        let v = trace(psi.psi[d].element(e), face, t);
        let w = quad.weights[d];
        let om = quad.omega(d);
        let on = om[0] * n[0] + om[1] * n[1];
        m.phi += w * v;
        m.jn += w * on * v;
        m.beta += w * (on.abs() - alpha) * v;
        if on > 0.0 {
            m.j_plus += w * on * v;
            m.p_plus[0] += w * om[0] * on * v;
            m.p_plus[1] += w * om[1] * on * v;
        } else if on < 0.0 {
            m.j_minus += w * on * v;
            m.p_minus[0] += w * om[0] * on * v;
            m.p_minus[1] += w * om[1] * on * v;
        }
    }
    let txx = trace(t_field.xx.element(e), face, t);
    let txy = trace(t_field.xy.element(e), face, t);
    let tyy = trace(t_field.yy.element(e), face, t);
    m.tn = [txx * n[0] + txy * n[1], txy * n[0] + tyy * n[1]];
    m
}

/// Volumetric moments and all face closures of `psi`.
pub fn compute_closures(spec: &ProblemSpec, psi: &AngularFlux) -> ClosureState {
    let quad = &spec.quadrature;
    let mesh = &spec.mesh;
    let ne = spec.num_elements();
    let mut phi = DgScalarField::zeros(ne);
    let mut current = DgVectorField::zeros(ne);
    let mut pressure = DgTensorField::zeros(ne);
    let mut pressure_zz = DgScalarField::zeros(ne);
    for d in 0..quad.len() {
        let w = quad.weights[d];
        let o = quad.directions[d];
        for (i, &v) in psi.psi[d].coeffs.iter().enumerate() {
            phi.coeffs[i] += w * v;
            current.x.coeffs[i] += w * o[0] * v;
            current.y.coeffs[i] += w * o[1] * v;
            pressure.xx.coeffs[i] += w * o[0] * o[0] * v;
            pressure.xy.coeffs[i] += w * o[0] * o[1] * v;
            pressure.yy.coeffs[i] += w * o[1] * o[1] * v;
            pressure_zz.coeffs[i] += w * o[2] * o[2] * v;
        }
    }
    let mut t = pressure.clone();
    for i in 0..NODES * ne {
        t.xx.coeffs[i] -= phi.coeffs[i] / 3.0;
        t.yy.coeffs[i] -= phi.coeffs[i] / 3.0;
    }

    let (tq, _) = face_rule();
    let interior = mesh
        .interior_faces
        .iter()
        .map(|f| {
            let alpha = quad.alpha(f.normal);
            let sides = tq.map(|tp| {
                [
                    side_moments(spec, psi, &t, f.elem1, f.face1, tp, f.normal, alpha),
                    side_moments(spec, psi, &t, f.elem2, f.face2, tp, f.normal, alpha),
                ]
            });
            InteriorClosure { alpha, sides }
        })
        .collect();

    let boundary = mesh
        .boundary_faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let alpha = quad.alpha(f.normal);
            let inner = tq.map(|tp| side_moments(spec, psi, &t, f.elem, f.face, tp, f.normal, alpha));
            let mut j_in = [0.0; FACE_POINTS];
            let mut p_in = [[0.0; 2]; FACE_POINTS];
            for (q, &tp) in tq.iter().enumerate() {
                for d in 0..quad.len() {
                    let om = quad.omega(d);
                    let on = om[0] * f.normal[0] + om[1] * f.normal[1];
                    if on >= 0.0 {
                        continue;
                    }
                    let v = match f.tag {
                        BoundaryTag::Inflow => spec.inflow_value(fi, q, d),
                        BoundaryTag::Reflecting => {
                            let m = spec.mirror(d).expect("reflecting face has mirror directions");
                            trace(psi.psi[m].element(f.elem), f.face, tp)
                        }
                    };
                    let w = quad.weights[d];
                    j_in[q] += w * on * v;
                    p_in[q][0] += w * om[0] * on * v;
                    p_in[q][1] += w * om[1] * on * v;
                }
            }
            BoundaryClosure { alpha, inner, j_in, p_in }
        })
        .collect();

    ClosureState { phi, current, pressure, pressure_zz, t, interior, boundary }
}

/// Zeroth and first moments of the upwind numerical flux at each point of
/// interior face `f`: `Ĵ·n = J⁺₁ + J⁻₂`, `P̂n = P⁺₁ + P⁻₂`.
pub fn upwind_moment_fluxes(state: &ClosureState, f: usize) -> [(f64, [f64; 2]); FACE_POINTS] {
    state.interior[f].sides.map(|[s1, s2]| {
        (s1.j_plus + s2.j_minus, [s1.p_plus[0] + s2.p_minus[0], s1.p_plus[1] + s2.p_minus[1]])
    })
}

/// The same fluxes in jump/average form:
/// `Ĵ·n = {J·n} + ½[[J⁺ − J⁻]]`, `P̂n = {Pn} + ½[[P⁺ − P⁻]]`.
pub fn upwind_moment_fluxes_jump_avg(state: &ClosureState, f: usize) -> [(f64, [f64; 2]); FACE_POINTS] {
    state.interior[f].sides.map(|[s1, s2]| {
        let jn = 0.5 * (s1.jn + s2.jn) + 0.5 * ((s1.j_plus - s1.j_minus) - (s2.j_plus - s2.j_minus));
        let mut pn = [0.0; 2];
        for k in 0..2 {
            let full1 = s1.p_plus[k] + s1.p_minus[k];
            let full2 = s2.p_plus[k] + s2.p_minus[k];
            pn[k] = 0.5 * (full1 + full2)
                + 0.5 * ((s1.p_plus[k] - s1.p_minus[k]) - (s2.p_plus[k] - s2.p_minus[k]));
        }
        (jn, pn)
    })
}

/// Boundary numerical flux moments `Ĵ·n = J⁺ + J_in`, `P̂n = P⁺ + P_in`.
pub fn boundary_moment_fluxes(state: &ClosureState, f: usize) -> [(f64, [f64; 2]); FACE_POINTS] {
    let b = &state.boundary[f];
    let mut out = [(0.0, [0.0; 2]); FACE_POINTS];
    for q in 0..FACE_POINTS {
        let s = &b.inner[q];
        out[q] = (s.j_plus + b.j_in[q], [s.p_plus[0] + b.p_in[q][0], s.p_plus[1] + b.p_in[q][1]]);
    }
    out
}
