#![allow(dead_code)]

use std::sync::Arc;

use dgsmm::angular_quad::SnQuadrature;
use dgsmm::closures::{compute_closures, upwind_moment_fluxes, upwind_moment_fluxes_jump_avg, ClosureState};
use dgsmm::lo_diffusion::{assemble, current_to_vec, residual_moments, BoundaryMode, IpMode, LoConfig, LoMethod, Variant};
use dgsmm::mesh::{BoundaryTag, BoundingBox, Mesh, RegionMap, SideTags};
use dgsmm::problem::{AngularFn, Material, ProblemSpec};
use dgsmm::transport::{residual, AngularFlux};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small meshes covering inflow, reflecting and two-material setups.
pub fn closure_meshes() -> Vec<(&'static str, ProblemSpec)> {
    let g: AngularFn = Arc::new(|x, y, o| 1.0 + 0.3 * x - 0.2 * y + 0.1 * o[0]);
    let inflow = {
        let mesh = Mesh::build_cartesian(3, 2, BoundingBox::new(0.0, 0.0, 1.0, 0.8), RegionMap::default(), SideTags::default())
            .unwrap();
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(4).unwrap(), vec![Material::new(1.5, 1.2, 0.4)], None, Some(g.clone()))
            .unwrap()
    };
    let reflecting = {
        let tags = SideTags { bottom: BoundaryTag::Reflecting, ..SideTags::default() };
        let mesh = Mesh::build_cartesian(2, 3, BoundingBox::new(0.0, 0.0, 1.0, 1.0), RegionMap::default(), tags).unwrap();
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(6).unwrap(), vec![Material::new(2.0, 1.0, 0.0)], None, Some(g.clone()))
            .unwrap()
    };
    let layered = {
        let regions = RegionMap::uniform(0).with_region(BoundingBox::new(0.5, 0.0, 1.0, 1.0), 1);
        let mesh = Mesh::build_cartesian(4, 4, BoundingBox::unit_square(), regions, SideTags::default()).unwrap();
        let mats = vec![Material::new(1.0, 0.9, 0.1), Material::new(50.0, 49.0, 0.0)];
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(4).unwrap(), mats, None, None).unwrap()
    };
    vec![("inflow", inflow), ("reflecting", reflecting), ("layered", layered)]
}

pub fn consistent_configs() -> Vec<LoConfig> {
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

pub fn random_flux(spec: &ProblemSpec, seed: u64) -> AngularFlux {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi = AngularFlux::zeros(spec.quadrature.len(), spec.num_elements());
    for f in &mut psi.psi {
        for v in &mut f.coeffs {
            *v = rng.gen_range(0.0..2.0);
        }
    }
    psi
}

/// Largest violation of the pointwise closure identities, relative to the
/// size of the flux.
pub fn closure_invariant_error(st: &ClosureState) -> f64 {
    let scale = st.phi.coeffs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut err = 0.0f64;
    let mut check = |s: &dgsmm::closures::SideMoments, alpha: f64| {
        err = err.max((s.j_plus - s.j_minus - alpha * s.phi - s.beta).abs());
        err = err.max((s.j_plus + s.j_minus - s.jn).abs());
    };
    for f in &st.interior {
        for pt in &f.sides {
            check(&pt[0], f.alpha);
            check(&pt[1], f.alpha);
        }
    }
    for b in &st.boundary {
        for s in &b.inner {
            check(s, b.alpha);
        }
    }
    for i in 0..st.phi.coeffs.len() {
        let p = &st.pressure;
        let tr = p.xx.coeffs[i] + p.yy.coeffs[i] + st.pressure_zz.coeffs[i];
        err = err.max((tr - st.phi.coeffs[i]).abs());
        let third = st.phi.coeffs[i] / 3.0;
        err = err.max((st.t.xx.coeffs[i] - (p.xx.coeffs[i] - third)).abs());
        err = err.max((st.t.yy.coeffs[i] - (p.yy.coeffs[i] - third)).abs());
        err = err.max((st.t.xy.coeffs[i] - p.xy.coeffs[i]).abs());
    }
    err / scale
}

/// Largest difference between the partial-current and jump/average forms of
/// the upwind moment fluxes.
pub fn flux_form_error(st: &ClosureState) -> f64 {
    let scale = st.phi.coeffs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut err = 0.0f64;
    for f in 0..st.interior.len() {
        let a = upwind_moment_fluxes(st, f);
        let b = upwind_moment_fluxes_jump_avg(st, f);
        for (x, y) in a.iter().zip(&b) {
            err = err.max((x.0 - y.0).abs()).max((x.1[0] - y.1[0]).abs()).max((x.1[1] - y.1[1]).abs());
        }
    }
    err / scale
}

/// Worst relative mismatch between the LO residual at the HO moments and the
/// moments of the transport residual, over all consistent configurations.
pub fn cancellation_error(spec: &ProblemSpec, psi: &AngularFlux) -> (f64, String) {
    let st = compute_closures(spec, psi);
    let r = residual(spec, psi, &st.phi);
    let (mj, mp) = residual_moments(spec, &r);
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut worst = (0.0, String::new());
    for cfg in consistent_configs() {
        let sys = assemble(spec, &cfg, &st).unwrap();
        let (rj, rp) = sys.residual(&current_to_vec(&st.current), &st.phi.coeffs);
        let scale = max_abs(&sys.rhs_phi).max(max_abs(&sys.rhs_j)).max(1.0);
        let ej = rj.iter().zip(&mj).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        let ep = rp.iter().zip(&mp).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        let e = ej.max(ep) / scale;
        if e >= worst.0 {
            worst = (e, cfg.label());
        }
    }
    worst
}
