//! Outer SMM iteration: sweep, closures, LO solve, scattering update, with
//! optional Anderson acceleration on the scalar flux.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::Instant;

use crate::closures::compute_closures;
use crate::dg_space::{l2_distance, l2_distance_vector, DgScalarField, DgVectorField};
use crate::error::{Error, Result};
use crate::lo_diffusion::{assemble_rhs, current_to_vec, LoConfig, LoSolver};
use crate::problem::{ProblemSpec, INV_FOUR_PI};
use crate::transport::{balance_check, sweep, AngularFlux};

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    /// Relative L2 change of the LO scalar flux that ends the iteration.
    pub tol: f64,
    pub max_iters: usize,
    /// Anderson depth; 0 is plain fixed-point iteration.
    pub anderson_depth: usize,
    /// Per-iteration records are appended here as CSV when set.
    pub history_csv: Option<PathBuf>,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 1000, anderson_depth: 0, history_csv: None }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("outer tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max outer iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖φ_LO^{k+1} − φ^k‖ / ‖φ_LO^{k+1}‖` in L2.
    pub update_norm: f64,
    /// The same change in the max norm of the coefficients.
    pub update_norm_inf: f64,
    pub inner_iterations: usize,
    pub ho_balance: f64,
    pub lo_balance: f64,
    pub sweep_seconds: f64,
    pub closure_seconds: f64,
    pub lo_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SmmSolution {
    pub phi: DgScalarField,
    pub current: DgVectorField,
    pub psi: AngularFlux,
    /// Moments of the final sweep.
    pub phi_ho: DgScalarField,
    pub current_ho: DgVectorField,
    pub records: Vec<IterationRecord>,
}

impl SmmSolution {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// `(‖φ_LO − φ_HO‖, ‖J_LO − J_HO‖)` in L2.
    pub fn consistency(&self, spec: &ProblemSpec) -> (f64, f64) {
        (
            l2_distance(&spec.mesh, &self.phi, &self.phi_ho),
            l2_distance_vector(&spec.mesh, &self.current, &self.current_ho),
        )
    }

    pub fn ho_balance(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.ho_balance)
    }

    pub fn lo_balance(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.lo_balance)
    }
}

/// Isotropic scattering source density `σ_s φ / (4π)` per element.
pub fn source_update(spec: &ProblemSpec, phi: &DgScalarField) -> DgScalarField {
    let mut out = phi.clone();
    for e in 0..spec.num_elements() {
        let s = spec.material(e).sigma_s * INV_FOUR_PI;
        out.element_mut(e).iter_mut().for_each(|v| *v *= s);
    }
    out
}

/// One Anderson step from `(x_i, f_i = g(x_i) − x_i)` pairs, oldest first.
/// Uses at most the last `m + 1` pairs; with `m = 0` it returns `x + f`.
pub fn anderson_step(history: &[(Vec<f64>, Vec<f64>)], m: usize) -> Vec<f64> {
    assert!(!history.is_empty(), "Anderson step needs at least one pair");
    let (xk, fk) = history.last().unwrap();
    let n = xk.len();
    let mut start = history.len().saturating_sub(m + 1);
    loop {
        let window = &history[start..];
        let cols = window.len() - 1;
        if cols == 0 {
            return xk.iter().zip(fk).map(|(x, f)| x + f).collect();
        }
        let df: Vec<Vec<f64>> =
            (0..cols).map(|j| (0..n).map(|i| window[j + 1].1[i] - window[j].1[i]).collect()).collect();
        if let Some(gamma) = least_squares_mgs(&df, fk) {
            let mut out: Vec<f64> = xk.iter().zip(fk).map(|(x, f)| x + f).collect();
            for (j, g) in gamma.iter().enumerate() {
                for i in 0..n {
                    let dx = window[j + 1].0[i] - window[j].0[i];
                    out[i] -= g * (dx + df[j][i]);
                }
            }
            return out;
        }
        // Rank deficient: drop the oldest difference and retry.
        start += 1;
    }
}

/// Minimizes `‖b − A γ‖` by modified Gram-Schmidt; `None` if `A` (given by
/// columns) is numerically rank deficient.
fn least_squares_mgs(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let k = a.len();
    let mut q: Vec<Vec<f64>> = a.to_vec();
    let mut r = vec![vec![0.0; k]; k];
    for j in 0..k {
        let orig = crate::linalg::norm2(&a[j]);
        for i in 0..j {
            let d = crate::linalg::dot(&q[i], &q[j]);
            r[i][j] = d;
            let qi = q[i].clone();
            q[j].iter_mut().zip(&qi).for_each(|(v, w)| *v -= d * w);
        }
        let nrm = crate::linalg::norm2(&q[j]);
        if !(nrm > 1e-12 * orig) || orig == 0.0 {
            return None;
        }
        r[j][j] = nrm;
        q[j].iter_mut().for_each(|v| *v /= nrm);
    }
    let qtb: Vec<f64> = q.iter().map(|qi| crate::linalg::dot(qi, b)).collect();
    let mut gamma = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[i][j] * gamma[j]).sum();
        gamma[i] = (qtb[i] - s) / r[i][i];
    }
    Some(gamma)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Runs the outer iteration from a zero scattering source.
pub fn solve_smm(spec: &ProblemSpec, lo: &LoConfig, outer: &OuterConfig) -> Result<SmmSolution> {
    outer.validate()?;
    let mut solver = LoSolver::new(spec, lo)?;
    let mut writer = match &outer.history_csv {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    let mesh = &spec.mesh;
    let mut x = DgScalarField::zeros(spec.num_elements());
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut records = Vec::new();

    for k in 1..=outer.max_iters {
        let t0 = Instant::now();
        let psi = sweep(spec, &x)?;
        let ho_balance = balance_check(spec, &psi, &x);
        let t1 = Instant::now();
        let state = compute_closures(spec, &psi);
        let (bj, bp) = assemble_rhs(spec, lo, &state)?;
        let t2 = Instant::now();
        let sol = solver.solve_rhs(&bj, &bp).map_err(|e| Error::InnerFailure {
            iteration: k,
            source: Box::new(e),
            history: records.clone(),
        })?;
        let t3 = Instant::now();

        // Constants lie in the test space, so summing the zeroth-moment rows
        // gives the LO global balance.
        let (_, rp) = solver.operator_residual(&bj, &bp, &current_to_vec(&sol.current), &sol.phi.coeffs);
        let scale = bp.iter().sum::<f64>().abs().max(max_abs(&bp));
        let lo_balance = if scale > 0.0 { rp.iter().sum::<f64>().abs() / scale } else { 0.0 };

        let g = &sol.phi;
        let gnorm = g.l2_norm(mesh);
        let change = l2_distance(mesh, g, &x);
        let update_norm = if gnorm > 0.0 { change / gnorm } else { change };
        let ginf = max_abs(&g.coeffs);
        let dinf = max_abs_diff(&g.coeffs, &x.coeffs);
        let record = IterationRecord {
            iteration: k,
            update_norm,
            update_norm_inf: if ginf > 0.0 { dinf / ginf } else { dinf },
            inner_iterations: sol.inner_iterations,
            ho_balance,
            lo_balance,
            sweep_seconds: (t1 - t0).as_secs_f64(),
            closure_seconds: (t2 - t1).as_secs_f64(),
            lo_seconds: (t3 - t2).as_secs_f64(),
        };
        log::debug!("outer {k}: change {update_norm:.3e}, inner {}", sol.inner_iterations);
        if let Some(w) = writer.as_mut() {
            w.serialize(&record)?;
            w.flush()?;
        }
        records.push(record);

        if update_norm <= outer.tol {
            return Ok(SmmSolution {
                phi: sol.phi,
                current: sol.current,
                psi,
                phi_ho: state.phi,
                current_ho: state.current,
                records,
            });
        }

        if outer.anderson_depth == 0 {
            x = sol.phi;
        } else {
            let f: Vec<f64> = g.coeffs.iter().zip(&x.coeffs).map(|(a, b)| a - b).collect();
            history.push_back((x.coeffs.clone(), f));
            while history.len() > outer.anderson_depth + 1 {
                history.pop_front();
            }
            let hist: Vec<_> = history.iter().cloned().collect();
            x = DgScalarField::from_coeffs(anderson_step(&hist, outer.anderson_depth));
        }
    }
    let last_change = records.last().map_or(f64::INFINITY, |r| r.update_norm);
    Err(Error::OuterNotConverged { iterations: outer.max_iters, last_change, history: records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular_quad::SnQuadrature;
    use crate::lo_diffusion::{BoundaryMode, LoMethod, Variant};
    use crate::mesh::{BoundingBox, Mesh, RegionMap, SideTags};
    use crate::problem::Material;

    fn problem(sigma_t: f64, sigma_s: f64, n: usize) -> ProblemSpec {
        let mesh = Mesh::build_cartesian(n, n, BoundingBox::unit_square(), RegionMap::default(), SideTags::default()).unwrap();
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(4).unwrap(), vec![Material::new(sigma_t, sigma_s, 1.0)], None, None)
            .unwrap()
    }

    #[test]
    fn anderson_depth_zero_is_fixed_point() {
        let h = vec![(vec![1.0, 2.0], vec![0.5, -1.0])];
        assert_eq!(anderson_step(&h, 0), vec![1.5, 1.0]);
        let h2 = vec![(vec![0.0, 0.0], vec![1.0, 1.0]), (vec![1.0, 2.0], vec![0.5, -1.0])];
        assert_eq!(anderson_step(&h2, 0), vec![1.5, 1.0]);
    }

    #[test]
    fn anderson_solves_linear_map_faster() {
        // g(x) = M x + c with spectral radius 0.9.
        let m = [[0.9, 0.05, 0.0], [0.0, 0.8, 0.05], [0.02, 0.0, 0.85]];
        let c = [1.0, -0.5, 0.25];
        let g = |x: &[f64]| -> Vec<f64> { (0..3).map(|i| c[i] + (0..3).map(|j| m[i][j] * x[j]).sum::<f64>()).collect() };
        let run = |depth: usize| -> usize {
            let mut x = vec![0.0; 3];
            let mut hist: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
            for k in 1..10_000 {
                let gx = g(&x);
                let f: Vec<f64> = gx.iter().zip(&x).map(|(a, b)| a - b).collect();
                if crate::linalg::norm2(&f) <= 1e-10 {
                    return k;
                }
                hist.push((x.clone(), f));
                if hist.len() > depth + 1 {
                    hist.remove(0);
                }
                x = anderson_step(&hist, depth);
            }
            usize::MAX
        };
        let plain = run(0);
        let aa = run(2);
        assert!(aa < plain, "{aa} vs {plain}");
        // A 3D linear map is solved exactly after at most four AA(3) steps.
        assert!(run(3) <= 6);
    }

    #[test]
    fn anderson_drops_dependent_columns() {
        let h = vec![
            (vec![0.0, 0.0], vec![1.0, 0.0]),
            (vec![1.0, 0.0], vec![2.0, 0.0]),
            (vec![2.0, 0.0], vec![3.0, 0.0]),
        ];
        let x = anderson_step(&h, 2);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn source_update_scales_by_scattering() {
        let p = problem(2.0, 1.0, 2);
        assert!(source_update(&p, &DgScalarField::zeros(4)).coeffs.iter().all(|&v| v == 0.0));
        let s = source_update(&p, &DgScalarField::from_coeffs(vec![4.0 * std::f64::consts::PI; 16]));
        assert!(s.coeffs.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn pure_absorber_converges_in_two() {
        let p = problem(1.0, 0.0, 4);
        for cfg in [
            LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Half),
            LoConfig::new(LoMethod::Ldg, Variant::Independent, BoundaryMode::Full),
        ] {
            let sol = solve_smm(&p, &cfg, &OuterConfig { tol: 1e-10, ..Default::default() }).unwrap();
            assert!(sol.iterations() <= 2);
        }
    }

    #[test]
    fn consistent_solution_matches_ho_moments() {
        let p = problem(2.0, 1.8, 4);
        let mut cfg = LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Half);
        cfg.inner_tol = 1e-13;
        let sol = solve_smm(&p, &cfg, &OuterConfig { tol: 1e-11, ..Default::default() }).unwrap();
        let (dp, dj) = sol.consistency(&p);
        assert!(dp < 1e-9 && dj < 1e-9, "{dp:e} {dj:e}");
        assert!(sol.ho_balance() < 1e-10);
        assert!(sol.lo_balance() < 1e-8);
    }

    #[test]
    fn anderson_matches_plain_solution() {
        let p = problem(2.0, 1.9, 4);
        let mut cfg = LoConfig::new(LoMethod::Ldg, Variant::Consistent, BoundaryMode::Half);
        cfg.inner_tol = 1e-13;
        let plain = solve_smm(&p, &cfg, &OuterConfig { tol: 1e-11, ..Default::default() }).unwrap();
        let aa = solve_smm(&p, &cfg, &OuterConfig { tol: 1e-11, anderson_depth: 3, ..Default::default() }).unwrap();
        assert!(l2_distance(&p.mesh, &plain.phi, &aa.phi) < 1e-9);
    }

    #[test]
    fn max_iterations_error_carries_history() {
        let p = problem(2.0, 1.9, 2);
        let err = solve_smm(&p, &LoConfig::default(), &OuterConfig { tol: 1e-14, max_iters: 2, ..Default::default() })
            .unwrap_err();
        match err {
            Error::OuterNotConverged { iterations, history, .. } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            e => panic!("unexpected {e}"),
        }
    }
}
