//! Benchmark cases: manufactured solution, thick diffusion limit and the
//! crooked pipe, plus CSV and post-processing helpers.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::angular_quad::SnQuadrature;
use crate::dg_space::{l2_error, l2_error_vector, lineout_points};
use crate::driver::{solve_smm, OuterConfig, SmmSolution};
use crate::error::{Error, Result};
use crate::lo_diffusion::{BoundaryMode, IpMode, LoConfig, LoMethod, Variant};
use crate::mesh::{BoundaryTag, BoundingBox, Mesh, Region, RegionMap, SideTags};
use crate::problem::{AngularFn, Material, ProblemSpec, INV_FOUR_PI};

/// P1, consistent LDG and IP with both boundary treatments, and the two
/// independent variants.
pub fn standard_methods() -> Vec<LoConfig> {
    vec![
        LoConfig::new(LoMethod::P1, Variant::Consistent, BoundaryMode::Half),
        LoConfig::new(LoMethod::Ldg, Variant::Consistent, BoundaryMode::Full),
        LoConfig::new(LoMethod::Ldg, Variant::Consistent, BoundaryMode::Half),
        LoConfig::new(LoMethod::Ldg, Variant::Independent, BoundaryMode::Full),
        LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Full),
        LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Half),
        LoConfig::new(LoMethod::Ip, Variant::Independent, BoundaryMode::Full),
    ]
}

/// The standard list with the unmodified-penalty IP inserted after IP half.
pub fn diffusion_limit_methods() -> Vec<LoConfig> {
    let mut m = standard_methods();
    let mut plain = LoConfig::new(LoMethod::Ip, Variant::Consistent, BoundaryMode::Full);
    plain.ip_mode = IpMode::Plain;
    m.insert(6, plain);
    m
}

/// Parses labels of the form produced by [`LoConfig::label`]; `p1` alone is
/// accepted, as are `ldg-independent` and `ip-independent`.
pub fn parse_method(label: &str) -> Result<LoConfig> {
    let lower = label.trim().to_ascii_lowercase();
    let parts: Vec<&str> = lower.split('-').collect();
    let bad = || Error::Config(format!("unknown method label '{label}'"));
    let method = match parts.first().copied() {
        Some("p1") => LoMethod::P1,
        Some("ldg") => LoMethod::Ldg,
        Some("ip") => LoMethod::Ip,
        _ => return Err(bad()),
    };
    let variant = match parts.get(1).copied() {
        None | Some("consistent") => Variant::Consistent,
        Some("independent") => Variant::Independent,
        _ => return Err(bad()),
    };
    let bc = match (parts.get(2).copied(), variant) {
        (Some("half"), _) => BoundaryMode::Half,
        (Some("full"), _) => BoundaryMode::Full,
        (None, Variant::Independent) => BoundaryMode::Full,
        (None, Variant::Consistent) => BoundaryMode::Half,
        _ => return Err(bad()),
    };
    let mut cfg = LoConfig::new(method, variant, bc);
    match parts.get(3).copied() {
        None => {}
        Some("plain") if method == LoMethod::Ip => cfg.ip_mode = IpMode::Plain,
        _ => return Err(bad()),
    }
    if parts.len() > 4 {
        return Err(bad());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `Σ |v_{k+1} − v_k|`.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `log2(e_coarse / e_fine)`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

// ---------------------------------------------------------------------------
// Manufactured solution

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmsCase {
    pub delta: f64,
    pub sigma_t: f64,
    pub sigma_s: f64,
    pub sn: usize,
    pub tol: f64,
}

impl Default for MmsCase {
    fn default() -> Self {
        Self { delta: 0.05, sigma_t: 2.0, sigma_s: 1.9, sn: 4, tol: 1e-10 }
    }
}

impl MmsCase {
    fn k(&self) -> f64 {
        3.0 * PI / (1.0 + 2.0 * self.delta)
    }

    fn shifted(&self, x: f64, y: f64) -> f64 {
        let k = self.k();
        (k * (x + self.delta)).sin() * (k * (y + self.delta)).sin()
    }

    pub fn psi(&self, x: f64, y: f64, o: [f64; 3]) -> f64 {
        let a = (PI * x).sin() * (PI * y).sin();
        let b = (2.0 * PI * x).sin() * (2.0 * PI * y).sin();
        INV_FOUR_PI * (a + (o[0] + o[1]) * b / 2.0 + (o[0] * o[0] + o[1] * o[1]) * self.shifted(x, y) / 4.0 + 2.0)
    }

    pub fn phi(&self, x: f64, y: f64) -> f64 {
        (PI * x).sin() * (PI * y).sin() + self.shifted(x, y) / 6.0 + 2.0
    }

    pub fn current(&self, x: f64, y: f64) -> [f64; 2] {
        let b = (2.0 * PI * x).sin() * (2.0 * PI * y).sin() / 6.0;
        [b, b]
    }

    /// `Ω·∇ψ + σ_t ψ − σ_s φ / 4π`.
    pub fn source(&self, x: f64, y: f64, o: [f64; 3]) -> f64 {
        let k = self.k();
        let d = self.delta;
        let (sx, cx) = (PI * x).sin_cos();
        let (sy, cy) = (PI * y).sin_cos();
        let (s2x, c2x) = (2.0 * PI * x).sin_cos();
        let (s2y, c2y) = (2.0 * PI * y).sin_cos();
        let (skx, ckx) = (k * (x + d)).sin_cos();
        let (sky, cky) = (k * (y + d)).sin_cos();
        let lin = (o[0] + o[1]) / 2.0;
        let quad = (o[0] * o[0] + o[1] * o[1]) / 4.0;
        let dpx = PI * cx * sy + lin * 2.0 * PI * c2x * s2y + quad * k * ckx * sky;
        let dpy = PI * sx * cy + lin * 2.0 * PI * s2x * c2y + quad * k * skx * cky;
        INV_FOUR_PI * (o[0] * dpx + o[1] * dpy) + self.sigma_t * self.psi(x, y, o)
            - self.sigma_s * INV_FOUR_PI * self.phi(x, y)
    }

    pub fn problem(&self, n: usize) -> Result<ProblemSpec> {
        let mesh = Mesh::build_cartesian(n, n, BoundingBox::unit_square(), RegionMap::default(), SideTags::all_inflow())?;
        let c = *self;
        let q: AngularFn = Arc::new(move |x, y, o| c.source(x, y, o));
        let g: AngularFn = Arc::new(move |x, y, o| c.psi(x, y, o));
        ProblemSpec::new(
            mesh,
            SnQuadrature::level_symmetric(self.sn)?,
            vec![Material::new(self.sigma_t, self.sigma_s, 0.0)],
            Some(q),
            Some(g),
        )
    }
}

/// One (method, mesh) entry of the MMS and consistency tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmsRow {
    pub method: String,
    pub n: usize,
    pub h: f64,
    pub phi_error: f64,
    pub current_error: f64,
    pub phi_consistency: f64,
    pub current_consistency: f64,
    pub iterations: usize,
    pub status: String,
}

impl MmsRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderRow {
    pub method: String,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub phi_order: f64,
    pub current_order: f64,
}

/// Runs every method on every `n × n` mesh; failures are recorded in the
/// row status and the remaining rows still run.
pub fn run_mms(case: &MmsCase, sizes: &[usize], methods: &[LoConfig], outer: &OuterConfig) -> Vec<MmsRow> {
    let mut rows = Vec::new();
    for cfg in methods {
        for &n in sizes {
            let mut row = MmsRow {
                method: cfg.label(),
                n,
                h: 1.0 / n as f64,
                phi_error: f64::NAN,
                current_error: f64::NAN,
                phi_consistency: f64::NAN,
                current_consistency: f64::NAN,
                iterations: 0,
                status: "ok".into(),
            };
            let result = case.problem(n).and_then(|spec| {
                let sol = solve_smm(&spec, cfg, outer)?;
                Ok((spec, sol))
            });
            match result {
                Ok((spec, sol)) => {
                    row.phi_error = l2_error(&spec.mesh, &sol.phi, |x, y| case.phi(x, y));
                    row.current_error = l2_error_vector(&spec.mesh, &sol.current, |x, y| case.current(x, y));
                    let (cp, cj) = sol.consistency(&spec);
                    row.phi_consistency = cp;
                    row.current_consistency = cj;
                    row.iterations = sol.iterations();
                }
                Err(e) => row.status = e.to_string(),
            }
            log::info!("mms {} n={} phi_err={:.3e} J_err={:.3e}", row.method, n, row.phi_error, row.current_error);
            rows.push(row);
        }
    }
    rows
}

/// Consistency table; the same runs as [`run_mms`], whose rows carry the
/// `‖φ − φ_HO‖` and `‖J − J_HO‖` columns.
pub fn run_consistency(case: &MmsCase, sizes: &[usize], methods: &[LoConfig], outer: &OuterConfig) -> Vec<MmsRow> {
    run_mms(case, sizes, methods, outer)
}

/// Orders from successive mesh pairs of each method.
pub fn observed_orders(rows: &[MmsRow]) -> Vec<OrderRow> {
    let mut out = Vec::new();
    for pair in rows.windows(2) {
        let (c, f) = (&pair[0], &pair[1]);
        if c.method != f.method || !c.ok() || !f.ok() {
            continue;
        }
        out.push(OrderRow {
            method: c.method.clone(),
            n_coarse: c.n,
            n_fine: f.n,
            phi_order: observed_order(c.phi_error, f.phi_error),
            current_order: observed_order(c.current_error, f.current_error),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Thick diffusion limit

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLimitCase {
    pub epsilon: f64,
    pub n: usize,
    pub sn: usize,
    pub tol: f64,
}

impl DiffusionLimitCase {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, n: 8, sn: 4, tol: 1e-6 }
    }

    /// `σ_t = 1/ε`, `σ_s = 1/ε − ε`, isotropic `q = ε`, vacuum boundaries.
    pub fn problem(&self) -> Result<ProblemSpec> {
        let eps = self.epsilon;
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {eps}")));
        }
        let mesh =
            Mesh::build_cartesian(self.n, self.n, BoundingBox::unit_square(), RegionMap::default(), SideTags::all_inflow())?;
        let mat = Material::new(1.0 / eps, 1.0 / eps - eps, eps * INV_FOUR_PI);
        ProblemSpec::new(mesh, SnQuadrature::level_symmetric(self.sn)?, vec![mat], None, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRow {
    pub method: String,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionLineoutRow {
    pub method: String,
    pub epsilon: f64,
    pub x: f64,
    pub phi: f64,
}

/// Iteration counts per (method, ε) and scalar flux lineouts along
/// `y = 0.5`. Non-convergence is recorded, not raised.
pub fn run_diffusion_limit(
    epsilons: &[f64],
    methods: &[LoConfig],
    n: usize,
    max_iters: usize,
) -> (Vec<IterationRow>, Vec<DiffusionLineoutRow>) {
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for cfg in methods {
        for &eps in epsilons {
            let case = DiffusionLimitCase { n, ..DiffusionLimitCase::new(eps) };
            let outer = OuterConfig { tol: case.tol, max_iters, ..OuterConfig::default() };
            let mut row =
                IterationRow { method: cfg.label(), epsilon: eps, iterations: 0, converged: false, status: "ok".into() };
            match case.problem().and_then(|spec| solve_smm(&spec, cfg, &outer).map(|s| (spec, s))) {
                Ok((spec, sol)) => {
                    row.iterations = sol.iterations();
                    row.converged = true;
                    for (_, x, y) in lineout_points([0.0, 0.5], [1.0, 0.5], 4 * n + 1) {
                        lines.push(DiffusionLineoutRow {
                            method: cfg.label(),
                            epsilon: eps,
                            x,
                            phi: sol.phi.eval(&spec.mesh, x, y),
                        });
                    }
                }
                Err(Error::OuterNotConverged { iterations, .. }) => {
                    row.iterations = iterations;
                    row.status = "not converged".into();
                }
                Err(Error::InnerFailure { iteration, source, .. }) => {
                    row.iterations = iteration;
                    row.status = format!("not converged: {source}");
                }
                Err(e) => row.status = e.to_string(),
            }
            log::info!("diffusion {} eps={eps:e}: {} ({})", row.method, row.iterations, row.status);
            rows.push(row);
        }
    }
    (rows, lines)
}

// ---------------------------------------------------------------------------
// Crooked pipe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeMesh {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeMaterial {
    pub sigma_t: f64,
    pub sigma_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeMaterials {
    pub pipe: PipeMaterial,
    pub wall: PipeMaterial,
    /// Total isotropic volumetric source, everywhere.
    pub source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeInflow {
    /// Incident angular flux on the left boundary for `y ≤ y_max`.
    pub value: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeTolerances {
    pub outer: f64,
    pub inner: f64,
    pub max_outer: usize,
}

impl Default for PipeTolerances {
    fn default() -> Self {
        Self { outer: 1e-6, inner: 1e-10, max_outer: 500 }
    }
}

/// Crooked pipe definition, read from TOML. The pipe interior is the union
/// of `pipe` boxes; everything else is wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrookedPipeCase {
    pub mesh: PipeMesh,
    pub sn: usize,
    pub materials: PipeMaterials,
    pub inflow: PipeInflow,
    #[serde(default)]
    pub tolerances: PipeTolerances,
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default)]
    pub lineout_points: Option<usize>,
    pub pipe: Vec<BoundingBox>,
}

pub const DEFAULT_CROOKED_PIPE: &str = include_str!("../../../configs/crooked_pipe.toml");

impl CrookedPipeCase {
    pub fn from_toml(text: &str) -> Result<Self> {
        let case: Self = toml::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn default_case() -> Self {
        Self::from_toml(DEFAULT_CROOKED_PIPE).expect("shipped crooked pipe config parses")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("pipe", self.materials.pipe), ("wall", self.materials.wall)] {
            if !(m.sigma_t > 0.0 && m.sigma_a >= 0.0 && m.sigma_a <= m.sigma_t) {
                return Err(Error::Config(format!("{name} material needs 0 ≤ σ_a ≤ σ_t and σ_t > 0")));
            }
        }
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return Err(Error::Config("crooked pipe mesh must be nonempty".into()));
        }
        Ok(())
    }

    /// Mesh scaled by `2^level` in each direction (negative levels coarsen).
    pub fn with_refinement(&self, level: i32) -> Result<Self> {
        let mut c = self.clone();
        let scale = |n: usize| -> Result<usize> {
            let v = if level >= 0 { n << level } else { n >> (-level) };
            if v == 0 || (level < 0 && v << (-level) != n) {
                return Err(Error::Config(format!("cannot coarsen {n} elements by 2^{}", -level)));
            }
            Ok(v)
        };
        c.mesh.nx = scale(self.mesh.nx)?;
        c.mesh.ny = scale(self.mesh.ny)?;
        Ok(c)
    }

    pub fn region_map(&self) -> RegionMap {
        RegionMap {
            regions: self.pipe.iter().map(|b| Region { bounds: *b, material: 0 }).collect(),
            default_material: 1,
        }
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let tags = SideTags { bottom: BoundaryTag::Reflecting, ..SideTags::all_inflow() };
        let mesh = Mesh::build_cartesian(
            self.mesh.nx,
            self.mesh.ny,
            BoundingBox::new(0.0, 0.0, self.mesh.width, self.mesh.height),
            self.region_map(),
            tags,
        )?;
        let q = self.materials.source * INV_FOUR_PI;
        let mat = |m: PipeMaterial| Material::new(m.sigma_t, m.sigma_t - m.sigma_a, q);
        let inflow = self.inflow.clone();
        let g: AngularFn =
            Arc::new(move |x, y, _| if x <= 1e-12 && y <= inflow.y_max + 1e-12 { inflow.value } else { 0.0 });
        ProblemSpec::new(
            mesh,
            SnQuadrature::level_symmetric(self.sn)?,
            vec![mat(self.materials.pipe), mat(self.materials.wall)],
            None,
            Some(g),
        )
    }

    pub fn method_list(&self) -> Result<Vec<LoConfig>> {
        if self.methods.is_empty() {
            return Ok(standard_methods());
        }
        self.methods.iter().map(|m| parse_method(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeRow {
    pub method: String,
    pub anderson: usize,
    pub iterations: usize,
    pub converged: bool,
    pub ho_balance: f64,
    pub lo_balance: f64,
    pub current_tv: f64,
    /// `max |J_LO| − |J_HO|` over the lineout.
    pub lineout_current_gap: f64,
    pub inner_iterations: usize,
    pub seconds: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeLineoutRow {
    pub method: String,
    pub anderson: usize,
    pub x: f64,
    pub phi_lo: f64,
    pub phi_ho: f64,
    pub current_lo: f64,
    pub current_ho: f64,
}

/// `(x, φ_LO, φ_HO, |J_LO|, |J_HO|)` along the reflecting plane `y = 0`,
/// sampled away from element faces.
pub fn pipe_lineout(spec: &ProblemSpec, sol: &SmmSolution, m: usize) -> Vec<[f64; 5]> {
    let width = spec.mesh.bbox.width();
    (0..m)
        .map(|k| {
            let x = (k as f64 + 0.5) * width / m as f64;
            let mesh = &spec.mesh;
            let jl = sol.current.eval(mesh, x, 0.0);
            let jh = sol.current_ho.eval(mesh, x, 0.0);
            [
                x,
                sol.phi.eval(mesh, x, 0.0),
                sol.phi_ho.eval(mesh, x, 0.0),
                jl[0].hypot(jl[1]),
                jh[0].hypot(jh[1]),
            ]
        })
        .collect()
}

/// Runs each method on the crooked pipe with the given Anderson depth.
pub fn run_crooked_pipe(
    case: &CrookedPipeCase,
    methods: &[LoConfig],
    anderson: usize,
    history_dir: Option<&Path>,
) -> Result<(Vec<PipeRow>, Vec<PipeLineoutRow>)> {
    let spec = case.problem()?;
    let m = case.lineout_points.unwrap_or(4 * case.mesh.nx);
    let mut outer = OuterConfig {
        tol: case.tolerances.outer,
        max_iters: case.tolerances.max_outer,
        anderson_depth: anderson,
        history_csv: None,
    };
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for cfg in methods {
        let mut cfg = cfg.clone();
        cfg.inner_tol = case.tolerances.inner;
        outer.history_csv = history_dir.map(|d| d.join(format!("iterations_{}_m{anderson}.csv", cfg.label())));
        let start = Instant::now();
        let mut row = PipeRow {
            method: cfg.label(),
            anderson,
            iterations: 0,
            converged: false,
            ho_balance: f64::NAN,
            lo_balance: f64::NAN,
            current_tv: f64::NAN,
            lineout_current_gap: f64::NAN,
            inner_iterations: 0,
            seconds: 0.0,
            status: "ok".into(),
        };
        match solve_smm(&spec, &cfg, &outer) {
            Ok(sol) => {
                let lo = pipe_lineout(&spec, &sol, m);
                row.iterations = sol.iterations();
                row.converged = true;
                row.ho_balance = sol.ho_balance();
                row.lo_balance = sol.lo_balance();
                row.inner_iterations = sol.records.iter().map(|r| r.inner_iterations).sum();
                row.current_tv = total_variation(&lo.iter().map(|p| p[3]).collect::<Vec<_>>());
                row.lineout_current_gap = lo.iter().map(|p| (p[3] - p[4]).abs()).fold(0.0, f64::max);
                for p in lo {
                    lines.push(PipeLineoutRow {
                        method: cfg.label(),
                        anderson,
                        x: p[0],
                        phi_lo: p[1],
                        phi_ho: p[2],
                        current_lo: p[3],
                        current_ho: p[4],
                    });
                }
            }
            Err(Error::OuterNotConverged { iterations, .. }) => {
                row.iterations = iterations;
                row.status = "not converged".into();
            }
            Err(e) => row.status = e.to_string(),
        }
        row.seconds = start.elapsed().as_secs_f64();
        log::info!("pipe {} m={anderson}: {} iterations in {:.1}s ({})", row.method, row.iterations, row.seconds, row.status);
        rows.push(row);
    }
    Ok((rows, lines))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Forward-mode dual number for exact derivatives of the manufactured ψ.
    #[derive(Clone, Copy)]
    struct Dual(f64, f64);

    impl Dual {
        fn sin(self) -> Dual {
            Dual(self.0.sin(), self.1 * self.0.cos())
        }
        fn add(self, o: Dual) -> Dual {
            Dual(self.0 + o.0, self.1 + o.1)
        }
        fn mul(self, o: Dual) -> Dual {
            Dual(self.0 * o.0, self.1 * o.0 + self.0 * o.1)
        }
        fn scale(self, s: f64) -> Dual {
            Dual(self.0 * s, self.1 * s)
        }
        fn shift(self, s: f64) -> Dual {
            Dual(self.0 + s, self.1)
        }
    }

    /// Independent transcription of the manufactured angular flux.
    fn psi_dual(x: Dual, y: Dual, o: [f64; 3], delta: f64) -> Dual {
        let k = 3.0 * PI / (1.0 + 2.0 * delta);
        let t1 = x.scale(PI).sin().mul(y.scale(PI).sin());
        let t2 = x.scale(2.0 * PI).sin().mul(y.scale(2.0 * PI).sin()).scale((o[0] + o[1]) / 2.0);
        let t3 = x.shift(delta).scale(k).sin().mul(y.shift(delta).scale(k).sin()).scale((o[0] * o[0] + o[1] * o[1]) / 4.0);
        t1.add(t2).add(t3).shift(2.0).scale(1.0 / (4.0 * PI))
    }

    #[test]
    fn manufactured_source_satisfies_transport_equation() {
        use rand::{Rng, SeedableRng};
        let c = MmsCase::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(63);
        for _ in 0..200 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            let mu: f64 = rng.gen_range(-1.0..1.0);
            let az: f64 = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - mu * mu).sqrt();
            let o = [s * az.cos(), s * az.sin(), mu];
            let dx = psi_dual(Dual(x, 1.0), Dual(y, 0.0), o, c.delta);
            let dy = psi_dual(Dual(x, 0.0), Dual(y, 1.0), o, c.delta);
            assert!((dx.0 - c.psi(x, y, o)).abs() < 1e-14);
            let residual = o[0] * dx.1 + o[1] * dy.1 + c.sigma_t * dx.0 - c.sigma_s * c.phi(x, y) / (4.0 * PI)
                - c.source(x, y, o);
            assert!(residual.abs() <= 1e-12, "{residual:e}");
        }
    }

    #[test]
    fn manufactured_moments_match_quadrature() {
        let c = MmsCase::default();
        let q = SnQuadrature::level_symmetric(4).unwrap();
        for &(x, y) in &[(0.1, 0.7), (0.5, 0.5), (0.93, 0.02)] {
            assert!((q.integrate(|o| c.psi(x, y, o)) - c.phi(x, y)).abs() < 1e-13);
            let j = c.current(x, y);
            assert!((q.integrate(|o| o[0] * c.psi(x, y, o)) - j[0]).abs() < 1e-13);
            assert!((q.integrate(|o| o[1] * c.psi(x, y, o)) - j[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn method_labels_round_trip() {
        for cfg in diffusion_limit_methods() {
            assert_eq!(parse_method(&cfg.label()).unwrap(), cfg);
        }
        assert_eq!(parse_method("p1").unwrap().method, LoMethod::P1);
        assert_eq!(parse_method("ldg-independent").unwrap().bc, BoundaryMode::Full);
        assert!(parse_method("ldg-independent-half").is_err());
        assert!(parse_method("cg").is_err());
        assert!(parse_method("ldg-consistent-half-plain").is_err());
    }

    #[test]
    fn total_variation_and_orders() {
        assert_eq!(total_variation(&[0.0, 1.0, 0.5, 0.5, 2.0]), 3.0);
        assert_eq!(total_variation(&[1.0]), 0.0);
        assert!((observed_order(4.0, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn diffusion_case_materials() {
        let p = DiffusionLimitCase::new(1e-3).problem().unwrap();
        let m = p.materials[0];
        assert!((m.sigma_a() - 1e-3).abs() < 1e-12);
        assert!(DiffusionLimitCase::new(0.0).problem().is_err());
    }

    #[test]
    fn shipped_pipe_config() {
        let c = CrookedPipeCase::default_case();
        assert_eq!((c.mesh.nx, c.mesh.ny, c.sn), (224, 64, 12));
        assert_eq!(c.materials.wall.sigma_t / c.materials.pipe.sigma_t, 1000.0);
        let half = c.with_refinement(-1).unwrap();
        assert_eq!((half.mesh.nx, half.mesh.ny), (112, 32));
        assert!(c.with_refinement(-7).is_err());
        // Mesh aligned: every element is entirely pipe or entirely wall, and
        // the pipe touches both the inlet and the outlet on y = 0.
        let spec = CrookedPipeCase { sn: 2, ..half }.problem().unwrap();
        let mesh = &spec.mesh;
        assert_eq!(mesh.elements[0].material, 0);
        assert_eq!(mesh.elements[mesh.nx - 1].material, 0);
        assert_eq!(mesh.elements[mesh.nx * (mesh.ny - 1)].material, 1);
        assert!(spec.mesh.has_reflecting());
    }

    #[test]
    fn bad_pipe_config_is_rejected() {
        let text = DEFAULT_CROOKED_PIPE.replace("sigma_a = 1e-3", "sigma_a = 1e3");
        assert!(CrookedPipeCase::from_toml(&text).is_err());
        assert!(CrookedPipeCase::from_toml("sn = 4").is_err());
    }
}
