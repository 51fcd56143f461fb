//! Problem definition: mesh, quadrature, materials, sources and boundary
//! data, plus the discrete data derived from them once (element matrices,
//! source loads, inflow values at face quadrature points).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::angular_quad::SnQuadrature;
use crate::dg_space::{basis, face_rule, ElementMatrices, QuadratureRule, RefMatrices, FACE_POINTS, NODES};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh, Side};

/// Per-material cross sections (1/cm) and isotropic angular source.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Material {
    pub sigma_t: f64,
    pub sigma_s: f64,
    /// Isotropic angular source `q` (per steradian).
    #[serde(default)]
    pub source: f64,
}

impl Material {
    pub fn new(sigma_t: f64, sigma_s: f64, source: f64) -> Self {
        Self { sigma_t, sigma_s, source }
    }

    pub fn sigma_a(&self) -> f64 {
        self.sigma_t - self.sigma_s
    }
}

/// A function of position and direction, `f(x, y, Ω)`.
pub type AngularFn = Arc<dyn Fn(f64, f64, [f64; 3]) -> f64 + Send + Sync>;

/// Complete definition of a fixed-source transport problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub mesh: Mesh,
    pub quadrature: SnQuadrature,
    pub materials: Vec<Material>,
    /// Optional anisotropic volumetric source added to the material sources.
    pub extra_source: Option<AngularFn>,
    /// Inflow angular flux on `Inflow`-tagged faces; `None` means vacuum.
    pub inflow: Option<AngularFn>,
    derived: Arc<Derived>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("nx", &self.mesh.nx)
            .field("ny", &self.mesh.ny)
            .field("order", &self.quadrature.order)
            .field("materials", &self.materials)
            .field("extra_source", &self.extra_source.is_some())
            .field("inflow", &self.inflow.is_some())
            .finish()
    }
}

/// Data computed once from the problem definition.
pub(crate) struct Derived {
    pub element: Vec<ElementMatrices>,
    /// `∫ b_i q_d` per direction, or `None` when every direction shares the
    /// isotropic load.
    pub direction_loads: Option<Vec<Vec<f64>>>,
    /// `∫ b_i q` for the isotropic material sources.
    pub isotropic_load: Vec<f64>,
    /// `ψ̄` at `[face][point][direction]` on inflow faces (zero for
    /// outgoing directions and reflecting faces).
    pub inflow_values: Vec<f64>,
    /// Mirror direction through the bottom plane, when reflecting.
    pub mirror: Option<Vec<usize>>,
    pub sweep_order: Vec<usize>,
}

impl ProblemSpec {
    pub fn new(
        mesh: Mesh,
        quadrature: SnQuadrature,
        materials: Vec<Material>,
        extra_source: Option<AngularFn>,
        inflow: Option<AngularFn>,
    ) -> Result<Self> {
        for (k, m) in materials.iter().enumerate() {
            if !(m.sigma_s >= 0.0 && m.sigma_t >= m.sigma_s) {
                return Err(Error::Config(format!(
                    "material {k}: need sigma_t >= sigma_s >= 0, got sigma_t={} sigma_s={}",
                    m.sigma_t, m.sigma_s
                )));
            }
        }
        if let Some(el) = mesh.elements.iter().find(|el| el.material >= materials.len()) {
            return Err(Error::Config(format!(
                "element material id {} has no material definition ({} given)",
                el.material,
                materials.len()
            )));
        }
        for side in [Side::Left, Side::Right, Side::Top] {
            if mesh.tags.get(side) == BoundaryTag::Reflecting {
                return Err(Error::Config(format!(
                    "reflecting boundaries are supported on the bottom (y = y0) side only, not {side:?}"
                )));
            }
        }
        let derived = Derived::build(&mesh, &quadrature, &materials, extra_source.as_ref(), inflow.as_ref())?;
        Ok(Self { mesh, quadrature, materials, extra_source, inflow, derived: Arc::new(derived) })
    }

    pub fn material(&self, e: usize) -> &Material {
        &self.materials[self.mesh.elements[e].material]
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    pub fn element_matrices(&self, e: usize) -> &ElementMatrices {
        &self.derived.element[e]
    }

    /// Source load `∫ b_i q_d` of direction `d` restricted to element `e`.
    pub fn source_load(&self, d: usize, e: usize) -> [f64; 4] {
        let src = match &self.derived.direction_loads {
            Some(loads) => &loads[d],
            None => &self.derived.isotropic_load,
        };
        let mut out = [0.0; 4];
        out.copy_from_slice(&src[NODES * e..NODES * e + NODES]);
        out
    }

    /// Inflow value `ψ̄` at boundary face `f`, face point `q`, direction `d`.
    pub fn inflow_value(&self, f: usize, q: usize, d: usize) -> f64 {
        self.derived.inflow_values[(f * FACE_POINTS + q) * self.quadrature.len() + d]
    }

    /// Mirror of direction `d` through the reflecting bottom plane.
    pub fn mirror(&self, d: usize) -> Option<usize> {
        self.derived.mirror.as_ref().map(|m| m[d])
    }

    /// Direction order for the sweep (reflected-into directions last).
    pub fn sweep_order(&self) -> &[usize] {
        &self.derived.sweep_order
    }

    /// Angular moments `(Q0, Q1)` of the volumetric source loads.
    pub fn source_moment_loads(&self) -> (Vec<f64>, [Vec<f64>; 2]) {
        let n = NODES * self.num_elements();
        let mut q0 = vec![0.0; n];
        let mut q1 = [vec![0.0; n], vec![0.0; n]];
        for d in 0..self.quadrature.len() {
            let w = self.quadrature.weights[d];
            let om = self.quadrature.omega(d);
            let load = match &self.derived.direction_loads {
                Some(loads) => &loads[d],
                None => &self.derived.isotropic_load,
            };
            for i in 0..n {
                q0[i] += w * load[i];
                q1[0][i] += w * om[0] * load[i];
                q1[1][i] += w * om[1] * load[i];
            }
        }
        (q0, q1)
    }
}

/// Directions with `Ω_y < 0` first so that reflected inflow on the bottom
/// plane is available when its mirror is swept.
pub fn reflecting_order(quadrature: &SnQuadrature, reflecting_bottom: bool) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    if !reflecting_bottom {
        return Ok(((0..quadrature.len()).collect(), None));
    }
    let n = [0.0, -1.0];
    let mut mirror = Vec::with_capacity(quadrature.len());
    for d in 0..quadrature.len() {
        let m = quadrature
            .mirror(d, n)
            .ok_or_else(|| Error::Config(format!("direction {d} has no mirror partner about y = 0")))?;
        mirror.push(m);
    }
    let mut order: Vec<usize> = (0..quadrature.len()).filter(|&d| quadrature.directions[d][1] < 0.0).collect();
    order.extend((0..quadrature.len()).filter(|&d| quadrature.directions[d][1] >= 0.0));
    Ok((order, Some(mirror)))
}

impl Derived {
    fn build(
        mesh: &Mesh,
        quadrature: &SnQuadrature,
        materials: &[Material],
        extra_source: Option<&AngularFn>,
        inflow: Option<&AngularFn>,
    ) -> Result<Self> {
        let reference = RefMatrices::new();
        let element: Vec<ElementMatrices> =
            mesh.elements.iter().map(|el| ElementMatrices::new(&reference, el)).collect();
        let n = NODES * mesh.num_elements();

        let mut isotropic_load = vec![0.0; n];
        for (e, el) in mesh.elements.iter().enumerate() {
            let q = materials[el.material].source;
            for i in 0..NODES {
                isotropic_load[NODES * e + i] = q * reference.load[i] * el.area();
            }
        }

        let direction_loads = extra_source.map(|f| {
            let rule = QuadratureRule::gauss(4).tensor();
            (0..quadrature.len())
                .map(|d| {
                    let omega = quadrature.directions[d];
                    let mut load = isotropic_load.clone();
                    for (e, el) in mesh.elements.iter().enumerate() {
                        for &(xi, eta, w) in &rule {
                            let [x, y] = el.map(xi, eta);
                            let b = basis(xi, eta);
                            let v = w * el.area() * f(x, y, omega);
                            for i in 0..NODES {
                                load[NODES * e + i] += v * b[i];
                            }
                        }
                    }
                    load
                })
                .collect()
        });

        let (t, _) = face_rule();
        let nd = quadrature.len();
        let mut inflow_values = vec![0.0; mesh.boundary_faces.len() * FACE_POINTS * nd];
        if let Some(g) = inflow {
            for (f, face) in mesh.boundary_faces.iter().enumerate() {
                if face.tag != BoundaryTag::Inflow {
                    continue;
                }
                for (q, &tq) in t.iter().enumerate() {
                    let x = face.endpoints[0][0] + tq * (face.endpoints[1][0] - face.endpoints[0][0]);
                    let y = face.endpoints[0][1] + tq * (face.endpoints[1][1] - face.endpoints[0][1]);
                    for d in 0..nd {
                        let om = quadrature.directions[d];
                        if om[0] * face.normal[0] + om[1] * face.normal[1] < 0.0 {
                            inflow_values[(f * FACE_POINTS + q) * nd + d] = g(x, y, om);
                        }
                    }
                }
            }
        }

        let (sweep_order, mirror) = reflecting_order(quadrature, mesh.tags.bottom == BoundaryTag::Reflecting)?;
        Ok(Self { element, direction_loads, isotropic_load, inflow_values, mirror, sweep_order })
    }
}

/// Scattering normalisation: isotropic emission per steradian is
/// `σ_s φ / (4π)` with quadrature weights summing to 4π.
pub const INV_FOUR_PI: f64 = 1.0 / (4.0 * PI);
