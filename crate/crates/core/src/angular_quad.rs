//! Level-symmetric S_N quadrature, folded to the upper hemisphere for 2D
//! problems.
//!
//! Point sets are generated from the first direction cosine `mu_1` and the
//! per-class point weights of the classic LQ_n tables. The remaining cosines
//! follow `mu_i^2 = mu_1^2 + (i - 1) * 2 (1 - 3 mu_1^2) / (N - 2)`, which makes
//! every direction exactly unit length. Weights are renormalised so the full
//! sphere sums to 4π; the second-moment condition then holds to round-off
//! by permutation symmetry.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `(N, mu_1, class weights)` with weights normalised to one octant.
const LQN_TABLE: &[(usize, f64, &[f64])] = &[
    (2, 0.577_350_3, &[1.0]),
    (4, 0.350_021_2, &[0.333_333_3]),
    (6, 0.266_635_5, &[0.176_126_3, 0.157_207_1]),
    (8, 0.218_217_9, &[0.120_987_7, 0.090_740_7, 0.092_592_6]),
    (12, 0.167_212_6, &[0.070_762_6, 0.055_881_1, 0.037_337_7, 0.050_281_9, 0.025_851_3]),
    (
        16,
        0.138_956_8,
        &[0.048_987_2, 0.041_329_6, 0.021_232_6, 0.025_620_7, 0.036_048_6, 0.014_458_9, 0.034_495_8, 0.008_517_9],
    ),
];

/// Orders with tabulated level-symmetric sets.
pub fn supported_orders() -> Vec<usize> {
    LQN_TABLE.iter().map(|t| t.0).collect()
}

/// Weight class of the octant point with level indices `{i, j, k}` (1-based).
fn weight_class(order: usize, mut levels: [usize; 3]) -> usize {
    levels.sort_unstable();
    let class = match (order, levels) {
        (2, _) | (4, _) => 1,
        (6, [1, 1, 3]) => 1,
        (6, [1, 2, 2]) => 2,
        (8, [1, 1, 4]) => 1,
        (8, [1, 2, 3]) => 2,
        (8, [2, 2, 2]) => 3,
        (12, [1, 1, 6]) => 1,
        (12, [1, 2, 5]) => 2,
        (12, [1, 3, 4]) => 3,
        (12, [2, 2, 4]) => 4,
        (12, [2, 3, 3]) => 5,
        (16, [1, 1, 8]) => 1,
        (16, [1, 2, 7]) => 2,
        (16, [1, 3, 6]) => 3,
        (16, [1, 4, 5]) => 4,
        (16, [2, 2, 6]) => 5,
        (16, [2, 3, 5]) => 6,
        (16, [2, 4, 4]) => 7,
        (16, [3, 3, 4]) => 8,
        _ => unreachable!("no weight class for S{order} levels {levels:?}"),
    };
    class - 1
}

/// Folded discrete-ordinates set: directions with `Ω_z > 0` carry the
/// weight of their `±Ω_z` pair.
#[derive(Debug, Clone)]
pub struct SnQuadrature {
    pub order: usize,
    /// Unit 3-vectors.
    pub directions: Vec<[f64; 3]>,
    /// Weights summing to 4π.
    pub weights: Vec<f64>,
}

impl SnQuadrature {
    pub fn level_symmetric(order: usize) -> Result<Self> {
        let &(_, mu1, class_weights) = LQN_TABLE
            .iter()
            .find(|t| t.0 == order)
            .ok_or_else(|| Error::UnsupportedOrder { order, supported: supported_orders() })?;

        let half = order / 2;
        let mu: Vec<f64> = if order == 2 {
            vec![(1.0f64 / 3.0).sqrt()]
        } else {
            let delta = 2.0 * (1.0 - 3.0 * mu1 * mu1) / (order as f64 - 2.0);
            (0..half).map(|i| (mu1 * mu1 + i as f64 * delta).sqrt()).collect()
        };

        // One octant, then reflect into the four Ω_z > 0 octants.
        let mut octant = Vec::new();
        for i in 1..=half {
            for j in 1..=half {
                if i + j > half + 1 {
                    continue;
                }
                let k = half + 2 - i - j;
                let w = class_weights[weight_class(order, [i, j, k])];
                octant.push(([mu[i - 1], mu[j - 1], mu[k - 1]], w));
            }
        }

        let mut directions = Vec::with_capacity(4 * octant.len());
        let mut weights = Vec::with_capacity(4 * octant.len());
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            for &(d, w) in &octant {
                directions.push([sx * d[0], sy * d[1], d[2]]);
                weights.push(2.0 * w);
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w *= 4.0 * PI / total;
        }
        Ok(Self { order, directions, weights })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// In-plane components of direction `d`.
    pub fn omega(&self, d: usize) -> [f64; 2] {
        [self.directions[d][0], self.directions[d][1]]
    }

    /// `α(n) = Σ w |Ω·n| / Σ w`, the half-range normalisation factor.
    pub fn alpha(&self, n: [f64; 2]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let abs: f64 = self
            .directions
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| w * (d[0] * n[0] + d[1] * n[1]).abs())
            .sum();
        abs / total
    }

    /// Index of the direction mirrored through a plane with unit normal `n`:
    /// `Ω − 2 (Ω·n) n`.
    pub fn mirror(&self, d: usize, n: [f64; 2]) -> Option<usize> {
        let o = self.directions[d];
        let on = o[0] * n[0] + o[1] * n[1];
        let target = [o[0] - 2.0 * on * n[0], o[1] - 2.0 * on * n[1], o[2]];
        self.directions.iter().position(|p| {
            (p[0] - target[0]).abs() < 1e-12 && (p[1] - target[1]).abs() < 1e-12 && (p[2] - target[2]).abs() < 1e-12
        })
    }

    /// `Σ w f(Ω)`.
    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        self.directions.iter().zip(&self.weights).map(|(&d, w)| w * f(d)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_invariants(q: &SnQuadrature) {
        let four_pi = 4.0 * PI;
        for d in &q.directions {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
            assert!(d[2] > 0.0);
        }
        assert!(q.weights.iter().all(|&w| w > 0.0));
        assert!((q.weights.iter().sum::<f64>() - four_pi).abs() < 1e-12);
        for k in 0..2 {
            assert!(q.integrate(|o| o[k]).abs() < 1e-13);
        }
        for r in 0..3 {
            for c in 0..3 {
                let m = q.integrate(|o| o[r] * o[c]);
                let expect = if r == c { four_pi / 3.0 } else { 0.0 };
                assert!((m - expect).abs() < 1e-12, "S{} moment ({r},{c}) = {m}", q.order);
            }
        }
    }

    #[test]
    fn s2_set() {
        let q = SnQuadrature::level_symmetric(2).unwrap();
        assert_eq!(q.len(), 4);
        let a = 1.0 / 3.0f64.sqrt();
        for (d, w) in q.directions.iter().zip(&q.weights) {
            assert!((d[0].abs() - a).abs() < 1e-15 && (d[1].abs() - a).abs() < 1e-15);
            assert!((w - PI).abs() < 1e-14);
        }
    }

    #[test]
    fn all_orders_satisfy_invariants() {
        for n in supported_orders() {
            let q = SnQuadrature::level_symmetric(n).unwrap();
            assert_eq!(q.len(), n * (n + 2) / 2);
            check_invariants(&q);
        }
        assert_eq!(SnQuadrature::level_symmetric(4).unwrap().len(), 12);
        assert_eq!(SnQuadrature::level_symmetric(12).unwrap().len(), 84);
    }

    #[test]
    fn unsupported_order_lists_supported() {
        match SnQuadrature::level_symmetric(10) {
            Err(Error::UnsupportedOrder { order, supported }) => {
                assert_eq!(order, 10);
                assert!(supported.contains(&12));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_values() {
        let s4 = SnQuadrature::level_symmetric(4).unwrap();
        let a = s4.alpha([1.0, 0.0]);
        assert!(a > 0.45 && a < 0.55, "alpha = {a}");
        assert!((a - s4.alpha([0.0, 1.0])).abs() < 1e-14);
        assert!((a - s4.alpha([-1.0, 0.0])).abs() < 1e-14);
        // Converges towards the exact value 1/2 with the order.
        let s16 = SnQuadrature::level_symmetric(16).unwrap();
        assert!((s16.alpha([1.0, 0.0]) - 0.5).abs() < (a - 0.5).abs());
    }

    #[test]
    fn mirrors_exist_for_every_direction() {
        for n in supported_orders() {
            let q = SnQuadrature::level_symmetric(n).unwrap();
            for d in 0..q.len() {
                let m = q.mirror(d, [0.0, -1.0]).expect("mirror exists");
                assert_eq!(q.mirror(m, [0.0, -1.0]), Some(d));
                assert!((q.weights[m] - q.weights[d]).abs() < 1e-15);
            }
        }
    }
}
