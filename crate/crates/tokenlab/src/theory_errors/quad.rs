//! Nodes for `E[h(sZ + e)]`, `Z ~ N(0, 1)`, where `h` is built from the
//! proximal map of a loss with step `τ`.
//!
//! Gauss-Hermite is used while `s` is small. For the logistic loss at large
//! `s` the integrand bends sharply near `y(sZ + e) ≈ −τ` and `≈ 0`, which a
//! fixed Hermite rule cannot resolve, so the real line is cut into
//! Gauss-Legendre panels that are refined around both bends.

use crate::error::Result;
use crate::losses::{loss_eval, prox_from, LossKind, LossSpec};
use crate::numerics::{gauss_hermite, normal_pdf, QuadratureRule};

/// Largest `s` handled by the Hermite rule.
const HERMITE_MAX_SCALE: f64 = 2.0;
/// Panels cover `|Z| ≤ Z_MAX`; the mass outside is below 1e-16.
const Z_MAX: f64 = 8.5;

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

pub(crate) struct ZRule {
    hermite: QuadratureRule,
}

impl ZRule {
    pub(crate) fn new(gh_order: usize) -> Result<Self> {
        Ok(Self {
            hermite: gauss_hermite(gh_order)?,
        })
    }

    /// Fills `out` with `(z, weight)` pairs in increasing `z`.
    pub(crate) fn nodes(&self, loss: LossSpec, s: f64, e: f64, y: f64, tau: f64, out: &mut Vec<(f64, f64)>) {
        out.clear();
        if loss.kind == LossKind::Quadratic || s <= HERMITE_MAX_SCALE {
            out.extend(self.hermite.nodes.iter().copied().zip(self.hermite.weights.iter().copied()));
            return;
        }
        let mut cuts: Vec<f64> = (0..=17).map(|i| -Z_MAX + i as f64).step_by(2).collect();
        cuts.push(Z_MAX);
        let inside = |z: f64| z > -Z_MAX && z < Z_MAX;
        // In `v = y(sZ + e)` the bends sit near `−τ − ln τ` and `ln τ` and
        // carry structure on the unit scale for a few units either side.
        let shoulder = (1.0 + tau).ln();
        for centre in [-tau - shoulder, shoulder] {
            for k in -3..=3 {
                let z = (y * (centre + 3.0 * k as f64) - e) / s;
                if inside(z) {
                    cuts.push(z);
                }
            }
        }
        // The stretch between the bends varies on the scale of τ.
        for k in 1..8 {
            let z = (-y * tau * k as f64 / 8.0 - e) / s;
            if inside(z) {
                cuts.push(z);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (i, sign) in [(3usize, -1.0), (2, -1.0), (1, -1.0), (0, -1.0), (0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)] {
                let z = mid + sign * half * GL8_NODES[i];
                out.push((z, half * GL8_WEIGHTS[i] * normal_pdf(z)));
            }
        }
    }
}

/// Proximal points along increasing arguments, each solve seeded by a
/// first-order extrapolation from the previous one.
pub(crate) struct ProxWalk {
    loss: LossSpec,
    y: f64,
    tau: f64,
    last: Option<(f64, f64, f64)>,
}

impl ProxWalk {
    pub(crate) fn new(loss: LossSpec, y: f64, tau: f64) -> Self {
        Self { loss, y, tau, last: None }
    }

    pub(crate) fn at(&mut self, x: f64) -> Result<f64> {
        let guess = self.last.map_or(f64::NAN, |(px, pt, slope)| pt + slope * (x - px));
        let t = prox_from(self.loss, self.y, x, self.tau, guess)?;
        let slope = 1.0 / (1.0 + self.tau * loss_eval(self.loss, t, self.y).d2);
        self.last = Some((x, t, slope));
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::prox;

    fn expect(rule: &ZRule, s: f64, e: f64, y: f64, tau: f64) -> f64 {
        let mut nodes = Vec::new();
        rule.nodes(LossSpec::LOGISTIC, s, e, y, tau, &mut nodes);
        nodes
            .iter()
            .map(|&(z, w)| {
                let t = prox(LossSpec::LOGISTIC, y, s * z + e, tau).unwrap();
                w * loss_eval(LossSpec::LOGISTIC, t, y).d1.powi(2)
            })
            .sum()
    }

    #[test]
    fn panels_integrate_the_gaussian() {
        let rule = ZRule::new(64).unwrap();
        let mut nodes = Vec::new();
        for (s, e, tau) in [(3.0, 0.5, 2.0), (50.0, -7.0, 500.0), (200.0, 40.0, 1e4)] {
            rule.nodes(LossSpec::LOGISTIC, s, e, 1.0, tau, &mut nodes);
            let (m0, m2): (f64, f64) = nodes.iter().fold((0.0, 0.0), |a, &(z, w)| (a.0 + w, a.1 + w * z * z));
            assert!((m0 - 1.0).abs() < 1e-11 && (m2 - 1.0).abs() < 1e-11, "{m0} {m2}");
            assert!(nodes.windows(2).all(|p| p[0].0 < p[1].0));
        }
    }

    #[test]
    fn sharp_integrands_converge() {
        // Against a brute-force midpoint rule on a fine grid.
        let rule = ZRule::new(64).unwrap();
        for (s, e, y, tau) in [(50.0, -7.0, 1.0, 500.0), (20.0, 3.0, -1.0, 40.0), (2.0, 0.3, 1.0, 1.0), (2.5, 0.3, 1.0, 8.0), (8.0, -1.0, -1.0, 3.0)] {
            let n = 400_000;
            let h = 2.0 * Z_MAX / n as f64;
            let brute: f64 = (0..n)
                .map(|i| {
                    let z = -Z_MAX + (i as f64 + 0.5) * h;
                    let t = prox(LossSpec::LOGISTIC, y, s * z + e, tau).unwrap();
                    h * normal_pdf(z) * loss_eval(LossSpec::LOGISTIC, t, y).d1.powi(2)
                })
                .sum();
            let got = expect(&rule, s, e, y, tau);
            assert!((got - brute).abs() < 1e-8, "{s} {tau}: {got} vs {brute}");
        }
    }
}
