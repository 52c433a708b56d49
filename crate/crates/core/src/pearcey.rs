//! Pearcey-type integrals Q and P, their saddle points and leading-order
//! large-s asymptotics.
//!
//! ```text
//! Q(s) = 1/(2πi) ∫_{iℝ} exp(−μ⁴/4 + τμ²/2 + sμ) dμ
//! P(s) = 1/(2πi) ∫_{Σ}  exp( μ⁴/4 − τμ²/2 − sμ) dμ
//! ```
//!
//! s-derivatives are moments of the integrand, so `Q''' − τQ' = sQ` and
//! `P''' − τP' = −sP` hold up to quadrature error.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::quadrature::{ContourTag, Grid};

const REAL_TOL: f64 = 1e-10;
const TAIL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Q,
    P,
}

/// Values of Q or P and their s-derivatives at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearceyEval {
    pub s: f64,
    pub tau: f64,
    pub branch: Branch,
    /// Real parts, indexed by derivative order.
    pub values: Vec<f64>,
    /// Imaginary parts (quadrature noise), kept for diagnostics.
    pub imag: Vec<f64>,
}

impl PearceyEval {
    pub fn max_order(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, order: usize) -> f64 {
        self.values[order]
    }

    pub fn complex(&self, order: usize) -> C64 {
        C64::new(self.values[order], self.imag[order])
    }

    /// Largest `|Im| / (1 + |Re|)` over all orders.
    pub fn imag_ratio(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.imag)
            .map(|(re, im)| im.abs() / (1.0 + re.abs()))
            .fold(0.0, f64::max)
    }
}

fn moments(grid: &Grid, branch: Branch, s: f64, tau: f64, max_order: usize) -> Result<PearceyEval> {
    if max_order > 3 {
        return Err(Error::invalid(format!("max_order {max_order} exceeds 3")));
    }
    if !(s.is_finite() && tau.is_finite()) {
        return Err(Error::invalid("non-finite (s, tau)"));
    }
    let (tags, name): (&[ContourTag], _) = match branch {
        Branch::Q => (&[ContourTag::ImagAxis], "pearcey_q"),
        Branch::P => (
            &[ContourTag::SigmaPlus, ContourTag::SigmaMinus],
            "pearcey_p",
        ),
    };
    if !tags.iter().any(|t| grid.has_tag(*t)) {
        return Err(Error::invalid(format!(
            "{name}: grid has no nodes on the required contour"
        )));
    }
    let n = max_order + 1;
    let mut acc = vec![ZERO; n];
    let mut mass = vec![0.0; n];
    let mut tail = vec![0.0f64; n];
    let r_max = grid.truncation();
    for ((&mu, &w), tag) in grid.nodes().iter().zip(grid.weights()).zip(grid.tags()) {
        if !tags.contains(tag) {
            continue;
        }
        let mu2 = mu * mu;
        let (phase, factor) = match branch {
            Branch::Q => (-mu2 * mu2 / 4.0 + tau * mu2 / 2.0 + s * mu, mu),
            Branch::P => (mu2 * mu2 / 4.0 - tau * mu2 / 2.0 - s * mu, -mu),
        };
        let e = phase.exp();
        let mut term = e;
        // outermost panel of each ray: its last node approximates the endpoint
        let near_end = mu.norm() > 0.97 * r_max;
        for d in 0..n {
            acc[d] += term * w;
            mass[d] += term.norm() * w.norm();
            if near_end {
                tail[d] = tail[d].max(term.norm());
            }
            term *= factor;
        }
    }
    let scale = 1.0 / (2.0 * PI);
    let mut values = Vec::with_capacity(n);
    let mut imag = Vec::with_capacity(n);
    for d in 0..n {
        // (1/2πi)·z = (Im z − i Re z)/2π
        let v = C64::new(acc[d].im, -acc[d].re) * scale;
        values.push(v.re);
        imag.push(v.im);
        if tail[d] > TAIL_TOL * (mass[d] * scale).max(f64::MIN_POSITIVE) {
            return Err(Error::precision(
                name,
                format!(
                    "integrand tail {:.3e} at truncation {r_max} (order {d}, scale {:.3e})",
                    tail[d],
                    mass[d] * scale
                ),
            ));
        }
    }
    let eval = PearceyEval {
        s,
        tau,
        branch,
        values,
        imag,
    };
    let ratio = eval.imag_ratio();
    if ratio > REAL_TOL {
        return Err(Error::precision(
            name,
            format!("imaginary part {ratio:.3e} relative to the value"),
        ));
    }
    Ok(eval)
}

/// Q and its derivatives up to `max_order` (at most 3).
pub fn pearcey_q(s: f64, tau: f64, grid: &Grid, max_order: usize) -> Result<PearceyEval> {
    moments(grid, Branch::Q, s, tau, max_order)
}

/// P and its derivatives up to `max_order` (at most 3).
pub fn pearcey_p(s: f64, tau: f64, grid: &Grid, max_order: usize) -> Result<PearceyEval> {
    moments(grid, Branch::P, s, tau, max_order)
}

/// `|v₃ − τv₁ ∓ s·v₀| / (1 + |s·v₀|)`, minus for Q, plus for P.
pub fn ode_residual(eval: &PearceyEval, branch: Branch) -> Result<f64> {
    if eval.values.len() < 4 {
        return Err(Error::invalid(
            "ode_residual needs derivatives up to order 3",
        ));
    }
    let v = &eval.values;
    let sv0 = eval.s * v[0];
    let r = match branch {
        Branch::Q => v[3] - eval.tau * v[1] - sv0,
        Branch::P => v[3] - eval.tau * v[1] + sv0,
    };
    Ok(r.abs() / (1.0 + sv0.abs()))
}

/// The three roots of `μ³ − τμ − s = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSet {
    pub mu: [C64; 3],
}

impl SaddleSet {
    pub fn max_residual(&self, s: f64, tau: f64) -> f64 {
        self.mu
            .iter()
            .map(|m| (m * m * m - tau * m - s).norm())
            .fold(0.0, f64::max)
    }
}

fn cbrt_principal(z: C64) -> C64 {
    if z.im == 0.0 {
        C64::new(z.re.cbrt(), 0.0)
    } else {
        z.powf(1.0 / 3.0)
    }
}

fn newton_polish(mut m: C64, s: f64, tau: f64) -> C64 {
    for _ in 0..8 {
        let f = m * m * m - tau * m - s;
        let df = 3.0 * m * m - tau;
        if df.norm() < 1e-300 || f.norm() == 0.0 {
            break;
        }
        let step = f / df;
        m -= step;
        if step.norm() <= 1e-16 * (1.0 + m.norm()) {
            break;
        }
    }
    m
}

/// Durand–Kerner for the monic cubic, used where the Cardano branches
/// degenerate.
fn generic_cubic_roots(s: f64, tau: f64) -> [C64; 3] {
    let f = |m: C64| m * m * m - tau * m - s;
    let seed = C64::new(0.4, 0.9);
    let scale = 1.0 + s.abs().cbrt() + tau.abs().sqrt();
    let mut r = [
        seed * scale,
        seed * seed * scale,
        seed * seed * seed * scale,
    ];
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..3 {
            let mut den = C64::new(1.0, 0.0);
            for j in 0..3 {
                if i != j {
                    den *= r[i] - r[j];
                }
            }
            if den.norm() == 0.0 {
                continue;
            }
            let step = f(r[i]) / den;
            r[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved < 1e-16 * scale {
            break;
        }
    }
    r
}

/// Saddle points via the cube-root formula `μ_k = jᵏA + j⁻ᵏB`, `j = e^{2πi/3}`,
/// with `A³ = s/2 + √(s²/4 − τ³/27)` (principal branches) and `B = τ/(3A)`.
pub fn saddle_points(s: f64, tau: f64) -> SaddleSet {
    if s == 0.0 && tau == 0.0 {
        return SaddleSet { mu: [ZERO; 3] };
    }
    let disc = s * s / 4.0 - tau * tau * tau / 27.0;
    if (s * s - 4.0 * tau * tau * tau / 27.0).abs() < 1e-12 {
        let mut mu = generic_cubic_roots(s, tau);
        for m in mu.iter_mut() {
            *m = newton_polish(*m, s, tau);
        }
        mu.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        return SaddleSet { mu };
    }
    let sq = C64::new(disc, 0.0).sqrt();
    let a3 = s / 2.0 + sq;
    let (a, b) = if a3.norm() > 1e-300 {
        let a = cbrt_principal(a3);
        (a, tau / (3.0 * a))
    } else {
        // A³ vanishes exactly when s ≤ 0 and τ = 0; then B carries the root
        let b = cbrt_principal(s / 2.0 - sq);
        if b.norm() > 1e-300 {
            (tau / (3.0 * b), b)
        } else {
            (C64::new(0.0, 0.0), C64::new(0.0, 0.0))
        }
    };
    let j = C64::from_polar(1.0, 2.0 * PI / 3.0);
    let jinv = j.conj();
    let mu = [
        newton_polish(a + b, s, tau),
        newton_polish(j * a + jinv * b, s, tau),
        newton_polish(jinv * a + j * b, s, tau),
    ];
    SaddleSet { mu }
}

fn check_positive_s(s: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Domain(format!(
            "asymptotic formula needs s > 0, got {s}"
        )));
    }
    Ok(())
}

/// `√(2/3π)·s^{−1/3}·exp(∓(3/8 s^{4/3} + τ/4 s^{2/3} − τ²/6))`; decaying for
/// Q, growing for P.
pub fn envelope(s: f64, tau: f64, branch: Branch) -> Result<f64> {
    check_positive_s(s)?;
    let e = 3.0 / 8.0 * s.powf(4.0 / 3.0) + tau / 4.0 * s.powf(2.0 / 3.0) - tau * tau / 6.0;
    let sign = match branch {
        Branch::Q => -1.0,
        Branch::P => 1.0,
    };
    Ok((2.0 / (3.0 * PI)).sqrt() * s.powf(-1.0 / 3.0) * (sign * e).exp())
}

/// `¾ sin(2π/3) s^{4/3} − τ/2 sin(2π/3) s^{2/3} − π/6`.
pub fn phase(s: f64, tau: f64) -> f64 {
    let sn = (2.0 * PI / 3.0).sin();
    0.75 * sn * s.powf(4.0 / 3.0) - tau / 2.0 * sn * s.powf(2.0 / 3.0) - PI / 6.0
}

/// Leading-order large-s approximation of Q or P.
pub fn asymptotic(s: f64, tau: f64, branch: Branch) -> Result<f64> {
    Ok(envelope(s, tau, branch)? * phase(s, tau).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{discretize, ContourSpec};

    fn grid() -> Grid {
        discretize(&ContourSpec::standard(7.0)).unwrap()
    }

    // Γ(1/4), Γ(3/4)
    const GAMMA_QUARTER: f64 = 3.625_609_908_221_908;
    const GAMMA_THREE_QUARTERS: f64 = 1.225_416_702_465_178;

    #[test]
    fn closed_form_anchors() {
        let g = grid();
        let q = pearcey_q(0.0, 0.0, &g, 3).unwrap();
        let q0 = GAMMA_QUARTER / (PI * 4f64.powf(0.75));
        let q2 = -4f64.powf(0.75) * GAMMA_THREE_QUARTERS / (4.0 * PI);
        assert!((q.value(0) - q0).abs() < 1e-12, "{} vs {q0}", q.value(0));
        assert!(q.value(1).abs() < 1e-12);
        assert!((q.value(2) - q2).abs() < 1e-12);
    }

    #[test]
    fn p_is_odd_on_default_contour() {
        let g = grid();
        assert!(pearcey_p(0.0, 0.0, &g, 0).unwrap().value(0).abs() < 1e-12);
        for (s, tau) in [(0.7, 1.0), (2.0, -1.0), (1.3, 0.0)] {
            let a = pearcey_p(s, tau, &g, 0).unwrap().value(0);
            let b = pearcey_p(-s, tau, &g, 0).unwrap().value(0);
            assert!((a + b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn p_is_even_with_both_sigma_halves_upward() {
        let spec = ContourSpec::standard(7.0).flipped(ContourTag::SigmaPlus);
        let g = discretize(&spec).unwrap();
        let p0 = pearcey_p(0.0, 0.0, &g, 1).unwrap();
        let want = 2f64.sqrt() * GAMMA_QUARTER / (PI * 4f64.powf(0.75));
        assert!((p0.value(0) - want).abs() < 1e-12, "{}", p0.value(0));
        assert!(p0.value(1).abs() < 1e-12);
        let a = pearcey_p(1.5, 0.5, &g, 0).unwrap().value(0);
        let b = pearcey_p(-1.5, 0.5, &g, 0).unwrap().value(0);
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn q_is_even() {
        let g = grid();
        for (s, tau) in [(0.7, 1.0), (3.0, -1.0), (4.5, 0.0)] {
            let a = pearcey_q(s, tau, &g, 0).unwrap().value(0);
            let b = pearcey_q(-s, tau, &g, 0).unwrap().value(0);
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn ode_residual_examples() {
        let g = grid();
        let q = pearcey_q(0.0, 0.0, &g, 3).unwrap();
        assert!(ode_residual(&q, Branch::Q).unwrap() <= 1e-10);
        let q = pearcey_q(3.0, 1.0, &g, 3).unwrap();
        assert!(ode_residual(&q, Branch::Q).unwrap() <= 1e-8);
        let p = pearcey_p(2.0, -1.0, &g, 3).unwrap();
        assert!(ode_residual(&p, Branch::P).unwrap() <= 1e-8);
        // the wrong sign is far off
        assert!(ode_residual(&p, Branch::Q).unwrap() > 1e-3);
        let short = pearcey_p(2.0, -1.0, &g, 1).unwrap();
        assert!(ode_residual(&short, Branch::P).is_err());
    }

    #[test]
    fn short_truncation_is_a_precision_error() {
        let g = discretize(&ContourSpec::standard(2.0)).unwrap();
        assert!(matches!(
            pearcey_q(0.0, 0.0, &g, 0),
            Err(Error::PrecisionLoss { .. })
        ));
    }

    #[test]
    fn missing_contour_is_rejected() {
        let spec = ContourSpec::standard(6.0).restricted(&[ContourTag::ImagAxis]);
        let g = discretize(&spec).unwrap();
        assert!(pearcey_q(0.0, 0.0, &g, 0).is_ok());
        assert!(pearcey_p(0.0, 0.0, &g, 0).is_err());
        assert!(pearcey_q(0.0, 0.0, &g, 4).is_err());
    }

    #[test]
    fn saddle_examples() {
        let z = saddle_points(0.0, 0.0);
        assert!(z.mu.iter().all(|m| m.norm() == 0.0));
        let z = saddle_points(2.0, 0.0);
        assert!((z.mu[0] - C64::new(2f64.cbrt(), 0.0)).norm() < 1e-14);
        assert!((z.mu[0].powi(3) - 2.0).norm() <= 1e-12);
        for (s, tau) in [
            (2.0, 0.0),
            (-1.0, 0.0),
            (0.5, 3.0),
            (-4.0, 1.0),
            (0.0, -2.0),
        ] {
            let z = saddle_points(s, tau);
            let prod = z.mu[0] * z.mu[1] * z.mu[2];
            assert!((prod - s).norm() < 1e-10 * (1.0 + s.abs()), "({s},{tau})");
            let sum = z.mu[0] + z.mu[1] + z.mu[2];
            assert!(sum.norm() < 1e-10 * (1.0 + s.abs() + tau.abs()));
        }
    }

    #[test]
    fn saddles_near_double_root() {
        // s² = 4τ³/27 at τ = 3, s = 2
        let z = saddle_points(2.0, 3.0);
        assert!(z.max_residual(2.0, 3.0) <= 1e-10 * 6f64.powf(1.5));
    }

    #[test]
    fn asymptotic_examples() {
        assert!((phase(1.0, 0.0) - 0.1259).abs() < 5e-5);
        for (s, tau) in [(2.0, 0.0), (5.0, 1.0), (7.5, -0.5)] {
            let prod =
                asymptotic(s, tau, Branch::P).unwrap() * asymptotic(s, tau, Branch::Q).unwrap();
            let want = 2.0 / (3.0 * PI) * s.powf(-2.0 / 3.0) * phase(s, tau).cos().powi(2);
            assert!((prod - want).abs() < 1e-12 * want.abs().max(1e-300));
        }
        assert!(matches!(
            asymptotic(0.0, 0.0, Branch::Q),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            envelope(-1.0, 0.0, Branch::P),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn integral_matches_direct_integration() {
        let g = grid();
        let (s, tau) = (1.25, 0.0);
        let vals: Vec<C64> = g
            .nodes()
            .iter()
            .map(|mu| (-mu.powi(4) / 4.0 + s * mu).exp())
            .collect();
        let raw = crate::quadrature::integrate(&g, &vals, Some(&[ContourTag::ImagAxis])).unwrap();
        let q = raw / C64::new(0.0, 2.0 * PI);
        assert!((q.re - pearcey_q(s, tau, &g, 0).unwrap().value(0)).abs() < 1e-14);
    }
}
