//! The integrable kernel on Σ ∪ iℝ, the Pearcey kernel on the real line and
//! the generating function F as a Fredholm determinant.
//!
//! With `θ_x(μ) = μ⁴/4 − τμ²/2 − xμ` and `c_j = a_j + s` the dressed vectors
//! are supported as follows (index 0 is the first component):
//!
//! ```text
//! f̃₀ = e^{θ₀/2}/(2πi)                 on Σ     g̃₀ = e^{−θ₀/2}                on iℝ
//! f̃ⱼ = √Δkⱼ e^{−θ₀/2 + cⱼμ}/(2πi)     on iℝ    g̃ⱼ = √Δkⱼ e^{θ₀/2 − cⱼμ}      on Σ
//! ```
//!
//! so `K(u,v) = f̃ᵀ(u)g̃(v)/(u−v)` only couples Σ with iℝ. Writing the
//! discretized operator in block form `[[0, A], [B, 0]]` over `[Σ; iℝ]`,
//! `det(I − K) = det(I − BA)`, a determinant over the iℝ nodes alone.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{gemm_acc, CMatrix, LuFactorization, C64, ONE, ZERO};
use crate::quadrature::{build_contours, discretize, gauss_legendre, Grid};

/// Largest admissible |Re| of any exponent before `exp` is evaluated.
const EXP_GUARD: f64 = 700.0;
/// Accuracy target used when choosing a truncation radius for a config.
pub const DEFAULT_TARGET_EPS: f64 = 1e-16;
/// Gauss–Legendre nodes per interval for the real-line route.
pub const DEFAULT_INTERVAL_NODES: usize = 40;

const LEAK_TOL: f64 = 1e-8;

fn two_pi_i() -> C64 {
    C64::new(0.0, 2.0 * PI)
}

/// How strictly [`ModelConfig::validate`] treats equal neighbouring weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Validation {
    #[default]
    Strict,
    /// Accepts `k_j = k_{j+1}`, including the all-zero configuration.
    AllowDegenerate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub validation: Validation,
    /// Use the negative square root for every `√Δk_j`.
    pub branch_flip: bool,
}

impl EvalOptions {
    pub fn degenerate() -> Self {
        EvalOptions {
            validation: Validation::AllowDegenerate,
            branch_flip: false,
        }
    }
}

/// Thresholds `a`, weights `k = (k₀, …, k_N)`, time `τ` and shift `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: Vec<f64>,
    pub k: Vec<f64>,
    pub tau: f64,
    pub s: f64,
}

impl ModelConfig {
    pub fn new(a: Vec<f64>, k: Vec<f64>, tau: f64, s: f64) -> Self {
        ModelConfig { a, k, tau, s }
    }

    /// Number of thresholds N.
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn with_s(&self, s: f64) -> Self {
        ModelConfig { s, ..self.clone() }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        ModelConfig {
            tau,
            ..self.clone()
        }
    }

    pub fn with_k(&self, k: Vec<f64>) -> Self {
        ModelConfig { k, ..self.clone() }
    }

    /// `Δk_j = k_j − k_{j−1}` for j = 1..N.
    pub fn delta_k(&self) -> Vec<f64> {
        self.k.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_trivial(&self) -> bool {
        self.k.iter().all(|&k| k == 0.0)
    }

    /// Largest |a_i + s|.
    pub fn max_shift(&self) -> f64 {
        self.a
            .iter()
            .map(|a| (a + self.s).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, mode: Validation) -> Result<()> {
        let n = self.a.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "a: need N >= 2 thresholds, got {n}"
            )));
        }
        if self.k.len() != n + 1 {
            return Err(Error::invalid(format!(
                "k: must have N+1 = {} entries, got {}",
                n + 1,
                self.k.len()
            )));
        }
        if !(self.tau.is_finite() && self.s.is_finite()) {
            return Err(Error::invalid(if self.tau.is_finite() {
                "s: must be finite"
            } else {
                "tau: must be finite"
            }));
        }
        if self.a.iter().chain(&self.k).any(|v| !v.is_finite()) {
            return Err(Error::invalid(if self.a.iter().all(|v| v.is_finite()) {
                "k: entries must be finite"
            } else {
                "a: entries must be finite"
            }));
        }
        if let Some(w) = self.a.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "a: thresholds must be strictly increasing ({} >= {})",
                w[0], w[1]
            )));
        }
        if self.k[0] != 0.0 || self.k[n] != 0.0 {
            return Err(Error::invalid("k: k_0 and k_N must be 0"));
        }
        if let Some(k) = self.k.iter().find(|k| !(0.0..=1.0).contains(*k)) {
            return Err(Error::invalid(format!("k: k_j = {k} outside [0, 1]")));
        }
        if mode == Validation::Strict {
            if let Some(j) = (0..n).find(|&j| self.k[j] == self.k[j + 1]) {
                return Err(Error::invalid(format!(
                    "k: k_{j} = k_{} = {} (degenerate configuration)",
                    j + 1,
                    self.k[j]
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::invalid(format!(
                "config JSON at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })
    }

    /// Default grid, truncated for the shifts of this config.
    pub fn default_grid(&self) -> Result<Grid> {
        let spec = build_contours(self.tau, self.max_shift(), DEFAULT_TARGET_EPS)?;
        discretize(&spec)
    }
}

/// The numbers the kernel depends on, with Δk allowed complex.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub tau: f64,
    /// `c_j = a_j + s`.
    pub shifts: Vec<f64>,
    pub delta_k: Vec<C64>,
    pub sqrt_delta_k: Vec<C64>,
}

impl KernelParams {
    pub fn from_config(config: &ModelConfig, branch_flip: bool) -> Self {
        let k: Vec<C64> = config.k.iter().map(|&k| C64::new(k, 0.0)).collect();
        Self::from_complex_k(&config.a, &k, config.tau, config.s, branch_flip)
    }

    /// `k` has N+1 entries; nothing is validated.
    pub fn from_complex_k(a: &[f64], k: &[C64], tau: f64, s: f64, branch_flip: bool) -> Self {
        let delta_k: Vec<C64> = k.windows(2).map(|w| w[1] - w[0]).collect();
        let sign = if branch_flip { -1.0 } else { 1.0 };
        let sqrt_delta_k = delta_k.iter().map(|d| d.sqrt() * sign).collect();
        KernelParams {
            tau,
            shifts: a.iter().map(|a| a + s).collect(),
            delta_k,
            sqrt_delta_k,
        }
    }

    pub fn n(&self) -> usize {
        self.shifts.len()
    }
}

/// `θ_x(μ) = μ⁴/4 − τμ²/2 − xμ`.
pub fn theta(mu: C64, x: f64, tau: f64) -> C64 {
    let mu2 = mu * mu;
    mu2 * mu2 / 4.0 - tau * mu2 / 2.0 - x * mu
}

fn guarded_exp(z: C64, what: &str) -> Result<C64> {
    if z.re.abs() > EXP_GUARD {
        return Err(Error::precision(
            what,
            format!(
                "exponent real part {:.1} exceeds {EXP_GUARD}; truncation too large for the shift",
                z.re
            ),
        ));
    }
    Ok(z.exp())
}

/// f̃ and g̃ at every grid node; row i holds the N+1 components at node i.
#[derive(Clone, Debug)]
pub struct DressedVectors {
    pub f_vals: CMatrix,
    pub g_vals: CMatrix,
}

pub fn dressing_vectors(config: &ModelConfig, grid: &Grid) -> Result<DressedVectors> {
    config.validate(Validation::AllowDegenerate)?;
    dressing_from_params(&KernelParams::from_config(config, false), grid)
}

pub fn dressing_from_params(params: &KernelParams, grid: &Grid) -> Result<DressedVectors> {
    let n = params.n();
    let m = grid.len();
    let mut f = CMatrix::zeros(m, n + 1);
    let mut g = CMatrix::zeros(m, n + 1);
    let inv = two_pi_i().inv();
    for (i, (&mu, tag)) in grid.nodes().iter().zip(grid.tags()).enumerate() {
        let half = theta(mu, 0.0, params.tau) / 2.0;
        if tag.is_sigma() {
            f[(i, 0)] = guarded_exp(half, "dressing_vectors")? * inv;
            for j in 0..n {
                let e = guarded_exp(half - params.shifts[j] * mu, "dressing_vectors")?;
                g[(i, j + 1)] = params.sqrt_delta_k[j] * e;
            }
        } else {
            g[(i, 0)] = guarded_exp(-half, "dressing_vectors")?;
            for j in 0..n {
                let e = guarded_exp(-half + params.shifts[j] * mu, "dressing_vectors")?;
                f[(i, j + 1)] = params.sqrt_delta_k[j] * e * inv;
            }
        }
    }
    Ok(DressedVectors {
        f_vals: f,
        g_vals: g,
    })
}

/// Dense Nyström matrix `K(u_i, u_j)·w_j`.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub entries: CMatrix,
    pub config_hash: String,
}

pub fn assemble_k(config: &ModelConfig, grid: &Grid) -> Result<OperatorMatrix> {
    assemble_k_with(config, grid, &EvalOptions::default())
}

pub fn assemble_k_with(
    config: &ModelConfig,
    grid: &Grid,
    opts: &EvalOptions,
) -> Result<OperatorMatrix> {
    config.validate(opts.validation)?;
    let d = dressing_from_params(&KernelParams::from_config(config, opts.branch_flip), grid)?;
    let m = grid.len();
    let nodes = grid.nodes();
    let w = grid.weights();
    let tags = grid.tags();
    let mut entries = CMatrix::zeros(m, m);
    for i in 0..m {
        let fi = d.f_vals.row(i);
        for j in 0..m {
            if i == j {
                continue;
            }
            let diff = nodes[i] - nodes[j];
            if diff.norm() < 1e-14 {
                if tags[i].is_sigma() != tags[j].is_sigma() {
                    return Err(Error::GridDegeneracy(format!(
                        "nodes {i} and {j} coincide to {:.3e}",
                        diff.norm()
                    )));
                }
                continue;
            }
            let num: C64 = fi.iter().zip(d.g_vals.row(j)).map(|(a, b)| a * b).sum();
            if num != ZERO {
                entries[(i, j)] = num / diff * w[j];
            }
        }
    }
    Ok(OperatorMatrix {
        entries,
        config_hash: config.config_hash(),
    })
}

/// Real determinant with its imaginary leak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetResult {
    pub value: f64,
    pub log_value: f64,
    pub im_leak: f64,
}

impl DetResult {
    pub(crate) fn from_log_det(log_det: C64, check: &str) -> Result<Self> {
        let det = log_det.exp();
        let value = det.re;
        let im_leak = det.im.abs();
        if !value.is_finite() {
            return Err(Error::precision(check, "determinant is not finite"));
        }
        if im_leak > LEAK_TOL * (1.0 + value.abs()) {
            return Err(Error::precision(
                check,
                format!("imaginary leak {im_leak:.3e} for determinant {value:.6e}"),
            ));
        }
        if value <= 0.0 {
            return Err(Error::Domain(format!(
                "{check}: determinant {value:.6e} is not positive (under-resolved grid?)"
            )));
        }
        Ok(DetResult {
            value,
            log_value: value.ln(),
            im_leak,
        })
    }
}

pub fn det_one_minus_k(m: &OperatorMatrix) -> Result<DetResult> {
    if !m.entries.is_finite() {
        return Err(Error::invalid("operator matrix has non-finite entries"));
    }
    let lu = LuFactorization::new(m.entries.one_minus())
        .map_err(|e| Error::UnderResolution(format!("det_one_minus_k: {e}")))?;
    DetResult::from_log_det(lu.log_det(), "det_one_minus_k")
}

/// Off-diagonal blocks of the discretized kernel over `[Σ; iℝ]`.
pub(crate) struct BipartiteSystem {
    pub dressed: DressedVectors,
    /// Σ × iℝ block, `K(σ_a, ι_b)·w_b`.
    pub a: CMatrix,
    /// iℝ × Σ block, `K(ι_b, σ_a)·w_a`.
    pub b: CMatrix,
}

impl BipartiteSystem {
    pub fn new(params: &KernelParams, grid: &Grid) -> Result<Self> {
        let dressed = dressing_from_params(params, grid)?;
        let cauchy = grid.cauchy()?;
        let sig = grid.sigma_indices();
        let img = grid.imag_indices();
        let (ns, ni) = (sig.len(), img.len());
        let n = params.n();
        let w = grid.weights();

        let mut a = CMatrix::zeros(ns, ni);
        for (ia, &ua) in sig.iter().enumerate() {
            let f0 = dressed.f_vals[(ua, 0)];
            let crow = cauchy.row(ia);
            let arow = a.row_mut(ia);
            for (ib, &ub) in img.iter().enumerate() {
                arow[ib] = f0 * dressed.g_vals[(ub, 0)] * w[ub] * crow[ib];
            }
        }

        // Σ_j f̃_j(ι) g̃_j(σ) as a rank-N product
        let fi = CMatrix::from_fn(ni, n, |ib, j| dressed.f_vals[(img[ib], j + 1)]);
        let gs = CMatrix::from_fn(n, ns, |j, ia| dressed.g_vals[(sig[ia], j + 1)]);
        let mut b = fi.matmul(&gs)?;
        for ib in 0..ni {
            let brow = b.row_mut(ib);
            for (ia, &ua) in sig.iter().enumerate() {
                brow[ia] *= -cauchy[(ia, ib)] * w[ua];
            }
        }
        Ok(BipartiteSystem { dressed, a, b })
    }

    /// `I − BA` over the iℝ nodes.
    pub fn schur(&self) -> CMatrix {
        let ni = self.b.rows();
        let mut s = CMatrix::identity(ni);
        gemm_acc(C64::new(-1.0, 0.0), &self.b, &self.a, ONE, &mut s);
        s
    }

    pub fn factor(&self) -> Result<LuFactorization> {
        LuFactorization::new(self.schur())
            .map_err(|e| Error::UnderResolution(format!("Fredholm system: {e}")))
    }
}

/// `F(a⃗ + s, τ, k⃗) = det(I − K)` over Σ ∪ iℝ.
pub fn genfun(config: &ModelConfig, grid: &Grid) -> Result<f64> {
    Ok(genfun_det(config, grid, &EvalOptions::default())?.value)
}

pub fn genfun_det(config: &ModelConfig, grid: &Grid, opts: &EvalOptions) -> Result<DetResult> {
    config.validate(opts.validation)?;
    let params = KernelParams::from_config(config, opts.branch_flip);
    let sys = BipartiteSystem::new(&params, grid)?;
    DetResult::from_log_det(sys.factor()?.log_det(), "genfun")
}

/// Complex `log det(I − K)` for arbitrary (possibly complex) Δk.
pub fn genfun_complex_log(params: &KernelParams, grid: &Grid) -> Result<C64> {
    if params.delta_k.iter().all(|d| *d == ZERO) {
        return Ok(ZERO);
    }
    let sys = BipartiteSystem::new(params, grid)?;
    Ok(sys.factor()?.log_det())
}

pub fn genfun_complex(params: &KernelParams, grid: &Grid) -> Result<C64> {
    Ok(genfun_complex_log(params, grid)?.exp())
}

/// `K_P(x_i, y_j; τ)` for all pairs, as `V·C·W/(4π²)` with the grid's
/// shared Cauchy matrix.
pub fn kp_matrix(xs: &[f64], ys: &[f64], tau: f64, grid: &Grid) -> Result<CMatrix> {
    let cauchy = grid.cauchy()?;
    let sig = grid.sigma_indices();
    let img = grid.imag_indices();
    if sig.is_empty() || img.is_empty() {
        return Err(Error::invalid("kernel_kp needs both Σ and iℝ nodes"));
    }
    let nodes = grid.nodes();
    let w = grid.weights();
    let mut v = CMatrix::zeros(xs.len(), sig.len());
    for (i, &x) in xs.iter().enumerate() {
        for (ia, &ua) in sig.iter().enumerate() {
            v[(i, ia)] = guarded_exp(theta(nodes[ua], x, tau), "kernel_kp")? * w[ua];
        }
    }
    let mut wm = CMatrix::zeros(img.len(), ys.len());
    for (ib, &ub) in img.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            wm[(ib, j)] = guarded_exp(-theta(nodes[ub], y, tau), "kernel_kp")? * w[ub];
        }
    }
    let mut k = v.matmul(cauchy)?.matmul(&wm)?;
    let scale = 1.0 / (4.0 * PI * PI);
    for z in k.as_mut_slice() {
        *z *= scale;
    }
    Ok(k)
}

/// The Pearcey kernel at one point; errors if the result is not real.
pub fn kernel_kp(x: f64, y: f64, tau: f64, grid: &Grid) -> Result<f64> {
    let k = kp_matrix(&[x], &[y], tau, grid)?[(0, 0)];
    if k.im.abs() > LEAK_TOL * (1.0 + k.re.abs()) {
        return Err(Error::precision(
            "kernel_kp",
            format!("imaginary part {:.3e} at ({x}, {y})", k.im),
        ));
    }
    Ok(k.re)
}

/// `det(1 − Σ_j k_j χ_j K_P)` by Gauss–Legendre Nyström on the intervals
/// `(a_j + s, a_{j+1} + s)`.
pub fn genfun_via_kp(config: &ModelConfig, grid: &Grid, nodes_per_interval: usize) -> Result<f64> {
    Ok(genfun_via_kp_det(config, grid, nodes_per_interval, Validation::Strict)?.value)
}

pub fn genfun_via_kp_det(
    config: &ModelConfig,
    grid: &Grid,
    nodes_per_interval: usize,
    validation: Validation,
) -> Result<DetResult> {
    config.validate(validation)?;
    if nodes_per_interval == 0 {
        return Err(Error::invalid("nodes_per_interval must be positive"));
    }
    let (gx, gw) = gauss_legendre(nodes_per_interval);
    let mut xs = Vec::new();
    let mut sw = Vec::new();
    for j in 1..config.n() {
        let kj = config.k[j];
        if kj == 0.0 {
            continue;
        }
        let (lo, hi) = (config.a[j - 1] + config.s, config.a[j] + config.s);
        let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(mid + half * x);
            sw.push((kj * half * w).sqrt());
        }
    }
    if xs.is_empty() {
        return DetResult::from_log_det(ZERO, "genfun_via_kp");
    }
    let k = kp_matrix(&xs, &xs, config.tau, grid)?;
    let m = xs.len();
    let mat = CMatrix::from_fn(m, m, |i, j| {
        let d = if i == j { ONE } else { ZERO };
        d - k[(i, j)] * (sw[i] * sw[j])
    });
    let lu = LuFactorization::new(mat)
        .map_err(|e| Error::UnderResolution(format!("genfun_via_kp: {e}")))?;
    DetResult::from_log_det(lu.log_det(), "genfun_via_kp")
}

/// `|F(a⃗, k⃗) − F(−reverse(a⃗), reverse(k⃗))|` with s mapped to −s. A
/// diagnostic only; nothing asserts it vanishes.
pub fn reflection_asymmetry(config: &ModelConfig, grid: &Grid) -> Result<f64> {
    let mirrored = ModelConfig {
        a: config.a.iter().rev().map(|a| -a).collect(),
        k: config.k.iter().rev().copied().collect(),
        tau: config.tau,
        s: -config.s,
    };
    let opts = EvalOptions::degenerate();
    let f0 = genfun_det(config, grid, &opts)?.value;
    let f1 = genfun_det(&mirrored, grid, &opts)?.value;
    Ok((f0 - f1).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::ContourSpec;

    pub(crate) fn small_grid() -> Grid {
        let mut spec = ContourSpec::standard(6.0);
        spec.panels_per_ray = 5;
        spec.nodes_per_panel = 10;
        spec.inner_nodes_per_panel = 6;
        spec.grading = 0.15;
        spec.min_panel = 1e-6;
        discretize(&spec).unwrap()
    }

    fn std_config() -> ModelConfig {
        ModelConfig::new(vec![-1.0, 1.0], vec![0.0, 0.5, 0.0], 1.0, 0.0)
    }

    #[test]
    fn validation_rules() {
        let ok = std_config();
        assert!(ok.validate(Validation::Strict).is_ok());
        let bad = |a: Vec<f64>, k: Vec<f64>| ModelConfig::new(a, k, 1.0, 0.0);
        assert!(bad(vec![0.0], vec![0.0, 0.0])
            .validate(Validation::AllowDegenerate)
            .is_err());
        assert!(bad(vec![1.0, 0.0], vec![0.0, 0.5, 0.0])
            .validate(Validation::Strict)
            .is_err());
        assert!(bad(vec![0.0, 1.0], vec![0.1, 0.5, 0.0])
            .validate(Validation::Strict)
            .is_err());
        assert!(bad(vec![0.0, 1.0], vec![0.0, 1.5, 0.0])
            .validate(Validation::Strict)
            .is_err());
        assert!(bad(vec![0.0, 1.0], vec![0.0, 0.5])
            .validate(Validation::Strict)
            .is_err());
        let degenerate = bad(vec![0.0, 1.0], vec![0.0, 0.0, 0.0]);
        assert!(degenerate.validate(Validation::Strict).is_err());
        assert!(degenerate.validate(Validation::AllowDegenerate).is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig::new(vec![-2.0, 0.0, 1.5], vec![0.0, 0.3, 0.7, 0.0], 0.5, 0.2);
        let back = ModelConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.config_hash(), back.config_hash());
        assert_ne!(c.config_hash(), c.with_s(0.3).config_hash());
        let err = ModelConfig::from_json("{\n \"a\": [1,2],\n \"k\": oops }").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn dressing_support_structure() {
        let g = small_grid();
        let d = dressing_vectors(&std_config(), &g).unwrap();
        for (i, tag) in g.tags().iter().enumerate() {
            let f = d.f_vals.row(i);
            let gg = d.g_vals.row(i);
            if tag.is_sigma() {
                assert!(f[1..].iter().all(|z| *z == ZERO) && gg[0] == ZERO);
            } else {
                assert!(f[0] == ZERO && gg[1..].iter().all(|z| *z == ZERO));
            }
            let diag: C64 = f.iter().zip(gg).map(|(a, b)| a * b).sum();
            assert_eq!(diag, ZERO);
        }
        let zero = std_config().with_k(vec![0.0; 3]);
        let d = dressing_vectors(&zero, &g).unwrap();
        for i in 0..g.len() {
            assert!(d.f_vals.row(i)[1..].iter().all(|z| *z == ZERO));
        }
    }

    #[test]
    fn numerator_telescopes_at_the_crossing() {
        let g = small_grid();
        let d = dressing_vectors(&std_config(), &g).unwrap();
        let nearest = |sigma: bool| {
            (0..g.len())
                .filter(|&i| g.tags()[i].is_sigma() == sigma)
                .min_by(|&i, &j| g.nodes()[i].norm().total_cmp(&g.nodes()[j].norm()))
                .unwrap()
        };
        let (i, j) = (nearest(false), nearest(true));
        let num: C64 = d
            .f_vals
            .row(i)
            .iter()
            .zip(d.g_vals.row(j))
            .map(|(a, b)| a * b)
            .sum();
        let dist = (g.nodes()[i] - g.nodes()[j]).norm();
        assert!(num.norm() < 10.0 * dist, "{} vs {dist}", num.norm());
    }

    #[test]
    fn overflow_guard() {
        let spec = ContourSpec::standard(9.5);
        let g = discretize(&spec).unwrap();
        assert!(matches!(
            dressing_vectors(&std_config(), &g),
            Err(Error::PrecisionLoss { .. })
        ));
    }

    #[test]
    fn dense_and_bipartite_routes_agree() {
        let g = small_grid();
        let c = std_config();
        let m = assemble_k(&c, &g).unwrap();
        for i in 0..g.len() {
            assert_eq!(m.entries[(i, i)], ZERO);
        }
        // Σ–Σ and iℝ–iℝ blocks vanish
        for i in 0..g.len() {
            for j in 0..g.len() {
                if g.tags()[i].is_sigma() == g.tags()[j].is_sigma() {
                    assert_eq!(m.entries[(i, j)], ZERO);
                }
            }
        }
        let dense = det_one_minus_k(&m).unwrap();
        let fast = genfun_det(&c, &g, &EvalOptions::default()).unwrap();
        assert!(
            (dense.value - fast.value).abs() < 1e-12,
            "{dense:?} {fast:?}"
        );
        assert!(dense.value > 0.0 && dense.value < 1.0);
    }

    #[test]
    fn nilpotent_when_k_vanishes() {
        let g = small_grid();
        let c = std_config().with_k(vec![0.0; 3]);
        let m = assemble_k_with(&c, &g, &EvalOptions::degenerate()).unwrap();
        let sq = m.entries.matmul(&m.entries).unwrap();
        assert_eq!(sq.max_abs(), 0.0);
        let d = det_one_minus_k(&m).unwrap();
        assert!((d.value - 1.0).abs() < 1e-10);
        assert!(genfun(&c, &g).is_err());
        let f = genfun_det(&c, &g, &EvalOptions::degenerate()).unwrap();
        assert!((f.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_matrix_determinant() {
        let m = OperatorMatrix {
            entries: CMatrix::zeros(4, 4),
            config_hash: String::new(),
        };
        let d = det_one_minus_k(&m).unwrap();
        assert_eq!(d.value, 1.0);
        assert_eq!(d.log_value, 0.0);
    }

    #[test]
    fn entries_are_linear_in_delta_k() {
        let g = small_grid();
        let c1 = std_config();
        let c2 = std_config().with_k(vec![0.0, 0.2, 0.0]);
        let m1 = assemble_k(&c1, &g).unwrap();
        let m2 = assemble_k(&c2, &g).unwrap();
        let scale = m1.entries.max_abs();
        // iℝ → Σ entries scale with Δk, Σ → iℝ entries do not depend on it
        for i in (0..g.len()).step_by(37) {
            for j in (0..g.len()).step_by(41) {
                let (e1, e2) = (m1.entries[(i, j)], m2.entries[(i, j)]);
                if g.tags()[i].is_sigma() {
                    assert!((e1 - e2).norm() <= 1e-14 * e1.norm().max(1e-300));
                } else {
                    assert!((e2 - 0.4 * e1).norm() < 1e-13 * scale);
                }
            }
        }
    }

    #[test]
    fn kp_diagonal_is_nonnegative_and_real() {
        let g = small_grid();
        for x in [-2.0, -0.5, 0.0, 1.0, 2.0] {
            let k = kernel_kp(x, x, 1.0, &g).unwrap();
            assert!(k > 0.0, "K_P({x},{x}) = {k}");
        }
        let kxy = kernel_kp(0.3, -0.7, 1.0, &g).unwrap();
        let kyx = kernel_kp(-0.7, 0.3, 1.0, &g).unwrap();
        assert!(kxy.is_finite() && kyx.is_finite());
    }

    #[test]
    fn both_routes_agree_on_small_grid() {
        let g = small_grid();
        let c = std_config();
        let f1 = genfun(&c, &g).unwrap();
        let f2 = genfun_via_kp(&c, &g, DEFAULT_INTERVAL_NODES).unwrap();
        assert!((f1 - f2).abs() < 1e-5 * f1, "{f1} vs {f2}");
        let zero = c.with_k(vec![0.0; 3]);
        let f = genfun_via_kp_det(&zero, &g, 10, Validation::AllowDegenerate).unwrap();
        assert_eq!(f.value, 1.0);
    }

    #[test]
    fn branch_flip_leaves_determinant() {
        let g = small_grid();
        let c = std_config();
        let a = genfun_det(&c, &g, &EvalOptions::default()).unwrap();
        let b = genfun_det(
            &c,
            &g,
            &EvalOptions {
                validation: Validation::Strict,
                branch_flip: true,
            },
        )
        .unwrap();
        assert!((a.value - b.value).abs() < 1e-14);
    }

    #[test]
    fn complex_weights_reduce_to_real() {
        let g = small_grid();
        let c = std_config();
        let k: Vec<C64> = c.k.iter().map(|&k| C64::new(k, 0.0)).collect();
        let p = KernelParams::from_complex_k(&c.a, &k, c.tau, c.s, false);
        let fz = genfun_complex(&p, &g).unwrap();
        assert!((fz.re - genfun(&c, &g).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn reflection_diagnostic_runs() {
        let g = small_grid();
        let c = ModelConfig::new(vec![-1.0, 0.5], vec![0.0, 0.4, 0.0], 1.0, 0.1);
        assert!(reflection_asymmetry(&c, &g).unwrap().is_finite());
    }
}
