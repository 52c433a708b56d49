//! Residue data of the Riemann–Hilbert problem and the Lax-pair blocks.
//!
//! The residue `Γ₁ = ∫ F̃(μ) g̃ᵀ(μ) dμ` with `F̃ = (1 − K)⁻¹ f̃` is read off
//! the discretized resolvent, in block form
//!
//! ```text
//! Γ₁ = [[−δ, pᵀ],
//!       [ q,  Δ]]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_acc, CMatrix, C64, ONE, ZERO};
use crate::operators::{BipartiteSystem, DetResult, EvalOptions, KernelParams, ModelConfig};
use crate::quadrature::Grid;

const INVARIANT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Gamma1 {
    pub delta: f64,
    /// Imaginary part of δ, kept as a realness diagnostic.
    pub delta_imag: f64,
    pub p: Vec<C64>,
    pub q: Vec<C64>,
    pub big_delta: CMatrix,
    /// The full (N+1)×(N+1) residue.
    pub raw: CMatrix,
}

impl Gamma1 {
    pub fn from_raw(raw: CMatrix) -> Self {
        let n = raw.rows() - 1;
        let d = -raw[(0, 0)];
        Gamma1 {
            delta: d.re,
            delta_imag: d.im,
            p: raw.row(0)[1..].to_vec(),
            q: (1..=n).map(|i| raw[(i, 0)]).collect(),
            big_delta: CMatrix::from_fn(n, n, |i, j| raw[(i + 1, j + 1)]),
            raw,
        }
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn ptq(&self) -> C64 {
        self.p.iter().zip(&self.q).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.raw.frobenius_norm()
    }

    /// `|Tr Γ₁|`.
    pub fn trace_residual(&self) -> f64 {
        self.raw.trace().norm()
    }

    /// `|δ − Tr Δ|`.
    pub fn delta_trace_residual(&self) -> f64 {
        (C64::new(self.delta, self.delta_imag) - self.big_delta.trace()).norm()
    }

    /// Tolerance scale `1 + ‖Γ₁‖`.
    pub fn scale(&self) -> f64 {
        1.0 + self.norm()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let tol = INVARIANT_TOL * self.scale();
        let checks = [
            ("trace of Gamma1", self.trace_residual()),
            ("delta - Tr Delta", self.delta_trace_residual()),
            ("Im delta", self.delta_imag.abs()),
            ("Im p^T q", self.ptq().im.abs()),
        ];
        for (name, value) in checks {
            if value > tol {
                return Err(Error::UnderResolution(format!(
                    "{name} = {value:.3e} exceeds {tol:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Determinant and residue from one factorization.
#[derive(Clone, Debug)]
pub struct SystemSolution {
    pub det: DetResult,
    pub gamma1: Gamma1,
    /// `F̃` at every grid node (grid order), one column per component.
    pub resolvent: CMatrix,
}

fn solve_params(params: &KernelParams, grid: &Grid) -> Result<(C64, CMatrix, Gamma1)> {
    let sys = BipartiteSystem::new(params, grid)?;
    let lu = sys.factor()?;
    let sig = grid.sigma_indices();
    let img = grid.imag_indices();
    let ncomp = params.n() + 1;
    let f = &sys.dressed.f_vals;
    let f_sig = CMatrix::from_fn(sig.len(), ncomp, |a, c| f[(sig[a], c)]);
    let mut x_img = CMatrix::from_fn(img.len(), ncomp, |b, c| f[(img[b], c)]);
    // (I − BA) X_I = f_I + B f_Σ
    gemm_acc(ONE, &sys.b, &f_sig, ONE, &mut x_img);
    lu.solve_in_place(&mut x_img)?;
    // X_Σ = f_Σ + A X_I
    let mut x_sig = f_sig;
    gemm_acc(ONE, &sys.a, &x_img, ONE, &mut x_sig);

    let mut x = CMatrix::zeros(grid.len(), ncomp);
    for (a, &i) in sig.iter().enumerate() {
        x.row_mut(i).copy_from_slice(x_sig.row(a));
    }
    for (b, &i) in img.iter().enumerate() {
        x.row_mut(i).copy_from_slice(x_img.row(b));
    }

    let w = grid.weights();
    let g = &sys.dressed.g_vals;
    let mut raw = CMatrix::zeros(ncomp, ncomp);
    for i in 0..grid.len() {
        let xi = x.row(i);
        let gi = g.row(i);
        for (c, gc) in gi.iter().enumerate() {
            if *gc == ZERO {
                continue;
            }
            let wg = w[i] * gc;
            for r in 0..ncomp {
                raw[(r, c)] += xi[r] * wg;
            }
        }
    }
    Ok((lu.log_det(), x, Gamma1::from_raw(raw)))
}

pub fn solve_system(
    config: &ModelConfig,
    grid: &Grid,
    opts: &EvalOptions,
) -> Result<SystemSolution> {
    config.validate(opts.validation)?;
    let params = KernelParams::from_config(config, opts.branch_flip);
    let (log_det, resolvent, gamma1) = solve_params(&params, grid)?;
    let det = DetResult::from_log_det(log_det, "genfun")?;
    gamma1.check_invariants()?;
    Ok(SystemSolution {
        det,
        gamma1,
        resolvent,
    })
}

/// Solves `(I − K·diag(w)) X = f̃` for all N+1 components; rows follow the
/// grid order.
pub fn resolvent_columns(config: &ModelConfig, grid: &Grid) -> Result<CMatrix> {
    resolvent_columns_with(config, grid, &EvalOptions::default())
}

pub fn resolvent_columns_with(
    config: &ModelConfig,
    grid: &Grid,
    opts: &EvalOptions,
) -> Result<CMatrix> {
    config.validate(opts.validation)?;
    let params = KernelParams::from_config(config, opts.branch_flip);
    Ok(solve_params(&params, grid)?.1)
}

pub fn gamma1(config: &ModelConfig, grid: &Grid) -> Result<Gamma1> {
    Ok(solve_system(config, grid, &EvalOptions::default())?.gamma1)
}

pub fn gamma1_with(config: &ModelConfig, grid: &Grid, opts: &EvalOptions) -> Result<Gamma1> {
    Ok(solve_system(config, grid, opts)?.gamma1)
}

/// `A(μ) = μA₁ + A₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaxA {
    /// `diag(−N, 1, …, 1)/(N+1)`.
    pub a1: CMatrix,
    /// `[[0, pᵀ], [−q, 0]]`.
    pub a0: CMatrix,
}

pub fn lax_a(g1: &Gamma1, n: usize) -> Result<LaxA> {
    if g1.n() != n {
        return Err(Error::invalid(format!(
            "Gamma1 has {} components, expected {n}",
            g1.n()
        )));
    }
    let m = n + 1;
    let mut a1 = CMatrix::zeros(m, m);
    a1[(0, 0)] = C64::new(-(n as f64) / m as f64, 0.0);
    for i in 1..m {
        a1[(i, i)] = C64::new(1.0 / m as f64, 0.0);
    }
    let mut a0 = CMatrix::zeros(m, m);
    for i in 0..n {
        a0[(0, i + 1)] = g1.p[i];
        a0[(i + 1, 0)] = -g1.q[i];
    }
    Ok(LaxA { a1, a0 })
}

/// Closed-form blocks of `B(μ) = μ²B₂ + μB₁ + B₀` in terms of p, q and
/// their s-derivatives. Superscripts `11`, `12`, `21`, `22` follow the
/// 1 + N block split; row blocks (`12`) are stored as plain vectors.
///
/// The gauge factor contributes the constants `B̃₃ = −A₁` and `B̃₁ = τA₁`,
/// available from [`LaxBlocks::b3_tilde`] and [`LaxBlocks::b1_tilde`].
#[derive(Clone, Debug, PartialEq)]
pub struct LaxB {
    pub b2_12: Vec<C64>,
    pub b2_21: Vec<C64>,
    pub b1_11: C64,
    pub b1_12: Vec<C64>,
    pub b1_21: Vec<C64>,
    pub b1_22: CMatrix,
    pub b0_11: C64,
    pub b0_12: Vec<C64>,
    pub b0_21: Vec<C64>,
    pub b0_22: CMatrix,
    /// Diagonal of `D = diag(a₁ + s, …, a_N + s)`.
    pub d: Vec<f64>,
}

fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn outer(x: &[C64], y: &[C64]) -> CMatrix {
    CMatrix::from_fn(x.len(), y.len(), |i, j| x[i] * y[j])
}

/// `p[d]`, `q[d]` are the d-th s-derivatives, d = 0, 1, 2.
pub fn lax_b_blocks(p: &[Vec<C64>], q: &[Vec<C64>], config: &ModelConfig) -> Result<LaxB> {
    let n = config.n();
    if p.len() < 3 || q.len() < 3 {
        return Err(Error::invalid(
            "lax_b_blocks needs p, q and two derivatives",
        ));
    }
    if p.iter()
        .take(3)
        .chain(q.iter().take(3))
        .any(|v| v.len() != n)
    {
        return Err(Error::invalid(format!("p and q must have {n} components")));
    }
    let tau = config.tau;
    let ptq = dot(&p[0], &q[0]);
    let b0_12 = (0..n)
        .map(|i| -p[2][i] - 2.0 * ptq * p[0][i] + tau * p[0][i])
        .collect();
    let b0_21 = (0..n)
        .map(|i| q[2][i] + 2.0 * q[0][i] * ptq - tau * q[0][i])
        .collect();
    let mut b1_22 = outer(&q[0], &p[0]);
    for z in b1_22.as_mut_slice() {
        *z = -*z;
    }
    let qp1 = outer(&q[0], &p[1]);
    let q1p = outer(&q[1], &p[0]);
    let b0_22 = CMatrix::from_fn(n, n, |i, j| qp1[(i, j)] - q1p[(i, j)]);
    Ok(LaxB {
        b2_12: p[0].iter().map(|z| -z).collect(),
        b2_21: q[0].clone(),
        b1_11: ptq,
        b1_12: p[1].clone(),
        b1_21: q[1].clone(),
        b1_22,
        b0_11: dot(&p[0], &q[1]) - dot(&p[1], &q[0]),
        b0_12,
        b0_21,
        b0_22,
        d: config.a.iter().map(|a| a + config.s).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaxBlocks {
    pub a: LaxA,
    pub b: LaxB,
    pub tau: f64,
}

impl LaxBlocks {
    pub fn b3_tilde(&self) -> CMatrix {
        let mut m = self.a.a1.clone();
        for z in m.as_mut_slice() {
            *z = -*z;
        }
        m
    }

    pub fn b1_tilde(&self) -> CMatrix {
        let mut m = self.a.a1.clone();
        for z in m.as_mut_slice() {
            *z *= self.tau;
        }
        m
    }
}

/// Serializable view of Γ₁ for machine output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma1Record {
    pub delta: f64,
    pub p: Vec<[f64; 2]>,
    pub q: Vec<[f64; 2]>,
    #[serde(rename = "Delta")]
    pub big_delta: Vec<Vec<[f64; 2]>>,
    pub trace_residual: f64,
}

impl From<&Gamma1> for Gamma1Record {
    fn from(g: &Gamma1) -> Self {
        let pair = |z: &C64| [z.re, z.im];
        Gamma1Record {
            delta: g.delta,
            p: g.p.iter().map(pair).collect(),
            q: g.q.iter().map(pair).collect(),
            big_delta: (0..g.n())
                .map(|i| g.big_delta.row(i).iter().map(pair).collect())
                .collect(),
            trace_residual: g.trace_residual(),
        }
    }
}
