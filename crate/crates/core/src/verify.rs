//! Finite-difference engine and residual checks for the identities linking
//! F, δ, p and q.
//!
//! Every check evaluates the Fredholm system at a handful of (s, τ) points,
//! differentiates numerically and reports a relative residual. Point
//! evaluations are cached per [`Verifier`] and computed in parallel.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};
use crate::operators::{
    genfun_complex_log, DetResult, EvalOptions, KernelParams, ModelConfig, Validation,
    DEFAULT_TARGET_EPS,
};
use crate::pearcey::{asymptotic, envelope, pearcey_p, pearcey_q, Branch};
use crate::quadrature::{build_contours, discretize, Grid};
use crate::rhp::{solve_system, Gamma1};

/// Derivatives of a vector in s, indexed by order.
pub type Jet = Vec<Vec<C64>>;

/// Centered finite-difference scheme with optional Richardson extrapolation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdScheme {
    pub step: f64,
    pub order: usize,
    pub width: usize,
    pub richardson: usize,
}

impl FdScheme {
    pub fn new(step: f64, order: usize, width: usize, richardson: usize) -> Result<Self> {
        let s = FdScheme {
            step,
            order,
            width,
            richardson,
        };
        s.validate()?;
        Ok(s)
    }

    /// s-direction default: width 5 up to second order and 7 beyond, one
    /// Richardson level, step 1e-2 (5e-2 for the fourth derivative).
    pub fn s_default(order: usize) -> Self {
        FdScheme {
            step: if order >= 4 { 5e-2 } else { 1e-2 },
            order,
            width: if order <= 2 { 5 } else { 7 },
            richardson: 1,
        }
    }

    /// τ-direction default: step 2e-2, width 5, one Richardson level.
    pub fn tau_default(order: usize) -> Self {
        FdScheme {
            step: 2e-2,
            order,
            width: 5,
            richardson: 1,
        }
    }

    pub fn with_order(self, order: usize) -> Self {
        FdScheme { order, ..self }
    }

    pub fn with_step(self, step: f64) -> Self {
        FdScheme { step, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-4..=1e-1).contains(&self.step) {
            return Err(Error::invalid(format!(
                "FD step {} outside [1e-4, 1e-1]",
                self.step
            )));
        }
        if !(1..=4).contains(&self.order) {
            return Err(Error::invalid(format!(
                "FD order {} outside 1..4",
                self.order
            )));
        }
        if self.width != 5 && self.width != 7 {
            return Err(Error::invalid(format!(
                "FD width must be 5 or 7, got {}",
                self.width
            )));
        }
        if self.width < self.order + 1 {
            return Err(Error::invalid("FD stencil too narrow for the order"));
        }
        if self.richardson > 2 {
            return Err(Error::invalid("at most 2 Richardson levels"));
        }
        Ok(())
    }

    /// Order of the truncation error of the plain stencil.
    pub fn accuracy(&self) -> usize {
        self.width - 1 - 2 * ((self.order - 1) / 2)
    }

    fn half_width(&self) -> i32 {
        (self.width / 2) as i32
    }

    /// Every abscissa `x0 + m·h/2^l` the scheme samples.
    pub fn points(&self, x0: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        for l in 0..=self.richardson {
            let h = self.step / (1u32 << l) as f64;
            for m in -self.half_width()..=self.half_width() {
                pts.push(x0 + m as f64 * h);
            }
        }
        pts
    }
}

/// Fornberg weights for the `order`-th derivative on the integer offsets
/// `-(width/2) ..= width/2`, unit spacing.
pub fn fd_weights(order: usize, width: usize) -> Vec<f64> {
    let m = (width / 2) as i32;
    let xs: Vec<f64> = (-m..=m).map(|i| i as f64).collect();
    let n = xs.len();
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0];
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i];
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[order]).collect()
}

/// Vector-valued finite difference: `sample(x)` returns the same-length
/// vector at every abscissa. Non-finite samples propagate into the result.
pub fn fd_derivative_vec<F>(mut sample: F, x0: f64, scheme: &FdScheme) -> Result<Vec<C64>>
where
    F: FnMut(f64) -> Result<Vec<C64>>,
{
    scheme.validate()?;
    let w = fd_weights(scheme.order, scheme.width);
    let m = scheme.half_width();
    let mut table: Vec<Vec<Vec<C64>>> = Vec::new();
    for l in 0..=scheme.richardson {
        let h = scheme.step / (1u32 << l) as f64;
        let mut acc: Vec<C64> = Vec::new();
        for (idx, i) in (-m..=m).enumerate() {
            if w[idx] == 0.0 {
                continue;
            }
            let v = sample(x0 + i as f64 * h)?;
            if acc.is_empty() {
                acc = vec![ZERO; v.len()];
            }
            if v.len() != acc.len() {
                return Err(Error::invalid("FD samples change length"));
            }
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += b * w[idx];
            }
        }
        let hp = h.powi(scheme.order as i32);
        let mut row = vec![acc.iter().map(|a| a / hp).collect::<Vec<_>>()];
        for k in 1..=l {
            let p = (scheme.accuracy() + 2 * (k - 1)) as i32;
            let f = 2f64.powi(p);
            let prev = &table[l - 1][k - 1];
            let cur = &row[k - 1];
            row.push(
                cur.iter()
                    .zip(prev)
                    .map(|(c, q)| (c * f - q) / (f - 1.0))
                    .collect(),
            );
        }
        table.push(row);
    }
    Ok(table.pop().and_then(|mut r| r.pop()).unwrap_or_default())
}

/// Scalar finite difference, see [`fd_derivative_vec`].
pub fn fd_derivative<F>(mut sample: F, x0: f64, scheme: &FdScheme) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let v = fd_derivative_vec(|x| Ok(vec![C64::new(sample(x)?, 0.0)]), x0, scheme)?;
    Ok(v.first().map(|z| z.re).unwrap_or(0.0))
}

/// One named residual at one evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: String,
    pub s: f64,
    pub tau: f64,
    pub config_hash: String,
    pub residual: f64,
    pub scale: f64,
    pub relative: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn new(
        identity: impl Into<String>,
        point: (f64, f64, &str),
        residual: f64,
        scale: f64,
        tolerance: f64,
    ) -> Self {
        let scale = scale.max(1e-300);
        let relative = residual / scale;
        ResidualReport {
            identity: identity.into(),
            s: point.0,
            tau: point.1,
            config_hash: point.2.to_string(),
            residual,
            scale,
            relative,
            tolerance,
            pass: relative.is_finite() && relative <= tolerance,
        }
    }
}

/// Relative tolerances per identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub logf_delta: f64,
    pub tw_formula: f64,
    pub delta_s: f64,
    pub ode3: f64,
    pub heat: f64,
    pub pde: f64,
    pub tau_identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            logf_delta: 1e-5,
            tw_formula: 1e-4,
            delta_s: 1e-5,
            ode3: 1e-3,
            heat: 1e-3,
            pde: 1e-3,
            tau_identity: 1e-3,
        }
    }
}

/// Determinant and residue at one (s, τ).
#[derive(Clone, Debug)]
pub struct PointState {
    pub det: DetResult,
    pub gamma1: Gamma1,
}

impl PointState {
    pub fn log_f(&self) -> f64 {
        self.det.log_value
    }

    /// `[p; q]` stacked into one vector.
    pub fn pq(&self) -> Vec<C64> {
        let mut v = self.gamma1.p.clone();
        v.extend_from_slice(&self.gamma1.q);
        v
    }
}

/// Evaluates and caches point states for one configuration on one grid.
pub struct Verifier {
    config: ModelConfig,
    grid: Arc<Grid>,
    opts: EvalOptions,
    pub tolerances: Tolerances,
    cache: Mutex<HashMap<(u64, u64), Arc<PointState>>>,
}

/// s and τ room left around the configuration when a grid is chosen.
const STENCIL_MARGIN: f64 = 0.6;

impl Verifier {
    pub fn new(config: ModelConfig, grid: Arc<Grid>, opts: EvalOptions) -> Result<Self> {
        config.validate(opts.validation)?;
        Ok(Verifier {
            config,
            grid,
            opts,
            tolerances: Tolerances::default(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Uses a default grid wide enough for stencils around the config.
    pub fn for_config(config: ModelConfig, opts: EvalOptions) -> Result<Self> {
        let grid = stencil_grid(&config)?;
        Self::new(config, Arc::new(grid), opts)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<Grid> {
        self.grid.clone()
    }

    pub fn options(&self) -> EvalOptions {
        self.opts
    }

    fn key(s: f64, tau: f64) -> (u64, u64) {
        // +0.0 and −0.0 are the same point
        ((s + 0.0).to_bits(), (tau + 0.0).to_bits())
    }

    fn compute(&self, s: f64, tau: f64) -> Result<PointState> {
        let c = ModelConfig {
            s,
            tau,
            ..self.config.clone()
        };
        let sol = solve_system(&c, &self.grid, &self.opts)?;
        Ok(PointState {
            det: sol.det,
            gamma1: sol.gamma1,
        })
    }

    pub fn state(&self, s: f64, tau: f64) -> Result<Arc<PointState>> {
        let key = Self::key(s, tau);
        if let Some(st) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(st.clone());
        }
        let st = Arc::new(self.compute(s, tau)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, st.clone());
        Ok(st)
    }

    /// Evaluates all missing points in parallel.
    pub fn prefetch(&self, points: &[(f64, f64)]) -> Result<()> {
        let mut todo: Vec<(f64, f64)> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for &(s, t) in points {
                let k = Self::key(s, t);
                if !cache.contains_key(&k) && !todo.iter().any(|&(a, b)| Self::key(a, b) == k) {
                    todo.push((s, t));
                }
            }
        }
        let results: Vec<Result<((u64, u64), PointState)>> = todo
            .par_iter()
            .map(|&(s, t)| Ok((Self::key(s, t), self.compute(s, t)?)))
            .collect();
        let mut cache = self.cache.lock().expect("cache lock");
        for r in results {
            let (k, st) = r?;
            cache.insert(k, Arc::new(st));
        }
        Ok(())
    }

    pub fn cached_points(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn point(&self, s: f64, tau: f64) -> (f64, f64, String) {
        (s, tau, self.config.config_hash())
    }

    fn report(
        &self,
        name: &str,
        s: f64,
        tau: f64,
        residual: f64,
        scale: f64,
        tol: f64,
    ) -> ResidualReport {
        let (s, t, h) = self.point(s, tau);
        ResidualReport::new(name, (s, t, &h), residual, scale, tol)
    }

    fn s_points(&self, s: f64, tau: f64, scheme: &FdScheme) -> Vec<(f64, f64)> {
        scheme.points(s).into_iter().map(|x| (x, tau)).collect()
    }

    fn tau_points(&self, s: f64, tau: f64, scheme: &FdScheme) -> Vec<(f64, f64)> {
        scheme.points(tau).into_iter().map(|t| (s, t)).collect()
    }

    fn d_s<F>(&self, s: f64, tau: f64, scheme: &FdScheme, f: F) -> Result<Vec<C64>>
    where
        F: Fn(&PointState) -> Vec<C64>,
    {
        fd_derivative_vec(|x| Ok(f(&*self.state(x, tau)?)), s, scheme)
    }

    fn d_tau<F>(&self, s: f64, tau: f64, scheme: &FdScheme, f: F) -> Result<Vec<C64>>
    where
        F: Fn(&PointState) -> Vec<C64>,
    {
        fd_derivative_vec(|t| Ok(f(&*self.state(s, t)?)), tau, scheme)
    }

    fn log_f_vec(st: &PointState) -> Vec<C64> {
        vec![C64::new(st.log_f(), 0.0)]
    }

    /// `∂ₛ log F = −δ`.
    pub fn check_logf_delta(&self, scheme: &FdScheme) -> Result<ResidualReport> {
        let (s, tau) = (self.config.s, self.config.tau);
        let scheme = scheme.with_order(1);
        self.prefetch(&self.s_points(s, tau, &scheme))?;
        let d = self.d_s(s, tau, &scheme, Self::log_f_vec)?[0].re;
        let delta = self.state(s, tau)?.gamma1.delta;
        Ok(self.report(
            "logf-delta",
            s,
            tau,
            (d + delta).abs(),
            1.0 + delta.abs(),
            self.tolerances.logf_delta,
        ))
    }

    /// `∂²ₛ log F = pᵀq`.
    pub fn check_tw_formula(&self, scheme: &FdScheme) -> Result<ResidualReport> {
        let (s, tau) = (self.config.s, self.config.tau);
        let scheme = scheme.with_order(2);
        self.prefetch(&self.s_points(s, tau, &scheme))?;
        let d2 = self.d_s(s, tau, &scheme, Self::log_f_vec)?[0].re;
        let ptq = self.state(s, tau)?.gamma1.ptq();
        let mut rep = self.report(
            "tw-formula",
            s,
            tau,
            (d2 - ptq.re).abs(),
            1.0 + ptq.norm(),
            self.tolerances.tw_formula,
        );
        if ptq.im.abs() > 1e-8 * (1.0 + ptq.norm()) {
            rep.pass = false;
        }
        Ok(rep)
    }

    /// `∂ₛδ = −pᵀq`.
    pub fn check_delta_s(&self, scheme: &FdScheme) -> Result<ResidualReport> {
        let (s, tau) = (self.config.s, self.config.tau);
        let scheme = scheme.with_order(1);
        self.prefetch(&self.s_points(s, tau, &scheme))?;
        let dd = self.d_s(s, tau, &scheme, |st| vec![C64::new(st.gamma1.delta, 0.0)])?[0].re;
        let ptq = self.state(s, tau)?.gamma1.ptq();
        Ok(self.report(
            "delta-s",
            s,
            tau,
            (dd + ptq.re).abs(),
            1.0 + ptq.norm(),
            self.tolerances.delta_s,
        ))
    }

    /// s-derivatives of p and q of orders 0..=max_order (all on one stencil).
    pub fn pq_jet(
        &self,
        s: f64,
        tau: f64,
        scheme: &FdScheme,
        max_order: usize,
    ) -> Result<(Jet, Jet)> {
        self.prefetch(&self.s_points(s, tau, scheme))?;
        let st = self.state(s, tau)?;
        let n = st.gamma1.n();
        let mut ps = vec![st.gamma1.p.clone()];
        let mut qs = vec![st.gamma1.q.clone()];
        for d in 1..=max_order {
            let v = self.d_s(s, tau, &scheme.with_order(d), PointState::pq)?;
            ps.push(v[..n].to_vec());
            qs.push(v[n..].to_vec());
        }
        Ok((ps, qs))
    }

    /// The coupled third-order system; returns the p-row and q-row reports.
    pub fn check_ode3(&self, scheme: &FdScheme) -> Result<[ResidualReport; 2]> {
        let (s, tau) = (self.config.s, self.config.tau);
        let (p, q) = self.pq_jet(s, tau, scheme, 3)?;
        let (rp, sp, rq, sq) = ode3_residuals(&p, &q, tau, &self.shifts(s));
        Ok([
            self.report("ode3-p", s, tau, rp, sp, self.tolerances.ode3),
            self.report("ode3-q", s, tau, rq, sq, self.tolerances.ode3),
        ])
    }

    fn shifts(&self, s: f64) -> Vec<f64> {
        self.config.a.iter().map(|a| a + s).collect()
    }

    /// Coupled heat equation; p-row and q-row reports.
    pub fn check_heat(
        &self,
        scheme_s: &FdScheme,
        scheme_tau: &FdScheme,
    ) -> Result<[ResidualReport; 2]> {
        let (s, tau) = (self.config.s, self.config.tau);
        let ss = scheme_s.with_order(2);
        let st = scheme_tau.with_order(1);
        let mut pts = self.s_points(s, tau, &ss);
        pts.extend(self.tau_points(s, tau, &st));
        self.prefetch(&pts)?;
        let state = self.state(s, tau)?;
        let n = state.gamma1.n();
        let (p, q) = (&state.gamma1.p, &state.gamma1.q);
        let v2 = self.d_s(s, tau, &ss, PointState::pq)?;
        let vt = self.d_tau(s, tau, &st, PointState::pq)?;
        let ptq = state.gamma1.ptq();
        let mut rp = Vec::with_capacity(n);
        let mut rq = Vec::with_capacity(n);
        for i in 0..n {
            rp.push(-0.5 * v2[i] - vt[i] - ptq * p[i]);
            rq.push(-0.5 * v2[n + i] + vt[n + i] - q[i] * ptq);
        }
        let nrm = |v: &mut dyn Iterator<Item = C64>| v.map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let sp = max3(
            nrm(&mut v2[..n].iter().map(|z| 0.5 * z)),
            nrm(&mut vt[..n].iter().copied()),
            nrm(&mut p.iter().map(|z| ptq * z)),
        );
        let sq = max3(
            nrm(&mut v2[n..].iter().map(|z| 0.5 * z)),
            nrm(&mut vt[n..].iter().copied()),
            nrm(&mut q.iter().map(|z| ptq * z)),
        );
        Ok([
            self.report(
                "heat-p",
                s,
                tau,
                nrm(&mut rp.into_iter()),
                sp,
                self.tolerances.heat,
            ),
            self.report(
                "heat-q",
                s,
                tau,
                nrm(&mut rq.into_iter()),
                sq,
                self.tolerances.heat,
            ),
        ])
    }

    /// Points the reduced-KP check samples around `(s, tau)`.
    pub fn pde_stencil(
        &self,
        s: f64,
        tau: f64,
        scheme_s: &FdScheme,
        scheme_tau: &FdScheme,
    ) -> Vec<(f64, f64)> {
        let mut pts = self.s_points(s, tau, &scheme_s.with_order(2));
        pts.extend(self.s_points(s, tau, &scheme_s.with_order(4)));
        pts.extend(self.tau_points(s, tau, &scheme_tau.with_order(2)));
        pts
    }

    /// Reduced-KP equation for `u = log F` at `(s, tau)`.
    pub fn check_pde_at(
        &self,
        s: f64,
        tau: f64,
        scheme_s: &FdScheme,
        scheme_tau: &FdScheme,
    ) -> Result<ResidualReport> {
        let s2 = scheme_s.with_order(2);
        let s4 = scheme_s.with_order(4);
        let t2 = scheme_tau.with_order(2);
        self.prefetch(&self.pde_stencil(s, tau, scheme_s, scheme_tau))?;
        let uss = self.d_s(s, tau, &s2, Self::log_f_vec)?[0].re;
        let u4 = self.d_s(s, tau, &s4, Self::log_f_vec)?[0].re;
        let utt = self.d_tau(s, tau, &t2, Self::log_f_vec)?[0].re;
        let terms = [utt, 0.5 * uss * uss, u4 / 12.0, -tau / 3.0 * uss];
        let residual = terms.iter().sum::<f64>().abs();
        let scale = terms.iter().map(|t| t.abs()).fold(0.0, f64::max);
        Ok(self.report("pde", s, tau, residual, scale, self.tolerances.pde))
    }

    /// Reduced-KP equation at the configuration's own (s, τ), using the
    /// default width-7 s-stencil.
    pub fn check_pde(&self, scheme_s: &FdScheme, scheme_tau: &FdScheme) -> Result<ResidualReport> {
        self.check_pde_at(self.config.s, self.config.tau, scheme_s, scheme_tau)
    }

    /// `∂_τ(pᵀq) = ½∂ₛ(pᵀ∂ₛq − ∂ₛpᵀq)`.
    pub fn check_tau_identity(
        &self,
        scheme_s: &FdScheme,
        scheme_tau: &FdScheme,
    ) -> Result<ResidualReport> {
        let (s, tau) = (self.config.s, self.config.tau);
        let ss = scheme_s.with_order(2);
        let st = scheme_tau.with_order(1);
        let mut pts = self.s_points(s, tau, &ss);
        pts.extend(self.tau_points(s, tau, &st));
        self.prefetch(&pts)?;
        let state = self.state(s, tau)?;
        let n = state.gamma1.n();
        let v2 = self.d_s(s, tau, &ss, PointState::pq)?;
        let vt = self.d_tau(s, tau, &st, |x| vec![x.gamma1.ptq()])?[0];
        let (p, q) = (&state.gamma1.p, &state.gamma1.q);
        // ∂ₛ of the bracket: p'q' terms cancel, leaving pᵀq'' − p''ᵀq
        let a: C64 = (0..n).map(|i| p[i] * v2[n + i]).sum::<C64>() * 0.5;
        let b: C64 = (0..n).map(|i| v2[i] * q[i]).sum::<C64>() * 0.5;
        let residual = (vt - (a - b)).norm();
        let scale = max3(vt.norm(), a.norm(), b.norm());
        Ok(self.report(
            "tau-identity",
            s,
            tau,
            residual,
            scale,
            self.tolerances.tau_identity,
        ))
    }

    /// ODE3 residuals at a sequence of steps without Richardson extrapolation.
    pub fn ode3_step_study(&self, width: usize, steps: &[f64]) -> Result<Vec<Ode3Study>> {
        let (s, tau) = (self.config.s, self.config.tau);
        let mut pts = Vec::new();
        for &h in steps {
            let sc = FdScheme::new(h, 3, width, 0)?;
            pts.extend(self.s_points(s, tau, &sc));
        }
        self.prefetch(&pts)?;
        let mut out = Vec::new();
        for &h in steps {
            let sc = FdScheme::new(h, 3, width, 0)?;
            let (p, q) = self.pq_jet(s, tau, &sc, 3)?;
            let (rp, sp, rq, sq) = ode3_residuals(&p, &q, tau, &self.shifts(s));
            // samples carry absolute noise ~ NOISE·|p|; the third-derivative
            // stencil amplifies it by Σ|w|/h³
            let amp = fd_weights(3, width).iter().map(|w| w.abs()).sum::<f64>() / h.powi(3);
            let mag = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            out.push(Ode3Study {
                step: h,
                p_relative: rp / sp.max(1e-300),
                q_relative: rq / sq.max(1e-300),
                p_noise_floor: SAMPLE_NOISE * amp * mag(&p[0]) / sp.max(1e-300),
                q_noise_floor: SAMPLE_NOISE * amp * mag(&q[0]) / sq.max(1e-300),
            });
        }
        Ok(out)
    }
}

/// Assumed absolute noise of p, q relative to their size at default
/// resolution, used for noise-floor estimates.
pub const SAMPLE_NOISE: f64 = 1e-13;

/// One row of [`Verifier::ode3_step_study`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ode3Study {
    pub step: f64,
    pub p_relative: f64,
    pub q_relative: f64,
    pub p_noise_floor: f64,
    pub q_noise_floor: f64,
}

/// For consecutive halvings: the residual drops by `ratio` or the finer one
/// is already within `floor_factor` of its noise floor.
pub fn converges_until_noise(rows: &[Ode3Study], ratio: f64, floor_factor: f64) -> bool {
    rows.windows(2).all(|w| {
        let ok =
            |prev: f64, cur: f64, floor: f64| cur <= ratio * prev || cur <= floor_factor * floor;
        ok(w[0].p_relative, w[1].p_relative, w[1].p_noise_floor)
            && ok(w[0].q_relative, w[1].q_relative, w[1].q_noise_floor)
    })
}

fn max3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).max(c)
}

/// Residual norms and scales of both rows of the third-order system.
///
/// p-row: `p''' + 3(p'·q)p + 3(p·q)p' − τp' + D p`
/// q-row: `q''' + 3(p·q)q' + 3(p·q')q − τq' − D q`
fn ode3_residuals(p: &[Vec<C64>], q: &[Vec<C64>], tau: f64, d: &[f64]) -> (f64, f64, f64, f64) {
    let n = p[0].len();
    let dot = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<C64>();
    let pq = dot(&p[0], &q[0]);
    let p1q = dot(&p[1], &q[0]);
    let pq1 = dot(&p[0], &q[1]);
    let norm = |f: &dyn Fn(usize) -> C64| (0..n).map(|i| f(i).norm_sqr()).sum::<f64>().sqrt();

    let p_terms: [&dyn Fn(usize) -> C64; 5] = [
        &|i| p[3][i],
        &|i| 3.0 * p1q * p[0][i],
        &|i| 3.0 * pq * p[1][i],
        &|i| -tau * p[1][i],
        &|i| d[i] * p[0][i],
    ];
    let q_terms: [&dyn Fn(usize) -> C64; 5] = [
        &|i| q[3][i],
        &|i| 3.0 * pq * q[1][i],
        &|i| 3.0 * pq1 * q[0][i],
        &|i| -tau * q[1][i],
        &|i| -d[i] * q[0][i],
    ];
    let rp = norm(&|i| p_terms.iter().map(|t| t(i)).sum());
    let rq = norm(&|i| q_terms.iter().map(|t| t(i)).sum());
    let sp = p_terms.iter().map(|t| norm(*t)).fold(0.0, f64::max);
    let sq = q_terms.iter().map(|t| norm(*t)).fold(0.0, f64::max);
    (rp, sp, rq, sq)
}

/// Grid covering the stencils around `config`.
pub fn stencil_grid(config: &ModelConfig) -> Result<Grid> {
    let spec = build_contours(
        config.tau.abs() + STENCIL_MARGIN,
        config.max_shift() + STENCIL_MARGIN,
        DEFAULT_TARGET_EPS,
    )?;
    discretize(&spec)
}

fn verifier(config: &ModelConfig, grid: &Grid) -> Result<Verifier> {
    Verifier::new(
        config.clone(),
        Arc::new(grid.clone()),
        EvalOptions::default(),
    )
}

pub fn check_logf_delta(
    config: &ModelConfig,
    grid: &Grid,
    scheme: &FdScheme,
) -> Result<ResidualReport> {
    verifier(config, grid)?.check_logf_delta(scheme)
}

pub fn check_tw_formula(
    config: &ModelConfig,
    grid: &Grid,
    scheme: &FdScheme,
) -> Result<ResidualReport> {
    verifier(config, grid)?.check_tw_formula(scheme)
}

pub fn check_delta_s(
    config: &ModelConfig,
    grid: &Grid,
    scheme: &FdScheme,
) -> Result<ResidualReport> {
    verifier(config, grid)?.check_delta_s(scheme)
}

pub fn check_ode3(
    config: &ModelConfig,
    grid: &Grid,
    scheme: &FdScheme,
) -> Result<[ResidualReport; 2]> {
    verifier(config, grid)?.check_ode3(scheme)
}

pub fn check_heat(
    config: &ModelConfig,
    grid: &Grid,
    scheme_s: &FdScheme,
    scheme_tau: &FdScheme,
) -> Result<[ResidualReport; 2]> {
    verifier(config, grid)?.check_heat(scheme_s, scheme_tau)
}

pub fn check_pde(
    config: &ModelConfig,
    grid: &Grid,
    scheme_s: &FdScheme,
    scheme_tau: &FdScheme,
) -> Result<ResidualReport> {
    verifier(config, grid)?.check_pde(scheme_s, scheme_tau)
}

pub fn check_tau_identity(
    config: &ModelConfig,
    grid: &Grid,
    scheme_s: &FdScheme,
    scheme_tau: &FdScheme,
) -> Result<ResidualReport> {
    verifier(config, grid)?.check_tau_identity(scheme_s, scheme_tau)
}

/// Envelope-normalized distance of q_i (p_i) from `√Δk_i·Q(a_i+s)`
/// (`√Δk_i·P(a_i+s)`) for each s in `s_list`. Rows pass when the residual
/// is strictly below the previous one of the same component; components
/// with Δk_i = 0 always pass.
pub fn check_asymptotics(
    config: &ModelConfig,
    grid: &Grid,
    s_list: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<ResidualReport>> {
    if s_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("s_list must be increasing"));
    }
    if s_list.first().is_some_and(|&s| s < 4.0) {
        return Err(Error::invalid("asymptotic checks need s >= 4"));
    }
    let states: Vec<Result<Gamma1>> = s_list
        .par_iter()
        .map(|&s| Ok(solve_system(&config.with_s(s), grid, opts)?.gamma1))
        .collect();
    let params = KernelParams::from_config(config, opts.branch_flip);
    let hash = config.config_hash();
    let n = config.n();
    let mut rows_q = vec![Vec::new(); n];
    let mut rows_p = vec![Vec::new(); n];
    for (&s, g1) in s_list.iter().zip(states) {
        let g1 = g1?;
        for i in 0..n {
            let x = config.a[i] + s;
            let (eq, ep) = (
                envelope(x, config.tau, Branch::Q)?,
                envelope(x, config.tau, Branch::P)?,
            );
            if eq == 0.0 || !ep.is_finite() {
                return Err(Error::Domain(format!("envelope under/overflow at s = {x}")));
            }
            let qv = pearcey_q(x, config.tau, grid, 0)?.value(0);
            let pv = pearcey_p(x, config.tau, grid, 0)?.value(0);
            let rk = params.sqrt_delta_k[i];
            rows_q[i].push((s, (g1.q[i] - rk * qv).norm() / eq));
            rows_p[i].push((s, (g1.p[i] - rk * pv).norm() / ep));
        }
    }
    let mut out = Vec::new();
    for (label, rows) in [("asym-q", rows_q), ("asym-p", rows_p)] {
        for (i, r) in rows.into_iter().enumerate() {
            let trivial = params.delta_k[i] == ZERO;
            for (j, &(s, v)) in r.iter().enumerate() {
                let mut rep = ResidualReport::new(
                    format!("{label}[{}]", i + 1),
                    (s, config.tau, &hash),
                    v,
                    1.0,
                    f64::INFINITY,
                );
                rep.pass = trivial || j == 0 || v < r[j - 1].1;
                out.push(rep);
            }
        }
    }
    Ok(out)
}

/// `|Q(s,τ) − Q_asym(s,τ)| / envelope(s,τ)` for each s.
pub fn q_asymptotic_errors(s_list: &[f64], tau: f64, grid: &Grid) -> Result<Vec<ResidualReport>> {
    let mut out = Vec::new();
    let mut prev = f64::INFINITY;
    for &s in s_list {
        let q = pearcey_q(s, tau, grid, 0)?.value(0);
        let e = envelope(s, tau, Branch::Q)?;
        let err = (q - asymptotic(s, tau, Branch::Q)?).abs() / e;
        let mut rep = ResidualReport::new("q-asymptotic", (s, tau, ""), err, 1.0, f64::INFINITY);
        rep.pass = err < prev;
        prev = err;
        out.push(rep);
    }
    Ok(out)
}

/// Cauchy-circle parameters for occupancy probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyOptions {
    pub rho: f64,
    pub nodes: usize,
}

impl Default for OccupancyOptions {
    fn default() -> Self {
        OccupancyOptions {
            rho: 0.5,
            nodes: 32,
        }
    }
}

/// P(#(a_j+s, a_{j+1}+s) = m_j for all j) for every m with all m_j ≤ m_max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub m: Vec<usize>,
    pub probability: f64,
    pub imag: f64,
}

const OCC_SLACK: f64 = 1e-4;

/// All occupancy probabilities with `m_j ≤ m_max`, from one set of
/// determinant samples on the circles `k_j = 1 + ρe^{iφ}`.
pub fn occupancy_table(
    config: &ModelConfig,
    m_max: usize,
    opts: &OccupancyOptions,
    grid: &Grid,
) -> Result<Vec<OccupancyRow>> {
    let d = config.n().saturating_sub(1);
    if d > 3 {
        return Err(Error::CostGuard(format!(
            "{d} intervals need {}^{d} determinants; at most 3 intervals are supported",
            opts.nodes
        )));
    }
    if !(opts.rho > 0.0 && opts.rho < 1.0) {
        return Err(Error::invalid(format!(
            "rho must lie in (0, 1), got {}",
            opts.rho
        )));
    }
    if opts.nodes == 0 || m_max >= opts.nodes {
        return Err(Error::invalid(format!(
            "need more circle nodes ({}) than the highest order ({m_max})",
            opts.nodes
        )));
    }
    let mut probe = config.clone();
    probe.k = vec![1.0; config.n() + 1];
    probe.k[0] = 0.0;
    probe.k[config.n()] = 0.0;
    probe.validate(Validation::AllowDegenerate)?;

    let n = opts.nodes;
    let total = n.pow(d as u32);
    let phis: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
    let index = |mut flat: usize| {
        let mut idx = vec![0usize; d];
        for slot in idx.iter_mut() {
            *slot = flat % n;
            flat /= n;
        }
        idx
    };
    let samples: Vec<Result<C64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let idx = index(flat);
            let mut k = vec![ZERO; config.n() + 1];
            for (j, &i) in idx.iter().enumerate() {
                k[j + 1] = C64::new(1.0, 0.0) + C64::from_polar(opts.rho, phis[i]);
            }
            let params = KernelParams::from_complex_k(&config.a, &k, config.tau, config.s, false);
            Ok(genfun_complex_log(&params, grid)?.exp())
        })
        .collect();
    let samples: Vec<C64> = samples.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for flat in 0..(m_max + 1).pow(d as u32) {
        let mut m = vec![0usize; d];
        let mut f = flat;
        for slot in m.iter_mut() {
            *slot = f % (m_max + 1);
            f /= m_max + 1;
        }
        let mut c = ZERO;
        for (sflat, v) in samples.iter().enumerate() {
            let idx = index(sflat);
            let ang: f64 = idx
                .iter()
                .zip(&m)
                .map(|(&i, &mj)| phis[i] * mj as f64)
                .sum();
            c += v * C64::from_polar(1.0, -ang);
        }
        let msum: usize = m.iter().sum();
        c /= total as f64 * opts.rho.powi(msum as i32);
        if msum % 2 == 1 {
            c = -c;
        }
        if !(c.re >= -OCC_SLACK && c.re <= 1.0 + OCC_SLACK) {
            return Err(Error::precision(
                "occupancy",
                format!("P(# = {m:?}) = {:.6e} outside [0, 1]", c.re),
            ));
        }
        rows.push(OccupancyRow {
            m,
            probability: c.re,
            imag: c.im,
        });
    }
    Ok(rows)
}

/// Joint occupancy probability for one vector `m` (one entry per interval).
pub fn occupancy(
    config: &ModelConfig,
    m: &[usize],
    opts: &OccupancyOptions,
    grid: &Grid,
) -> Result<f64> {
    if m.len() != config.n().saturating_sub(1) {
        return Err(Error::invalid(format!(
            "m has {} entries, config has {} intervals",
            m.len(),
            config.n() - 1
        )));
    }
    let m_max = m.iter().copied().max().unwrap_or(0);
    let table = occupancy_table(config, m_max, opts, grid)?;
    Ok(table
        .into_iter()
        .find(|r| r.m == m)
        .map(|r| r.probability)
        .expect("requested index is in the table"))
}
