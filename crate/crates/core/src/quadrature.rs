//! Oriented contours and composite Gauss–Legendre grids.
//!
//! Six rays leave the origin: the imaginary axis (±π/2) and the two
//! halves Σ₊ (±π/4) and Σ₋ (±3π/4) of the Σ contour. Each ray carries an
//! orientation, and a node's weight is its real Gauss–Legendre weight times
//! the unit tangent of traversal. Panels are geometrically graded toward the
//! origin, where Σ and iℝ meet and the integrands have a corner.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ZERO};

/// Smallest admissible truncation radius.
pub const MIN_TRUNCATION: f64 = 6.0;

const ANGLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContourTag {
    SigmaPlus,
    SigmaMinus,
    ImagAxis,
}

impl ContourTag {
    pub const ALL: [ContourTag; 3] = [
        ContourTag::SigmaPlus,
        ContourTag::SigmaMinus,
        ContourTag::ImagAxis,
    ];

    pub fn is_sigma(self) -> bool {
        !matches!(self, ContourTag::ImagAxis)
    }

    fn angles(self) -> [f64; 2] {
        match self {
            ContourTag::SigmaPlus => [FRAC_PI_4, -FRAC_PI_4],
            ContourTag::SigmaMinus => [3.0 * FRAC_PI_4, -3.0 * FRAC_PI_4],
            ContourTag::ImagAxis => [FRAC_PI_2, -FRAC_PI_2],
        }
    }
}

/// Direction of travel along a ray. Serialized as `+1` / `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Orientation {
    Outward,
    Inward,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Outward => 1.0,
            Orientation::Inward => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Orientation::Outward => Orientation::Inward,
            Orientation::Inward => Orientation::Outward,
        }
    }
}

impl TryFrom<i8> for Orientation {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Orientation::Outward),
            -1 => Ok(Orientation::Inward),
            other => Err(format!("orientation must be +1 or -1, got {other}")),
        }
    }
}

impl From<Orientation> for i8 {
    fn from(o: Orientation) -> i8 {
        match o {
            Orientation::Outward => 1,
            Orientation::Inward => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub angle: f64,
    pub orientation: Orientation,
    pub truncation: f64,
    pub tag: ContourTag,
}

impl Ray {
    pub fn direction(&self) -> C64 {
        C64::from_polar(1.0, self.angle)
    }
}

fn default_min_panel() -> f64 {
    1e-12
}

fn default_inner_nodes() -> usize {
    12
}

fn default_inner_radius() -> f64 {
    1.0
}

/// Contour geometry plus panel layout.
///
/// On each ray the segment `[0, inner_radius]` is split geometrically with
/// ratio `grading` until panels are shorter than `min_panel`, and
/// `[inner_radius, truncation]` is split into `panels_per_ray` equal panels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub rays: Vec<Ray>,
    pub panels_per_ray: usize,
    pub nodes_per_panel: usize,
    pub grading: f64,
    #[serde(default = "default_min_panel")]
    pub min_panel: f64,
    #[serde(default = "default_inner_nodes")]
    pub inner_nodes_per_panel: usize,
    #[serde(default = "default_inner_radius")]
    pub inner_radius: f64,
}

impl ContourSpec {
    /// Full contour set with the default orientation and panel layout.
    pub fn standard(truncation: f64) -> Self {
        use ContourTag::*;
        use Orientation::*;
        let ray = |angle, orientation, tag| Ray {
            angle,
            orientation,
            truncation,
            tag,
        };
        ContourSpec {
            rays: vec![
                ray(FRAC_PI_2, Outward, ImagAxis),
                ray(-FRAC_PI_2, Inward, ImagAxis),
                ray(FRAC_PI_4, Inward, SigmaPlus),
                ray(-FRAC_PI_4, Outward, SigmaPlus),
                ray(3.0 * FRAC_PI_4, Outward, SigmaMinus),
                ray(-3.0 * FRAC_PI_4, Inward, SigmaMinus),
            ],
            panels_per_ray: 12,
            nodes_per_panel: 16,
            grading: 0.25,
            min_panel: default_min_panel(),
            inner_nodes_per_panel: default_inner_nodes(),
            inner_radius: default_inner_radius(),
        }
    }

    /// Reverses both rays carrying `tag`.
    pub fn flip(&mut self, tag: ContourTag) {
        for r in self.rays.iter_mut().filter(|r| r.tag == tag) {
            r.orientation = r.orientation.reversed();
        }
    }

    pub fn flipped(mut self, tag: ContourTag) -> Self {
        self.flip(tag);
        self
    }

    /// Keeps only the rays whose tag is in `tags`.
    pub fn restricted(mut self, tags: &[ContourTag]) -> Self {
        self.rays.retain(|r| tags.contains(&r.tag));
        self
    }

    pub fn set_truncation(&mut self, r: f64) {
        for ray in self.rays.iter_mut() {
            ray.truncation = r;
        }
    }

    pub fn max_truncation(&self) -> f64 {
        self.rays.iter().map(|r| r.truncation).fold(0.0, f64::max)
    }

    pub fn has_tag(&self, tag: ContourTag) -> bool {
        self.rays.iter().any(|r| r.tag == tag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays.is_empty() {
            return Err(Error::invalid("contour spec has no rays"));
        }
        if self.panels_per_ray == 0 || self.nodes_per_panel == 0 || self.inner_nodes_per_panel == 0
        {
            return Err(Error::invalid("panel and node counts must be positive"));
        }
        if !(self.grading > 0.0 && self.grading < 1.0) {
            return Err(Error::invalid(format!(
                "grading must lie in (0, 1), got {}",
                self.grading
            )));
        }
        if !(self.inner_radius.is_finite() && self.inner_radius > 0.0) {
            return Err(Error::invalid("inner_radius must be positive"));
        }
        if !(self.min_panel > 0.0 && self.min_panel < self.inner_radius) {
            return Err(Error::invalid(format!(
                "min_panel must lie in (0, inner_radius), got {}",
                self.min_panel
            )));
        }
        for r in &self.rays {
            if !(r.angle > -PI && r.angle <= PI) {
                return Err(Error::invalid(format!(
                    "ray angle {} outside (-pi, pi]",
                    r.angle
                )));
            }
            if !(r.truncation.is_finite() && r.truncation > 0.0) {
                return Err(Error::invalid(format!(
                    "ray truncation must be positive, got {}",
                    r.truncation
                )));
            }
            if r.truncation <= self.inner_radius {
                return Err(Error::invalid(format!(
                    "ray truncation {} does not exceed inner_radius {}",
                    r.truncation, self.inner_radius
                )));
            }
            let [a0, a1] = r.tag.angles();
            if (r.angle - a0).abs() > ANGLE_TOL && (r.angle - a1).abs() > ANGLE_TOL {
                return Err(Error::invalid(format!(
                    "{:?} ray at angle {} (expected {} or {})",
                    r.tag, r.angle, a0, a1
                )));
            }
        }
        // each present contour must be one curve through the origin: its two
        // rays, one entering and one leaving
        for tag in ContourTag::ALL {
            let rays: Vec<&Ray> = self.rays.iter().filter(|r| r.tag == tag).collect();
            match rays.as_slice() {
                [] => {}
                [r0, r1] => {
                    if (r0.angle - r1.angle).abs() < ANGLE_TOL {
                        return Err(Error::invalid(format!("{tag:?} has two rays at one angle")));
                    }
                    if r0.orientation == r1.orientation {
                        return Err(Error::invalid(format!(
                            "{tag:?} rays are not a consistent traversal (both {:?})",
                            r0.orientation
                        )));
                    }
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "{tag:?} needs exactly two rays, got {}",
                        rays.len()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Radial panel edges on a ray of length `truncation`, increasing from 0.
    fn radial_edges(&self, truncation: f64) -> (Vec<f64>, usize) {
        let mut graded = Vec::new();
        let mut r = self.inner_radius;
        while r > self.min_panel {
            graded.push(r);
            r *= self.grading;
        }
        graded.reverse();
        let mut edges = Vec::with_capacity(graded.len() + self.panels_per_ray + 1);
        edges.push(0.0);
        edges.extend_from_slice(&graded);
        let n_inner = edges.len() - 1;
        let h = (truncation - self.inner_radius) / self.panels_per_ray as f64;
        for i in 1..=self.panels_per_ray {
            edges.push(if i == self.panels_per_ray {
                truncation
            } else {
                self.inner_radius + h * i as f64
            });
        }
        (edges, n_inner)
    }
}

/// Smallest `r > 0` with `r⁴/8 − |s_max|·r − |tau|·r²/2 ≥ −ln(target_eps)`.
pub fn truncation_radius(tau: f64, s_max: f64, target_eps: f64) -> Result<f64> {
    if !(tau.is_finite() && s_max.is_finite() && target_eps.is_finite()) {
        return Err(Error::invalid("non-finite input to truncation_radius"));
    }
    if !(target_eps > 0.0 && target_eps < 1.0) {
        return Err(Error::invalid(format!(
            "target_eps must lie in (0, 1), got {target_eps}"
        )));
    }
    let (s, t, c) = (s_max.abs(), tau.abs(), -target_eps.ln());
    let g = |r: f64| r.powi(4) / 8.0 - s * r - t * r * r / 2.0 - c;
    // one sign change in the coefficients, so exactly one positive root
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Default contour set for the given parameter range.
pub fn build_contours(tau: f64, s_max: f64, target_eps: f64) -> Result<ContourSpec> {
    let r = truncation_radius(tau, s_max, target_eps)?;
    Ok(ContourSpec::standard(r.max(MIN_TRUNCATION)))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes increasing.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Legendre P_n and its derivative at z by the three-term recurrence
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = if n == 1 {
            1.0
        } else {
            n as f64 * (z * p1 - p0) / (z * z - 1.0)
        };
        (p1, dp)
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre rule along the straight segment `z0 -> z1`, split into
/// `panels` equal panels.
pub fn segment_quadrature(z0: C64, z1: C64, panels: usize, nodes: usize) -> (Vec<C64>, Vec<C64>) {
    let (x, w) = gauss_legendre(nodes);
    let mut zs = Vec::with_capacity(panels * nodes);
    let mut ws = Vec::with_capacity(panels * nodes);
    let h = (z1 - z0) / panels as f64;
    for p in 0..panels {
        let a = z0 + h * p as f64;
        let mid = a + h * 0.5;
        for (xi, wi) in x.iter().zip(&w) {
            zs.push(mid + h * (0.5 * xi));
            ws.push(h * (0.5 * wi));
        }
    }
    (zs, ws)
}

/// A straight panel in traversal order: `start` to `end`, nodes in `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub start: C64,
    pub end: C64,
    pub range: std::ops::Range<usize>,
    pub tag: ContourTag,
}

/// Summary of the discretization, attached to every emitted record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub truncation: f64,
    pub panels_per_ray: usize,
    pub nodes_per_panel: usize,
    pub grading: f64,
    pub min_panel: f64,
    pub inner_nodes_per_panel: usize,
    pub nodes: usize,
}

#[derive(Debug)]
pub struct Grid {
    nodes: Vec<C64>,
    weights: Vec<C64>,
    tags: Vec<ContourTag>,
    panels: Vec<Panel>,
    spec: ContourSpec,
    sigma: Vec<usize>,
    imag: Vec<usize>,
    cauchy: OnceLock<CMatrix>,
}

impl Clone for Grid {
    fn clone(&self) -> Self {
        Grid {
            nodes: self.nodes.clone(),
            weights: self.weights.clone(),
            tags: self.tags.clone(),
            panels: self.panels.clone(),
            spec: self.spec.clone(),
            sigma: self.sigma.clone(),
            imag: self.imag.clone(),
            cauchy: OnceLock::new(),
        }
    }
}

pub fn discretize(spec: &ContourSpec) -> Result<Grid> {
    spec.validate()?;
    let (xo, wo) = gauss_legendre(spec.nodes_per_panel);
    let (xi, wi) = gauss_legendre(spec.inner_nodes_per_panel);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut tags = Vec::new();
    let mut panels = Vec::new();
    for ray in &spec.rays {
        let dir = ray.direction();
        let sign = ray.orientation.sign();
        let (edges, n_inner) = spec.radial_edges(ray.truncation);
        for (p, pair) in edges.windows(2).enumerate() {
            let (lo, hi) = (pair[0], pair[1]);
            let (x, w) = if p < n_inner { (&xi, &wi) } else { (&xo, &wo) };
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            let start_idx = nodes.len();
            for (xk, wk) in x.iter().zip(w) {
                nodes.push(dir * (mid + half * xk));
                weights.push(dir * (sign * half * wk));
                tags.push(ray.tag);
            }
            let (a, b) = (dir * lo, dir * hi);
            let (start, end) = if sign > 0.0 { (a, b) } else { (b, a) };
            panels.push(Panel {
                start,
                end,
                range: start_idx..nodes.len(),
                tag: ray.tag,
            });
        }
    }
    let sigma = (0..nodes.len()).filter(|&i| tags[i].is_sigma()).collect();
    let imag = (0..nodes.len()).filter(|&i| !tags[i].is_sigma()).collect();
    Ok(Grid {
        nodes,
        weights,
        tags,
        panels,
        spec: spec.clone(),
        sigma,
        imag,
        cauchy: OnceLock::new(),
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[C64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    pub fn tags(&self) -> &[ContourTag] {
        &self.tags
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    pub fn spec(&self) -> &ContourSpec {
        &self.spec
    }

    /// Indices of Σ nodes, in grid order.
    pub fn sigma_indices(&self) -> &[usize] {
        &self.sigma
    }

    /// Indices of iℝ nodes, in grid order.
    pub fn imag_indices(&self) -> &[usize] {
        &self.imag
    }

    pub fn has_tag(&self, tag: ContourTag) -> bool {
        self.spec.has_tag(tag)
    }

    pub fn truncation(&self) -> f64 {
        self.spec.max_truncation()
    }

    pub fn params(&self) -> GridParams {
        GridParams {
            truncation: self.truncation(),
            panels_per_ray: self.spec.panels_per_ray,
            nodes_per_panel: self.spec.nodes_per_panel,
            grading: self.spec.grading,
            min_panel: self.spec.min_panel,
            inner_nodes_per_panel: self.spec.inner_nodes_per_panel,
            nodes: self.len(),
        }
    }

    /// `C[a][b] = 1/(σ_a − ι_b)` over Σ × iℝ, built on first use.
    pub fn cauchy(&self) -> Result<&CMatrix> {
        if let Some(c) = self.cauchy.get() {
            return Ok(c);
        }
        let mut c = CMatrix::zeros(self.sigma.len(), self.imag.len());
        for (a, &ia) in self.sigma.iter().enumerate() {
            let sa = self.nodes[ia];
            let row = c.row_mut(a);
            for (b, &ib) in self.imag.iter().enumerate() {
                let d = sa - self.nodes[ib];
                if d.norm() < 1e-14 {
                    return Err(Error::GridDegeneracy(format!(
                        "nodes {ia} and {ib} are {:.3e} apart",
                        d.norm()
                    )));
                }
                row[b] = d.inv();
            }
        }
        let _ = self.cauchy.set(c);
        Ok(self.cauchy.get().expect("just set"))
    }
}

/// `Σ values_i · weights_i`, optionally restricted to nodes whose tag is in
/// `tag_filter`.
pub fn integrate(grid: &Grid, values: &[C64], tag_filter: Option<&[ContourTag]>) -> Result<C64> {
    if values.len() != grid.len() {
        return Err(Error::invalid(format!(
            "{} values for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let mut acc = ZERO;
    for ((v, w), t) in values.iter().zip(&grid.weights).zip(&grid.tags) {
        if tag_filter.is_none_or(|f| f.contains(t)) {
            acc += v * w;
        }
    }
    Ok(acc)
}
