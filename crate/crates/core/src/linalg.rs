//! Dense complex matrices: GEMM, blocked LU with partial pivoting, log-determinant.
//!
//! Storage is row-major. Products go through `matrixmultiply::zgemm`; the LU
//! is a right-looking blocked factorization whose trailing updates are GEMMs,
//! which is where nearly all of the flops land for the matrix sizes used here.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

const LU_BLOCK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::invalid(format!(
                "shape mismatch in product: {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        gemm_acc(ONE, self, rhs, ZERO, &mut out);
        Ok(out)
    }

    pub fn matvec(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "vector length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `I - self` for a square matrix.
    pub fn one_minus(&self) -> CMatrix {
        let mut m = self.clone();
        for z in m.data.iter_mut() {
            *z = -*z;
        }
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += ONE;
        }
        m
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `c <- alpha * a * b + beta * c`. Shapes are asserted.
pub(crate) fn gemm_acc(alpha: C64, a: &CMatrix, b: &CMatrix, beta: C64, c: &mut CMatrix) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: the three buffers are distinct allocations whose extents match
    // the shapes and row-major strides passed below.
    unsafe {
        zgemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
        );
    }
}

#[allow(clippy::too_many_arguments)]
unsafe fn zgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    alpha: C64,
    a: *const C64,
    lda: isize,
    b: *const C64,
    ldb: isize,
    beta: C64,
    c: *mut C64,
    ldc: isize,
) {
    use matrixmultiply::CGemmOption::Standard;
    // Complex64 is #[repr(C)] { re, im }, layout-compatible with [f64; 2].
    matrixmultiply::zgemm(
        Standard,
        Standard,
        m,
        k,
        n,
        [alpha.re, alpha.im],
        a as *const [f64; 2],
        lda,
        1,
        b as *const [f64; 2],
        ldb,
        1,
        [beta.re, beta.im],
        c as *mut [f64; 2],
        ldc,
        1,
    );
}

/// LU factorization `P A = L U` with partial pivoting.
#[derive(Clone, Debug)]
pub struct LuFactorization {
    lu: CMatrix,
    /// Row swapped with row `j` at step `j`.
    pivots: Vec<usize>,
}

impl LuFactorization {
    pub fn new(mut a: CMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::invalid(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        if !a.is_finite() {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let n = a.rows;
        let mut pivots = vec![0usize; n];
        let mut k0 = 0;
        while k0 < n {
            let kb = LU_BLOCK.min(n - k0);
            factor_panel(&mut a, k0, kb, &mut pivots)?;
            let k1 = k0 + kb;
            if k1 < n {
                solve_unit_lower_block(&mut a, k0, kb);
                trailing_update(&mut a, k0, kb);
            }
            k0 = k1;
        }
        Ok(LuFactorization { lu: a, pivots })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Complex logarithm of the determinant (branch: sum of principal logs).
    pub fn log_det(&self) -> C64 {
        let n = self.dim();
        let swaps = (0..n).filter(|&j| self.pivots[j] != j).count();
        let mut acc: C64 = (0..n).map(|j| self.lu[(j, j)].ln()).sum();
        if swaps % 2 == 1 {
            acc += C64::new(0.0, std::f64::consts::PI);
        }
        acc
    }

    pub fn det(&self) -> C64 {
        self.log_det().exp()
    }

    /// Smallest |u_jj| / largest |u_jj|: a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..n {
            let v = self.lu[(j, j)].norm();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lo / hi
    }

    /// Solves `A X = B` in place for all columns of `b`.
    pub fn solve_in_place(&self, b: &mut CMatrix) -> Result<()> {
        let n = self.dim();
        if b.rows != n {
            return Err(Error::invalid(format!(
                "right-hand side has {} rows, system has {}",
                b.rows, n
            )));
        }
        let r = b.cols;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                for c in 0..r {
                    b.data.swap(j * r + c, p * r + c);
                }
            }
        }
        // forward: L y = Pb, unit diagonal
        for i in 0..n {
            let li = self.lu.row(i);
            for k in 0..i {
                let l = li[k];
                if l == ZERO {
                    continue;
                }
                for c in 0..r {
                    let t = b.data[k * r + c];
                    b.data[i * r + c] -= l * t;
                }
            }
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let ui = self.lu.row(i);
            for k in i + 1..n {
                let u = ui[k];
                if u == ZERO {
                    continue;
                }
                for c in 0..r {
                    let t = b.data[k * r + c];
                    b.data[i * r + c] -= u * t;
                }
            }
            let d = ui[i];
            for c in 0..r {
                b.data[i * r + c] /= d;
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        let mut x = b.clone();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

fn factor_panel(a: &mut CMatrix, k0: usize, kb: usize, pivots: &mut [usize]) -> Result<()> {
    let n = a.rows;
    let k1 = k0 + kb;
    for j in k0..k1 {
        let mut p = j;
        let mut best = -1.0;
        for i in j..n {
            let v = a[(i, j)].l1_norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular(j));
        }
        pivots[j] = p;
        if p != j {
            let (lo, hi) = a.data.split_at_mut(p * n);
            lo[j * n..(j + 1) * n].swap_with_slice(&mut hi[..n]);
        }
        let inv = ONE / a[(j, j)];
        let (head, tail) = a.data.split_at_mut((j + 1) * n);
        let pivot_row = &head[j * n..(j + 1) * n];
        for i in 0..n - j - 1 {
            let row = &mut tail[i * n..(i + 1) * n];
            let l = row[j] * inv;
            row[j] = l;
            if l != ZERO {
                for c in j + 1..k1 {
                    row[c] -= l * pivot_row[c];
                }
            }
        }
    }
    Ok(())
}

/// U12 <- L11^{-1} A12 for the block rows k0..k0+kb.
fn solve_unit_lower_block(a: &mut CMatrix, k0: usize, kb: usize) {
    let n = a.cols;
    let k1 = k0 + kb;
    for j in k0..k1 {
        let (head, tail) = a.data.split_at_mut((j + 1) * n);
        let src = &head[j * n..(j + 1) * n];
        for i in j + 1..k1 {
            let row = &mut tail[(i - j - 1) * n..(i - j) * n];
            let l = row[j];
            if l == ZERO {
                continue;
            }
            for c in k1..n {
                row[c] -= l * src[c];
            }
        }
    }
}

/// A22 <- A22 - L21 U12.
fn trailing_update(a: &mut CMatrix, k0: usize, kb: usize) {
    let n = a.cols;
    let k1 = k0 + kb;
    let m2 = n - k1;
    let base = a.data.as_mut_ptr();
    // SAFETY: L21 (rows k1.., cols k0..k1), U12 (rows k0..k1, cols k1..) and
    // A22 (rows k1.., cols k1..) are pairwise disjoint element sets of the
    // same row-major buffer with leading dimension n.
    unsafe {
        zgemm_raw(
            m2,
            kb,
            m2,
            C64::new(-1.0, 0.0),
            base.add(k1 * n + k0),
            n as isize,
            base.add(k0 * n + k1),
            n as isize,
            ONE,
            base.add(k1 * n + k1),
            n as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pseudo_random(n: usize, seed: u64) -> CMatrix {
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(n, n, |_, _| C64::new(next(), next()))
    }

    fn det_by_expansion(m: &CMatrix) -> C64 {
        let n = m.rows();
        if n == 1 {
            return m[(0, 0)];
        }
        let mut acc = ZERO;
        for j in 0..n {
            let minor = CMatrix::from_fn(n - 1, n - 1, |r, c| {
                m[(r + 1, if c < j { c } else { c + 1 })]
            });
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += m[(0, j)] * det_by_expansion(&minor) * sign;
        }
        acc
    }

    #[test]
    fn identity_has_unit_determinant() {
        let lu = LuFactorization::new(CMatrix::identity(130)).unwrap();
        assert!((lu.det() - ONE).norm() < 1e-14);
    }

    #[test]
    fn small_determinants_match_cofactor_expansion() {
        for n in 1..=6 {
            let m = pseudo_random(n, n as u64);
            let lu = LuFactorization::new(m.clone()).unwrap();
            let want = det_by_expansion(&m);
            assert!(
                (lu.det() - want).norm() <= 1e-13 * (1.0 + want.norm()),
                "n={n}"
            );
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut m = pseudo_random(5, 3);
        for j in 0..5 {
            let v = m[(0, j)];
            m[(3, j)] = v;
        }
        match LuFactorization::new(m) {
            Err(Error::Singular(_)) => {}
            Ok(lu) => assert!(lu.det().norm() < 1e-14),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn blocked_solve_has_small_residual() {
        // larger than one block so the GEMM trailing update runs
        let n = 203;
        let mut a = pseudo_random(n, 11);
        for i in 0..n {
            a[(i, i)] += C64::new(4.0, 0.0);
        }
        let b = CMatrix::from_fn(n, 3, |i, j| C64::new((i + j) as f64, 1.0));
        let lu = LuFactorization::new(a.clone()).unwrap();
        let x = lu.solve(&b).unwrap();
        let ax = a.matmul(&x).unwrap();
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..3 {
                err = err.max((ax[(i, j)] - b[(i, j)]).norm());
            }
        }
        assert!(err < 1e-10 * b.max_abs(), "residual {err}");
    }

    #[test]
    fn matmul_matches_naive_product() {
        let a = CMatrix::from_fn(7, 5, |i, j| {
            C64::new(i as f64 - j as f64, (i * j) as f64 * 0.1)
        });
        let b = CMatrix::from_fn(5, 4, |i, j| C64::new(0.5 * i as f64, j as f64 - 1.0));
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..4 {
                let want: C64 = (0..5).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - want).norm() < 1e-12);
            }
        }
        assert!(a.matmul(&a).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn determinant_is_multiplicative(n in 1usize..90, s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = pseudo_random(n, s1);
            let b = pseudo_random(n, s2 + 5000);
            let ab = a.matmul(&b).unwrap();
            let la = LuFactorization::new(a).unwrap().log_det();
            let lb = LuFactorization::new(b).unwrap().log_det();
            let lab = LuFactorization::new(ab).unwrap().log_det();
            // compare moduli and phases modulo 2π
            prop_assert!((la.re + lb.re - lab.re).abs() < 1e-9 * (1.0 + lab.re.abs()));
            let dphi = (la.im + lb.im - lab.im).rem_euclid(2.0 * std::f64::consts::PI);
            let dphi = dphi.min(2.0 * std::f64::consts::PI - dphi);
            prop_assert!(dphi < 1e-8);
        }
    }
}
