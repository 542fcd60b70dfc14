//! Dense symmetric linear algebra helpers shared by the samplers and solvers.
//!
//! Everything here operates on `f64` and assumes symmetric input where stated.
//! The symmetric eigendecomposition goes through LAPACK's divide-and-conquer
//! driver (`dsyevd`), which is substantially faster than the QR driver for the
//! matrix sizes the exact oracles need.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};

extern "C" {
    // LAPACK divide-and-conquer symmetric eigensolver (column-major).
    fn dsyevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    // Triangular multi-RHS solve.
    fn dtrtrs_(
        uplo: *const u8,
        trans: *const u8,
        diag: *const u8,
        n: *const i32,
        nrhs: *const i32,
        a: *const f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    // Cholesky factorization.
    fn dpotrf_(uplo: *const u8, n: *const i32, a: *mut f64, lda: *const i32, info: *mut i32);

    fn openblas_set_num_threads(n: i32);
}

/// Caps the number of threads OpenBLAS may use for subsequent calls.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) };
}

/// Symmetric eigendecomposition, eigenvalues ascending.
///
/// Returns `(values, vectors)` where column `j` of `vectors` is the
/// eigenvector for `values[j]`. The vectors array is column-major so that
/// per-eigenvector sweeps touch contiguous memory.
pub fn sym_eigh(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid(format!(
            "sym_eigh expects a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0).f())));
    }
    // Column-major copy; symmetric input makes the transpose a no-op.
    let mut buf: Vec<f64> = Vec::with_capacity(n * n);
    for col in a.t().rows() {
        buf.extend(col.iter());
    }
    let mut vals = vec![0.0f64; n];
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        // Workspace query.
        let (mut wkopt, mut iwkopt) = (0.0f64, 0i32);
        let m1 = -1i32;
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &ni,
            buf.as_mut_ptr(),
            &ni,
            vals.as_mut_ptr(),
            &mut wkopt,
            &m1,
            &mut iwkopt,
            &m1,
            &mut info,
        );
        if info != 0 {
            return Err(Error::numeric(format!("dsyevd workspace query failed: info={info}")));
        }
        let lwork = wkopt as i32;
        let liwork = iwkopt;
        let mut work = vec![0.0f64; lwork as usize];
        let mut iwork = vec![0i32; liwork as usize];
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &ni,
            buf.as_mut_ptr(),
            &ni,
            vals.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::numeric(format!("dsyevd failed to converge: info={info}")));
    }
    let vectors = Array2::from_shape_vec((n, n).f(), buf)
        .map_err(|e| Error::numeric(format!("eigenvector reshape: {e}")))?;
    Ok((Array1::from_vec(vals), vectors))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_operator_norm(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (vals, _) = sym_eigh(a)?;
    Ok(vals.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn lapack_cholesky_upper(g: &Array2<f64>) -> std::result::Result<Array2<f64>, i32> {
    let n = g.nrows();
    // Column-major buffer; symmetric input, copy as-is.
    let mut buf: Vec<f64> = Vec::with_capacity(n * n);
    for col in g.t().rows() {
        buf.extend(col.iter());
    }
    let ni = n as i32;
    let mut info = 0i32;
    unsafe {
        dpotrf_(b"U".as_ptr(), &ni, buf.as_mut_ptr(), &ni, &mut info);
    }
    if info != 0 {
        return Err(info);
    }
    // dpotrf leaves the strict lower triangle untouched; zero it out.
    let mut u = Array2::from_shape_vec((n, n).f(), buf).expect("square reshape");
    for i in 1..n {
        for j in 0..i {
            u[[i, j]] = 0.0;
        }
    }
    Ok(u)
}

/// Upper-triangular Cholesky factor of a symmetric positive definite matrix,
/// together with the diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct CholFactor {
    upper: Array2<f64>,
    jitter: f64,
}

impl CholFactor {
    /// Factorizes `g` as `UᵀU = g + jitter·I`, escalating the jitter from
    /// `1e-12·tr(g)` by factors of ten up to `1e-6·tr(g)` when the plain
    /// factorization fails.
    pub fn new(g: &Array2<f64>) -> Result<Self> {
        Self::with_jitter_schedule(g, true)
    }

    /// Factorization without the jitter fallback; fails on any non-PD input.
    pub fn new_strict(g: &Array2<f64>) -> Result<Self> {
        Self::with_jitter_schedule(g, false)
    }

    fn with_jitter_schedule(g: &Array2<f64>, allow_jitter: bool) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::invalid(format!(
                "cholesky expects a square matrix, got {}x{}",
                n,
                g.ncols()
            )));
        }
        if let Ok(upper) = lapack_cholesky_upper(g) {
            return Ok(CholFactor { upper, jitter: 0.0 });
        }
        if !allow_jitter {
            return Err(Error::numeric("matrix is not positive definite".to_string()));
        }
        let trace: f64 = g.diag().sum();
        let scale = if trace > 0.0 { trace } else { 1.0 };
        let mut attempted = Vec::new();
        let mut jitter = 1e-12 * scale;
        let cap = 1e-6 * scale;
        while jitter <= cap * (1.0 + 1e-15) {
            let mut gj = g.clone();
            for i in 0..n {
                gj[[i, i]] += jitter;
            }
            if let Ok(upper) = lapack_cholesky_upper(&gj) {
                return Ok(CholFactor { upper, jitter });
            }
            attempted.push(jitter);
            jitter *= 10.0;
        }
        Err(Error::numeric(format!(
            "cholesky failed after jitter escalation; attempted jitters {attempted:?}"
        )))
    }

    pub fn dim(&self) -> usize {
        self.upper.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn upper(&self) -> &Array2<f64> {
        &self.upper
    }

    /// Solves `(UᵀU) x = b`.
    pub fn solve_vec(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        let mut buf = b.to_vec();
        self.solve_in_place(&mut buf, 1)?;
        debug_assert_eq!(buf.len(), n);
        Ok(Array1::from_vec(buf))
    }

    /// Solves `(UᵀU) X = B` for a multi-column right-hand side.
    ///
    /// Returns `X` in column-major layout (columns are solutions).
    pub fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::invalid(format!(
                "rhs has {} rows, factor dimension is {n}",
                b.nrows()
            )));
        }
        let ncols = b.ncols();
        let mut buf: Vec<f64> = Vec::with_capacity(n * ncols);
        for col in b.t().rows() {
            buf.extend(col.iter());
        }
        self.solve_in_place(&mut buf, ncols)?;
        Array2::from_shape_vec((n, ncols).f(), buf)
            .map_err(|e| Error::numeric(format!("solve reshape: {e}")))
    }

    fn solve_in_place(&self, buf: &mut [f64], nrhs: usize) -> Result<()> {
        let n = self.dim() as i32;
        let nrhs_i = nrhs as i32;
        // The factor is column-major by construction (F-order array).
        let a = self.upper.as_ptr();
        let mut info = 0i32;
        unsafe {
            dtrtrs_(
                b"U".as_ptr(),
                b"T".as_ptr(),
                b"N".as_ptr(),
                &n,
                &nrhs_i,
                a,
                &n,
                buf.as_mut_ptr(),
                &n,
                &mut info,
            );
            if info == 0 {
                dtrtrs_(
                    b"U".as_ptr(),
                    b"N".as_ptr(),
                    b"N".as_ptr(),
                    &n,
                    &nrhs_i,
                    a,
                    &n,
                    buf.as_mut_ptr(),
                    &n,
                    &mut info,
                );
            }
        }
        if info != 0 {
            return Err(Error::numeric(format!("triangular solve failed: info={info}")));
        }
        Ok(())
    }
}

/// Solves `U x = b` with `U` upper triangular.
pub fn solve_upper(u: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    triangular_solve(u, b, false)
}

/// Solves `Uᵀ x = b` with `U` upper triangular.
pub fn solve_upper_transposed(u: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    triangular_solve(u, b, true)
}

fn triangular_solve(u: &Array2<f64>, b: &Array1<f64>, transpose: bool) -> Result<Array1<f64>> {
    let n = u.nrows();
    if u.ncols() != n || b.len() != n {
        return Err(Error::invalid("triangular solve dimension mismatch".to_string()));
    }
    let mut x = b.to_vec();
    // Plain substitution; the preconditioner factors this serves are small.
    if transpose {
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= u[[k, i]] * x[k];
            }
            let d = u[[i, i]];
            if d == 0.0 {
                return Err(Error::numeric("singular triangular factor".to_string()));
            }
            x[i] = s / d;
        }
    } else {
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= u[[i, k]] * x[k];
            }
            let d = u[[i, i]];
            if d == 0.0 {
                return Err(Error::numeric("singular triangular factor".to_string()));
            }
            x[i] = s / d;
        }
    }
    Ok(Array1::from_vec(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let b = Array2::from_shape_fn((n, n), |_| next());
        let mut g = b.t().dot(&b);
        for i in 0..n {
            g[[i, i]] += n as f64 * 0.1;
        }
        g
    }

    #[test]
    fn eigh_reconstructs_matrix() {
        let g = random_spd(12, 7);
        let (vals, vecs) = sym_eigh(g.view()).unwrap();
        let lam = Array2::from_diag(&vals);
        let rec = vecs.dot(&lam).dot(&vecs.t());
        let err = (&rec - &g).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10 * g[[0, 0]].abs().max(1.0), "err={err}");
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn eigh_orthonormal_vectors() {
        let g = random_spd(9, 3);
        let (_, vecs) = sym_eigh(g.view()).unwrap();
        let gram = vecs.t().dot(&vecs);
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let g = random_spd(15, 11);
        let f = CholFactor::new(&g).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let b = Array1::from_shape_fn(15, |i| (i as f64).sin());
        let x = f.solve_vec(&b).unwrap();
        let r = &g.dot(&x) - &b;
        let err = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9, "residual {err}");
    }

    #[test]
    fn cholesky_matrix_rhs_matches_vector_solves() {
        let g = random_spd(10, 5);
        let f = CholFactor::new(&g).unwrap();
        let b = Array2::from_shape_fn((10, 4), |(i, j)| ((i * 7 + j * 3) as f64).cos());
        let x = f.solve_mat(b.view()).unwrap();
        for j in 0..4 {
            let xj = f.solve_vec(&b.column(j).to_owned()).unwrap();
            for i in 0..10 {
                assert!((x[[i, j]] - xj[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn cholesky_jitter_rescues_singular_matrix() {
        // Rank-1 matrix; plain factorization must fail, jitter must rescue.
        let ones = Array2::from_elem((4, 4), 1.0);
        assert!(CholFactor::new_strict(&ones).is_err());
        let f = CholFactor::new(&ones).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn triangular_solvers_agree_with_factor() {
        let u = array![[2.0, 1.0, 0.5], [0.0, 3.0, -1.0], [0.0, 0.0, 1.5]];
        let b = array![1.0, 2.0, 3.0];
        let x = solve_upper(&u, &b).unwrap();
        let r = &u.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let y = solve_upper_transposed(&u, &b).unwrap();
        let r2 = &u.t().dot(&y) - &b;
        assert!(r2.iter().all(|v| v.abs() < 1e-12));
    }
}
