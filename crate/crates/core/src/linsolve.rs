//! Sparse direct solvers behind a small interface. Factorizations come from
//! `faer` (supernodal Cholesky with fill-reducing ordering, sparse LU for the
//! complex shifted systems).

use faer::c64;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Symmetric matrices handled here are stored as CSR; for a symmetric pattern
/// the CSR arrays are also a valid CSC description of the same matrix.
#[derive(Debug, Clone)]
struct Pattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl Pattern {
    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

fn square_symmetric(a: &CsrMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid(format!("{what} must be square")));
    }
    let scale = a.triplets().map(|t| t.2.abs()).fold(0.0, f64::max);
    if a.asymmetry() > 1e-12 * scale.max(1e-300) {
        return Err(Error::invalid(format!("{what} must be symmetric")));
    }
    Ok(())
}

/// Cholesky factorization of a sparse symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        square_symmetric(a, "matrix")?;
        let (pattern, values) = split(a);
        let symbolic = SymbolicLlt::try_new(pattern.symbolic(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let llt = Llt::try_new_with_symbolic(
            symbolic,
            SparseColMatRef::new(pattern.symbolic(), &values),
            Side::Lower,
        )
        .map_err(|e| Error::Factorization(format!("matrix is not positive definite ({e:?})")))?;
        Ok(Self { n: pattern.n, llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, 1));
    }

    /// Solve for several right-hand sides stored column-major in `x`.
    pub fn solve_columns_in_place(&self, x: &mut [f64], ncols: usize) {
        assert_eq!(x.len(), self.n * ncols);
        self.llt.solve_in_place(MatMut::from_column_major_slice_mut(x, self.n, ncols));
    }
}

fn split(a: &CsrMatrix) -> (Pattern, Vec<f64>) {
    let n = a.nrows();
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::with_capacity(a.nnz());
    let mut values = Vec::with_capacity(a.nnz());
    col_ptr.push(0);
    for i in 0..n {
        for (j, v) in a.row(i) {
            row_idx.push(j);
            values.push(v);
        }
        col_ptr.push(row_idx.len());
    }
    (Pattern { n, col_ptr, row_idx }, values)
}

/// The family `a·M + b·K` of a symmetric pencil, sharing one symbolic
/// analysis across all shifts.
#[derive(Debug)]
pub struct ShiftedPencil {
    pattern: Pattern,
    k_values: Vec<f64>,
    m_values: Vec<f64>,
    symbolic_llt: SymbolicLlt<usize>,
    symbolic_lu: std::sync::OnceLock<std::result::Result<SymbolicLu<usize>, String>>,
}

impl ShiftedPencil {
    pub fn new(k: &CsrMatrix, m: &CsrMatrix) -> Result<Self> {
        square_symmetric(k, "stiffness matrix")?;
        square_symmetric(m, "mass matrix")?;
        if k.nrows() != m.nrows() {
            return Err(Error::invalid("stiffness and mass sizes differ"));
        }
        // union pattern; explicit zeros keep both value arrays aligned
        let (pattern, _) = split(&k.linear_combination(1.0, m, 1.0));
        let mut k_values = Vec::with_capacity(pattern.row_idx.len());
        let mut m_values = Vec::with_capacity(pattern.row_idx.len());
        for i in 0..pattern.n {
            for &j in &pattern.row_idx[pattern.col_ptr[i]..pattern.col_ptr[i + 1]] {
                k_values.push(k.get(i, j));
                m_values.push(m.get(i, j));
            }
        }
        let symbolic_llt = SymbolicLlt::try_new(pattern.symbolic(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self {
            pattern,
            k_values,
            m_values,
            symbolic_llt,
            symbolic_lu: std::sync::OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    /// Cholesky factor of `mass_coef·M + stiff_coef·K`.
    pub fn factor_real(&self, mass_coef: f64, stiff_coef: f64) -> Result<SparseCholesky> {
        let values: Vec<f64> = self
            .m_values
            .iter()
            .zip(&self.k_values)
            .map(|(m, k)| mass_coef * m + stiff_coef * k)
            .collect();
        let llt = Llt::try_new_with_symbolic(
            self.symbolic_llt.clone(),
            SparseColMatRef::new(self.pattern.symbolic(), &values),
            Side::Lower,
        )
        .map_err(|e| {
            Error::Solver(format!(
                "shifted matrix {mass_coef:e}·M + {stiff_coef:e}·K is not positive definite ({e:?})"
            ))
        })?;
        Ok(SparseCholesky {
            n: self.pattern.n,
            llt,
        })
    }

    /// Solve `(mass_coef·M + stiff_coef·K) x = rhs` in complex arithmetic.
    pub fn solve_complex(&self, mass_coef: c64, stiff_coef: c64, rhs: &[c64]) -> Result<Vec<c64>> {
        let symbolic = self
            .symbolic_lu
            .get_or_init(|| {
                SymbolicLu::try_new(self.pattern.symbolic()).map_err(|e| format!("{e:?}"))
            })
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))?;
        let values: Vec<c64> = self
            .m_values
            .iter()
            .zip(&self.k_values)
            .map(|(&m, &k)| mass_coef * m + stiff_coef * k)
            .collect();
        let lu = Lu::try_new_with_symbolic(
            symbolic.clone(),
            SparseColMatRef::new(self.pattern.symbolic(), &values),
        )
        .map_err(|e| Error::Solver(format!("singular shifted system ({e:?})")))?;
        let mut x = rhs.to_vec();
        let n = self.pattern.n;
        lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Solver("singular shifted system".into()));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    fn laplacian(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
                b.push(i + 1, i, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let a = laplacian(6);
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x);
        let y = SparseCholesky::factor(&a).unwrap().solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = laplacian(4).linear_combination(1.0, &CsrMatrix::from_diagonal(&[5.0; 4]), -1.0);
        assert!(matches!(SparseCholesky::factor(&a), Err(Error::Factorization(_))));
    }

    #[test]
    fn shifted_real_and_complex_agree() {
        let k = laplacian(5);
        let m = CsrMatrix::from_diagonal(&[0.5, 1.0, 1.5, 1.0, 0.5]);
        let pencil = ShiftedPencil::new(&k, &m).unwrap();
        let rhs: Vec<f64> = (0..5).map(|i| 1.0 + i as f64).collect();
        let real = pencil.factor_real(2.0, 3.0).unwrap().solve(&rhs);
        let zr: Vec<c64> = rhs.iter().map(|&r| c64::new(r, 0.0)).collect();
        let cplx = pencil.solve_complex(c64::new(2.0, 0.0), c64::new(3.0, 0.0), &zr).unwrap();
        for (a, b) in real.iter().zip(&cplx) {
            assert!((a - b.re).abs() < 1e-13 && b.im.abs() < 1e-13);
        }
        let check = k.linear_combination(3.0, &m, 2.0).matvec(&real);
        for (a, b) in check.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
