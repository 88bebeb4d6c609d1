//! Fractional inverse powers of `L_h = M⁻¹K`, the FEM and box fractional
//! solution maps, and the intrinsic box characterization.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use faer::c64;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use rayon::prelude::*;

use crate::assembly::{BilinearFormKind, InnerProductKind, OperatorBundle};
use crate::error::{Error, Result};
use crate::linsolve::{ShiftedPencil, SparseCholesky};
use crate::quadrature::gauss_legendre_on;
use crate::sparse::{dot, CsrMatrix};

/// Default size limit for dense eigendecompositions.
pub const DENSE_LIMIT: usize = 20_000;

/// Eigenpairs of `K v = λ M v`, ascending, with `VᵀMV = I`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat<f64>,
}

impl SpectralDecomposition {
    /// `V diag(g(λ)) Vᵀ M b`.
    pub fn apply_fn(&self, m: &CsrMatrix, b: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let mb = m.matvec(b);
        let v = &self.eigenvectors;
        let n = self.eigenvalues.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut c = 0.0;
            for i in 0..n {
                c += v[(i, j)] * mb[i];
            }
            c *= g(self.eigenvalues[j]);
            for i in 0..n {
                out[i] += v[(i, j)] * c;
            }
        }
        out
    }
}

/// Symmetric eigendecomposition of a dense matrix, ascending.
pub fn symmetric_eig(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("dense eigensolver failed ({e:?})")))?;
    let s = e.S().column_vector();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values = order.iter().map(|&i| s[i]).collect();
    let u = e.U();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok((values, vectors))
}

/// Solve `K v = λ M v` through `M = LLᵀ` and `C = L⁻¹ K L⁻ᵀ`.
pub fn generalized_eig(k: &CsrMatrix, m: &CsrMatrix, limit: usize) -> Result<SpectralDecomposition> {
    let n = k.nrows();
    if m.nrows() != n || k.ncols() != n || m.ncols() != n {
        return Err(Error::invalid("stiffness and mass sizes differ"));
    }
    if n > limit {
        return Err(Error::SizeLimit(format!("dense eigendecomposition of size {n} exceeds the limit {limit}")));
    }
    let llt = m
        .to_dense()
        .llt(Side::Lower)
        .map_err(|e| Error::Factorization(format!("mass matrix is not positive definite ({e:?})")))?;
    let l = llt.L();
    let mut x = k.to_dense();
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let (eigenvalues, mut w) = symmetric_eig(&c)?;
    solve_upper_triangular_in_place(l.transpose(), w.as_mut(), Par::Seq);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors: w,
    })
}

/// Strategy for applying `(M⁻¹K)^{-β}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FracMethod {
    /// Dense generalized eigendecomposition.
    EigOracle,
    /// Keyhole contour with a log-substituted line term and two circles.
    /// Without an explicit `bracket`, `(r, R) = (λ_1/2, 2λ_n)` from
    /// extremal eigenvalue estimates.
    Contour {
        n_line: usize,
        n_circle: usize,
        bracket: Option<(f64, f64)>,
    },
    /// Sinc quadrature with step `step`; the node counts on either side
    /// balance truncation against discretization error.
    Sinc { step: f64 },
}

impl fmt::Display for FracMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EigOracle => f.write_str("eig"),
            Self::Contour { n_line, n_circle, bracket: None } => write!(f, "contour:{n_line}:{n_circle}"),
            Self::Contour { n_line, n_circle, bracket: Some((r, big_r)) } => {
                write!(f, "contour:{n_line}:{n_circle}:{r}:{big_r}")
            }
            Self::Sinc { step } => write!(f, "sinc:{step}"),
        }
    }
}

impl FromStr for FracMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::invalid(format!("cannot parse fractional method `{s}`"));
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let method = match parts.as_slice() {
            ["eig"] => Self::EigOracle,
            ["sinc", k] => Self::Sinc { step: num(k)? },
            ["contour", a, b] => Self::Contour { n_line: int(a)?, n_circle: int(b)?, bracket: None },
            ["contour", a, b, r, big_r] => Self::Contour {
                n_line: int(a)?,
                n_circle: int(b)?,
                bracket: Some((num(r)?, num(big_r)?)),
            },
            _ => return Err(bad()),
        };
        method.validate()?;
        Ok(method)
    }
}

impl FracMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::EigOracle => Ok(()),
            Self::Sinc { step } if step > 0.0 && step.is_finite() => Ok(()),
            Self::Sinc { step } => Err(Error::invalid(format!("sinc step {step} must be positive"))),
            Self::Contour { n_line, n_circle, bracket } => {
                if n_line == 0 || n_circle == 0 {
                    return Err(Error::invalid("contour node counts must be positive"));
                }
                if let Some((r, big_r)) = bracket {
                    if !(r > 0.0 && big_r > r && big_r.is_finite()) {
                        return Err(Error::invalid(format!("contour radii ({r}, {big_r}) must satisfy 0 < r < R")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Sinc node range `(N_-, N_+)` for fractional part `s` and step `k`.
pub fn sinc_node_counts(s: f64, step: f64) -> (usize, usize) {
    let c = PI * PI / (4.0 * step * step);
    ((c / s).ceil() as usize, (c / (1.0 - s)).ceil() as usize)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FracDiagnostics {
    pub method: String,
    /// Shifted or direct sparse solves performed.
    pub solves: usize,
    pub bracket: Option<(f64, f64)>,
}

/// `L_h = M⁻¹K` for a symmetric pencil, with cached factorizations.
#[derive(Debug)]
pub struct FracOperator {
    k: CsrMatrix,
    m: CsrMatrix,
    k_chol: SparseCholesky,
    m_chol: SparseCholesky,
    pencil: ShiftedPencil,
    eig: OnceLock<SpectralDecomposition>,
    extremes: OnceLock<(f64, f64)>,
    dense_limit: usize,
}

impl FracOperator {
    pub fn new(k: &CsrMatrix, m: &CsrMatrix) -> Result<Self> {
        let k_chol = SparseCholesky::factor(k)
            .map_err(|e| Error::Factorization(format!("stiffness matrix: {e}")))?;
        let m_chol = SparseCholesky::factor(m).map_err(|e| Error::Factorization(format!("mass matrix: {e}")))?;
        Ok(Self {
            k: k.clone(),
            m: m.clone(),
            k_chol,
            m_chol,
            pencil: ShiftedPencil::new(k, m)?,
            eig: OnceLock::new(),
            extremes: OnceLock::new(),
            dense_limit: DENSE_LIMIT,
        })
    }

    pub fn with_dense_limit(mut self, limit: usize) -> Self {
        self.dense_limit = limit;
        self
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.k
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.m
    }

    pub fn solve_mass(&self, f: &[f64]) -> Vec<f64> {
        self.m_chol.solve(f)
    }

    pub fn solve_stiffness(&self, f: &[f64]) -> Vec<f64> {
        self.k_chol.solve(f)
    }

    pub fn spectrum(&self) -> Result<&SpectralDecomposition> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = generalized_eig(&self.k, &self.m, self.dense_limit)?;
        Ok(self.eig.get_or_init(|| e))
    }

    /// Estimates of `(λ_1, λ_n)` by inverse and power iteration on the
    /// pencil, from Rayleigh quotients.
    pub fn extreme_eigenvalues(&self) -> (f64, f64) {
        *self.extremes.get_or_init(|| {
            let n = self.dim();
            let start: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
            let rayleigh = |x: &[f64]| dot(x, &self.k.matvec(x)) / dot(x, &self.m.matvec(x));
            let normalize = |x: &mut Vec<f64>| {
                let s = dot(x, &self.m.matvec(x)).sqrt();
                x.iter_mut().for_each(|v| *v /= s);
            };
            let mut x = start.clone();
            normalize(&mut x);
            for _ in 0..40 {
                x = self.k_chol.solve(&self.m.matvec(&x));
                normalize(&mut x);
            }
            let lo = rayleigh(&x);
            let mut y: Vec<f64> = start.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).collect();
            normalize(&mut y);
            let mut hi: f64 = 0.0;
            for _ in 0..300 {
                y = self.m_chol.solve(&self.k.matvec(&y));
                normalize(&mut y);
                hi = hi.max(rayleigh(&y));
            }
            (lo, hi)
        })
    }

    /// `(M⁻¹K)^{-β} b`.
    pub fn apply(&self, beta: f64, b: &[f64], method: FracMethod) -> Result<(Vec<f64>, FracDiagnostics)> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta = {beta} must be positive")));
        }
        if b.len() != self.dim() {
            return Err(Error::invalid(format!("right-hand side has length {}, expected {}", b.len(), self.dim())));
        }
        method.validate()?;
        let mut diag = FracDiagnostics {
            method: method.to_string(),
            ..Default::default()
        };
        if method == FracMethod::EigOracle {
            let out = self.spectrum()?.apply_fn(&self.m, b, |l| l.powf(-beta));
            return Ok((out, diag));
        }
        let mut whole = beta.floor();
        let mut s = beta - whole;
        if s > 1.0 - 1e-14 {
            whole += 1.0;
            s = 0.0;
        } else if s < 1e-14 {
            s = 0.0;
        }
        let mut x = b.to_vec();
        for _ in 0..whole as usize {
            x = self.k_chol.solve(&self.m.matvec(&x));
            diag.solves += 1;
        }
        if s == 0.0 {
            return Ok((x, diag));
        }
        let mx = self.m.matvec(&x);
        let out = match method {
            FracMethod::Sinc { step } => self.sinc(s, step, &mx, &mut diag)?,
            FracMethod::Contour { n_line, n_circle, bracket } => {
                self.contour(s, n_line, n_circle, bracket, &mx, &mut diag)?
            }
            FracMethod::EigOracle => unreachable!(),
        };
        Ok((out, diag))
    }

    /// `λ^{-s} = (2k sin πs / π) Σ_j e^{2s y_j} (1 + e^{2y_j} λ)^{-1}`.
    fn sinc(&self, s: f64, step: f64, mx: &[f64], diag: &mut FracDiagnostics) -> Result<Vec<f64>> {
        let (n_minus, n_plus) = sinc_node_counts(s, step);
        let nodes: Vec<i64> = (-(n_minus as i64)..=n_plus as i64).collect();
        let terms: Vec<Result<Vec<f64>>> = nodes
            .par_iter()
            .map(|&j| {
                let y = j as f64 * step;
                let mut v = if y <= 0.0 {
                    // e^{2sy} (M + e^{2y} K)^{-1} M x
                    let mut v = self.pencil.factor_real(1.0, (2.0 * y).exp())?.solve(mx);
                    let w = (2.0 * s * y).exp();
                    v.iter_mut().for_each(|t| *t *= w);
                    v
                } else {
                    // e^{2(s-1)y} (e^{-2y} M + K)^{-1} M x
                    let mut v = self.pencil.factor_real((-2.0 * y).exp(), 1.0)?.solve(mx);
                    let w = (2.0 * (s - 1.0) * y).exp();
                    v.iter_mut().for_each(|t| *t *= w);
                    v
                };
                v.shrink_to_fit();
                Ok(v)
            })
            .collect();
        let mut out = vec![0.0; mx.len()];
        for t in terms {
            for (o, v) in out.iter_mut().zip(t?) {
                *o += v;
            }
        }
        let c = 2.0 * step * (PI * s).sin() / PI;
        out.iter_mut().for_each(|v| *v *= c);
        diag.solves += nodes.len();
        Ok(out)
    }

    fn contour(
        &self,
        s: f64,
        n_line: usize,
        n_circle: usize,
        bracket: Option<(f64, f64)>,
        mx: &[f64],
        diag: &mut FracDiagnostics,
    ) -> Result<Vec<f64>> {
        let (lo, hi) = self.extreme_eigenvalues();
        let (r, big_r) = match bracket {
            Some((r, big_r)) => {
                if r >= lo || big_r <= hi {
                    return Err(Error::SpectralBracket(format!(
                        "radii ({r:e}, {big_r:e}) do not enclose the estimated spectrum [{lo:e}, {hi:e}]"
                    )));
                }
                (r, big_r)
            }
            None => (0.5 * lo, 2.0 * hi),
        };
        diag.bracket = Some((r, big_r));
        let n = mx.len();

        // (sin πs/π) ∫_{log r}^{log R} e^{(1-s)u} (e^u M + K)^{-1} M x du
        let (us, ws) = gauss_legendre_on(n_line, r.ln(), big_r.ln());
        let line: Vec<Result<Vec<f64>>> = us
            .par_iter()
            .zip(&ws)
            .map(|(&u, &w)| {
                let t = u.exp();
                let mut v = self.pencil.factor_real(t, 1.0)?.solve(mx);
                let c = w * ((1.0 - s) * u).exp();
                v.iter_mut().for_each(|x| *x *= c);
                Ok(v)
            })
            .collect();
        let mut out = vec![0.0; n];
        for v in line {
            for (o, x) in out.iter_mut().zip(v?) {
                *o += x;
            }
        }
        let c_line = (PI * s).sin() / PI;
        out.iter_mut().for_each(|v| *v *= c_line);

        // ±(ρ^{1-s}/2π) ∫_{-π}^{π} e^{i(1-s)θ} (ρe^{iθ}M − K)^{-1} M x dθ,
        // folded onto [0, π] by conjugate symmetry
        let (ts, tw) = gauss_legendre_on(n_circle, 0.0, PI);
        let rhs: Vec<c64> = mx.iter().map(|&v| c64::new(v, 0.0)).collect();
        for (rho, sign) in [(big_r, 1.0), (r, -1.0)] {
            let terms: Vec<Result<Vec<f64>>> = ts
                .par_iter()
                .zip(&tw)
                .map(|(&theta, &w)| {
                    let z = c64::new(rho * theta.cos(), rho * theta.sin());
                    let v = self.pencil.solve_complex(z, c64::new(-1.0, 0.0), &rhs)?;
                    let phase = c64::new(((1.0 - s) * theta).cos(), ((1.0 - s) * theta).sin());
                    Ok(v.iter().map(|x| 2.0 * w * (phase * x).re).collect())
                })
                .collect();
            let c = sign * rho.powf(1.0 - s) / (2.0 * PI);
            for v in terms {
                for (o, x) in out.iter_mut().zip(v?) {
                    *o += c * x;
                }
            }
        }
        diag.solves += n_line + 2 * n_circle;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadKind {
    /// `(f, φ_i)`.
    Fem,
    /// `(f, Qφ_i)`.
    Box,
}

impl fmt::Display for LoadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fem => "fem",
            Self::Box => "box",
        })
    }
}

impl FromStr for LoadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fem" => Ok(Self::Fem),
            "box" => Ok(Self::Box),
            other => Err(Error::invalid(format!("unknown load `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracSolveSpec {
    pub beta: f64,
    pub method: FracMethod,
    pub inner_product: InnerProductKind,
    pub bilinear_form: BilinearFormKind,
    pub load: LoadKind,
}

impl FracSolveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta = {} must be positive", self.beta)));
        }
        if !self.inner_product.is_selfadjoint() {
            return Err(Error::invalid(
                "the mixed inner product does not give a selfadjoint realization of L_h; \
                 fractional powers need one of exact-l2, lumped or banded:i",
            ));
        }
        self.method.validate()
    }
}

/// `(M⁻¹K)^{-β} M⁻¹F` for a prepared operator.
pub fn frac_solve_with(op: &FracOperator, bundle: &OperatorBundle, spec: &FracSolveSpec) -> Result<(Vec<f64>, FracDiagnostics)> {
    spec.validate()?;
    if spec.inner_product != bundle.inner_product || spec.bilinear_form != bundle.bilinear_form {
        return Err(Error::invalid(format!(
            "bundle was assembled with ({}, {}) but the solve asks for ({}, {})",
            bundle.inner_product, bundle.bilinear_form, spec.inner_product, spec.bilinear_form
        )));
    }
    let f = match spec.load {
        LoadKind::Fem => &bundle.f,
        LoadKind::Box => &bundle.fq,
    };
    if f.iter().all(|v| *v == 0.0) {
        return Ok((vec![0.0; f.len()], FracDiagnostics { method: spec.method.to_string(), ..Default::default() }));
    }
    let rhs = op.solve_mass(f);
    op.apply(spec.beta, &rhs, spec.method)
}

/// `(M⁻¹K)^{-β} M⁻¹F` with `F` the FEM or box load of the bundle.
pub fn frac_solve(bundle: &OperatorBundle, spec: &FracSolveSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let op = FracOperator::new(&bundle.k, &bundle.m)?;
    Ok(frac_solve_with(&op, bundle, spec)?.0)
}

#[derive(Debug, Clone)]
pub struct IntrinsicSolution {
    pub u: Vec<f64>,
    /// Relative asymmetry of `D K⁻¹ D`, the matrix of `QT_h` in the
    /// volume-weighted dual inner product.
    pub symmetry_defect: f64,
}

/// `Q⁻¹(QT_h)^β` applied to the box load: with `D = diag|b_z|`,
/// `u = D^{-1/2} (D^{1/2} K⁻¹ D^{1/2})^β D^{-1/2} F_Q`.
pub fn intrinsic_box_solve(bundle: &OperatorBundle, beta: f64) -> Result<IntrinsicSolution> {
    if bundle.inner_product != InnerProductKind::Lumped {
        return Err(Error::invalid("the intrinsic box solve needs the lumped inner product"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta = {beta} must be positive")));
    }
    let d = bundle
        .m
        .as_diagonal()
        .ok_or_else(|| Error::invalid("lumped mass matrix is not diagonal"))?;
    let n = d.len();
    if n > DENSE_LIMIT {
        return Err(Error::SizeLimit(format!("intrinsic solve of size {n} exceeds {DENSE_LIMIT}")));
    }
    let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    // columns T_h applied to the dual-cell indicators, scaled
    let k = SparseCholesky::factor(&bundle.k)?;
    let mut cols = vec![0.0; n * n];
    for j in 0..n {
        cols[j * n + j] = sqrt_d[j];
    }
    k.solve_columns_in_place(&mut cols, n);
    let s = Mat::from_fn(n, n, |i, j| sqrt_d[i] * cols[j * n + i]);
    let mut asym: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
            scale = scale.max(s[(i, j)].abs());
        }
    }
    let s = Mat::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let (vals, vecs) = symmetric_eig(&s)?;
    if vals[0] <= 0.0 {
        return Err(Error::Solver("box solution operator is not positive".into()));
    }
    let g: Vec<f64> = (0..n).map(|i| bundle.fq[i] / sqrt_d[i]).collect();
    let mut y = vec![0.0; n];
    for j in 0..n {
        let mut c = 0.0;
        for i in 0..n {
            c += vecs[(i, j)] * g[i];
        }
        c *= vals[j].powf(beta);
        for i in 0..n {
            y[i] += vecs[(i, j)] * c;
        }
    }
    let u = y.iter().zip(&sqrt_d).map(|(v, s)| v / s).collect();
    Ok(IntrinsicSolution {
        u,
        symmetry_defect: asym / scale.max(f64::MIN_POSITIVE),
    })
}
