//! Stiffness matrices, mass-matrix variants and load vectors on the active
//! vertices of a mesh.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dual::{DualCells, Subregion};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::{self, gauss_legendre_on, triangle_rule_deg5, Point2, Tolerance};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Scalar function of a point given as a `dim`-slice.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Symmetric 2×2 tensor field; in 1D only the `[0][0]` entry is used.
pub type TensorFn = Arc<dyn Fn(&[f64]) -> [[f64; 2]; 2] + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    Constant([[f64; 2]; 2]),
    Variable(TensorFn),
}

#[derive(Clone)]
pub enum Reaction {
    Constant(f64),
    Variable(ScalarFn),
}

/// Coefficients `A` and `κ` of `L = −div(A∇) + κ²`. A vanishing `κ` is
/// accepted so that pure diffusion operators can be assembled.
#[derive(Clone)]
pub struct CoefficientField {
    pub diffusion: Diffusion,
    pub kappa: Reaction,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match &self.diffusion {
            Diffusion::Constant(a) => format!("{a:?}"),
            Diffusion::Variable(_) => "variable".into(),
        };
        let k = match &self.kappa {
            Reaction::Constant(k) => format!("{k}"),
            Reaction::Variable(_) => "variable".into(),
        };
        write!(f, "CoefficientField {{ A: {a}, kappa: {k} }}")
    }
}

const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

impl CoefficientField {
    /// `A = I` with constant `κ`.
    pub fn laplacian(kappa: f64) -> Self {
        Self {
            diffusion: Diffusion::Constant(IDENTITY),
            kappa: Reaction::Constant(kappa),
        }
    }

    pub fn a_at(&self, p: &[f64]) -> [[f64; 2]; 2] {
        match &self.diffusion {
            Diffusion::Constant(a) => *a,
            Diffusion::Variable(f) => f(p),
        }
    }

    pub fn kappa_at(&self, p: &[f64]) -> f64 {
        match &self.kappa {
            Reaction::Constant(k) => *k,
            Reaction::Variable(f) => f(p),
        }
    }

    /// Sample `A` and `κ` at vertices and element barycenters.
    fn validate(&self, mesh: &Mesh) -> Result<()> {
        let mut points: Vec<Vec<f64>> = (0..mesh.n_vertices()).map(|v| mesh.vertex(v).to_vec()).collect();
        points.extend((0..mesh.n_elements()).map(|k| barycenter(mesh, k)));
        for p in &points {
            let a = self.a_at(p);
            let ok = if mesh.dim() == 1 {
                a[0][0] > 0.0 && a[0][0].is_finite()
            } else {
                let scale = a[0][0].abs().max(a[1][1].abs()).max(1e-300);
                (a[0][1] - a[1][0]).abs() <= 1e-12 * scale
                    && a[0][0] > 0.0
                    && a[0][0] * a[1][1] - a[0][1] * a[1][0] > 0.0
                    && a.iter().flatten().all(|x| x.is_finite())
            };
            if !ok {
                return Err(Error::Assembly(format!("diffusion tensor {a:?} at {p:?} is not symmetric positive definite")));
            }
            let k = self.kappa_at(p);
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::Assembly(format!("reaction coefficient {k} at {p:?} is negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BilinearFormKind {
    /// `∫ A∇χ·∇ψ + ∫ κ² χ ψ`.
    ExactGalerkin,
    /// `∫ A_h∇χ·∇ψ + ∫ κ² Qχ Qψ` with elementwise averaged `A_h`.
    BoxAveraged,
    /// `∫ Q(A∇χ·∇ψ) + ∫ Q(κ² χ ψ)`.
    QQuadrature,
}

impl fmt::Display for BilinearFormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExactGalerkin => "exact-galerkin",
            Self::BoxAveraged => "box-averaged",
            Self::QQuadrature => "q-quadrature",
        })
    }
}

impl FromStr for BilinearFormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact-galerkin" | "galerkin" => Ok(Self::ExactGalerkin),
            "box-averaged" | "box" => Ok(Self::BoxAveraged),
            "q-quadrature" | "quadrature" => Ok(Self::QQuadrature),
            other => Err(Error::invalid(format!("unknown bilinear form `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerProductKind {
    /// Consistent mass `(χ, ψ)`.
    ExactL2,
    /// `(χ, Qψ)`, entry `(i, j) = ∫_{b_i} φ_j`.
    Mixed,
    /// `(Qχ, Qψ) = Σ χ(z)ψ(z)|b_z|`.
    Lumped,
    /// `D_i + ℒ(R_i)`: the consistent mass within bandwidth `i`, the rest
    /// lumped onto the diagonal.
    Banded(usize),
}

impl InnerProductKind {
    pub fn is_selfadjoint(&self) -> bool {
        !matches!(self, Self::Mixed)
    }
}

impl fmt::Display for InnerProductKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExactL2 => f.write_str("exact-l2"),
            Self::Mixed => f.write_str("mixed"),
            Self::Lumped => f.write_str("lumped"),
            Self::Banded(i) => write!(f, "banded:{i}"),
        }
    }
}

impl FromStr for InnerProductKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(i) = s.strip_prefix("banded:") {
            let i = i
                .parse()
                .map_err(|_| Error::invalid(format!("bad bandwidth in `{s}`")))?;
            return Ok(Self::Banded(i));
        }
        match s.as_str() {
            "exact-l2" | "exact" | "l2" => Ok(Self::ExactL2),
            "mixed" => Ok(Self::Mixed),
            "lumped" => Ok(Self::Lumped),
            other => Err(Error::invalid(format!("unknown inner product `{other}`"))),
        }
    }
}

fn barycenter(mesh: &Mesh, k: usize) -> Vec<f64> {
    let el = mesh.element(k);
    let mut c = vec![0.0; mesh.dim()];
    for &v in el {
        for (ci, x) in c.iter_mut().zip(mesh.vertex(v)) {
            *ci += x / el.len() as f64;
        }
    }
    c
}

/// Barycentric coordinates of point `p` in element `k`.
fn barycentric(mesh: &Mesh, k: usize, grads: &[[f64; 2]], p: &[f64]) -> Vec<f64> {
    let g = barycenter(mesh, k);
    let nl = mesh.dim() + 1;
    (0..nl)
        .map(|a| {
            let mut l = 1.0 / nl as f64;
            for c in 0..mesh.dim() {
                l += grads[a][c] * (p[c] - g[c]);
            }
            l
        })
        .collect()
}

/// Scatter per-element local matrices into a vertex-indexed matrix, then
/// keep the active rows and columns.
fn scatter(mesh: &Mesh, local: impl Fn(usize) -> Result<Vec<f64>>) -> Result<CsrMatrix> {
    let nv = mesh.n_vertices();
    let nl = mesh.dim() + 1;
    let mut b = TripletBuilder::new(nv, nv);
    for k in 0..mesh.n_elements() {
        let el = mesh.element(k);
        let m = local(k)?;
        for a in 0..nl {
            for c in 0..nl {
                b.push(el[a], el[c], m[a * nl + c]);
            }
        }
    }
    Ok(b.build().submatrix(mesh.active()))
}

fn average_tensor(mesh: &Mesh, k: usize, coeff: &CoefficientField) -> Result<[[f64; 2]; 2]> {
    let Diffusion::Variable(a) = &coeff.diffusion else {
        return Ok(coeff.a_at(&[]));
    };
    let vol = mesh.measure(k);
    let tol = Tolerance::new(1e-12, 1e-15);
    let mut out = [[0.0; 2]; 2];
    let comps: &[(usize, usize)] = if mesh.dim() == 1 { &[(0, 0)] } else { &[(0, 0), (0, 1), (1, 1)] };
    for &(r, c) in comps {
        let v = match mesh.dim() {
            1 => {
                let el = mesh.element(k);
                quadrature::integrate(|x| a(&[x])[r][c], mesh.vertex(el[0])[0], mesh.vertex(el[1])[0], tol)
            }
            _ => quadrature::integrate_triangle(|p| a(&p)[r][c], element_triangle(mesh, k), tol),
        }
        .map_err(|e| e.on_element(k))?
        .value;
        out[r][c] = v / vol;
        out[c][r] = v / vol;
    }
    Ok(out)
}

fn element_triangle(mesh: &Mesh, k: usize) -> [Point2; 3] {
    let el = mesh.element(k);
    std::array::from_fn(|a| {
        let v = mesh.vertex(el[a]);
        [v[0], v[1]]
    })
}

fn vertex_average_tensor(mesh: &Mesh, k: usize, coeff: &CoefficientField) -> [[f64; 2]; 2] {
    let el = mesh.element(k);
    let mut out = [[0.0; 2]; 2];
    for &v in el {
        let a = coeff.a_at(mesh.vertex(v));
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] += a[r][c] / el.len() as f64;
            }
        }
    }
    out
}

fn diffusion_local(grads: &[[f64; 2]], a: &[[f64; 2]; 2], vol: f64) -> Vec<f64> {
    let nl = grads.len();
    let mut m = vec![0.0; nl * nl];
    for i in 0..nl {
        let ag = [
            a[0][0] * grads[i][0] + a[0][1] * grads[i][1],
            a[1][0] * grads[i][0] + a[1][1] * grads[i][1],
        ];
        for j in 0..nl {
            m[i * nl + j] = vol * (ag[0] * grads[j][0] + ag[1] * grads[j][1]);
        }
    }
    m
}

fn exact_mass_local(nl: usize, vol: f64) -> Vec<f64> {
    let base = vol / (nl * (nl + 1)) as f64;
    (0..nl * nl)
        .map(|e| if e / nl == e % nl { 2.0 * base } else { base })
        .collect()
}

/// `∫_K w φ_i φ_j` by a fixed rule exact for polynomial `w` of degree one
/// (1D: 3-point Gauss, degree 5; 2D: 7-point rule, degree 5).
fn weighted_mass_local(mesh: &Mesh, k: usize, w: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let nl = mesh.dim() + 1;
    let grads = mesh.gradients(k);
    let mut m = vec![0.0; nl * nl];
    let mut add = |p: &[f64], weight: f64| {
        let l = barycentric(mesh, k, &grads, p);
        let wp = w(p) * weight;
        for i in 0..nl {
            for j in 0..nl {
                m[i * nl + j] += wp * l[i] * l[j];
            }
        }
    };
    match mesh.dim() {
        1 => {
            let el = mesh.element(k);
            let (xs, ws) = gauss_legendre_on(3, mesh.vertex(el[0])[0], mesh.vertex(el[1])[0]);
            for (x, wt) in xs.iter().zip(&ws) {
                add(&[*x], *wt);
            }
        }
        _ => {
            let t = element_triangle(mesh, k);
            let vol = mesh.measure(k);
            for (l, wt) in triangle_rule_deg5() {
                let p = [
                    l[0] * t[0][0] + l[1] * t[1][0] + l[2] * t[2][0],
                    l[0] * t[0][1] + l[1] * t[1][1] + l[2] * t[2][1],
                ];
                add(&p, wt * vol);
            }
        }
    }
    m
}

/// Integrate `f` over a subregion `A_z(K)` by adaptive quadrature.
pub fn integrate_subregion(f: &(dyn Fn(&[f64]) -> f64 + Sync), sub: Subregion, tol: Tolerance) -> Result<f64> {
    match sub {
        Subregion::Interval(a, b) => Ok(quadrature::integrate(|x| f(&[x]), a, b, tol)?.value),
        Subregion::Quad(tris) => {
            let mut s = 0.0;
            for t in tris {
                s += quadrature::integrate_triangle(|p| f(&p), t, tol)?.value;
            }
            Ok(s)
        }
    }
}

/// Stiffness matrix of the chosen bilinear form on the active vertices.
pub fn assemble_stiffness(
    mesh: &Mesh,
    dual: &DualCells,
    coeff: &CoefficientField,
    kind: BilinearFormKind,
) -> Result<CsrMatrix> {
    coeff.validate(mesh)?;
    let nl = mesh.dim() + 1;
    let kappa_sq = |p: &[f64]| {
        let k = coeff.kappa_at(p);
        k * k
    };
    let reaction_constant = match coeff.kappa {
        Reaction::Constant(k) => Some(k * k),
        Reaction::Variable(_) => None,
    };
    let tol = Tolerance::new(1e-12, 1e-15);
    scatter(mesh, |k| {
        let vol = mesh.measure(k);
        let grads = mesh.gradients(k);
        let a = match kind {
            BilinearFormKind::QQuadrature => vertex_average_tensor(mesh, k, coeff),
            _ => average_tensor(mesh, k, coeff)?,
        };
        let mut local = diffusion_local(&grads, &a, vol);
        match kind {
            BilinearFormKind::ExactGalerkin => {
                let r = match reaction_constant {
                    Some(k2) => exact_mass_local(nl, vol).into_iter().map(|m| k2 * m).collect(),
                    None => weighted_mass_local(mesh, k, &kappa_sq),
                };
                local.iter_mut().zip(r).for_each(|(l, r)| *l += r);
            }
            BilinearFormKind::BoxAveraged => {
                for z in 0..nl {
                    local[z * nl + z] += match reaction_constant {
                        Some(k2) => k2 * dual.subregion_measure(k),
                        None => integrate_subregion(&kappa_sq, dual.subregion(k, z), tol)
                            .map_err(|e| e.on_element(k))?,
                    };
                }
            }
            BilinearFormKind::QQuadrature => {
                let el = mesh.element(k);
                for z in 0..nl {
                    local[z * nl + z] += kappa_sq(mesh.vertex(el[z])) * dual.subregion_measure(k);
                }
            }
        }
        Ok(local)
    })
}

/// Diagonal matrix of row sums.
pub fn lump(a: &CsrMatrix) -> Result<CsrMatrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("lumping needs a square matrix"));
    }
    Ok(CsrMatrix::from_diagonal(&a.row_sums()))
}

/// `D_i + ℒ(R_i)` of a square matrix: entries within bandwidth `i` kept,
/// the remainder lumped onto the diagonal.
pub fn banded(a: &CsrMatrix, bandwidth: usize) -> Result<CsrMatrix> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("banding needs a square matrix"));
    }
    let mut b = TripletBuilder::new(a.nrows(), a.ncols());
    for r in 0..a.nrows() {
        // diagonal and remainder summed in column order, so bandwidth 0
        // reproduces the row sums bit for bit
        let mut diag = 0.0;
        for (c, v) in a.row(r) {
            if c == r || c.abs_diff(r) > bandwidth {
                diag += v;
            } else {
                b.push(r, c, v);
            }
        }
        b.push(r, r, diag);
    }
    Ok(b.build())
}

/// Matrix of the chosen inner product on the active vertices.
pub fn assemble_mass(mesh: &Mesh, dual: &DualCells, kind: InnerProductKind) -> Result<CsrMatrix> {
    let nl = mesh.dim() + 1;
    match kind {
        InnerProductKind::ExactL2 => scatter(mesh, |k| Ok(exact_mass_local(nl, mesh.measure(k)))),
        InnerProductKind::Lumped => Ok(CsrMatrix::from_diagonal(&dual.active_volumes(mesh))),
        InnerProductKind::Mixed => scatter(mesh, |k| {
            let grads = mesh.gradients(k);
            let mut local = vec![0.0; nl * nl];
            for a in 0..nl {
                // φ_b is affine, so each piece integrates exactly at its centroid
                let pieces: Vec<(Vec<f64>, f64)> = match dual.subregion(k, a) {
                    Subregion::Interval(lo, hi) => vec![(vec![0.5 * (lo + hi)], hi - lo)],
                    Subregion::Quad(tris) => tris
                        .iter()
                        .map(|t| {
                            let c = vec![(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
                            (c, quadrature::triangle_area(t).abs())
                        })
                        .collect(),
                };
                for (c, w) in pieces {
                    let l = barycentric(mesh, k, &grads, &c);
                    for b in 0..nl {
                        local[a * nl + b] += w * l[b];
                    }
                }
            }
            Ok(local)
        }),
        InnerProductKind::Banded(i) => {
            let n = mesh.n_active();
            if i >= n {
                return Err(Error::invalid(format!("bandwidth {i} exceeds N - 1 = {}", n - 1)));
            }
            banded(&assemble_mass(mesh, dual, InnerProductKind::ExactL2)?, i)
        }
    }
}

/// `(f, φ_i)` on the active vertices, by adaptive quadrature per element.
pub fn assemble_load_fem(mesh: &Mesh, f: &(dyn Fn(&[f64]) -> f64 + Sync), tol: Tolerance) -> Result<Vec<f64>> {
    let nl = mesh.dim() + 1;
    let locals: Vec<Result<Vec<f64>>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let grads = mesh.gradients(k);
            (0..nl)
                .map(|i| {
                    let est = match mesh.dim() {
                        1 => {
                            let el = mesh.element(k);
                            let (a, b) = (mesh.vertex(el[0])[0], mesh.vertex(el[1])[0]);
                            quadrature::integrate(
                                |x| f(&[x]) * barycentric(mesh, k, &grads, &[x])[i],
                                a,
                                b,
                                tol,
                            )
                        }
                        _ => quadrature::integrate_triangle(
                            |p| f(&p) * barycentric(mesh, k, &grads, &p)[i],
                            element_triangle(mesh, k),
                            tol,
                        ),
                    };
                    est.map(|e| e.value).map_err(|e| e.on_element(k))
                })
                .collect()
        })
        .collect();
    gather(mesh, locals)
}

/// `(f, Qφ_i) = ∫_{b_i} f` on the active vertices.
pub fn assemble_load_box(
    mesh: &Mesh,
    dual: &DualCells,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    tol: Tolerance,
) -> Result<Vec<f64>> {
    let nl = mesh.dim() + 1;
    let locals: Vec<Result<Vec<f64>>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            (0..nl)
                .map(|z| integrate_subregion(f, dual.subregion(k, z), tol).map_err(|e| e.on_element(k)))
                .collect()
        })
        .collect();
    gather(mesh, locals)
}

/// Sum element contributions in element order.
fn gather(mesh: &Mesh, locals: Vec<Result<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; mesh.n_active()];
    for (k, local) in locals.into_iter().enumerate() {
        let local = local?;
        for (a, &v) in mesh.element(k).iter().enumerate() {
            if let Some(i) = mesh.dof(v) {
                out[i] += local[a];
            }
        }
    }
    Ok(out)
}

/// Default tolerance for load vectors.
pub const LOAD_TOLERANCE: Tolerance = Tolerance {
    rel: 1e-10,
    abs: 1e-16,
    max_subdivisions: 4000,
};

/// Everything needed for one discrete problem.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    pub k: CsrMatrix,
    pub m: CsrMatrix,
    pub f: Vec<f64>,
    pub fq: Vec<f64>,
    pub n: usize,
    pub inner_product: InnerProductKind,
    pub bilinear_form: BilinearFormKind,
}

impl OperatorBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        mesh: &Mesh,
        dual: &DualCells,
        coeff: &CoefficientField,
        bilinear_form: BilinearFormKind,
        inner_product: InnerProductKind,
        f: &(dyn Fn(&[f64]) -> f64 + Sync),
        tol: Tolerance,
    ) -> Result<Self> {
        Ok(Self {
            k: assemble_stiffness(mesh, dual, coeff, bilinear_form)?,
            m: assemble_mass(mesh, dual, inner_product)?,
            f: assemble_load_fem(mesh, f, tol)?,
            fq: assemble_load_box(mesh, dual, f, tol)?,
            n: mesh.n_active(),
            inner_product,
            bilinear_form,
        })
    }

    /// Write `K.mtx`, `M.mtx`, `F.txt` and `FQ.txt` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        use std::fs::File;
        use std::io::BufWriter;
        std::fs::create_dir_all(dir)?;
        self.k.write_matrix_market(BufWriter::new(File::create(dir.join("K.mtx"))?))?;
        self.m.write_matrix_market(BufWriter::new(File::create(dir.join("M.mtx"))?))?;
        crate::sparse::write_vector(&self.f, BufWriter::new(File::create(dir.join("F.txt"))?))?;
        crate::sparse::write_vector(&self.fq, BufWriter::new(File::create(dir.join("FQ.txt"))?))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundaryCondition::*;
    use proptest::prelude::*;

    fn setup_1d(n: usize, bc: crate::mesh::BoundaryCondition) -> (Mesh, DualCells) {
        let m = Mesh::uniform_interval(n, bc).unwrap();
        let d = DualCells::build(&m).unwrap();
        (m, d)
    }

    #[test]
    fn box_stiffness_1d() {
        let (m, d) = setup_1d(4, Dirichlet);
        let k = assemble_stiffness(&m, &d, &CoefficientField::laplacian(1.0), BilinearFormKind::BoxAveraged).unwrap();
        let want = [[8.25, -4.0, 0.0], [-4.0, 8.25, -4.0], [0.0, -4.0, 8.25]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - want[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constants_are_in_the_kernel_without_reaction() {
        let (m, d) = setup_1d(6, Neumann);
        let k = assemble_stiffness(&m, &d, &CoefficientField::laplacian(0.0), BilinearFormKind::BoxAveraged).unwrap();
        assert!(crate::sparse::max_abs(&k.matvec(&[1.0; 7])) < 1e-12);
        let sq = Mesh::unit_square(2, Neumann).unwrap();
        let sd = DualCells::build(&sq).unwrap();
        for kind in [BilinearFormKind::ExactGalerkin, BilinearFormKind::BoxAveraged, BilinearFormKind::QQuadrature] {
            let k = assemble_stiffness(&sq, &sd, &CoefficientField::laplacian(0.0), kind).unwrap();
            assert!(k.row_sums().iter().all(|s| s.abs() < 1e-13));
        }
    }

    #[test]
    fn invalid_coefficients_are_rejected() {
        let (m, d) = setup_1d(4, Dirichlet);
        let neg = CoefficientField { diffusion: Diffusion::Constant(IDENTITY), kappa: Reaction::Constant(-1.0) };
        assert!(matches!(assemble_stiffness(&m, &d, &neg, BilinearFormKind::BoxAveraged), Err(Error::Assembly(_))));
        let sq = Mesh::unit_square(2, Neumann).unwrap();
        let sd = DualCells::build(&sq).unwrap();
        let indefinite = CoefficientField { diffusion: Diffusion::Constant([[1.0, 2.0], [2.0, 1.0]]), kappa: Reaction::Constant(1.0) };
        assert!(matches!(assemble_stiffness(&sq, &sd, &indefinite, BilinearFormKind::ExactGalerkin), Err(Error::Assembly(_))));
        let nonsym = CoefficientField { diffusion: Diffusion::Constant([[1.0, 0.1], [0.0, 1.0]]), kappa: Reaction::Constant(1.0) };
        assert!(assemble_stiffness(&sq, &sd, &nonsym, BilinearFormKind::ExactGalerkin).is_err());
    }

    #[test]
    fn variable_coefficients_match_constant_ones() {
        let (m, d) = setup_1d(8, Dirichlet);
        let var = CoefficientField {
            diffusion: Diffusion::Variable(Arc::new(|_| [[2.0, 0.0], [0.0, 2.0]])),
            kappa: Reaction::Variable(Arc::new(|_| 3.0)),
        };
        let con = CoefficientField { diffusion: Diffusion::Constant([[2.0, 0.0], [0.0, 2.0]]), kappa: Reaction::Constant(3.0) };
        for kind in [BilinearFormKind::ExactGalerkin, BilinearFormKind::BoxAveraged, BilinearFormKind::QQuadrature] {
            let a = assemble_stiffness(&m, &d, &var, kind).unwrap();
            let b = assemble_stiffness(&m, &d, &con, kind).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12, "{kind}");
        }
    }

    #[test]
    fn averaged_diffusion_matches_galerkin_for_affine_coefficient() {
        // for P1 the exact Galerkin diffusion term equals the one with A_K
        let (m, d) = setup_1d(5, Neumann);
        let a = |x: f64| 1.0 + x;
        let coeff = CoefficientField {
            diffusion: Diffusion::Variable(Arc::new(move |p| [[a(p[0]), 0.0], [0.0, 1.0]])),
            kappa: Reaction::Constant(0.0),
        };
        let k = assemble_stiffness(&m, &d, &coeff, BilinearFormKind::ExactGalerkin).unwrap();
        let h = 0.2;
        // element [x0, x1]: ∫ a / h² = (1 + mid) / h
        let e0 = (1.0 + 0.1) / h;
        assert!((k.get(0, 1) + e0).abs() < 1e-12);
    }

    #[test]
    fn mass_variants() {
        let (m, d) = setup_1d(4, Dirichlet);
        let h = 0.25;
        let exact = assemble_mass(&m, &d, InnerProductKind::ExactL2).unwrap();
        assert!((exact.get(1, 0) - h / 6.0).abs() < 1e-15);
        assert!((exact.get(1, 1) - 2.0 * h / 3.0).abs() < 1e-15);
        let lumped = assemble_mass(&m, &d, InnerProductKind::Lumped).unwrap();
        assert_eq!(lumped.diagonal(), vec![0.25; 3]);
        let b_full = assemble_mass(&m, &d, InnerProductKind::Banded(2)).unwrap();
        assert_eq!(b_full.max_abs_diff(&exact), 0.0);
        let b0 = assemble_mass(&m, &d, InnerProductKind::Banded(0)).unwrap();
        assert_eq!(b0.max_abs_diff(&lump(&exact).unwrap()), 0.0);
        assert!(matches!(assemble_mass(&m, &d, InnerProductKind::Banded(3)), Err(Error::InvalidArgument(_))));
        let mixed = assemble_mass(&m, &d, InnerProductKind::Mixed).unwrap();
        assert!((mixed.get(1, 1) - 2.0 * 3.0 * h / 8.0).abs() < 1e-15);
        assert!((mixed.get(1, 0) - h / 8.0).abs() < 1e-15);
    }

    #[test]
    fn neumann_lumped_equals_lumped_consistent_mass() {
        let (m, d) = setup_1d(8, Neumann);
        let exact = assemble_mass(&m, &d, InnerProductKind::ExactL2).unwrap();
        let lumped = assemble_mass(&m, &d, InnerProductKind::Lumped).unwrap();
        assert!(lump(&exact).unwrap().max_abs_diff(&lumped) < 1e-15);
        let sq = Mesh::unit_square(4, Neumann).unwrap();
        let sd = DualCells::build(&sq).unwrap();
        let exact = assemble_mass(&sq, &sd, InnerProductKind::ExactL2).unwrap();
        let lumped = assemble_mass(&sq, &sd, InnerProductKind::Lumped).unwrap();
        assert!(lump(&exact).unwrap().max_abs_diff(&lumped) < 1e-15);
    }

    #[test]
    fn mixed_entries_2d() {
        let sq = Mesh::unit_square(2, Neumann).unwrap();
        let sd = DualCells::build(&sq).unwrap();
        let mixed = assemble_mass(&sq, &sd, InnerProductKind::Mixed).unwrap();
        // columns of the mixed matrix integrate φ_j over the whole domain
        let exact = assemble_mass(&sq, &sd, InnerProductKind::ExactL2).unwrap();
        let col_mixed = mixed.transpose().row_sums();
        let col_exact = exact.row_sums();
        for (a, b) in col_mixed.iter().zip(&col_exact) {
            assert!((a - b).abs() < 1e-15);
        }
        // one element, vertex 0 of the lower-left triangle
        let area = 0.125;
        let single = Mesh::new(2, vec![0.0, 0.0, 0.5, 0.0, 0.5, 0.5], vec![0, 1, 2], [0, 1, 2].into(), Neumann).unwrap();
        let sd1 = DualCells::build(&single).unwrap();
        let mx = assemble_mass(&single, &sd1, InnerProductKind::Mixed).unwrap();
        assert!((mx.get(0, 0) - 11.0 * area / 54.0).abs() < 1e-15);
        assert!((mx.get(0, 1) - 7.0 * area / 108.0).abs() < 1e-15);
    }

    #[test]
    fn loads() {
        let (m, d) = setup_1d(4, Dirichlet);
        let one = |_: &[f64]| 1.0;
        let f = assemble_load_fem(&m, &one, LOAD_TOLERANCE).unwrap();
        let fq = assemble_load_box(&m, &d, &one, LOAD_TOLERANCE).unwrap();
        for (a, b) in f.iter().zip(&fq) {
            assert!((a - 0.25).abs() < 1e-14 && (b - 0.25).abs() < 1e-14);
        }
        let x = |p: &[f64]| p[0];
        let fx = assemble_load_fem(&m, &x, LOAD_TOLERANCE).unwrap();
        assert!((fx[1] - 0.125).abs() < 1e-14);

        let (m, d) = setup_1d(8, Dirichlet);
        let ind = |p: &[f64]| if p[0] <= 0.5 { 1.0 } else { 0.0 };
        let f = assemble_load_fem(&m, &ind, LOAD_TOLERANCE).unwrap();
        let fq = assemble_load_box(&m, &d, &ind, LOAD_TOLERANCE).unwrap();
        for (a, b) in f.iter().zip(&fq) {
            assert!((a - b).abs() < 1e-14);
        }
        let sing = |p: &[f64]| p[0].powf(-0.499);
        let f = assemble_load_fem(&m, &sing, LOAD_TOLERANCE).unwrap();
        let fq = assemble_load_box(&m, &d, &sing, LOAD_TOLERANCE).unwrap();
        assert!((f[0] - fq[0]).abs() > 1e-3);
    }

    #[test]
    fn lump_small_examples() {
        let a = CsrMatrix::from_dense(&faer::mat![[2.0, 1.0], [1.0, 3.0]]);
        assert_eq!(lump(&a).unwrap().diagonal(), vec![3.0, 4.0]);
        let i = CsrMatrix::from_diagonal(&[1.0; 3]);
        assert_eq!(lump(&i).unwrap().max_abs_diff(&i), 0.0);
    }

    #[test]
    fn export_writes_all_files() {
        let (m, d) = setup_1d(4, Dirichlet);
        let b = OperatorBundle::assemble(
            &m,
            &d,
            &CoefficientField::laplacian(1.0),
            BilinearFormKind::BoxAveraged,
            InnerProductKind::Lumped,
            &|_| 1.0,
            LOAD_TOLERANCE,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.export(dir.path()).unwrap();
        let k = CsrMatrix::read_matrix_market(std::io::BufReader::new(std::fs::File::open(dir.path().join("K.mtx")).unwrap())).unwrap();
        assert_eq!(k.max_abs_diff(&b.k), 0.0);
        let fq = crate::sparse::read_vector(std::io::BufReader::new(std::fs::File::open(dir.path().join("FQ.txt")).unwrap())).unwrap();
        assert_eq!(fq, b.fq);
    }

    #[test]
    fn inner_product_names_round_trip() {
        for k in [InnerProductKind::ExactL2, InnerProductKind::Mixed, InnerProductKind::Lumped, InnerProductKind::Banded(3)] {
            assert_eq!(k.to_string().parse::<InnerProductKind>().unwrap(), k);
        }
        for k in [BilinearFormKind::ExactGalerkin, BilinearFormKind::BoxAveraged, BilinearFormKind::QQuadrature] {
            assert_eq!(k.to_string().parse::<BilinearFormKind>().unwrap(), k);
        }
        assert!("banded:x".parse::<InnerProductKind>().is_err());
    }

    proptest! {
        #[test]
        fn lumped_consistency_is_second_order(seed in 0u64..1000) {
            // |(χ,ψ) − ⟨χ,ψ⟩| / (|χ|₁|ψ|₁ h²) stays bounded for smooth-ish random data
            let mut ratios = Vec::new();
            for n in [8usize, 16, 32] {
                let (m, d) = setup_1d(n, Neumann);
                let h = 1.0 / n as f64;
                let phase = seed as f64 * 0.01;
                let chi: Vec<f64> = (0..=n).map(|i| (3.0 * i as f64 * h + phase).sin()).collect();
                let psi: Vec<f64> = (0..=n).map(|i| (2.0 * i as f64 * h - phase).cos()).collect();
                let k = assemble_stiffness(&m, &d, &CoefficientField::laplacian(0.0), BilinearFormKind::BoxAveraged).unwrap();
                let semi = |v: &[f64]| crate::sparse::dot(v, &k.matvec(v)).sqrt();
                let exact = assemble_mass(&m, &d, InnerProductKind::ExactL2).unwrap();
                for kind in [InnerProductKind::Lumped, InnerProductKind::Banded(1)] {
                    let mh = assemble_mass(&m, &d, kind).unwrap();
                    let diff = crate::sparse::dot(&chi, &exact.matvec(&psi)) - crate::sparse::dot(&chi, &mh.matvec(&psi));
                    ratios.push(diff.abs() / (semi(&chi) * semi(&psi) * h * h));
                }
            }
            prop_assert!(ratios.iter().all(|r| *r < 0.2), "{ratios:?}");
        }
    }
}
