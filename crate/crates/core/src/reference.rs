//! Reference solutions: sine series on the unit interval and overkill
//! solutions on nested structured squares, plus `L²` error evaluation.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::assembly::{assemble_mass, CoefficientField, InnerProductKind, OperatorBundle, LOAD_TOLERANCE};
use crate::dual::DualCells;
use crate::error::{Error, Result};
use crate::fracop::{frac_solve, FracSolveSpec};
use crate::mesh::{BoundaryCondition, Mesh};
use crate::quadrature::{gauss_legendre_on, integrate_with_breaks, triangle_rule_deg5, Tolerance};
use crate::sparse::dot;

/// Exponent of the singular load `x^{-SINGULAR_EXPONENT}`.
pub const SINGULAR_EXPONENT: f64 = 0.499;

/// Indicator of `[0, 1/2]`.
pub fn indicator_load(p: &[f64]) -> f64 {
    if p[0] <= 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn singular_load(p: &[f64]) -> f64 {
    p[0].powf(-SINGULAR_EXPONENT)
}

/// `−sign((x − 1/2)(y − 1/2))`, zero on the two axes through the center.
pub fn checkerboard_load(p: &[f64]) -> f64 {
    let s = (p[0] - 0.5) * (p[1] - 0.5);
    if s > 0.0 {
        -1.0
    } else if s < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Truncated sine series `Σ c_n sin(nπx)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSolution {
    pub coefficients: Vec<f64>,
    pub truncation_n: usize,
    pub beta: f64,
}

impl SeriesSolution {
    pub fn eval(&self, x: f64) -> f64 {
        // summed from the smallest terms up
        self.coefficients
            .iter()
            .enumerate()
            .rev()
            .map(|(i, c)| c * ((i + 1) as f64 * PI * x).sin())
            .sum()
    }

    pub fn eval_many(&self, xs: &[f64]) -> Vec<f64> {
        xs.par_iter().map(|&x| self.eval(x)).collect()
    }

    /// Header `beta truncation_N`, then one coefficient per line.
    pub fn write_cache(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{:.17e} {}", self.beta, self.truncation_n)?;
        for c in &self.coefficients {
            writeln!(w, "{c:.17e}")?;
        }
        Ok(())
    }

    pub fn read_cache(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, msg: "empty cache".into() })??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = |line, msg: &str| Error::Parse { line, msg: msg.into() };
        if parts.len() != 2 {
            return Err(bad(1, "expected `beta truncation_N`"));
        }
        let beta: f64 = parts[0].parse().map_err(|_| bad(1, "bad beta"))?;
        let truncation_n: usize = parts[1].parse().map_err(|_| bad(1, "bad truncation"))?;
        let mut coefficients = Vec::with_capacity(truncation_n);
        for (i, l) in lines.enumerate() {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            coefficients.push(l.trim().parse().map_err(|_| bad(i + 2, "bad coefficient"))?);
        }
        if coefficients.len() != truncation_n {
            return Err(bad(0, "coefficient count does not match the header"));
        }
        Ok(Self { coefficients, truncation_n, beta })
    }
}

/// Exact solution of `(−d²/dx² + 1)^β u = 𝟙_{[0,1/2]}` with homogeneous
/// Dirichlet conditions, truncated after `n` terms.
pub fn indicator_series(beta: f64, n: usize) -> SeriesSolution {
    let coefficients = (1..=n)
        .map(|k| {
            let w = k as f64 * PI;
            2.0 * (1.0 - (w / 2.0).cos()) / (w * (w * w + 1.0).powf(beta))
        })
        .collect();
    SeriesSolution { coefficients, truncation_n: n, beta }
}

/// `∫_0^1 x^{-0.499} sin(nπx) dx` by adaptive Gauss–Kronrod with breaks at
/// the zeros of the sine.
pub fn singular_fourier_coefficient(n: usize) -> Result<f64> {
    let breaks: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
    let tol = Tolerance {
        rel: 1e-13,
        abs: 1e-12,
        max_subdivisions: 20_000,
    };
    let w = n as f64 * PI;
    Ok(integrate_with_breaks(|x| x.powf(-SINGULAR_EXPONENT) * (w * x).sin(), &breaks, tol)?.value)
}

/// The same coefficient after substituting `x = u^p` with
/// `p = 1/(1 − 0.499)`, which removes the singularity: `p ∫_0^1 sin(nπu^p) du`.
pub fn singular_fourier_coefficient_substituted(n: usize, panels: usize) -> f64 {
    let p = 1.0 / (1.0 - SINGULAR_EXPONENT);
    let w = n as f64 * PI;
    let mut s = 0.0;
    for j in 0..panels {
        let (us, ws) = gauss_legendre_on(20, j as f64 / panels as f64, (j + 1) as f64 / panels as f64);
        s += us.iter().zip(&ws).map(|(u, wt)| wt * (w * u.powf(p)).sin()).sum::<f64>();
    }
    p * s
}

/// Exact solution of `(−d²/dx² + 1)^β u = x^{-0.499}`, truncated after `n`
/// terms.
pub fn singular_series(beta: f64, n: usize) -> Result<SeriesSolution> {
    let coefficients = (1..=n)
        .into_par_iter()
        .map(|k| {
            let w = k as f64 * PI;
            singular_fourier_coefficient(k).map(|b| 2.0 * b / (w * w + 1.0).powf(beta))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SeriesSolution { coefficients, truncation_n: n, beta })
}

/// `‖u_h − u_ref‖_{L²}` with `m`-point Gauss per interval (1D) or the
/// degree-5 triangle rule (2D). `values` are nodal values on all vertices.
pub fn l2_error_with(mesh: &Mesh, values: &[f64], reference: &(dyn Fn(&[f64]) -> f64 + Sync), points: usize) -> f64 {
    assert_eq!(values.len(), mesh.n_vertices());
    let per_element: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let el = mesh.element(k);
            match mesh.dim() {
                1 => {
                    let (a, b) = (mesh.vertex(el[0])[0], mesh.vertex(el[1])[0]);
                    let (xs, ws) = gauss_legendre_on(points, a, b);
                    xs.iter()
                        .zip(&ws)
                        .map(|(&x, w)| {
                            let t = (x - a) / (b - a);
                            let uh = values[el[0]] * (1.0 - t) + values[el[1]] * t;
                            let d = uh - reference(&[x]);
                            w * d * d
                        })
                        .sum()
                }
                _ => {
                    let vol = mesh.measure(k);
                    let pts: Vec<&[f64]> = el.iter().map(|&v| mesh.vertex(v)).collect();
                    triangle_rule_deg5()
                        .iter()
                        .map(|(l, w)| {
                            let p = [
                                l[0] * pts[0][0] + l[1] * pts[1][0] + l[2] * pts[2][0],
                                l[0] * pts[0][1] + l[1] * pts[1][1] + l[2] * pts[2][1],
                            ];
                            let uh = l[0] * values[el[0]] + l[1] * values[el[1]] + l[2] * values[el[2]];
                            let d = uh - reference(&p);
                            w * vol * d * d
                        })
                        .sum()
                }
            }
        })
        .collect();
    per_element.iter().sum::<f64>().sqrt()
}

pub fn l2_error(mesh: &Mesh, values: &[f64], reference: &(dyn Fn(&[f64]) -> f64 + Sync)) -> f64 {
    l2_error_with(mesh, values, reference, 5)
}

/// Value at `p` of the P1 function with `values` on a structured square
/// from [`Mesh::unit_square`] with `n` cells per side.
pub fn eval_structured(n: usize, values: &[f64], p: [f64; 2]) -> f64 {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let sx = (p[0] * n as f64).clamp(0.0, n as f64);
    let sy = (p[1] * n as f64).clamp(0.0, n as f64);
    let i = (sx.floor() as usize).min(n - 1);
    let j = (sy.floor() as usize).min(n - 1);
    let (xi, eta) = (sx - i as f64, sy - j as f64);
    let (u00, u10, u01, u11) = (values[idx(i, j)], values[idx(i + 1, j)], values[idx(i, j + 1)], values[idx(i + 1, j + 1)]);
    if xi >= eta {
        u00 + xi * (u10 - u00) + eta * (u11 - u10)
    } else {
        u00 + eta * (u01 - u00) + xi * (u11 - u01)
    }
}

/// Interpolate a coarse structured P1 function onto a nested finer grid.
/// Exact because the fine triangulation refines the coarse one.
pub fn prolongate_structured(coarse_n: usize, coarse: &[f64], fine_n: usize) -> Result<Vec<f64>> {
    if fine_n % coarse_n != 0 {
        return Err(Error::invalid(format!("grid {fine_n} is not a refinement of grid {coarse_n}")));
    }
    if coarse.len() != (coarse_n + 1) * (coarse_n + 1) {
        return Err(Error::invalid("coarse vector does not match its grid"));
    }
    let mut out = Vec::with_capacity((fine_n + 1) * (fine_n + 1));
    for jj in 0..=fine_n {
        for ii in 0..=fine_n {
            out.push(eval_structured(coarse_n, coarse, [ii as f64 / fine_n as f64, jj as f64 / fine_n as f64]));
        }
    }
    Ok(out)
}

/// Fine-mesh fractional solution used in place of an exact solution.
#[derive(Debug, Clone)]
pub struct OverkillReference {
    pub level: usize,
    pub mesh: Mesh,
    pub nodal_values: Vec<f64>,
    fine_mass: crate::sparse::CsrMatrix,
}

/// Largest fine problem accepted by [`overkill_solve`].
pub const OVERKILL_LIMIT: usize = 300_000;

impl OverkillReference {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        eval_structured(1 << self.level, &self.nodal_values, p)
    }

    /// Restriction to the vertices of a nested coarse grid.
    pub fn restrict(&self, coarse_level: usize) -> Result<Vec<f64>> {
        if coarse_level > self.level {
            return Err(Error::invalid("restriction to a finer level"));
        }
        let (nf, nc) = (1usize << self.level, 1usize << coarse_level);
        let step = nf / nc;
        let mut out = Vec::with_capacity((nc + 1) * (nc + 1));
        for j in 0..=nc {
            for i in 0..=nc {
                out.push(self.nodal_values[j * step * (nf + 1) + i * step]);
            }
        }
        Ok(out)
    }

    /// Exact `L²` distance between a coarse structured P1 function and the
    /// reference, through nested prolongation.
    pub fn l2_distance(&self, coarse_level: usize, coarse: &[f64]) -> Result<f64> {
        let nf = 1usize << self.level;
        let e: Vec<f64> = prolongate_structured(1 << coarse_level, coarse, nf)?
            .iter()
            .zip(&self.nodal_values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(dot(&e, &self.fine_mass.matvec(&e)).max(0.0).sqrt())
    }
}

/// Neumann fractional solve on the structured square with `2^level` cells
/// per side.
pub fn overkill_solve(
    level: usize,
    spec: &FracSolveSpec,
    coeff: &CoefficientField,
    load: &(dyn Fn(&[f64]) -> f64 + Sync),
    limit: usize,
) -> Result<OverkillReference> {
    let n = 1usize << level;
    let dofs = (n + 1) * (n + 1);
    if dofs > limit {
        return Err(Error::SizeLimit(format!("overkill level {level} has {dofs} unknowns, limit {limit}")));
    }
    let mesh = Mesh::unit_square(n, BoundaryCondition::Neumann)?;
    let dual = DualCells::build(&mesh)?;
    let bundle = OperatorBundle::assemble(&mesh, &dual, coeff, spec.bilinear_form, spec.inner_product, load, LOAD_TOLERANCE)?;
    let nodal_values = frac_solve(&bundle, spec)?;
    let fine_mass = assemble_mass(&mesh, &dual, InnerProductKind::ExactL2)?;
    Ok(OverkillReference {
        level,
        mesh,
        nodal_values,
        fine_mass,
    })
}
