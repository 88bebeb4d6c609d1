//! Refinement studies: errors against reference solutions, experimental
//! orders of convergence and CSV reports.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

use crate::assembly::{BilinearFormKind, CoefficientField, InnerProductKind, OperatorBundle, LOAD_TOLERANCE};
use crate::dual::DualCells;
use crate::error::{Error, Result};
use crate::fracop::{frac_solve_with, FracMethod, FracOperator, FracSolveSpec, LoadKind};
use crate::mesh::{BoundaryCondition, Mesh};
use crate::reference::{self, OverkillReference, SeriesSolution};
use crate::sparse::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    /// `(−Δ + 1)^β u = 𝟙_{[0,1/2]}` on `(0, 1)`, Dirichlet.
    Indicator1D,
    /// `(−Δ + 1)^β u = x^{-0.499}` on `(0, 1)`, Dirichlet.
    Singular1D,
    /// `(−Δ + 1)^β u = −sign((x − ½)(y − ½))` on the unit square, Neumann.
    Checker2D,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Indicator1D => "indicator1d",
            Self::Singular1D => "singular1d",
            Self::Checker2D => "checker2d",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indicator1d" => Ok(Self::Indicator1D),
            "singular1d" => Ok(Self::Singular1D),
            "checker2d" => Ok(Self::Checker2D),
            other => Err(Error::invalid(format!("unknown experiment `{other}`"))),
        }
    }
}

impl ExperimentKind {
    pub fn dim(&self) -> usize {
        match self {
            Self::Checker2D => 2,
            _ => 1,
        }
    }
}

/// Expected order of convergence, a single value or an open band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Value(f64),
    Band(f64, f64),
}

impl Rate {
    pub fn contains(&self, eoc: f64, tolerance: f64) -> bool {
        match *self {
            Rate::Value(r) => (eoc - r).abs() <= tolerance,
            Rate::Band(lo, hi) => eoc > lo - tolerance && eoc < hi + tolerance,
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Value(r) => write!(f, "{r:.11e}"),
            Rate::Band(lo, hi) => write!(f, "{lo:.11e}..{hi:.11e}"),
        }
    }
}

/// Theoretical rate attached to a row.
pub fn theoretical_rate(experiment: ExperimentKind, beta: f64) -> Rate {
    match experiment {
        ExperimentKind::Indicator1D | ExperimentKind::Checker2D => Rate::Value((2.0 * beta + 0.5).min(2.0)),
        ExperimentKind::Singular1D if (beta - 1.0).abs() < 1e-12 => Rate::Band(1.5, 2.0),
        ExperimentKind::Singular1D => Rate::Band((2.0 * beta).min(1.0), (2.0 * beta).min(2.0)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub experiment: ExperimentKind,
    pub betas: Vec<f64>,
    pub levels: Vec<usize>,
    pub inner_products: Vec<InnerProductKind>,
    pub loads: Vec<LoadKind>,
    pub frac_method: FracMethod,
    pub bilinear_form: BilinearFormKind,
    pub output_path: Option<PathBuf>,
    /// Fine level of the 2D reference.
    pub overkill_level: usize,
    /// Series truncation; the experiment default when `None`.
    pub series_terms: Option<usize>,
}

impl ExperimentSpec {
    /// Defaults for each experiment.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let (levels, inner_products, loads) = match experiment {
            ExperimentKind::Checker2D => (
                (3..=7).collect(),
                vec![InnerProductKind::ExactL2, InnerProductKind::Banded(0), InnerProductKind::Banded(1)],
                vec![LoadKind::Box],
            ),
            _ => ((3..=9).collect(), vec![InnerProductKind::Lumped], vec![LoadKind::Fem, LoadKind::Box]),
        };
        let betas = match experiment {
            ExperimentKind::Indicator1D => vec![0.4, 0.75, 1.0],
            ExperimentKind::Singular1D => vec![1.0],
            ExperimentKind::Checker2D => vec![0.5, 0.75],
        };
        Self {
            name: experiment.to_string(),
            experiment,
            betas,
            levels,
            inner_products,
            loads,
            frac_method: FracMethod::Sinc { step: 0.2 },
            bilinear_form: BilinearFormKind::BoxAveraged,
            output_path: None,
            overkill_level: 8,
            series_terms: None,
        }
    }

    pub fn series_terms(&self) -> usize {
        self.series_terms.unwrap_or(match self.experiment {
            ExperimentKind::Singular1D => 2000,
            _ => 8000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::invalid("at least one beta is required"));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::invalid(format!("beta = {b} must be positive")));
        }
        if self.levels.len() < 2 {
            return Err(Error::invalid("at least two levels are required"));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("levels must be strictly increasing"));
        }
        if self.levels[0] < 1 {
            return Err(Error::invalid("levels start at 1"));
        }
        if self.inner_products.is_empty() || self.loads.is_empty() {
            return Err(Error::invalid("inner products and loads must be non-empty"));
        }
        if let Some(ip) = self.inner_products.iter().find(|ip| !ip.is_selfadjoint()) {
            return Err(Error::invalid(format!("inner product {ip} cannot be used for fractional solves")));
        }
        if self.experiment == ExperimentKind::Checker2D && self.overkill_level <= *self.levels.last().unwrap() {
            return Err(Error::invalid("the overkill level must exceed every compared level"));
        }
        if self.series_terms == Some(0) {
            return Err(Error::invalid("series_terms must be positive"));
        }
        self.frac_method.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocRow {
    pub experiment: ExperimentKind,
    pub beta: f64,
    pub inner_product: InnerProductKind,
    pub load: LoadKind,
    pub level: usize,
    pub dofs: usize,
    pub h: f64,
    pub l2_error: f64,
    pub eoc: Option<f64>,
    pub theoretical_rate: Rate,
    /// Distance to the eigendecomposition solution, where that was computed.
    pub method_error: Option<f64>,
    /// Why the row has no error value.
    pub failure: Option<String>,
}

impl EocRow {
    /// Whether the fractional-method error is too large against the
    /// discretization error.
    pub fn quadrature_dominated(&self) -> bool {
        self.method_error.is_some_and(|m| m > 0.01 * self.l2_error)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocReport {
    pub name: String,
    pub rows: Vec<EocRow>,
}

pub const CSV_HEADER: &str = "experiment,beta,inner_product,load,level,dofs,h,l2_error,eoc,theoretical_rate";

impl EocReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            let eoc = r.eoc.map(|e| format!("{e:.11e}")).unwrap_or_default();
            let err = if r.failure.is_some() { "failed".to_string() } else { format!("{:.11e}", r.l2_error) };
            writeln!(
                w,
                "{},{:.11e},{},{},{},{},{:.11e},{err},{},{}",
                r.experiment, r.beta, r.inner_product, r.load, r.level, r.dofs, r.h, eoc, r.theoretical_rate
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn group(&self, beta: f64, ip: InnerProductKind, load: LoadKind) -> Vec<&EocRow> {
        self.rows
            .iter()
            .filter(|r| r.beta == beta && r.inner_product == ip && r.load == load)
            .collect()
    }

    pub fn first_failure(&self) -> Option<&EocRow> {
        self.rows.iter().find(|r| r.failure.is_some())
    }

    /// EOC of the two finest levels of a group.
    pub fn terminal_eoc(&self, beta: f64, ip: InnerProductKind, load: LoadKind) -> Option<f64> {
        self.group(beta, ip, load).last().and_then(|r| r.eoc)
    }

    /// One line per group with its terminal EOC and theoretical rate.
    pub fn summary(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            let key = (r.beta.to_bits(), r.inner_product, r.load);
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen.into_iter()
            .map(|(b, ip, load)| {
                let beta = f64::from_bits(b);
                let g = self.group(beta, ip, load);
                let eoc = self.terminal_eoc(beta, ip, load).map_or("n/a".to_string(), |e| format!("{e:.4}"));
                format!(
                    "{} beta={beta} ip={ip} load={load}: terminal EOC {eoc}, theoretical {}",
                    self.name,
                    g[0].theoretical_rate
                )
            })
            .collect()
    }
}

/// `log(e_j/e_{j+1}) / log(h_j/h_{j+1})`; `None` where an error vanishes.
pub fn eoc(errors: &[f64], h: &[f64]) -> Result<Vec<Option<f64>>> {
    if errors.len() != h.len() || errors.len() < 2 {
        return Err(Error::invalid("eoc needs at least two matching errors and mesh sizes"));
    }
    if h.windows(2).any(|w| !(w[1] < w[0]) || w[1] <= 0.0) {
        return Err(Error::invalid("mesh sizes must be positive and strictly decreasing"));
    }
    Ok(errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, hh)| {
            (e[0] > 0.0 && e[1] > 0.0 && e[0].is_finite() && e[1].is_finite())
                .then(|| (e[0] / e[1]).ln() / (hh[0] / hh[1]).ln())
        })
        .collect())
}

/// Problem sizes up to which the fractional method is checked against the
/// eigendecomposition.
pub const GUARD_LIMIT: usize = 2000;

enum Reference {
    Series(SeriesSolution),
    Overkill(OverkillReference),
}

fn load_fn(experiment: ExperimentKind) -> fn(&[f64]) -> f64 {
    match experiment {
        ExperimentKind::Indicator1D => reference::indicator_load,
        ExperimentKind::Singular1D => reference::singular_load,
        ExperimentKind::Checker2D => reference::checkerboard_load,
    }
}

fn build_mesh(experiment: ExperimentKind, level: usize) -> Result<Mesh> {
    let n = 1usize << level;
    match experiment {
        ExperimentKind::Checker2D => Mesh::unit_square(n, BoundaryCondition::Neumann),
        _ => Mesh::uniform_interval(n, BoundaryCondition::Dirichlet),
    }
}

/// Vertex count and largest element diameter of a level.
fn level_size(experiment: ExperimentKind, level: usize) -> (usize, f64) {
    let n = 1usize << level;
    match experiment {
        ExperimentKind::Checker2D => ((n + 1) * (n + 1), std::f64::consts::SQRT_2 / n as f64),
        _ => (n + 1, 1.0 / n as f64),
    }
}

type RowResult = std::result::Result<(f64, Option<f64>), String>;

fn solve_level(
    spec: &ExperimentSpec,
    level: usize,
    references: &[(f64, InnerProductKind, LoadKind, std::result::Result<&Reference, &String>)],
) -> Result<Vec<RowResult>> {
    let mesh = build_mesh(spec.experiment, level)?;
    let dual = DualCells::build(&mesh)?;
    let coeff = CoefficientField::laplacian(1.0);
    let f = load_fn(spec.experiment);
    let mut errors = Vec::with_capacity(references.len());
    for &ip in &spec.inner_products {
        let bundle = OperatorBundle::assemble(&mesh, &dual, &coeff, spec.bilinear_form, ip, &f, LOAD_TOLERANCE)?;
        let op = FracOperator::new(&bundle.k, &bundle.m)?;
        let guard_exact = (bundle.n <= GUARD_LIMIT && spec.frac_method != FracMethod::EigOracle)
            .then(|| crate::assembly::assemble_mass(&mesh, &dual, InnerProductKind::ExactL2))
            .transpose()?;
        for &(beta, _, load, reference) in references.iter().filter(|r| r.1 == ip) {
            let reference = match reference {
                Ok(r) => r,
                Err(msg) => {
                    errors.push(Err(msg.clone()));
                    continue;
                }
            };
            let fs = FracSolveSpec {
                beta,
                method: spec.frac_method,
                inner_product: ip,
                bilinear_form: spec.bilinear_form,
                load,
            };
            let (u, _) = frac_solve_with(&op, &bundle, &fs)?;
            let full = mesh.extend_to_vertices(&u);
            let err = match reference {
                Reference::Series(s) => reference::l2_error(&mesh, &full, &|p| s.eval(p[0])),
                Reference::Overkill(o) => o.l2_distance(level, &full)?,
            };
            let method_error = match &guard_exact {
                Some(exact) => {
                    let (ue, _) = frac_solve_with(&op, &bundle, &FracSolveSpec { method: FracMethod::EigOracle, ..fs })?;
                    let d: Vec<f64> = u.iter().zip(&ue).map(|(a, b)| a - b).collect();
                    Some(dot(&d, &exact.matvec(&d)).max(0.0).sqrt())
                }
                None => None,
            };
            errors.push(Ok((err, method_error)));
        }
    }
    Ok(errors)
}

/// Run a refinement study. Rows are ordered by beta, inner product, load
/// and level. Failures after validation are recorded on the affected rows.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<EocReport> {
    spec.validate()?;
    let mut keys = Vec::new();
    for &beta in &spec.betas {
        for &ip in &spec.inner_products {
            for &load in &spec.loads {
                keys.push((beta, ip, load));
            }
        }
    }
    let references: Vec<std::result::Result<Reference, String>> = match spec.experiment {
        ExperimentKind::Indicator1D | ExperimentKind::Singular1D => {
            let mut series = Vec::new();
            for &b in &spec.betas {
                series.push(match spec.experiment {
                    ExperimentKind::Indicator1D => reference::indicator_series(b, spec.series_terms()),
                    _ => reference::singular_series(b, spec.series_terms())?,
                });
            }
            keys.iter()
                .map(|k| {
                    let i = spec.betas.iter().position(|b| *b == k.0).unwrap();
                    Ok(Reference::Series(series[i].clone()))
                })
                .collect()
        }
        ExperimentKind::Checker2D => keys
            .par_iter()
            .map(|&(beta, ip, load)| {
                let fs = FracSolveSpec { beta, method: spec.frac_method, inner_product: ip, bilinear_form: spec.bilinear_form, load };
                reference::overkill_solve(
                    spec.overkill_level,
                    &fs,
                    &CoefficientField::laplacian(1.0),
                    &reference::checkerboard_load,
                    reference::OVERKILL_LIMIT,
                )
                .map(Reference::Overkill)
                .map_err(|e| format!("reference solution: {e}"))
            })
            .collect(),
    };
    // level-major evaluation order; references grouped by inner product
    let ordered: Vec<_> = spec
        .inner_products
        .iter()
        .flat_map(|&ip| {
            keys.iter()
                .zip(&references)
                .filter(move |(k, _)| k.1 == ip)
                .map(|(k, r)| (k.0, k.1, k.2, r.as_ref()))
        })
        .collect();
    let levels: Vec<Vec<RowResult>> = spec
        .levels
        .par_iter()
        .map(|&level| {
            solve_level(spec, level, &ordered)
                .unwrap_or_else(|e| vec![Err(format!("level {level}: {e}")); ordered.len()])
        })
        .collect();
    let sizes: Vec<(usize, f64)> = spec.levels.iter().map(|&l| level_size(spec.experiment, l)).collect();

    let mut rows = Vec::new();
    for key in &keys {
        let idx = ordered
            .iter()
            .position(|o| o.0 == key.0 && o.1 == key.1 && o.2 == key.2)
            .expect("every key is evaluated");
        let results: Vec<&RowResult> = levels.iter().map(|l| &l[idx]).collect();
        let errs: Vec<f64> = results.iter().map(|r| r.as_ref().map_or(f64::NAN, |v| v.0)).collect();
        let hs: Vec<f64> = sizes.iter().map(|s| s.1).collect();
        let rates = eoc(&errs, &hs)?;
        for (j, &level) in spec.levels.iter().enumerate() {
            let row = EocRow {
                experiment: spec.experiment,
                beta: key.0,
                inner_product: key.1,
                load: key.2,
                level,
                dofs: sizes[j].0,
                h: sizes[j].1,
                l2_error: errs[j],
                eoc: if j == 0 { None } else { rates[j - 1] },
                theoretical_rate: theoretical_rate(spec.experiment, key.0),
                method_error: results[j].as_ref().ok().and_then(|v| v.1),
                failure: results[j].as_ref().err().cloned(),
            };
            if row.quadrature_dominated() {
                eprintln!(
                    "warning: {} beta={} ip={} load={} level={}: method error {:e} exceeds 1% of the discretization error {:e}",
                    spec.name, row.beta, row.inner_product, row.load, row.level, row.method_error.unwrap(), row.l2_error
                );
            }
            rows.push(row);
        }
    }
    Ok(EocReport { name: spec.name.clone(), rows })
}

#[derive(Debug, Clone)]
pub struct InnerProductComparison {
    pub report: EocReport,
    /// `(beta, load, a, b, |EOC_a − EOC_b|)` for the terminal pair.
    pub terminal_differences: Vec<(f64, LoadKind, InnerProductKind, InnerProductKind, f64)>,
}

/// Run a study over several inner products on identical meshes and loads
/// and compare their terminal EOCs pairwise.
pub fn compare_inner_products(spec: &ExperimentSpec) -> Result<InnerProductComparison> {
    if spec.inner_products.len() < 2 {
        return Err(Error::invalid("comparing inner products needs at least two of them"));
    }
    let report = run_experiment(spec)?;
    let mut terminal_differences = Vec::new();
    for &beta in &spec.betas {
        for &load in &spec.loads {
            for (i, &a) in spec.inner_products.iter().enumerate() {
                for &b in &spec.inner_products[i + 1..] {
                    let (ea, eb) = (report.terminal_eoc(beta, a, load), report.terminal_eoc(beta, b, load));
                    let d = match (ea, eb) {
                        (Some(x), Some(y)) => (x - y).abs(),
                        _ => f64::INFINITY,
                    };
                    terminal_differences.push((beta, load, a, b, d));
                }
            }
        }
    }
    Ok(InnerProductComparison { report, terminal_differences })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_examples() {
        assert_eq!(eoc(&[0.4, 0.1], &[1.0, 0.5]).unwrap(), vec![Some(2.0)]);
        assert_eq!(eoc(&[1.0, 0.25], &[1.0, 0.5]).unwrap(), vec![Some(2.0)]);
        assert_eq!(eoc(&[1.0, 0.5], &[1.0, 0.5]).unwrap(), vec![Some(1.0)]);
        assert_eq!(eoc(&[1e-3, 1e-3], &[1.0, 0.5]).unwrap(), vec![Some(0.0)]);
        assert_eq!(eoc(&[1.0, 0.0], &[1.0, 0.5]).unwrap(), vec![None]);
        assert!(eoc(&[1.0], &[1.0]).is_err());
        assert!(eoc(&[1.0, 0.5], &[0.5, 1.0]).is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(theoretical_rate(ExperimentKind::Indicator1D, 0.75), Rate::Value(2.0));
        assert_eq!(theoretical_rate(ExperimentKind::Indicator1D, 0.4), Rate::Value(1.3));
        assert_eq!(theoretical_rate(ExperimentKind::Singular1D, 1.0), Rate::Band(1.5, 2.0));
        assert!(Rate::Band(1.5, 2.0).contains(1.7, 0.0));
        assert!(!Rate::Band(1.5, 2.0).contains(2.0, 0.0));
    }

    #[test]
    fn small_indicator_study_is_deterministic() {
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Indicator1D);
        spec.betas = vec![1.0];
        spec.levels = vec![3, 4, 5];
        spec.series_terms = Some(2000);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 6);
        assert!(a.to_csv().starts_with(CSV_HEADER));
        assert!(a.rows.iter().all(|r| !r.quadrature_dominated()));
        assert_eq!(a.rows[0].dofs, 9);
        let fem = a.group(1.0, InnerProductKind::Lumped, LoadKind::Fem);
        let bx = a.group(1.0, InnerProductKind::Lumped, LoadKind::Box);
        for (x, y) in fem.iter().zip(&bx) {
            assert!((x.l2_error - y.l2_error).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Checker2D);
        assert!(spec.validate().is_ok());
        spec.overkill_level = 7;
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::defaults(ExperimentKind::Indicator1D);
        spec.levels = vec![3];
        assert!(spec.validate().is_err());
        spec.levels = vec![3, 4];
        spec.inner_products = vec![InnerProductKind::Mixed];
        assert!(spec.validate().is_err());
        spec.inner_products = vec![InnerProductKind::Lumped];
        assert!(matches!(compare_inner_products(&spec), Err(Error::InvalidArgument(_))));
    }
}
