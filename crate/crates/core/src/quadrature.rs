//! Quadrature rules: Gauss–Legendre of arbitrary order, globally adaptive
//! Gauss–Kronrod on intervals, and an adaptive degree-5 rule on triangles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Stopping rule for the adaptive integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub const fn new(rel: f64, abs: f64) -> Self {
        Self {
            rel,
            abs,
            max_subdivisions: 4000,
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-10, 1e-14)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| wi * half).collect(),
    )
}

// 15-point Kronrod extension of the 7-point Gauss rule (abscissae in
// decreasing order, last one is the centre).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights attached to XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(mid - dx) + f(mid + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) integration over [a, b].
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate drops below the tolerance. Integrable endpoint singularities are
/// resolved by repeated bisection toward the singular end.
pub fn integrate(f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    integrate_with_breaks(f, &[a, b], tol)
}

/// Like [`integrate`], starting from the partition given by `breaks`
/// (sorted, at least two points). Use it to place known kinks or
/// oscillation periods at panel boundaries.
pub fn integrate_with_breaks(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if breaks.len() < 2 {
        return Err(Error::invalid("need at least two break points"));
    }
    let mut heap = BinaryHeap::with_capacity(breaks.len() * 2);
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        let (value, error) = kronrod15(&mut f, w[0], w[1]);
        evaluations += 15;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    let mut subdivisions = 0;
    loop {
        let (value, error) = totals(heap.iter().map(|s| (s.a, s.value, s.error)));
        if error <= tol.target(value) {
            return Ok(Estimate {
                value,
                error,
                evaluations,
            });
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::Integration {
                element: None,
                msg: format!(
                    "{subdivisions} subdivisions, estimate {value:e} with error {error:e}"
                ),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval collapsed to machine resolution; keep what we have.
            heap.push(Segment {
                error: 0.0,
                ..worst
            });
            continue;
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = kronrod15(&mut f, a, b);
            evaluations += 15;
            heap.push(Segment { a, b, value, error });
        }
        subdivisions += 1;
    }
}

/// Sum values and errors in order of position so that the result does not
/// depend on the heap layout.
fn totals(items: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let mut v: Vec<_> = items.collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    v.iter()
        .fold((0.0, 0.0), |(s, e), &(_, val, err)| (s + val, e + err))
}

pub type Point2 = [f64; 2];

/// Seven-point degree-5 rule on the reference triangle, as barycentric
/// coordinates with weights summing to one.
pub fn triangle_rule_deg5() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([a1, a1, 1.0 - 2.0 * a1], w1),
        ([a1, 1.0 - 2.0 * a1, a1], w1),
        ([1.0 - 2.0 * a1, a1, a1], w1),
        ([a2, a2, 1.0 - 2.0 * a2], w2),
        ([a2, 1.0 - 2.0 * a2, a2], w2),
        ([1.0 - 2.0 * a2, a2, a2], w2),
    ]
}

pub fn triangle_area(t: &[Point2; 3]) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]))
}

fn rule_on_triangle(f: &mut impl FnMut(Point2) -> f64, t: &[Point2; 3]) -> f64 {
    let area = triangle_area(t).abs();
    let mut s = 0.0;
    for (l, w) in triangle_rule_deg5() {
        let p = [
            l[0] * t[0][0] + l[1] * t[1][0] + l[2] * t[2][0],
            l[0] * t[0][1] + l[1] * t[1][1] + l[2] * t[2][1],
        ];
        s += w * f(p);
    }
    s * area
}

fn children(t: &[Point2; 3]) -> [[Point2; 3]; 4] {
    let mid = |p: Point2, q: Point2| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    let m01 = mid(t[0], t[1]);
    let m12 = mid(t[1], t[2]);
    let m20 = mid(t[2], t[0]);
    [
        [t[0], m01, m20],
        [m01, t[1], m12],
        [m20, m12, t[2]],
        [m01, m12, m20],
    ]
}

struct Patch {
    tri: [Point2; 3],
    parts: [f64; 4],
    error: f64,
    order: u64,
}

impl PartialEq for Patch {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Patch {}
impl PartialOrd for Patch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Patch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Adaptive integration over a triangle. The error of a patch is the
/// difference between the degree-5 rule on the patch and on its four
/// midpoint children; the worst patch is refined first.
pub fn integrate_triangle(
    mut f: impl FnMut(Point2) -> f64,
    tri: [Point2; 3],
    tol: Tolerance,
) -> Result<Estimate> {
    let mut evaluations = 0;
    let mut order = 0u64;
    let mut make = |f: &mut dyn FnMut(Point2) -> f64, tri: [Point2; 3], whole: f64, evals: &mut usize| {
        let mut g = |p: Point2| f(p);
        let kids = children(&tri);
        let mut parts = [0.0; 4];
        for (i, k) in kids.iter().enumerate() {
            parts[i] = rule_on_triangle(&mut g, k);
        }
        *evals += 28;
        order += 1;
        Patch {
            tri,
            parts,
            error: (whole - parts.iter().sum::<f64>()).abs(),
            order,
        }
    };
    let whole = rule_on_triangle(&mut f, &tri);
    evaluations += 7;
    let mut heap = BinaryHeap::new();
    heap.push(make(&mut f, tri, whole, &mut evaluations));
    let mut subdivisions = 0;
    let mut running_value = heap.peek().map_or(0.0, |p| p.parts.iter().sum::<f64>());
    let mut running_error = heap.peek().map_or(0.0, |p| p.error);
    loop {
        if running_error <= tol.target(running_value) || subdivisions >= tol.max_subdivisions {
            let mut leaves: Vec<(u64, f64, f64)> = heap
                .iter()
                .map(|p| (p.order, p.parts.iter().sum::<f64>(), p.error))
                .collect();
            leaves.sort_by_key(|l| l.0);
            let value: f64 = leaves.iter().map(|l| l.1).sum();
            let error: f64 = leaves.iter().map(|l| l.2).sum();
            if error <= tol.target(value) {
                return Ok(Estimate {
                    value,
                    error,
                    evaluations,
                });
            }
            if subdivisions >= tol.max_subdivisions {
                return Err(Error::Integration {
                    element: None,
                    msg: format!("triangle refinement exhausted, estimate {value:e} error {error:e}"),
                });
            }
            running_value = value;
            running_error = error;
        }
        let worst = heap.pop().expect("heap is never empty");
        running_value -= worst.parts.iter().sum::<f64>();
        running_error -= worst.error;
        for (kid, part) in children(&worst.tri).into_iter().zip(worst.parts) {
            let patch = make(&mut f, kid, part, &mut evaluations);
            running_value += patch.parts.iter().sum::<f64>();
            running_error += patch.error;
            heap.push(patch);
        }
        subdivisions += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 12, 40] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn large_rule_weights_sum_to_two() {
        let (x, w) = gauss_legendre(300);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn kronrod_is_exact_for_degree_22() {
        let (v, _) = kronrod15(&mut |x: f64| x.powi(22), 0.0, 1.0);
        assert!((v - 1.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        // ∫_0^1 x^{-0.499} dx = 1 / 0.501
        let est = integrate(|x| x.powf(-0.499), 0.0, 1.0, Tolerance::new(1e-11, 1e-14)).unwrap();
        assert!((est.value - 1.0 / 0.501).abs() < 1e-9, "{}", est.value);
    }

    #[test]
    fn adaptive_matches_oscillatory_closed_form() {
        let n = 37.0 * std::f64::consts::PI;
        let breaks: Vec<f64> = (0..=37).map(|j| j as f64 / 37.0).collect();
        let est = integrate_with_breaks(|x| (n * x).sin(), &breaks, Tolerance::new(1e-12, 1e-15)).unwrap();
        assert!((est.value - 2.0 / n).abs() < 1e-13);
    }

    #[test]
    fn triangle_rule_is_degree_five() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        // ∫ x^a y^b over the reference triangle = a! b! / (a+b+2)!
        let fact = |k: u32| (1..=k).map(|i| i as f64).product::<f64>();
        for a in 0..=5u32 {
            for b in 0..=(5 - a) {
                let q = rule_on_triangle(&mut |p: Point2| p[0].powi(a as i32) * p[1].powi(b as i32), &t);
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                assert!((q - exact).abs() < 1e-15, "x^{a} y^{b}");
            }
        }
    }

    #[test]
    fn adaptive_triangle_resolves_a_kink() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        // |x - y| over the reference triangle integrates to 1/6.
        let est = integrate_triangle(|p| (p[0] - p[1]).abs(), t, Tolerance::new(1e-7, 1e-14)).unwrap();
        assert!((est.value - 1.0 / 6.0).abs() < 1e-7);
    }
}
