//! Tensor-product quadrature over a chart and integration of curvature densities.
//!
//! Periodic coordinates use the offset trapezoid rule, the rest Gauss–Legendre
//! mapped to the coordinate interval. Node values are computed in parallel
//! but always summed by the same pairwise tree over node indices, so results
//! do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Chart, CurvatureBundle, MetricField, Params};
use crate::invariants::InvariantSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    GaussLegendre(usize),
    TrapezoidPeriodic(usize),
}

impl Rule {
    pub fn count(&self) -> usize {
        match *self {
            Rule::GaussLegendre(n) | Rule::TrapezoidPeriodic(n) => n,
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Tensor grid; nodes are generated on demand from their index, last coordinate fastest.
#[derive(Debug, Clone)]
pub struct QuadGrid {
    pub chart: Chart,
    pub rules: Vec<Rule>,
    axes: Vec<(Vec<f64>, Vec<f64>)>,
}

impl QuadGrid {
    pub fn new(chart: &Chart, resolution: &[usize]) -> Result<Self> {
        let n = chart.dim();
        let counts: Vec<usize> = match resolution.len() {
            1 => vec![resolution[0]; n],
            l if l == n => resolution.to_vec(),
            l => {
                return Err(Error::Config(format!(
                    "resolution has {l} entries, chart `{}` has {n} coordinates",
                    chart.name
                )))
            }
        };
        if let Some(c) = counts.iter().find(|&&c| c < 2) {
            return Err(Error::Config(format!("resolution {c} is below the minimum of 2")));
        }
        let mut rules = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        for (i, &c) in counts.iter().enumerate() {
            let (lo, hi) = chart.domain[i];
            if chart.periodic[i] {
                let h = (hi - lo) / c as f64;
                rules.push(Rule::TrapezoidPeriodic(c));
                axes.push(((0..c).map(|j| lo + (j as f64 + 0.5) * h).collect(), vec![h; c]));
            } else {
                let (x, w) = gauss_legendre(c);
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                rules.push(Rule::GaussLegendre(c));
                axes.push((
                    x.iter().map(|t| mid + half * t).collect(),
                    w.iter().map(|wi| half * wi).collect(),
                ));
            }
        }
        Ok(Self {
            chart: chart.clone(),
            rules,
            axes,
        })
    }

    pub fn resolution(&self) -> Vec<usize> {
        self.rules.iter().map(Rule::count).collect()
    }

    pub fn len(&self) -> usize {
        self.rules.iter().map(Rule::count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point and weight of node `index`.
    pub fn node(&self, mut index: usize) -> (Vec<f64>, f64) {
        let n = self.axes.len();
        let mut point = vec![0.0; n];
        let mut weight = 1.0;
        for d in (0..n).rev() {
            let (x, w) = &self.axes[d];
            let j = index % x.len();
            index /= x.len();
            point[d] = x[j];
            weight *= w[j];
        }
        (point, weight)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    pub fn weight_sum(&self) -> f64 {
        tree_sum(&(0..self.len()).map(|i| self.node(i).1).collect::<Vec<_>>())
    }
}

/// Per-coordinate counts used when a config does not set a resolution.
pub fn default_resolution(chart: &Chart) -> Vec<usize> {
    let (gl, trap) = match chart.dim() {
        0..=2 => (32, 64),
        3 => (24, 32),
        _ => (16, 16),
    };
    chart.periodic.iter().map(|&p| if p { trap } else { gl }).collect()
}

pub fn build_grid(m: &MetricField, resolution: &[usize]) -> Result<QuadGrid> {
    QuadGrid::new(m.chart(), resolution)
}

/// Pairwise sum with a fixed split, independent of how the values were produced.
pub fn tree_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    tree_sum(&values[..mid]) + tree_sum(&values[mid..])
}

/// `Σ w · f(cb(x)) · vol(x)` over the grid.
pub fn integrate_density<F>(m: &MetricField, f: F, grid: &QuadGrid, params: &Params) -> Result<f64>
where
    F: Fn(&CurvatureBundle) -> f64 + Sync,
{
    try_integrate_density(m, |cb| Ok(f(cb)), grid, params)
}

/// As [`integrate_density`] for densities that can fail.
pub fn try_integrate_density<F>(m: &MetricField, f: F, grid: &QuadGrid, params: &Params) -> Result<f64>
where
    F: Fn(&CurvatureBundle) -> Result<f64> + Sync,
{
    if grid.chart != *m.chart() {
        return Err(Error::Config(format!(
            "grid was built for chart `{}`, metric lives on `{}`",
            grid.chart.name,
            m.chart().name
        )));
    }
    let values: Vec<Result<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (x, w) = grid.node(i);
            match m.curvature_at(&x, params).and_then(|cb| Ok(w * f(&cb)? * cb.vol_density)) {
                Ok(v) => Ok(v),
                Err(e) => Err(Error::AtNode {
                    node: i,
                    point: x,
                    source: Box::new(e),
                }),
            }
        })
        .collect();
    let mut terms = Vec::with_capacity(values.len());
    for v in values {
        terms.push(v?);
    }
    Ok(tree_sum(&terms))
}

/// Several integrals in one sweep: `f(x)` returns `width` densities at a node
/// (volume factor included) and each column is weighted and tree-summed.
pub fn try_integrate_columns<F>(grid: &QuadGrid, width: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let values: Vec<Result<Vec<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (x, w) = grid.node(i);
            match f(&x) {
                Ok(v) if v.len() == width => Ok(v.into_iter().map(|d| w * d).collect()),
                Ok(v) => Err(Error::Config(format!("density returned {} columns, expected {width}", v.len()))),
                Err(e) => Err(Error::AtNode {
                    node: i,
                    point: x,
                    source: Box::new(e),
                }),
            }
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(values.len()); width];
    for v in values {
        for (c, d) in columns.iter_mut().zip(v?) {
            c.push(d);
        }
    }
    Ok(columns.iter().map(|c| tree_sum(c)).collect())
}

/// `∫ P_k Vol`.
pub fn pfaffian_action(m: &MetricField, k: usize, grid: &QuadGrid, params: &Params) -> Result<f64> {
    let spec = InvariantSpec::pfaffian(k);
    integrate_density(m, |cb| spec.evaluate(cb).scalar(), grid, params)
}

/// Riemannian (or pseudo-Riemannian) volume.
pub fn volume(m: &MetricField, grid: &QuadGrid, params: &Params) -> Result<f64> {
    integrate_density(m, |_| 1.0, grid, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderReport {
    pub k: usize,
    /// `∫_{X×S¹} P_k(g + dt²) Vol`
    pub cylinder_value: f64,
    /// `∫_X P_k(g) Vol`
    pub base_value: f64,
    pub rel_error: f64,
}

/// Compares the action over the cylinder with `2π` times the action over the base.
pub fn cylinder_integral_check(
    m: &MetricField,
    k: usize,
    base_resolution: &[usize],
    circle_resolution: usize,
) -> Result<CylinderReport> {
    if m.dim() != 2 * k {
        return Err(Error::InvalidParams(format!(
            "cylinder check needs dim = 2k, got dim {} and k = {k}",
            m.dim()
        )));
    }
    let cyl = m.cylinder_extend()?;
    let none = Params::new();
    let base_grid = build_grid(m, base_resolution)?;
    let mut cyl_res = base_grid.resolution();
    cyl_res.push(circle_resolution);
    let cyl_grid = build_grid(&cyl, &cyl_res)?;
    let cylinder_value = pfaffian_action(&cyl, k, &cyl_grid, &none)?;
    let base_value = pfaffian_action(m, k, &base_grid, &none)?;
    let right = 2.0 * std::f64::consts::PI * base_value;
    let denom = cylinder_value.abs().max(right.abs());
    let rel_error = if denom == 0.0 {
        0.0
    } else {
        (cylinder_value - right).abs() / denom
    };
    Ok(CylinderReport {
        k,
        cylinder_value,
        base_value,
        rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{catalog, flat_torus, round_sphere};
    use std::f64::consts::PI;

    #[test]
    fn legendre_rules_are_exact_for_polynomials() {
        for n in [2, 3, 7, 32, 64] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14, "n = {n}");
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((got - want).abs() < 1e-13, "n = {n}, degree {deg}");
            }
        }
    }

    #[test]
    fn grid_shapes_and_weights() {
        let t2 = flat_torus(2).unwrap();
        let g = build_grid(&t2, &[16]).unwrap();
        assert_eq!(g.len(), 256);
        let h = 2.0 * PI / 16.0;
        assert!(g.nodes().all(|(_, w)| (w - h * h).abs() < 1e-15));
        let s2 = round_sphere(2).unwrap();
        let g = build_grid(&s2, &[32, 64]).unwrap();
        assert!((g.weight_sum() - 2.0 * PI * PI).abs() < 1e-12 * 2.0 * PI * PI);
        let p = catalog("product(sphere2, flat_torus(1))", &Params::new()).unwrap();
        assert_eq!(build_grid(&p, &[4, 5, 6]).unwrap().len(), 120);
        assert!(build_grid(&s2, &[1, 8]).is_err());
        assert!(build_grid(&s2, &[4, 4, 4]).is_err());
    }

    #[test]
    fn sphere_area_and_euler_characteristic() {
        let s2 = round_sphere(2).unwrap();
        let g = build_grid(&s2, &[32, 64]).unwrap();
        let area = volume(&s2, &g, &Params::new()).unwrap();
        assert!((area - 4.0 * PI).abs() < 1e-10 * 4.0 * PI);
        let chi = pfaffian_action(&s2, 1, &g, &Params::new()).unwrap();
        assert!((chi - 2.0).abs() < 1e-8, "{chi}");
    }

    #[test]
    fn perturbed_torus_has_zero_action() {
        let t = catalog("perturbed_torus(2)", &Params::new()).unwrap();
        let g = build_grid(&t, &[64]).unwrap();
        let v = pfaffian_action(&t, 1, &g, &Params::new()).unwrap();
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn convergence_under_refinement() {
        let m = catalog("conformal_sphere2", &Params::from([("t".into(), 0.5)])).unwrap();
        let coarse = pfaffian_action(&m, 1, &build_grid(&m, &[16, 32]).unwrap(), &Params::new()).unwrap();
        let fine = pfaffian_action(&m, 1, &build_grid(&m, &[32, 64]).unwrap(), &Params::new()).unwrap();
        let (e1, e2) = ((coarse - 2.0).abs(), (fine - 2.0).abs());
        assert!(e2 <= 1e-2 * e1 || e2 < 1e-13, "{e1:e} -> {e2:e}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let m = catalog("perturbed_torus(3)", &Params::new()).unwrap();
        let g = build_grid(&m, &[12]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| pfaffian_action(&m, 1, &g, &Params::new()).unwrap())
        };
        let a = run(1);
        assert_eq!(a.to_bits(), run(3).to_bits());
        assert_eq!(a.to_bits(), run(8).to_bits());
    }

    #[test]
    fn node_errors_are_located() {
        let m = catalog("perturbed_torus(2)", &Params::from([("a".into(), 40.0)])).unwrap();
        let g = build_grid(&m, &[8]).unwrap();
        match pfaffian_action(&m, 1, &g, &Params::new()) {
            Err(Error::AtNode { node, source, .. }) => {
                assert!(source.is_numerical());
                assert!(node < 64);
            }
            other => panic!("expected a node error, got {other:?}"),
        }
    }

    #[test]
    fn cylinder_relation() {
        let s2 = round_sphere(2).unwrap();
        let r = cylinder_integral_check(&s2, 1, &[32, 64], 8).unwrap();
        assert!(r.rel_error < 1e-8);
        assert!((r.cylinder_value - 4.0 * PI).abs() < 1e-7);
        let big = s2.scaled(2.0).unwrap();
        let r = cylinder_integral_check(&big, 1, &[32, 64], 8).unwrap();
        assert!((r.cylinder_value - 4.0 * PI).abs() < 1e-7);
        let t = flat_torus(2).unwrap();
        let r = cylinder_integral_check(&t, 1, &[8], 4).unwrap();
        assert_eq!((r.cylinder_value, r.base_value, r.rel_error), (0.0, 0.0, 0.0));
        assert!(cylinder_integral_check(&s2, 2, &[8], 4).is_err());
    }
}
