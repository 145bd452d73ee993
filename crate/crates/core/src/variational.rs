//! First variations of curvature actions.
//!
//! The Euler–Lagrange tensor `E` of `S(g) = ∫ L(g) Vol_g` is defined by the
//! pairing `dS_g(h) = ∫ E^{ab} h_{ab} Vol_g`, where `h` varies the lower-index
//! metric. For `L = P_k` the expected tensor is `E = ½ N_k S_{2,k}`; at `k = 0`
//! this reduces to the first variation of the volume, `½ g`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{parse_str, CompiledExpr, ExprNode};
use crate::geometry::{CurvatureBundle, MetricField, Params};
use crate::invariants::InvariantSpec;
use crate::jet::Jet2;
use crate::quad::{pfaffian_action, try_integrate_columns, try_integrate_density, QuadGrid};
use crate::tensor::PointTensor;

/// Central-difference step sizes used when a config does not set them.
pub const DEFAULT_EPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// A symmetric variation `h` of the metric, as packed upper-triangle expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub components: Vec<ExprNode>,
    /// Amplitude parameter added to the metric, `g + param · h`.
    pub param: String,
}

impl Perturbation {
    pub fn zero(m: &MetricField) -> Self {
        let n = m.dim();
        Self {
            components: vec![ExprNode::constant(0.0); n * (n + 1) / 2],
            param: "eps".into(),
        }
    }

    /// From a full row-major matrix of sources; must be symmetric.
    pub fn from_sources(m: &MetricField, rows: &[String]) -> Result<Self> {
        let n = m.dim();
        if rows.len() != n * n {
            return Err(Error::Config(format!("perturbation needs {} components", n * n)));
        }
        let allowed = m.slot_names();
        let mut components = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let upper = parse_str(&rows[i * n + j])?;
                if parse_str(&rows[j * n + i])? != upper {
                    return Err(Error::Config(format!("perturbation component ({i},{j}) is not symmetric")));
                }
                upper.validate(&allowed)?;
                components.push(upper);
            }
        }
        Ok(Self {
            components,
            param: "eps".into(),
        })
    }

    /// A seeded smooth direction: low-order trigonometric polynomials on
    /// all-periodic charts; on the round-sphere chart of S², the pullback of a
    /// constant ambient symmetric tensor plus a polynomial conformal factor.
    pub fn random(m: &MetricField, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chart = m.chart();
        let n = chart.dim();
        let mut rows = vec![String::new(); n * n];
        if chart.is_all_periodic() {
            for i in 0..n {
                for j in i..n {
                    let mut terms = Vec::new();
                    for _ in 0..2 {
                        let c: f64 = rng.random_range(-0.5..0.5);
                        let phase: f64 = rng.random_range(0.0..2.0 * PI);
                        let mut arg = String::new();
                        for (l, name) in chart.coords.iter().enumerate() {
                            let f: i32 = rng.random_range(-2..=2);
                            if f != 0 || (arg.is_empty() && l + 1 == n) {
                                let f = if f == 0 { 1 } else { f };
                                arg.push_str(&format!("{f}*{name} + "));
                            }
                        }
                        terms.push(format!("{c:?}*cos({arg}{phase:?})"));
                    }
                    let src = if i == j {
                        let c0: f64 = rng.random_range(-0.5..0.5);
                        format!("{c0:?} + {}", terms.join(" + "))
                    } else {
                        terms.join(" + ")
                    };
                    rows[i * n + j] = src.clone();
                    rows[j * n + i] = src;
                }
            }
        } else if n == 2 && chart.coords == ["theta", "phi"] && chart.name == "S2" {
            let (th, ph) = ("theta", "phi");
            let dx = [
                [format!("cos({th})*cos({ph})"), format!("cos({th})*sin({ph})"), format!("(-sin({th}))")],
                [format!("(-sin({th})*sin({ph}))"), format!("sin({th})*cos({ph})"), "0".to_string()],
            ];
            let x = [
                format!("sin({th})*cos({ph})"),
                format!("sin({th})*sin({ph})"),
                format!("cos({th})"),
            ];
            let mut a = [[0.0f64; 3]; 3];
            for p in 0..3 {
                for q in p..3 {
                    a[p][q] = rng.random_range(-0.5..0.5);
                    a[q][p] = a[p][q];
                }
            }
            let mut conformal = format!("{:?}", rng.random_range(-0.5..0.5));
            for xi in &x {
                conformal.push_str(&format!(" + {:?}*{xi}", rng.random_range(-0.5..0.5)));
            }
            conformal.push_str(&format!(" + {:?}*{}*{}", rng.random_range(-0.5..0.5), x[0], x[2]));
            let round = ["1".to_string(), format!("sin({th})^2")];
            for i in 0..2 {
                for j in i..2 {
                    let mut terms = Vec::new();
                    for p in 0..3 {
                        for q in 0..3 {
                            if dx[i][p] != "0" && dx[j][q] != "0" {
                                terms.push(format!("{:?}*{}*{}", a[p][q], dx[i][p], dx[j][q]));
                            }
                        }
                    }
                    if i == j {
                        terms.push(format!("({conformal})*{}", round[i]));
                    }
                    let src = terms.join(" + ");
                    rows[i * n + j] = src.clone();
                    rows[j * n + i] = src;
                }
            }
        } else {
            return Err(Error::InvalidParams(format!(
                "no random perturbations for chart `{}`; supply expressions instead",
                chart.name
            )));
        }
        Self::from_sources(m, &rows)
    }

    /// The one-parameter family `g + param · h`.
    pub fn apply(&self, m: &MetricField) -> Result<MetricField> {
        m.plus_scaled_field(&self.components, &self.param)
    }

    fn compile(&self, m: &MetricField) -> Result<Vec<CompiledExpr>> {
        let names = m.slot_names();
        Ok(self
            .components
            .iter()
            .map(|c| c.compile(&names))
            .collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// Value at zero of the polynomial in `ε²` through the given points (Neville).
pub fn richardson_extrapolate(table: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = table.iter().map(|(e, _)| e * e).collect();
    let mut p: Vec<f64> = table.iter().map(|(_, v)| *v).collect();
    let n = p.len();
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p.first().copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateauxResult {
    pub value: f64,
    /// (ε, central difference at ε)
    pub table: Vec<(f64, f64)>,
}

/// `S^{ab} h_{ab} = g^{ac} S_{cd} g^{db} h_{ab}` for a covariant `S`.
fn contract_raised(cb: &CurvatureBundle, s: &PointTensor, hv: &[f64]) -> f64 {
    let n = cb.g.dim();
    let gi = cb.g_inv.data();
    let mut acc = 0.0;
    for a in 0..n {
        for c in 0..n {
            let gac = gi[a * n + c];
            if gac == 0.0 {
                continue;
            }
            for d in 0..n {
                let scd = s.get2(c, d);
                if scd == 0.0 {
                    continue;
                }
                for b in 0..n {
                    acc += gac * scd * gi[d * n + b] * hv[a * n + b];
                }
            }
        }
    }
    acc
}

/// Central differences of the action at each `ε` and, optionally, the pairing
/// `∫ N_k S^{ab} h_ab Vol`, all from one sweep over the grid.
///
/// The jets of `g` and `h` are evaluated once per node and combined as
/// `g + ε h`, which is exactly what evaluating the perturbed metric gives.
fn variation_sweep(
    m: &MetricField,
    h: &Perturbation,
    k: usize,
    grid: &QuadGrid,
    eps: &[f64],
    with_pairing: bool,
) -> Result<(Vec<(f64, f64)>, Option<f64>)> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eps list must be non-empty and positive".into()));
    }
    if grid.chart != *m.chart() {
        return Err(Error::Config(format!(
            "grid was built for chart `{}`, metric lives on `{}`",
            grid.chart.name,
            m.chart().name
        )));
    }
    let comps = h.compile(m)?;
    let pf = InvariantSpec::pfaffian(k);
    let lv = InvariantSpec::lovelock(k);
    let none = Params::new();
    let n = m.dim();
    let sig = Some(m.signature());
    let steps: Vec<f64> = eps.iter().flat_map(|&e| [e, -e]).collect();
    let width = steps.len() + usize::from(with_pairing);
    let sums = try_integrate_columns(grid, width, |x| {
        let gj = m.metric_jets(x, &none)?;
        let hj = m.field_jets(&comps, x, &none)?;
        let mut out = Vec::with_capacity(width);
        for &e in &steps {
            let jets: Vec<Jet2> = gj.iter().zip(&hj).map(|(g, h)| g.try_add(&h.scale(e))).collect::<std::result::Result<_, _>>()?;
            let cb = CurvatureBundle::from_jets(x, &jets, n, sig).map_err(|source| Error::Perturbed {
                eps: e,
                source: Box::new(source),
            })?;
            out.push(pf.evaluate(&cb).scalar() * cb.vol_density);
        }
        if with_pairing {
            let cb = CurvatureBundle::from_jets(x, &gj, n, sig)?;
            let mut hv = vec![0.0; n * n];
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    hv[i * n + j] = hj[idx].value();
                    hv[j * n + i] = hj[idx].value();
                    idx += 1;
                }
            }
            out.push(contract_raised(&cb, &lv.evaluate(&cb).value, &hv) * cb.vol_density);
        }
        Ok(out)
    })?;
    let table = eps
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, (sums[2 * i] - sums[2 * i + 1]) / (2.0 * e)))
        .collect();
    Ok((table, with_pairing.then(|| sums[width - 1])))
}

/// Directional derivative of `∫ P_k Vol` along `h`, by extrapolated central differences.
pub fn gateaux_derivative(
    m: &MetricField,
    h: &Perturbation,
    k: usize,
    grid: &QuadGrid,
    eps: &[f64],
) -> Result<GateauxResult> {
    let (table, _) = variation_sweep(m, h, k, grid, eps, false)?;
    Ok(GateauxResult {
        value: richardson_extrapolate(&table),
        table,
    })
}

/// `∫ N_k (S_{2,k})^{ab} h_{ab} Vol`, without the factor ½.
pub fn lovelock_pairing(m: &MetricField, h: &Perturbation, k: usize, grid: &QuadGrid) -> Result<f64> {
    let comps = h.compile(m)?;
    let spec = InvariantSpec::lovelock(k);
    let none = Params::new();
    let n = m.dim();
    try_integrate_density(
        m,
        |cb| {
            let slots = m.slot_values(&cb.point, &none)?;
            let mut hv = vec![0.0; n * n];
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    let v = comps[idx].eval_real(&slots).map_err(|source| Error::Evaluation {
                        point: cb.point.clone(),
                        source,
                    })?;
                    hv[i * n + j] = v;
                    hv[j * n + i] = v;
                    idx += 1;
                }
            }
            Ok(contract_raised(cb, &spec.evaluate(cb).value, &hv))
        },
        grid,
        &none,
    )
}

/// `∫ E^{ab} h_{ab} Vol` with `E = ½ N_k S_{2,k}`.
pub fn el_pairing(m: &MetricField, h: &Perturbation, k: usize, grid: &QuadGrid) -> Result<f64> {
    Ok(0.5 * lovelock_pairing(m, h, k, grid)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ELReport {
    pub k: usize,
    pub metric: String,
    pub fd_value: f64,
    pub pairing_value: f64,
    pub rel_error: f64,
    pub table: Vec<(f64, f64)>,
    /// `fd / ∫ N_k S^{ab} h_ab Vol`; ½ when the identity holds.
    pub measured_constant: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-14)
}

/// Compares the finite-difference derivative with the Euler–Lagrange pairing.
pub fn el_check(
    m: &MetricField,
    h: &Perturbation,
    k: usize,
    grid: &QuadGrid,
    eps: &[f64],
    tolerance: f64,
) -> Result<ELReport> {
    let (table, full) = variation_sweep(m, h, k, grid, eps, true)?;
    let full = full.expect("pairing requested");
    let fd = GateauxResult {
        value: richardson_extrapolate(&table),
        table,
    };
    let pairing = 0.5 * full;
    let rel_error = relative_error(fd.value, pairing);
    Ok(ELReport {
        k,
        metric: m.name().to_string(),
        fd_value: fd.value,
        pairing_value: pairing,
        rel_error,
        table: fd.table,
        measured_constant: (full.abs() > 1e-14).then(|| fd.value / full),
        tolerance,
        pass: rel_error < tolerance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub lambda: f64,
    pub ratio: f64,
    pub expected: f64,
    pub rel_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightReport {
    pub n: usize,
    pub k: usize,
    pub base_value: f64,
    pub entries: Vec<WeightEntry>,
    /// `n = 2k`: the only case where the action is scale invariant.
    pub scale_invariant: bool,
}

impl WeightReport {
    pub fn max_deviation(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_deviation).fold(0.0, f64::max)
    }
}

/// `S(λ² g) = λ^{n−2k} S(g)` for the action of `P_k`.
pub fn weight_forcing_check(m: &MetricField, k: usize, grid: &QuadGrid, lambdas: &[f64]) -> Result<WeightReport> {
    let none = Params::new();
    let base = pfaffian_action(m, k, grid, &none)?;
    let n = m.dim();
    let mut entries = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let scaled = m.scaled(lambda)?;
        let value = pfaffian_action(&scaled, k, grid, &none)?;
        let expected = lambda.powi(n as i32 - 2 * k as i32);
        let ratio = value / base;
        entries.push(WeightEntry {
            lambda,
            ratio,
            expected,
            rel_deviation: relative_error(ratio, expected),
        });
    }
    Ok(WeightReport {
        n,
        k,
        base_value: base,
        entries,
        scale_invariant: n == 2 * k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: Params,
    pub value: Option<f64>,
    /// Why a member was left out (degenerate metric, evaluation failure).
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub param_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(|r| r.value)
    }

    /// max − min over the included members.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if lo > hi {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().map(f64::abs).fold(0.0, f64::max)
    }
}

/// Action of `P_k` over each member of a parameter family. Members whose
/// metric fails numerically are kept in the table with the reason.
pub fn family_sweep(m: &MetricField, k: usize, grid: &QuadGrid, samples: &[Params]) -> Result<SweepTable> {
    let mut names: Vec<String> = m.family_params().to_vec();
    for s in samples {
        for key in s.keys() {
            if !names.contains(key) {
                names.push(key.clone());
            }
        }
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        match pfaffian_action(m, k, grid, s) {
            Ok(v) => rows.push(SweepRow {
                params: s.clone(),
                value: Some(v),
                excluded: None,
            }),
            Err(e) if e.is_numerical() => rows.push(SweepRow {
                params: s.clone(),
                value: None,
                excluded: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(SweepTable { param_names: names, rows })
}
