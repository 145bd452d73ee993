//! Charts, the metric catalog and the pointwise curvature pipeline.
//!
//! Every catalog manifold is modelled by a single chart whose complement has
//! measure zero (sphere poles, the seam of a periodic coordinate). Integrands
//! are globally smooth, so integrating over that one chart is exact.
//!
//! Sign convention: `R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce} Γ^e_{db} − Γ^a_{de} Γ^e_{cb}`,
//! `R_{bd} = R^a_{bad}`, so the unit round sphere has positive scalar curvature.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{parse_str, tokenize, BinaryOp, CompiledExpr, ExprNode, TokenKind};
use crate::jet::{Jet2, MAX_VARS};
use crate::tensor::{self, PointTensor, SymmetryTag, TensorError, Variance};

/// Named parameter values. Ordered so that evaluation slots are deterministic.
pub type Params = BTreeMap<String, f64>;

/// Metrics whose |det g| relative to the product of diagonal magnitudes falls
/// below this are reported as singular.
pub const NONDEGENERACY_TOL: f64 = 1e-10;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub name: String,
    pub coords: Vec<String>,
    pub domain: Vec<(f64, f64)>,
    pub periodic: Vec<bool>,
    /// Which boundary sets of the chart are ignored (they have measure zero).
    pub measure_note: String,
}

impl Chart {
    pub fn new(
        name: impl Into<String>,
        coords: Vec<String>,
        domain: Vec<(f64, f64)>,
        periodic: Vec<bool>,
        measure_note: impl Into<String>,
    ) -> Result<Self> {
        if coords.len() != domain.len() || coords.len() != periodic.len() || coords.is_empty() {
            return Err(Error::Config("chart fields disagree on dimension".into()));
        }
        if coords.len() > MAX_VARS {
            return Err(Error::Config(format!("charts have at most {MAX_VARS} coordinates")));
        }
        for (i, &(lo, hi)) in domain.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty interval for `{}`", coords[i])));
            }
            if periodic[i] && ((hi - lo) - TWO_PI).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "periodic coordinate `{}` must span a full period of 2π",
                    coords[i]
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            coords,
            domain,
            periodic,
            measure_note: measure_note.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Periodic coordinates accept any value; the others must lie in the open interval.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &v)| {
                let (lo, hi) = self.domain[i];
                v.is_finite() && (self.periodic[i] || (lo < v && v < hi))
            })
    }

    pub fn volume(&self) -> f64 {
        self.domain.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Seeded random points. Non-periodic coordinates keep `margin` (a
    /// fraction of the interval) away from the chart boundary.
    pub fn random_points(&self, count: usize, seed: u64, margin: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (0..self.dim())
                    .map(|i| {
                        let (lo, hi) = self.domain[i];
                        let pad = if self.periodic[i] { 0.0 } else { margin * (hi - lo) };
                        rng.random_range(lo + pad..hi - pad)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn is_all_periodic(&self) -> bool {
        self.periodic.iter().all(|&p| p)
    }
}

/// A metric on one chart, its components given as expressions.
#[derive(Debug, Clone)]
pub struct MetricField {
    name: String,
    chart: Chart,
    /// Packed upper triangle, row by row; g_ij and g_ji share one node.
    components: Vec<ExprNode>,
    params: Params,
    signature: (usize, usize),
    expected_chi: Option<i64>,
    family_params: Vec<String>,
    compiled: Vec<CompiledExpr>,
}

#[inline]
fn packed(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * n + 1 - i) / 2 + (j - i)
}

impl MetricField {
    pub fn new(
        name: impl Into<String>,
        chart: Chart,
        components: Vec<ExprNode>,
        params: Params,
        signature: (usize, usize),
        expected_chi: Option<i64>,
        family_params: Vec<String>,
    ) -> Result<Self> {
        let n = chart.dim();
        if components.len() != n * (n + 1) / 2 {
            return Err(Error::Config(format!(
                "expected {} packed components for dimension {n}, got {}",
                n * (n + 1) / 2,
                components.len()
            )));
        }
        if signature.0 + signature.1 != n {
            return Err(Error::Config(format!("signature {signature:?} does not sum to {n}")));
        }
        for p in params.keys() {
            if chart.coords.contains(p) {
                return Err(Error::Config(format!("parameter `{p}` shadows a coordinate")));
            }
        }
        if let Some(f) = family_params.iter().find(|f| !params.contains_key(*f)) {
            return Err(Error::Config(format!("family parameter `{f}` is not declared")));
        }
        let names = Self::slot_names_of(&chart, &params);
        let compiled = components
            .iter()
            .map(|c| c.compile(&names))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            name: name.into(),
            chart,
            components,
            params,
            signature,
            expected_chi,
            family_params,
            compiled,
        })
    }

    /// Build from a full row-major matrix of expression sources; the lower
    /// triangle must repeat the upper one.
    pub fn from_sources(
        name: impl Into<String>,
        chart: Chart,
        rows: &[&str],
        params: Params,
        signature: (usize, usize),
        expected_chi: Option<i64>,
        family_params: Vec<String>,
    ) -> Result<Self> {
        let n = chart.dim();
        if rows.len() != n * n {
            return Err(Error::Config(format!("expected {} component sources", n * n)));
        }
        let mut comps = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let upper = parse_str(rows[i * n + j])?;
                let lower = parse_str(rows[j * n + i])?;
                if upper != lower {
                    return Err(Error::Config(format!("component ({i},{j}) is not symmetric")));
                }
                comps.push(upper);
            }
        }
        Self::new(name, chart, comps, params, signature, expected_chi, family_params)
    }

    fn slot_names_of(chart: &Chart, params: &Params) -> Vec<String> {
        chart.coords.iter().cloned().chain(params.keys().cloned()).collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn component(&self, i: usize, j: usize) -> &ExprNode {
        &self.components[packed(self.dim(), i, j)]
    }

    pub fn packed_components(&self) -> &[ExprNode] {
        &self.components
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    pub fn expected_chi(&self) -> Option<i64> {
        self.expected_chi
    }

    pub fn family_params(&self) -> &[String] {
        &self.family_params
    }

    /// Value of `∫ P_k Vol` predicted by the Gauss–Bonnet–Chern theorem, when it applies.
    pub fn expected_pfaffian_integral(&self, k: usize) -> Option<f64> {
        if self.dim() != 2 * k {
            return None;
        }
        let chi = self.expected_chi? as f64;
        let n_minus = self.signature.1;
        Some(if n_minus % 2 == 1 {
            0.0
        } else if (n_minus / 2) % 2 == 0 {
            chi
        } else {
            -chi
        })
    }

    /// Same metric with different parameter defaults. Unknown names are rejected.
    pub fn with_params(&self, overrides: &Params) -> Result<Self> {
        let mut out = self.clone();
        for (k, v) in overrides {
            match out.params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::InvalidParams(format!(
                        "`{k}` is not a parameter of {}",
                        self.name
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Names bound when compiling expressions against this metric: coordinates, then parameters.
    pub fn slot_names(&self) -> Vec<String> {
        Self::slot_names_of(&self.chart, &self.params)
    }

    /// Values for [`MetricField::slot_names`] at a point.
    pub fn slot_values(&self, x: &[f64], params: &Params) -> Result<Vec<f64>> {
        let mut slots = x.to_vec();
        slots.extend(self.param_values(params)?);
        Ok(slots)
    }

    fn param_values(&self, overrides: &Params) -> Result<Vec<f64>> {
        if let Some(k) = overrides.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(Error::InvalidParams(format!("`{k}` is not a parameter of {}", self.name)));
        }
        Ok(self
            .params
            .iter()
            .map(|(k, v)| overrides.get(k).copied().unwrap_or(*v))
            .collect())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if self.chart.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { point: x.to_vec() })
        }
    }

    /// Plain component values at a point.
    pub fn metric_at(&self, x: &[f64], params: &Params) -> Result<PointTensor> {
        self.check_point(x)?;
        let n = self.dim();
        let slots = self.slot_values(x, params)?;
        let mut g = PointTensor::zeros(n, vec![Variance::Lower; 2]);
        for i in 0..n {
            for j in i..n {
                let v = self.compiled[packed(n, i, j)]
                    .eval_real(&slots)
                    .map_err(|source| Error::Evaluation {
                        point: x.to_vec(),
                        source,
                    })?;
                g.set(&[i, j], v);
                g.set(&[j, i], v);
            }
        }
        Ok(g)
    }

    /// Jets of the packed components at a point.
    pub fn metric_jets(&self, x: &[f64], params: &Params) -> Result<Vec<Jet2>> {
        self.field_jets(&self.compiled, x, params)
    }

    /// Jets of expressions compiled against [`slot_names`](Self::slot_names).
    pub fn field_jets(&self, exprs: &[CompiledExpr], x: &[f64], params: &Params) -> Result<Vec<Jet2>> {
        self.check_point(x)?;
        let n = self.dim();
        let mut slots = Vec::with_capacity(n + self.params.len());
        for (i, &xi) in x.iter().enumerate() {
            slots.push(Jet2::var(i, xi, n)?);
        }
        for v in self.param_values(params)? {
            slots.push(Jet2::constant(v, n)?);
        }
        exprs
            .iter()
            .map(|c| {
                if c.is_constant_zero() {
                    Ok(Jet2::constant(0.0, n)?)
                } else {
                    c.eval_jet(&slots).map_err(|source| Error::Evaluation {
                        point: x.to_vec(),
                        source,
                    })
                }
            })
            .collect()
    }

    pub fn curvature_at(&self, x: &[f64], params: &Params) -> Result<CurvatureBundle> {
        let jets = self.metric_jets(x, params)?;
        CurvatureBundle::from_jets(x, &jets, self.dim(), Some(self.signature))
    }

    fn map_components(&self, f: impl Fn(&ExprNode) -> ExprNode) -> Vec<ExprNode> {
        self.components
            .iter()
            .map(|c| if c.is_zero() { c.clone() } else { f(c) })
            .collect()
    }

    /// `λ² g`; weight bookkeeping uses `λ`, not `λ²`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("scale factor must be positive, got {lambda}")));
        }
        let factor = lambda * lambda;
        let comps = self.map_components(|c| {
            ExprNode::binary(BinaryOp::Mul, ExprNode::constant(factor), c.clone())
        });
        Self::new(
            format!("scaled({}, {lambda:?})", self.name),
            self.chart.clone(),
            comps,
            self.params.clone(),
            self.signature,
            self.expected_chi,
            self.family_params.clone(),
        )
    }

    /// `-g`, swapping the signature.
    pub fn sign_flipped(&self) -> Result<Self> {
        let comps = self.map_components(|c| ExprNode::neg(c.clone()));
        Self::new(
            format!("sign_flip({})", self.name),
            self.chart.clone(),
            comps,
            self.params.clone(),
            (self.signature.1, self.signature.0),
            self.expected_chi,
            self.family_params.clone(),
        )
    }

    /// Block-diagonal metric on the product chart. Clashing names in the
    /// second factor get a numeric suffix.
    pub fn product(a: &Self, b: &Self) -> Result<Self> {
        let mut taken: Vec<String> = a.chart.coords.iter().chain(a.params.keys()).cloned().collect();
        let mut renames = HashMap::new();
        for name in b.chart.coords.iter().chain(b.params.keys()) {
            let fresh = fresh_name(name, &taken);
            taken.push(fresh.clone());
            if &fresh != name {
                renames.insert(name.clone(), fresh);
            }
        }
        let rn = |s: &String| renames.get(s).cloned().unwrap_or_else(|| s.clone());
        let (na, nb) = (a.dim(), b.dim());
        let n = na + nb;
        let mut comps = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                comps.push(if i < na && j < na {
                    a.component(i, j).clone()
                } else if i >= na && j >= na {
                    b.component(i - na, j - na).rename(&renames)
                } else {
                    ExprNode::constant(0.0)
                });
            }
        }
        let chart = Chart::new(
            format!("{}×{}", a.chart.name, b.chart.name),
            a.chart.coords.iter().cloned().chain(b.chart.coords.iter().map(rn)).collect(),
            a.chart.domain.iter().chain(&b.chart.domain).copied().collect(),
            a.chart.periodic.iter().chain(&b.chart.periodic).copied().collect(),
            format!("{}; {}", a.chart.measure_note, b.chart.measure_note),
        )?;
        let mut params = a.params.clone();
        params.extend(b.params.iter().map(|(k, v)| (rn(k), *v)));
        let family = a
            .family_params
            .iter()
            .cloned()
            .chain(b.family_params.iter().map(rn))
            .collect();
        let chi = match (a.expected_chi, b.expected_chi) {
            (Some(x), Some(y)) => Some(x * y),
            _ => None,
        };
        Self::new(
            format!("product({}, {})", a.name, b.name),
            chart,
            comps,
            params,
            (a.signature.0 + b.signature.0, a.signature.1 + b.signature.1),
            chi,
            family,
        )
    }

    /// `g + dt²` on chart × periodic t ∈ (0, 2π).
    pub fn cylinder_extend(&self) -> Result<Self> {
        let taken: Vec<String> = self.chart.coords.iter().chain(self.params.keys()).cloned().collect();
        let t = fresh_name("t", &taken);
        let circle = Self::new(
            "circle",
            Chart::new("S1", vec![t], vec![(0.0, TWO_PI)], vec![true], "seam t = 0")?,
            vec![ExprNode::constant(1.0)],
            Params::new(),
            (1, 0),
            Some(0),
            vec![],
        )?;
        let mut out = Self::product(self, &circle)?;
        out.name = format!("cylinder({})", self.name);
        out.expected_chi = Some(0);
        Ok(out)
    }

    /// Adds `param * field_ij` to every component; `param` defaults to 0.
    pub fn plus_scaled_field(&self, field: &[ExprNode], param: &str) -> Result<Self> {
        if field.len() != self.components.len() {
            return Err(Error::Config("perturbation field has the wrong number of components".into()));
        }
        if self.params.contains_key(param) || self.chart.coords.iter().any(|c| c == param) {
            return Err(Error::Config(format!("name `{param}` is already in use")));
        }
        let comps = self
            .components
            .iter()
            .zip(field)
            .map(|(g, h)| {
                if h.is_zero() {
                    g.clone()
                } else {
                    ExprNode::binary(
                        BinaryOp::Add,
                        g.clone(),
                        ExprNode::binary(BinaryOp::Mul, ExprNode::variable(param), h.clone()),
                    )
                }
            })
            .collect();
        let mut params = self.params.clone();
        params.insert(param.to_string(), 0.0);
        Self::new(
            self.name.clone(),
            self.chart.clone(),
            comps,
            params,
            self.signature,
            self.expected_chi,
            self.family_params.clone(),
        )
    }
}

fn fresh_name(base: &str, taken: &[String]) -> String {
    if !taken.iter().any(|t| t == base) {
        return base.to_string();
    }
    (2..)
        .map(|i| format!("{base}_{i}"))
        .find(|c| !taken.contains(c))
        .expect("unbounded")
}

/// Everything the invariants need at one point.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub point: Vec<f64>,
    pub g: PointTensor,
    pub g_inv: PointTensor,
    /// Γ^a_{bc}
    pub gamma: PointTensor,
    /// R_{abcd}
    pub riem_low: PointTensor,
    /// R^{ab}_{cd}, the second slot raised from R^a_{bcd}
    pub riem_mixed: PointTensor,
    pub ricci: PointTensor,
    pub scalar: f64,
    pub det: f64,
    /// √|det g|
    pub vol_density: f64,
}

impl CurvatureBundle {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// Curvature from the jets of the packed metric components.
    pub fn from_jets(
        point: &[f64],
        jets: &[Jet2],
        n: usize,
        expected_signature: Option<(usize, usize)>,
    ) -> Result<Self> {
        let mut g = vec![0.0; n * n];
        let mut dg = vec![0.0; n * n * n]; // [e][i][j]
        let mut ddg = vec![0.0; n * n * n * n]; // [e][f][i][j]
        for i in 0..n {
            for j in i..n {
                let jet = &jets[packed(n, i, j)];
                for (a, b) in [(i, j), (j, i)] {
                    g[a * n + b] = jet.value();
                    for e in 0..n {
                        dg[(e * n + a) * n + b] = jet.grad()[e];
                        for f in 0..n {
                            ddg[((e * n + f) * n + a) * n + b] = jet.hess(e, f);
                        }
                    }
                }
            }
        }
        let g = PointTensor::new(n, vec![Variance::Lower; 2], g)?;
        let det = tensor::determinant(&g);
        let diag: f64 = (0..n).map(|i| g.get2(i, i).abs()).product();
        let scale = if diag > 0.0 { diag } else { g.max_abs().powi(n as i32) };
        if det == 0.0 || !det.is_finite() || det.abs() <= NONDEGENERACY_TOL * scale {
            return Err(Error::SingularMetric {
                point: point.to_vec(),
                det,
            });
        }
        let g_inv = tensor::inverse(&g).map_err(|e| match e {
            TensorError::DegenerateMetric { det, .. } => Error::SingularMetric {
                point: point.to_vec(),
                det,
            },
            other => other.into(),
        })?;
        if let Some(expected) = expected_signature {
            let found = signature_of(&g);
            if found != expected {
                return Err(Error::SignatureMismatch {
                    point: point.to_vec(),
                    expected,
                    found,
                });
            }
        }
        let gi = g_inv.data();

        // Christoffel symbols of the first kind and their derivatives, symmetric in (b, c).
        let mut gamma_low = vec![0.0; n * n * n]; // [d][b][c]
        let mut dgamma_low = vec![0.0; n * n * n * n]; // [e][d][b][c]
        for d in 0..n {
            for b in 0..n {
                for c in b..n {
                    let v = 0.5 * (dg[(b * n + d) * n + c] + dg[(c * n + b) * n + d] - dg[(d * n + b) * n + c]);
                    gamma_low[(d * n + b) * n + c] = v;
                    gamma_low[(d * n + c) * n + b] = v;
                    for e in 0..n {
                        let v = 0.5
                            * (ddg[((e * n + b) * n + d) * n + c] + ddg[((e * n + c) * n + b) * n + d]
                                - ddg[((e * n + d) * n + b) * n + c]);
                        dgamma_low[((e * n + d) * n + b) * n + c] = v;
                        dgamma_low[((e * n + d) * n + c) * n + b] = v;
                    }
                }
            }
        }
        // ∂_e g^{ad} = -g^{ap} ∂_e g_{pq} g^{qd}, formed as two matrix products
        let mut dginv = vec![0.0; n * n * n]; // [e][a][d]
        let mut tmp = vec![0.0; n * n];
        for e in 0..n {
            let dge = &dg[e * n * n..(e + 1) * n * n];
            for p in 0..n {
                for d in 0..n {
                    tmp[p * n + d] = (0..n).map(|q| dge[p * n + q] * gi[q * n + d]).sum();
                }
            }
            for a in 0..n {
                for d in a..n {
                    let v: f64 = -(0..n).map(|p| gi[a * n + p] * tmp[p * n + d]).sum::<f64>();
                    dginv[(e * n + a) * n + d] = v;
                    dginv[(e * n + d) * n + a] = v;
                }
            }
        }
        let mut gamma = vec![0.0; n * n * n]; // [a][b][c]
        let mut dgamma = vec![0.0; n * n * n * n]; // [e][a][b][c]
        for a in 0..n {
            for b in 0..n {
                for c in b..n {
                    let mut acc = 0.0;
                    for d in 0..n {
                        acc += gi[a * n + d] * gamma_low[(d * n + b) * n + c];
                    }
                    gamma[(a * n + b) * n + c] = acc;
                    gamma[(a * n + c) * n + b] = acc;
                    for e in 0..n {
                        let mut acc = 0.0;
                        for d in 0..n {
                            acc += dginv[(e * n + a) * n + d] * gamma_low[(d * n + b) * n + c]
                                + gi[a * n + d] * dgamma_low[((e * n + d) * n + b) * n + c];
                        }
                        dgamma[((e * n + a) * n + b) * n + c] = acc;
                        dgamma[((e * n + a) * n + c) * n + b] = acc;
                    }
                }
            }
        }
        let gam = |a: usize, b: usize, c: usize| gamma[(a * n + b) * n + c];
        let dgam = |e: usize, a: usize, b: usize, c: usize| dgamma[((e * n + a) * n + b) * n + c];

        // R^a_{bcd}, antisymmetric in (c, d)
        let mut riem_up = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in c + 1..n {
                        let mut v = dgam(c, a, d, b) - dgam(d, a, c, b);
                        for e in 0..n {
                            v += gam(a, c, e) * gam(e, d, b) - gam(a, d, e) * gam(e, c, b);
                        }
                        riem_up[((a * n + b) * n + c) * n + d] = v;
                        riem_up[((a * n + b) * n + d) * n + c] = -v;
                    }
                }
            }
        }
        // R_{abcd} = g_{ae} R^e_{bcd} and R^{ab}_{cd} = g^{be} R^a_{ecd}
        let n2 = n * n;
        let gd = g.data();
        let mut low = vec![0.0; n2 * n2];
        let mut mixed = vec![0.0; n2 * n2];
        for a in 0..n {
            for b in 0..n {
                let out = (a * n + b) * n2;
                for e in 0..n {
                    let (ga, gb) = (gd[a * n + e], gi[b * n + e]);
                    let from_eb = (e * n + b) * n2;
                    let from_ae = (a * n + e) * n2;
                    for cd in 0..n2 {
                        low[out + cd] += ga * riem_up[from_eb + cd];
                        mixed[out + cd] += gb * riem_up[from_ae + cd];
                    }
                }
            }
        }
        let riem_low = PointTensor::new(n, vec![Variance::Lower; 4], low)?.with_tag(SymmetryTag::AlgebraicCurvature);
        let riem_mixed = PointTensor::new(
            n,
            vec![Variance::Upper, Variance::Upper, Variance::Lower, Variance::Lower],
            mixed,
        )?;
        let mut ric = vec![0.0; n2];
        for b in 0..n {
            for d in 0..n {
                ric[b * n + d] = (0..n).map(|a| riem_up[((a * n + b) * n + a) * n + d]).sum();
            }
        }
        let ricci = PointTensor::new(n, vec![Variance::Lower; 2], ric)?;
        let mut scalar = 0.0;
        for b in 0..n {
            for d in 0..n {
                scalar += gi[b * n + d] * ricci.get2(b, d);
            }
        }
        let gamma = PointTensor::new(n, vec![Variance::Upper, Variance::Lower, Variance::Lower], gamma)?;
        Ok(Self {
            point: point.to_vec(),
            vol_density: det.abs().sqrt(),
            g,
            g_inv,
            gamma,
            riem_low,
            riem_mixed,
            ricci,
            scalar,
            det,
        })
    }
}

/// (positive, negative) eigenvalue counts of a symmetric 2-tensor.
pub fn signature_of(g: &PointTensor) -> (usize, usize) {
    let eig = SymmetricEigen::new(g.as_matrix()).eigenvalues;
    let pos = eig.iter().filter(|&&v| v > 0.0).count();
    let neg = eig.iter().filter(|&&v| v < 0.0).count();
    (pos, neg)
}

/// Pull back a covariant tensor on the cylinder to the equator `t = 0` of its base.
pub fn restrict_equator(t_ext: &PointTensor, base: &MetricField) -> Result<PointTensor> {
    if !t_ext.is_covariant() {
        return Err(TensorError::NotCovariant.into());
    }
    let n = base.dim();
    if t_ext.rank() == 0 {
        return Ok(t_ext.clone());
    }
    if t_ext.dim() != n + 1 {
        return Err(TensorError::Dimension(format!(
            "cylinder tensor has dim {}, base has {n}",
            t_ext.dim()
        ))
        .into());
    }
    Ok(PointTensor::from_fn(n, t_ext.variance().to_vec(), |ix| t_ext.get(ix)))
}

// ---------------------------------------------------------------------------
// Catalog

fn sphere_chart(coords: &[&str]) -> Result<Chart> {
    let n = coords.len();
    let mut domain = vec![(0.0, PI); n - 1];
    domain.push((0.0, TWO_PI));
    let mut periodic = vec![false; n - 1];
    periodic.push(true);
    Chart::new(
        format!("S{n}"),
        coords.iter().map(|s| s.to_string()).collect(),
        domain,
        periodic,
        "polar angles at 0 or π and the seam of the azimuth are excluded",
    )
}

fn diagonal_sources(diag: &[String]) -> Vec<String> {
    let n = diag.len();
    let mut rows = vec!["0".to_string(); n * n];
    for (i, d) in diag.iter().enumerate() {
        rows[i * n + i] = d.clone();
    }
    rows
}

fn build(
    name: &str,
    chart: Chart,
    rows: Vec<String>,
    params: Params,
    signature: (usize, usize),
    chi: Option<i64>,
    family: Vec<String>,
) -> Result<MetricField> {
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    MetricField::from_sources(name, chart, &refs, params, signature, chi, family)
}

/// Round unit sphere in nested polar coordinates.
pub fn round_sphere(n: usize) -> Result<MetricField> {
    let coords: &[&str] = match n {
        2 => &["theta", "phi"],
        3 => &["psi", "theta", "phi"],
        4 => &["chi", "psi", "theta", "phi"],
        _ => return Err(Error::InvalidParams(format!("no sphere{n} in the catalog"))),
    };
    let mut diag = vec!["1".to_string()];
    let mut factor = String::new();
    for c in &coords[..n - 1] {
        if !factor.is_empty() {
            factor.push('*');
        }
        write!(factor, "sin({c})^2").unwrap();
        diag.push(factor.clone());
    }
    let chi = if n % 2 == 0 { 2 } else { 0 };
    build(
        &format!("sphere{n}"),
        sphere_chart(coords)?,
        diagonal_sources(&diag),
        Params::new(),
        (n, 0),
        Some(chi),
        vec![],
    )
}

/// `(1 + t sin θ cos φ)` times the round metric of S², i.e. `1 + t x` in ambient
/// coordinates; a smooth family for |t| < 1.
pub fn conformal_sphere2() -> Result<MetricField> {
    let f = "(1 + t*sin(theta)*cos(phi))";
    build(
        "conformal_sphere2",
        sphere_chart(&["theta", "phi"])?,
        diagonal_sources(&[f.to_string(), format!("{f}*sin(theta)^2")]),
        Params::from([("t".to_string(), 0.0)]),
        (2, 0),
        Some(2),
        vec!["t".into()],
    )
}

fn torus_chart(n: usize) -> Result<Chart> {
    Chart::new(
        format!("T{n}"),
        (1..=n).map(|i| format!("x{i}")).collect(),
        vec![(0.0, TWO_PI); n],
        vec![true; n],
        "seams x_i = 0 are excluded",
    )
}

pub fn flat_torus(n: usize) -> Result<MetricField> {
    if n == 0 || n > MAX_VARS - 1 {
        return Err(Error::InvalidParams(format!("flat_torus dimension {n} out of range")));
    }
    let diag = vec!["1".to_string(); n];
    build(&format!("flat_torus({n})"), torus_chart(n)?, diagonal_sources(&diag), Params::new(), (n, 0), Some(0), vec![])
}

/// Flat torus plus `a` times a seeded trigonometric-polynomial field.
///
/// Diagonal perturbations are bounded by 3/4 and each row of off-diagonal
/// ones by 1/4 in total, so the metric is positive definite for |a| < 1.
pub fn perturbed_torus(n: usize, seed: u64) -> Result<MetricField> {
    if n == 0 || n > MAX_VARS - 1 {
        return Err(Error::InvalidParams(format!("perturbed_torus dimension {n} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec!["0".to_string(); n * n];
    let x = |i: usize| format!("x{}", i + 1);
    for i in 0..n {
        for j in i..n {
            let src = if i == j {
                let c1: f64 = rng.random_range(0.2..0.45);
                let c2: f64 = rng.random_range(0.1..0.3);
                let p1: f64 = rng.random_range(0.0..TWO_PI);
                let p2: f64 = rng.random_range(0.0..TWO_PI);
                let q1 = (i + 1 + rng.random_range(0..n)) % n;
                let q2 = rng.random_range(0..n);
                format!(
                    "1 + a*({c1:?}*sin({} + {p1:?}) + {c2:?}*cos(2*{} + {p2:?}))",
                    x(q1),
                    x(q2)
                )
            } else {
                let bound = 0.25 / (n - 1) as f64;
                let c: f64 = rng.random_range(0.3 * bound..bound);
                let p: f64 = rng.random_range(0.0..TWO_PI);
                format!("a*{c:?}*sin({} - {} + {p:?})", x(i), x(j))
            };
            rows[i * n + j] = src.clone();
            rows[j * n + i] = src;
        }
    }
    build(
        &format!("perturbed_torus({n}, {seed})"),
        torus_chart(n)?,
        rows,
        Params::from([("a".to_string(), 0.3)]),
        (n, 0),
        Some(0),
        vec!["a".into()],
    )
}

/// A parsed catalog request such as `product(sphere2, sign_flip(sphere2))`.
#[derive(Debug, Clone, PartialEq)]
pub enum CatalogSpec {
    Number(f64),
    Item(String, Vec<CatalogSpec>),
}

pub fn parse_catalog(src: &str) -> Result<CatalogSpec> {
    let tokens = tokenize(src)?;
    let mut pos = 0;
    let spec = catalog_item(&tokens, &mut pos, src)?;
    if pos != tokens.len() {
        return Err(Error::UnknownManifold(format!("trailing input in `{src}`")));
    }
    Ok(spec)
}

fn catalog_item(tokens: &[crate::expr::Token], pos: &mut usize, src: &str) -> Result<CatalogSpec> {
    let bad = || Error::UnknownManifold(format!("malformed manifold name `{src}`"));
    let tok = tokens.get(*pos).ok_or_else(bad)?;
    *pos += 1;
    match &tok.kind {
        TokenKind::Number(v) => Ok(CatalogSpec::Number(*v)),
        TokenKind::Minus => match tokens.get(*pos).map(|t| &t.kind) {
            Some(TokenKind::Number(v)) => {
                *pos += 1;
                Ok(CatalogSpec::Number(-v))
            }
            _ => Err(bad()),
        },
        TokenKind::Ident(name) => {
            let mut args = Vec::new();
            if tokens.get(*pos).map(|t| &t.kind) == Some(&TokenKind::LParen) {
                *pos += 1;
                loop {
                    args.push(catalog_item(tokens, pos, src)?);
                    match tokens.get(*pos).map(|t| &t.kind) {
                        Some(TokenKind::Comma) => *pos += 1,
                        Some(TokenKind::RParen) => {
                            *pos += 1;
                            break;
                        }
                        _ => return Err(bad()),
                    }
                }
            }
            Ok(CatalogSpec::Item(name.clone(), args))
        }
        _ => Err(bad()),
    }
}

/// Names accepted by [`catalog`], with their argument lists.
pub const CATALOG_NAMES: &[&str] = &[
    "sphere2",
    "sphere3",
    "sphere4",
    "conformal_sphere2",
    "flat_torus(n)",
    "perturbed_torus(n[, seed])",
    "product(a, b)",
    "scaled(a, lambda)",
    "sign_flip(a)",
    "cylinder(a)",
];

/// Look up a catalog metric by name, then apply parameter overrides.
pub fn catalog(name: &str, params: &Params) -> Result<MetricField> {
    let spec = parse_catalog(name)?;
    build_spec(&spec)?.with_params(params)
}

fn build_spec(spec: &CatalogSpec) -> Result<MetricField> {
    let CatalogSpec::Item(name, args) = spec else {
        return Err(Error::UnknownManifold("a number is not a manifold".into()));
    };
    let metric = |i: usize| -> Result<MetricField> {
        args.get(i)
            .ok_or_else(|| Error::InvalidParams(format!("{name} needs a manifold argument")))
            .and_then(build_spec)
    };
    let number = |i: usize| -> Result<f64> {
        match args.get(i) {
            Some(CatalogSpec::Number(v)) => Ok(*v),
            _ => Err(Error::InvalidParams(format!("{name} needs a numeric argument {}", i + 1))),
        }
    };
    let count = |i: usize| -> Result<usize> {
        let v = number(i)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::InvalidParams(format!("{name} needs a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    };
    let arity = |lo: usize, hi: usize| -> Result<()> {
        if args.len() < lo || args.len() > hi {
            Err(Error::InvalidParams(format!("{name} takes {lo}..={hi} arguments, got {}", args.len())))
        } else {
            Ok(())
        }
    };
    match name.as_str() {
        "sphere2" | "sphere3" | "sphere4" => {
            arity(0, 0)?;
            round_sphere(name[6..].parse().unwrap())
        }
        "conformal_sphere2" => {
            arity(0, 0)?;
            conformal_sphere2()
        }
        "flat_torus" => {
            arity(1, 1)?;
            flat_torus(count(0)?)
        }
        "perturbed_torus" => {
            arity(1, 2)?;
            let seed = if args.len() == 2 { count(1)? as u64 } else { 1 };
            perturbed_torus(count(0)?, seed)
        }
        "product" => {
            arity(2, 2)?;
            MetricField::product(&metric(0)?, &metric(1)?)
        }
        "scaled" => {
            arity(2, 2)?;
            metric(0)?.scaled(number(1)?)
        }
        "sign_flip" => {
            arity(1, 1)?;
            metric(0)?.sign_flipped()
        }
        "cylinder" => {
            arity(1, 1)?;
            metric(0)?.cylinder_extend()
        }
        other => Err(Error::UnknownManifold(format!(
            "`{other}` (known: {})",
            CATALOG_NAMES.join(", ")
        ))),
    }
}

/// Checks parameter ranges that keep catalog families nondegenerate.
pub fn validate_family_params(m: &MetricField, params: &Params) -> Result<()> {
    for name in m.family_params() {
        let v = params.get(name).copied().unwrap_or(m.params()[name]);
        if !(v.abs() < 1.0) {
            return Err(Error::InvalidParams(format!(
                "family parameter `{name}` = {v} must satisfy |{name}| < 1"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Params {
        Params::new()
    }

    #[test]
    fn flat_torus_is_flat() {
        let m = flat_torus(3).unwrap();
        let cb = m.curvature_at(&[0.3, 1.0, 5.0], &none()).unwrap();
        assert_eq!(cb.riem_low.max_abs(), 0.0);
        assert_eq!(cb.scalar, 0.0);
        assert_eq!(cb.vol_density, 1.0);
    }

    #[test]
    fn unit_sphere_curvature() {
        let m = round_sphere(2).unwrap();
        let theta = PI / 3.0;
        let cb = m.curvature_at(&[theta, 0.7], &none()).unwrap();
        assert!((cb.scalar - 2.0).abs() < 1e-13, "{}", cb.scalar);
        assert!((cb.riem_low.get4(0, 1, 0, 1) - 0.75).abs() < 1e-14);
        assert!((cb.vol_density - theta.sin()).abs() < 1e-15);
        // Γ^θ_φφ = -sinθ cosθ, Γ^φ_θφ = cot θ
        assert!((cb.gamma.get(&[0, 1, 1]) + theta.sin() * theta.cos()).abs() < 1e-15);
        assert!((cb.gamma.get(&[1, 0, 1]) - 1.0 / theta.tan()).abs() < 1e-15);
    }

    #[test]
    fn round_three_sphere_is_einstein() {
        let m = round_sphere(3).unwrap();
        let cb = m.curvature_at(&[1.1, 0.6, 2.0], &none()).unwrap();
        assert!((cb.scalar - 6.0).abs() < 1e-12);
        assert!(cb.ricci.max_abs_diff(&cb.g.scaled(2.0)) < 1e-12);
        let s4 = round_sphere(4).unwrap().curvature_at(&[0.9, 1.2, 2.0, 4.0], &none()).unwrap();
        assert!((s4.scalar - 12.0).abs() < 1e-11);
    }

    #[test]
    fn catalog_products_and_flips() {
        let p = catalog("product(sphere2, sphere2)", &none()).unwrap();
        assert_eq!(p.dim(), 4);
        assert_eq!(p.expected_chi(), Some(4));
        assert_eq!(p.signature(), (4, 0));
        assert_eq!(p.chart().coords, vec!["theta", "phi", "theta_2", "phi_2"]);

        let f = catalog("sign_flip(sphere2)", &none()).unwrap();
        assert_eq!(f.signature(), (0, 2));
        let g = f.metric_at(&[1.0, 1.0], &none()).unwrap();
        assert_eq!(g.get2(0, 0), -1.0);

        let s = catalog("scaled(sphere2, 2)", &none()).unwrap();
        let base = round_sphere(2).unwrap().metric_at(&[0.4, 2.0], &none()).unwrap();
        let scaled = s.metric_at(&[0.4, 2.0], &none()).unwrap();
        assert!(scaled.max_abs_diff(&base.scaled(4.0)) < 1e-15);

        let mixed = catalog("product(sign_flip(sphere2), sphere2)", &none()).unwrap();
        assert_eq!(mixed.signature(), (2, 2));
        assert_eq!(mixed.expected_pfaffian_integral(2), Some(-4.0));

        let pt = catalog("product(perturbed_torus(2), perturbed_torus(2, 5))", &none()).unwrap();
        assert_eq!(pt.params().keys().collect::<Vec<_>>(), vec!["a", "a_2"]);
        assert_eq!(pt.family_params(), &["a".to_string(), "a_2".to_string()]);
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(catalog("klein_bottle", &none()), Err(Error::UnknownManifold(_))));
        assert!(matches!(catalog("scaled(sphere2, -1)", &none()), Err(Error::InvalidParams(_))));
        assert!(matches!(catalog("flat_torus(1.5)", &none()), Err(Error::InvalidParams(_))));
        assert!(matches!(catalog("product(sphere2)", &none()), Err(Error::InvalidParams(_))));
        assert!(catalog("sphere2(", &none()).is_err());
        let bad = Params::from([("zeta".to_string(), 1.0)]);
        assert!(matches!(catalog("sphere2", &bad), Err(Error::InvalidParams(_))));
        let m = perturbed_torus(2, 1).unwrap();
        assert!(validate_family_params(&m, &Params::from([("a".to_string(), 1.5)])).is_err());
        assert!(validate_family_params(&m, &none()).is_ok());
    }

    #[test]
    fn cylinder_extension() {
        let torus = flat_torus(2).unwrap().cylinder_extend().unwrap();
        let flat3 = flat_torus(3).unwrap();
        assert_eq!(torus.dim(), 3);
        assert_eq!(torus.expected_chi(), Some(0));
        let x = [0.1, 0.2, 0.3];
        assert_eq!(torus.metric_at(&x, &none()).unwrap(), flat3.metric_at(&x, &none()).unwrap());

        let base = round_sphere(2).unwrap();
        let cyl = base.cylinder_extend().unwrap();
        assert_eq!(cyl.chart().coords, vec!["theta", "phi", "t"]);
        for (i, x) in cyl.chart().random_points(10, 4, 0.05).iter().enumerate() {
            let cb = cyl.curvature_at(x, &none()).unwrap();
            let cb0 = base.curvature_at(&x[..2], &none()).unwrap();
            assert!((cb.scalar - 2.0).abs() < 1e-12, "point {i}");
            assert_eq!(cb.vol_density, cb0.vol_density);
        }
    }

    #[test]
    fn equator_restriction() {
        let base = round_sphere(2).unwrap();
        let cyl = base.cylinder_extend().unwrap();
        let g_ext = cyl.metric_at(&[0.5, 1.0, 0.0], &none()).unwrap();
        let g = restrict_equator(&g_ext, &base).unwrap();
        assert_eq!(g, base.metric_at(&[0.5, 1.0], &none()).unwrap());
        assert_eq!(restrict_equator(&PointTensor::scalar(3.0), &base).unwrap().data(), &[3.0]);
        let mixed = PointTensor::zeros(3, vec![Variance::Upper, Variance::Lower]);
        assert!(restrict_equator(&mixed, &base).is_err());
    }

    #[test]
    fn curvature_symmetries_hold_on_catalog() {
        for name in [
            "sphere2",
            "sphere3",
            "sphere4",
            "conformal_sphere2",
            "perturbed_torus(2)",
            "perturbed_torus(3)",
            "perturbed_torus(4, 9)",
            "product(sphere2, perturbed_torus(2))",
            "sign_flip(sphere3)",
            "cylinder(perturbed_torus(3))",
        ] {
            let mut m = catalog(name, &none()).unwrap();
            if name == "conformal_sphere2" {
                m = m.with_params(&Params::from([("t".into(), 0.4)])).unwrap();
            }
            for x in m.chart().random_points(100, 17, 0.02) {
                let cb = m.curvature_at(&x, &none()).unwrap();
                let rep = tensor::curvature_symmetries(&cb.riem_low);
                assert!(rep.relative() < 1e-9, "{name} at {x:?}: {rep:?}");
                assert!(cb.ricci.asymmetry() <= 1e-10 * cb.ricci.max_abs().max(1.0), "{name}");
            }
        }
    }

    #[test]
    fn scalar_curvature_has_weight_minus_two() {
        for name in ["sphere2", "perturbed_torus(3)", "conformal_sphere2"] {
            let m = catalog(name, &Params::new()).unwrap();
            let m = if name == "conformal_sphere2" {
                m.with_params(&Params::from([("t".into(), 0.3)])).unwrap()
            } else {
                m
            };
            let lambda = 1.7;
            let s = m.scaled(lambda).unwrap();
            for x in m.chart().random_points(20, 2, 0.05) {
                let a = m.curvature_at(&x, &none()).unwrap().scalar;
                let b = s.curvature_at(&x, &none()).unwrap().scalar;
                assert!((b - a / (lambda * lambda)).abs() <= 1e-10 * a.abs().max(1.0), "{name}");
            }
        }
    }

    #[test]
    fn degenerate_and_out_of_domain() {
        let m = round_sphere(2).unwrap();
        assert!(matches!(m.curvature_at(&[0.0, 1.0], &none()), Err(Error::OutOfDomain { .. })));
        assert!(matches!(m.curvature_at(&[1.0], &none()), Err(Error::OutOfDomain { .. })));
        let chart = torus_chart(2).unwrap();
        let singular = build(
            "singular",
            chart.clone(),
            vec!["1".into(), "1".into(), "1".into(), "1".into()],
            Params::new(),
            (2, 0),
            None,
            vec![],
        )
        .unwrap();
        let err = singular.curvature_at(&[1.0, 1.0], &none()).unwrap_err();
        assert!(matches!(err, Error::SingularMetric { .. }));
        assert!(err.is_numerical());
        let wrong_sig = build(
            "wrong",
            chart.clone(),
            vec!["1".into(), "0".into(), "0".into(), "-1".into()],
            Params::new(),
            (2, 0),
            None,
            vec![],
        )
        .unwrap();
        assert!(matches!(
            wrong_sig.curvature_at(&[1.0, 1.0], &none()),
            Err(Error::SignatureMismatch { found: (1, 1), .. })
        ));
        let bad_eval = build(
            "bad",
            chart,
            vec!["ln(x1 - 3)".into(), "0".into(), "0".into(), "1".into()],
            Params::new(),
            (2, 0),
            None,
            vec![],
        )
        .unwrap();
        match bad_eval.curvature_at(&[1.0, 1.0], &none()) {
            Err(Error::Evaluation { point, source }) => {
                assert_eq!(point, vec![1.0, 1.0]);
                assert!(source.message.contains("ln"));
            }
            other => panic!("expected evaluation error, got {other:?}"),
        }
        assert!(MetricField::from_sources(
            "asym",
            torus_chart(2).unwrap(),
            &["1", "x1", "0", "1"],
            Params::new(),
            (2, 0),
            None,
            vec![]
        )
        .is_err());
    }

    #[test]
    fn zero_expected_integral_for_odd_negative_count() {
        let m = catalog("product(sign_flip(flat_torus(1)), flat_torus(1))", &none()).unwrap();
        assert_eq!(m.signature(), (1, 1));
        assert_eq!(m.expected_pfaffian_integral(1), Some(0.0));
        assert_eq!(round_sphere(2).unwrap().expected_pfaffian_integral(2), None);
    }
}
