//! One function per task. Each returns a check report with its assertions.

use std::time::Instant;

use serde_json::{json, Map, Value};

use gbc_core::geometry::{catalog, MetricField, Params};
use gbc_core::invariants::{
    homogeneity_check, lovelock_from_mixed, mixed_from_lower, pfaffian_invariant, reduction_check, InvariantSpec,
    Rank,
};
use gbc_core::oracle::{algebraic_bundle, classical_lovelock, compare_engine, expression_corpus, jet_fd_error};
use gbc_core::quad::{build_grid, cylinder_integral_check, default_resolution, pfaffian_action, QuadGrid};
use gbc_core::tensor::{identity, random_curvature, Variance};
use gbc_core::variational::{el_check, family_sweep, weight_forcing_check, Perturbation, DEFAULT_EPS};
use gbc_core::Error;

use crate::config::{Format, RankChoice, RunConfig, Task};
use crate::report::{csv_number, Assertion, CheckReport};

#[derive(Debug)]
pub enum TaskError {
    Config(String),
    Numerical(String),
}

impl From<Error> for TaskError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            TaskError::Numerical(e.to_string())
        } else {
            TaskError::Config(e.to_string())
        }
    }
}

impl std::fmt::Display for TaskError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskError::Config(m) => write!(f, "configuration error: {m}"),
            TaskError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

type TaskResult = Result<CheckReport, TaskError>;

/// Catalog names used by the oracle task when the config does not list any.
pub const ORACLE_MANIFOLDS: &[&str] = &[
    "sphere2",
    "sphere3",
    "sphere4",
    "conformal_sphere2",
    "perturbed_torus(3)",
    "perturbed_torus(4)",
    "perturbed_torus(5)",
    "product(sphere2, perturbed_torus(2))",
    "product(sphere3, perturbed_torus(2))",
    "product(sign_flip(sphere2), sphere2)",
    "cylinder(sphere4)",
];

struct Builder {
    cfg: RunConfig,
    manifold: Option<String>,
    values: Map<String, Value>,
    expected: Option<f64>,
    provenance: String,
    abs_error: Option<f64>,
    rel_error: Option<f64>,
    assertions: Vec<Assertion>,
    table: Option<(Vec<String>, Vec<Vec<String>>)>,
}

impl Builder {
    fn new(cfg: &RunConfig, provenance: &str) -> Self {
        Self {
            cfg: cfg.clone(),
            manifold: cfg.manifold.as_ref().map(|m| m.name().to_string()),
            values: Map::new(),
            expected: None,
            provenance: provenance.to_string(),
            abs_error: None,
            rel_error: None,
            assertions: Vec::new(),
            table: None,
        }
    }

    fn value(&mut self, key: &str, v: impl Into<Value>) {
        self.values.insert(key.to_string(), v.into());
    }

    fn check(&mut self, a: Assertion) {
        self.assertions.push(a);
    }

    fn finish(self, started: Instant) -> CheckReport {
        let pass = self.assertions.iter().all(|a| a.pass);
        CheckReport {
            task: self.cfg.task.name().to_string(),
            config: self.cfg,
            manifold: self.manifold,
            values: Value::Object(self.values),
            expected: self.expected,
            provenance: self.provenance,
            abs_error: self.abs_error,
            rel_error: self.rel_error,
            assertions: self.assertions,
            pass,
            wall_time_s: started.elapsed().as_secs_f64(),
            table: self.table,
        }
    }
}

fn metric(cfg: &RunConfig) -> Result<MetricField, TaskError> {
    let spec = cfg
        .manifold
        .as_ref()
        .ok_or_else(|| TaskError::Config("missing field `manifold`".into()))?;
    Ok(catalog(spec.name(), &spec.params())?)
}

fn grid(cfg: &RunConfig, m: &MetricField) -> Result<QuadGrid, TaskError> {
    let res = cfg.resolution.clone().unwrap_or_else(|| default_resolution(m.chart()));
    Ok(build_grid(m, &res)?)
}

fn k_of(cfg: &RunConfig) -> Result<usize, TaskError> {
    cfg.k.ok_or_else(|| TaskError::Config("missing field `k`".into()))
}

fn scale_of_error(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

pub fn run_check(cfg: &RunConfig) -> TaskResult {
    let started = Instant::now();
    let b = match cfg.task {
        Task::VerifyGbc => verify_gbc(cfg)?,
        Task::Identity => identity_task(cfg)?,
        Task::EulerLagrange => euler_lagrange(cfg)?,
        Task::Reduce => reduce(cfg)?,
        Task::Homogeneity => homogeneity(cfg)?,
        Task::Weight => weight(cfg)?,
        Task::Sweep => sweep(cfg)?,
        Task::Eval => eval(cfg)?,
        Task::Cylinder => cylinder(cfg)?,
        Task::Oracle => oracle(cfg)?,
    };
    Ok(b.finish(started))
}

fn verify_gbc(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let g = grid(cfg, &m)?;
    let mut b = Builder::new(
        cfg,
        "Gauss–Bonnet–Chern: the integral of P_k over a closed manifold of dimension 2k is (−1)^{n₋/2} χ (0 for odd n₋)",
    );
    let expected = match cfg.expected.or_else(|| m.expected_pfaffian_integral(k)) {
        Some(e) => e,
        None => {
            return Err(TaskError::Config(format!(
                "no prediction for k = {k} on `{}` (dimension {}); set `expected`",
                m.name(),
                m.dim()
            )))
        }
    };
    let value = pfaffian_action(&m, k, &g, &Params::new())?;
    let tol = cfg.tolerance.unwrap_or(1e-6);
    b.value("action", value);
    b.value("euler_characteristic", m.expected_chi());
    b.value("signature", json!([m.signature().0, m.signature().1]));
    b.value("resolution", g.resolution());
    b.value("nodes", g.len());
    b.expected = Some(expected);
    b.abs_error = Some((value - expected).abs());
    b.rel_error = Some(scale_of_error(value, expected));
    b.check(Assertion::at_most("abs_error", (value - expected).abs(), tol));
    Ok(b)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Lower bound on the median `‖S_{2,k}‖ / scale` above dimension 2k.
const NONVANISHING_BOUND: f64 = 1e-3;

fn identity_task(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let k = k_of(cfg)?;
    let samples = cfg.samples.unwrap_or(200);
    let seed = cfg.seed.unwrap_or(0);
    let mut b = Builder::new(
        cfg,
        "S_{2,k} vanishes identically in dimension 2k and is generically nonzero above it; \
         the classical forms (Einstein tensor for k = 1, Lanczos tensor for k = 2) are checked alongside",
    );
    let mut ratios = Vec::with_capacity(samples);
    let mut residues: f64 = 0.0;
    // (‖classical S_{2,k}‖, ‖classical − engine‖), both over the scale
    let mut classical: Vec<(f64, f64)> = Vec::new();
    let dim;
    if let Some(n) = cfg.dim {
        if n == 0 || n > gbc_core::jet::MAX_VARS {
            return Err(TaskError::Config(format!("`dim` must be in 1..={}", gbc_core::jet::MAX_VARS)));
        }
        dim = n;
        let terms = cfg.terms.unwrap_or(3);
        let g = identity(n, [Variance::Lower; 2]);
        let g_inv = identity(n, [Variance::Upper; 2]);
        for s in 0..samples {
            let r = random_curvature(n, seed.wrapping_add(s as u64), terms).map_err(Error::from)?;
            let mixed = mixed_from_lower(&r, &g_inv);
            let out = lovelock_from_mixed(&mixed, &g, k);
            let scale = r.max_abs().powi(k as i32);
            ratios.push(out.value.max_abs() / scale);
            residues = residues.max(out.antisym_residue / scale);
            if let Some(c) = classical_lovelock(&algebraic_bundle(&r), k) {
                classical.push((c.max_abs() / scale, c.max_abs_diff(&out.value) / scale));
            }
        }
        b.value("generator", format!("sum of {terms} Kulkarni–Nomizu squares of random symmetric matrices"));
    } else {
        let m = metric(cfg)?;
        dim = m.dim();
        for x in m.chart().random_points(samples, seed, 0.05) {
            let cb = m.curvature_at(&x, &Params::new())?;
            let out = lovelock_from_mixed(&cb.riem_mixed, &cb.g, k);
            let scale = cb.riem_mixed.max_abs().powi(k as i32) * cb.g.max_abs();
            let (norm, res) = (out.value.max_abs(), out.antisym_residue);
            let per = |v: f64| if scale > 0.0 { v / scale } else { v };
            ratios.push(per(norm));
            residues = residues.max(per(res));
            if let Some(c) = classical_lovelock(&cb, k) {
                classical.push((per(c.max_abs()), per(c.max_abs_diff(&out.value))));
            }
        }
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let med = median(&mut ratios.clone());
    b.value("dim", dim);
    b.value("k", k);
    b.value("samples", samples);
    b.value("max_norm_over_scale", max);
    b.value("median_norm_over_scale", med);
    b.value("max_antisym_residue_over_scale", residues);
    let tol = cfg.tolerance.unwrap_or(1e-10);
    b.check(Assertion::at_most("max_antisym_residue_over_scale", residues, 1e-10));
    if dim <= 2 * k {
        b.check(Assertion::at_most("max_norm_over_scale", max, tol));
    } else {
        b.check(Assertion::at_least("median_norm_over_scale", med, NONVANISHING_BOUND));
    }
    // the classical formulas vanish in low dimension only through genuine identities
    if !classical.is_empty() {
        let norm = classical.iter().map(|c| c.0).fold(0.0, f64::max);
        let diff = classical.iter().map(|c| c.1).fold(0.0, f64::max);
        b.value("classical_max_norm_over_scale", norm);
        b.value("classical_max_deviation_over_scale", diff);
        if dim <= 2 * k {
            b.check(Assertion::at_most("classical_max_norm_over_scale", norm, tol));
        } else {
            b.check(Assertion::at_most("classical_max_deviation_over_scale", diff, 1e-10));
        }
    }
    Ok(b)
}

fn euler_lagrange(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let g = grid(cfg, &m)?;
    let eps = cfg.eps.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
    let seed = cfg.seed.unwrap_or(0);
    let vanishing = k >= 1 && m.dim() == 2 * k;
    let mut b = Builder::new(
        cfg,
        if vanishing {
            "in dimension 2k the action of P_k is metric independent, so its first variation vanishes"
        } else {
            "first variation of the action of P_k equals the pairing with ½ N_k S_{2,k} (k = 0: volume variation ½ g)"
        },
    );
    let directions: Vec<Perturbation> = match &cfg.perturbation {
        Some(rows) => vec![Perturbation::from_sources(&m, rows)?],
        None => (0..cfg.directions.unwrap_or(5))
            .map(|i| Perturbation::random(&m, seed.wrapping_add(i as u64)))
            .collect::<Result<_, _>>()?,
    };
    let tol = cfg
        .tolerance
        .unwrap_or(if vanishing { 1e-6 } else if k == 0 { 1e-8 } else { 1e-4 });
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, h) in directions.iter().enumerate() {
        let r = el_check(&m, h, k, &g, &eps, tol)?;
        rows.push(json!({
            "direction": i,
            "fd_value": r.fd_value,
            "pairing_value": r.pairing_value,
            "rel_error": r.rel_error,
            "measured_constant": r.measured_constant,
            "eps_table": r.table.iter().map(|(e, v)| json!([e, v])).collect::<Vec<_>>(),
        }));
        if vanishing {
            b.check(Assertion::at_most(format!("direction_{i}_abs_derivative"), r.fd_value.abs(), tol));
            b.check(Assertion::at_most(format!("direction_{i}_abs_pairing"), r.pairing_value.abs(), tol));
            worst = worst.max(r.fd_value.abs());
        } else {
            b.check(Assertion::at_most(format!("direction_{i}_rel_error"), r.rel_error, tol));
            worst = worst.max(r.rel_error);
        }
    }
    if !vanishing {
        b.rel_error = Some(worst);
    } else {
        b.abs_error = Some(worst);
    }
    b.value("k", k);
    b.value("directions", rows);
    b.value("eps", eps);
    b.value("resolution", g.resolution());
    b.expected = Some(if vanishing { 0.0 } else { 0.5 });
    Ok(b)
}

fn reduce(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let tol = cfg.tolerance.unwrap_or(1e-10);
    let r = reduction_check(&m, k, cfg.samples.unwrap_or(100), cfg.seed.unwrap_or(0))?;
    let mut b = Builder::new(
        cfg,
        "universality: invariants of g + dt², pulled back to t = 0, equal the invariants of g",
    );
    b.value("k", k);
    b.value("points", r.points);
    b.value("pfaffian_deviation", r.pfaffian_deviation);
    b.value("lovelock_deviation", r.lovelock_deviation);
    b.value("lovelock_scale", r.lovelock_scale);
    b.abs_error = Some(r.pfaffian_deviation.max(r.lovelock_deviation));
    b.check(Assertion::at_most("pfaffian_deviation", r.pfaffian_deviation, tol));
    b.check(Assertion::at_most("lovelock_deviation", r.lovelock_deviation, tol));
    Ok(b)
}

fn homogeneity(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let spec = match cfg.rank.unwrap_or(RankChoice::Scalar) {
        RankChoice::Scalar => InvariantSpec::pfaffian(k),
        RankChoice::Tensor => InvariantSpec::lovelock(k),
    };
    let tol = cfg.tolerance.unwrap_or(1e-10);
    let mut b = Builder::new(cfg, "homogeneity: T(λ² g) = λ^w T(g), w = −2k for P_k and 2 − 2k for S_{2,k}");
    let mut entries = Vec::new();
    for &lambda in cfg.lambda.as_deref().unwrap_or(&[]) {
        let r = homogeneity_check(&m, spec, lambda, cfg.samples.unwrap_or(20), cfg.seed.unwrap_or(0))?;
        entries.push(json!({
            "lambda": lambda,
            "expected_ratio": r.expected_ratio,
            "max_rel_deviation": r.max_rel_deviation,
        }));
        b.check(Assertion::at_most(format!("lambda_{lambda}_rel_deviation"), r.max_rel_deviation, tol));
    }
    b.value("k", k);
    b.value("rank", if spec.rank == Rank::Scalar { "scalar" } else { "tensor" });
    b.value("weight", spec.weight());
    b.value("entries", entries);
    Ok(b)
}

fn weight(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let g = grid(cfg, &m)?;
    let tol = cfg.tolerance.unwrap_or(1e-10);
    let r = weight_forcing_check(&m, k, &g, cfg.lambda.as_deref().unwrap_or(&[]))?;
    let mut b = Builder::new(cfg, "weight forcing: the action of P_k scales by λ^{n−2k}, invariant only when n = 2k");
    b.value("n", r.n);
    b.value("k", k);
    b.value("base_action", r.base_value);
    b.value("scale_invariant", r.scale_invariant);
    b.value(
        "entries",
        r.entries
            .iter()
            .map(|e| json!({"lambda": e.lambda, "ratio": e.ratio, "expected": e.expected, "rel_deviation": e.rel_deviation}))
            .collect::<Vec<_>>(),
    );
    for e in &r.entries {
        b.check(Assertion::at_most(format!("lambda_{}_rel_deviation", e.lambda), e.rel_deviation, tol));
    }
    b.rel_error = Some(r.max_deviation());
    Ok(b)
}

fn sweep(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let g = grid(cfg, &m)?;
    let samples: Vec<Params> = cfg.family.clone().unwrap_or_default();
    let table = family_sweep(&m, k, &g, &samples)?;
    let tol = cfg.tolerance.unwrap_or(1e-6);
    let mut b = Builder::new(cfg, "metric independence: the action of P_k is constant over a family when dim = 2k");
    let expected = cfg.expected.or_else(|| m.expected_pfaffian_integral(k));
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| json!({"params": r.params, "action_value": r.value, "excluded": r.excluded}))
        .collect();
    let included = table.values().count();
    b.value("k", k);
    b.value("members", rows);
    b.value("included", included);
    b.value("spread", table.spread());
    b.check(Assertion::at_least("included_members", included as f64, 1.0));
    if m.dim() == 2 * k {
        b.check(Assertion::at_most("spread", table.spread(), tol));
    }
    if let Some(e) = expected {
        let worst = table.values().map(|v| (v - e).abs()).fold(0.0, f64::max);
        b.expected = Some(e);
        b.abs_error = Some(worst);
        b.check(Assertion::at_most("max_abs_error", worst, tol));
    }
    if cfg.format == Some(Format::Csv) || cfg.output.is_some() {
        let mut header = table.param_names.clone();
        header.push("action_value".into());
        let body = table
            .rows
            .iter()
            .map(|r| {
                let mut cells: Vec<String> = table
                    .param_names
                    .iter()
                    .map(|p| csv_number(r.params.get(p).copied().unwrap_or(m.params()[p])))
                    .collect();
                cells.push(r.value.map(csv_number).unwrap_or_default());
                cells
            })
            .collect();
        b.table = Some((header, body));
    }
    Ok(b)
}

fn eval(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let mut b = Builder::new(cfg, "pointwise evaluation, no assertions");
    let ks: Vec<usize> = match cfg.k {
        Some(k) => vec![k],
        None => (0..=m.dim() / 2).collect(),
    };
    let mut out = Vec::new();
    for x in cfg.points.as_deref().unwrap_or(&[]) {
        let cb = m.curvature_at(x, &Params::new())?;
        let mut inv = Map::new();
        for &k in &ks {
            let p = pfaffian_invariant(&cb, k).scalar();
            let s = InvariantSpec::lovelock(k).raw().evaluate(&cb);
            let rows: Vec<Vec<f64>> = (0..m.dim()).map(|i| (0..m.dim()).map(|j| s.value.get2(i, j)).collect()).collect();
            inv.insert(format!("k{k}"), json!({"pfaffian": p, "lovelock": rows, "trivially_zero": s.trivially_zero}));
        }
        out.push(json!({
            "point": x,
            "scalar_curvature": cb.scalar,
            "vol_density": cb.vol_density,
            "det": cb.det,
            "invariants": inv,
        }));
    }
    b.value("points", out);
    Ok(b)
}

fn cylinder(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let m = metric(cfg)?;
    let k = k_of(cfg)?;
    let res = cfg.resolution.clone().unwrap_or_else(|| default_resolution(m.chart()));
    let tol = cfg.tolerance.unwrap_or(1e-8);
    let r = cylinder_integral_check(&m, k, &res, cfg.circle_resolution.unwrap_or(16))?;
    let mut b = Builder::new(cfg, "cylinder: the action over X × S¹ of g + dt² is 2π times the action over X");
    b.value("k", k);
    b.value("cylinder_action", r.cylinder_value);
    b.value("base_action", r.base_value);
    b.expected = Some(2.0 * std::f64::consts::PI * r.base_value);
    b.rel_error = Some(r.rel_error);
    b.check(Assertion::at_most("rel_error", r.rel_error, tol));
    Ok(b)
}

fn oracle(cfg: &RunConfig) -> Result<Builder, TaskError> {
    let names: Vec<String> = cfg
        .manifolds
        .clone()
        .unwrap_or_else(|| ORACLE_MANIFOLDS.iter().map(|s| s.to_string()).collect());
    let points = cfg.samples.unwrap_or(20);
    let seed = cfg.seed.unwrap_or(0);
    let tol = cfg.tolerance.unwrap_or(1e-12);
    let fd_tol = cfg.fd_tolerance.unwrap_or(1e-6);
    let mut b = Builder::new(
        cfg,
        "the pruned delta-determinant engine agrees with a signed-permutation brute force; jets agree with finite differences",
    );
    let (mut raw, mut pf, mut s_brute, mut s_lanczos): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut per = Map::new();
    for name in &names {
        let m = catalog(name, &Params::new())?;
        if m.dim() > 5 {
            return Err(TaskError::Config(format!("oracle comparisons are limited to n ≤ 5, `{name}` has {}", m.dim())));
        }
        let mut worst: f64 = 0.0;
        for x in m.chart().random_points(points, seed, 0.05) {
            let cb = m.curvature_at(&x, &Params::new())?;
            for k in 0..=2 {
                let c = compare_engine(&cb, k);
                raw = raw.max(c.raw);
                pf = pf.max(c.pfaffian);
                if k <= 1 {
                    s_brute = s_brute.max(c.lovelock);
                } else {
                    s_lanczos = s_lanczos.max(c.lovelock);
                }
                worst = worst.max(c.raw).max(c.pfaffian).max(c.lovelock);
            }
        }
        per.insert(name.clone(), json!(worst));
    }
    let corpus = expression_corpus()?;
    let mut fd_worst: f64 = 0.0;
    let mut fd_label = String::new();
    for (i, e) in corpus.iter().enumerate() {
        let err = jet_fd_error(e, 3, seed.wrapping_add(i as u64))?;
        if err > fd_worst {
            fd_worst = err;
            fd_label = e.label.clone();
        }
    }
    b.value("points_per_manifold", points);
    b.value("per_manifold_max_rel", Value::Object(per));
    b.value("corpus_size", corpus.len());
    b.value("corpus_worst_entry", fd_label);
    b.check(Assertion::at_most("raw_vs_brute_rel", raw, tol));
    b.check(Assertion::at_most("pfaffian_vs_brute_rel", pf, tol));
    b.check(Assertion::at_most("lovelock_k_le_1_vs_brute_rel", s_brute, tol));
    b.check(Assertion::at_most("lovelock_k2_vs_lanczos_rel", s_lanczos, tol));
    b.check(Assertion::at_most("jet_vs_fd_normalized", fd_worst, fd_tol));
    Ok(b)
}
