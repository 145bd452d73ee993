//! Independent reference implementations used to check the fast paths.
//!
//! Nothing here shares code with the contraction engine or the jets beyond
//! the data types: the generalized delta is a signed permutation sum, the
//! contractions loop over every index tuple, and derivatives come from finite
//! differences of plain-real evaluation.

use std::f64::consts::PI;

use crate::error::Result;
use crate::expr::ExprNode;
use crate::geometry::{catalog, CurvatureBundle, MetricField, Params};
use crate::invariants::{lovelock_tensor, mixed_from_lower, normalization, pfaffian_invariant, raw_invariant};
use crate::jet::Jet2;
use crate::tensor::{PointTensor, Variance};
use crate::variational::Perturbation;

fn permutations(m: usize) -> Vec<(Vec<usize>, i64)> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..m).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, i64)>) {
        if k <= 1 {
            let mut inversions = 0;
            for i in 0..p.len() {
                for j in i + 1..p.len() {
                    if p[i] > p[j] {
                        inversions += 1;
                    }
                }
            }
            out.push((p.clone(), if inversions % 2 == 0 { 1 } else { -1 }));
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            if k % 2 == 0 {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    heap(m, &mut p, &mut out);
    out
}

/// `δ^{upper}_{lower} = Σ_σ sign(σ) Π_i δ^{u_i}_{l_σ(i)}`.
pub struct BruteDelta {
    perms: Vec<(Vec<usize>, i64)>,
}

impl BruteDelta {
    pub fn new(m: usize) -> Self {
        Self { perms: permutations(m) }
    }

    pub fn eval(&self, upper: &[usize], lower: &[usize]) -> i64 {
        self.perms
            .iter()
            .filter(|(s, _)| upper.iter().zip(s).all(|(&u, &si)| u == lower[si]))
            .map(|(_, sign)| sign)
            .sum()
    }
}

fn odometer(idx: &mut [usize], n: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < n {
            return true;
        }
        idx[d] = 0;
    }
    false
}

/// `raw_k` by summing over every `b, c ∈ [0, n)^{2k}`.
pub fn brute_raw(mixed: &PointTensor, k: usize) -> f64 {
    let n = mixed.dim();
    let m = 2 * k;
    let delta = BruteDelta::new(m);
    let mut b = vec![0usize; m];
    let mut total = 0.0;
    loop {
        let mut c = vec![0usize; m];
        loop {
            let d = delta.eval(&c, &b);
            if d != 0 {
                let mut prod = 1.0;
                for p in 0..k {
                    prod *= mixed.get(&[b[2 * p], b[2 * p + 1], c[2 * p], c[2 * p + 1]]);
                }
                total += d as f64 * prod;
            }
            if !odometer(&mut c, n) {
                break;
            }
        }
        if !odometer(&mut b, n) {
            break;
        }
    }
    total
}

/// `S_{2,k}` by summing over every index tuple (unsymmetrized).
pub fn brute_lovelock(mixed: &PointTensor, g: &PointTensor, k: usize) -> PointTensor {
    let n = mixed.dim();
    let m = 2 * k + 1;
    let delta = BruteDelta::new(m);
    let mut out = PointTensor::zeros(n, vec![Variance::Lower; 2]);
    for i1 in 0..n {
        for i2 in 0..n {
            let mut total = 0.0;
            let mut b = vec![0usize; m];
            loop {
                b[m - 1] = i1;
                let mut c = vec![0usize; m];
                loop {
                    let d = delta.eval(&c, &b);
                    if d != 0 {
                        let mut prod = g.get2(c[m - 1], i2);
                        for p in 0..k {
                            prod *= mixed.get(&[b[2 * p], b[2 * p + 1], c[2 * p], c[2 * p + 1]]);
                        }
                        total += d as f64 * prod;
                    }
                    if !odometer(&mut c, n) {
                        break;
                    }
                }
                // advance the free lower indices only
                if m == 1 || !odometer(&mut b[..m - 1], n) {
                    break;
                }
            }
            out.set(&[i1, i2], total);
        }
    }
    out
}

/// `|Rm|²`, `|Ric|²` and `s` computed directly from the covariant tensors.
pub fn curvature_norms(cb: &CurvatureBundle) -> (f64, f64, f64) {
    let n = cb.dim();
    let gi = |a: usize, b: usize| cb.g_inv.get2(a, b);
    let r = |a, b, c, d| cb.riem_low.get4(a, b, c, d);
    let mut rm2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut up = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            for s in 0..n {
                                for t in 0..n {
                                    up += gi(a, p) * gi(b, q) * gi(c, s) * gi(d, t) * r(p, q, s, t);
                                }
                            }
                        }
                    }
                    rm2 += r(a, b, c, d) * up;
                }
            }
        }
    }
    let mut ric = PointTensor::zeros(n, vec![Variance::Lower; 2]);
    let mut scalar = 0.0;
    for b in 0..n {
        for d in 0..n {
            let mut v = 0.0;
            for a in 0..n {
                for c in 0..n {
                    v += gi(a, c) * r(a, b, c, d);
                }
            }
            ric.set(&[b, d], v);
        }
    }
    for b in 0..n {
        for d in 0..n {
            scalar += gi(b, d) * ric.get2(b, d);
        }
    }
    let mut ric2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    ric2 += gi(a, c) * gi(b, d) * ric.get2(a, b) * ric.get2(c, d);
                }
            }
        }
    }
    (rm2, ric2, scalar)
}

/// The four-dimensional Gauss–Bonnet integrand `(|Rm|² − 4|Ric|² + s²) / (32π²)`.
pub fn gauss_bonnet_density(cb: &CurvatureBundle) -> f64 {
    let (rm2, ric2, s) = curvature_norms(cb);
    (rm2 - 4.0 * ric2 + s * s) / (32.0 * PI * PI)
}

/// The Lanczos tensor
/// `H_ab = 2(s R_ab − 2 R_ac R^c_b − 2 R_acbd R^cd + R_a^cde R_bcde) − ½ g_ab (|Rm|² − 4|Ric|² + s²)`,
/// which equals `−S_{2,2} / 8` under the crate conventions.
pub fn lanczos_tensor(cb: &CurvatureBundle) -> PointTensor {
    let n = cb.dim();
    let gi = |a: usize, b: usize| cb.g_inv.get2(a, b);
    let r = |a, b, c, d| cb.riem_low.get4(a, b, c, d);
    let (rm2, ric2, s) = curvature_norms(cb);
    let ric = &cb.ricci;
    // R^{cd}
    let ric_up = PointTensor::from_fn(n, vec![Variance::Upper; 2], |ix| {
        let mut v = 0.0;
        for p in 0..n {
            for q in 0..n {
                v += gi(ix[0], p) * gi(ix[1], q) * ric.get2(p, q);
            }
        }
        v
    });
    let gb = rm2 - 4.0 * ric2 + s * s;
    PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| {
        let (a, b) = (ix[0], ix[1]);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        let mut t3 = 0.0;
        for c in 0..n {
            for d in 0..n {
                t1 += ric.get2(a, c) * gi(c, d) * ric.get2(d, b);
                t2 += r(a, c, b, d) * ric_up.get2(c, d);
            }
        }
        for c in 0..n {
            for d in 0..n {
                for e in 0..n {
                    let mut up = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            for t in 0..n {
                                up += gi(c, p) * gi(d, q) * gi(e, t) * r(b, p, q, t);
                            }
                        }
                    }
                    t3 += r(a, c, d, e) * up;
                }
            }
        }
        2.0 * (s * ric.get2(a, b) - 2.0 * t1 - 2.0 * t2 + t3) - 0.5 * cb.g.get2(a, b) * gb
    })
}

/// The bundle of an algebraic curvature tensor over the Euclidean metric, as
/// at the centre of normal coordinates.
pub fn algebraic_bundle(r_low: &PointTensor) -> CurvatureBundle {
    let n = r_low.dim();
    let g = PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| f64::from(u8::from(ix[0] == ix[1])));
    let g_inv = PointTensor::from_fn(n, vec![Variance::Upper; 2], |ix| f64::from(u8::from(ix[0] == ix[1])));
    let riem_mixed = mixed_from_lower(r_low, &g_inv);
    let ricci = PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| {
        (0..n).map(|a| r_low.get4(a, ix[0], a, ix[1])).sum()
    });
    let scalar = (0..n).map(|b| ricci.get2(b, b)).sum();
    CurvatureBundle {
        point: Vec::new(),
        g,
        g_inv,
        gamma: PointTensor::zeros(n, vec![Variance::Upper, Variance::Lower, Variance::Lower]),
        riem_low: r_low.clone(),
        riem_mixed,
        ricci,
        scalar,
        det: 1.0,
        vol_density: 1.0,
    }
}

/// `S_{2,k}` from the classical formulas, for `k ≤ 2`: `g`, `−4(Ric − ½ s g)`
/// and `−8 H` with `H` the Lanczos tensor.
pub fn classical_lovelock(cb: &CurvatureBundle, k: usize) -> Option<PointTensor> {
    let n = cb.dim();
    match k {
        0 => Some(cb.g.clone()),
        1 => {
            let (_, _, s) = curvature_norms(cb);
            let ric = PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| {
                let mut v = 0.0;
                for a in 0..n {
                    for c in 0..n {
                        v += cb.g_inv.get2(a, c) * cb.riem_low.get4(a, ix[0], c, ix[1]);
                    }
                }
                v
            });
            Some(PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| {
                -4.0 * (ric.get2(ix[0], ix[1]) - 0.5 * s * cb.g.get2(ix[0], ix[1]))
            }))
        }
        2 => Some(lanczos_tensor(cb).scaled(-8.0)),
        _ => None,
    }
}

/// Comparison of the contraction engine with the brute-force loops at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineComparison {
    pub raw: f64,
    pub pfaffian: f64,
    pub lovelock: f64,
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(scale);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Relative differences between engine and brute force for `raw_k`, `P_k`
/// and (for `k ≤ 1`) `S_{2,k}`, measured against `max(|value|, ‖R‖^k)`.
pub fn compare_engine(cb: &CurvatureBundle, k: usize) -> EngineComparison {
    let scale = cb.riem_mixed.max_abs().powi(k as i32);
    let brute = brute_raw(&cb.riem_mixed, k);
    let raw = rel(raw_invariant(cb, k).scalar(), brute, scale);
    let pfaffian = rel(
        pfaffian_invariant(cb, k).scalar(),
        normalization(k) * brute,
        normalization(k) * scale,
    );
    let lovelock = if k <= 1 {
        let fast = lovelock_tensor(cb, k).value;
        let slow = brute_lovelock(&cb.riem_mixed, &cb.g, k).symmetrized().0;
        let sc = scale * cb.g.max_abs();
        fast.data()
            .iter()
            .zip(slow.data())
            .map(|(a, b)| rel(*a, *b, sc))
            .fold(0.0, f64::max)
    } else {
        let fast = lovelock_tensor(cb, k).value;
        let h = lanczos_tensor(cb).scaled(-8.0);
        let sc = fast.max_abs().max(h.max_abs()).max(scale * cb.g.max_abs());
        if sc == 0.0 {
            0.0
        } else {
            fast.max_abs_diff(&h) / sc
        }
    };
    EngineComparison { raw, pfaffian, lovelock }
}

/// One expression of the derivative corpus, with the chart it lives on.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub label: String,
    pub expr: ExprNode,
    pub metric: MetricField,
}

/// Every component of the catalog metrics and of seeded perturbations on them.
pub fn expression_corpus() -> Result<Vec<CorpusEntry>> {
    let names = [
        ("sphere2", Params::new()),
        ("sphere3", Params::new()),
        ("sphere4", Params::new()),
        ("conformal_sphere2", Params::from([("t".to_string(), 0.4)])),
        ("flat_torus(3)", Params::new()),
        ("perturbed_torus(2)", Params::new()),
        ("perturbed_torus(3)", Params::new()),
        ("perturbed_torus(4, 9)", Params::new()),
        ("product(sphere2, sign_flip(sphere2))", Params::new()),
        ("scaled(sphere3, 1.7)", Params::new()),
        ("cylinder(conformal_sphere2)", Params::from([("t".to_string(), 0.2)])),
    ];
    let mut out = Vec::new();
    for (name, params) in names {
        let m = catalog(name, &params)?;
        let n = m.dim();
        let mut push = |tag: &str, comps: &[ExprNode]| {
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    out.push(CorpusEntry {
                        label: format!("{name} {tag}[{i}{j}]"),
                        expr: comps[idx].clone(),
                        metric: m.clone(),
                    });
                    idx += 1;
                }
            }
        };
        push("g", m.packed_components());
        if let Ok(h) = Perturbation::random(&m, 3) {
            push("h", &h.components);
        }
    }
    Ok(out)
}

/// Largest normalized difference between jet derivatives and finite
/// differences over `count` seeded points:
/// `max |fd − jet| / max(1, max |jet channel|)` over gradient and Hessian.
pub fn jet_fd_error(entry: &CorpusEntry, count: usize, seed: u64) -> Result<f64> {
    let m = &entry.metric;
    let n = m.dim();
    let compiled = entry.expr.compile(&m.slot_names())?;
    let none = Params::new();
    let mut worst: f64 = 0.0;
    for x in m.chart().random_points(count, seed, 0.05) {
        let base = m.slot_values(&x, &none)?;
        let real = |dx: &[(usize, f64)]| -> Result<f64> {
            let mut s = base.clone();
            for &(i, d) in dx {
                s[i] += d;
            }
            Ok(compiled.eval_real(&s)?)
        };
        let mut jets = Vec::with_capacity(base.len());
        for (i, &v) in base.iter().enumerate() {
            jets.push(if i < n { Jet2::var(i, v, n)? } else { Jet2::constant(v, n)? });
        }
        let jet = compiled.eval_jet(&jets)?;
        let scale = (0..n)
            .map(|i| jet.grad()[i].abs())
            .chain((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| jet.hess(i, j).abs()))
            .fold(1.0, f64::max);
        for i in 0..n {
            let d1 = |h: f64| -> Result<f64> { Ok((real(&[(i, h)])? - real(&[(i, -h)])?) / (2.0 * h)) };
            let (a, b) = (d1(1e-4)?, d1(5e-5)?);
            let fd = (4.0 * b - a) / 3.0;
            worst = worst.max((fd - jet.grad()[i]).abs() / scale);
            for j in i..n {
                let d2 = |h: f64| -> Result<f64> {
                    Ok((real(&[(i, h), (j, h)])? - real(&[(i, h), (j, -h)])? - real(&[(i, -h), (j, h)])?
                        + real(&[(i, -h), (j, -h)])?)
                        / (4.0 * h * h))
                };
                let (a, b) = (d2(1e-3)?, d2(5e-4)?);
                let fd = (4.0 * b - a) / 3.0;
                worst = worst.max((fd - jet.hess(i, j)).abs() / scale);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use crate::tensor::random_curvature;

    #[test]
    fn classical_formulas_match_the_engine_on_algebraic_tensors() {
        for (n, seed) in [(3, 1), (4, 2), (5, 3)] {
            let cb = algebraic_bundle(&random_curvature(n, seed, 3).unwrap());
            for k in 0..=2 {
                let fast = lovelock_tensor(&cb, k).value;
                let slow = classical_lovelock(&cb, k).unwrap();
                let scale = cb.riem_low.max_abs().powi(k as i32);
                assert!(fast.max_abs_diff(&slow) <= 1e-12 * scale, "n {n} k {k}");
            }
        }
    }

    use super::*;
    use crate::geometry::round_sphere;

    #[test]
    fn brute_delta_matches_determinant() {
        let d = BruteDelta::new(3);
        assert_eq!(d.eval(&[0, 1, 2], &[0, 1, 2]), 1);
        assert_eq!(d.eval(&[1, 0, 2], &[0, 1, 2]), -1);
        assert_eq!(d.eval(&[0, 0, 2], &[0, 0, 2]), 0);
        assert_eq!(d.eval(&[0, 1, 3], &[0, 1, 2]), 0);
        let all = [0, 1, 2, 3];
        for a in all {
            for b in all {
                for c in all {
                    let u = [a, b, c];
                    let l = [c, a, b];
                    assert_eq!(d.eval(&u, &l), crate::tensor::gen_delta(&u, &l));
                }
            }
        }
    }

    #[test]
    fn brute_contractions_on_the_sphere() {
        let cb = round_sphere(2).unwrap().curvature_at(&[1.0, 1.0], &Params::new()).unwrap();
        assert!((brute_raw(&cb.riem_mixed, 1) - 4.0).abs() < 1e-12);
        assert_eq!(brute_raw(&cb.riem_mixed, 0), 1.0);
        let s0 = brute_lovelock(&cb.riem_mixed, &cb.g, 0);
        assert!(s0.max_abs_diff(&cb.g) < 1e-15);
    }

    #[test]
    fn engine_agrees_with_brute_force() {
        for name in ["perturbed_torus(4)", "product(sphere2, perturbed_torus(2))", "cylinder(sphere2)"] {
            let m = catalog(name, &Params::new()).unwrap();
            for x in m.chart().random_points(3, 8, 0.05) {
                let cb = m.curvature_at(&x, &Params::new()).unwrap();
                for k in 0..=2 {
                    let c = compare_engine(&cb, k);
                    assert!(c.raw < 1e-12 && c.pfaffian < 1e-12 && c.lovelock < 1e-12, "{name} k={k}: {c:?}");
                }
            }
        }
    }

    #[test]
    fn lovelock_two_matches_lanczos_in_dimension_five() {
        for name in ["product(sphere3, perturbed_torus(2))", "product(sphere2, perturbed_torus(3, 6))"] {
            let m = catalog(name, &Params::new()).unwrap();
            for x in m.chart().random_points(3, 4, 0.05) {
                let cb = m.curvature_at(&x, &Params::new()).unwrap();
                let s = lovelock_tensor(&cb, 2).value;
                assert!(s.max_abs() > 1e-3, "{name}: S_{{2,2}} should not vanish");
                let c = compare_engine(&cb, 2);
                assert!(c.lovelock < 1e-12 && c.raw < 1e-12, "{name}: {c:?}");
            }
        }
    }

    #[test]
    fn classical_integrand_in_dimension_four() {
        let m = catalog("product(sphere2, perturbed_torus(2))", &Params::new()).unwrap();
        for x in m.chart().random_points(5, 2, 0.05) {
            let cb = m.curvature_at(&x, &Params::new()).unwrap();
            let a = pfaffian_invariant(&cb, 2).scalar();
            let b = gauss_bonnet_density(&cb);
            assert!((a - b).abs() < 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn lanczos_vanishes_in_four_dimensions() {
        let m = catalog("perturbed_torus(4, 2)", &Params::new()).unwrap();
        let cb = m.curvature_at(&[0.3, 1.0, 2.0, 5.0], &Params::new()).unwrap();
        let h = lanczos_tensor(&cb);
        let (rm2, _, _) = curvature_norms(&cb);
        assert!(h.max_abs() < 1e-12 * rm2.max(1.0));
    }

    #[test]
    fn jets_match_finite_differences() {
        let corpus = expression_corpus().unwrap();
        assert!(corpus.len() > 50);
        for e in corpus.iter().take(40) {
            let err = jet_fd_error(e, 3, 1).unwrap();
            assert!(err < 1e-6, "{}: {err:e}", e.label);
        }
    }
}
