//! Contraction invariants of the curvature tensor.
//!
//! `raw_k = Σ R^{b1b2}_{c1c2} ··· R^{b(2k-1)b(2k)}_{c(2k-1)c(2k)} δ^{c1…c2k}_{b1…b2k}` and the
//! 2-tensor `(S_{2,k})_{i1 i2} = Σ R ··· R g_{j i2} δ^{c1…c2k j}_{b1…b2k i1}`.
//!
//! The delta vanishes unless the lower indices are pairwise distinct and the
//! upper ones are a permutation of them, so the engine walks injective index
//! tuples and, for each, the permutations of that tuple weighted by the
//! precomputed delta of the permutation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::Result;
use crate::geometry::{restrict_equator, CurvatureBundle, MetricField, Params};
use crate::tensor::{gen_delta, PointTensor, Variance};

/// Longest index list the permutation tables cover.
const MAX_DELTA_ORDER: usize = 9;

/// `N_k = 1 / ((8π)^k k!)`, chosen so that `∫ P_k Vol` is the Euler characteristic.
pub fn normalization(k: usize) -> f64 {
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    1.0 / ((8.0 * PI).powi(k as i32) * fact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Tensor2,
}

/// Which invariant to compute: `P_k` (scalar) or `S_{2,k}` (2-tensor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvariantSpec {
    pub k: usize,
    pub rank: Rank,
    /// Multiply by `N_k`.
    pub normalized: bool,
}

impl InvariantSpec {
    pub fn pfaffian(k: usize) -> Self {
        Self { k, rank: Rank::Scalar, normalized: true }
    }

    pub fn lovelock(k: usize) -> Self {
        Self { k, rank: Rank::Tensor2, normalized: true }
    }

    pub fn raw(self) -> Self {
        Self { normalized: false, ..self }
    }

    /// `T(λ² g) = λ^w T(g)`; `-2k` for scalars, `2 - 2k` for 2-tensors.
    pub fn weight(&self) -> i64 {
        let k = self.k as i64;
        match self.rank {
            Rank::Scalar => -2 * k,
            Rank::Tensor2 => 2 - 2 * k,
        }
    }

    pub fn evaluate(&self, cb: &CurvatureBundle) -> InvariantOutput {
        let scale = if self.normalized { normalization(self.k) } else { 1.0 };
        let mut out = match self.rank {
            Rank::Scalar => raw_from_mixed(&cb.riem_mixed, self.k),
            Rank::Tensor2 => lovelock_from_mixed(&cb.riem_mixed, &cb.g, self.k),
        };
        if scale != 1.0 {
            out.value = out.value.scaled(scale);
            out.antisym_residue *= scale;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantOutput {
    /// Rank 0 for scalars, symmetrized rank 2 for tensors.
    pub value: PointTensor,
    /// Set when the delta vanishes by pigeonhole; `value` is then exactly zero.
    pub trivially_zero: bool,
    /// Antisymmetric part removed by symmetrization (0 for scalars).
    pub antisym_residue: f64,
}

impl InvariantOutput {
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.value.rank(), 0, "not a scalar invariant");
        self.value.data()[0]
    }

    fn zero_scalar() -> Self {
        Self {
            value: PointTensor::scalar(0.0),
            trivially_zero: true,
            antisym_residue: 0.0,
        }
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

/// Permutations π of `0..m` with weight `δ^{π(0)…π(m-1)}_{0…m-1}`.
fn perm_table(m: usize) -> &'static [(Vec<usize>, f64)] {
    static TABLES: [OnceLock<Vec<(Vec<usize>, f64)>>; MAX_DELTA_ORDER + 1] =
        [const { OnceLock::new() }; MAX_DELTA_ORDER + 1];
    assert!(m <= MAX_DELTA_ORDER, "delta order {m} is not supported");
    TABLES[m].get_or_init(|| {
        let id: Vec<usize> = (0..m).collect();
        permutations(m)
            .into_iter()
            .map(|p| {
                let w = gen_delta(&p, &id) as f64;
                (p, w)
            })
            .collect()
    })
}

/// Calls `f` on every tuple of `m` pairwise distinct indices below `n`, in lexicographic order.
fn for_each_injective(n: usize, m: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(n: usize, m: usize, tuple: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if tuple.len() == m {
            f(tuple);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                tuple.push(i);
                rec(n, m, tuple, used, f);
                tuple.pop();
                used[i] = false;
            }
        }
    }
    rec(n, m, &mut Vec::with_capacity(m), &mut vec![false; n], f);
}

#[inline]
fn curvature_product(r: &[f64], n: usize, b: &[usize], c: &[usize], k: usize) -> f64 {
    let mut prod = 1.0;
    for p in 0..k {
        let (b0, b1, c0, c1) = (b[2 * p], b[2 * p + 1], c[2 * p], c[2 * p + 1]);
        prod *= r[((b0 * n + b1) * n + c0) * n + c1];
        if prod == 0.0 {
            break;
        }
    }
    prod
}

/// `raw_k` from the pair-raised curvature `R^{ab}_{cd}`.
pub fn raw_from_mixed(mixed: &PointTensor, k: usize) -> InvariantOutput {
    let n = mixed.dim();
    if k == 0 {
        return InvariantOutput {
            value: PointTensor::scalar(1.0),
            trivially_zero: false,
            antisym_residue: 0.0,
        };
    }
    let m = 2 * k;
    if m > n {
        return InvariantOutput::zero_scalar();
    }
    let r = mixed.data();
    let perms = perm_table(m);
    let mut c = vec![0usize; m];
    let mut total = 0.0;
    for_each_injective(n, m, &mut |b| {
        for (p, w) in perms {
            for (cj, &pj) in c.iter_mut().zip(p) {
                *cj = b[pj];
            }
            total += w * curvature_product(r, n, b, &c, k);
        }
    });
    InvariantOutput {
        value: PointTensor::scalar(total),
        trivially_zero: false,
        antisym_residue: 0.0,
    }
}

/// `S_{2,k}` from `R^{ab}_{cd}` and the metric, symmetrized.
pub fn lovelock_from_mixed(mixed: &PointTensor, g: &PointTensor, k: usize) -> InvariantOutput {
    let n = mixed.dim();
    let m = 2 * k + 1;
    if m > n {
        return InvariantOutput {
            value: PointTensor::zeros(n, vec![Variance::Lower; 2]),
            trivially_zero: true,
            antisym_residue: 0.0,
        };
    }
    let r = mixed.data();
    let perms = perm_table(m);
    // t[j][i1] = Σ R ··· R δ^{c j}_{b i1}
    let mut t = vec![0.0; n * n];
    let mut c = vec![0usize; m];
    for_each_injective(n, m, &mut |lower| {
        let i1 = lower[m - 1];
        for (p, w) in perms {
            for (cj, &pj) in c.iter_mut().zip(p) {
                *cj = lower[pj];
            }
            let prod = curvature_product(r, n, lower, &c, k);
            if prod != 0.0 {
                t[c[m - 1] * n + i1] += w * prod;
            }
        }
    });
    let s = PointTensor::from_fn(n, vec![Variance::Lower; 2], |ix| {
        (0..n).map(|j| g.get2(j, ix[1]) * t[j * n + ix[0]]).sum()
    });
    let (value, antisym_residue) = s.symmetrized();
    InvariantOutput {
        value,
        trivially_zero: false,
        antisym_residue,
    }
}

/// `R^{ab}_{cd} = g^{ae} g^{bf} R_{efcd}`.
pub fn mixed_from_lower(r_low: &PointTensor, g_inv: &PointTensor) -> PointTensor {
    let n = r_low.dim();
    PointTensor::from_fn(
        n,
        vec![Variance::Upper, Variance::Upper, Variance::Lower, Variance::Lower],
        |ix| {
            let mut acc = 0.0;
            for e in 0..n {
                let ge = g_inv.get2(ix[0], e);
                if ge == 0.0 {
                    continue;
                }
                for f in 0..n {
                    acc += ge * g_inv.get2(ix[1], f) * r_low.get4(e, f, ix[2], ix[3]);
                }
            }
            acc
        },
    )
}

pub fn raw_invariant(cb: &CurvatureBundle, k: usize) -> InvariantOutput {
    InvariantSpec::pfaffian(k).raw().evaluate(cb)
}

pub fn pfaffian_invariant(cb: &CurvatureBundle, k: usize) -> InvariantOutput {
    InvariantSpec::pfaffian(k).evaluate(cb)
}

/// Unnormalized `S_{2,k}`.
pub fn lovelock_tensor(cb: &CurvatureBundle, k: usize) -> InvariantOutput {
    InvariantSpec::lovelock(k).raw().evaluate(cb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityReport {
    pub spec: InvariantSpec,
    pub lambda: f64,
    pub weight: i64,
    pub expected_ratio: f64,
    pub points: usize,
    /// max over points of `‖T(λ²g) − λ^w T(g)‖ / ‖λ^w T(g)‖` (absolute where the reference vanishes)
    pub max_rel_deviation: f64,
}

fn relative_deviation(got: &PointTensor, want: &PointTensor) -> f64 {
    let diff = got.max_abs_diff(want);
    let scale = want.max_abs();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Compares the invariant on `m` and on `λ² m` at `count` seeded points.
pub fn homogeneity_check(
    m: &MetricField,
    spec: InvariantSpec,
    lambda: f64,
    count: usize,
    seed: u64,
) -> Result<HomogeneityReport> {
    let scaled = m.scaled(lambda)?;
    let expected_ratio = lambda.powi(spec.weight() as i32);
    let none = Params::new();
    let mut worst: f64 = 0.0;
    for x in m.chart().random_points(count, seed, 0.05) {
        let base = spec.evaluate(&m.curvature_at(&x, &none)?).value;
        let got = spec.evaluate(&scaled.curvature_at(&x, &none)?).value;
        worst = worst.max(relative_deviation(&got, &base.scaled(expected_ratio)));
    }
    Ok(HomogeneityReport {
        spec,
        lambda,
        weight: spec.weight(),
        expected_ratio,
        points: count,
        max_rel_deviation: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub k: usize,
    pub points: usize,
    /// max |P_k(g + dt²)(x, 0) − P_k(g)(x)|
    pub pfaffian_deviation: f64,
    /// max |i*S_{2,k}(g + dt²) − S_{2,k}(g)|, both normalized by `N_k`
    pub lovelock_deviation: f64,
    /// Largest |S_{2,k}(g)| seen on the base, for context.
    pub lovelock_scale: f64,
}

/// Pointwise universality: invariants of the cylinder over `m`, pulled back
/// along the equator `t = 0`, against the invariants of `m`.
pub fn reduction_check(m: &MetricField, k: usize, count: usize, seed: u64) -> Result<ReductionReport> {
    let cyl = m.cylinder_extend()?;
    let none = Params::new();
    let (pk, sk) = (InvariantSpec::pfaffian(k), InvariantSpec::lovelock(k));
    let mut report = ReductionReport {
        k,
        points: count,
        pfaffian_deviation: 0.0,
        lovelock_deviation: 0.0,
        lovelock_scale: 0.0,
    };
    for x in m.chart().random_points(count, seed, 0.05) {
        let mut xe = x.clone();
        xe.push(0.0);
        let base = m.curvature_at(&x, &none)?;
        let ext = cyl.curvature_at(&xe, &none)?;
        let p_base = pk.evaluate(&base).scalar();
        let p_ext = restrict_equator(&pk.evaluate(&ext).value, m)?.data()[0];
        report.pfaffian_deviation = report.pfaffian_deviation.max((p_ext - p_base).abs());
        let s_base = sk.evaluate(&base).value;
        let s_ext = restrict_equator(&sk.evaluate(&ext).value, m)?;
        report.lovelock_deviation = report.lovelock_deviation.max(s_ext.max_abs_diff(&s_base));
        report.lovelock_scale = report.lovelock_scale.max(s_base.max_abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{catalog, flat_torus, round_sphere};
    use crate::tensor::{identity, random_curvature};

    fn at(m: &MetricField, x: &[f64]) -> CurvatureBundle {
        m.curvature_at(x, &Params::new()).unwrap()
    }

    #[test]
    fn delta_tables() {
        assert_eq!(perm_table(3).len(), 6);
        let total: f64 = perm_table(4).iter().map(|(_, w)| w).sum();
        assert_eq!(total, 0.0);
        assert!(perm_table(5).iter().all(|(_, w)| w.abs() == 1.0));
        let mut count = 0;
        for_each_injective(5, 3, &mut |_| count += 1);
        assert_eq!(count, 60);
    }

    #[test]
    fn sphere_values() {
        let s2 = round_sphere(2).unwrap();
        let cb = at(&s2, &[1.0, 2.0]);
        assert!((raw_invariant(&cb, 1).scalar() - 4.0).abs() < 1e-12);
        assert!((pfaffian_invariant(&cb, 1).scalar() - 1.0 / (2.0 * PI)).abs() < 1e-13);
        assert_eq!(raw_invariant(&cb, 0).scalar(), 1.0);
        let big = raw_invariant(&cb, 2);
        assert!(big.trivially_zero);
        assert_eq!(big.scalar(), 0.0);
        let s1 = lovelock_tensor(&cb, 1);
        assert!(s1.trivially_zero);
        assert_eq!(s1.value.max_abs(), 0.0);
        let s0 = lovelock_tensor(&cb, 0);
        assert_eq!(s0.value, cb.g.clone().symmetrized().0);
    }

    #[test]
    fn lovelock_on_three_sphere_is_four_g() {
        let s3 = round_sphere(3).unwrap();
        let cb = at(&s3, &[0.7, 1.3, 4.0]);
        let s = lovelock_tensor(&cb, 1);
        assert!(!s.trivially_zero);
        assert!(s.value.max_abs_diff(&cb.g.scaled(4.0)) < 1e-11);
        assert!(s.antisym_residue < 1e-12);
    }

    #[test]
    fn flat_invariants_vanish() {
        let t = flat_torus(4).unwrap();
        let cb = at(&t, &[0.1, 0.2, 0.3, 0.4]);
        for k in 1..=2 {
            assert_eq!(raw_invariant(&cb, k).scalar(), 0.0);
        }
        assert_eq!(lovelock_tensor(&cb, 1).value.max_abs(), 0.0);
    }

    #[test]
    fn lovelock_one_is_minus_four_einstein() {
        let m = catalog("perturbed_torus(3, 4)", &Params::new()).unwrap();
        for x in m.chart().random_points(5, 1, 0.0) {
            let cb = at(&m, &x);
            let einstein = cb.ricci.add(&cb.g.scaled(-0.5 * cb.scalar)).unwrap();
            let s = lovelock_tensor(&cb, 1).value;
            assert!(s.max_abs_diff(&einstein.scaled(-4.0)) < 1e-12 * einstein.max_abs().max(1.0));
        }
    }

    #[test]
    fn random_curvature_identity_in_dim_two_k() {
        let g = identity(4, [Variance::Lower; 2]);
        for seed in 0..5 {
            let r = random_curvature(4, seed, 3).unwrap();
            let s = lovelock_from_mixed(&r, &g, 2);
            assert!(s.trivially_zero);
            let r5 = random_curvature(5, seed, 3).unwrap();
            let s5 = lovelock_from_mixed(&r5, &identity(5, [Variance::Lower; 2]), 2);
            assert!(s5.value.max_abs() > 1e-3 * r5.max_abs().powi(2));
            assert!(s5.antisym_residue < 1e-10 * s5.value.max_abs());
        }
    }

    #[test]
    fn raising_matches_bundle() {
        let m = catalog("product(sphere2, perturbed_torus(2))", &Params::new()).unwrap();
        let cb = at(&m, &[1.0, 2.0, 3.0, 4.0]);
        let raised = mixed_from_lower(&cb.riem_low, &cb.g_inv);
        assert!(raised.max_abs_diff(&cb.riem_mixed) < 1e-13);
    }

    #[test]
    fn weights_and_homogeneity() {
        assert_eq!(InvariantSpec::pfaffian(2).weight(), -4);
        assert_eq!(InvariantSpec::lovelock(1).weight(), 0);
        assert_eq!(InvariantSpec::lovelock(0).weight(), 2);
        let s2 = round_sphere(2).unwrap();
        let r = homogeneity_check(&s2, InvariantSpec::pfaffian(1), 2.0, 10, 3).unwrap();
        assert_eq!(r.expected_ratio, 0.25);
        assert!(r.max_rel_deviation < 1e-12);
        let one = homogeneity_check(&s2, InvariantSpec::pfaffian(1), 1.0, 10, 3).unwrap();
        assert_eq!(one.max_rel_deviation, 0.0);
        let s3 = round_sphere(3).unwrap();
        let r = homogeneity_check(&s3, InvariantSpec::lovelock(1), 2.0, 10, 3).unwrap();
        assert_eq!(r.expected_ratio, 1.0);
        assert!(r.max_rel_deviation < 1e-12);
    }

    #[test]
    fn reduction_on_sphere_and_torus() {
        let s2 = round_sphere(2).unwrap();
        let r = reduction_check(&s2, 1, 20, 5).unwrap();
        assert!(r.pfaffian_deviation < 1e-10);
        assert!(r.lovelock_deviation < 1e-10);
        assert_eq!(r.lovelock_scale, 0.0);
        let t = flat_torus(2).unwrap();
        let r = reduction_check(&t, 0, 5, 5).unwrap();
        assert_eq!(r.pfaffian_deviation, 0.0);
        assert_eq!(r.lovelock_deviation, 0.0);
    }
}
