//! Dense point tensors and the index gymnastics built on them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("component count {found} does not match dim^rank = {expected}")]
    Shape { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("slot {slot} out of range for rank {rank}")]
    Slot { slot: usize, rank: usize },
    #[error("contraction plan error: {0}")]
    Plan(String),
    #[error("degenerate metric: |det| = {det:e} below {threshold:e}")]
    DegenerateMetric { det: f64, threshold: f64 },
    #[error("input is not symmetric (deviation {deviation:e})")]
    Asymmetric { deviation: f64 },
    #[error("pullback needs an all-lower-index tensor")]
    NotCovariant,
    #[error("degenerate request: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variance {
    Upper,
    Lower,
}

impl Variance {
    pub fn flipped(self) -> Self {
        match self {
            Self::Upper => Self::Lower,
            Self::Lower => Self::Upper,
        }
    }
}

/// Symmetry class a tensor claims to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryTag {
    /// Antisymmetric in (0,1) and (2,3), pair-symmetric, first Bianchi.
    AlgebraicCurvature,
    Symmetric2,
}

/// Tolerance for declared symmetries, in max norm relative to the largest component.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Dense row-major multi-index array at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTensor {
    dim: usize,
    variance: Vec<Variance>,
    data: Vec<f64>,
    tag: Option<SymmetryTag>,
}

impl PointTensor {
    pub fn new(dim: usize, variance: Vec<Variance>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = dim.pow(variance.len() as u32);
        if data.len() != expected {
            return Err(TensorError::Shape {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            dim,
            variance,
            data,
            tag: None,
        })
    }

    pub fn zeros(dim: usize, variance: Vec<Variance>) -> Self {
        let len = dim.pow(variance.len() as u32);
        Self {
            dim,
            variance,
            data: vec![0.0; len],
            tag: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dim: 1,
            variance: vec![],
            data: vec![value],
            tag: None,
        }
    }

    /// Build from a function of the multi-index.
    pub fn from_fn(dim: usize, variance: Vec<Variance>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dim, variance);
        let rank = t.rank();
        let mut idx = vec![0usize; rank];
        for flat in 0..t.data.len() {
            t.unflatten_into(flat, &mut idx);
            t.data[flat] = f(&idx);
        }
        t
    }

    /// Square matrix as a 2-tensor with the given variance.
    pub fn from_matrix(dim: usize, variance: [Variance; 2], rows: &[f64]) -> Result<Self, TensorError> {
        Self::new(dim, variance.to_vec(), rows.to_vec())
    }

    pub fn with_tag(mut self, tag: SymmetryTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn tag(&self) -> Option<SymmetryTag> {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_covariant(&self) -> bool {
        self.variance.iter().all(|v| *v == Variance::Lower)
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| {
            debug_assert!(i < self.dim);
            acc * self.dim + i
        })
    }

    fn unflatten_into(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in (0..idx.len()).rev() {
            idx[slot] = flat % self.dim;
            flat /= self.dim;
        }
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], value: f64) {
        let f = self.flat_index(idx);
        self.data[f] = value;
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn get4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let n = self.dim;
        self.data[((a * n + b) * n + c) * n + d]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm distance to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        if self.dim != other.dim || self.variance != other.variance {
            return Err(TensorError::Dimension("sum of tensors of different shape".into()));
        }
        let mut out = self.clone();
        out.tag = None;
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.rank(), 2, "as_matrix needs a 2-tensor");
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Max |t_ij - t_ji| for a 2-tensor.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rank(), 2);
        let n = self.dim;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                dev = dev.max((self.get2(i, j) - self.get2(j, i)).abs());
            }
        }
        dev
    }

    /// Symmetric part of a 2-tensor and the max-norm of the antisymmetric residue.
    pub fn symmetrized(&self) -> (Self, f64) {
        let n = self.dim;
        let mut out = self.clone();
        let mut residue: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (self.get2(i, j), self.get2(j, i));
                out.data[i * n + j] = 0.5 * (a + b);
                residue = residue.max(0.5 * (a - b).abs());
            }
        }
        out.tag = Some(SymmetryTag::Symmetric2);
        (out, residue)
    }
}

/// Deviations of a rank-4 tensor from the algebraic curvature symmetries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureSymmetryReport {
    pub antisym_first: f64,
    pub antisym_second: f64,
    pub pair_swap: f64,
    pub bianchi: f64,
    pub scale: f64,
}

impl CurvatureSymmetryReport {
    pub fn max_deviation(&self) -> f64 {
        self.antisym_first
            .max(self.antisym_second)
            .max(self.pair_swap)
            .max(self.bianchi)
    }

    /// Largest deviation relative to the largest component (absolute when the tensor vanishes).
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.max_deviation()
        } else {
            self.max_deviation() / self.scale
        }
    }
}

pub fn curvature_symmetries(t: &PointTensor) -> CurvatureSymmetryReport {
    assert_eq!(t.rank(), 4, "curvature symmetries need a rank-4 tensor");
    let n = t.dim();
    let mut r = CurvatureSymmetryReport {
        antisym_first: 0.0,
        antisym_second: 0.0,
        pair_swap: 0.0,
        bianchi: 0.0,
        scale: t.max_abs(),
    };
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let v = t.get4(a, b, c, d);
                    r.antisym_first = r.antisym_first.max((v + t.get4(b, a, c, d)).abs());
                    r.antisym_second = r.antisym_second.max((v + t.get4(a, b, d, c)).abs());
                    r.pair_swap = r.pair_swap.max((v - t.get4(c, d, a, b)).abs());
                    let cyc = v + t.get4(a, c, d, b) + t.get4(a, d, b, c);
                    r.bianchi = r.bianchi.max(cyc.abs());
                }
            }
        }
    }
    r
}

/// Exact integer determinant by fraction-free (Bareiss) elimination.
fn det_integer(mut m: Vec<i64>, size: usize) -> i64 {
    if size == 0 {
        return 1;
    }
    let mut sign = 1;
    let mut prev = 1i64;
    for k in 0..size - 1 {
        if m[k * size + k] == 0 {
            match (k + 1..size).find(|&r| m[r * size + k] != 0) {
                Some(r) => {
                    for c in 0..size {
                        m.swap(k * size + c, r * size + c);
                    }
                    sign = -sign;
                }
                None => return 0,
            }
        }
        let pivot = m[k * size + k];
        for i in k + 1..size {
            for j in k + 1..size {
                m[i * size + j] = (m[i * size + j] * pivot - m[i * size + k] * m[k * size + j]) / prev;
            }
        }
        prev = pivot;
    }
    sign * m[size * size - 1]
}

/// Generalized Kronecker delta δ^{upper}_{lower}: determinant of the matrix of single deltas.
pub fn gen_delta(upper: &[usize], lower: &[usize]) -> i64 {
    assert_eq!(upper.len(), lower.len(), "generalized delta needs equal index counts");
    let m = upper.len();
    let mut mat = vec![0i64; m * m];
    for (i, u) in upper.iter().enumerate() {
        for (j, l) in lower.iter().enumerate() {
            mat[i * m + j] = i64::from(u == l);
        }
    }
    det_integer(mat, m)
}

/// Determinant of a real square 2-tensor.
pub fn determinant(t: &PointTensor) -> f64 {
    t.as_matrix().determinant()
}

/// Inverse of a nondegenerate 2-tensor. Variance of both slots is flipped.
///
/// Degeneracy is judged against the product of diagonal magnitudes, so
/// coordinate-scaled metrics (sphere charts near their poles) are accepted.
pub fn inverse(t: &PointTensor) -> Result<PointTensor, TensorError> {
    let n = t.dim();
    let det = determinant(t);
    let diagonal: f64 = (0..n).map(|i| t.get2(i, i).abs()).product();
    let scale = if diagonal > 0.0 { diagonal } else { t.max_abs().powi(n as i32) };
    let threshold = 1e-12 * scale;
    if det == 0.0 || !det.is_finite() || det.abs() < threshold {
        return Err(TensorError::DegenerateMetric { det, threshold });
    }
    let inv = t
        .as_matrix()
        .try_inverse()
        .ok_or(TensorError::DegenerateMetric { det, threshold })?;
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(inv[(i, j)]);
        }
    }
    let variance = t.variance().iter().map(|v| v.flipped()).collect();
    PointTensor::new(n, variance, data)
}

/// Flip the variance of one slot by contracting with `metric` (raise→lower) or `inverse`.
pub fn raise_lower(
    t: &PointTensor,
    slot: usize,
    metric: &PointTensor,
    inverse_metric: &PointTensor,
) -> Result<PointTensor, TensorError> {
    if slot >= t.rank() {
        return Err(TensorError::Slot { slot, rank: t.rank() });
    }
    let n = t.dim();
    if metric.dim() != n || inverse_metric.dim() != n {
        return Err(TensorError::Dimension("metric and tensor dimensions differ".into()));
    }
    let det = determinant(metric);
    let threshold = 1e-12 * metric.max_abs().powi(n as i32);
    if det.abs() < threshold || det == 0.0 {
        return Err(TensorError::DegenerateMetric { det, threshold });
    }
    let mover = match t.variance()[slot] {
        Variance::Upper => metric,
        Variance::Lower => inverse_metric,
    };
    let mut variance = t.variance().to_vec();
    variance[slot] = variance[slot].flipped();
    let mut src = vec![0usize; t.rank()];
    let out = PointTensor::from_fn(n, variance, |idx| {
        src.copy_from_slice(idx);
        let mut acc = 0.0;
        for e in 0..n {
            src[slot] = e;
            acc += mover.get2(idx[slot], e) * t.get(&src);
        }
        acc
    });
    Ok(out)
}

/// A contracted pair of slots: (factor index, slot index) on each side.
pub type SlotPair = ((usize, usize), (usize, usize));

/// Full dense contraction of a product of tensors over the given slot pairs.
///
/// Unpaired slots appear in the output in declaration order (factor by
/// factor, slot by slot). An empty factor list is the scalar 1.
pub fn contract_product(factors: &[&PointTensor], pairing: &[SlotPair]) -> Result<PointTensor, TensorError> {
    if factors.is_empty() {
        if !pairing.is_empty() {
            return Err(TensorError::Plan("pairing given for an empty product".into()));
        }
        return Ok(PointTensor::scalar(1.0));
    }
    let n = factors[0].dim();
    if factors.iter().any(|f| f.dim() != n) {
        return Err(TensorError::Plan("factors have different dimensions".into()));
    }
    // Global slot numbering.
    let offsets: Vec<usize> = factors
        .iter()
        .scan(0, |acc, f| {
            let o = *acc;
            *acc += f.rank();
            Some(o)
        })
        .collect();
    let total: usize = factors.iter().map(|f| f.rank()).sum();
    let mut role = vec![None::<usize>; total]; // Some(pair id) if contracted
    for (pid, &((fa, sa), (fb, sb))) in pairing.iter().enumerate() {
        for &(f, s) in &[(fa, sa), (fb, sb)] {
            if f >= factors.len() || s >= factors[f].rank() {
                return Err(TensorError::Plan(format!("slot ({f}, {s}) does not exist")));
            }
            let g = offsets[f] + s;
            if role[g].is_some() {
                return Err(TensorError::Plan(format!("slot ({f}, {s}) paired twice")));
            }
            role[g] = Some(pid);
        }
        if (fa, sa) == (fb, sb) {
            return Err(TensorError::Plan("slot paired with itself".into()));
        }
        if factors[fa].variance()[sa] == factors[fb].variance()[sb] {
            return Err(TensorError::Plan(format!(
                "slots ({fa}, {sa}) and ({fb}, {sb}) have the same variance"
            )));
        }
    }
    let free: Vec<usize> = (0..total).filter(|g| role[*g].is_none()).collect();
    let variance: Vec<Variance> = free
        .iter()
        .map(|&g| {
            let f = offsets.iter().rposition(|&o| o <= g).unwrap();
            factors[f].variance()[g - offsets[f]]
        })
        .collect();
    let npairs = pairing.len();
    let inner = n.pow(npairs as u32);
    let mut global = vec![0usize; total];
    let mut pair_idx = vec![0usize; npairs];
    let out = PointTensor::from_fn(n, variance, |out_idx| {
        for (k, &g) in free.iter().enumerate() {
            global[g] = out_idx[k];
        }
        let mut acc = 0.0;
        for mut flat in 0..inner {
            for p in (0..npairs).rev() {
                pair_idx[p] = flat % n;
                flat /= n;
            }
            for g in 0..total {
                if let Some(pid) = role[g] {
                    global[g] = pair_idx[pid];
                }
            }
            let mut prod = 1.0;
            for (f, t) in factors.iter().enumerate() {
                prod *= t.get(&global[offsets[f]..offsets[f] + t.rank()]);
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        acc
    });
    Ok(out)
}

/// Kulkarni–Nomizu product of two symmetric 2-tensors.
pub fn kulkarni_nomizu(a: &PointTensor, b: &PointTensor) -> Result<PointTensor, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.dim() != b.dim() {
        return Err(TensorError::Dimension("Kulkarni–Nomizu needs two 2-tensors of equal dim".into()));
    }
    for t in [a, b] {
        let deviation = t.asymmetry();
        if deviation > SYMMETRY_TOL * t.max_abs().max(1.0) {
            return Err(TensorError::Asymmetric { deviation });
        }
    }
    let n = a.dim();
    let variance = vec![a.variance()[0], a.variance()[1], a.variance()[0], a.variance()[1]];
    let out = PointTensor::from_fn(n, variance, |ix| {
        let (i, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        a.get2(i, k) * b.get2(j, l) + a.get2(j, l) * b.get2(i, k)
            - a.get2(i, l) * b.get2(j, k)
            - a.get2(j, k) * b.get2(i, l)
    });
    Ok(out.with_tag(SymmetryTag::AlgebraicCurvature))
}

/// Random symmetric matrix with entries uniform in [-1, 1].
pub fn random_symmetric(dim: usize, rng: &mut impl Rng) -> PointTensor {
    let mut data = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let v = rng.random_range(-1.0..=1.0);
            data[i * dim + j] = v;
            data[j * dim + i] = v;
        }
    }
    PointTensor::new(dim, vec![Variance::Lower; 2], data).expect("square")
}

/// Sum of `terms` Kulkarni–Nomizu squares of seeded random symmetric matrices.
pub fn random_curvature(dim: usize, seed: u64, terms: usize) -> Result<PointTensor, TensorError> {
    if terms == 0 {
        return Err(TensorError::Degenerate("random_curvature needs at least one term".into()));
    }
    if dim == 0 {
        return Err(TensorError::Degenerate("dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = PointTensor::zeros(dim, vec![Variance::Lower; 4]);
    for _ in 0..terms {
        let a = random_symmetric(dim, &mut rng);
        acc = acc.add(&kulkarni_nomizu(&a, &a)?)?;
    }
    Ok(acc.with_tag(SymmetryTag::AlgebraicCurvature))
}

/// Identity 2-tensor (Euclidean metric) with the given variance.
pub fn identity(dim: usize, variance: [Variance; 2]) -> PointTensor {
    PointTensor::from_fn(dim, variance.to_vec(), |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 })
}
