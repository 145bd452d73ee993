//! Second-order forward-mode jets.
//!
//! A [`Jet2`] carries the value, gradient and Hessian of a scalar function of
//! `nvars` real variables at one point. Arithmetic is truncated Taylor
//! arithmetic to total order two, which is exactly what the curvature tensor
//! needs from the metric components.
//!
//! The Hessian is stored as a packed upper triangle, so `hess(i, j)` and
//! `hess(j, i)` read the same slot and symmetry holds bit-for-bit.

use std::fmt;

use thiserror::Error;

/// Largest number of variables a jet can carry.
pub const MAX_VARS: usize = 8;
const PACKED: usize = MAX_VARS * (MAX_VARS + 1) / 2;

/// Divisors (and `abs` arguments) smaller than this in magnitude are rejected.
pub const DIVISION_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
    #[error("jets must have between 1 and {MAX_VARS} variables, got {0}")]
    BadVariableCount(usize),
    #[error("jet operands disagree on variable count ({left} vs {right})")]
    VariableCountMismatch { left: usize, right: usize },
    #[error("singular division: divisor {value:e} is below the guard threshold")]
    SingularDivision { value: f64 },
    #[error("{func} is not defined (or not differentiable) at {value:e}")]
    Domain { func: &'static str, value: f64 },
}

/// Arithmetic operators understood by [`jet_arith`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
}

/// Elementary functions understood by [`jet_transcendental`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transcendental {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    AbsGuarded,
    /// `x^k` for a constant exponent `k`.
    PowConst,
}

impl Transcendental {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Sqrt => "sqrt",
            Self::Tanh => "tanh",
            Self::AbsGuarded => "abs",
            Self::PowConst => "pow",
        }
    }
}

/// Value, gradient and Hessian of a scalar function of `nvars` variables.
#[derive(Clone, Copy)]
pub struct Jet2 {
    nvars: usize,
    value: f64,
    grad: [f64; MAX_VARS],
    hess: [f64; PACKED],
}

#[inline]
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // row i of the upper triangle starts at i*n - i*(i-1)/2
    i * (2 * n + 1 - i) / 2 + (j - i)
}

#[inline]
fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl Jet2 {
    /// Seed jet for variable `index`: grad is the standard basis vector, hess is zero.
    pub fn var(index: usize, x: f64, nvars: usize) -> Result<Self, JetError> {
        Self::check_nvars(nvars)?;
        if index >= nvars {
            return Err(JetError::IndexOutOfRange { index, nvars });
        }
        let mut jet = Self::constant(x, nvars)?;
        jet.grad[index] = 1.0;
        Ok(jet)
    }

    pub fn constant(value: f64, nvars: usize) -> Result<Self, JetError> {
        Self::check_nvars(nvars)?;
        Ok(Self::zeroed(value, nvars))
    }

    fn check_nvars(nvars: usize) -> Result<(), JetError> {
        if nvars == 0 || nvars > MAX_VARS {
            Err(JetError::BadVariableCount(nvars))
        } else {
            Ok(())
        }
    }

    #[inline]
    fn zeroed(value: f64, nvars: usize) -> Self {
        Self {
            nvars,
            value,
            grad: [0.0; MAX_VARS],
            hess: [0.0; PACKED],
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad[..self.nvars]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.nvars && j < self.nvars, "hessian index out of range");
        self.hess[packed_index(self.nvars, i, j)]
    }

    /// Dense row-major copy of the Hessian.
    pub fn hess_matrix(&self) -> Vec<f64> {
        let n = self.nvars;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.hess(i, j);
            }
        }
        out
    }

    fn same_shape(&self, other: &Self) -> Result<(), JetError> {
        if self.nvars == other.nvars {
            Ok(())
        } else {
            Err(JetError::VariableCountMismatch {
                left: self.nvars,
                right: other.nvars,
            })
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, JetError> {
        self.same_shape(other)?;
        let n = self.nvars;
        let mut out = Self::zeroed(self.value + other.value, n);
        for i in 0..n {
            out.grad[i] = self.grad[i] + other.grad[i];
        }
        for p in 0..packed_len(n) {
            out.hess[p] = self.hess[p] + other.hess[p];
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, JetError> {
        self.same_shape(other)?;
        let n = self.nvars;
        let mut out = Self::zeroed(self.value - other.value, n);
        for i in 0..n {
            out.grad[i] = self.grad[i] - other.grad[i];
        }
        for p in 0..packed_len(n) {
            out.hess[p] = self.hess[p] - other.hess[p];
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, JetError> {
        self.same_shape(other)?;
        let n = self.nvars;
        let (a, b) = (self.value, other.value);
        let mut out = Self::zeroed(a * b, n);
        for i in 0..n {
            out.grad[i] = a * other.grad[i] + b * self.grad[i];
        }
        let mut p = 0;
        for i in 0..n {
            for j in i..n {
                out.hess[p] = a * other.hess[p]
                    + b * self.hess[p]
                    + (self.grad[i] * other.grad[j] + other.grad[i] * self.grad[j]);
                p += 1;
            }
        }
        Ok(out)
    }

    pub fn try_div(&self, other: &Self) -> Result<Self, JetError> {
        self.same_shape(other)?;
        let b = other.value;
        if b.abs() < DIVISION_GUARD {
            return Err(JetError::SingularDivision { value: b });
        }
        // a/b = a * (1/b), but the value channel is computed as a plain quotient
        // so it matches real-valued evaluation exactly.
        let recip = other.unary(1.0 / b, -1.0 / (b * b), 2.0 / (b * b * b));
        let mut out = self.try_mul(&recip)?;
        out.value = self.value / b;
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        let n = self.nvars;
        let mut out = Self::zeroed(-self.value, n);
        for i in 0..n {
            out.grad[i] = -self.grad[i];
        }
        for p in 0..packed_len(n) {
            out.hess[p] = -self.hess[p];
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        let n = self.nvars;
        let mut out = Self::zeroed(c * self.value, n);
        for i in 0..n {
            out.grad[i] = c * self.grad[i];
        }
        for p in 0..packed_len(n) {
            out.hess[p] = c * self.hess[p];
        }
        out
    }

    /// `self + c` for a constant `c`; only the value changes.
    pub fn offset(&self, c: f64) -> Self {
        let mut out = *self;
        out.value = self.value + c;
        out
    }

    /// Chain rule for `f(self)` given `f(v)`, `f'(v)` and `f''(v)`.
    #[inline]
    fn unary(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let n = self.nvars;
        let mut out = Self::zeroed(f0, n);
        for i in 0..n {
            out.grad[i] = f1 * self.grad[i];
        }
        let mut p = 0;
        for i in 0..n {
            for j in i..n {
                out.hess[p] = f1 * self.hess[p] + f2 * self.grad[i] * self.grad[j];
                p += 1;
            }
        }
        out
    }

    pub fn sin(&self) -> Self {
        let (s, c) = sin_cos_value(self.value);
        self.unary(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = sin_cos_value(self.value);
        self.unary(c, -s, -c)
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.unary(e, e, e)
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let v = self.value;
        if v <= 0.0 {
            return Err(JetError::Domain { func: "ln", value: v });
        }
        Ok(self.unary(v.ln(), 1.0 / v, -1.0 / (v * v)))
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        let v = self.value;
        if v <= 0.0 {
            return Err(JetError::Domain { func: "sqrt", value: v });
        }
        let r = v.sqrt();
        Ok(self.unary(r, 0.5 / r, -0.25 / (r * v)))
    }

    pub fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.unary(t, d, -2.0 * t * d)
    }

    /// `|x|`, rejected where it is not differentiable.
    pub fn abs_guarded(&self) -> Result<Self, JetError> {
        let v = self.value;
        if v.abs() < DIVISION_GUARD {
            return Err(JetError::Domain { func: "abs", value: v });
        }
        let s = v.signum();
        Ok(self.unary(v.abs(), s, 0.0))
    }

    /// `x^k` for constant `k`.
    pub fn pow_const(&self, k: f64) -> Result<Self, JetError> {
        let v = self.value;
        let (f0, f1, f2) = pow_derivatives(v, k)?;
        Ok(self.unary(f0, f1, f2))
    }
}

/// Integer exponents in this range are evaluated with `powi`.
fn as_small_int(k: f64) -> Option<i32> {
    if k.fract() == 0.0 && k.abs() <= 64.0 {
        Some(k as i32)
    } else {
        None
    }
}

/// `(sin v, cos v)` for both the jet and the plain-real evaluators. Kept out
/// of line so that both see the same libm calls: the compiler may otherwise
/// fuse the pair into `sincos` in one caller and not the other, and the two
/// can differ in the last bit.
#[inline(never)]
pub fn sin_cos_value(v: f64) -> (f64, f64) {
    (v.sin(), v.cos())
}

/// `x^k` as used by both the jet and the plain-real evaluators.
pub fn pow_value(v: f64, k: f64) -> Result<f64, JetError> {
    pow_derivatives(v, k).map(|(f0, _, _)| f0)
}

fn pow_derivatives(v: f64, k: f64) -> Result<(f64, f64, f64), JetError> {
    match as_small_int(k) {
        Some(0) => Ok((1.0, 0.0, 0.0)),
        Some(m) => {
            if m < 0 && v.abs() < DIVISION_GUARD {
                return Err(JetError::SingularDivision { value: v });
            }
            let f0 = v.powi(m);
            let f1 = if m == 1 { 1.0 } else { k * v.powi(m - 1) };
            let f2 = match m {
                1 => 0.0,
                2 => 2.0,
                _ => k * (k - 1.0) * v.powi(m - 2),
            };
            Ok((f0, f1, f2))
        }
        None => {
            if v <= 0.0 {
                return Err(JetError::Domain { func: "pow", value: v });
            }
            Ok((
                v.powf(k),
                k * v.powf(k - 1.0),
                k * (k - 1.0) * v.powf(k - 2.0),
            ))
        }
    }
}

/// Seed jet for variable `i` at `x` among `n` variables.
pub fn jet_var(i: usize, x: f64, n: usize) -> Result<Jet2, JetError> {
    Jet2::var(i, x, n)
}

/// Binary (or, for `Neg`, unary in `a`) jet arithmetic.
pub fn jet_arith(op: ArithOp, a: &Jet2, b: &Jet2) -> Result<Jet2, JetError> {
    match op {
        ArithOp::Add => a.try_add(b),
        ArithOp::Sub => a.try_sub(b),
        ArithOp::Mul => a.try_mul(b),
        ArithOp::Div => a.try_div(b),
        ArithOp::Neg => Ok(a.neg()),
    }
}

/// Elementary function of a jet; `k` is the exponent for `PowConst`.
pub fn jet_transcendental(f: Transcendental, a: &Jet2, k: Option<f64>) -> Result<Jet2, JetError> {
    match f {
        Transcendental::Sin => Ok(a.sin()),
        Transcendental::Cos => Ok(a.cos()),
        Transcendental::Exp => Ok(a.exp()),
        Transcendental::Ln => a.ln(),
        Transcendental::Sqrt => a.sqrt(),
        Transcendental::Tanh => Ok(a.tanh()),
        Transcendental::AbsGuarded => a.abs_guarded(),
        Transcendental::PowConst => a.pow_const(k.unwrap_or(1.0)),
    }
}

impl fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet2")
            .field("value", &self.value)
            .field("grad", &self.grad())
            .field("hess", &self.hess_matrix())
            .finish()
    }
}

impl PartialEq for Jet2 {
    fn eq(&self, other: &Self) -> bool {
        let n = self.nvars;
        n == other.nvars
            && self.value == other.value
            && self.grad() == other.grad()
            && self.hess[..packed_len(n)] == other.hess[..packed_len(n)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn seeds() {
        let x = jet_var(0, 3.0, 2).unwrap();
        assert_eq!(x.value(), 3.0);
        assert_eq!(x.grad(), &[1.0, 0.0]);
        assert_eq!(x.hess_matrix(), vec![0.0; 4]);
        let y = jet_var(1, 0.0, 2).unwrap();
        assert_eq!(y.grad(), &[0.0, 1.0]);
        assert_eq!(
            jet_var(2, 1.0, 2).unwrap_err(),
            JetError::IndexOutOfRange { index: 2, nvars: 2 }
        );
        assert!(Jet2::constant(1.0, 0).is_err());
        assert!(Jet2::constant(1.0, MAX_VARS + 1).is_err());
    }

    #[test]
    fn packed_layout_is_a_bijection() {
        for n in 1..=MAX_VARS {
            let mut seen = vec![false; packed_len(n)];
            for i in 0..n {
                for j in i..n {
                    let p = packed_index(n, i, j);
                    assert!(!seen[p]);
                    seen[p] = true;
                    assert_eq!(p, packed_index(n, j, i));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn square_and_negation() {
        let x = jet_var(0, 2.0, 1).unwrap();
        let sq = jet_arith(ArithOp::Mul, &x, &x).unwrap();
        assert_eq!((sq.value(), sq.grad()[0], sq.hess(0, 0)), (4.0, 4.0, 2.0));
        let z = jet_arith(ArithOp::Add, &x, &x.neg()).unwrap();
        assert_eq!(z, Jet2::constant(0.0, 1).unwrap());
    }

    #[test]
    fn reciprocal() {
        // d/dx 1/x = -1/x^2, d2/dx2 = 2/x^3 at x = 2.
        let one = Jet2::constant(1.0, 1).unwrap();
        let x = jet_var(0, 2.0, 1).unwrap();
        let r = jet_arith(ArithOp::Div, &one, &x).unwrap();
        assert_eq!((r.value(), r.grad()[0], r.hess(0, 0)), (0.5, -0.25, 0.25));
        let zero = Jet2::constant(0.0, 1).unwrap();
        assert!(matches!(
            jet_arith(ArithOp::Div, &one, &zero),
            Err(JetError::SingularDivision { .. })
        ));
    }

    #[test]
    fn mismatched_operands_are_rejected() {
        let a = jet_var(0, 1.0, 1).unwrap();
        let b = jet_var(0, 1.0, 2).unwrap();
        assert!(matches!(
            jet_arith(ArithOp::Mul, &a, &b),
            Err(JetError::VariableCountMismatch { .. })
        ));
    }

    #[test]
    fn elementary_functions() {
        let x = jet_var(0, FRAC_PI_2, 1).unwrap();
        let s = jet_transcendental(Transcendental::Sin, &x, None).unwrap();
        assert_eq!(s.value(), 1.0);
        assert!(s.grad()[0].abs() < 1e-16);
        assert_eq!(s.hess(0, 0), -1.0);

        let e = jet_transcendental(Transcendental::Exp, &Jet2::constant(0.0, 1).unwrap(), None)
            .unwrap();
        assert_eq!((e.value(), e.grad()[0], e.hess(0, 0)), (1.0, 0.0, 0.0));

        // x^3 at 2: 8, 3x^2 = 12, 6x = 12.
        let x = jet_var(0, 2.0, 1).unwrap();
        let c = jet_transcendental(Transcendental::PowConst, &x, Some(3.0)).unwrap();
        assert_eq!((c.value(), c.grad()[0], c.hess(0, 0)), (8.0, 12.0, 12.0));

        let neg = jet_var(0, -1.0, 1).unwrap();
        assert!(neg.ln().is_err());
        assert!(neg.sqrt().is_err());
        assert!(neg.pow_const(0.5).is_err());
        assert!(Jet2::constant(0.0, 1).unwrap().abs_guarded().is_err());
        assert_eq!(neg.abs_guarded().unwrap().grad()[0], -1.0);
    }

    #[test]
    fn mixed_partials_of_product() {
        // f = x*y*y at (2, 3): f_xy = 2y = 6, f_yy = 2x = 4.
        let x = jet_var(0, 2.0, 2).unwrap();
        let y = jet_var(1, 3.0, 2).unwrap();
        let f = x.try_mul(&y).unwrap().try_mul(&y).unwrap();
        assert_eq!(f.value(), 18.0);
        assert_eq!(f.grad(), &[9.0, 12.0]);
        assert_eq!(f.hess(0, 0), 0.0);
        assert_eq!(f.hess(0, 1), 6.0);
        assert_eq!(f.hess(1, 0), 6.0);
        assert_eq!(f.hess(1, 1), 4.0);
    }
}
