//! Double-double arithmetic for evaluating a tape with about 32 significant
//! digits.
//!
//! Central differences of an `f64` loss cannot resolve gradient entries much
//! below `ulp(loss) / eps`; a shadow evaluation in this type removes that
//! floor so only the truncation error of the difference quotient remains.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::graph::{lines, Axis, OpKind, Var};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

// 1/n! for n = 2..=10
const INV_FACT: [Dd; 9] = [
    Dd { hi: 0.5, lo: 0.0 },
    Dd {
        hi: 0.16666666666666666,
        lo: 9.25185853854297e-18,
    },
    Dd {
        hi: 0.041666666666666664,
        lo: 2.3129646346357427e-18,
    },
    Dd {
        hi: 0.008333333333333333,
        lo: 1.1564823173178714e-19,
    },
    Dd {
        hi: 0.001388888888888889,
        lo: -5.300543954373577e-20,
    },
    Dd {
        hi: 0.0001984126984126984,
        lo: 1.7209558293420705e-22,
    },
    Dd {
        hi: 2.48015873015873e-05,
        lo: 2.1511947866775882e-23,
    },
    Dd {
        hi: 2.7557319223985893e-06,
        lo: -1.858393274046472e-22,
    },
    Dd {
        hi: 2.755731922398589e-07,
        lo: 2.3767714622250297e-23,
    },
];

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    if !s.is_finite() {
        return (s, 0.0);
    }
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    if !s.is_finite() {
        return (s, 0.0);
    }
    (s, b - (s - a))
}

#[cfg(target_feature = "fma")]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    if !p.is_finite() {
        return (p, 0.0);
    }
    (p, a.mul_add(b, -p))
}

// Dekker's product; a software `mul_add` is far slower than the splitting.
#[cfg(not(target_feature = "fma"))]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    fn split(x: f64) -> (f64, f64) {
        let t = 134217729.0 * x;
        let hi = t - (t - x);
        (hi, x - hi)
    }
    let p = a * b;
    if !p.is_finite() || a.abs() > 1e290 || b.abs() > 1e290 {
        return (p, 0.0);
    }
    let ((ah, al), (bh, bl)) = (split(a), split(b));
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const NEG_INFINITY: Dd = Dd {
        hi: f64::NEG_INFINITY,
        lo: 0.0,
    };

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact multiplication by `2^k`.
    fn ldexp(self, k: i32) -> Self {
        let (a, b) = (k / 2, k - k / 2);
        let (fa, fb) = (2f64.powi(a), 2f64.powi(b));
        Dd {
            hi: self.hi * fa * fb,
            lo: self.lo * fa * fb,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.78 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return Dd::ZERO;
        }
        // x = k ln2 + r, then e^r = (e^(r / 2^10))^(2^10) built on expm1.
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).ldexp(-10);
        let mut power = r;
        let mut p = r;
        for c in INV_FACT {
            power = power * r;
            p = p + power * c;
        }
        for _ in 0..10 {
            p = p.ldexp(1) + p * p;
        }
        (p + Dd::ONE).ldexp(k as i32)
    }

    /// Natural logarithm by one Newton step on `exp` from the `f64` value.
    pub fn ln(self) -> Self {
        if self.hi == 0.0 {
            return Dd::NEG_INFINITY;
        }
        if !(self.hi > 0.0) {
            return Dd::from(f64::NAN);
        }
        if self.hi.is_infinite() {
            return self;
        }
        let y = Dd::from(self.hi.ln());
        y + self * (-y).exp() - Dd::ONE
    }

    pub fn tanh(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).tanh();
        }
        let e = (self.ldexp(1)).exp();
        if e.hi.is_infinite() {
            return Dd::ONE;
        }
        Dd::ONE - Dd::from(2.0) / (e + Dd::ONE)
    }

    pub fn sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            Dd::ONE / (Dd::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Dd::ONE + e)
        }
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, rhs: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        if !s1.is_finite() {
            return Dd::from(s1);
        }
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, rhs: Dd) -> Dd {
        self + (-rhs)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, rhs: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, rhs.hi);
        if !p1.is_finite() {
            return Dd::from(p1);
        }
        let (hi, lo) = quick_two_sum(p1, p2 + (self.hi * rhs.lo + self.lo * rhs.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let q1 = self.hi / rhs.hi;
        if !q1.is_finite() {
            return Dd::from(q1);
        }
        let r = self - rhs * Dd::from(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Dd::from(q2);
        let q3 = r.hi / rhs.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

/// Shape and double-double data of an already evaluated node.
pub(super) type Operand<'a> = (&'a [Dd], usize, usize);

fn at(x: Operand, i: usize, j: usize) -> Dd {
    let (data, r, c) = x;
    data[if r == 1 { 0 } else { i } * c + if c == 1 { 0 } else { j }]
}

/// Recomputes the value of `op` (output `rows x cols`) from double-double
/// operands. Input and parameter nodes are converted by the caller.
pub(super) fn forward<'a>(op: &OpKind, rows: usize, cols: usize, arg: impl Fn(Var) -> Operand<'a>) -> Vec<Dd> {
    let map = |a: Var, f: fn(Dd) -> Dd| arg(a).0.iter().map(|&x| f(x)).collect();
    match op {
        OpKind::Input | OpKind::Param(_) => unreachable!("leaf values are converted directly"),
        OpKind::MatMul(a, b) => {
            let ((av, _, k), (bv, _, n)) = (arg(*a), arg(*b));
            let mut out = vec![Dd::ZERO; rows * cols];
            for i in 0..rows {
                for p in 0..k {
                    let x = av[i * k + p];
                    for j in 0..n {
                        out[i * n + j] = out[i * n + j] + x * bv[p * n + j];
                    }
                }
            }
            out
        }
        OpKind::Add(a, b) | OpKind::Mul(a, b) => {
            let (x, y) = (arg(*a), arg(*b));
            let add = matches!(op, OpKind::Add(..));
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let (u, v) = (at(x, i, j), at(y, i, j));
                    out.push(if add { u + v } else { u * v });
                }
            }
            out
        }
        OpKind::Scale(a, s) => {
            let s = Dd::from(*s);
            arg(*a).0.iter().map(|&x| x * s).collect()
        }
        OpKind::Sigmoid(a) => map(*a, Dd::sigmoid),
        OpKind::Tanh(a) => map(*a, Dd::tanh),
        OpKind::Softmax(a, axis) => {
            let (x, r, c) = arg(*a);
            let mut out = x.to_vec();
            for line in lines(r, c, *axis) {
                let m = line.iter().fold(Dd::NEG_INFINITY, |m, &i| m.max(x[i]));
                let mut z = Dd::ZERO;
                for &i in &line {
                    out[i] = (x[i] - m).exp();
                    z = z + out[i];
                }
                for &i in &line {
                    out[i] = out[i] / z;
                }
            }
            out
        }
        OpKind::LogSumExp(a, axis) => {
            let (x, r, c) = arg(*a);
            lines(r, c, *axis)
                .into_iter()
                .map(|line| {
                    let m = line.iter().fold(Dd::NEG_INFINITY, |m, &i| m.max(x[i]));
                    if m.hi == f64::NEG_INFINITY {
                        return m;
                    }
                    let s = line.iter().fold(Dd::ZERO, |s, &i| s + (x[i] - m).exp());
                    m + s.ln()
                })
                .collect()
        }
        OpKind::Mean(a, axis) => {
            let (x, r, c) = arg(*a);
            lines(r, c, *axis)
                .into_iter()
                .map(|line| {
                    let s = line.iter().fold(Dd::ZERO, |s, &i| s + x[i]);
                    s / Dd::from(line.len() as f64)
                })
                .collect()
        }
        OpKind::Sum(a) => vec![arg(*a).0.iter().fold(Dd::ZERO, |s, &x| s + x)],
        OpKind::Concat(parts, axis) => {
            let mut out = Vec::with_capacity(rows * cols);
            match axis {
                Axis::Rows => parts.iter().for_each(|&p| out.extend_from_slice(arg(p).0)),
                Axis::Cols => {
                    for i in 0..rows {
                        for &p in parts {
                            let (x, _, c) = arg(p);
                            out.extend_from_slice(&x[i * c..(i + 1) * c]);
                        }
                    }
                }
            }
            out
        }
        OpKind::Slice { src, axis, start } => {
            let (x, _, c) = arg(*src);
            match axis {
                Axis::Rows => x[start * c..(start + rows) * c].to_vec(),
                Axis::Cols => (0..rows)
                    .flat_map(|i| x[i * c + start..i * c + start + cols].iter().copied())
                    .collect(),
            }
        }
        OpKind::Lookup { table, ids } => {
            let (x, _, c) = arg(*table);
            ids.iter()
                .flat_map(|&id| x[id * c..(id + 1) * c].iter().copied())
                .collect()
        }
        OpKind::MaxOverTime { src, argmax } => {
            let (x, _, c) = arg(*src);
            argmax.iter().enumerate().map(|(j, &i)| x[i * c + j]).collect()
        }
        OpKind::Dropout { src, mask } => arg(*src).0.iter().zip(mask).map(|(&x, &m)| x * Dd::from(m)).collect(),
        OpKind::Transpose(a) => {
            let (x, r, c) = arg(*a);
            let mut out = vec![Dd::ZERO; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
            out
        }
        OpKind::Reshape(a) => arg(*a).0.to_vec(),
        OpKind::Pick { src, indices } => {
            let x = arg(*src).0;
            indices.iter().map(|&i| x[i]).collect()
        }
    }
}
