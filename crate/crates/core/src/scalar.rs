//! Scalar abstraction shared by kernels, solvers and expansions.
//!
//! Everything numeric is generic over [`Real`]. `f64` is the everyday choice.
//! [`Mp`] is a binary multiprecision float used by the study harness: the
//! exponential error decay of smooth kernels reaches the `f64` rounding floor
//! after one or two refinement levels, so rate studies need more bits.

use std::cell::{Cell, RefCell};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use astro_float::{BigFloat, Consts, RoundingMode};

pub trait Real:
    Clone
    + fmt::Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn is_finite(&self) -> bool;
    /// Unit roundoff of the working precision.
    fn epsilon() -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    fn powi(&self, n: i32) -> Self {
        let mut base = if n < 0 {
            Self::one() / self.clone()
        } else {
            self.clone()
        };
        let mut k = n.unsigned_abs();
        let mut acc = Self::one();
        while k > 0 {
            if k & 1 == 1 {
                acc *= base.clone();
            }
            k >>= 1;
            if k > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }

    /// `self^p` for `self > 0`; half-integer exponents avoid the logarithm.
    fn powf(&self, p: f64) -> Self {
        let twice = 2.0 * p;
        if twice.fract() == 0.0 && twice.abs() < i32::MAX as f64 {
            let twice = twice as i32;
            if twice % 2 == 0 {
                self.powi(twice / 2)
            } else {
                self.sqrt().powi(twice)
            }
        } else {
            (self.ln() * Self::from_f64(p)).exp()
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn epsilon() -> f64 {
        f64::EPSILON / 2.0
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
}

pub const DEFAULT_MP_BITS: usize = 256;
const ROUNDING: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static PRECISION: Cell<usize> = const { Cell::new(DEFAULT_MP_BITS) };
    static CONSTS: RefCell<Consts> =
        RefCell::new(Consts::new().expect("allocate multiprecision constant cache"));
}

/// Working precision, in bits, of [`Mp`] arithmetic on the current thread.
pub fn mp_precision() -> usize {
    PRECISION.with(Cell::get)
}

/// Run `f` with the [`Mp`] working precision of the current thread set to `bits`.
pub fn with_mp_precision<R>(bits: usize, f: impl FnOnce() -> R) -> R {
    struct Restore(usize);
    impl Drop for Restore {
        fn drop(&mut self) {
            PRECISION.with(|p| p.set(self.0));
        }
    }
    let bits = bits.max(64);
    let _restore = Restore(PRECISION.with(|p| p.replace(bits)));
    f()
}

/// Multiprecision float. Results are rounded to the thread's working
/// precision (see [`with_mp_precision`]).
#[derive(Clone)]
pub struct Mp(BigFloat);

impl Mp {
    pub fn inner(&self) -> &BigFloat {
        &self.0
    }
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mp({:e})", self.to_f64())
    }
}

impl PartialEq for Mp {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl PartialOrd for Mp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! mp_binop {
    ($tr:ident, $method:ident, $assign_tr:ident, $assign:ident) => {
        impl $tr for Mp {
            type Output = Mp;
            fn $method(self, rhs: Mp) -> Mp {
                Mp(self.0.$method(&rhs.0, mp_precision(), ROUNDING))
            }
        }
        impl $assign_tr for Mp {
            fn $assign(&mut self, rhs: Mp) {
                self.0 = self.0.$method(&rhs.0, mp_precision(), ROUNDING);
            }
        }
    };
}

mp_binop!(Add, add, AddAssign, add_assign);
mp_binop!(Sub, sub, SubAssign, sub_assign);
mp_binop!(Mul, mul, MulAssign, mul_assign);

impl Div for Mp {
    type Output = Mp;
    fn div(self, rhs: Mp) -> Mp {
        Mp(self.0.div(&rhs.0, mp_precision(), ROUNDING))
    }
}

impl Neg for Mp {
    type Output = Mp;
    fn neg(self) -> Mp {
        Mp(BigFloat::neg(&self.0))
    }
}

impl Real for Mp {
    fn from_f64(x: f64) -> Self {
        Mp(BigFloat::from_f64(x, mp_precision()))
    }

    fn to_f64(&self) -> f64 {
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_inf() {
            return if self.0.is_positive() {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
        }
        if self.0.is_zero() {
            return 0.0;
        }
        let Some((words, _, sign, exponent, _)) = self.0.as_raw_parts() else {
            return f64::NAN;
        };
        // Mantissa is normalized into [1/2, 1) with the most significant word last.
        let top = *words.last().expect("non-zero mantissa") as f64;
        let magnitude = scale_by_pow2(top, exponent as i64 - 64);
        if sign.is_negative() {
            -magnitude
        } else {
            magnitude
        }
    }

    fn abs(&self) -> Self {
        Mp(self.0.abs())
    }

    fn sqrt(&self) -> Self {
        Mp(self.0.sqrt(mp_precision(), ROUNDING))
    }

    fn exp(&self) -> Self {
        CONSTS.with(|cc| Mp(self.0.exp(mp_precision(), ROUNDING, &mut cc.borrow_mut())))
    }

    fn ln(&self) -> Self {
        CONSTS.with(|cc| Mp(self.0.ln(mp_precision(), ROUNDING, &mut cc.borrow_mut())))
    }

    fn is_finite(&self) -> bool {
        !(self.0.is_nan() || self.0.is_inf())
    }

    fn epsilon() -> f64 {
        scale_by_pow2(1.0, -(mp_precision() as i64))
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

fn scale_by_pow2(x: f64, mut e: i64) -> f64 {
    let mut out = x;
    while e > 1000 {
        out *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        out *= 2f64.powi(-1000);
        e += 1000;
        if out == 0.0 {
            return 0.0;
        }
    }
    out * 2f64.powi(e as i32)
}
