//! Signed log-magnitude arithmetic for quantities spanning hundreds of decades.

use serde::{Deserialize, Serialize};

/// A real number stored as `sign · e^{ln_abs}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    pub sign: i8,
    #[serde(with = "extended_f64")]
    pub ln_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0,
        ln_abs: f64::NEG_INFINITY,
    };

    pub fn new(sign: i8, ln_abs: f64) -> Self {
        if sign == 0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self {
                sign: sign.signum(),
                ln_abs,
            }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self::new(if x > 0.0 { 1 } else { -1 }, x.abs().ln())
        }
    }

    /// Converts back; underflows to 0 or overflows to ±∞ outside f64 range.
    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.ln_abs.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn mul(self, other: SignedLog) -> SignedLog {
        Self::new(self.sign * other.sign, self.ln_abs + other.ln_abs)
    }

    /// Multiplies by `e^{ln_factor}`.
    pub fn scale(self, ln_factor: f64) -> SignedLog {
        Self::new(self.sign, self.ln_abs + ln_factor)
    }

    pub fn neg(self) -> SignedLog {
        Self::new(-self.sign, self.ln_abs)
    }

    pub fn add(self, other: SignedLog) -> SignedLog {
        let mut acc = LogSum::new();
        acc.push(self);
        acc.push(other);
        acc.value()
    }

    pub fn sub(self, other: SignedLog) -> SignedLog {
        self.add(other.neg())
    }

    /// `|a − b| / |b|`, computed without leaving log space.
    pub fn relative_difference(self, reference: SignedLog) -> f64 {
        if reference.is_zero() {
            return if self.is_zero() { 0.0 } else { f64::INFINITY };
        }
        let diff = self.sub(reference);
        if diff.is_zero() {
            0.0
        } else {
            (diff.ln_abs - reference.ln_abs).exp()
        }
    }
}

/// Compensated (Neumaier) sum of signed log-magnitude terms.
///
/// The running total is kept as `(s + c)·e^{scale}` with `scale` the largest
/// exponent seen so far, so every stored quantity stays O(1).
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    scale: f64,
    sum: f64,
    comp: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSum {
    pub fn new() -> Self {
        Self {
            scale: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
        }
    }

    pub fn push(&mut self, term: SignedLog) {
        if term.is_zero() {
            return;
        }
        if term.ln_abs > self.scale {
            if self.scale.is_finite() {
                let f = (self.scale - term.ln_abs).exp();
                self.sum *= f;
                self.comp *= f;
            }
            self.scale = term.ln_abs;
        }
        let x = f64::from(term.sign) * (term.ln_abs - self.scale).exp();
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `value · e^{ln_scale}` for an ordinary float `value`.
    pub fn push_scaled(&mut self, value: f64, ln_scale: f64) {
        self.push(SignedLog::from_f64(value).scale(ln_scale));
    }

    pub fn merge(&mut self, other: &LogSum) {
        if other.scale.is_finite() {
            self.push(SignedLog::from_f64(other.sum).scale(other.scale));
            self.push(SignedLog::from_f64(other.comp).scale(other.scale));
        }
    }

    pub fn value(&self) -> SignedLog {
        if !self.scale.is_finite() {
            return SignedLog::ZERO;
        }
        SignedLog::from_f64(self.sum + self.comp).scale(self.scale)
    }

    /// Largest exponent pushed so far.
    pub fn max_ln(&self) -> f64 {
        self.scale
    }
}

/// Serde for floats that may be infinite or NaN: finite values as numbers,
/// the others as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod extended_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct V;

    impl Visitor<'_> for V {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number, \"inf\", \"-inf\" or \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(V)
    }
}
