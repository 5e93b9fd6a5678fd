//! Lossless hexadecimal encoding of `f64` (`0x1.8p+1` style).
//!
//! Every finite double has exactly one encoding here, so a value written and
//! read back is bit-identical. The serde adapters in this module are used by
//! all persisted model types.

use std::fmt::Write;

const MANT_BITS: u32 = 52;
const MANT_MASK: u64 = (1 << MANT_BITS) - 1;
const EXP_BIAS: i64 = 1023;

/// Encodes a finite value. Returns `None` for NaN and infinities.
pub fn encode(value: f64) -> Option<String> {
    if !value.is_finite() {
        return None;
    }
    let bits = value.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_field = ((bits >> MANT_BITS) & 0x7ff) as i64;
    let mant = bits & MANT_MASK;

    let mut out = String::with_capacity(24);
    out.push_str(sign);
    if exp_field == 0 && mant == 0 {
        out.push_str("0x0p+0");
        return Some(out);
    }
    let (lead, exp) = if exp_field == 0 { ('0', 1 - EXP_BIAS) } else { ('1', exp_field - EXP_BIAS) };
    out.push_str("0x");
    out.push(lead);
    if mant != 0 {
        let digits = format!("{mant:013x}");
        out.push('.');
        out.push_str(digits.trim_end_matches('0'));
    }
    write!(out, "p{exp:+}").expect("write to String");
    Some(out)
}

/// Decodes a string produced by [`encode`].
pub fn decode(text: &str) -> Result<f64, String> {
    let bad = || format!("malformed hex float `{text}`");
    let (negative, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mantissa, exponent) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exponent.parse().map_err(|_| bad())?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mant = if frac.is_empty() {
        0
    } else {
        let padded = format!("{frac:0<13}");
        u64::from_str_radix(&padded, 16).map_err(|_| bad())?
    };
    let magnitude_bits = match lead {
        "1" => {
            let field = exp + EXP_BIAS;
            if !(1..=2046).contains(&field) {
                return Err(format!("exponent out of range in `{text}`"));
            }
            ((field as u64) << MANT_BITS) | mant
        }
        "0" if mant == 0 => {
            if exp != 0 {
                return Err(bad());
            }
            0
        }
        "0" => {
            if exp != 1 - EXP_BIAS {
                return Err(bad());
            }
            mant
        }
        _ => return Err(bad()),
    };
    let sign_bit = if negative { 1u64 << 63 } else { 0 };
    Ok(f64::from_bits(sign_bit | magnitude_bits))
}

fn encode_or_err<E: serde::ser::Error>(v: f64) -> Result<String, E> {
    encode(v).ok_or_else(|| E::custom(format!("non-finite value {v} cannot be stored")))
}

/// `#[serde(with = "hexfloat::scalar")]`
pub mod scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_or_err::<S::Error>(*v)?)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        super::decode(&text).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "hexfloat::vec")]`
pub mod vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&super::encode_or_err::<S::Error>(*x)?)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts.iter().map(|t| super::decode(t).map_err(serde::de::Error::custom)).collect()
    }
}

/// `#[serde(with = "hexfloat::array1")]` for `ndarray::Array1<f64>`.
pub mod array1 {
    use ndarray::Array1;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::vec::serialize(&v.to_vec(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        super::vec::deserialize(d).map(Array1::from)
    }
}

/// `#[serde(with = "hexfloat::matrix")]` for `ndarray::Array2<f64>`, stored
/// row-major as `{rows, cols, data}`.
pub mod matrix {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize)]
    struct Out<'a> {
        rows: usize,
        cols: usize,
        #[serde(with = "super::vec")]
        data: &'a [f64],
    }

    #[derive(Deserialize)]
    struct In {
        rows: usize,
        cols: usize,
        #[serde(with = "super::vec")]
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data: Vec<f64> = m.iter().copied().collect();
        Out { rows: m.nrows(), cols: m.ncols(), data: &data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let raw = In::deserialize(d)?;
        Array2::from_shape_vec((raw.rows, raw.cols), raw.data)
            .map_err(|e| serde::de::Error::custom(format!("matrix shape: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(encode(1.0).unwrap(), "0x1p+0");
        assert_eq!(encode(3.0).unwrap(), "0x1.8p+1");
        assert_eq!(encode(-0.5).unwrap(), "-0x1p-1");
        assert_eq!(encode(0.0).unwrap(), "0x0p+0");
        assert_eq!(encode(-0.0).unwrap(), "-0x0p+0");
        assert_eq!(encode(f64::MIN_POSITIVE / 2.0).unwrap(), "0x0.8p-1022");
        assert!(encode(f64::NAN).is_none());
        assert!(encode(f64::INFINITY).is_none());
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "1.0", "0x", "0x1.zzp+0", "0x2p+0", "0x1p+5000", "0x0.8p+3"] {
            assert!(decode(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn extremes_round_trip() {
        for v in [f64::MAX, f64::MIN, f64::MIN_POSITIVE, f64::EPSILON, 5e-324, -5e-324] {
            assert_eq!(decode(&encode(v).unwrap()).unwrap().to_bits(), v.to_bits());
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = decode(&encode(v).unwrap()).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
