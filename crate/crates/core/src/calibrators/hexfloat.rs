//! C99-style hexadecimal float strings (`0x1.8p+1`), exact for every `f64`.

use crate::error::{CalibError, Result};

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;
const EXP_BIAS: i64 = 1023;

pub fn format_hex_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = x.to_bits();
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    let (lead, exp) = match (biased, mantissa) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, 1 - EXP_BIAS),
        _ => (1, biased - EXP_BIAS),
    };
    let mut frac = format!("{mantissa:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let dot = if frac.is_empty() { String::new() } else { format!(".{frac}") };
    format!("{sign}0x{lead}{dot}p{exp:+}")
}

pub fn parse_hex_float(s: &str) -> Result<f64> {
    let bad = || CalibError::InvalidConfig(format!("malformed hex float `{s}`"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = match body {
        "nan" => f64::NAN,
        "inf" => f64::INFINITY,
        _ => {
            let body = body.strip_prefix("0x").ok_or_else(bad)?;
            let (mant, exp) = body.split_once('p').ok_or_else(bad)?;
            let exp: i64 = exp.parse().map_err(|_| bad())?;
            let (lead, frac) = mant.split_once('.').unwrap_or((mant, ""));
            if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(bad());
            }
            let frac_bits = if frac.is_empty() {
                0
            } else {
                u64::from_str_radix(&format!("{frac:0<13}"), 16).map_err(|_| bad())?
            };
            match lead {
                "0" if frac_bits == 0 => 0.0,
                "0" if exp == 1 - EXP_BIAS => f64::from_bits(frac_bits),
                "1" if (1 - EXP_BIAS..=EXP_BIAS).contains(&exp) => {
                    f64::from_bits((((exp + EXP_BIAS) as u64) << MANTISSA_BITS) | frac_bits)
                }
                _ => return Err(bad()),
            }
        }
    };
    Ok(if neg { -value } else { value })
}
