//! C99 `%a`-style hexadecimal float text, for bit-exact score files.

pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{}inf", sign);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let frac = format!("{:013x}", mant);
    let frac = frac.trim_end_matches('0');
    let dot = if frac.is_empty() { "" } else { "." };
    match (exp, mant) {
        (0, 0) => format!("{}0x0p+0", sign),
        (0, _) => format!("{}0x0{}{}p-1022", sign, dot, frac),
        _ => format!("{}0x1{}{}p{:+}", sign, dot, frac, exp - 1023),
    }
}

/// Parses the output of [`format`].
pub fn parse(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let sign_bit = if neg { 1u64 << 63 } else { 0 };
    match body {
        "inf" => return Some(f64::from_bits(sign_bit | f64::INFINITY.to_bits())),
        "nan" if !neg => return Some(f64::NAN),
        _ => {}
    }
    let body = body.strip_prefix("0x")?;
    let (mantissa, exp) = body.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = match mantissa.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return None,
        None => (mantissa, ""),
    };
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()) {
        return None;
    }
    let mant = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        "1" => {
            if !(-1022..=1023).contains(&exp) {
                return None;
            }
            (((exp + 1023) as u64) << 52) | mant
        }
        "0" if mant == 0 && exp == 0 => 0,
        "0" if exp == -1022 => mant,
        _ => return None,
    };
    Some(f64::from_bits(sign_bit | bits))
}
