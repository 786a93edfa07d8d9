//! Locale-independent float rendering for report files.

/// Six significant digits; scientific notation outside `1e-4 ..= 1e15`.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Round once in scientific form so the exponent reflects the rounded value.
    let sci = format!("{x:.5e}");
    let (_, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..15).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Quotes a CSV field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
