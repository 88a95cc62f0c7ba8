use alloc::string::String;

/// Plain decimal literal: optional leading `-`, at least one digit, and an
/// optional fraction of at least one digit. No exponent, no `+`, no blanks.
pub fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.is_none_or(digits)
}

/// Parses a plain decimal literal; `None` for anything [`is_decimal`] rejects.
pub(crate) fn parse_decimal(s: &str) -> Option<f64> {
    if is_decimal(s) {
        s.parse::<f64>().ok()
    } else {
        None
    }
}

/// Renders `scaled / 10^decimals` without going through float formatting.
pub(crate) fn format_scaled(scaled: i64, decimals: u32) -> String {
    let mut out = String::new();
    if scaled < 0 {
        out.push('-');
    }
    let magnitude = scaled.unsigned_abs();
    let pow = 10u64.pow(decimals);
    let int = magnitude / pow;
    let frac = magnitude % pow;
    out.push_str(&alloc::format!("{int}"));
    if decimals > 0 {
        out.push_str(&alloc::format!(".{frac:0width$}", width = decimals as usize));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_plain_decimals() {
        for s in ["0", "123.1", "-7.40", "0005"] {
            assert!(is_decimal(s), "{s}");
        }
        for s in ["", "-", ".5", "5.", "1e5", "+3", "1.2.3", "abc", " 1"] {
            assert!(!is_decimal(s), "{s}");
        }
    }

    #[test]
    fn scaled_formatting() {
        assert_eq!(format_scaled(74, 1), "7.4");
        assert_eq!(format_scaled(-5, 2), "-0.05");
        assert_eq!(format_scaled(300, 0), "300");
    }
}
