//! Flag value parsers.

pub fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be finite and non-negative"))
    }
}

pub fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("`{s}` must lie in [0, 1]"))
    }
}

pub fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("`{s}`: {e}")),
    }
}

/// Parses `123`, `64k`, `512m`, `4g` (binary multiples).
pub fn byte_size(s: &str) -> Result<u64, String> {
    let lower = s.trim().to_ascii_lowercase();
    let (digits, shift) = match lower.chars().last() {
        Some('k') => (&lower[..lower.len() - 1], 10),
        Some('m') => (&lower[..lower.len() - 1], 20),
        Some('g') => (&lower[..lower.len() - 1], 30),
        _ => (lower.as_str(), 0),
    };
    let base: u64 = digits
        .parse()
        .map_err(|e| format!("`{s}` is not a byte size: {e}"))?;
    base.checked_mul(1u64 << shift)
        .ok_or_else(|| format!("`{s}` overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes() {
        assert_eq!(byte_size("4g"), Ok(4 << 30));
        assert_eq!(byte_size("512M"), Ok(512 << 20));
        assert_eq!(byte_size("100"), Ok(100));
        assert!(byte_size("lots").is_err());
    }

    #[test]
    fn ranges() {
        assert!(unit_interval("1.5").is_err());
        assert_eq!(unit_interval("0.3"), Ok(0.3));
        assert!(non_negative("-1").is_err());
        assert!(non_negative("inf").is_err());
        assert!(positive("0").is_err());
    }
}
