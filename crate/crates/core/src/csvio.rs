//! CSV primitives shared by the dump methods: all floats are written with
//! 17 significant digits so that parsing them back reproduces the exact
//! f64 bit pattern.

/// Format with 17 significant digits (scientific notation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write one CSV line from float cells.
pub fn line(cells: &[f64]) -> String {
    cells.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        for &v in &[
            0.5,
            -0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            6.02e23,
            -2.2250738585072014e-308,
            0.0,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{s}");
        }
    }
}
