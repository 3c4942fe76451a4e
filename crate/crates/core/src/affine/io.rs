//! Plain-text affine files: d+1 rows of d+1 numbers, 17 significant digits.
//!
//! Rust's float formatting is correctly rounded and parsing is exact, so
//! seventeen significant digits make write → read → write byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::AffineTransform;
use crate::error::{Error, Result};

pub fn format_affine(a: &AffineTransform) -> String {
    let m = a.homogeneous();
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e}", m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_affine(text: &str) -> std::result::Result<AffineTransform, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|e| format!("'{tok}': {e}")))
                .collect::<std::result::Result<Vec<f64>, String>>()
        })
        .collect::<std::result::Result<_, _>>()?;
    let n = rows.len();
    if !(3..=4).contains(&n) {
        return Err(format!("expected 3 or 4 rows, found {n}"));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(format!("expected {n} columns per row, found {}", bad.len()));
    }
    let m = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
    AffineTransform::from_homogeneous(&m).map_err(|e| e.to_string())
}

pub fn write_affine(a: &AffineTransform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_affine(a)).map_err(|e| Error::io(path, e))
}

pub fn read_affine(path: impl AsRef<Path>) -> Result<AffineTransform> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_affine(&text).map_err(|m| Error::parse(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    #[test]
    fn identity_text() {
        let s = format_affine(&AffineTransform::identity(2));
        assert_eq!(
            s,
            "1.0000000000000000e0 0.0000000000000000e0 0.0000000000000000e0\n\
             0.0000000000000000e0 1.0000000000000000e0 0.0000000000000000e0\n\
             0.0000000000000000e0 0.0000000000000000e0 1.0000000000000000e0\n"
        );
    }

    #[test]
    fn rejects_bad_last_row() {
        assert!(parse_affine("1 0 0\n0 1 0\n0 1 1\n").is_err());
        assert!(parse_affine("1 0\n0 1\n").is_err());
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_byte_stable(
            vals in proptest::collection::vec(-1e6f64..1e6, 12),
            tiny in -1e-300f64..1e-300,
        ) {
            let mut l = DMatrix::from_fn(3, 3, |r, c| vals[3 * r + c] * 1e-6);
            for i in 0..3 { l[(i, i)] += 1.0; }
            l[(0, 1)] += tiny;
            let t = DVector::from_column_slice(&vals[9..12]);
            let a = AffineTransform::new(l, t).unwrap();
            let first = format_affine(&a);
            let back = parse_affine(&first).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(format_affine(&back), first);
        }
    }
}
