//! Map export: 8-bit PGM with a MISSING mask, or raw CSV.

use std::fmt::Write as _;

use swei_core::field::ElasticityMap;

use crate::error::{CliError, CliResult};

/// Parses `lo..hi`.
pub fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| CliError::Usage(format!("range `{s}` is not of the form lo..hi")))?;
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("`{t}` in range `{s}` is not a number")))
    };
    let (lo, hi) = (num(a)?, num(b)?);
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::InvalidRange { lo, hi });
    }
    Ok((lo, hi))
}

/// Binary PGM (P5) mapping `[lo, hi]` linearly onto `[0, 255]`; MISSING
/// pixels are 0. Returns the image and a mask image (255 = MISSING).
pub fn to_pgm(map: &ElasticityMap, lo: f64, hi: f64) -> CliResult<(Vec<u8>, Vec<u8>)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::InvalidRange { lo, hi });
    }
    let g = map.geom;
    let header = format!("P5\n{} {}\n255\n", g.lateral_px, g.depth_px);
    let mut img = header.clone().into_bytes();
    let mut mask = header.into_bytes();
    for &v in map.data() {
        if v.is_nan() {
            img.push(0);
            mask.push(255);
        } else {
            let x = ((v as f64 - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0);
            img.push(x as u8);
            mask.push(0);
        }
    }
    Ok((img, mask))
}

/// One row per depth, comma-separated raw values; MISSING is `NaN`.
pub fn to_csv(map: &ElasticityMap) -> String {
    let mut s = String::new();
    for row in map.data().chunks(map.geom.lateral_px) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").expect("write to string");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use swei_core::geom::GridGeom;

    fn pixels(pgm: &[u8]) -> &[u8] {
        &pgm[pgm.len() - 6..]
    }

    #[test]
    fn constant_map_mid_gray() {
        let g = GridGeom::with_default_pitch(2, 3).unwrap();
        let m = ElasticityMap::constant(g, 50.0);
        let (img, mask) = to_pgm(&m, 0.0, 100.0).unwrap();
        assert!(img.starts_with(b"P5\n3 2\n255\n"));
        assert!(pixels(&img).iter().all(|&p| p == 127 || p == 128));
        assert!(pixels(&mask).iter().all(|&p| p == 0));
    }

    #[test]
    fn missing_pixel_is_black_and_masked() {
        let g = GridGeom::with_default_pitch(2, 3).unwrap();
        let mut m = ElasticityMap::constant(g, 100.0);
        m.data_mut()[4] = f32::NAN;
        let (img, mask) = to_pgm(&m, 0.0, 100.0).unwrap();
        assert_eq!(pixels(&img), &[255, 255, 255, 255, 0, 255]);
        assert_eq!(pixels(&mask), &[0, 0, 0, 0, 255, 0]);
        assert_eq!(to_csv(&m), "100,100,100\n100,NaN,100\n");
    }

    #[test]
    fn bad_ranges() {
        let g = GridGeom::with_default_pitch(1, 1).unwrap();
        let m = ElasticityMap::constant(g, 1.0);
        assert!(matches!(to_pgm(&m, 5.0, 5.0), Err(CliError::InvalidRange { .. })));
        assert!(matches!(parse_range("10..2"), Err(CliError::InvalidRange { .. })));
        assert_eq!(parse_range("0..100").unwrap(), (0.0, 100.0));
        assert!(matches!(parse_range("0-100"), Err(CliError::Usage(_))));
    }
}
