//! 8-bit binary graymap (P5) export.

use radiomap_core::RadioMap;

/// `floor(255 v)` clamped to `[0, 255]`; NaN maps to 0.
pub fn quantize(v: f64) -> u8 {
    let q = (255.0 * v).floor();
    if q >= 255.0 {
        255
    } else if q > 0.0 {
        q as u8
    } else {
        0
    }
}

/// Row `y = 0` is the first image row.
pub fn to_pgm(map: &RadioMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.values().iter().map(|&v| quantize(v)));
    out
}

/// Log-power display scale: `log10(v + floor)` mapped from `[log10(floor), log10(max + floor)]` to `[0, 1]`.
pub fn db_scale(map: &RadioMap) -> RadioMap {
    const FLOOR: f64 = 1e-7;
    let lo = FLOOR.log10();
    let hi = (map.max() + FLOOR).log10();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let values = map.values().iter().map(|&v| (((v.max(0.0) + FLOOR).log10() - lo) / span).clamp(0.0, 1.0)).collect();
    RadioMap::from_values(map.width(), map.height(), values).expect("scaled values are finite")
}
