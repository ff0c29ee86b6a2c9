//! Deterministic number formatting for all text outputs.

/// Scientific notation with 17 significant digits; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}
