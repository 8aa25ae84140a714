use crate::{Error, Result};

/// Fringe attenuation `sin(k₀s/2)/(k₀s/2)` of a top-hat slit of width `s`.
pub fn slit_factor(k0: f64, width_mm: f64) -> Result<f64> {
    let half = 0.5 * k0 * width_mm;
    if half == 0.0 {
        return Ok(1.0);
    }
    if !(half.abs() < std::f64::consts::PI) {
        return Err(Error::domain(format!(
            "slit phase k0*s/2 = {half} must stay below pi"
        )));
    }
    let factor = half.sin() / half;
    if !(factor > 0.0) {
        return Err(Error::domain(format!(
            "slit factor {factor} is not positive"
        )));
    }
    Ok(factor)
}

/// Undoes the slit attenuation of a fitted visibility.
pub fn slit_correction(v_raw: f64, k0: f64, width_mm: f64) -> Result<f64> {
    Ok(v_raw / slit_factor(k0, width_mm)?)
}
