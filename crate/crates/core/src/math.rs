//! Thin wrappers over `libm` so the rest of the crate stays `no_std`.
//!
//! All float transcendentals route through here; callers never use the
//! std inherent methods, which keeps release and no_std builds on the
//! same code paths bit for bit.

#[inline(always)]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}

#[inline(always)]
pub fn lnf(x: f32) -> f32 {
    libm::logf(x)
}

#[inline(always)]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline(always)]
pub fn sinf(x: f32) -> f32 {
    libm::sinf(x)
}

#[inline(always)]
pub fn cosf(x: f32) -> f32 {
    libm::cosf(x)
}

#[inline(always)]
pub fn absf(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & 0x7fff_ffff)
}

#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline(always)]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & 0x7fff_ffff_ffff_ffff)
}

#[inline(always)]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrappers_match_std() {
        for &x in &[0.0f32, 0.5, -1.25, 3.0] {
            assert!((expf(x) - x.exp()).abs() < 1e-6);
            assert!((sinf(x) - x.sin()).abs() < 1e-6);
            assert!((cosf(x) - x.cos()).abs() < 1e-6);
            assert_eq!(absf(x), x.abs());
        }
        assert_eq!(sqrtf(9.0), 3.0);
        assert_eq!(sqrt(16.0), 4.0);
        assert_eq!(abs(-2.5f64), 2.5);
    }
}
