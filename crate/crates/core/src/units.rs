//! Unit conventions and conversion factors.
//!
//! Every public energy is in millijoules (mJ), every power in milliwatts
//! (mW) and every time in milliseconds (ms) at the system scale.  Gate
//! libraries keep their natural cell scale: microwatts (uW) and
//! nanoseconds (ns).  The only cross-scale conversion in the code base is
//! ns * uW -> mJ and it lives here so it cannot drift between modules.

/// 1 ns * 1 uW = 1e-15 J = 1e-12 mJ.
pub const MJ_PER_NS_UW: f64 = 1e-12;

/// mW * ms = uJ * 1e0... 1 mW * 1 ms = 1e-3 W * 1e-3 s = 1e-6 J = 1e-3 mJ.
pub const MJ_PER_MW_MS: f64 = 1e-3;

/// Millijoules stored on a capacitor: E = C * V^2 / 2 with C in mF.
///
/// mF * V^2 = 1e-3 F * V^2 = 1e-3 J = exactly one mJ, so no further factor.
pub fn capacitor_energy_mj(capacitance_mf: f64, voltage_v: f64) -> f64 {
    0.5 * capacitance_mf * voltage_v * voltage_v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacitor_energy_reference_point() {
        // 2 mF charged to 5 V holds 25 mJ.
        let e = capacitor_energy_mj(2.0, 5.0);
        assert!((e - 25.0).abs() / 25.0 < 1e-9);
    }

    #[test]
    fn ns_uw_conversion_vector() {
        // 10 ns at 1 uW is 10 fJ = 1.0e-11 mJ.
        let e = 10.0 * 1.0 * MJ_PER_NS_UW;
        assert!((e - 1.0e-11).abs() < 1e-24);
    }

    #[test]
    fn mw_ms_conversion_vector() {
        // 5 mW for 200 ms delivers 1 mJ.
        let e = 5.0 * 200.0 * MJ_PER_MW_MS;
        assert!((e - 1.0).abs() < 1e-12);
    }
}
