//! Unit conversions shared by the optical and detection models.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    linear_to_db(mw)
}

/// Optical frequency in THz of a vacuum wavelength in nm.
pub fn wavelength_to_thz(wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT / (wavelength_nm * 1e-9) * 1e-12
}

/// Vacuum wavelength in nm of an optical frequency in THz.
pub fn thz_to_wavelength(freq_thz: f64) -> f64 {
    SPEED_OF_LIGHT / (freq_thz * 1e12) * 1e9
}

/// Photon energy hc/λ in joules.
pub fn photon_energy_j(wavelength_nm: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

/// Converts optical power in mW to a photon flux at the given wavelength.
pub fn mw_to_photons_per_s(power_mw: f64, wavelength_nm: f64) -> f64 {
    power_mw * 1e-3 / photon_energy_j(wavelength_nm)
}

/// Width in nm of a frequency slot of `width_ghz` centred at `wavelength_nm`.
pub fn ghz_to_nm(width_ghz: f64, wavelength_nm: f64) -> f64 {
    let lambda_m = wavelength_nm * 1e-9;
    lambda_m * lambda_m * width_ghz * 1e9 / SPEED_OF_LIGHT * 1e9
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hundred_ghz_at_1550_is_about_0p8_nm() {
        assert_relative_eq!(ghz_to_nm(100.0, 1550.0), 0.8014, epsilon = 1e-3);
    }

    #[test]
    fn shortwave_to_oband_detuning() {
        let d = wavelength_to_thz(852.0) - wavelength_to_thz(1295.56);
        assert!(d > 120.0 && d < 122.0, "{d}");
        assert_relative_eq!(thz_to_wavelength(wavelength_to_thz(852.0)), 852.0, epsilon = 1e-9);
    }

    #[test]
    fn db_round_trip() {
        assert_relative_eq!(linear_to_db(db_to_linear(-13.7)), -13.7, epsilon = 1e-12);
        assert_relative_eq!(dbm_to_mw(3.0), 1.995_262, epsilon = 1e-6);
    }
}
