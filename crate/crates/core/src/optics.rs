//! Spectral-domain link model.
//!
//! Describes the quantum and classical channel plan, the transmission fiber
//! and the passive filter cascades of the co-existence elements, and turns
//! the two classical-to-quantum crosstalk mechanisms into in-band photon
//! rates at the quantum channel:
//!
//! - spontaneous-emission (ASE) tails of the classical transmitters, which
//!   leave the transmitter already inside the quantum band and can be cleaned
//!   at Alice, and
//! - spontaneous Raman scattering generated along the fiber, which appears
//!   after Alice's cleaning filters and can only be rejected out-of-band.
//!
//! All functions here are pure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::units::{db_to_linear, dbm_to_mw, ghz_to_nm, mw_to_dbm, mw_to_photons_per_s, wavelength_to_thz};

/// Lower edge of the modeled spectral grid, nm.
pub const GRID_MIN_NM: f64 = 600.0;
/// Upper edge of the modeled spectral grid, nm.
pub const GRID_MAX_NM: f64 = 1700.0;
/// Step of the exported spectra, nm.
pub const GRID_STEP_NM: f64 = 1.0;

/// LAN-WDM grid used by the four 25 Gb/s PAM4 channels.
pub const LAN_WDM_NM: [f64; 4] = [1295.56, 1300.05, 1304.58, 1309.14];

/// Lowest PSD reported in exported spectra, dBm/nm.
const PSD_FLOOR_DBM_PER_NM: f64 = -200.0;

fn check_grid(wavelength_nm: f64) -> Result<()> {
    if !(GRID_MIN_NM..=GRID_MAX_NM).contains(&wavelength_nm) || wavelength_nm.is_nan() {
        return Err(Error::OutsideGrid(wavelength_nm));
    }
    Ok(())
}

/// Width of the quantum channel's receive filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassbandWidth {
    Nm(f64),
    Ghz(f64),
}

impl PassbandWidth {
    pub fn width_nm(&self, center_nm: f64) -> f64 {
        match *self {
            PassbandWidth::Nm(w) => w,
            PassbandWidth::Ghz(w) => ghz_to_nm(w, center_nm),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            PassbandWidth::Nm(w) => PassbandWidth::Nm(w * factor),
            PassbandWidth::Ghz(w) => PassbandWidth::Ghz(w * factor),
        }
    }
}

/// Transmitter spontaneous-emission tail: PSD relative to the carrier power,
/// falling linearly in dB with detuning down to a floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AseTailModel {
    /// PSD next to the carrier, dB relative to carrier power, per nm.
    pub peak_rel_db_per_nm: f64,
    /// Decay of the tail, dB per THz of detuning.
    pub slope_db_per_thz: f64,
    /// Level below which the tail does not fall, dB relative to carrier, per nm.
    pub floor_rel_db_per_nm: f64,
}

impl Default for AseTailModel {
    fn default() -> Self {
        Self {
            peak_rel_db_per_nm: -35.0,
            slope_db_per_thz: 0.6,
            floor_rel_db_per_nm: -95.0,
        }
    }
}

impl AseTailModel {
    /// Tail PSD in mW/nm for a carrier of `carrier_mw` at `detuning_thz`.
    pub fn psd_mw_per_nm(&self, carrier_mw: f64, detuning_thz: f64) -> f64 {
        let rel = (self.peak_rel_db_per_nm - self.slope_db_per_thz * detuning_thz.abs())
            .max(self.floor_rel_db_per_nm);
        carrier_mw * db_to_linear(rel)
    }
}

/// Quantum and classical wavelengths of the link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub quantum_wavelength_nm: f64,
    /// LAN-WDM carriers, ascending.
    pub classical_wavelengths_nm: Vec<f64>,
    pub classical_launch_dbm_per_channel: f64,
    pub quantum_filter_bandwidth: PassbandWidth,
    #[serde(default)]
    pub ase_tail: AseTailModel,
}

impl ChannelPlan {
    /// 852 nm quantum channel behind a 7 nm band-pass, LAN-WDM at +3 dBm/λ.
    pub fn shortwave() -> Self {
        Self {
            quantum_wavelength_nm: 852.0,
            classical_wavelengths_nm: LAN_WDM_NM.to_vec(),
            classical_launch_dbm_per_channel: 3.0,
            quantum_filter_bandwidth: PassbandWidth::Nm(7.0),
            ase_tail: AseTailModel::default(),
        }
    }

    /// 1550 nm quantum channel in a 100 GHz slot, LAN-WDM at −7 dBm/λ.
    pub fn c_band() -> Self {
        Self {
            quantum_wavelength_nm: 1550.0,
            classical_wavelengths_nm: LAN_WDM_NM.to_vec(),
            classical_launch_dbm_per_channel: -7.0,
            quantum_filter_bandwidth: PassbandWidth::Ghz(100.0),
            ase_tail: AseTailModel::default(),
        }
    }

    /// Same plan with the classical channels switched off.
    pub fn without_classical(&self) -> Self {
        Self {
            classical_wavelengths_nm: Vec::new(),
            ..self.clone()
        }
    }

    pub fn passband_nm(&self) -> f64 {
        self.quantum_filter_bandwidth.width_nm(self.quantum_wavelength_nm)
    }

    pub fn launch_mw(&self) -> f64 {
        dbm_to_mw(self.classical_launch_dbm_per_channel)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.quantum_wavelength_nm;
        if !(q > 0.0 && q.is_finite()) {
            return Err(config_err("quantum_wavelength_nm", "must be positive"));
        }
        if self.passband_nm() <= 0.0 {
            return Err(config_err("quantum_filter_bandwidth", "must be positive"));
        }
        for w in self.classical_wavelengths_nm.windows(2) {
            if w[1] <= w[0] {
                return Err(config_err(
                    "classical_wavelengths_nm",
                    "must be strictly ascending",
                ));
            }
        }
        for &c in &self.classical_wavelengths_nm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(config_err("classical_wavelengths_nm", "must be positive"));
            }
            if c == q {
                return Err(config_err(
                    "classical_wavelengths_nm",
                    format!("{c} nm coincides with the quantum channel"),
                ));
            }
        }
        Ok(())
    }
}

/// Normalized spontaneous Raman cross-section versus |Δν|.
///
/// Knots are `(|Δν| THz, relative cross-section)`, linearly interpolated and
/// forced to zero beyond 100 THz regardless of the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamanProfile {
    pub knots: Vec<(f64, f64)>,
}

/// Detuning beyond which the Raman cross-section is identically zero.
pub const RAMAN_CUTOFF_THZ: f64 = 100.0;

impl Default for RamanProfile {
    fn default() -> Self {
        Self {
            knots: vec![
                (0.0, 0.0),
                (5.0, 0.4),
                (13.2, 1.0),
                (17.0, 0.8),
                (25.0, 0.4),
                (35.0, 0.2),
                (50.0, 0.08),
                (75.0, 0.02),
                (RAMAN_CUTOFF_THZ, 0.0),
            ],
        }
    }
}

impl RamanProfile {
    pub fn eval(&self, detuning_thz: f64) -> f64 {
        let d = detuning_thz.abs();
        if d > RAMAN_CUTOFF_THZ || self.knots.is_empty() {
            return 0.0;
        }
        interp_clamped(&self.knots, d, 0.0).max(0.0)
    }
}

/// Piecewise-linear interpolation; `outside` beyond the last knot, first
/// value before the first knot.
fn interp_clamped(knots: &[(f64, f64)], x: f64, outside: f64) -> f64 {
    let first = knots[0];
    if x <= first.0 {
        return first.1;
    }
    for w in knots.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    outside
}

/// Transmission fiber.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    pub length_km: f64,
    /// `(wavelength nm, dB/km)` knots, ascending; linear in between, held
    /// constant outside.
    pub attenuation_db_per_km: Vec<(f64, f64)>,
    pub mode_field_diameter_um: f64,
    pub cutoff_wavelength_nm: f64,
    /// Spectral Raman scattering coefficient, 1/(km·nm). Set by calibration.
    pub raman_coefficient: f64,
    #[serde(default)]
    pub raman_profile: RamanProfile,
}

impl FiberSpec {
    fn default_attenuation() -> Vec<(f64, f64)> {
        vec![(852.0, 1.8), (1310.0, 0.35), (1550.0, 0.2)]
    }

    /// ITU-T G.652 fiber, 9.2 µm MFD, 1260 nm cutoff.
    pub fn smf28(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km: Self::default_attenuation(),
            mode_field_diameter_um: 9.2,
            cutoff_wavelength_nm: 1260.0,
            raman_coefficient: 0.0,
            raman_profile: RamanProfile::default(),
        }
    }

    /// Visible/NIR single-mode fiber. Table value 4.3 µm MFD is used although
    /// the measured section quotes 4.5 µm.
    pub fn sm630(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km: Self::default_attenuation(),
            mode_field_diameter_um: 4.3,
            cutoff_wavelength_nm: 570.0,
            raman_coefficient: 0.0,
            raman_profile: RamanProfile::default(),
        }
    }

    /// Zero-length link used for back-to-back measurements.
    pub fn back_to_back() -> Self {
        Self::smf28(0.0)
    }

    pub fn attenuation_at(&self, wavelength_nm: f64) -> f64 {
        if self.attenuation_db_per_km.is_empty() {
            return 0.0;
        }
        let last = self.attenuation_db_per_km[self.attenuation_db_per_km.len() - 1].1;
        interp_clamped(&self.attenuation_db_per_km, wavelength_nm, last)
    }

    /// Total fiber loss at a wavelength, dB (positive).
    pub fn loss_db(&self, wavelength_nm: f64) -> f64 {
        self.attenuation_at(wavelength_nm) * self.length_km
    }

    /// More than one guided mode at this wavelength on a non-zero length.
    pub fn is_few_mode(&self, wavelength_nm: f64) -> bool {
        self.length_km > 0.0 && wavelength_nm < self.cutoff_wavelength_nm
    }

    /// Nonlinear effective length (1 − 10^(−αL/10)) / (α ln10 / 10), km.
    pub fn effective_length_km(&self, alpha_db_per_km: f64) -> f64 {
        let l = self.length_km;
        let a = alpha_db_per_km * std::f64::consts::LN_10 / 10.0;
        if a * l < 1e-12 {
            return l;
        }
        // -expm1(-aL)/a keeps full precision for small aL.
        -(-a * l).exp_m1() / a
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0) {
            return Err(config_err("fiber.length_km", "must be ≥ 0"));
        }
        if self.attenuation_db_per_km.iter().any(|&(_, a)| !(a >= 0.0)) {
            return Err(config_err("fiber.attenuation_db_per_km", "entries must be ≥ 0"));
        }
        if self
            .attenuation_db_per_km
            .windows(2)
            .any(|w| w[1].0 <= w[0].0)
        {
            return Err(config_err(
                "fiber.attenuation_db_per_km",
                "wavelength knots must be ascending",
            ));
        }
        if !(self.raman_coefficient >= 0.0) {
            return Err(config_err("fiber.raman_coefficient", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Transmission shape of a passive element, all levels in dB (≤ 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterShape {
    Flat {
        loss_db: f64,
    },
    /// Flat-top band: `passband_db` inside `center ± width/2`, `stopband_db` outside.
    Bandpass {
        center_nm: f64,
        width_nm: f64,
        passband_db: f64,
        stopband_db: f64,
    },
    /// Rejects `center ± width/2`, passes elsewhere with `insertion_db`.
    Notch {
        center_nm: f64,
        width_nm: f64,
        rejection_db: f64,
        insertion_db: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterElement {
    pub name: String,
    pub shape: FilterShape,
}

impl FilterElement {
    pub fn flat(name: &str, loss_db: f64) -> Self {
        Self {
            name: name.into(),
            shape: FilterShape::Flat { loss_db: -loss_db.abs() },
        }
    }

    pub fn bandpass(name: &str, center_nm: f64, width_nm: f64, passband_db: f64, stopband_db: f64) -> Self {
        Self {
            name: name.into(),
            shape: FilterShape::Bandpass {
                center_nm,
                width_nm,
                passband_db: -passband_db.abs(),
                stopband_db: -stopband_db.abs(),
            },
        }
    }

    pub fn notch(name: &str, center_nm: f64, width_nm: f64, rejection_db: f64, insertion_db: f64) -> Self {
        Self {
            name: name.into(),
            shape: FilterShape::Notch {
                center_nm,
                width_nm,
                rejection_db: -rejection_db.abs(),
                insertion_db: -insertion_db.abs(),
            },
        }
    }

    pub fn transmission_db(&self, wavelength_nm: f64) -> f64 {
        match self.shape {
            FilterShape::Flat { loss_db } => loss_db,
            FilterShape::Bandpass {
                center_nm,
                width_nm,
                passband_db,
                stopband_db,
            } => {
                if (wavelength_nm - center_nm).abs() <= width_nm / 2.0 {
                    passband_db
                } else {
                    stopband_db
                }
            }
            FilterShape::Notch {
                center_nm,
                width_nm,
                rejection_db,
                insertion_db,
            } => {
                if (wavelength_nm - center_nm).abs() <= width_nm / 2.0 {
                    rejection_db
                } else {
                    insertion_db
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels: &[f64] = match &self.shape {
            FilterShape::Flat { loss_db } => &[*loss_db],
            FilterShape::Bandpass {
                passband_db,
                stopband_db,
                ..
            } => &[*passband_db, *stopband_db],
            FilterShape::Notch {
                rejection_db,
                insertion_db,
                ..
            } => &[*rejection_db, *insertion_db],
        };
        if levels.iter().any(|l| !(*l <= 0.0)) {
            return Err(config_err("filter", format!("`{}` has gain above 0 dB", self.name)));
        }
        Ok(())
    }
}

/// Sum of the element transmissions at one wavelength, dB. Empty cascade is 0 dB.
pub fn cascade_transmission(filters: &[FilterElement], wavelength_nm: f64) -> Result<f64> {
    check_grid(wavelength_nm)?;
    Ok(filters.iter().map(|f| f.transmission_db(wavelength_nm)).sum())
}

fn cascade_linear(filters: &[FilterElement], wavelength_nm: f64) -> f64 {
    db_to_linear(filters.iter().map(|f| f.transmission_db(wavelength_nm)).sum())
}

/// The co-existence filter elements of one layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceFilters {
    /// Alice, classical path: cleaning of the transmitter tails.
    pub tx_cleaning: Vec<FilterElement>,
    /// Bob, quantum path up to the SPADs.
    pub rx_quantum: Vec<FilterElement>,
    /// Bob, classical path up to the PIN+TIA receiver.
    pub rx_classical: Vec<FilterElement>,
}

impl CoexistenceFilters {
    /// 850/1310 waveband elements and the 7 nm free-space band-pass.
    pub fn shortwave() -> Self {
        Self {
            tx_cleaning: vec![FilterElement::bandpass("850/1310 waveband mux (1310 port)", 1310.0, 100.0, 0.5, 45.0)],
            rx_quantum: vec![
                FilterElement::bandpass("850/1310 waveband demux (850 port)", 850.0, 100.0, 0.6, 45.0),
                FilterElement::bandpass("850/1310 filter-WDM (850 port)", 850.0, 100.0, 0.6, 40.0),
                FilterElement::bandpass("free-space BPF 7 nm", 850.0, 7.0, 1.0, 60.0),
            ],
            rx_classical: vec![FilterElement::bandpass("850/1310 waveband demux (1310 port)", 1310.0, 100.0, 0.6, 45.0)],
        }
    }

    /// O/C-band co-existence combiner with a notch on the 1550 nm channel.
    pub fn c_band() -> Self {
        Self {
            tx_cleaning: vec![
                FilterElement::bandpass("O/C co-existence combiner (O port)", 1310.0, 100.0, 0.5, 20.0),
                FilterElement::notch("1550 nm notch", 1550.0, 4.0, 60.0, 0.3),
            ],
            rx_quantum: vec![
                FilterElement::bandpass("O/C demux (C port)", 1550.0, 100.0, 0.6, 45.0),
                FilterElement::bandpass("100 GHz channel filter", 1550.0, ghz_to_nm(100.0, 1550.0), 1.0, 50.0),
            ],
            rx_classical: vec![FilterElement::bandpass("O/C demux (O port)", 1310.0, 100.0, 0.6, 45.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx_cleaning
            .iter()
            .chain(&self.rx_quantum)
            .chain(&self.rx_classical)
            .try_for_each(FilterElement::validate)
    }
}

/// Classical-to-quantum crosstalk at the quantum channel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub ase_inband_photons_per_s: f64,
    pub raman_inband_photons_per_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spectrum_samples: Vec<(Tap, Vec<SpectrumPoint>)>,
}

impl NoiseBudget {
    pub fn none() -> Self {
        Self::default()
    }

    /// In-band rates for one layout, without spectra.
    pub fn compute(plan: &ChannelPlan, fiber: &FiberSpec, filters: &CoexistenceFilters) -> Result<Self> {
        Ok(Self {
            ase_inband_photons_per_s: ase_noise_rate(plan, &filters.tx_cleaning, &filters.rx_quantum)?,
            raman_inband_photons_per_s: raman_noise_rate(plan, fiber, &filters.rx_quantum)?,
            spectrum_samples: Vec::new(),
        })
    }

    /// As [`NoiseBudget::compute`], also sampling all four taps.
    pub fn compute_with_spectra(plan: &ChannelPlan, fiber: &FiberSpec, filters: &CoexistenceFilters) -> Result<Self> {
        let mut budget = Self::compute(plan, fiber, filters)?;
        for tap in Tap::ALL {
            budget
                .spectrum_samples
                .push((tap, export_spectrum(tap, plan, fiber, filters)?));
        }
        Ok(budget)
    }

    pub fn total_photons_per_s(&self) -> f64 {
        self.ase_inband_photons_per_s + self.raman_inband_photons_per_s
    }
}

/// Number of Simpson panels used across the quantum passband.
const PASSBAND_PANELS: usize = 64;

/// ASE photons per second inside the quantum passband at Bob's detectors.
///
/// Integrates the summed transmitter tails through Alice's cleaning cascade
/// and Bob's quantum-path cascade over the passband (composite Simpson).
pub fn ase_noise_rate(plan: &ChannelPlan, tx_cleaning: &[FilterElement], rx_filters: &[FilterElement]) -> Result<f64> {
    plan.validate()?;
    let center = plan.quantum_wavelength_nm;
    let width = plan.passband_nm();
    let (lo, hi) = (center - width / 2.0, center + width / 2.0);
    check_grid(lo)?;
    check_grid(hi)?;
    if plan.classical_wavelengths_nm.is_empty() {
        return Ok(0.0);
    }
    let carrier_mw = plan.launch_mw();
    let psd = |lambda: f64| -> f64 {
        let nu = wavelength_to_thz(lambda);
        let tails: f64 = plan
            .classical_wavelengths_nm
            .iter()
            .map(|&c| plan.ase_tail.psd_mw_per_nm(carrier_mw, nu - wavelength_to_thz(c)))
            .sum();
        tails * cascade_linear(tx_cleaning, lambda) * cascade_linear(rx_filters, lambda)
    };
    let n = PASSBAND_PANELS;
    let h = (hi - lo) / n as f64;
    let mut acc = psd(lo) + psd(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * psd(lo + i as f64 * h);
    }
    let power_mw = acc * h / 3.0;
    Ok(mw_to_photons_per_s(power_mw, center))
}

/// Raman PSD in mW/nm produced by all classical pumps at `wavelength_nm`
/// at the fiber output (co-propagating, single pass).
fn raman_psd_mw_per_nm(plan: &ChannelPlan, fiber: &FiberSpec, wavelength_nm: f64) -> f64 {
    if fiber.length_km <= 0.0 || fiber.raman_coefficient == 0.0 {
        return 0.0;
    }
    let nu = wavelength_to_thz(wavelength_nm);
    let pump_mw = plan.launch_mw();
    plan.classical_wavelengths_nm
        .iter()
        .map(|&p| {
            let rho = fiber.raman_profile.eval(nu - wavelength_to_thz(p));
            let l_eff = fiber.effective_length_km(fiber.attenuation_at(p));
            pump_mw * fiber.raman_coefficient * rho * l_eff
        })
        .sum()
}

/// Raman photons per second inside the quantum passband at Bob's detectors.
pub fn raman_noise_rate(plan: &ChannelPlan, fiber: &FiberSpec, rx_filters: &[FilterElement]) -> Result<f64> {
    plan.validate()?;
    fiber.validate()?;
    let center = plan.quantum_wavelength_nm;
    check_grid(center)?;
    let psd = raman_psd_mw_per_nm(plan, fiber, center);
    let power_mw = psd * plan.passband_nm() * cascade_linear(rx_filters, center);
    Ok(mw_to_photons_per_s(power_mw, center))
}

/// Anchor QBERs for the Raman calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RamanTargets {
    /// QBER of the layout with classical channels off.
    pub no_coex: f64,
    /// QBER with the classical channels on.
    pub coex: f64,
}

/// Finds the Raman coefficient at which `qber_of(coefficient)` hits
/// `targets.coex`, by bisection on `[0, upper_bound]` to 1e−6 relative.
///
/// `qber_of` is the analytic QBER of the co-existence scenario at the
/// calibration OB as a function of the coefficient; it must be
/// non-decreasing.
pub fn calibrate_raman<F>(targets: RamanTargets, upper_bound: f64, qber_of: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    const QBER_TOL: f64 = 1e-9;
    let base = qber_of(0.0);
    let goal = targets.coex;
    if (base - goal).abs() <= QBER_TOL {
        return Ok(0.0);
    }
    if base > goal {
        return Err(Error::Calibration(format!(
            "QBER without Raman noise is already {base:.5} > target {goal:.5} \
             (classical-off target {:.5})",
            targets.no_coex
        )));
    }
    let top = qber_of(upper_bound);
    if top < goal {
        return Err(Error::Calibration(format!(
            "no Raman coefficient in [0, {upper_bound:e}] reaches QBER {goal:.5} \
             (reached {top:.5}, classical-off target {:.5})",
            targets.no_coex
        )));
    }
    let (mut lo, mut hi) = (0.0f64, upper_bound);
    while (hi - lo) > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if qber_of(mid) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monitoring points along the link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tap {
    /// After the LAN-WDM multiplexer.
    Alpha,
    /// After Alice's co-existence filters.
    Beta,
    /// After the transmission fiber.
    Gamma,
    /// After Bob's quantum-path filters.
    Delta,
}

impl Tap {
    pub const ALL: [Tap; 4] = [Tap::Alpha, Tap::Beta, Tap::Gamma, Tap::Delta];

    pub fn symbol(&self) -> &'static str {
        match self {
            Tap::Alpha => "α",
            Tap::Beta => "β",
            Tap::Gamma => "γ",
            Tap::Delta => "δ",
        }
    }

    pub fn ascii(&self) -> &'static str {
        match self {
            Tap::Alpha => "alpha",
            Tap::Beta => "beta",
            Tap::Gamma => "gamma",
            Tap::Delta => "delta",
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "α" | "alpha" | "a" => Ok(Tap::Alpha),
            "β" | "beta" | "b" => Ok(Tap::Beta),
            "γ" | "gamma" | "c" | "g" => Ok(Tap::Gamma),
            "δ" | "delta" | "d" => Ok(Tap::Delta),
            _ => Err(Error::UnknownTap(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub wavelength_nm: f64,
    pub psd_dbm_per_nm: f64,
}

/// Composite PSD on the 600–1700 nm, 1 nm grid at one tap.
///
/// Carriers occupy the 1 nm bin nearest to their wavelength.
pub fn export_spectrum(tap: Tap, plan: &ChannelPlan, fiber: &FiberSpec, filters: &CoexistenceFilters) -> Result<Vec<SpectrumPoint>> {
    plan.validate()?;
    fiber.validate()?;
    let carrier_mw = plan.launch_mw();
    let n = ((GRID_MAX_NM - GRID_MIN_NM) / GRID_STEP_NM).round() as usize + 1;
    let carrier_bins: Vec<usize> = plan
        .classical_wavelengths_nm
        .iter()
        .map(|&c| ((c - GRID_MIN_NM) / GRID_STEP_NM).round() as usize)
        .collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = GRID_MIN_NM + i as f64 * GRID_STEP_NM;
        let nu = wavelength_to_thz(lambda);
        let mut psd: f64 = plan
            .classical_wavelengths_nm
            .iter()
            .map(|&c| plan.ase_tail.psd_mw_per_nm(carrier_mw, nu - wavelength_to_thz(c)))
            .sum();
        psd += carrier_bins.iter().filter(|&&b| b == i).count() as f64 * carrier_mw / GRID_STEP_NM;

        if tap != Tap::Alpha {
            psd *= cascade_linear(&filters.tx_cleaning, lambda);
        }
        if matches!(tap, Tap::Gamma | Tap::Delta) {
            psd *= db_to_linear(-fiber.loss_db(lambda));
            psd += raman_psd_mw_per_nm(plan, fiber, lambda);
        }
        if tap == Tap::Delta {
            psd *= cascade_linear(&filters.rx_quantum, lambda);
        }
        let dbm = if psd > 0.0 { mw_to_dbm(psd).max(PSD_FLOOR_DBM_PER_NM) } else { PSD_FLOOR_DBM_PER_NM };
        out.push(SpectrumPoint {
            wavelength_nm: lambda,
            psd_dbm_per_nm: dbm,
        });
    }
    Ok(out)
}

/// Writes a spectrum as `wavelength_nm,psd_dbm_per_nm` CSV with LF endings.
pub fn write_spectrum_csv<W: std::io::Write>(points: &[SpectrumPoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bpf() -> FilterElement {
        FilterElement::bandpass("BPF", 850.0, 7.0, 1.0, 60.0)
    }

    #[test]
    fn empty_cascade_is_identity() {
        assert_eq!(cascade_transmission(&[], 852.0).unwrap(), 0.0);
    }

    #[test]
    fn bandpass_stopband_at_oband() {
        assert_eq!(cascade_transmission(&[bpf()], 1310.0).unwrap(), -60.0);
        assert_eq!(cascade_transmission(&[bpf()], 852.0).unwrap(), -1.0);
    }

    #[test]
    fn shortwave_rx_passband_is_sum_of_losses() {
        let f = CoexistenceFilters::shortwave();
        assert_relative_eq!(cascade_transmission(&f.rx_quantum, 852.0).unwrap(), -(0.6 + 0.6 + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn grid_domain_is_enforced() {
        assert!(matches!(cascade_transmission(&[], 599.0), Err(Error::OutsideGrid(_))));
        assert!(matches!(cascade_transmission(&[], 1700.5), Err(Error::OutsideGrid(_))));
        assert!(cascade_transmission(&[], 1700.0).is_ok());
    }

    #[test]
    fn filters_with_gain_are_rejected() {
        let f = FilterElement {
            name: "amp".into(),
            shape: FilterShape::Flat { loss_db: 3.0 },
        };
        assert!(f.validate().is_err());
        assert!(CoexistenceFilters::shortwave().validate().is_ok());
        assert!(CoexistenceFilters::c_band().validate().is_ok());
    }

    #[test]
    fn plan_validation() {
        assert!(ChannelPlan::shortwave().validate().is_ok());
        let mut p = ChannelPlan::shortwave();
        p.classical_wavelengths_nm = vec![1309.14, 1295.56];
        assert!(p.validate().is_err());
        let mut p = ChannelPlan::c_band();
        p.classical_wavelengths_nm.push(1550.0);
        p.classical_wavelengths_nm.sort_by(f64::total_cmp);
        assert!(p.validate().is_err());
    }

    #[test]
    fn no_classical_channels_no_ase() {
        let f = CoexistenceFilters::shortwave();
        let plan = ChannelPlan::shortwave().without_classical();
        assert_eq!(ase_noise_rate(&plan, &f.tx_cleaning, &f.rx_quantum).unwrap(), 0.0);
    }

    #[test]
    fn ase_scales_with_launch_power() {
        let f = CoexistenceFilters::c_band();
        let plan = ChannelPlan::c_band();
        let mut low = plan.clone();
        low.classical_launch_dbm_per_channel -= 10.0;
        let a = ase_noise_rate(&plan, &f.tx_cleaning, &f.rx_quantum).unwrap();
        let b = ase_noise_rate(&low, &f.tx_cleaning, &f.rx_quantum).unwrap();
        assert!(a > 0.0);
        assert_relative_eq!(a / b, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn effective_length_limits() {
        let f = FiberSpec::smf28(1.0);
        assert_relative_eq!(f.effective_length_km(0.0), 1.0);
        assert_relative_eq!(f.effective_length_km(1e-9), 1.0, max_relative = 1e-9);
        assert!(f.effective_length_km(0.35) < 1.0);
        // Closed form at α = 0.35 dB/km.
        let a = 0.35 * std::f64::consts::LN_10 / 10.0;
        assert_relative_eq!(f.effective_length_km(0.35), (1.0 - (-a).exp()) / a, max_relative = 1e-12);
    }

    #[test]
    fn raman_profile_support() {
        let p = RamanProfile::default();
        assert_eq!(p.eval(100.5), 0.0);
        assert_eq!(p.eval(-121.7), 0.0);
        assert!(p.eval(-37.0) > 0.0);
        assert_relative_eq!(p.eval(13.2), 1.0);
    }

    #[test]
    fn raman_needs_fiber() {
        let f = CoexistenceFilters::c_band();
        let mut fiber = FiberSpec::smf28(0.0);
        fiber.raman_coefficient = 1e-9;
        assert_eq!(raman_noise_rate(&ChannelPlan::c_band(), &fiber, &f.rx_quantum).unwrap(), 0.0);
    }

    #[test]
    fn raman_band_selectivity() {
        let mut fiber = FiberSpec::smf28(1.0);
        fiber.raman_coefficient = 1e-9;
        let sw = raman_noise_rate(&ChannelPlan::shortwave(), &fiber, &CoexistenceFilters::shortwave().rx_quantum).unwrap();
        let cb = raman_noise_rate(&ChannelPlan::c_band(), &fiber, &CoexistenceFilters::c_band().rx_quantum).unwrap();
        assert_eq!(sw, 0.0);
        assert!(cb > 0.0);
    }

    #[test]
    fn calibrate_raman_zero_gap() {
        let c = calibrate_raman(RamanTargets { no_coex: 0.073, coex: 0.073 }, 1.0, |_| 0.073).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn calibrate_raman_linear_model() {
        // qber = 0.036 + 0.5 * c, root of 0.073 at c = 0.074.
        let c = calibrate_raman(RamanTargets { no_coex: 0.036, coex: 0.073 }, 1.0, |c| 0.036 + 0.5 * c).unwrap();
        assert_relative_eq!(c, 0.074, max_relative = 2e-6);
    }

    #[test]
    fn calibrate_raman_no_root() {
        let r = calibrate_raman(RamanTargets { no_coex: 0.036, coex: 0.073 }, 1e-3, |c| 0.036 + c);
        assert!(matches!(r, Err(Error::Calibration(_))));
        let r = calibrate_raman(RamanTargets { no_coex: 0.036, coex: 0.073 }, 1.0, |_| 0.2);
        assert!(matches!(r, Err(Error::Calibration(_))));
    }

    #[test]
    fn tap_parsing() {
        assert_eq!("γ".parse::<Tap>().unwrap(), Tap::Gamma);
        assert_eq!("Delta".parse::<Tap>().unwrap(), Tap::Delta);
        assert!(matches!("ε".parse::<Tap>(), Err(Error::UnknownTap(_))));
    }

    #[test]
    fn spectrum_grid_shape() {
        let s = export_spectrum(Tap::Alpha, &ChannelPlan::shortwave(), &FiberSpec::smf28(1.0), &CoexistenceFilters::shortwave()).unwrap();
        assert_eq!(s.len(), 1101);
        assert_eq!(s[0].wavelength_nm, 600.0);
        assert_eq!(s[1100].wavelength_nm, 1700.0);
        // Carriers at +3 dBm in a 1 nm bin.
        let peak = s.iter().map(|p| p.psd_dbm_per_nm).fold(f64::MIN, f64::max);
        assert!(peak > 2.9 && peak < 3.1, "{peak}");
    }

    #[test]
    fn csv_header_and_line_endings() {
        let pts = vec![SpectrumPoint { wavelength_nm: 600.0, psd_dbm_per_nm: -80.5 }];
        let mut buf = Vec::new();
        write_spectrum_csv(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "wavelength_nm,psd_dbm_per_nm\n600.0,-80.5\n");
    }
}
