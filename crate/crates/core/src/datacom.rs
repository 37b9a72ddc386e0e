//! Co-propagating 25 Gb/s PAM4 LAN-WDM channels: received power accounting
//! and a thermal-noise-limited BER model.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{config_err, Result};
use crate::optics::{cascade_transmission, FiberSpec, FilterElement};
use crate::units::dbm_to_mw;

/// KR4 FEC threshold.
pub const KR4_FEC_BER: f64 = 2.2e-4;
/// Receiver sensitivity at the FEC threshold, dBm.
pub const SENSITIVITY_DBM: f64 = -11.1;

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn q_inverse(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PamReceiverModel {
    pub noise_sigma_w: f64,
    pub fec_threshold_ber: f64,
    pub anchor_rop_dbm: f64,
    pub anchor_ber: f64,
}

impl PamReceiverModel {
    /// Noise calibrated so that `anchor_rop_dbm` gives `anchor_ber`.
    pub fn calibrate(anchor_rop_dbm: f64, anchor_ber: f64, fec_threshold_ber: f64) -> Result<Self> {
        if !(anchor_ber > 0.0 && anchor_ber < 0.75) {
            return Err(config_err("datacom.anchor_ber", "must lie in (0, 0.75)"));
        }
        let p_w = dbm_to_mw(anchor_rop_dbm) * 1e-3;
        let q = q_inverse(anchor_ber * 4.0 / 3.0);
        Ok(Self {
            noise_sigma_w: p_w / (6.0 * q),
            fec_threshold_ber,
            anchor_rop_dbm,
            anchor_ber,
        })
    }

    /// Calibrated to −11.1 dBm at the KR4 threshold.
    pub fn calibrated() -> Self {
        Self::calibrate(SENSITIVITY_DBM, KR4_FEC_BER, KR4_FEC_BER).expect("anchor is valid")
    }

    pub fn ber(&self, rop_dbm: f64) -> f64 {
        ber_vs_rop(rop_dbm, self)
    }

    pub fn fec_pass(&self, rop_dbm: f64) -> bool {
        self.ber(rop_dbm) <= self.fec_threshold_ber
    }
}

/// BER = (3/4)·Q(P / 6σ) for an equally spaced four-level eye.
pub fn ber_vs_rop(rop_dbm: f64, model: &PamReceiverModel) -> f64 {
    let p_w = dbm_to_mw(rop_dbm) * 1e-3;
    0.75 * q_function(p_w / (6.0 * model.noise_sigma_w))
}

/// Received power: launch minus fiber loss and filter cascade.
pub fn link_rop(launch_dbm: f64, fiber: &FiberSpec, filters: &[FilterElement], wavelength_nm: f64) -> Result<f64> {
    Ok(launch_dbm - fiber.loss_db(wavelength_nm) + cascade_transmission(filters, wavelength_nm)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub rop_dbm: f64,
    pub ber: f64,
    pub fec_pass: bool,
}

pub fn ber_sweep(model: &PamReceiverModel, rops_dbm: &[f64]) -> Vec<BerPoint> {
    rops_dbm
        .iter()
        .map(|&r| BerPoint {
            rop_dbm: r,
            ber: model.ber(r),
            fec_pass: model.fec_pass(r),
        })
        .collect()
}

/// Writes `rop_dbm,ber,fec_pass` rows.
pub fn write_ber_csv<W: std::io::Write>(points: &[BerPoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
