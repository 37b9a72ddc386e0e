//! Back-solving the free model parameters against the measured anchors.
//!
//! Order matters: losses before error rates before Raman, because each later
//! anchor depends on the earlier parameters.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::scenario::{Layout, ScenarioConfig, ScenarioFile};
use crate::analytic::LinkModel;
use crate::error::{Error, Result};
use crate::optics::{calibrate_raman, NoiseBudget, RamanTargets};

pub const SHORTWAVE_B2B_RATE_BPS: f64 = 15.6e3;
pub const SHORTWAVE_B2B_QBER: f64 = 0.073;
pub const CBAND_B2B_RATE_BPS: f64 = 7.3e3;
pub const CBAND_B2B_QBER: f64 = 0.036;
pub const CBAND_COEX_QBER: f64 = 0.073;
/// Single-mode shortwave rate at the post-processing saturation point.
pub const SATURATION_RATE_BPS: f64 = 89.5e3;
pub const SATURATION_OB_DB: f64 = 12.0;
/// Long-run few-mode shortwave rate under co-existence.
pub const STABILITY_RATE_BPS: f64 = 20.3e3;

/// Upper bound of the Raman coefficient search, 1/(km·nm).
const RAMAN_SEARCH_MAX: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedParams {
    pub shortwave_excess_loss_db: f64,
    pub shortwave_intrinsic_error: f64,
    pub cband_excess_loss_db: f64,
    pub cband_intrinsic_error: f64,
    pub raman_coefficient: f64,
    pub single_mode_excess_loss_db: f64,
    #[serde(default)]
    pub max_throughput_cps: Option<f64>,
    #[serde(default)]
    pub stability_excess_loss_db: Option<f64>,
}

impl CalibratedParams {
    /// Nominal hardware values with every fitted parameter at zero.
    pub fn uncalibrated() -> Self {
        Self {
            shortwave_excess_loss_db: 0.0,
            shortwave_intrinsic_error: 0.0,
            cband_excess_loss_db: 0.0,
            cband_intrinsic_error: 0.0,
            raman_coefficient: 0.0,
            single_mode_excess_loss_db: 0.0,
            max_throughput_cps: None,
            stability_excess_loss_db: None,
        }
    }

    /// Calibration result, computed once per process.
    pub fn calibrated() -> Result<&'static CalibratedParams> {
        static CACHE: OnceLock<std::result::Result<CalibratedParams, String>> = OnceLock::new();
        CACHE
            .get_or_init(|| run_calibration().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Calibration(e.clone()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parameter file with a comment per value naming the anchor it was
    /// fitted to.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let mut entry = |comment: &str, key: &str, value: Option<f64>| {
            let _ = writeln!(s, "# {comment}");
            match value {
                Some(v) => {
                    let _ = writeln!(s, "{key} = {v:?}\n");
                }
                None => {
                    let _ = writeln!(s, "# {key} not set\n");
                }
            }
        };
        entry(
            "few-mode shortwave receiver excess loss, dB: 15.6 kb/s per basis back-to-back at OB 0",
            "shortwave_excess_loss_db",
            Some(self.shortwave_excess_loss_db),
        );
        entry(
            "shortwave intrinsic error rate: QBER 7.3 % back-to-back at OB 0",
            "shortwave_intrinsic_error",
            Some(self.shortwave_intrinsic_error),
        );
        entry(
            "C-band receiver excess loss, dB: 7.3 kb/s per basis back-to-back at OB 0",
            "cband_excess_loss_db",
            Some(self.cband_excess_loss_db),
        );
        entry(
            "C-band intrinsic error rate: QBER 3.6 % back-to-back at OB 0",
            "cband_intrinsic_error",
            Some(self.cband_intrinsic_error),
        );
        entry(
            "Raman coefficient, 1/(km nm): C-band co-existence QBER 7.3 % at OB 0 over 1 km",
            "raman_coefficient",
            Some(self.raman_coefficient),
        );
        entry(
            "single-mode shortwave excess loss, dB: 89.5 kb/s sifted at OB 12 without saturation",
            "single_mode_excess_loss_db",
            Some(self.single_mode_excess_loss_db),
        );
        entry(
            "post-processing ceiling, gated tags/s: saturation reached at OB 12 in single-mode shortwave",
            "max_throughput_cps",
            self.max_throughput_cps,
        );
        entry(
            "long-run session excess loss, dB: 20.3 kb/s per basis mean under co-existence at OB 0",
            "stability_excess_loss_db",
            self.stability_excess_loss_db,
        );
        let mut out = String::from("# Calibrated link parameters. Regenerate with `swqkd calibrate`.\n\n");
        out.push_str(s.trim_end());
        out.push('\n');
        out
    }
}

/// Bisection for a monotone `f` on `[lo, hi]`; `f(lo) - target` and
/// `f(hi) - target` must differ in sign.
fn solve<F: Fn(f64) -> f64>(what: &str, f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo) - target, f(hi) - target);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Calibration(format!(
            "{what}: target {target} not bracketed in [{lo}, {hi}] (values {} .. {})",
            flo + target,
            fhi + target
        )));
    }
    let rising = fhi > 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) - target > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn scenario(layout: Layout, coexistence: bool, fiber_km: f64, p: &CalibratedParams) -> Result<ScenarioConfig> {
    ScenarioFile::preset(layout, coexistence, fiber_km).resolve(layout.preset_stem(), p)
}

/// Fits loss then error rate against a back-to-back anchor, repeating until
/// the weak coupling between the two settles.
fn fit_b2b(model: &LinkModel, rate: f64, qber: f64) -> Result<(f64, f64)> {
    let mut m = model.clone();
    for _ in 0..6 {
        let loss = solve(
            "excess loss",
            |x| {
                let mut t = m.clone();
                t.receiver.excess_loss_db = x;
                t.predict(0.0).per_basis_rate_bps()
            },
            rate,
            -30.0,
            60.0,
            1e-10,
        )?;
        m.receiver.excess_loss_db = loss;
        let e = solve(
            "intrinsic error",
            |x| {
                let mut t = m.clone();
                t.receiver.intrinsic_error_rate = x;
                t.predict(0.0).qber
            },
            qber,
            0.0,
            0.45,
            1e-12,
        )?;
        m.receiver.intrinsic_error_rate = e;
    }
    Ok((m.receiver.excess_loss_db, m.receiver.intrinsic_error_rate))
}

/// Runs every calibration step.
pub fn run_calibration() -> Result<CalibratedParams> {
    run_calibration_steps(true)
}

/// As [`run_calibration`]; `with_raman = false` skips the Raman step and
/// leaves the coefficient at zero.
pub fn run_calibration_steps(with_raman: bool) -> Result<CalibratedParams> {
    let mut p = CalibratedParams::uncalibrated();

    let sw = scenario(Layout::FewModeShortwave, false, 0.0, &p)?.link_model()?;
    (p.shortwave_excess_loss_db, p.shortwave_intrinsic_error) = fit_b2b(&sw, SHORTWAVE_B2B_RATE_BPS, SHORTWAVE_B2B_QBER)?;

    let cb = scenario(Layout::SingleModeCband, false, 0.0, &p)?.link_model()?;
    (p.cband_excess_loss_db, p.cband_intrinsic_error) = fit_b2b(&cb, CBAND_B2B_RATE_BPS, CBAND_B2B_QBER)?;

    if with_raman {
        let coex = scenario(Layout::SingleModeCband, true, 1.0, &p)?;
        let base = coex.link_model()?;
        p.raman_coefficient = calibrate_raman(
            RamanTargets {
                no_coex: CBAND_B2B_QBER,
                coex: CBAND_COEX_QBER,
            },
            RAMAN_SEARCH_MAX,
            |k| {
                let mut fiber = coex.fiber.clone();
                fiber.raman_coefficient = k;
                let mut m = base.clone();
                m.noise = NoiseBudget::compute(&coex.plan, &fiber, &coex.filters).unwrap_or_default();
                m.predict(0.0).qber
            },
        )?;
    }

    let sm = scenario(Layout::SingleModeShortwave, false, 1.0, &p)?.link_model()?;
    p.single_mode_excess_loss_db = solve(
        "single-mode excess loss",
        |x| {
            let mut t = sm.clone();
            t.receiver.excess_loss_db = x;
            t.predict(SATURATION_OB_DB).sifted_rate_bps
        },
        SATURATION_RATE_BPS,
        -30.0,
        60.0,
        1e-10,
    )?;
    let mut knee = sm.clone();
    knee.receiver.excess_loss_db = p.single_mode_excess_loss_db;
    let at_knee = knee.predict(SATURATION_OB_DB);
    p.max_throughput_cps = Some(at_knee.signal_rate_cps + at_knee.noise_rate_cps);

    let st = scenario(Layout::FewModeShortwave, true, 1.0, &p)?.stability_model()?;
    p.stability_excess_loss_db = Some(solve(
        "session excess loss",
        |x| {
            let mut t = st.clone();
            t.receiver.excess_loss_db = x;
            t.predict(0.0).per_basis_rate_bps()
        },
        STABILITY_RATE_BPS,
        -30.0,
        60.0,
        1e-10,
    )?);
    Ok(p)
}

/// One anchor and what the calibrated model gives for it.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorCheck {
    pub name: &'static str,
    pub target: f64,
    pub achieved: f64,
}

impl AnchorCheck {
    pub fn relative_error(&self) -> f64 {
        (self.achieved - self.target).abs() / self.target
    }
}

pub fn check_anchors(p: &CalibratedParams) -> Result<Vec<AnchorCheck>> {
    let sw = scenario(Layout::FewModeShortwave, false, 0.0, p)?.link_model()?.predict(0.0);
    let cb = scenario(Layout::SingleModeCband, false, 0.0, p)?.link_model()?.predict(0.0);
    let cx = scenario(Layout::SingleModeCband, true, 1.0, p)?.link_model()?.predict(0.0);
    let sm = scenario(Layout::SingleModeShortwave, false, 1.0, p)?.link_model()?.predict(SATURATION_OB_DB);
    let st = scenario(Layout::FewModeShortwave, true, 1.0, p)?.stability_model()?.predict(0.0);
    Ok(vec![
        AnchorCheck { name: "shortwave b2b per-basis rate (b/s)", target: SHORTWAVE_B2B_RATE_BPS, achieved: sw.per_basis_rate_bps() },
        AnchorCheck { name: "shortwave b2b QBER", target: SHORTWAVE_B2B_QBER, achieved: sw.qber },
        AnchorCheck { name: "C-band b2b per-basis rate (b/s)", target: CBAND_B2B_RATE_BPS, achieved: cb.per_basis_rate_bps() },
        AnchorCheck { name: "C-band b2b QBER", target: CBAND_B2B_QBER, achieved: cb.qber },
        AnchorCheck { name: "C-band co-existence QBER", target: CBAND_COEX_QBER, achieved: cx.qber },
        AnchorCheck { name: "single-mode shortwave sifted rate at OB 12 (b/s)", target: SATURATION_RATE_BPS, achieved: sm.sifted_rate_bps },
        AnchorCheck { name: "long-run per-basis rate (b/s)", target: STABILITY_RATE_BPS, achieved: st.per_basis_rate_bps() },
    ])
}
