//! Closed-form rate equations for detection rate, sifted rate and QBER as a
//! function of optical budget. Serves as the oracle for the Monte Carlo path
//! and as the engine for calibration and fast sweeps.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::detection::{DetectorSpec, ReceiverSpec, DETECTORS};
use crate::error::{Error, Result};
use crate::optics::NoiseBudget;
use crate::postproc::{ProcessorConfig, SiftResult};
use crate::source::SourceConfig;
use crate::units::db_to_linear;

/// Search range of [`threshold_ob`].
pub const MAX_OB_DB: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub ob_db: f64,
    /// Gated signal clicks, all detectors, after dead time.
    pub signal_rate_cps: f64,
    /// Gated dark and crosstalk clicks, all detectors, after dead time.
    pub noise_rate_cps: f64,
    /// Both bases, header excluded, after the throughput ceiling.
    pub sifted_rate_bps: f64,
    pub qber: f64,
    /// Ungated click rate of one detector after dead time.
    pub per_detector_rate_cps: f64,
}

impl RatePrediction {
    pub fn per_basis_rate_bps(&self) -> f64 {
        self.sifted_rate_bps / 2.0
    }
}

/// Every parameter the rate equations depend on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub source: SourceConfig,
    pub receiver: ReceiverSpec,
    pub detector: DetectorSpec,
    pub noise: NoiseBudget,
    pub processor: ProcessorConfig,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Antiderivative of Φ.
fn phi_integral(x: f64) -> f64 {
    x * std_normal_cdf(x) + std_normal_pdf(x)
}

/// Probability that an arrival, uniform over `spread_ps` and blurred by
/// Gaussian jitter `sigma_ps`, lands inside `±half_width_ps`.
pub fn gate_acceptance(half_width_ps: f64, sigma_ps: f64, spread_ps: f64) -> f64 {
    let w = half_width_ps.max(0.0);
    match (sigma_ps > 0.0, spread_ps > 0.0) {
        (false, false) => 1.0,
        (true, false) => erf(w / (sigma_ps * std::f64::consts::SQRT_2)),
        (false, true) => (2.0 * w / spread_ps).min(1.0),
        (true, true) => {
            let (s, h) = (sigma_ps, spread_ps / 2.0);
            let f = |x: f64| phi_integral(x / s);
            (s / spread_ps * (f(w + h) - f(w - h) - f(-w + h) + f(-w - h))).clamp(0.0, 1.0)
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.receiver.validate()?;
        self.detector.validate()?;
        self.processor.validate()
    }

    /// Gate acceptance of signal clicks.
    pub fn signal_gate_acceptance(&self) -> f64 {
        let half = self.processor.gate_fraction * self.source.symbol_period_ps() / 2.0;
        gate_acceptance(half, self.detector.timing_jitter_sigma_ps, self.source.emission_spread_ps)
    }

    /// Prediction with the few-mode coupling at its long-time mean.
    pub fn predict(&self, ob_db: f64) -> RatePrediction {
        self.predict_with_coupling(ob_db, self.receiver.mean_coupling())
    }

    /// Prediction at an explicit coupling efficiency (1 = no ringing loss).
    ///
    /// Detected photons per symbol are Poisson and split over the four
    /// detectors independently, so each detector sees an independent Poisson
    /// count. A symbol is kept only when exactly one detector clicks; two
    /// photons on the same detector count once. At low mean photon number
    /// this reduces to sifted = ½·(S + N), QBER = (e·S + ½N)/(S + N).
    pub fn predict_with_coupling(&self, ob_db: f64, coupling: f64) -> RatePrediction {
        let src = &self.source;
        let det = &self.detector;
        let eta = det.efficiency;
        let rate = src.symbol_rate_hz;
        let e = self.receiver.total_error_rate();
        let mu_det = src.mean_photon_number * db_to_linear(-(ob_db + self.receiver.loss_db())) * eta * coupling;
        // Channel shares for a given state: same, orthogonal, two in the other basis.
        let shares = [(1.0 - e) / 2.0, e / 2.0, 0.25, 0.25];
        let any_click = |m: f64| -> f64 { shares.iter().map(|p| -(-m * p).exp_m1()).sum() };

        let n_ungated = DETECTORS as f64 * det.dark_count_rate_hz + self.noise.total_photons_per_s() * eta;
        let pre_per_det = (rate * any_click(mu_det) + n_ungated) / DETECTORS as f64;
        let f_dead = det.dead_time_survival(pre_per_det);

        let m_gated = mu_det * self.signal_gate_acceptance();
        let signal = rate * any_click(m_gated) * f_dead;
        let noise = n_ungated * self.processor.gate_fraction * f_dead;
        let k = match self.processor.max_throughput_cps {
            Some(c) if signal + noise > c => c / (signal + noise),
            _ => 1.0,
        };
        // The ceiling drops whole symbols, so it scales counts without
        // changing which symbols are single clicks.
        let q: Vec<f64> = shares.iter().map(|p| -(-m_gated * p).exp_m1()).collect();
        let single = |c: usize| q[c] * (0..4).filter(|&o| o != c).map(|o| 1.0 - q[o]).product::<f64>();
        let sig_sift = rate * (single(0) + single(1)) * f_dead * k;
        let sig_err = rate * single(1) * f_dead * k;
        let noise_kept = noise * k;
        let payload = src.payload_fraction();
        let sifted = payload * (sig_sift + 0.5 * noise_kept);
        let errors = payload * (sig_err + 0.25 * noise_kept);
        let qber = if sifted > 0.0 { (errors / sifted).clamp(0.0, 0.5) } else { 0.5 };
        RatePrediction {
            ob_db,
            signal_rate_cps: signal,
            noise_rate_cps: noise,
            sifted_rate_bps: sifted,
            qber,
            per_detector_rate_cps: pre_per_det * f_dead,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Optical budget where QBER reaches the threshold; `+∞` if not within
    /// [`MAX_OB_DB`].
    pub ob_db: f64,
    /// QBER was already at or above threshold at zero budget.
    pub above_at_zero: bool,
}

impl Threshold {
    pub fn is_finite(&self) -> bool {
        self.ob_db.is_finite()
    }
}

/// Optical budget at which the predicted QBER crosses the processor's
/// threshold, by bisection to 1e-4 dB.
pub fn threshold_ob(model: &LinkModel) -> Threshold {
    let q_th = model.processor.qber_threshold;
    let q = |ob: f64| model.predict(ob).qber;
    if q(0.0) >= q_th {
        return Threshold {
            ob_db: 0.0,
            above_at_zero: true,
        };
    }
    if q(MAX_OB_DB) < q_th {
        return Threshold {
            ob_db: f64::INFINITY,
            above_at_zero: false,
        };
    }
    let (mut lo, mut hi) = (0.0, MAX_OB_DB);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if q(mid) < q_th {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Threshold {
        ob_db: 0.5 * (lo + hi),
        above_at_zero: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub expected_sifted: f64,
    pub observed_sifted: u64,
    pub z_rate: f64,
    pub z_qber: f64,
    pub pass: bool,
}

/// Compares a simulated sift against the prediction: Poisson error on the
/// sifted count, binomial error on the QBER.
pub fn mc_agreement(prediction: &RatePrediction, sim: &SiftResult) -> Result<Agreement> {
    if !(sim.duration_s > 0.0) {
        return Err(Error::Mismatch("simulation has no duration".into()));
    }
    let expected = prediction.sifted_rate_bps * sim.duration_s;
    let observed = sim.sifted_bits();
    let z_rate = if expected > 0.0 {
        (observed as f64 - expected) / expected.sqrt()
    } else if observed == 0 {
        0.0
    } else {
        f64::INFINITY
    };
    let z_qber = if observed > 0 {
        let q_obs = sim.errors() as f64 / observed as f64;
        let q = prediction.qber;
        let var = q * (1.0 - q) / observed as f64;
        if var > 0.0 {
            (q_obs - q) / var.sqrt()
        } else if q_obs == q {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    Ok(Agreement {
        expected_sifted: expected,
        observed_sifted: observed,
        z_rate,
        z_qber,
        pass: z_rate.abs() <= 3.0 && z_qber.abs() <= 3.0,
    })
}

/// The sift an ideal simulation of `duration_s` would report.
pub fn expected_sift(prediction: &RatePrediction, duration_s: f64) -> SiftResult {
    let bits = (prediction.sifted_rate_bps * duration_s).round() as u64;
    let mut r = SiftResult {
        duration_s,
        ..Default::default()
    };
    for (i, b) in r.per_basis.iter_mut().enumerate() {
        b.sifted_bits = bits / 2 + (i as u64) * (bits % 2);
        b.errors = (b.sifted_bits as f64 * prediction.qber).round() as u64;
        b.qber = prediction.qber;
        b.raw_key_rate_bps = b.sifted_bits as f64 / duration_s;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> LinkModel {
        let mut rx = ReceiverSpec::shortwave_free_space();
        rx.intrinsic_error_rate = 0.05;
        LinkModel {
            source: SourceConfig::default(),
            receiver: rx,
            detector: DetectorSpec::silicon(),
            noise: NoiseBudget {
                ase_inband_photons_per_s: 0.0,
                raman_inband_photons_per_s: 5e4,
                spectrum_samples: vec![],
            },
            processor: ProcessorConfig::default(),
        }
    }

    /// Direct midpoint-rule convolution as an independent oracle.
    fn gate_numeric(w: f64, sigma: f64, spread: f64) -> f64 {
        let n = 4000;
        let mut acc = 0.0;
        for i in 0..n {
            let u = -spread / 2.0 + spread * (i as f64 + 0.5) / n as f64;
            acc += 0.5 * (erf((w - u) / (sigma * 2f64.sqrt())) + erf((w + u) / (sigma * 2f64.sqrt())));
        }
        acc / n as f64
    }

    #[test]
    fn gate_acceptance_matches_numeric_convolution() {
        for &(w, s, sp) in &[(224.7, 100.0, 800.0), (224.7, 100.0, 100.0), (50.0, 30.0, 400.0)] {
            assert_relative_eq!(gate_acceptance(w, s, sp), gate_numeric(w, s, sp), epsilon = 1e-6);
        }
        assert_relative_eq!(gate_acceptance(224.7, 100.0, 0.0), 0.97535, epsilon = 1e-4);
        assert_relative_eq!(gate_acceptance(100.0, 0.0, 800.0), 0.25);
    }

    #[test]
    fn large_budget_limit() {
        let m = model();
        let p = m.predict(200.0);
        assert_relative_eq!(p.qber, 0.5, epsilon = 1e-9);
        assert_relative_eq!(p.sifted_rate_bps, 0.5 * m.source.payload_fraction() * p.noise_rate_cps, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_qber_is_intrinsic() {
        let mut m = model();
        m.noise = NoiseBudget::none();
        m.detector.dark_count_rate_hz = 0.0;
        // Multi-photon double clicks shift it by O(μ_det) only.
        for ob in [0.0, 7.0, 25.0] {
            assert_relative_eq!(m.predict(ob).qber, 0.05, max_relative = 1e-4);
        }
        let t = threshold_ob(&m);
        assert!(t.ob_db.is_infinite() && !t.above_at_zero);
    }

    #[test]
    fn monotone_in_budget() {
        let m = model();
        let mut prev = m.predict(0.0);
        for i in 1..=400 {
            let p = m.predict(i as f64 * 0.1);
            assert!(p.qber >= prev.qber);
            assert!(p.signal_rate_cps < prev.signal_rate_cps);
            prev = p;
        }
    }

    #[test]
    fn more_dark_counts_lower_threshold() {
        let m = model();
        let mut m2 = m.clone();
        m2.detector.dark_count_rate_hz *= 2.0;
        let (a, b) = (threshold_ob(&m).ob_db, threshold_ob(&m2).ob_db);
        assert!(a.is_finite() && b < a, "{a} {b}");
        assert!((m.predict(a).qber - 0.11).abs() < 1e-4);
    }

    #[test]
    fn threshold_flags_high_start() {
        let mut m = model();
        m.receiver.intrinsic_error_rate = 0.2;
        assert_eq!(threshold_ob(&m), Threshold { ob_db: 0.0, above_at_zero: true });
    }

    #[test]
    fn ingaas_rate_bounded_by_dead_time() {
        let mut m = model();
        m.detector = DetectorSpec::ingaas();
        m.receiver.bypass_polarimeter = true;
        m.source.mean_photon_number = 1.0;
        assert!(m.predict(0.0).per_detector_rate_cps < 40_000.0);
    }

    #[test]
    fn ceiling_caps_sifted_rate() {
        let mut m = model();
        m.receiver.bypass_polarimeter = true;
        m.processor.max_throughput_cps = Some(1000.0);
        let p = m.predict(0.0);
        assert!(p.signal_rate_cps > 10_000.0);
        // Half the kept clicks, less the few symbols where two detectors fire.
        let half = 500.0 * m.source.payload_fraction();
        assert!(p.sifted_rate_bps <= half && p.sifted_rate_bps > 0.98 * half, "{}", p.sifted_rate_bps);
    }

    #[test]
    fn self_agreement() {
        let p = model().predict(3.0);
        let a = mc_agreement(&p, &expected_sift(&p, 10.0)).unwrap();
        assert!(a.z_rate.abs() < 1e-2 && a.z_qber.abs() < 1e-2, "{a:?}");
        assert!(mc_agreement(&p, &SiftResult::default()).is_err());
    }
}
