//! Channel and Bob's receiver: loss, passive basis choice, polarization
//! decoding errors, dark and crosstalk counts, SPAD jitter and dead time.
//!
//! Output is four per-detector [`TimeTag`] streams (0 = A, 1 = D, 2 = R,
//! 3 = L), each time-ordered with dead time already enforced.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::optics::NoiseBudget;
use crate::source::{PhotonSource, PolarizationState};
use crate::timetag::{TimeTag, FLAG_SIGNAL};
use crate::units::db_to_linear;

pub const DETECTORS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadTimeModel {
    /// Clicks during the dead period are lost without extending it.
    #[default]
    NonParalyzable,
    /// Every arrival, counted or not, restarts the dead period.
    Paralyzable,
}

/// Efficiency roll-off above a knee wavelength, linear in dB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rolloff {
    pub knee_nm: f64,
    pub db_per_100nm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Per detector.
    pub dark_count_rate_hz: f64,
    pub dead_time_ps: f64,
    pub timing_jitter_sigma_ps: f64,
    #[serde(default)]
    pub responsivity_rolloff: Option<Rolloff>,
    #[serde(default)]
    pub dead_time_model: DeadTimeModel,
}

impl DetectorSpec {
    /// Silicon SPAD: 10 % efficiency, 100 cts/s. The 50 ns dead time is a
    /// default that stays non-limiting below ~10⁷ cts/s.
    pub fn silicon() -> Self {
        Self {
            efficiency: 0.10,
            dark_count_rate_hz: 100.0,
            dead_time_ps: 50e3,
            timing_jitter_sigma_ps: 100.0,
            responsivity_rolloff: Some(Rolloff {
                knee_nm: 900.0,
                db_per_100nm: 6.0,
            }),
            dead_time_model: DeadTimeModel::NonParalyzable,
        }
    }

    /// InGaAs SPAD: 25 µs dead time, 570 cts/s.
    ///
    /// The 20 % efficiency is an assumption; absolute C-band rates are
    /// re-anchored by the calibrated receiver excess loss.
    pub fn ingaas() -> Self {
        Self {
            efficiency: 0.20,
            dark_count_rate_hz: 570.0,
            dead_time_ps: 25e6,
            timing_jitter_sigma_ps: 100.0,
            responsivity_rolloff: None,
            dead_time_model: DeadTimeModel::NonParalyzable,
        }
    }

    pub fn efficiency_at(&self, wavelength_nm: f64) -> f64 {
        match self.responsivity_rolloff {
            Some(r) if wavelength_nm > r.knee_nm => {
                self.efficiency * db_to_linear(-r.db_per_100nm * (wavelength_nm - r.knee_nm) / 100.0)
            }
            _ => self.efficiency,
        }
    }

    /// Output/input rate ratio of one detector at input rate `rate_hz`.
    pub fn dead_time_survival(&self, rate_hz: f64) -> f64 {
        let x = rate_hz * self.dead_time_ps * 1e-12;
        match self.dead_time_model {
            DeadTimeModel::NonParalyzable => 1.0 / (1.0 + x),
            DeadTimeModel::Paralyzable => (-x).exp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(config_err("detector.efficiency", "must lie in [0, 1]"));
        }
        if !(self.dead_time_ps >= 0.0) {
            return Err(config_err("detector.dead_time_ps", "must be ≥ 0"));
        }
        if !(self.dark_count_rate_hz >= 0.0) {
            return Err(config_err("detector.dark_count_rate_hz", "must be ≥ 0"));
        }
        if !(self.timing_jitter_sigma_ps >= 0.0) {
            return Err(config_err("detector.timing_jitter_sigma_ps", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Slow oscillation of the few-mode coupling efficiency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ringing {
    pub amplitude: f64,
    pub period_s: f64,
}

impl Ringing {
    /// Long-time average of [`few_mode_modulation`].
    pub fn mean_coupling(&self) -> f64 {
        1.0 - self.amplitude / 2.0
    }
}

/// Coupling efficiency 1 − a·(1 + sin(2πt/T))/2 at time `t_s`.
pub fn few_mode_modulation(t_s: f64, ringing: &Ringing) -> Result<f64> {
    if !(0.0..1.0).contains(&ringing.amplitude) {
        return Err(Error::Domain(format!(
            "ringing amplitude {} outside [0, 1)",
            ringing.amplitude
        )));
    }
    if !(ringing.period_s > 0.0) {
        return Err(Error::Domain("ringing period must be positive".into()));
    }
    Ok(modulation_unchecked(t_s, ringing))
}

fn modulation_unchecked(t_s: f64, r: &Ringing) -> f64 {
    let phase = 2.0 * std::f64::consts::PI * t_s / r.period_s;
    1.0 - r.amplitude * (1.0 + phase.sin()) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub polarimeter_loss_db: f64,
    /// Fiber PBS reached directly, polarimeter loss not incurred.
    pub bypass_polarimeter: bool,
    /// Calibrated extra loss (coupling, mode filtering) on top of the polarimeter.
    #[serde(default)]
    pub excess_loss_db: f64,
    pub intrinsic_error_rate: f64,
    /// Additive QBER penalty for few-mode transmission; 0 when single-mode.
    #[serde(default)]
    pub few_mode_penalty_qber: f64,
    #[serde(default)]
    pub few_mode_ringing: Option<Ringing>,
    /// Arrival time at Bob of symbol 0's nominal emission time, ps.
    #[serde(default = "default_arrival_offset")]
    pub arrival_offset_ps: u64,
}

fn default_arrival_offset() -> u64 {
    // About 1 km of fiber.
    4_900_000
}

/// Few-mode QBER penalty for 852 nm over SMF-28.
pub const FEW_MODE_PENALTY: f64 = 0.0073;

impl ReceiverSpec {
    pub fn shortwave_free_space() -> Self {
        Self {
            polarimeter_loss_db: 14.0,
            bypass_polarimeter: false,
            excess_loss_db: 0.0,
            intrinsic_error_rate: 0.0,
            few_mode_penalty_qber: 0.0,
            few_mode_ringing: None,
            arrival_offset_ps: default_arrival_offset(),
        }
    }

    pub fn shortwave_bypass() -> Self {
        Self {
            bypass_polarimeter: true,
            ..Self::shortwave_free_space()
        }
    }

    pub fn c_band() -> Self {
        Self {
            polarimeter_loss_db: 10.2,
            ..Self::shortwave_free_space()
        }
    }

    /// Receiver loss seen by the quantum signal, dB.
    pub fn loss_db(&self) -> f64 {
        let pol = if self.bypass_polarimeter { 0.0 } else { self.polarimeter_loss_db };
        pol + self.excess_loss_db
    }

    /// e_int plus the few-mode penalty.
    pub fn total_error_rate(&self) -> f64 {
        self.intrinsic_error_rate + self.few_mode_penalty_qber
    }

    pub fn mean_coupling(&self) -> f64 {
        self.few_mode_ringing.map_or(1.0, |r| r.mean_coupling())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.intrinsic_error_rate) {
            return Err(config_err("receiver.intrinsic_error_rate", "must lie in [0, 0.5]"));
        }
        if !(self.few_mode_penalty_qber >= 0.0) || self.total_error_rate() >= 0.5 {
            return Err(config_err(
                "receiver.few_mode_penalty_qber",
                "e_int + few-mode penalty must stay below 0.5",
            ));
        }
        if let Some(r) = &self.few_mode_ringing {
            few_mode_modulation(0.0, r).map_err(|e| config_err("receiver.few_mode_ringing", e.to_string()))?;
        }
        Ok(())
    }
}

/// Keeps an event iff it is at least `dead_time_ps` after the last kept one
/// (non-paralyzable). The first event is always kept.
pub fn apply_dead_time(stream: &[TimeTag], dead_time_ps: f64) -> Result<Vec<TimeTag>> {
    apply_dead_time_with(stream, dead_time_ps, DeadTimeModel::NonParalyzable)
}

pub fn apply_dead_time_with(stream: &[TimeTag], dead_time_ps: f64, model: DeadTimeModel) -> Result<Vec<TimeTag>> {
    if let Some(i) = stream.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::Contract(format!(
            "timetag stream not sorted at index {}",
            i + 1
        )));
    }
    let tau = dead_time_ps.max(0.0).ceil() as u64;
    let mut out = Vec::with_capacity(stream.len());
    let mut last: Option<u64> = None;
    for t in stream {
        match last {
            Some(l) if t.time_ps - l < tau => {
                if model == DeadTimeModel::Paralyzable {
                    last = Some(t.time_ps);
                }
            }
            _ => {
                out.push(*t);
                last = Some(t.time_ps);
            }
        }
    }
    Ok(out)
}

/// Bob's receiver for one optical-budget setting.
#[derive(Clone, Debug)]
pub struct Receiver<'a> {
    pub rx: &'a ReceiverSpec,
    pub det: &'a DetectorSpec,
    pub noise: &'a NoiseBudget,
    pub ob_db: f64,
}

impl Receiver<'_> {
    /// Probability that a launched photon produces a click (ringing excluded).
    pub fn survival_probability(&self) -> f64 {
        db_to_linear(-(self.ob_db + self.rx.loss_db())) * self.det.efficiency
    }

    /// Dark plus crosstalk click rate of one detector, Hz.
    pub fn noise_rate_per_detector(&self) -> f64 {
        self.det.dark_count_rate_hz + self.noise.total_photons_per_s() * self.det.efficiency / DETECTORS as f64
    }

    /// Detects the photons of `source` and adds noise over the arrival window
    /// `[start_ps, end_ps)`. Returns per-detector streams after dead time.
    pub fn detect<R: Rng>(&self, source: &PhotonSource, window_ps: (u64, u64), rng: &mut R) -> Result<[Vec<TimeTag>; DETECTORS]> {
        self.rx.validate()?;
        self.det.validate()?;
        let mut streams: [Vec<TimeTag>; DETECTORS] = Default::default();
        let surviving = source.thinned(self.survival_probability());
        let e_total = self.rx.total_error_rate();
        let jitter = Normal::new(0.0, self.det.timing_jitter_sigma_ps).map_err(|e| Error::Domain(e.to_string()))?;
        let offset = self.rx.arrival_offset_ps as f64;
        let ringing = self.rx.few_mode_ringing;

        {
            let mut photon_rng = ChaCha8Rng::seed_from_u64(rng.random());
            for p in surviving.photons(&mut photon_rng) {
                if let Some(r) = &ringing {
                    let t_s = p.time_ps * 1e-12;
                    if rng.random::<f64>() >= modulation_unchecked(t_s, r) {
                        continue;
                    }
                }
                let channel = route(p.state, e_total, rng);
                let t = offset + p.time_ps + jitter.sample(rng);
                if t < 0.0 {
                    continue;
                }
                streams[channel.index() as usize].push(TimeTag {
                    time_ps: t.round() as u64,
                    channel: channel.index(),
                    flags: FLAG_SIGNAL,
                });
            }
        }

        let (start, end) = window_ps;
        let rate = self.noise_rate_per_detector();
        if rate > 0.0 && end > start {
            let gap = Exp::new(rate * 1e-12).map_err(|e| Error::Domain(e.to_string()))?;
            for (ch, stream) in streams.iter_mut().enumerate() {
                let mut t = start as f64;
                loop {
                    t += gap.sample(rng);
                    if t >= end as f64 {
                        break;
                    }
                    stream.push(TimeTag {
                        time_ps: t as u64,
                        channel: ch as u8,
                        flags: 0,
                    });
                }
            }
        }

        for s in streams.iter_mut() {
            s.sort_unstable();
            *s = apply_dead_time_with(s, self.det.dead_time_ps, self.det.dead_time_model)?;
        }
        Ok(streams)
    }
}

/// Passive 50/50 basis choice at Bob, then the detector within that basis.
fn route<R: Rng>(state: PolarizationState, error_rate: f64, rng: &mut R) -> PolarizationState {
    let bob_rl = rng.random::<bool>();
    let same_basis = bob_rl == (state.basis() == crate::source::Basis::RL);
    if same_basis {
        if rng.random::<f64>() < error_rate {
            state.orthogonal()
        } else {
            state
        }
    } else {
        let base = if bob_rl { 2 } else { 0 };
        PolarizationState::from_index(base + rng.random::<bool>() as u8)
    }
}

/// Channel plus detection for a whole run `[0, duration_s)` starting at
/// symbol 0: the photons of `source` cross an optical budget of `ob_db`.
pub fn transmit(
    source: &PhotonSource,
    ob_db: f64,
    rx: &ReceiverSpec,
    det: &DetectorSpec,
    noise: &NoiseBudget,
    duration_s: f64,
    seed: u64,
) -> Result<[Vec<TimeTag>; DETECTORS]> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain("duration must be positive".into()));
    }
    let receiver = Receiver { rx, det, noise, ob_db };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rx.arrival_offset_ps;
    let end = start + (duration_s * 1e12) as u64;
    receiver.detect(source, (start, end), &mut rng)
}

/// Merges per-detector streams into one time-ordered stream.
pub fn merge_streams(streams: [Vec<TimeTag>; DETECTORS]) -> Vec<TimeTag> {
    let mut all: Vec<TimeTag> = streams.into_iter().flatten().collect();
    all.sort_unstable();
    all
}
