//! Alice: symbol clock, frame structure, polarization alphabet and
//! Poissonian photon emission.
//!
//! Symbols are numbered globally from 0. Symbol `k` belongs to frame
//! `k / frame_length`; the first `header_length` symbols of every frame are a
//! fixed public pattern used by Bob for frame synchronization, the rest is
//! uniformly random payload. Payload states are drawn from a counter-based
//! SplitMix64 sequence (one 64-bit word per 32 symbols), so the state of any
//! symbol can be recovered without storing the record.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Geometric};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::units::db_to_linear;

/// Seed of the public header pattern, fixed at build time.
pub const HEADER_SEED: u64 = 0x0852_1550_c0e1_57ed;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const SYMBOLS_PER_WORD: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    /// Diagonal/anti-diagonal.
    AD,
    /// Right/left circular.
    RL,
}

impl Basis {
    pub const BOTH: [Basis; 2] = [Basis::AD, Basis::RL];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One of the four BB84 states. The discriminant equals Bob's detector
/// channel for that state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PolarizationState {
    A = 0,
    D = 1,
    R = 2,
    L = 3,
}

impl PolarizationState {
    pub const ALL: [PolarizationState; 4] = [Self::A, Self::D, Self::R, Self::L];

    pub fn from_index(i: u8) -> Self {
        Self::ALL[(i & 3) as usize]
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn basis(self) -> Basis {
        match self {
            Self::A | Self::D => Basis::AD,
            Self::R | Self::L => Basis::RL,
        }
    }

    /// Key bit carried by the state within its basis.
    pub fn bit(self) -> u8 {
        self.index() & 1
    }

    /// The antipodal state of the same basis.
    pub fn orthogonal(self) -> Self {
        Self::from_index(self.index() ^ 1)
    }

    /// Normalized Stokes vector (S1, S2, S3). The A/D basis lies on the
    /// diagonal axis of the Poincaré sphere, R/L on the circular axis.
    pub fn stokes(self) -> [f64; 3] {
        match self {
            Self::A => [0.0, -1.0, 0.0],
            Self::D => [0.0, 1.0, 0.0],
            Self::R => [0.0, 0.0, 1.0],
            Self::L => [0.0, 0.0, -1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub pulse_rep_rate_hz: f64,
    /// Two pulses per encoded symbol.
    pub symbol_rate_hz: f64,
    pub pulse_width_ps: f64,
    /// Width of the uniform spread of photon emission times around the pulse
    /// centre. Zero puts every photon at the centre; the pulse shape then
    /// only enters through the detector jitter.
    #[serde(default)]
    pub emission_spread_ps: f64,
    /// μ, photons per symbol at launch.
    pub mean_photon_number: f64,
    pub sagnac_delay_ps: f64,
    pub frame_length_symbols: u64,
    pub header_length_symbols: u64,
    pub prng_seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            pulse_rep_rate_hz: 890e6,
            symbol_rate_hz: 445e6,
            pulse_width_ps: 800.0,
            emission_spread_ps: 0.0,
            mean_photon_number: 0.1,
            sagnac_delay_ps: 1e12 / 890e6,
            frame_length_symbols: 1 << 16,
            header_length_symbols: 1024,
            prng_seed: 0x5eed,
        }
    }
}

impl SourceConfig {
    pub fn symbol_period_ps(&self) -> f64 {
        1e12 / self.symbol_rate_hz
    }

    pub fn frame_period_ps(&self) -> f64 {
        self.symbol_period_ps() * self.frame_length_symbols as f64
    }

    /// Share of symbols that carry key material (not header).
    pub fn payload_fraction(&self) -> f64 {
        1.0 - self.header_length_symbols as f64 / self.frame_length_symbols as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rep_rate_hz > 0.0) {
            return Err(config_err("source.pulse_rep_rate_hz", "must be positive"));
        }
        let rel = (self.symbol_rate_hz * 2.0 - self.pulse_rep_rate_hz).abs() / self.pulse_rep_rate_hz;
        if rel > 1e-9 {
            return Err(config_err(
                "source.symbol_rate_hz",
                "must be half the pulse repetition rate",
            ));
        }
        if !(self.pulse_width_ps > 0.0 && self.pulse_width_ps < 1e12 / self.pulse_rep_rate_hz) {
            return Err(config_err(
                "source.pulse_width_ps",
                "must be positive and shorter than the pulse spacing",
            ));
        }
        if !(self.emission_spread_ps >= 0.0 && self.emission_spread_ps <= self.pulse_width_ps) {
            return Err(config_err(
                "source.emission_spread_ps",
                "must lie in [0, pulse_width_ps]",
            ));
        }
        if !(self.mean_photon_number >= 0.0 && self.mean_photon_number.is_finite()) {
            return Err(config_err("source.mean_photon_number", "must be ≥ 0"));
        }
        if !(self.header_length_symbols > 0 && self.header_length_symbols < self.frame_length_symbols) {
            return Err(config_err(
                "source.header_length_symbols",
                "need 0 < header_length < frame_length",
            ));
        }
        if self.frame_length_symbols % SYMBOLS_PER_WORD != 0 {
            return Err(config_err(
                "source.frame_length_symbols",
                "must be a multiple of 32",
            ));
        }
        Ok(())
    }
}

/// A frame of Alice's symbols: public header followed by random payload.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame {
    pub frame_index: u64,
    pub symbols: Vec<PolarizationState>,
}

impl SymbolFrame {
    pub fn first_symbol(&self) -> u64 {
        self.frame_index * self.symbols.len() as u64
    }
}

/// The fixed public header pattern of a given length.
pub fn header_pattern(len: usize) -> Vec<PolarizationState> {
    let mut rng = SplitMix64::seed_from_u64(HEADER_SEED);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let word = rng.next_u64();
        for j in 0..SYMBOLS_PER_WORD {
            if out.len() == len {
                break;
            }
            out.push(PolarizationState::from_index((word >> (2 * j)) as u8));
        }
    }
    out
}

/// Random-access view of Alice's full symbol sequence.
#[derive(Clone, Debug)]
pub struct AliceRecord {
    seed: u64,
    frame_length: u64,
    header: Arc<[PolarizationState]>,
}

impl AliceRecord {
    pub fn new(cfg: &SourceConfig) -> Self {
        Self {
            seed: cfg.prng_seed,
            frame_length: cfg.frame_length_symbols,
            header: header_pattern(cfg.header_length_symbols as usize).into(),
        }
    }

    pub fn header(&self) -> &[PolarizationState] {
        &self.header
    }

    pub fn frame_length(&self) -> u64 {
        self.frame_length
    }

    pub fn is_header(&self, symbol: u64) -> bool {
        symbol % self.frame_length < self.header.len() as u64
    }

    fn payload_word(&self, word_index: u64) -> u64 {
        let state = self.seed.wrapping_add(word_index.wrapping_mul(GOLDEN_GAMMA));
        SplitMix64::from_seed(state.to_le_bytes()).next_u64()
    }

    pub fn state(&self, symbol: u64) -> PolarizationState {
        let offset = symbol % self.frame_length;
        if offset < self.header.len() as u64 {
            return self.header[offset as usize];
        }
        let word = self.payload_word(symbol / SYMBOLS_PER_WORD);
        PolarizationState::from_index((word >> (2 * (symbol % SYMBOLS_PER_WORD))) as u8)
    }

    pub fn frame(&self, frame_index: u64) -> SymbolFrame {
        let first = frame_index * self.frame_length;
        let mut symbols = Vec::with_capacity(self.frame_length as usize);
        symbols.extend_from_slice(&self.header);
        // Sequential SplitMix64 from the frame's first word; identical to
        // `payload_word` evaluated word by word.
        let first_word = first / SYMBOLS_PER_WORD;
        let mut rng = SplitMix64::from_seed(
            self.seed
                .wrapping_add(first_word.wrapping_mul(GOLDEN_GAMMA))
                .to_le_bytes(),
        );
        let mut word = 0u64;
        for offset in 0..self.frame_length {
            if offset % SYMBOLS_PER_WORD == 0 {
                word = rng.next_u64();
            }
            if offset >= self.header.len() as u64 {
                symbols.push(PolarizationState::from_index((word >> (2 * (offset % SYMBOLS_PER_WORD))) as u8));
            }
        }
        SymbolFrame { frame_index, symbols }
    }
}

/// The first `n_frames` frames of the record defined by `cfg`.
pub fn generate_frames(cfg: &SourceConfig, n_frames: u64) -> Result<Vec<SymbolFrame>> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::Domain("n_frames must be ≥ 1".into()));
    }
    let record = AliceRecord::new(cfg);
    Ok((0..n_frames).map(|i| record.frame(i)).collect())
}

/// Optical budget to channel attenuation.
///
/// The optical budget is the channel attenuation in excess of the point
/// where μ is set, so the mapping is the identity; fiber loss is part of it.
pub fn optical_budget_to_attenuation(ob_db: f64) -> Result<f64> {
    if !(ob_db >= 0.0) {
        return Err(Error::Domain(format!("optical budget must be ≥ 0 dB, got {ob_db}")));
    }
    Ok(ob_db)
}

/// One photon leaving Alice (or surviving to Bob after thinning).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Photon {
    pub symbol: u64,
    /// Emission time relative to the start of symbol 0, ps.
    pub time_ps: f64,
    pub state: PolarizationState,
}

/// Lazy Poisson photon source over a range of symbols.
///
/// Each symbol independently carries Poisson(`mean_per_symbol`) photons.
/// Symbols without photons are skipped geometrically, so the cost is
/// proportional to the number of photons, not symbols.
#[derive(Clone, Debug)]
pub struct PhotonSource {
    record: AliceRecord,
    period_ps: f64,
    spread_ps: f64,
    mean_per_symbol: f64,
    start_symbol: u64,
    end_symbol: u64,
}

impl PhotonSource {
    /// Photons launched by Alice over symbols `[start, end)` behind
    /// `attenuation_db` of extra attenuation.
    pub fn new(cfg: &SourceConfig, record: AliceRecord, attenuation_db: f64, start_symbol: u64, end_symbol: u64) -> Self {
        Self {
            record,
            period_ps: cfg.symbol_period_ps(),
            spread_ps: cfg.emission_spread_ps,
            mean_per_symbol: cfg.mean_photon_number * db_to_linear(-attenuation_db),
            start_symbol,
            end_symbol: end_symbol.max(start_symbol),
        }
    }

    pub fn mean_per_symbol(&self) -> f64 {
        self.mean_per_symbol
    }

    pub fn symbol_range(&self) -> (u64, u64) {
        (self.start_symbol, self.end_symbol)
    }

    pub fn record(&self) -> &AliceRecord {
        &self.record
    }

    /// The same source after independent loss with survival probability `p`
    /// (Poisson thinning).
    pub fn thinned(&self, p: f64) -> Self {
        Self {
            mean_per_symbol: self.mean_per_symbol * p.clamp(0.0, 1.0),
            ..self.clone()
        }
    }

    pub fn photons<'a, R: Rng>(&'a self, rng: &'a mut R) -> PhotonIter<'a, R> {
        let m = self.mean_per_symbol;
        let p_nonempty = -(-m).exp_m1();
        let skip = if p_nonempty > 0.0 {
            Some(Geometric::new(p_nonempty.min(1.0)).expect("probability in (0, 1]"))
        } else {
            None
        };
        PhotonIter {
            src: self,
            rng,
            skip,
            next_symbol: self.start_symbol,
            pending: 0,
            current: Photon {
                symbol: 0,
                time_ps: 0.0,
                state: PolarizationState::A,
            },
        }
    }
}

pub struct PhotonIter<'a, R> {
    src: &'a PhotonSource,
    rng: &'a mut R,
    skip: Option<Geometric>,
    next_symbol: u64,
    pending: u32,
    current: Photon,
}

impl<R: Rng> PhotonIter<'_, R> {
    /// Photon number of a symbol known to be non-empty (zero-truncated Poisson).
    fn truncated_poisson(&mut self) -> u32 {
        let m = self.src.mean_per_symbol;
        let e = (-m).exp();
        let u = e + (1.0 - e) * self.rng.random::<f64>();
        let mut term = e;
        let mut cdf = e;
        let mut k = 0u32;
        loop {
            k += 1;
            term *= m / k as f64;
            cdf += term;
            if u <= cdf || term < 1e-300 {
                return k;
            }
        }
    }

    fn emission_time(&mut self, symbol: u64) -> f64 {
        let nominal = symbol as f64 * self.src.period_ps;
        if self.src.spread_ps > 0.0 {
            nominal + (self.rng.random::<f64>() - 0.5) * self.src.spread_ps
        } else {
            nominal
        }
    }
}

impl<R: Rng> Iterator for PhotonIter<'_, R> {
    type Item = Photon;

    fn next(&mut self) -> Option<Photon> {
        if self.pending > 0 {
            self.pending -= 1;
            let mut p = self.current;
            p.time_ps = self.emission_time(p.symbol);
            return Some(p);
        }
        let skip = self.skip.as_ref()?;
        let gap = skip.sample(self.rng);
        let symbol = self.next_symbol.checked_add(gap)?;
        if symbol >= self.src.end_symbol {
            self.next_symbol = self.src.end_symbol;
            return None;
        }
        self.next_symbol = symbol + 1;
        let k = self.truncated_poisson();
        self.pending = k - 1;
        self.current = Photon {
            symbol,
            time_ps: 0.0,
            state: self.src.record.state(symbol),
        };
        let mut p = self.current;
        p.time_ps = self.emission_time(symbol);
        Some(p)
    }
}

/// Photons emitted during one frame, `(emission_time_ps, state)` in time order.
pub fn emit_photons<R: Rng>(frame: &SymbolFrame, cfg: &SourceConfig, launch_attenuation_db: f64, rng: &mut R) -> Result<Vec<(f64, PolarizationState)>> {
    if !(launch_attenuation_db >= 0.0) {
        return Err(Error::Domain("launch attenuation must be ≥ 0 dB".into()));
    }
    let record = AliceRecord::new(cfg);
    let first = frame.first_symbol();
    let src = PhotonSource::new(cfg, record, launch_attenuation_db, first, first + frame.symbols.len() as u64);
    let mut out: Vec<(f64, PolarizationState)> = src
        .photons(rng)
        .map(|p| (p.time_ps, frame.symbols[(p.symbol - first) as usize]))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_is_valid() {
        let cfg = SourceConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.symbol_period_ps() - 2247.191).abs() < 1e-3);
        assert!((cfg.sagnac_delay_ps - 1123.6).abs() < 0.1);
    }

    #[test]
    fn config_invariants() {
        let mut c = SourceConfig::default();
        c.symbol_rate_hz = 890e6;
        assert!(c.validate().is_err());
        let mut c = SourceConfig::default();
        c.pulse_width_ps = 1200.0;
        assert!(c.validate().is_err());
        let mut c = SourceConfig::default();
        c.header_length_symbols = c.frame_length_symbols;
        assert!(c.validate().is_err());
    }

    #[test]
    fn state_algebra() {
        for s in PolarizationState::ALL {
            let o = s.orthogonal();
            assert_eq!(s.basis(), o.basis());
            assert_ne!(s.bit(), o.bit());
            let (a, b) = (s.stokes(), o.stokes());
            let norm: f64 = a.iter().map(|x| x * x).sum();
            assert_eq!(norm, 1.0);
            assert!(a.iter().zip(b).all(|(x, y)| *x == -y));
        }
        assert_eq!(PolarizationState::A.basis(), Basis::AD);
        assert_eq!(PolarizationState::L.basis(), Basis::RL);
        // Conjugate bases are orthogonal on the sphere.
        let d = PolarizationState::D.stokes();
        let r = PolarizationState::R.stokes();
        assert_eq!(d.iter().zip(r).map(|(x, y)| x * y).sum::<f64>(), 0.0);
    }

    #[test]
    fn frames_are_deterministic_and_share_header() {
        let cfg = SourceConfig::default();
        let a = generate_frames(&cfg, 3).unwrap();
        let b = generate_frames(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let record = AliceRecord::new(&cfg);
        let h = cfg.header_length_symbols as usize;
        assert_eq!(record.frame(0).symbols[..h], record.frame(999).symbols[..h]);
        assert_ne!(a[1].symbols[h..], a[2].symbols[h..]);
    }

    #[test]
    fn random_access_matches_frames() {
        let cfg = SourceConfig::default();
        let record = AliceRecord::new(&cfg);
        let f = record.frame(7);
        for (i, s) in f.symbols.iter().enumerate().step_by(97) {
            assert_eq!(record.state(f.first_symbol() + i as u64), *s);
        }
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(generate_frames(&SourceConfig::default(), 0).is_err());
    }

    #[test]
    fn optical_budget_identity() {
        assert_eq!(optical_budget_to_attenuation(0.0).unwrap(), 0.0);
        assert_eq!(optical_budget_to_attenuation(10.0).unwrap(), 10.0);
        assert!(optical_budget_to_attenuation(-0.1).is_err());
    }

    #[test]
    fn zero_mu_emits_nothing() {
        let cfg = SourceConfig {
            mean_photon_number: 0.0,
            ..Default::default()
        };
        let frame = AliceRecord::new(&cfg).frame(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(emit_photons(&frame, &cfg, 0.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn emission_times_ordered_by_symbol() {
        let cfg = SourceConfig {
            mean_photon_number: 0.5,
            emission_spread_ps: 800.0,
            ..Default::default()
        };
        let frame = AliceRecord::new(&cfg).frame(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ev = emit_photons(&frame, &cfg, 0.0, &mut rng).unwrap();
        assert!(ev.len() > 20_000);
        assert!(ev.windows(2).all(|w| w[1].0 > w[0].0));
        let t0 = frame.first_symbol() as f64 * cfg.symbol_period_ps();
        assert!(ev[0].0 >= t0 - 400.0);
    }

    #[test]
    fn negative_launch_attenuation_rejected() {
        let cfg = SourceConfig::default();
        let frame = AliceRecord::new(&cfg).frame(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(emit_photons(&frame, &cfg, -1.0, &mut rng).is_err());
    }
}
