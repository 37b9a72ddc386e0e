//! Receiver-side processing of timetag streams: frame synchronization,
//! temporal gating, basis sifting, QBER estimation and raw-key accounting.
//!
//! Symbol `s` (global index, header included) is expected at
//! `clock_offset_ps + s · T`. The offset is only resolved modulo one frame
//! period, so the link delay must be shorter than a frame.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::source::{AliceRecord, Basis, PolarizationState, SourceConfig};
use crate::timetag::{self, TimeTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessorConfig {
    pub gate_fraction: f64,
    pub qber_threshold: f64,
    /// Gated tags per second the key pipeline can absorb; `None` is unlimited.
    #[serde(default)]
    pub max_throughput_cps: Option<f64>,
    pub sync_window_frames: u32,
    /// Lock threshold in units of the off-peak correlation spread.
    #[serde(default = "default_lock_sigma")]
    pub lock_threshold_sigma: f64,
    /// The peak must also exceed the largest off-peak value by this factor.
    /// Sparse histograms have heavy tails, so the spread test alone admits
    /// false peaks somewhere among the frame's bins.
    #[serde(default = "default_peak_ratio")]
    pub lock_peak_ratio: f64,
}

fn default_lock_sigma() -> f64 {
    5.0
}

fn default_peak_ratio() -> f64 {
    2.0
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        Self {
            gate_fraction: 0.20,
            qber_threshold: 0.11,
            max_throughput_cps: None,
            sync_window_frames: 2000,
            lock_threshold_sigma: default_lock_sigma(),
            lock_peak_ratio: default_peak_ratio(),
        }
    }
}

impl ProcessorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_fraction > 0.0 && self.gate_fraction <= 1.0) {
            return Err(config_err("processor.gate_fraction", "must lie in (0, 1]"));
        }
        if !(self.qber_threshold > 0.0 && self.qber_threshold < 0.5) {
            return Err(config_err("processor.qber_threshold", "must lie in (0, 0.5)"));
        }
        if let Some(c) = self.max_throughput_cps {
            if !(c > 0.0) {
                return Err(config_err("processor.max_throughput_cps", "must be positive"));
            }
        }
        if self.sync_window_frames == 0 {
            return Err(config_err("processor.sync_window_frames", "must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    /// Arrival time of a frame's first symbol, modulo the frame period.
    pub clock_offset_ps: u64,
    /// Symbol position of the frame start after the fine phase.
    pub frame_phase_symbols: u32,
    /// Peak correlation minus the off-peak mean.
    pub correlation_peak: f64,
    /// Lock threshold the peak was compared against.
    pub threshold: f64,
    /// Largest off-peak correlation minus the off-peak mean.
    pub runner_up: f64,
    pub lock: bool,
}

impl SyncResult {
    /// A sync taken from a trusted reference clock instead of header
    /// acquisition.
    pub fn from_reference(offset_ps: u64) -> Self {
        Self {
            clock_offset_ps: offset_ps,
            frame_phase_symbols: 0,
            correlation_peak: f64::INFINITY,
            threshold: 0.0,
            runner_up: 0.0,
            lock: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyncStatus {
    Done(SyncResult),
    /// The stream spans fewer than `needed_ps` picoseconds.
    NeedMoreData { have_ps: u64, needed_ps: u64 },
}

fn template(record: &AliceRecord) -> [Vec<f64>; 4] {
    let f = record.frame_length() as usize;
    let mut t: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; f]);
    for (j, s) in record.header().iter().enumerate() {
        t[s.index() as usize][j] = 1.0;
        t[s.orthogonal().index() as usize][j] = -1.0;
    }
    t
}

/// Fine symbol phase in `[0, T)` from the circular mean of tag phases.
fn fine_phase(tags: &[TimeTag], period_ps: f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for t in tags {
        let x = (t.time_ps as f64 % period_ps) / period_ps * std::f64::consts::TAU;
        c += x.cos();
        s += x.sin();
    }
    let phase = s.atan2(c).rem_euclid(std::f64::consts::TAU);
    phase / std::f64::consts::TAU * period_ps
}

/// Frame synchronization by folding gated clicks at the frame period and
/// cross-correlating against the public header pattern.
pub fn synchronize(tags: &[TimeTag], record: &AliceRecord, source: &SourceConfig, cfg: &ProcessorConfig) -> Result<SyncStatus> {
    cfg.validate()?;
    let period = source.symbol_period_ps();
    let frame_ps = source.frame_period_ps();
    let needed_ps = (cfg.sync_window_frames as f64 * frame_ps).ceil() as u64;
    let (Some(first), Some(last)) = (tags.first(), tags.last()) else {
        return Ok(SyncStatus::NeedMoreData { have_ps: 0, needed_ps });
    };
    let have_ps = last.time_ps.saturating_sub(first.time_ps);
    if have_ps < needed_ps {
        return Ok(SyncStatus::NeedMoreData { have_ps, needed_ps });
    }
    let end = first.time_ps + needed_ps;
    let window = &tags[..tags.partition_point(|t| t.time_ps < end)];

    let phi = fine_phase(window, period);
    let f = record.frame_length() as usize;
    let half_gate = cfg.gate_fraction * period / 2.0;
    let mut hist: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; f]);
    for t in window {
        let x = (t.time_ps as f64 - phi) / period;
        let n = x.round();
        if ((x - n) * period).abs() > half_gate || t.channel > 3 {
            continue;
        }
        hist[t.channel as usize][(n as i64).rem_euclid(f as i64) as usize] += 1.0;
    }

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(f);
    let inv = planner.plan_fft_inverse(f);
    let mut acc = vec![Complex::new(0.0, 0.0); f];
    for (h, tm) in hist.iter().zip(template(record).iter()) {
        let mut hb: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut tb: Vec<Complex<f64>> = tm.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut hb);
        fwd.process(&mut tb);
        for ((a, x), y) in acc.iter_mut().zip(&hb).zip(&tb) {
            *a += x * y.conj();
        }
    }
    inv.process(&mut acc);
    // corr[p] = Σ_j tmpl[j] · hist[j + p]
    let corr: Vec<f64> = acc.iter().map(|c| c.re / f as f64).collect();
    let (peak_at, peak) = corr
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
    let n_off = (f - 1) as f64;
    let mean = (corr.iter().sum::<f64>() - peak) / n_off;
    let var = (corr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() - (peak - mean) * (peak - mean)) / n_off;
    let std = var.max(0.0).sqrt();
    let height = peak - mean;
    let threshold = cfg.lock_threshold_sigma * std;
    let runner_up = corr
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != peak_at)
        .map(|(_, &v)| v - mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let lock = height > threshold && height > 0.0 && height > cfg.lock_peak_ratio * runner_up;
    let offset = (phi + peak_at as f64 * period).rem_euclid(frame_ps);
    Ok(SyncStatus::Done(SyncResult {
        clock_offset_ps: offset.round() as u64,
        frame_phase_symbols: peak_at as u32,
        correlation_peak: height,
        threshold,
        runner_up,
        lock,
    }))
}

/// Position of a tag relative to the symbol grid: (symbol index, residual in
/// symbol periods, in [-0.5, 0.5]).
#[inline]
fn grid_position(t: u64, offset_ps: u64, period_ps: f64) -> (f64, f64) {
    let x = (t as f64 - offset_ps as f64) / period_ps;
    let n = x.round();
    (n, x - n)
}

/// Keeps tags inside a centred window of `gate_fraction · T` around each
/// expected arrival. Returns the kept tags and the kept fraction.
pub fn temporal_gate(tags: &[TimeTag], sync: &SyncResult, period_ps: f64, gate_fraction: f64) -> Result<(Vec<TimeTag>, f64)> {
    if !sync.lock {
        return Err(Error::Unlocked);
    }
    if !(gate_fraction > 0.0 && gate_fraction <= 1.0) {
        return Err(config_err("processor.gate_fraction", "must lie in (0, 1]"));
    }
    let half = gate_fraction / 2.0;
    let kept: Vec<TimeTag> = tags
        .iter()
        .copied()
        .filter(|t| grid_position(t.time_ps, sync.clock_offset_ps, period_ps).1.abs() <= half)
        .collect();
    let frac = if tags.is_empty() { 0.0 } else { kept.len() as f64 / tags.len() as f64 };
    Ok((kept, frac))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BasisTally {
    pub sifted_bits: u64,
    pub errors: u64,
    pub qber: f64,
    pub raw_key_rate_bps: f64,
}

impl BasisTally {
    fn finish(&mut self, duration_s: f64) {
        self.qber = estimate_qber(self.errors, self.sifted_bits);
        self.raw_key_rate_bps = if duration_s > 0.0 { self.sifted_bits as f64 / duration_s } else { 0.0 };
    }
}

/// errors / sifted clamped to [0, 0.5]; 0.5 when nothing was sifted.
pub fn estimate_qber(errors: u64, sifted: u64) -> f64 {
    if sifted == 0 {
        0.5
    } else {
        (errors as f64 / sifted as f64).min(0.5)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftResult {
    /// Indexed by [`Basis::index`]: AD then RL.
    pub per_basis: [BasisTally; 2],
    /// Fraction of tags that passed the temporal gate.
    pub gated_fraction: f64,
    pub duration_s: f64,
    pub detections: u64,
    pub gated: u64,
    /// Gated tags dropped by the throughput ceiling.
    pub dropped: u64,
    /// Symbols discarded because two detectors fired.
    pub double_clicks: u64,
}

impl SiftResult {
    pub fn basis(&self, b: Basis) -> &BasisTally {
        &self.per_basis[b.index()]
    }

    pub fn sifted_bits(&self) -> u64 {
        self.per_basis.iter().map(|b| b.sifted_bits).sum()
    }

    pub fn errors(&self) -> u64 {
        self.per_basis.iter().map(|b| b.errors).sum()
    }

    pub fn qber(&self) -> f64 {
        estimate_qber(self.errors(), self.sifted_bits())
    }

    /// Total (both-basis) sifted rate, bit/s.
    pub fn sifted_rate_bps(&self) -> f64 {
        if self.duration_s > 0.0 {
            self.sifted_bits() as f64 / self.duration_s
        } else {
            0.0
        }
    }

    /// Additive merge of results over disjoint time ranges.
    pub fn merge(&self, other: &SiftResult) -> SiftResult {
        let detections = self.detections + other.detections;
        let gated = self.gated + other.gated;
        let duration_s = self.duration_s + other.duration_s;
        let mut per_basis = [BasisTally::default(); 2];
        for (i, b) in per_basis.iter_mut().enumerate() {
            b.sifted_bits = self.per_basis[i].sifted_bits + other.per_basis[i].sifted_bits;
            b.errors = self.per_basis[i].errors + other.per_basis[i].errors;
            b.finish(duration_s);
        }
        SiftResult {
            per_basis,
            gated_fraction: if detections > 0 { gated as f64 / detections as f64 } else { 0.0 },
            duration_s,
            detections,
            gated,
            dropped: self.dropped + other.dropped,
            double_clicks: self.double_clicks + other.double_clicks,
        }
    }

    /// Human-readable table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "basis  sifted_bits      errors    qber   raw_kbps  secret_fraction");
        for b in Basis::BOTH {
            let t = self.basis(b);
            let _ = writeln!(
                s,
                "{:<5} {:>12} {:>11} {:>7.4} {:>10.3} {:>16.4}",
                format!("{b:?}"),
                t.sifted_bits,
                t.errors,
                t.qber,
                t.raw_key_rate_bps / 1e3,
                secret_fraction(t.qber).unwrap_or(0.0)
            );
        }
        let _ = writeln!(
            s,
            "duration {:.3} s, detections {}, gated {} ({:.2} %), dropped {}, double clicks {}",
            self.duration_s,
            self.detections,
            self.gated,
            100.0 * self.gated_fraction,
            self.dropped,
            self.double_clicks
        );
        s
    }
}

/// Inputs shared by every sifting call of one run.
#[derive(Clone, Debug)]
pub struct SiftContext<'a> {
    pub record: &'a AliceRecord,
    pub period_ps: f64,
    /// Symbols `[start, end)` Alice has records for.
    pub coverage: (u64, u64),
    pub duration_s: f64,
    pub max_throughput_cps: Option<f64>,
    /// Seed of the ceiling drop stream.
    pub seed: u64,
}

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sifts gated, time-ordered tags against Alice's record.
///
/// Tags that map up to one symbol outside the coverage are ignored (edge
/// effects of jitter); anything further away is a span mismatch.
pub fn sift(gated: &[TimeTag], sync: &SyncResult, ctx: &SiftContext) -> Result<SiftResult> {
    if !sync.lock {
        return Err(Error::Unlocked);
    }
    if !(ctx.duration_s > 0.0) {
        return Err(Error::Domain("sifting duration must be positive".into()));
    }
    if let Some(i) = gated.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::Contract(format!("tags not time-ordered at index {}", i + 1)));
    }
    let (lo, hi) = ctx.coverage;
    if let (Some(a), Some(b)) = (gated.first(), gated.last()) {
        let sa = grid_position(a.time_ps, sync.clock_offset_ps, ctx.period_ps).0;
        let sb = grid_position(b.time_ps, sync.clock_offset_ps, ctx.period_ps).0;
        if sa < lo as f64 - 1.0 || sb > hi as f64 {
            return Err(Error::SpanMismatch {
                tag_start_ps: a.time_ps,
                tag_end_ps: b.time_ps,
            });
        }
    }

    let keep_p = match ctx.max_throughput_cps {
        Some(c) => (c * ctx.duration_s / gated.len().max(1) as f64).min(1.0),
        None => 1.0,
    };
    // An overloaded stage sheds whole symbols: the keep decision is a hash of
    // (seed, symbol), so every click of a symbol shares it.
    let keep_below = (keep_p * 2f64.powi(64)).min(u64::MAX as f64) as u64;
    let keep = |sym: u64| keep_p >= 1.0 || mix64(ctx.seed ^ mix64(sym)) < keep_below;

    let mut per_basis = [BasisTally::default(); 2];
    let mut dropped = 0u64;
    let mut double_clicks = 0u64;
    // Pending click: (symbol, channel, conflict)
    let mut pending: Option<(u64, u8, bool)> = None;
    let settle = |p: Option<(u64, u8, bool)>, per_basis: &mut [BasisTally; 2], double_clicks: &mut u64| {
        let Some((sym, ch, conflict)) = p else { return };
        if conflict {
            *double_clicks += 1;
            return;
        }
        if ctx.record.is_header(sym) {
            return;
        }
        let alice = ctx.record.state(sym);
        let bob = PolarizationState::from_index(ch);
        if alice.basis() == bob.basis() {
            let t = &mut per_basis[alice.basis().index()];
            t.sifted_bits += 1;
            if alice != bob {
                t.errors += 1;
            }
        }
    };

    for t in gated {
        let n = grid_position(t.time_ps, sync.clock_offset_ps, ctx.period_ps).0;
        if n < lo as f64 || n >= hi as f64 || t.channel > 3 {
            continue;
        }
        let sym = n as u64;
        if !keep(sym) {
            dropped += 1;
            continue;
        }
        match &mut pending {
            Some((s, ch, conflict)) if *s == sym => {
                if *ch != t.channel {
                    *conflict = true;
                }
            }
            _ => {
                settle(pending.take(), &mut per_basis, &mut double_clicks);
                pending = Some((sym, t.channel, false));
            }
        }
    }
    settle(pending, &mut per_basis, &mut double_clicks);

    for b in per_basis.iter_mut() {
        b.finish(ctx.duration_s);
    }
    Ok(SiftResult {
        per_basis,
        gated_fraction: 0.0,
        duration_s: ctx.duration_s,
        detections: gated.len() as u64,
        gated: gated.len() as u64,
        dropped,
        double_clicks,
    })
}

/// Gate and sift one block of detections with an established sync.
pub fn gate_and_sift(tags: &[TimeTag], sync: &SyncResult, gate_fraction: f64, ctx: &SiftContext) -> Result<SiftResult> {
    let (gated, frac) = temporal_gate(tags, sync, ctx.period_ps, gate_fraction)?;
    let mut r = sift(&gated, sync, ctx)?;
    r.detections = tags.len() as u64;
    r.gated_fraction = frac;
    Ok(r)
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Asymptotic BB84 secret fraction `max(0, 1 − 2·h2(q))`.
pub fn secret_fraction(qber: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::Domain(format!("qber {qber} outside [0, 0.5]")));
    }
    Ok((1.0 - 2.0 * binary_entropy(qber)).max(0.0))
}

/// Outcome of processing a complete recording.
#[derive(Clone, Debug)]
pub struct ProcessOutcome {
    pub sync: SyncResult,
    pub result: SiftResult,
}

/// Sync acquisition over a complete recording. Starts with the configured
/// window and doubles it until the header locks or the recording runs out.
pub fn acquire(tags: &[TimeTag], record: &AliceRecord, source: &SourceConfig, cfg: &ProcessorConfig) -> Result<SyncResult> {
    let span_ps = match (tags.first(), tags.last()) {
        (Some(a), Some(b)) => b.time_ps - a.time_ps,
        _ => 0,
    };
    let available = (span_ps as f64 / source.frame_period_ps()).floor() as u32;
    let mut c = cfg.clone();
    loop {
        match synchronize(tags, record, source, &c)? {
            SyncStatus::Done(s) if s.lock => return Ok(s),
            SyncStatus::Done(_) if c.sync_window_frames < available => {
                c.sync_window_frames = c.sync_window_frames.saturating_mul(2).min(available);
            }
            SyncStatus::Done(_) => return Err(Error::Unlocked),
            SyncStatus::NeedMoreData { have_ps, needed_ps } => {
                return Err(Error::Contract(format!("stream spans {have_ps} ps, sync needs {needed_ps} ps")));
            }
        }
    }
}

/// Full pipeline on a time-ordered merged stream: acquire sync from the
/// leading window (unless `reference` is given), then gate and sift all.
pub fn process_stream(
    tags: &[TimeTag],
    source: &SourceConfig,
    cfg: &ProcessorConfig,
    coverage: (u64, u64),
    duration_s: f64,
    reference: Option<u64>,
    seed: u64,
) -> Result<ProcessOutcome> {
    source.validate()?;
    cfg.validate()?;
    let record = AliceRecord::new(source);
    let sync = match reference {
        Some(off) => SyncResult::from_reference(off),
        None => acquire(tags, &record, source, cfg)?,
    };
    let ctx = SiftContext {
        record: &record,
        period_ps: source.symbol_period_ps(),
        coverage,
        duration_s,
        max_throughput_cps: cfg.max_throughput_cps,
        seed,
    };
    let result = gate_and_sift(tags, &sync, cfg.gate_fraction, &ctx)?;
    Ok(ProcessOutcome { sync, result })
}

/// Decodes a QTT1 buffer and runs [`process_stream`] on it. Coverage and
/// duration are taken from the recorded span.
pub fn process_qtt(bytes: &[u8], source: &SourceConfig, cfg: &ProcessorConfig, reference: Option<u64>, seed: u64) -> Result<ProcessOutcome> {
    let (_, tags) = timetag::decode_file(bytes)?;
    process_recording(&tags, source, cfg, reference, seed)
}

/// Runs the pipeline on a recording whose symbol coverage starts at 0 and
/// ends after the last tag.
pub fn process_recording(tags: &[TimeTag], source: &SourceConfig, cfg: &ProcessorConfig, reference: Option<u64>, seed: u64) -> Result<ProcessOutcome> {
    let (Some(first), Some(last)) = (tags.first(), tags.last()) else {
        return Err(Error::Contract("empty recording".into()));
    };
    let duration_s = ((last.time_ps - first.time_ps) as f64 * 1e-12).max(1e-12);
    let end_symbol = (last.time_ps as f64 / source.symbol_period_ps()).ceil() as u64 + 1;
    process_stream(tags, source, cfg, (0, end_symbol), duration_s, reference, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn cfg() -> SourceConfig {
        SourceConfig::default()
    }

    /// Perfect-detection stream: one click on the state's channel for every
    /// `stride`-th symbol, with Bob choosing the basis at random.
    fn planted(offset: u64, frames: u64, stride: u64, jitter: f64, seed: u64) -> Vec<TimeTag> {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let t = c.symbol_period_ps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = Normal::new(0.0, jitter.max(1e-9)).unwrap();
        let mut out = Vec::new();
        let mut s = 0;
        while s < frames * rec.frame_length() {
            let st = rec.state(s);
            let ch = if rng.random::<bool>() == (st.basis() == Basis::RL) {
                st.index()
            } else {
                ((st.index() ^ 2) & 2) | rng.random::<bool>() as u8
            };
            let time = offset as f64 + s as f64 * t + j.sample(&mut rng);
            out.push(TimeTag::new(time.round() as u64, ch));
            s += stride;
        }
        out.sort_unstable();
        out
    }

    fn proc_cfg(frames: u32) -> ProcessorConfig {
        ProcessorConfig {
            sync_window_frames: frames,
            ..Default::default()
        }
    }

    #[test]
    fn recovers_planted_offset() {
        let tags = planted(12345, 12, 7, 100.0, 1);
        let rec = AliceRecord::new(&cfg());
        let SyncStatus::Done(s) = synchronize(&tags, &rec, &cfg(), &proc_cfg(10)).unwrap() else {
            panic!("need more data")
        };
        assert!(s.lock);
        assert!((s.clock_offset_ps as f64 - 12345.0).abs() < 100.0, "{}", s.clock_offset_ps);
    }

    #[test]
    fn translation_moves_offset() {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let base = planted(4_900_000, 12, 5, 0.0, 2);
        let shift = 98_765_432u64;
        let moved: Vec<TimeTag> = base.iter().map(|t| TimeTag::new(t.time_ps + shift, t.channel)).collect();
        let get = |tags: &[TimeTag]| match synchronize(tags, &rec, &c, &proc_cfg(10)).unwrap() {
            SyncStatus::Done(s) => s,
            _ => panic!(),
        };
        let (a, b) = (get(&base), get(&moved));
        let expect = ((a.clock_offset_ps + shift) as f64).rem_euclid(c.frame_period_ps());
        assert!((b.clock_offset_ps as f64 - expect).abs() <= 1.0);
    }

    #[test]
    fn dark_counts_do_not_lock() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let span = (12.0 * c.frame_period_ps()) as u64;
        let mut tags: Vec<TimeTag> = (0..200_000)
            .map(|_| TimeTag::new(rng.random_range(0..span), rng.random_range(0..4)))
            .collect();
        tags.sort_unstable();
        match synchronize(&tags, &AliceRecord::new(&c), &c, &proc_cfg(10)).unwrap() {
            SyncStatus::Done(s) => assert!(!s.lock),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_stream_needs_more_data() {
        let tags = planted(0, 1, 3, 0.0, 4);
        let st = synchronize(&tags, &AliceRecord::new(&cfg()), &cfg(), &proc_cfg(10)).unwrap();
        assert!(matches!(st, SyncStatus::NeedMoreData { .. }));
    }

    #[test]
    fn gate_fraction_one_is_identity() {
        let tags = planted(777, 1, 11, 300.0, 5);
        let (kept, f) = temporal_gate(&tags, &SyncResult::from_reference(777), cfg().symbol_period_ps(), 1.0).unwrap();
        assert_eq!(kept, tags);
        assert_eq!(f, 1.0);
    }

    #[test]
    fn gate_requires_lock() {
        let mut s = SyncResult::from_reference(0);
        s.lock = false;
        assert!(matches!(temporal_gate(&[], &s, 1.0, 0.2), Err(Error::Unlocked)));
    }

    #[test]
    fn jittered_signal_survives_gate() {
        let tags = planted(0, 1, 3, 100.0, 6);
        let (_, f) = temporal_gate(&tags, &SyncResult::from_reference(0), cfg().symbol_period_ps(), 0.2).unwrap();
        // ±224.7 ps at σ = 100 ps: erf(2.247/√2) = 0.9754
        assert!(f > 0.95 && (f - 0.9754).abs() < 0.01, "{f}");
    }

    #[test]
    fn error_free_sifting() {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let tags = planted(0, 2, 3, 0.0, 7);
        let ctx = SiftContext {
            record: &rec,
            period_ps: c.symbol_period_ps(),
            coverage: (0, 2 * 65536),
            duration_s: 1.0,
            max_throughput_cps: None,
            seed: 0,
        };
        let r = gate_and_sift(&tags, &SyncResult::from_reference(0), 0.2, &ctx).unwrap();
        assert_eq!(r.errors(), 0);
        assert_eq!(r.qber(), 0.0);
        let payload = tags.iter().filter(|t| !rec.is_header(((t.time_ps as f64) / c.symbol_period_ps()).round() as u64)).count();
        let ratio = r.sifted_bits() as f64 / payload as f64;
        assert!((ratio - 0.5).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn double_clicks_are_discarded() {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let t = c.symbol_period_ps();
        let s = 70_000u64;
        let at = (s as f64 * t).round() as u64;
        let tags = vec![TimeTag::new(at, 0), TimeTag::new(at + 3, 2)];
        let ctx = SiftContext {
            record: &rec,
            period_ps: t,
            coverage: (0, 100_000),
            duration_s: 1.0,
            max_throughput_cps: None,
            seed: 0,
        };
        let r = sift(&tags, &SyncResult::from_reference(0), &ctx).unwrap();
        assert_eq!(r.double_clicks, 1);
        assert_eq!(r.sifted_bits(), 0);
    }

    #[test]
    fn span_mismatch_is_an_error() {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let tags = vec![TimeTag::new(1_000_000_000, 0)];
        let ctx = SiftContext {
            record: &rec,
            period_ps: c.symbol_period_ps(),
            coverage: (0, 1000),
            duration_s: 1.0,
            max_throughput_cps: None,
            seed: 0,
        };
        assert!(matches!(sift(&tags, &SyncResult::from_reference(0), &ctx), Err(Error::SpanMismatch { .. })));
    }

    #[test]
    fn ceiling_caps_rate() {
        let c = cfg();
        let rec = AliceRecord::new(&c);
        let tags = planted(0, 4, 2, 0.0, 8);
        let ctx = SiftContext {
            record: &rec,
            period_ps: c.symbol_period_ps(),
            coverage: (0, 4 * 65536),
            duration_s: 1.0,
            max_throughput_cps: Some(10_000.0),
            seed: 1,
        };
        let r = sift(&tags, &SyncResult::from_reference(0), &ctx).unwrap();
        let kept = tags.len() as u64 - r.dropped;
        assert!((kept as f64 - 10_000.0).abs() < 400.0, "{kept}");
    }

    #[test]
    fn secret_fraction_values() {
        assert_eq!(secret_fraction(0.0).unwrap(), 1.0);
        assert_eq!(secret_fraction(0.5).unwrap(), 0.0);
        assert!(secret_fraction(0.11).unwrap() < 1e-3);
        assert!(secret_fraction(0.6).is_err());
        assert!(secret_fraction(f64::NAN).is_err());
        // bisection root of 1 − 2·h2
        let (mut a, mut b) = (0.05, 0.2);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if 1.0 - 2.0 * binary_entropy(m) > 0.0 {
                a = m
            } else {
                b = m
            }
        }
        assert_relative_eq!(a, 0.110028, epsilon = 1e-6);
    }

    #[test]
    fn merge_is_additive() {
        let mut a = SiftResult {
            duration_s: 1.0,
            ..Default::default()
        };
        a.per_basis[0].sifted_bits = 100;
        a.per_basis[0].errors = 10;
        let mut b = a.clone();
        b.per_basis[1].sifted_bits = 50;
        let m = a.merge(&b);
        assert_eq!(m.sifted_bits(), 250);
        assert_eq!(m.errors(), 20);
        assert_eq!(m.duration_s, 2.0);
        assert_relative_eq!(m.basis(Basis::AD).raw_key_rate_bps, 100.0);
    }
}
