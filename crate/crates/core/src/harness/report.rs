//! CSV and SVG output of sweep and stability reports.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use super::run::{StabilityReport, SweepReport};
use crate::error::Result;
use crate::postproc::secret_fraction;
use crate::source::Basis;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::AD => "AD",
        Basis::RL => "RL",
    }
}

#[derive(Serialize)]
struct AnalyticRow {
    ob_db: f64,
    signal_cps: f64,
    noise_cps: f64,
    sifted_kbps: f64,
    qber: f64,
    secret_fraction: f64,
}

/// `ob_db,signal_cps,noise_cps,sifted_kbps,qber,secret_fraction`, one row
/// per optical budget.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut w = writer(out);
    for r in &report.rows {
        let p = &r.prediction;
        w.serialize(AnalyticRow {
            ob_db: r.ob_db,
            signal_cps: p.signal_rate_cps,
            noise_cps: p.noise_rate_cps,
            sifted_kbps: p.sifted_rate_bps / 1e3,
            qber: p.qber,
            secret_fraction: secret_fraction(p.qber)?,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct McRow<'a> {
    scenario: &'a str,
    ob_db: f64,
    basis: &'static str,
    sifted_bits: u64,
    errors: u64,
    qber: f64,
    raw_kbps: f64,
    secret_fraction: f64,
}

/// `scenario,ob_db,basis,sifted_bits,errors,qber,raw_kbps,secret_fraction`,
/// one row per optical budget and basis. Points without a Monte Carlo run
/// are skipped.
pub fn write_mc_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    // Explicit header so a sweep with every point unlocked still gets one.
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).has_headers(false).from_writer(out);
    w.write_record(["scenario", "ob_db", "basis", "sifted_bits", "errors", "qber", "raw_kbps", "secret_fraction"])?;
    for r in &report.rows {
        let Some(mc) = &r.mc else { continue };
        for b in Basis::BOTH {
            let t = mc.result.basis(b);
            w.serialize(McRow {
                scenario: &report.scenario,
                ob_db: r.ob_db,
                basis: basis_name(b),
                sifted_bits: t.sifted_bits,
                errors: t.errors,
                qber: t.qber,
                raw_kbps: t.raw_key_rate_bps / 1e3,
                secret_fraction: secret_fraction(t.qber)?,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct StabilityCsvRow {
    t_start_s: f64,
    t_end_s: f64,
    ad_kbps: f64,
    rl_kbps: f64,
    sifted_bits: u64,
    errors: u64,
    qber: f64,
    secret_fraction: f64,
}

/// One row per reporting interval.
pub fn write_stability_csv<W: Write>(report: &StabilityReport, out: W) -> Result<()> {
    let mut w = writer(out);
    for r in &report.rows {
        let q = r.result.qber();
        w.serialize(StabilityCsvRow {
            t_start_s: r.t_start_s,
            t_end_s: r.t_end_s,
            ad_kbps: r.result.basis(Basis::AD).raw_key_rate_bps / 1e3,
            rl_kbps: r.result.basis(Basis::RL).raw_key_rate_bps / 1e3,
            sifted_bits: r.result.sifted_bits(),
            errors: r.result.errors(),
            qber: q,
            secret_fraction: secret_fraction(q)?,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text summary of a sweep.
pub fn sweep_summary(report: &SweepReport, qber_threshold: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario {}", report.scenario);
    let _ = writeln!(s, "{:>7} {:>12} {:>10} {:>12} {:>8} {:>12} {:>8} {:>8}", "ob_db", "signal_cps", "noise_cps", "sifted_kbps", "qber", "mc_kbps", "mc_qber", "z_rate");
    for r in &report.rows {
        let p = &r.prediction;
        let _ = write!(s, "{:>7.2} {:>12.1} {:>10.1} {:>12.3} {:>8.4}", r.ob_db, p.signal_rate_cps, p.noise_rate_cps, p.sifted_rate_bps / 1e3, p.qber);
        match &r.mc {
            Some(m) => {
                let _ = writeln!(s, " {:>12.3} {:>8.4} {:>8.2}", m.result.sifted_rate_bps() / 1e3, m.result.qber(), m.agreement.z_rate);
            }
            None if r.mc_unlocked => s.push_str("      no sync lock\n"),
            None => s.push('\n'),
        }
    }
    let t = &report.threshold;
    if t.above_at_zero {
        let _ = writeln!(s, "QBER above {qber_threshold} already at OB 0");
    } else if t.ob_db.is_finite() {
        let _ = writeln!(s, "QBER reaches {qber_threshold} at OB {:.2} dB", t.ob_db);
    } else {
        let _ = writeln!(s, "QBER stays below {qber_threshold} up to the end of the search range");
    }
    s
}

pub fn stability_summary(report: &StabilityReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario {}: {} intervals at OB {} dB, mean per-basis rate {:.3} kb/s, max QBER {:.4}",
        report.scenario,
        report.rows.len(),
        report.ob_db,
        report.mean_per_basis_rate_bps() / 1e3,
        report.max_qber()
    );
    if let Some(f) = &report.ringing {
        let _ = writeln!(
            s,
            "ringing: period {} s, amplitude {:.3} kb/s, peak/trough {:.4} (configured {:.4})",
            f.period_s,
            f.amplitude / 1e3,
            f.peak_to_trough,
            f.expected_peak_to_trough
        );
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 60.0, 20.0, 40.0); // left, right, top, bottom

/// Line plot of sifted rate (left axis, log) and QBER (right axis) versus
/// optical budget. Monte Carlo points are drawn as markers.
pub fn sweep_svg(report: &SweepReport, qber_threshold: f64) -> String {
    let (l, r, t, b) = MARGIN;
    let pw = W - l - r;
    let ph = H - t - b;
    let xs: Vec<f64> = report.rows.iter().map(|r| r.ob_db).collect();
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let rates: Vec<f64> = report.rows.iter().map(|r| r.prediction.sifted_rate_bps.max(1e-3)).collect();
    let lmax = rates.iter().copied().fold(1.0f64, f64::max).log10().ceil();
    let lmin = rates.iter().copied().fold(f64::INFINITY, f64::min).log10().floor().min(lmax - 1.0);
    let px = |x: f64| l + (x - x0) / xspan * pw;
    let py_rate = |v: f64| t + (lmax - v.max(1e-3).log10()) / (lmax - lmin) * ph;
    let py_q = |q: f64| t + (0.5 - q) / 0.5 * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="14" text-anchor="middle">{}</text>"#, l + pw / 2.0, xml_escape(&report.scenario));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">optical budget (dB)</text>"#, l + pw / 2.0, H - 6.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" fill="navy">sifted rate (b/s)</text>"#, t + ph / 2.0, t + ph / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" transform="rotate(90 {} {})" text-anchor="middle" fill="darkred">QBER</text>"#, W - 12.0, t + ph / 2.0, W - 12.0, t + ph / 2.0);
    for d in (lmin as i32)..=(lmax as i32) {
        let y = py_rate(10f64.powi(d));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" fill="navy">1e{d}</text>"#, l - 4.0, y + 4.0);
    }
    for q in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="darkred">{q:.1}</text>"#, l + pw + 4.0, py_q(q) + 4.0);
    }
    let ticks = 7;
    for i in 0..=ticks {
        let x = x0 + xspan * i as f64 / ticks as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.1}</text>"#, px(x), t + ph + 14.0);
    }
    let yth = py_q(qber_threshold);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{yth:.1}" x2="{}" y2="{yth:.1}" stroke="darkred" stroke-dasharray="4 3"/>"#, l + pw);
    let line = |ys: &mut dyn Iterator<Item = (f64, f64)>| ys.map(|(x, y)| format!("{:.1},{:.1}", x, y)).collect::<Vec<_>>().join(" ");
    let rate_pts = line(&mut report.rows.iter().map(|r| (px(r.ob_db), py_rate(r.prediction.sifted_rate_bps))));
    let q_pts = line(&mut report.rows.iter().map(|r| (px(r.ob_db), py_q(r.prediction.qber))));
    let _ = writeln!(s, r#"<polyline points="{rate_pts}" fill="none" stroke="navy" stroke-width="1.5"/>"#);
    let _ = writeln!(s, r#"<polyline points="{q_pts}" fill="none" stroke="darkred" stroke-width="1.5"/>"#);
    for row in &report.rows {
        if let Some(mc) = &row.mc {
            let x = px(row.ob_db);
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="none" stroke="navy"/>"#, py_rate(mc.result.sifted_rate_bps()));
            let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="5" height="5" fill="none" stroke="darkred"/>"#, x - 2.5, py_q(mc.result.qber()) - 2.5);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
