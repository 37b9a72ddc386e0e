//! Scenario files and their resolution into fully specified run configs.
//!
//! A scenario file is TOML. Top-level keys select the layout and run
//! settings; optional `[source]`, `[receiver]`, `[detector]`, `[processor]`,
//! `[channel_plan]`, `[fiber]` and `[stability]` tables override individual
//! fields of the layout defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use super::calibration::CalibratedParams;
use crate::analytic::LinkModel;
use crate::detection::{DetectorSpec, ReceiverSpec, Ringing, FEW_MODE_PENALTY};
use crate::error::{config_err, Error, Result};
use crate::optics::{ChannelPlan, CoexistenceFilters, FiberSpec, NoiseBudget};
use crate::postproc::ProcessorConfig;
use crate::source::SourceConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    FewModeShortwave,
    SingleModeShortwave,
    SingleModeCband,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::FewModeShortwave, Layout::SingleModeShortwave, Layout::SingleModeCband];

    pub fn title(&self) -> &'static str {
        match self {
            Layout::FewModeShortwave => "few-mode shortwave",
            Layout::SingleModeShortwave => "single-mode shortwave",
            Layout::SingleModeCband => "single-mode C-band",
        }
    }

    /// File stem of the shipped preset.
    pub fn preset_stem(&self) -> &'static str {
        match self {
            Layout::FewModeShortwave => "few-mode_shortwave",
            Layout::SingleModeShortwave => "single-mode_shortwave",
            Layout::SingleModeCband => "single-mode_C-band",
        }
    }

    pub fn quantum_wavelength_nm(&self) -> f64 {
        match self {
            Layout::SingleModeCband => 1550.0,
            _ => 852.0,
        }
    }
}

/// A single optical budget or an inclusive `start:stop:step` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ObSpec {
    Single(f64),
    Sweep { start: f64, stop: f64, step: f64 },
}

impl ObSpec {
    pub fn points(&self) -> Vec<f64> {
        match *self {
            ObSpec::Single(x) => vec![x],
            ObSpec::Sweep { start, stop, step } => {
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| start + i as f64 * step).collect()
            }
        }
    }
}

impl FromStr for ObSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || config_err("ob", format!("`{s}` is not a number or start:stop:step"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let spec = match nums[..] {
            [x] => ObSpec::Single(x),
            [start, stop, step] => ObSpec::Sweep { start, stop, step },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ObSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObSpec::Single(x) => write!(f, "{x}"),
            ObSpec::Sweep { start, stop, step } => write!(f, "{start}:{stop}:{step}"),
        }
    }
}

impl ObSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ObSpec::Single(x) if !(x >= 0.0 && x.is_finite()) => Err(config_err("ob", "must be a finite value ≥ 0 dB")),
            ObSpec::Sweep { start, stop, step } if !(start >= 0.0 && stop >= start && step > 0.0 && stop.is_finite()) => {
                Err(config_err("ob", "sweep needs 0 ≤ start ≤ stop and step > 0"))
            }
            _ => Ok(()),
        }
    }
}

impl<'de> Deserialize<'de> for ObSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => {
                let s = ObSpec::Single(x);
                s.validate().map_err(serde::de::Error::custom)?;
                Ok(s)
            }
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings of the long-duration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySettings {
    pub ob_db: f64,
    pub duration_s: f64,
    pub interval_s: f64,
    #[serde(default)]
    pub ringing: Option<Ringing>,
    /// Receiver excess loss of the measurement session; `None` keeps the
    /// sweep value.
    #[serde(default)]
    pub excess_loss_db: Option<f64>,
    /// μ of the session; `None` keeps the sweep value.
    #[serde(default)]
    pub mean_photon_number: Option<f64>,
}

fn default_fiber_km() -> f64 {
    1.0
}

fn default_ob() -> ObSpec {
    ObSpec::Single(0.0)
}

fn default_duration() -> f64 {
    10.0
}

fn default_seed() -> u64 {
    1
}

/// On-disk scenario.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub layout: Layout,
    #[serde(default)]
    pub coexistence: bool,
    /// 0 selects a back-to-back link.
    #[serde(default = "default_fiber_km")]
    pub fiber_km: f64,
    #[serde(default = "default_ob")]
    pub ob: ObSpec,
    /// Monte Carlo duration per optical-budget point.
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mc: bool,
    /// Use the configured link delay instead of header acquisition.
    #[serde(default)]
    pub reference_clock: bool,
    #[serde(default)]
    pub source: Option<toml::Table>,
    #[serde(default)]
    pub receiver: Option<toml::Table>,
    #[serde(default)]
    pub detector: Option<toml::Table>,
    #[serde(default)]
    pub processor: Option<toml::Table>,
    #[serde(default)]
    pub channel_plan: Option<toml::Table>,
    #[serde(default)]
    pub fiber: Option<toml::Table>,
    #[serde(default)]
    pub stability: Option<toml::Table>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<(String, Self)> {
        let text = std::fs::read_to_string(path)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string();
        Ok((id, Self::parse(&text)?))
    }

    /// A scenario with layout defaults only.
    pub fn preset(layout: Layout, coexistence: bool, fiber_km: f64) -> Self {
        Self {
            name: None,
            layout,
            coexistence,
            fiber_km,
            ob: default_ob(),
            duration_s: default_duration(),
            seed: default_seed(),
            mc: false,
            reference_clock: false,
            source: None,
            receiver: None,
            detector: None,
            processor: None,
            channel_plan: None,
            fiber: None,
            stability: None,
        }
    }

    /// Applies layout defaults, calibrated parameters and overrides.
    pub fn resolve(&self, id: &str, params: &CalibratedParams) -> Result<ScenarioConfig> {
        let d = LayoutDefaults::new(self.layout, self.fiber_km, params);
        let source = apply("source", d.source, &self.source)?;
        let detector = apply("detector", d.detector, &self.detector)?;
        let processor = apply("processor", d.processor, &self.processor)?;
        let plan = apply("channel_plan", d.plan, &self.channel_plan)?;
        let fiber = apply("fiber", d.fiber, &self.fiber)?;
        let mut receiver = d.receiver;
        receiver.few_mode_penalty_qber = if fiber.is_few_mode(plan.quantum_wavelength_nm) { FEW_MODE_PENALTY } else { 0.0 };
        let receiver = apply("receiver", receiver, &self.receiver)?;
        let stability = apply("stability", d.stability, &self.stability)?;
        let cfg = ScenarioConfig {
            id: id.to_string(),
            name: self.name.clone().unwrap_or_else(|| self.layout.title().to_string()),
            layout: self.layout,
            coexistence: self.coexistence,
            ob: self.ob,
            duration_s: self.duration_s,
            seed: self.seed,
            mc: self.mc,
            reference_clock: self.reference_clock,
            source,
            receiver,
            detector,
            processor,
            plan,
            filters: d.filters,
            fiber,
            stability,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Overlays the fields in `table` onto `base`.
fn apply<T>(section: &'static str, base: T, table: &Option<toml::Table>) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(over) = table else { return Ok(base) };
    let mut value = toml::Value::try_from(&base).map_err(|e| config_err(section, e.to_string()))?;
    merge(&mut value, over);
    value.try_into().map_err(|e: toml::de::Error| config_err(section, e.message().to_string()))
}

fn merge(base: &mut toml::Value, over: &toml::Table) {
    let toml::Value::Table(t) = base else { return };
    for (k, v) in over {
        match (t.get_mut(k), v) {
            (Some(b @ toml::Value::Table(_)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                t.insert(k.clone(), v.clone());
            }
        }
    }
}

struct LayoutDefaults {
    source: SourceConfig,
    receiver: ReceiverSpec,
    detector: DetectorSpec,
    processor: ProcessorConfig,
    plan: ChannelPlan,
    filters: CoexistenceFilters,
    fiber: FiberSpec,
    stability: StabilitySettings,
}

impl LayoutDefaults {
    fn new(layout: Layout, fiber_km: f64, p: &CalibratedParams) -> Self {
        let processor = ProcessorConfig {
            max_throughput_cps: p.max_throughput_cps,
            ..Default::default()
        };
        let mut stability = StabilitySettings {
            ob_db: 0.0,
            duration_s: 3600.0,
            interval_s: 10.0,
            ringing: None,
            excess_loss_db: None,
            mean_photon_number: None,
        };
        let (receiver, detector, plan, filters, mut fiber) = match layout {
            Layout::FewModeShortwave => {
                stability.ringing = Some(Ringing {
                    amplitude: 0.15,
                    period_s: 600.0,
                });
                stability.excess_loss_db = p.stability_excess_loss_db;
                let rx = ReceiverSpec {
                    excess_loss_db: p.shortwave_excess_loss_db,
                    intrinsic_error_rate: p.shortwave_intrinsic_error,
                    ..ReceiverSpec::shortwave_free_space()
                };
                (rx, DetectorSpec::silicon(), ChannelPlan::shortwave(), CoexistenceFilters::shortwave(), FiberSpec::smf28(fiber_km))
            }
            Layout::SingleModeShortwave => {
                let rx = ReceiverSpec {
                    excess_loss_db: p.single_mode_excess_loss_db,
                    intrinsic_error_rate: p.shortwave_intrinsic_error,
                    ..ReceiverSpec::shortwave_bypass()
                };
                (rx, DetectorSpec::silicon(), ChannelPlan::shortwave(), CoexistenceFilters::shortwave(), FiberSpec::sm630(fiber_km))
            }
            Layout::SingleModeCband => {
                let rx = ReceiverSpec {
                    excess_loss_db: p.cband_excess_loss_db,
                    intrinsic_error_rate: p.cband_intrinsic_error,
                    ..ReceiverSpec::c_band()
                };
                (rx, DetectorSpec::ingaas(), ChannelPlan::c_band(), CoexistenceFilters::c_band(), FiberSpec::smf28(fiber_km))
            }
        };
        fiber.raman_coefficient = p.raman_coefficient;
        Self {
            source: SourceConfig::default(),
            receiver,
            detector,
            processor,
            plan,
            filters,
            fiber,
            stability,
        }
    }
}

/// Fully resolved scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub name: String,
    pub layout: Layout,
    pub coexistence: bool,
    pub ob: ObSpec,
    pub duration_s: f64,
    pub seed: u64,
    pub mc: bool,
    pub reference_clock: bool,
    pub source: SourceConfig,
    pub receiver: ReceiverSpec,
    pub detector: DetectorSpec,
    pub processor: ProcessorConfig,
    pub plan: ChannelPlan,
    pub filters: CoexistenceFilters,
    pub fiber: FiberSpec,
    pub stability: StabilitySettings,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layout == Layout::SingleModeShortwave && self.coexistence {
            return Err(config_err(
                "coexistence",
                "single-mode shortwave cannot carry classical channels (O-band loss in the visible-band fiber is too high)",
            ));
        }
        if !(self.duration_s > 0.0) {
            return Err(config_err("duration_s", "must be positive"));
        }
        if !(self.fiber.length_km >= 0.0) {
            return Err(config_err("fiber_km", "must be ≥ 0"));
        }
        let st = &self.stability;
        if !(st.interval_s > 0.0 && st.duration_s >= 2.0 * st.interval_s) {
            return Err(config_err("stability", "duration must cover at least two intervals"));
        }
        if let Some(r) = &st.ringing {
            crate::detection::few_mode_modulation(0.0, r).map_err(|e| config_err("stability.ringing", e.to_string()))?;
        }
        self.ob.validate()?;
        self.source.validate()?;
        self.receiver.validate()?;
        self.detector.validate()?;
        self.processor.validate()?;
        self.plan.validate()?;
        self.filters.validate()?;
        self.fiber.validate()
    }

    /// Classical-channel crosstalk at the quantum receiver. The sweep only
    /// attenuates the quantum channel, so this is independent of OB.
    pub fn noise_budget(&self) -> Result<NoiseBudget> {
        if self.coexistence {
            NoiseBudget::compute(&self.plan, &self.fiber, &self.filters)
        } else {
            Ok(NoiseBudget::none())
        }
    }

    pub fn link_model(&self) -> Result<LinkModel> {
        Ok(LinkModel {
            source: self.source.clone(),
            receiver: self.receiver.clone(),
            detector: self.detector.clone(),
            noise: self.noise_budget()?,
            processor: self.processor.clone(),
        })
    }

    /// Model of the long-duration session: session excess loss and ringing.
    pub fn stability_model(&self) -> Result<LinkModel> {
        let mut m = self.link_model()?;
        if let Some(x) = self.stability.excess_loss_db {
            m.receiver.excess_loss_db = x;
        }
        if let Some(mu) = self.stability.mean_photon_number {
            m.source.mean_photon_number = mu;
        }
        m.receiver.few_mode_ringing = if m.receiver.few_mode_penalty_qber > 0.0 { self.stability.ringing } else { None };
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ob_grid_is_inclusive() {
        let g: ObSpec = "0:14:0.5".parse().unwrap();
        let p = g.points();
        assert_eq!(p.len(), 29);
        assert_eq!(p[28], 14.0);
        assert_eq!("3.5".parse::<ObSpec>().unwrap().points(), vec![3.5]);
        assert!("1:2".parse::<ObSpec>().is_err());
        assert!("5:1:1".parse::<ObSpec>().is_err());
        assert!("0:1:0".parse::<ObSpec>().is_err());
    }

    #[test]
    fn single_mode_shortwave_rejects_coexistence() {
        let f = ScenarioFile::preset(Layout::SingleModeShortwave, true, 1.0);
        let e = f.resolve("x", &CalibratedParams::uncalibrated()).unwrap_err();
        assert!(e.to_string().contains("coexistence"), "{e}");
    }

    #[test]
    fn overrides_touch_only_named_fields() {
        let f = ScenarioFile::parse(
            r#"
layout = "single_mode_cband"
coexistence = true
ob = "0:4:1"
[source]
mean_photon_number = 0.2
[detector]
dark_count_rate_hz = 1000.0
"#,
        )
        .unwrap();
        let c = f.resolve("c", &CalibratedParams::uncalibrated()).unwrap();
        assert_eq!(c.source.mean_photon_number, 0.2);
        assert_eq!(c.source.symbol_rate_hz, 445e6);
        assert_eq!(c.detector.dark_count_rate_hz, 1000.0);
        assert_eq!(c.detector.dead_time_ps, 25e6);
        assert_eq!(c.ob.points().len(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected_with_field_names() {
        assert!(ScenarioFile::parse("layout = \"few_mode_shortwave\"\nbogus = 1").is_err());
        let f = ScenarioFile::parse("layout = \"few_mode_shortwave\"\n[source]\nmean_photon_number = \"lots\"").unwrap();
        let e = f.resolve("x", &CalibratedParams::uncalibrated()).unwrap_err();
        assert!(e.to_string().contains("source"), "{e}");
    }

    #[test]
    fn few_mode_penalty_follows_fiber() {
        let p = CalibratedParams::uncalibrated();
        let fm = ScenarioFile::preset(Layout::FewModeShortwave, false, 1.0).resolve("a", &p).unwrap();
        assert_eq!(fm.receiver.few_mode_penalty_qber, FEW_MODE_PENALTY);
        let b2b = ScenarioFile::preset(Layout::FewModeShortwave, false, 0.0).resolve("b", &p).unwrap();
        assert_eq!(b2b.receiver.few_mode_penalty_qber, 0.0);
        let sm = ScenarioFile::preset(Layout::SingleModeShortwave, false, 1.0).resolve("c", &p).unwrap();
        assert_eq!(sm.receiver.few_mode_penalty_qber, 0.0);
        assert!(sm.receiver.bypass_polarimeter);
    }
}
