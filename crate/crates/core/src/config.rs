//! Run configuration in sectioned `key = value` form.
//!
//! ```toml
//! [grid]
//! P = 1.0
//! J = 49
//! I = 49
//!
//! [time]
//! T = 1.0
//! dt = "auto"        # or a number
//! safety = 0.95
//!
//! [rates]
//! kind = "benchmark"
//!
//! [kernel]
//! kind = "constant"
//! a = 1.0
//!
//! [initial]
//! kind = "benchmark"
//! target_mrp = 0.1
//! u_in = 0.9
//!
//! [output]
//! snapshots = [0.0, 0.25, 1.0]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::coagulation::{OverflowPolicy, TargetMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "P")]
    pub p_max: f64,
    #[serde(rename = "J")]
    pub j_max: usize,
    #[serde(rename = "I")]
    pub i_max: usize,
}

/// Time step: fixed, or derived from the stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DtSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for DtSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DtSetting::Auto => s.serialize_str("auto"),
            DtSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DtSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = DtSetting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"auto\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<DtSetting, E> {
                if v == "auto" {
                    Ok(DtSetting::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<DtSetting, E> {
                Ok(DtSetting::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<DtSetting, E> {
                Ok(DtSetting::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<DtSetting, E> {
                Ok(DtSetting::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

/// When the stability inequalities are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gate {
    /// Against the a priori bounds over `[0, T]` before the run, and at
    /// every step.
    #[default]
    APriori,
    /// Only at every step, against the current ion level.
    PerStep,
}

fn default_safety() -> f64 {
    0.95
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub dt: DtSetting,
    /// Fraction of `dt_max` used by `dt = "auto"`.
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default)]
    pub gate: Gate,
    /// Multiplies the sampled `sup |V|`.
    #[serde(default = "default_one")]
    pub v_sup_safety: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatesKind {
    #[default]
    Benchmark,
    Langmuir,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default)]
    pub kind: RatesKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    #[default]
    Constant,
    SeparableProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default)]
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_exp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_exp: Option<f64>,
    #[serde(default)]
    pub overflow: OverflowPolicy,
    #[serde(default)]
    pub targets: TargetMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    #[default]
    Benchmark,
    /// Whitespace-separated `p r f` rows on a tensor node grid.
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Value of `sum r p f dp dr` after scaling; no scaling when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mrp: Option<f64>,
    pub u_in: f64,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    /// Serial coagulation sweep; outputs are byte-identical across reruns
    /// either way, this only pins the thread layout.
    #[serde(default)]
    pub deterministic: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            snapshots: Vec::new(),
            snapshot_stride: None,
            deterministic: false,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            key,
            format!("expected a finite value > 0, got {v}"),
        ))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            key,
            format!("expected a finite value >= 0, got {v}"),
        ))
    }
}

/// Checks that exactly the keys in `used` are set and returns their values.
fn pick<const N: usize>(
    section: &str,
    kind: &str,
    keys: &[(&str, Option<f64>)],
    used: [&str; N],
) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (name, value) in keys {
        let key = format!("{section}.{name}");
        match (used.iter().position(|u| u == name), value) {
            (Some(k), Some(v)) => out[k] = *v,
            (Some(_), None) => {
                return Err(Error::config(key, format!("required by kind = \"{kind}\"")))
            }
            (None, Some(_)) => {
                return Err(Error::config(key, format!("not used by kind = \"{kind}\"")))
            }
            (None, None) => {}
        }
    }
    Ok(out)
}

impl RatesConfig {
    fn params(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("k0", self.k0),
            ("alpha", self.alpha),
            ("l0", self.l0),
            ("beta", self.beta),
            ("k", self.k),
            ("l", self.l),
        ]
    }

    fn validate(&self) -> Result<()> {
        let keys = self.params();
        let values: Vec<(&str, f64)> = match self.kind {
            RatesKind::Benchmark => {
                pick::<0>("rates", "benchmark", &keys, [])?;
                vec![]
            }
            RatesKind::Langmuir => {
                let v = pick("rates", "langmuir", &keys, ["k0", "alpha", "l0", "beta"])?;
                vec![("k0", v[0]), ("alpha", v[1]), ("l0", v[2]), ("beta", v[3])]
            }
            RatesKind::Constant => {
                let v = pick("rates", "constant", &keys, ["k", "l"])?;
                vec![("k", v[0]), ("l", v[1])]
            }
        };
        for (name, v) in values {
            nonnegative(&format!("rates.{name}"), v)?;
        }
        Ok(())
    }
}

impl KernelConfig {
    fn params(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("a", self.a),
            ("scale", self.scale),
            ("p_exp", self.p_exp),
            ("r_exp", self.r_exp),
        ]
    }

    fn validate(&mut self) -> Result<()> {
        if self.kind == KernelKind::Constant
            && self.a.is_none()
            && self.params().iter().all(|p| p.1.is_none())
        {
            self.a = Some(1.0);
        }
        let keys = self.params();
        let values: Vec<(&str, f64)> = match self.kind {
            KernelKind::Constant => {
                let v = pick("kernel", "constant", &keys, ["a"])?;
                vec![("a", v[0])]
            }
            KernelKind::SeparableProduct => {
                let v = pick(
                    "kernel",
                    "separable-product",
                    &keys,
                    ["scale", "p_exp", "r_exp"],
                )?;
                vec![("scale", v[0]), ("p_exp", v[1]), ("r_exp", v[2])]
            }
        };
        for (name, v) in values {
            nonnegative(&format!("kernel.{name}"), v)?;
        }
        Ok(())
    }
}

impl SimConfig {
    /// Parses TOML text and validates it. Relative table paths are
    /// resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: SimConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        if let Some(file) = &cfg.initial.file {
            if file.is_relative() {
                cfg.initial.file = Some(base_dir.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. The stability gate is not applied
    /// here; see [`parse_config`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Effective configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills defaults and checks every value against its domain.
    pub fn validate(&mut self) -> Result<()> {
        let g = &self.grid;
        positive("grid.P", g.p_max)?;
        if g.i_max >= u16::MAX as usize {
            return Err(Error::config(
                "grid.I",
                format!("at most {} r-cells are supported", u16::MAX - 1),
            ));
        }

        let t = &self.time;
        nonnegative("time.T", t.t_final)?;
        if let DtSetting::Fixed(dt) = t.dt {
            positive("time.dt", dt)?;
        }
        if !(t.safety > 0.0 && t.safety <= 1.0) {
            return Err(Error::config(
                "time.safety",
                format!("expected a value in (0, 1], got {}", t.safety),
            ));
        }
        if !(t.v_sup_safety.is_finite() && t.v_sup_safety >= 1.0) {
            return Err(Error::config(
                "time.v_sup_safety",
                format!("expected a finite value >= 1, got {}", t.v_sup_safety),
            ));
        }

        self.rates.validate()?;
        self.kernel.validate()?;

        let init = &mut self.initial;
        nonnegative("initial.u_in", init.u_in)?;
        match init.kind {
            InitialKind::Benchmark => {
                if init.file.is_some() {
                    return Err(Error::config(
                        "initial.file",
                        "not used by kind = \"benchmark\"",
                    ));
                }
                init.target_mrp.get_or_insert(0.1);
            }
            InitialKind::Table => {
                if init.file.is_none() {
                    return Err(Error::config(
                        "initial.file",
                        "required by kind = \"table\"",
                    ));
                }
            }
        }
        if let Some(m) = init.target_mrp {
            positive("initial.target_mrp", m)?;
        }

        let out = &self.output;
        if out.snapshot_stride.is_some() && !out.snapshots.is_empty() {
            return Err(Error::config(
                "output.snapshot_stride",
                "cannot be combined with an explicit snapshots list",
            ));
        }
        if out.snapshot_stride == Some(0) {
            return Err(Error::config(
                "output.snapshot_stride",
                "must be at least 1",
            ));
        }
        for (k, &s) in out.snapshots.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0 && s <= self.time.t_final) {
                return Err(Error::config(
                    format!("output.snapshots[{k}]"),
                    format!("time {s} outside [0, T = {}]", self.time.t_final),
                ));
            }
        }
        Ok(())
    }
}

/// Reads, validates and applies the stability gate.
pub fn parse_config(path: &Path) -> Result<SimConfig> {
    let cfg = SimConfig::load(path)?;
    crate::simulation::Simulation::prepare(&cfg)?.check_gate()?;
    Ok(cfg)
}

/// Turns a TOML error into a config error naming `section.key` when the
/// span points at a key.
fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let message = e.message().to_string();
    let Some(span) = e.span() else {
        return Error::config("<document>", message);
    };
    let before = &text[..span.start.min(text.len())];
    let section = before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let line_start = before.rfind('\n').map_or(0, |k| k + 1);
    let line = text[line_start..].lines().next().unwrap_or("").trim();
    if line.starts_with('[') {
        return Error::config(line.trim_matches(|c| c == '[' || c == ']').trim(), message);
    }
    let key = line
        .split('=')
        .next()
        .map(str::trim)
        .filter(|k| !k.is_empty() && !k.starts_with('['));
    let name = match (section, key) {
        (Some(s), Some(k)) => format!("{s}.{k}"),
        (Some(s), None) => s,
        (None, Some(k)) => k.to_string(),
        (None, None) => "<document>".to_string(),
    };
    Error::config(name, message)
}
