//! Training configuration: defaults, validation, flat `key=value` parsing
//! and the named flag presets used by the ablation runner.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::RectSpec;

/// Feature switches for the semi-supervised components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    /// Bidirectional copy-paste composites.
    pub ucp: bool,
    /// Confidence-thresholded pseudo-label consistency on the strong view.
    pub vanilla_gd: bool,
    /// Pseudo-labels stitched from the teacher's composite predictions.
    pub sym_gd: bool,
    /// Amplitude mixup bounded by training progress.
    pub tp_ram: bool,
    /// Amplitude mixup with an unbounded ratio.
    pub ram: bool,
    /// Reliable-sample queue as an alternative paste source.
    pub reliable: bool,
    /// Targeted composite for the hardest sample of the previous batch.
    pub unreliable: bool,
}

impl Flags {
    pub const NAMES: [&'static str; 7] = ["ucp", "vanilla_gd", "sym_gd", "tp_ram", "ram", "reliable", "unreliable"];

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "ucp" => self.ucp,
            "vanilla_gd" => self.vanilla_gd,
            "sym_gd" => self.sym_gd,
            "tp_ram" => self.tp_ram,
            "ram" => self.ram,
            "reliable" => self.reliable,
            "unreliable" => self.unreliable,
            _ => return None,
        })
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "ucp" => &mut self.ucp,
            "vanilla_gd" => &mut self.vanilla_gd,
            "sym_gd" => &mut self.sym_gd,
            "tp_ram" => &mut self.tp_ram,
            "ram" => &mut self.ram,
            "reliable" => &mut self.reliable,
            "unreliable" => &mut self.unreliable,
            _ => return None,
        })
    }

    /// Builds a flag set from names, e.g. `["ucp", "sym_gd"]`.
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut flags = Self::default();
        for n in names {
            *flags.slot(n).ok_or_else(|| Error::InvalidConfig(format!("unknown flag {n:?}")))? = true;
        }
        Ok(flags)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.sym_gd && self.vanilla_gd {
            return fail("sym_gd and vanilla_gd are mutually exclusive");
        }
        if self.ram && self.tp_ram {
            return fail("ram and tp_ram are mutually exclusive");
        }
        if self.sym_gd && !self.ucp {
            return fail("sym_gd requires ucp");
        }
        if self.reliable && !self.ucp {
            return fail("reliable requires ucp");
        }
        if self.unreliable && !self.ucp {
            return fail("unreliable requires ucp");
        }
        Ok(())
    }

    /// Whether the run uses unlabeled data at all.
    pub fn semi_supervised(&self) -> bool {
        self.ucp || self.vanilla_gd || self.sym_gd
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = Self::NAMES.iter().copied().filter(|n| self.get(n) == Some(true)).collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join("+"))
        }
    }
}

/// Named flag sets: the eight ablation rows plus two baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Supervised,
    FixMatch,
    /// Ablation rows 1 to 8.
    Row(u8),
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Supervised,
        Preset::FixMatch,
        Preset::Row(1),
        Preset::Row(2),
        Preset::Row(3),
        Preset::Row(4),
        Preset::Row(5),
        Preset::Row(6),
        Preset::Row(7),
        Preset::Row(8),
    ];

    pub fn flags(self) -> Flags {
        let names: &[&str] = match self {
            Preset::Supervised => &[],
            Preset::FixMatch => &["vanilla_gd"],
            Preset::Row(1) => &["ucp"],
            Preset::Row(2) => &["ucp", "vanilla_gd"],
            Preset::Row(3) => &["ucp", "sym_gd"],
            Preset::Row(4) => &["ucp", "tp_ram"],
            Preset::Row(5) => &["ucp", "sym_gd", "ram"],
            Preset::Row(6) => &["ucp", "sym_gd", "tp_ram"],
            Preset::Row(7) => &["ucp", "sym_gd", "tp_ram", "reliable"],
            Preset::Row(8) => &["ucp", "sym_gd", "tp_ram", "reliable", "unreliable"],
            Preset::Row(n) => unreachable!("no ablation row {n}"),
        };
        Flags::from_names(names.iter().copied()).expect("preset names are valid")
    }

    pub fn name(self) -> String {
        match self {
            Preset::Supervised => "supervised".into(),
            Preset::FixMatch => "fixmatch".into(),
            Preset::Row(n) => format!("row{n}"),
        }
    }

    /// Accepts `supervised`, `fixmatch`, `full`, `rowN`, `#N` or `N`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let row = s.strip_prefix("row").or_else(|| s.strip_prefix('#')).unwrap_or(&s);
        match (s.as_str(), row.parse::<u8>()) {
            ("supervised", _) => Ok(Preset::Supervised),
            ("fixmatch", _) => Ok(Preset::FixMatch),
            ("full", _) => Ok(Preset::Row(8)),
            (_, Ok(n)) if (1..=8).contains(&n) => Ok(Preset::Row(n)),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub t_total: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Confidence threshold for pseudo-label weights.
    pub tau: f64,
    /// Relative half-size of the mixed low-frequency block.
    pub beta: f64,
    /// Reliable queue capacity.
    pub queue_capacity: usize,
    /// Threshold relaxation factor.
    pub delta: f64,
    /// Threshold floor and start value.
    pub gamma0: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    /// Chance per iteration that queue samples replace labeled paste sources.
    pub reliable_source_prob: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub rect: RectSpec,
    pub flags: Flags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_total: 2000,
            labeled_batch: 4,
            unlabeled_batch: 4,
            tau: 0.95,
            beta: 0.01,
            queue_capacity: 20,
            delta: 1.0005,
            gamma0: 0.05,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
            ema_decay: 0.99,
            reliable_source_prob: 0.5,
            eval_every: 200,
            seed: 0,
            rect: RectSpec::default(),
            flags: Preset::Row(8).flags(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn with_preset(preset: Preset) -> Self {
        Self { flags: preset.flags(), ..Self::default() }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.t_total == 0 || self.labeled_batch == 0 || self.unlabeled_batch == 0 || self.eval_every == 0 {
            return fail("t_total, batch sizes and eval_every must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return fail(format!("beta {} outside (0, 0.5)", self.beta));
        }
        if self.queue_capacity == 0 || !(self.delta > 1.0) || !(self.gamma0 > 0.0) {
            return fail("queue_capacity > 0, delta > 1 and gamma0 > 0 are required".into());
        }
        if !(self.lr0 > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return fail("lr0 > 0, momentum in [0, 1) and weight_decay >= 0 are required".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) || !(0.0..=1.0).contains(&self.reliable_source_prob) {
            return fail("ema_decay in [0, 1) and reliable_source_prob in [0, 1] are required".into());
        }
        self.rect.validate()?;
        self.flags.validate()
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("t_total".into(), self.t_total.to_string()),
            ("labeled_batch".into(), self.labeled_batch.to_string()),
            ("unlabeled_batch".into(), self.unlabeled_batch.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("queue_capacity".into(), self.queue_capacity.to_string()),
            ("delta".into(), self.delta.to_string()),
            ("gamma0".into(), self.gamma0.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("momentum".into(), self.momentum.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("ema_decay".into(), self.ema_decay.to_string()),
            ("reliable_source_prob".into(), self.reliable_source_prob.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("rect_area_min".into(), self.rect.area_fraction.0.to_string()),
            ("rect_area_max".into(), self.rect.area_fraction.1.to_string()),
            ("rect_aspect_min".into(), self.rect.aspect_ratio.0.to_string()),
            ("rect_aspect_max".into(), self.rect.aspect_ratio.1.to_string()),
        ];
        for name in Flags::NAMES {
            out.push((name.into(), self.flags.get(name).unwrap().to_string()));
        }
        out
    }

    /// Sets one key. `preset` replaces all flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "t_total" => self.t_total = parse_num(key, value)?,
            "labeled_batch" => self.labeled_batch = parse_num(key, value)?,
            "unlabeled_batch" => self.unlabeled_batch = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "queue_capacity" | "k" | "K" => self.queue_capacity = parse_num(key, value)?,
            "delta" => self.delta = parse_num(key, value)?,
            "gamma0" => self.gamma0 = parse_num(key, value)?,
            "lr0" => self.lr0 = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "ema_decay" => self.ema_decay = parse_num(key, value)?,
            "reliable_source_prob" => self.reliable_source_prob = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "rect_area_min" => self.rect.area_fraction.0 = parse_num(key, value)?,
            "rect_area_max" => self.rect.area_fraction.1 = parse_num(key, value)?,
            "rect_aspect_min" => self.rect.aspect_ratio.0 = parse_num(key, value)?,
            "rect_aspect_max" => self.rect.aspect_ratio.1 = parse_num(key, value)?,
            "preset" => self.flags = Preset::parse(value)?.flags(),
            flag => match self.flags.slot(flag) {
                Some(slot) => *slot = parse_bool(key, value)?,
                None => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
            },
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_assignment(line)?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// The configuration as `key=value` lines, readable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
