//! Experiment configuration: one TOML file per experiment, merged over
//! per-example defaults, with `dotted.key=value` overrides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::form::FormOptions;
use crate::random_fields::{GrfSpec, Pushforward};
use crate::reliability::{LimitMode, LimitState, Probe};
use crate::residuals::{PdeSystem, PhysicsSpec};
use crate::solvers::{SolverConfig, ALLEN_CAHN_FRAMES, ALLEN_CAHN_NODES, DARCY_NODES, DIFFUSION_REACTION_NODES, NAGUMO_NODES};
use crate::training::TrainConfig;
use crate::wavelet::WaveletFamily;
use crate::wno::WnoConfig;

/// Allen–Cahn frames given to the operator; the rest are predicted.
pub const ALLEN_CAHN_INPUT_FRAMES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    DiffusionReaction,
    Nagumo,
    Darcy,
    AllenCahn,
}

impl Example {
    pub fn system(self) -> PdeSystem {
        match self {
            Example::DiffusionReaction => PdeSystem::DiffusionReaction,
            Example::Nagumo => PdeSystem::Nagumo,
            Example::Darcy => PdeSystem::Darcy,
            Example::AllenCahn => PdeSystem::AllenCahn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Example::DiffusionReaction => "diffusion_reaction",
            Example::Nagumo => "nagumo",
            Example::Darcy => "darcy",
            Example::AllenCahn => "allen_cahn",
        }
    }

    /// Nodes per axis of the default grid.
    pub fn default_resolution(self) -> usize {
        match self {
            Example::DiffusionReaction => DIFFUSION_REACTION_NODES,
            Example::Nagumo => NAGUMO_NODES,
            Example::Darcy => DARCY_NODES,
            Example::AllenCahn => ALLEN_CAHN_NODES,
        }
    }

    /// Spatial nodes and time frames of the response seen by the limit state.
    pub fn response_extent(self, resolution: usize) -> (usize, usize) {
        match self {
            Example::DiffusionReaction | Example::Nagumo => (resolution, resolution),
            Example::Darcy => (resolution * resolution, 1),
            Example::AllenCahn => (resolution * resolution, ALLEN_CAHN_FRAMES),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KleSpec {
    pub samples: usize,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: Example,
    /// run directory; relative paths resolve against the output root
    pub output_dir: String,
    pub seed: u64,
    /// nodes per axis
    pub resolution: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_mcs: usize,
    /// epochs between checkpoint writes (the last epoch is always written)
    pub checkpoint_every: usize,
    pub grf: GrfSpec,
    pub pushforward: Pushforward,
    pub physics: PhysicsSpec,
    pub wno: WnoConfig,
    pub train: TrainConfig,
    pub limit_state: LimitState,
    pub solver: SolverConfig,
    pub sweep: SweepSpec,
    pub form: FormOptions,
    pub kle: KleSpec,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl ExperimentConfig {
    pub fn defaults(example: Example) -> Self {
        let resolution = example.default_resolution();
        let base_wno = WnoConfig {
            width: 64,
            levels: 4,
            blocks: 4,
            wavelet: WaveletFamily::Dtcwt,
            projection_width: 128,
            ..Default::default()
        };
        let mut train = TrainConfig::default();
        let (grf, n_train, wno, limit_state, thresholds) = match example {
            Example::DiffusionReaction => (
                // unused: the source is the trigonometric family
                GrfSpec::nagumo(),
                600,
                base_wno,
                LimitState {
                    threshold: 0.85,
                    probe: Probe::Point(41),
                    window: None,
                    mode: LimitMode::TimeIndependent,
                },
                linspace(0.75, 0.95, 11),
            ),
            Example::Nagumo => (
                GrfSpec::nagumo(),
                800,
                base_wno,
                LimitState {
                    threshold: 1.45,
                    probe: Probe::Point(32),
                    window: None,
                    mode: LimitMode::FirstPassage,
                },
                linspace(1.3, 1.6, 11),
            ),
            Example::Darcy => {
                train.batch_size = 10;
                (
                    GrfSpec::darcy(),
                    800,
                    base_wno,
                    LimitState {
                        threshold: 0.078,
                        probe: Probe::FieldMax,
                        window: None,
                        mode: LimitMode::TimeIndependent,
                    },
                    linspace(0.074, 0.09, 9),
                )
            }
            Example::AllenCahn => {
                train.batch_size = 10;
                (
                    GrfSpec::allen_cahn(),
                    600,
                    WnoConfig {
                        in_channels: ALLEN_CAHN_INPUT_FRAMES,
                        out_channels: ALLEN_CAHN_FRAMES - ALLEN_CAHN_INPUT_FRAMES,
                        ..base_wno
                    },
                    LimitState {
                        threshold: 0.78,
                        probe: Probe::FieldMax,
                        window: Some((10, 22)),
                        mode: LimitMode::FirstPassage,
                    },
                    linspace(0.74, 0.84, 11),
                )
            }
        };
        let solver = match example {
            Example::AllenCahn => SolverConfig::with_substeps(10),
            _ => SolverConfig::default(),
        };
        ExperimentConfig {
            example,
            output_dir: format!("runs/{}", example.name()),
            seed: 0,
            resolution,
            n_train,
            n_holdout: 50,
            n_mcs: 10_000,
            checkpoint_every: 10,
            grf,
            pushforward: Pushforward::default(),
            physics: PhysicsSpec::for_system(example.system()),
            wno,
            train,
            limit_state,
            solver,
            sweep: SweepSpec { thresholds },
            form: FormOptions::default(),
            kle: KleSpec {
                samples: 2000,
                energy: 0.99,
            },
        }
    }

    /// Parses a TOML document over the defaults of its `example`, then
    /// applies `key=value` overrides (values in TOML syntax; bare words are
    /// taken as strings).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let example: Example = match user.get("example") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("example: {e}")))?,
            None => return Err(Error::Config("config must name an `example`".into())),
        };
        let mut merged = toml::Value::try_from(Self::defaults(example)).map_err(|e| Error::Internal(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: ExperimentConfig = merged.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Cross-field checks, run before any compute.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.physics.system != self.example.system() {
            return err(format!("physics.system {:?} does not match example {:?}", self.physics.system, self.example));
        }
        self.physics.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.wno.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        self.grf.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.resolution < 5 {
            return err(format!("resolution {} too small", self.resolution));
        }
        if self.example == Example::AllenCahn && !self.resolution.is_multiple_of(2) {
            return err("Allen–Cahn needs an even resolution".into());
        }
        let (in_c, out_c) = match self.example {
            Example::AllenCahn => (ALLEN_CAHN_INPUT_FRAMES, ALLEN_CAHN_FRAMES - ALLEN_CAHN_INPUT_FRAMES),
            _ => (1, 1),
        };
        if self.wno.in_channels != in_c || self.wno.out_channels != out_c {
            return err(format!(
                "wno channels ({}, {}) must be ({in_c}, {out_c}) for {}",
                self.wno.in_channels,
                self.wno.out_channels,
                self.example.name()
            ));
        }
        let block = 1usize << self.wno.levels;
        let padded = self.resolution.div_ceil(block) * block;
        if padded > 4 * self.resolution {
            return err(format!(
                "{} wavelet levels pad {} nodes to {padded}; use fewer levels",
                self.wno.levels, self.resolution
            ));
        }
        let (ns, nt) = self.example.response_extent(self.resolution);
        self.limit_state
            .validate(ns, nt)
            .map_err(|e| Error::Config(format!("limit_state: {e}")))?;
        if self.limit_state.mode == LimitMode::FirstPassage && nt < 2 {
            return err("first-passage mode needs a time-dependent example".into());
        }
        if let Pushforward::Binary { hi, lo } = self.pushforward {
            if !(hi > 0.0 && lo > 0.0) {
                return err("binary pushforward values must be positive".into());
            }
        }
        if self.n_train == 0 || self.n_mcs == 0 || self.checkpoint_every == 0 {
            return err("n_train, n_mcs and checkpoint_every must be positive".into());
        }
        if self.sweep.thresholds.iter().any(|t| !t.is_finite()) {
            return err("sweep thresholds must be finite".into());
        }
        if self.kle.samples < 2 || !(self.kle.energy > 0.0 && self.kle.energy <= 1.0) {
            return err("kle needs ≥ 2 samples and energy in (0, 1]".into());
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Recursive table merge; `over` wins on conflicts.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c = value` in a TOML document.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for ex in [Example::DiffusionReaction, Example::Nagumo, Example::Darcy, Example::AllenCahn] {
            let c = ExperimentConfig::defaults(ex);
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml().unwrap(), &[]).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_file_and_overrides() {
        let text = "example = \"diffusion_reaction\"\n[train]\nepochs = 5\n";
        let c = ExperimentConfig::from_toml(text, &["wno.width=8".into(), "output_dir=runs/x".into(), "limit_state.threshold=0.9".into()]).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 20);
        assert_eq!(c.wno.width, 8);
        assert_eq!(c.output_dir, "runs/x");
        assert_eq!(c.limit_state.threshold, 0.9);
    }

    #[test]
    fn inconsistent_settings_rejected() {
        let base = "example = \"darcy\"\n";
        for bad in ["limit_state.probe={kind=\"point\", index=5000}", "wno.levels=9", "train.epochs=0", "physics.system=\"nagumo\"", "bogus=1", "wno.in_channels=3"] {
            let r = ExperimentConfig::from_toml(base, &[bad.to_string()]);
            assert!(matches!(r, Err(Error::Config(_))), "{bad}: {r:?}");
        }
        assert!(ExperimentConfig::from_toml("seed = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml("example = \"darcy\"", &["noequals".into()]).is_err());
    }
}
