//! End-to-end experiment commands. Each command reads and writes one run
//! directory; every artifact carries the resolved config and the build
//! version, so a run can be reconstructed from its directory alone.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Example, ExperimentConfig, ALLEN_CAHN_INPUT_FRAMES};
use crate::container::{ArrayData, ArrayFile};
use crate::error::{Error, Result};
use crate::form::{form_hlrf, sorm, standard_normal_to_uniform, MppResult, SormResult};
use crate::grid::{FieldKind, FieldSample, Grid};
use crate::random_fields::{
    darcy_pushforward, derive_seed, draw_trig_params, intrinsic_dim_from_spectrum, kle_spectrum, trig_source_value,
    RbfSampler, SpectralSampler,
};
use crate::reliability::{
    estimate_pf_from_passages, estimate_pf_from_peaks, peak_response, response_passage_time, threshold_sweep, LimitMode,
    ReliabilityReport, Response, SweepRow,
};
use crate::residuals::Physics;
use crate::solvers::{solve_allen_cahn, solve_darcy, solve_diffusion_reaction, solve_nagumo, ALLEN_CAHN_FRAMES};
use crate::training::{relative_l2, train, Checkpoint, Dataset, TrainMode, TrainState};
use crate::wno::Wno;

/// Crate version plus `git describe` of the build tree when available.
pub const VERSION: &str = env!("PIWNO_VERSION");

pub const CONFIG_FILE: &str = "config.toml";
pub const INPUT_BANK: &str = "inputs.arrays";
pub const SOLUTION_BANK: &str = "solutions.arrays";
pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.arrays";
pub const LOSS_HISTORY: &str = "loss_history.csv";

/// Validation dumps full fields for this many held-out samples.
const FIELD_DUMPS: usize = 3;

/// Independent seed streams derived from the experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Train,
    Holdout,
    MonteCarlo,
    Kle,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Train => 0,
            Stream::Holdout => 1,
            Stream::MonteCarlo => 2,
            Stream::Kle => 3,
        }
    }
}

pub fn sample_seed(base: u64, stream: Stream, index: usize) -> u64 {
    derive_seed(derive_seed(base, stream.id()), index as u64)
}

/// Which model produces responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Solver,
    Surrogate,
    Both,
}

impl Source {
    fn solver(self) -> bool {
        matches!(self, Source::Solver | Source::Both)
    }

    fn surrogate(self) -> bool {
        matches!(self, Source::Surrogate | Source::Both)
    }
}

/// One random input realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub seed: u64,
    /// (n, p, w) of the trigonometric source; empty for field inputs
    pub params: Vec<f64>,
    /// the random field itself (before any pushforward)
    pub field: Vec<f64>,
    /// operator input, channel-major
    pub input: Vec<f64>,
    pub aux: Vec<f64>,
}

/// Limit-state view of one response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub peak: f64,
    pub passage: Option<f64>,
}

/// Grids, samplers and solvers of one example.
pub struct Problem {
    cfg: ExperimentConfig,
    grid: Grid,
    field_grid: Grid,
    rbf: Option<RbfSampler>,
    spectral: Option<SpectralSampler>,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.resolution;
        let (grid, field_grid) = match cfg.example {
            Example::DiffusionReaction | Example::Nagumo => (Grid::space_time(n, n)?, Grid::unit_1d(n)?),
            Example::Darcy => (Grid::unit_square(n)?, Grid::unit_square(n)?),
            Example::AllenCahn => (Grid::periodic_unit_square(n)?, Grid::periodic_unit_square(n)?),
        };
        let rbf = match cfg.example {
            Example::Nagumo => Some(RbfSampler::new(&cfg.grf, &field_grid)?),
            _ => None,
        };
        let spectral = match cfg.example {
            Example::Darcy | Example::AllenCahn => Some(SpectralSampler::new(&cfg.grf, &grid)?),
            _ => None,
        };
        Ok(Problem {
            cfg: cfg.clone(),
            grid,
            field_grid,
            rbf,
            spectral,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Grid the operator works on.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Grid of the random input field.
    pub fn field_grid(&self) -> &Grid {
        &self.field_grid
    }

    pub fn input_len(&self) -> usize {
        self.cfg.wno.in_channels * self.grid.len()
    }

    pub fn output_len(&self) -> usize {
        self.cfg.wno.out_channels * self.grid.len()
    }

    pub fn aux_len(&self) -> usize {
        self.field_grid.len()
    }

    pub fn physics(&self) -> Result<Physics> {
        Physics::new(
            &self.cfg.train.physics_spec(&self.cfg.physics),
            &self.grid,
            self.cfg.wno.out_channels,
        )
    }

    pub fn model(&self) -> Result<Wno> {
        Wno::new(&self.cfg.wno, &self.grid)
    }

    /// The random field alone (no solver work).
    pub fn draw_field(&self, seed: u64) -> Vec<f64> {
        match self.cfg.example {
            Example::DiffusionReaction => self.trig_field(draw_trig_params(seed)),
            Example::Nagumo => self.rbf.as_ref().expect("nagumo sampler").sample(seed).values,
            Example::Darcy | Example::AllenCahn => self.spectral.as_ref().expect("spectral sampler").sample(seed).values,
        }
    }

    fn trig_field(&self, p: [f64; 3]) -> Vec<f64> {
        self.field_grid
            .coords(0)
            .into_iter()
            .map(|x| trig_source_value(p[0], p[1], p[2], x))
            .collect()
    }

    /// Copies a function of x along the time axis of the (x, t) grid.
    fn broadcast(&self, f: &[f64]) -> Vec<f64> {
        let nt = self.grid.dims()[1];
        f.iter().flat_map(|&v| std::iter::repeat_n(v, nt)).collect()
    }

    pub fn draw(&self, seed: u64) -> Result<Draw> {
        match self.cfg.example {
            Example::DiffusionReaction => Ok(self.trig_draw(seed, draw_trig_params(seed))),
            _ => self.field_draw(seed, self.draw_field(seed)),
        }
    }

    /// Draw for given source parameters (n, p, w).
    pub fn trig_draw(&self, seed: u64, p: [f64; 3]) -> Draw {
        let f = self.trig_field(p);
        Draw {
            seed,
            params: p.to_vec(),
            input: self.broadcast(&f),
            aux: f.clone(),
            field: f,
        }
    }

    /// Draw for a given random field.
    pub fn field_draw(&self, seed: u64, field: Vec<f64>) -> Result<Draw> {
        if field.len() != self.field_grid.len() {
            return Err(crate::error::shape(self.field_grid.len(), field.len()));
        }
        let (input, aux) = match self.cfg.example {
            Example::DiffusionReaction | Example::Nagumo => (self.broadcast(&field), field.clone()),
            Example::Darcy => {
                let g = FieldSample::new(self.grid.clone(), 1, field.clone(), FieldKind::Permeability, seed)?;
                let a = darcy_pushforward(&g, self.cfg.pushforward).values;
                (a.clone(), a)
            }
            Example::AllenCahn => {
                let ph = &self.cfg.physics;
                let frames = solve_allen_cahn(
                    &field,
                    self.cfg.resolution,
                    ph.allen_cahn_eps,
                    ph.frame_dt,
                    ALLEN_CAHN_INPUT_FRAMES,
                    &self.cfg.solver,
                )?;
                let last = frames.last().expect("frames").clone();
                (frames.concat(), last)
            }
        };
        Ok(Draw {
            seed,
            params: Vec::new(),
            field,
            input,
            aux,
        })
    }

    /// Reference solution in the operator's output layout.
    pub fn solve(&self, d: &Draw) -> Result<Vec<f64>> {
        let ph = &self.cfg.physics;
        let s = &self.cfg.solver;
        Ok(match self.cfg.example {
            Example::DiffusionReaction => solve_diffusion_reaction(&d.aux, ph.diffusivity, ph.reaction, s)?.values,
            Example::Nagumo => solve_nagumo(&d.aux, ph.nagumo_eps, ph.nagumo_alpha, s)?.values,
            Example::Darcy => solve_darcy(&d.aux, ph.darcy_source, self.cfg.resolution, s)?.values,
            Example::AllenCahn => {
                let rest = ALLEN_CAHN_FRAMES - ALLEN_CAHN_INPUT_FRAMES;
                let frames = solve_allen_cahn(&d.aux, self.cfg.resolution, ph.allen_cahn_eps, ph.frame_dt, rest + 1, s)?;
                frames[1..].concat()
            }
        })
    }

    /// Time stamps of the response frames.
    pub fn times(&self) -> Vec<f64> {
        match self.cfg.example {
            Example::DiffusionReaction | Example::Nagumo => self.grid.coords(1),
            Example::Darcy => vec![0.0],
            Example::AllenCahn => (0..ALLEN_CAHN_FRAMES).map(|k| k as f64 * self.cfg.physics.frame_dt).collect(),
        }
    }

    /// Peak response and first-passage time of an output for draw `d`.
    pub fn outcome(&self, d: &Draw, out: &[f64]) -> Result<Outcome> {
        let ls = &self.cfg.limit_state;
        let n = self.cfg.resolution;
        let full;
        let r = match self.cfg.example {
            Example::DiffusionReaction | Example::Nagumo => Response::space_major(out, n, n)?,
            Example::Darcy => Response::stationary(out)?,
            Example::AllenCahn => {
                // the given frames precede the predicted ones
                full = [d.input.as_slice(), out].concat();
                Response::time_major(&full, n * n, ALLEN_CAHN_FRAMES)?
            }
        };
        let peak = peak_response(&r, ls)?;
        let passage = if r.n_time() > 1 {
            response_passage_time(&r, ls, &self.times())?
        } else {
            (peak > ls.threshold).then_some(0.0)
        };
        Ok(Outcome { peak, passage })
    }
}

/// Trained operator with the parameters used for prediction.
pub struct Surrogate {
    pub wno: Wno,
    pub params: Vec<f64>,
    pub checkpoint: Checkpoint,
}

impl Surrogate {
    /// Loads a checkpoint and checks it fits `problem`; predicts with the
    /// lowest-loss parameters seen during training.
    pub fn load(path: &Path, problem: &Problem) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("no checkpoint at {}; run `train` first", path.display())));
        }
        let (ck, wno) = Checkpoint::load(path)?;
        if ck.wno != problem.cfg.wno || ck.grid != problem.grid {
            return Err(Error::Config(format!(
                "checkpoint {} was trained for a different operator or grid",
                path.display()
            )));
        }
        Ok(Surrogate {
            params: ck.state.best_params.clone(),
            wno,
            checkpoint: ck,
        })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.wno.forward(&self.params, input)
    }
}

/// Input bank as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Bank {
    pub seeds: Vec<u64>,
    pub inputs: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
    pub solutions: Option<Vec<Vec<f64>>>,
}

/// SHA-256 of the array records alone, so provenance in the header does not
/// change the digest of identical data.
pub fn content_digest(f: &ArrayFile) -> Result<String> {
    let bare = ArrayFile {
        header: Value::Null,
        arrays: f.arrays.clone(),
    };
    Ok(hex::encode(Sha256::digest(bare.encode()?)))
}

fn rows(flat: &[f64], shape: &[usize], width: usize, name: &str) -> Result<Vec<Vec<f64>>> {
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Decode(format!("{name} has shape {shape:?}, expected [n, {width}]")));
    }
    Ok(flat.chunks_exact(width).map(<[f64]>::to_vec).collect())
}

fn stats(values: &[f64]) -> ErrorStats {
    let n = values.len();
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let mean = s.iter().sum::<f64>() / n.max(1) as f64;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let median = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    };
    ErrorStats {
        n,
        mean,
        median,
        std: var.sqrt(),
        min: s.first().copied().unwrap_or(f64::NAN),
        max: s.last().copied().unwrap_or(f64::NAN),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Relative L2 error of each prediction against its reference.
pub fn relative_errors(predictions: &[Vec<f64>], references: &[Vec<f64>]) -> Result<Vec<f64>> {
    if predictions.len() != references.len() {
        return Err(crate::error::shape(references.len(), predictions.len()));
    }
    predictions
        .iter()
        .zip(references)
        .map(|(p, r)| {
            if p.len() != r.len() {
                return Err(crate::error::shape(r.len(), p.len()));
            }
            Ok(relative_l2(p, r))
        })
        .collect()
}

/// An experiment bound to its output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    problem: Problem,
}

impl Run {
    /// `cfg.output_dir` is resolved against `output_root` unless absolute.
    pub fn new(cfg: ExperimentConfig, output_root: &Path) -> Result<Self> {
        let problem = Problem::new(&cfg)?;
        Ok(Run {
            dir: output_root.join(&cfg.output_dir),
            cfg,
            problem,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn provenance(&self) -> Value {
        json!({ "version": VERSION, "config": self.cfg })
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let text = format!("# piwno {VERSION}\n{}", self.cfg.to_toml()?);
        fs::write(self.path(CONFIG_FILE), text)?;
        Ok(())
    }

    fn write_json(&self, name: &str, result: &impl Serialize) -> Result<PathBuf> {
        let doc = json!({ "version": VERSION, "config": self.cfg, "result": result });
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&path, text)?;
        Ok(path)
    }

    /// CSV preceded by `#` comment lines holding the version and config.
    fn write_csv<I>(&self, name: &str, header: &[&str], records: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "# piwno {VERSION}")?;
        let cfg = serde_json::to_string(&self.cfg).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(file, "# config {cfg}")?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(csv_error)?;
        for r in records {
            w.write_record(&r).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn load_bank(&self, need_solutions: bool) -> Result<Bank> {
        let path = self.path(INPUT_BANK);
        if !path.exists() {
            return Err(Error::Config(format!("no input bank at {}; run `sample` first", path.display())));
        }
        let f = ArrayFile::read(&path)?;
        let example = f.header.pointer("/config/example").and_then(Value::as_str);
        if example != Some(self.cfg.example.name()) {
            return Err(Error::Config(format!(
                "input bank holds {example:?} samples, config is {}",
                self.cfg.example.name()
            )));
        }
        let p = &self.problem;
        let (_, seeds) = f.u64("seeds")?;
        let (shp, v) = f.f64("inputs")?;
        let inputs = rows(v, shp, p.input_len(), "inputs")?;
        let (shp, v) = f.f64("aux")?;
        let aux = rows(v, shp, p.aux_len(), "aux")?;
        if inputs.len() != seeds.len() || aux.len() != seeds.len() {
            return Err(Error::Decode("input bank arrays disagree on the sample count".into()));
        }
        let sol_path = self.path(SOLUTION_BANK);
        let solutions = if sol_path.exists() {
            let s = ArrayFile::read(&sol_path)?;
            let (shp, v) = s.f64("solutions")?;
            let sol = rows(v, shp, p.output_len(), "solutions")?;
            if sol.len() != seeds.len() {
                return Err(Error::Decode("solution bank does not match the input bank".into()));
            }
            Some(sol)
        } else {
            None
        };
        if need_solutions && solutions.is_none() {
            return Err(Error::Config(format!(
                "training mode {:?} needs a solution bank; run `sample --solutions`",
                self.cfg.train.mode
            )));
        }
        Ok(Bank {
            seeds: seeds.to_vec(),
            inputs,
            aux,
            solutions,
        })
    }

    fn surrogate(&self) -> Result<Surrogate> {
        Surrogate::load(&self.path(CHECKPOINT), &self.problem)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub digest: String,
    pub solutions_digest: Option<String>,
    pub seeds: Vec<u64>,
}

/// Draws the training inputs (and optionally their reference solutions).
pub fn cmd_sample(run: &Run, with_solutions: bool) -> Result<SampleSummary> {
    run.prepare()?;
    let p = &run.problem;
    let n = run.cfg.n_train;
    let seeds: Vec<u64> = (0..n).map(|i| sample_seed(run.cfg.seed, Stream::Train, i)).collect();
    let draws: Vec<Draw> = seeds.par_iter().map(|&s| p.draw(s)).collect::<Result<_>>()?;
    let flat = |f: fn(&Draw) -> &[f64]| draws.iter().flat_map(|d| f(d).iter().copied()).collect::<Vec<f64>>();
    let mut header = run.provenance();
    header["kind"] = json!("input_bank");
    let mut bank = ArrayFile::new(header);
    bank.push("seeds", &[n], ArrayData::U64(seeds.clone()))?;
    bank.push_f64("inputs", &[n, p.input_len()], flat(|d| &d.input))?;
    bank.push_f64("aux", &[n, p.aux_len()], flat(|d| &d.aux))?;
    bank.push_f64("fields", &[n, p.field_grid.len()], flat(|d| &d.field))?;
    if run.cfg.example == Example::DiffusionReaction {
        bank.push_f64("params", &[n, 3], flat(|d| &d.params))?;
    }
    let digest = content_digest(&bank)?;
    bank.write(&run.path(INPUT_BANK))?;
    let solutions_digest = if with_solutions {
        let sols: Vec<Vec<f64>> = draws.par_iter().map(|d| p.solve(d)).collect::<Result<_>>()?;
        let mut header = run.provenance();
        header["kind"] = json!("solution_bank");
        let mut sb = ArrayFile::new(header);
        sb.push_f64("solutions", &[n, p.output_len()], sols.concat())?;
        let d = content_digest(&sb)?;
        sb.write(&run.path(SOLUTION_BANK))?;
        Some(d)
    } else {
        None
    };
    let summary = SampleSummary {
        n,
        digest,
        solutions_digest,
        seeds,
    };
    run.write_json(MANIFEST, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
}

fn write_history(run: &Run, state: &TrainState) -> Result<()> {
    let recs = state.history.iter().map(|r| {
        vec![r.epoch.to_string(), num(r.total), num(r.residual), num(r.boundary), num(r.initial), num(r.data)]
    });
    run.write_csv(LOSS_HISTORY, &["epoch", "total", "residual", "boundary", "initial", "data"], recs)?;
    Ok(())
}

/// Trains the operator on the input bank; with `resume`, continues from an
/// existing checkpoint in the run directory.
pub fn cmd_train(run: &Run, resume: bool) -> Result<TrainSummary> {
    run.prepare()?;
    let cfg = &run.cfg;
    let tc = &cfg.train;
    let bank = run.load_bank(tc.mode != TrainMode::Physics)?;
    let p = &run.problem;
    let wno = p.model()?;
    let physics = match tc.mode {
        TrainMode::Data => None,
        _ => Some(p.physics()?),
    };
    let ck_path = run.path(CHECKPOINT);
    let state = if resume && ck_path.exists() {
        let (ck, _) = Checkpoint::load(&ck_path)?;
        let same_run = crate::training::TrainConfig {
            epochs: tc.epochs,
            ..ck.train.clone()
        };
        if ck.wno != cfg.wno || ck.grid != *p.grid() || same_run != *tc {
            return Err(Error::Config(
                "checkpoint settings differ from the config (only train.epochs may change on resume)".into(),
            ));
        }
        log::info!("resuming from epoch {}", ck.state.epoch);
        ck.state
    } else {
        TrainState::fresh(wno.init_params(tc.seed), tc)
    };
    let data = Dataset {
        inputs: bank.inputs,
        aux: bank.aux,
        targets: bank.solutions,
    };
    let save = |s: &TrainState| -> Result<()> {
        let ck = Checkpoint {
            wno: cfg.wno.clone(),
            grid: p.grid().clone(),
            train: tc.clone(),
            physics: physics.as_ref().map(|ph| ph.spec().clone()),
            state: s.clone(),
            meta: run.provenance(),
        };
        ck.save(&wno, &ck_path)?;
        write_history(run, s)
    };
    let every = cfg.checkpoint_every;
    let state = train(&wno, physics.as_ref(), &data, tc, state, |s| {
        if s.epoch % every == 0 || s.epoch == tc.epochs {
            save(s)?;
        }
        Ok(())
    })?;
    save(&state)?;
    Ok(TrainSummary {
        epochs: state.epoch,
        final_loss: state.history.last().map(|r| r.total),
        best_loss: state.best_loss,
        best_epoch: state.best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub stats: ErrorStats,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
}

/// Compares the trained operator with the reference solver on fresh inputs.
pub fn cmd_validate(run: &Run, n_holdout: Option<usize>) -> Result<ValidationSummary> {
    run.prepare()?;
    let p = &run.problem;
    let sur = run.surrogate()?;
    let n = n_holdout.unwrap_or(run.cfg.n_holdout);
    if n == 0 {
        return Err(Error::Config("n_holdout must be positive".into()));
    }
    let seeds: Vec<u64> = (0..n).map(|i| sample_seed(run.cfg.seed, Stream::Holdout, i)).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&s| {
            let d = p.draw(s)?;
            Ok((p.solve(&d)?, sur.predict(&d.input)?))
        })
        .collect::<Result<_>>()?;
    let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let errors = relative_errors(&pred, &truth)?;
    run.write_csv(
        "validation.csv",
        &["sample", "seed", "relative_l2"],
        errors
            .iter()
            .enumerate()
            .map(|(i, e)| vec![i.to_string(), seeds[i].to_string(), num(*e)]),
    )?;
    let coords = p.grid().node_coords();
    let nodes = p.grid().len();
    let axes: Vec<String> = (0..p.grid().ndim()).map(|a| format!("x{a}")).collect();
    let mut header = vec!["sample", "channel", "node"];
    header.extend(axes.iter().map(String::as_str));
    header.extend(["reference", "prediction"]);
    let dumps = (0..n.min(FIELD_DUMPS)).flat_map(|i| {
        let (t, q, c) = (&truth[i], &pred[i], &coords);
        (0..t.len()).map(move |k| {
            let node = k % nodes;
            let mut r = vec![i.to_string(), (k / nodes).to_string(), node.to_string()];
            r.extend(c[node].iter().map(|&x| num(x)));
            r.extend([num(t[k]), num(q[k])]);
            r
        })
    });
    run.write_csv("validation_fields.csv", &header, dumps)?;
    let summary = ValidationSummary {
        stats: stats(&errors),
        seeds,
        errors,
    };
    run.write_json("validation_summary.json", &summary)?;
    Ok(summary)
}

/// Responses of one Monte Carlo population.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarlo {
    pub seeds: Vec<u64>,
    pub solver: Option<Vec<Outcome>>,
    pub surrogate: Option<Vec<Outcome>>,
}

/// Runs `n` Monte Carlo draws through the selected models.
pub fn monte_carlo(run: &Run, source: Source, n: usize) -> Result<MonteCarlo> {
    let p = &run.problem;
    let sur = if source.surrogate() { Some(run.surrogate()?) } else { None };
    let seeds: Vec<u64> = (0..n).map(|i| sample_seed(run.cfg.seed, Stream::MonteCarlo, i)).collect();
    let pairs: Vec<(Option<Outcome>, Option<Outcome>)> = seeds
        .par_iter()
        .map(|&s| {
            let d = p.draw(s)?;
            let a = if source.solver() { Some(p.outcome(&d, &p.solve(&d)?)?) } else { None };
            let b = match &sur {
                Some(m) => Some(p.outcome(&d, &m.predict(&d.input)?)?),
                None => None,
            };
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(MonteCarlo {
        seeds,
        solver: source.solver().then(|| a.into_iter().flatten().collect()),
        surrogate: source.surrogate().then(|| b.into_iter().flatten().collect()),
    })
}

/// P_f estimate for one population under the configured limit state.
pub fn reliability_report(cfg: &ExperimentConfig, outcomes: &[Outcome]) -> Result<ReliabilityReport> {
    match cfg.limit_state.mode {
        LimitMode::TimeIndependent => {
            let peaks: Vec<f64> = outcomes.iter().map(|o| o.peak).collect();
            estimate_pf_from_peaks(&peaks, cfg.limit_state.threshold)
        }
        LimitMode::FirstPassage => {
            let times: Vec<Option<f64>> = outcomes.iter().map(|o| o.passage).collect();
            estimate_pf_from_passages(&times)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub source: Source,
    pub rows: Vec<SweepRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySummary {
    pub solver: Option<ReliabilityReport>,
    pub surrogate: Option<ReliabilityReport>,
    /// P_f(surrogate) − P_f(solver) when both ran
    pub pf_delta: Option<f64>,
    pub sweep: Vec<SweepTable>,
}

fn populations(mc: &MonteCarlo) -> Vec<(Source, &Vec<Outcome>)> {
    let mut v = Vec::new();
    if let Some(o) = &mc.solver {
        v.push((Source::Solver, o));
    }
    if let Some(o) = &mc.surrogate {
        v.push((Source::Surrogate, o));
    }
    v
}

fn sweep_tables(run: &Run, mc: &MonteCarlo) -> Result<Vec<SweepTable>> {
    populations(mc)
        .into_iter()
        .map(|(source, o)| {
            let peaks: Vec<f64> = o.iter().map(|o| o.peak).collect();
            Ok(SweepTable {
                source,
                rows: threshold_sweep(&peaks, &run.cfg.sweep.thresholds)?,
            })
        })
        .collect()
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Solver => "solver",
        Source::Surrogate => "surrogate",
        Source::Both => "both",
    }
}

fn write_sweep(run: &Run, tables: &[SweepTable]) -> Result<()> {
    let recs = tables.iter().flat_map(|t| {
        t.rows.iter().map(move |r| {
            vec![source_name(t.source).to_string(), num(r.threshold), num(r.pf), num(r.beta), num(r.stderr)]
        })
    });
    run.write_csv("sweep.csv", &["source", "threshold", "pf", "beta", "stderr"], recs)?;
    Ok(())
}

/// Monte Carlo reliability analysis with the solver, the surrogate, or both
/// on the same draws.
pub fn cmd_reliability(run: &Run, source: Source) -> Result<ReliabilitySummary> {
    run.prepare()?;
    let mc = monte_carlo(run, source, run.cfg.n_mcs)?;
    let solver = mc.solver.as_deref().map(|o| reliability_report(&run.cfg, o)).transpose()?;
    let surrogate = mc.surrogate.as_deref().map(|o| reliability_report(&run.cfg, o)).transpose()?;
    let pf_delta = match (&solver, &surrogate) {
        (Some(a), Some(b)) => Some(b.pf - a.pf),
        _ => None,
    };
    let sweep = sweep_tables(run, &mc)?;
    write_sweep(run, &sweep)?;
    let mut densities = Vec::new();
    for (s, rep) in [(Source::Solver, &solver), (Source::Surrogate, &surrogate)] {
        if let Some(d) = rep.as_ref().and_then(|r| r.density.as_ref()) {
            densities.extend(d.x.iter().zip(&d.y).map(|(x, y)| vec![source_name(s).to_string(), num(*x), num(*y)]));
        }
    }
    run.write_csv("density.csv", &["source", "x", "density"], densities)?;
    let empty = Vec::new();
    let (sa, sb) = (mc.solver.as_ref().unwrap_or(&empty), mc.surrogate.as_ref().unwrap_or(&empty));
    let responses = (0..mc.seeds.len()).map(|i| {
        let (a, b) = (sa.get(i), sb.get(i));
        vec![
            mc.seeds[i].to_string(),
            opt(a.map(|o| o.peak)),
            opt(a.and_then(|o| o.passage)),
            opt(b.map(|o| o.peak)),
            opt(b.and_then(|o| o.passage)),
        ]
    });
    run.write_csv(
        "responses.csv",
        &["seed", "solver_peak", "solver_passage", "surrogate_peak", "surrogate_passage"],
        responses,
    )?;
    let summary = ReliabilitySummary {
        solver,
        surrogate,
        pf_delta,
        sweep,
    };
    // samples and densities already live in the CSV files
    let strip = |r: &Option<ReliabilityReport>| {
        r.clone().map(|mut r| {
            r.samples.clear();
            r.density = None;
            r
        })
    };
    let brief = ReliabilitySummary {
        solver: strip(&summary.solver),
        surrogate: strip(&summary.surrogate),
        ..summary.clone()
    };
    run.write_json("reliability.json", &brief)?;
    Ok(summary)
}

/// P_f and β over the configured thresholds from one Monte Carlo population.
pub fn cmd_sweep(run: &Run, source: Source) -> Result<Vec<SweepTable>> {
    run.prepare()?;
    let mc = monte_carlo(run, source, run.cfg.n_mcs)?;
    let tables = sweep_tables(run, &mc)?;
    write_sweep(run, &tables)?;
    run.write_json("sweep.json", &tables)?;
    Ok(tables)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormSummary {
    pub source: Source,
    pub dimension: usize,
    pub mpp: MppResult,
    pub sorm: Option<SormResult>,
    /// MPP mapped back to (n, p, w) or to the initial condition
    pub design_point: Vec<f64>,
}

/// FORM (and with `second_order`, SORM) on the limit state in standard
/// normal space. Defined for the examples with a low-dimensional input map.
pub fn cmd_form(run: &Run, source: Source, second_order: bool) -> Result<FormSummary> {
    if source == Source::Both {
        return Err(Error::Config("FORM/SORM runs on one model: choose solver or surrogate".into()));
    }
    run.prepare()?;
    let p = &run.problem;
    let sur = if source.surrogate() { Some(run.surrogate()?) } else { None };
    let dim = match run.cfg.example {
        Example::DiffusionReaction => 3,
        Example::Nagumo => p.rbf.as_ref().expect("nagumo sampler").dim(),
        _ => {
            return Err(Error::Config(format!(
                "FORM/SORM is available for diffusion_reaction and nagumo; {} has one variable per grid node",
                run.cfg.example.name()
            )))
        }
    };
    let to_physical = |u: &[f64]| -> Result<Vec<f64>> {
        match run.cfg.example {
            Example::DiffusionReaction => Ok(u.iter().map(|&z| standard_normal_to_uniform(z)).collect()),
            _ => p.rbf.as_ref().expect("nagumo sampler").field_from_normals(u),
        }
    };
    let to_draw = |u: &[f64]| -> Result<Draw> {
        let x = to_physical(u)?;
        match run.cfg.example {
            Example::DiffusionReaction => Ok(p.trig_draw(0, [x[0], x[1], x[2]])),
            _ => p.field_draw(0, x),
        }
    };
    let g = |u: &[f64]| -> Result<f64> {
        let d = to_draw(u)?;
        let out = match &sur {
            Some(m) => m.predict(&d.input)?,
            None => p.solve(&d)?,
        };
        Ok(run.cfg.limit_state.threshold - p.outcome(&d, &out)?.peak)
    };
    let u0 = vec![0.0; dim];
    let (mpp, so) = if second_order {
        let (m, s) = sorm(&g, &u0, &run.cfg.form)?;
        (m, Some(s))
    } else {
        (form_hlrf(&g, &u0, &run.cfg.form)?, None)
    };
    let summary = FormSummary {
        source,
        dimension: dim,
        design_point: to_physical(&mpp.u_star)?,
        mpp,
        sorm: so,
    };
    run.write_json(if second_order { "sorm.json" } else { "form.json" }, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KleSummary {
    pub n_samples: usize,
    pub energy: f64,
    pub intrinsic_dim: usize,
    pub total_variance: f64,
}

/// Intrinsic dimension of the random input field from an empirical
/// Karhunen–Loève expansion.
pub fn cmd_kle(run: &Run) -> Result<KleSummary> {
    run.prepare()?;
    let p = &run.problem;
    let k = &run.cfg.kle;
    let samples: Vec<FieldSample> = (0..k.samples)
        .into_par_iter()
        .map(|i| {
            let s = sample_seed(run.cfg.seed, Stream::Kle, i);
            FieldSample::new(p.field_grid.clone(), 1, p.draw_field(s), FieldKind::InitialCondition, s)
        })
        .collect::<Result<_>>()?;
    let ev = kle_spectrum(&samples)?;
    let total: f64 = ev.iter().sum();
    let dim = intrinsic_dim_from_spectrum(&ev, k.energy)?;
    let mut acc = 0.0;
    let recs = ev.iter().enumerate().map(|(i, &e)| {
        acc += e;
        vec![(i + 1).to_string(), num(e), num(if total > 0.0 { acc / total } else { 0.0 })]
    });
    run.write_csv("kle_spectrum.csv", &["mode", "eigenvalue", "cumulative_fraction"], recs)?;
    let summary = KleSummary {
        n_samples: k.samples,
        energy: k.energy,
        intrinsic_dim: dim,
        total_variance: total,
    };
    run.write_json("kle.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(example: Example) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(example);
        c.resolution = match example {
            Example::AllenCahn | Example::Darcy => 16,
            _ => 17,
        };
        c.limit_state.probe = match c.limit_state.probe {
            crate::reliability::Probe::Point(_) => crate::reliability::Probe::Point(8),
            p => p,
        };
        if example == Example::AllenCahn {
            c.limit_state.window = Some((10, 22));
        }
        c.n_train = 4;
        c.n_holdout = 2;
        c.n_mcs = 12;
        c.wno.width = 4;
        c.wno.levels = 2;
        c.wno.blocks = 1;
        c.wno.projection_width = 8;
        c.train.epochs = 2;
        c.train.batch_size = 2;
        c.solver.substeps = 8;
        c.kle.samples = 20;
        c
    }

    #[test]
    fn layouts_agree_for_every_example() {
        for ex in [Example::DiffusionReaction, Example::Nagumo, Example::Darcy, Example::AllenCahn] {
            let p = Problem::new(&tiny(ex)).unwrap();
            let d = p.draw(5).unwrap();
            assert_eq!(d.input.len(), p.input_len(), "{ex:?}");
            assert_eq!(d.aux.len(), p.aux_len(), "{ex:?}");
            assert_eq!(p.physics().unwrap().aux_len(), p.aux_len(), "{ex:?}");
            let u = p.solve(&d).unwrap();
            assert_eq!(u.len(), p.output_len(), "{ex:?}");
            assert_eq!(p.physics().unwrap().output_len(), p.output_len(), "{ex:?}");
            let o = p.outcome(&d, &u).unwrap();
            assert!(o.peak.is_finite());
            assert_eq!(p.draw(5).unwrap(), d);
        }
    }

    #[test]
    fn allen_cahn_continuation_matches_one_long_solve() {
        let c = tiny(Example::AllenCahn);
        let p = Problem::new(&c).unwrap();
        let d = p.draw(3).unwrap();
        let ph = &c.physics;
        let all = solve_allen_cahn(&d.field, c.resolution, ph.allen_cahn_eps, ph.frame_dt, ALLEN_CAHN_FRAMES, &c.solver).unwrap();
        let n2 = c.resolution * c.resolution;
        assert_eq!(d.input, all[..ALLEN_CAHN_INPUT_FRAMES].concat());
        let rest = p.solve(&d).unwrap();
        assert_eq!(rest.len(), (ALLEN_CAHN_FRAMES - ALLEN_CAHN_INPUT_FRAMES) * n2);
        assert_eq!(rest, all[ALLEN_CAHN_INPUT_FRAMES..].concat());
    }

    #[test]
    fn identical_predictions_have_zero_error() {
        let a = vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.25, 4.0]];
        assert_eq!(relative_errors(&a, &a).unwrap(), vec![0.0, 0.0]);
        let s = stats(&[3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.median, s.min, s.max, s.mean), (2.5, 1.0, 10.0, 4.0));
    }

    #[test]
    fn end_to_end_on_a_tiny_run() {
        let root = tempfile::tempdir().unwrap();
        let run = Run::new(tiny(Example::DiffusionReaction), root.path()).unwrap();
        let a = cmd_sample(&run, false).unwrap();
        let b = cmd_sample(&run, false).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.seeds.len(), 4);

        let mut data_cfg = run.cfg.clone();
        data_cfg.train.mode = TrainMode::Data;
        let data_run = Run::new(data_cfg, root.path()).unwrap();
        assert!(matches!(cmd_train(&data_run, false), Err(Error::Config(_))));

        let t = cmd_train(&run, false).unwrap();
        assert_eq!(t.epochs, 2);
        let v = cmd_validate(&run, None).unwrap();
        assert_eq!(v.errors.len(), 2);
        let r = cmd_reliability(&run, Source::Both).unwrap();
        assert_eq!(r.solver.as_ref().unwrap().n_samples, 12);
        assert!(r.pf_delta.is_some());
        let tables = cmd_sweep(&run, Source::Solver).unwrap();
        let pf: Vec<f64> = tables[0].rows.iter().map(|r| r.pf).collect();
        assert!(pf.windows(2).all(|w| w[1] <= w[0]));
        for f in [CONFIG_FILE, INPUT_BANK, MANIFEST, CHECKPOINT, LOSS_HISTORY, "validation.csv", "validation_fields.csv", "reliability.json", "density.csv", "sweep.csv"] {
            let text = fs::read(run.path(f)).unwrap();
            assert!(text.windows(VERSION.len()).any(|w| w == VERSION.as_bytes()), "{f} lacks the version");
        }
        let resolved = ExperimentConfig::from_toml(&fs::read_to_string(run.path(CONFIG_FILE)).unwrap(), &[]).unwrap();
        assert_eq!(resolved, run.cfg);
    }

    #[test]
    fn form_is_limited_to_low_dimensional_inputs() {
        let root = tempfile::tempdir().unwrap();
        let run = Run::new(tiny(Example::Darcy), root.path()).unwrap();
        assert!(matches!(cmd_form(&run, Source::Solver, false), Err(Error::Config(_))));
        let run = Run::new(tiny(Example::DiffusionReaction), root.path()).unwrap();
        assert!(matches!(cmd_form(&run, Source::Both, false), Err(Error::Config(_))));
    }
}
