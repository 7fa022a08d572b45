//! Physics-informed and data-driven training of the wavelet operator.
//!
//! Parameter gradients come from the operator's reverse pass seeded with
//! ∂loss/∂output; for the physics loss that seed is itself the transpose of
//! the (linear) derivative operators applied to the residual.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::ArrayFile;
use crate::error::{invalid, shape, Error, Result};
use crate::grid::Grid;
use crate::random_fields::{derive_seed, rng_from_seed};
use crate::residuals::{LossTerms, Physics, PhysicsSpec};
use crate::wno::{Wno, WnoConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// residual loss only; needs inputs but no solutions
    #[default]
    Physics,
    /// mean relative L2 error against solver targets
    Data,
    /// sum of the two
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// boundary-loss weight α₁
    pub alpha_bc: f64,
    /// initial-condition-loss weight α₂
    pub alpha_ic: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Physics,
            epochs: 300,
            batch_size: 20,
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            seed: 0,
            alpha_bc: 1.0,
            alpha_ic: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay < 1.0) {
            return Err(Error::Config(format!("weight decay must be in [0, 1), got {}", self.weight_decay)));
        }
        if !(self.alpha_bc >= 0.0 && self.alpha_ic >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Copy of `spec` carrying this run's loss weights.
    pub fn physics_spec(&self, spec: &PhysicsSpec) -> PhysicsSpec {
        PhysicsSpec {
            alpha_bc: self.alpha_bc,
            alpha_ic: self.alpha_ic,
            ..spec.clone()
        }
    }
}

/// Adam with decoupled weight decay: p ← p − lr·(m̂/(√v̂ + ε) + λ·p).
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.learning_rate;
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let step = (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = *p * decay - lr * step;
        }
    }
}

/// Training samples: operator inputs (channel-major), the physics auxiliary
/// field for each, and optional solver targets (channel-major).
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
    pub targets: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// ‖pred − target‖ / ‖target‖
pub fn relative_l2(pred: &[f64], target: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = target.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Relative L2 error and its gradient w.r.t. `pred`.
fn relative_l2_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let den: f64 = target.iter().map(|b| b * b).sum::<f64>().sqrt();
    let diff: Vec<f64> = pred.iter().zip(target).map(|(a, b)| a - b).collect();
    let num = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let e = num / den;
    let g = if num > 0.0 {
        diff.iter().map(|d| d / (num * den)).collect()
    } else {
        vec![0.0; diff.len()]
    };
    (e, g)
}

/// Mean losses over a batch or an epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
    pub initial: f64,
    pub data: f64,
}

impl EpochRecord {
    fn add(&mut self, o: &EpochRecord, w: f64) {
        self.total += w * o.total;
        self.residual += w * o.residual;
        self.boundary += w * o.boundary;
        self.initial += w * o.initial;
        self.data += w * o.data;
    }

    fn is_finite(&self) -> bool {
        [self.total, self.residual, self.boundary, self.initial, self.data]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub adam: Adam,
    /// epochs completed
    pub epoch: usize,
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(params: Vec<f64>, cfg: &TrainConfig) -> Self {
        TrainState {
            adam: Adam::new(params.len(), cfg.learning_rate, cfg.weight_decay),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            history: Vec::new(),
        }
    }
}

/// Loss of one sample and ∂loss/∂output.
fn sample_objective(
    mode: TrainMode,
    physics: Option<&Physics>,
    out: &[f64],
    aux: Option<&[f64]>,
    target: Option<&[f64]>,
) -> Result<(EpochRecord, Vec<f64>)> {
    let mut rec = EpochRecord::default();
    let mut grad = vec![0.0; out.len()];
    if matches!(mode, TrainMode::Physics | TrainMode::Hybrid) {
        let (ph, aux) = (physics.expect("checked"), aux.expect("checked"));
        let (t, g) = ph.loss_and_grad(out, aux)?;
        rec.residual = t.residual;
        rec.boundary = t.boundary;
        rec.initial = t.initial;
        rec.total += t.total;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if matches!(mode, TrainMode::Data | TrainMode::Hybrid) {
        let (e, g) = relative_l2_grad(out, target.expect("checked"));
        rec.data = e;
        rec.total += e;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((rec, grad))
}

/// Mean objective over `members` and its parameter gradient. Members run in
/// parallel in groups; gradients are summed in member order.
pub fn batch_objective(
    wno: &Wno,
    params: &[f64],
    physics: Option<&Physics>,
    data: &Dataset,
    members: &[usize],
    mode: TrainMode,
) -> Result<(EpochRecord, Vec<f64>)> {
    if members.is_empty() {
        return Err(invalid("empty batch"));
    }
    let w = 1.0 / members.len() as f64;
    let mut rec = EpochRecord::default();
    let mut grad = vec![0.0; wno.n_params()];
    let group = rayon::current_num_threads().max(1);
    for chunk in members.chunks(group) {
        let parts: Vec<Result<(EpochRecord, Vec<f64>)>> = chunk
            .par_iter()
            .map(|&i| {
                let (out, cache) = wno.forward_cached(params, &data.inputs[i])?;
                let aux = data.aux.get(i).map(|a| a.as_slice());
                let target = data.targets.as_ref().map(|t| t[i].as_slice());
                let (r, mut g_out) = sample_objective(mode, physics, &out, aux, target)?;
                g_out.iter_mut().for_each(|v| *v *= w);
                let mut g = vec![0.0; wno.n_params()];
                wno.backward(params, &cache, &g_out, &mut g)?;
                Ok((r, g))
            })
            .collect();
        for p in parts {
            let (r, g) = p?;
            rec.add(&r, w);
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((rec, grad))
}

fn check_dataset(wno: &Wno, physics: Option<&Physics>, data: &Dataset, mode: TrainMode) -> Result<()> {
    if data.is_empty() {
        return Err(invalid("no training samples"));
    }
    let in_len = wno.config().in_channels * wno.grid().len();
    let out_len = wno.config().out_channels * wno.grid().len();
    if let Some(i) = data.inputs.iter().position(|x| x.len() != in_len) {
        return Err(invalid(format!("input {i} has {} values, expected {in_len}", data.inputs[i].len())));
    }
    if matches!(mode, TrainMode::Physics | TrainMode::Hybrid) {
        let ph = physics.ok_or_else(|| Error::Config("physics-informed training needs a physics spec".into()))?;
        if ph.output_len() != out_len {
            return Err(shape(ph.output_len(), out_len));
        }
        if data.aux.len() != data.len() {
            return Err(shape(data.len(), data.aux.len()));
        }
    }
    if matches!(mode, TrainMode::Data | TrainMode::Hybrid) {
        let t = data
            .targets
            .as_ref()
            .ok_or_else(|| Error::Config("data-driven training needs a solution bank".into()))?;
        if t.len() != data.len() || t.iter().any(|y| y.len() != out_len) {
            return Err(invalid("targets do not match the inputs"));
        }
        if let Some(i) = t.iter().position(|y| y.iter().all(|&v| v == 0.0)) {
            return Err(invalid(format!("target {i} is identically zero; relative error undefined")));
        }
    }
    Ok(())
}

/// Runs epochs `state.epoch .. cfg.epochs`, calling `on_epoch` after each;
/// an error from the callback stops the run.
pub fn train(
    wno: &Wno,
    physics: Option<&Physics>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    check_dataset(wno, physics, data, cfg.mode)?;
    if state.params.len() != wno.n_params() {
        return Err(shape(wno.n_params(), state.params.len()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in state.epoch..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, epoch as u64)));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut rec = EpochRecord {
            epoch,
            ..Default::default()
        };
        for (b, members) in batches.iter().enumerate() {
            let (r, grad) = batch_objective(wno, &state.params, physics, data, members, cfg.mode)?;
            if !r.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "total {} residual {} boundary {} initial {} data {}",
                        r.total, r.residual, r.boundary, r.initial, r.data
                    ),
                });
            }
            state.adam.step(&mut state.params, &grad);
            rec.add(&r, members.len() as f64 / data.len() as f64);
        }
        rec.epoch = epoch;
        if rec.total < state.best_loss {
            state.best_loss = rec.total;
            state.best_epoch = epoch;
            state.best_params.clone_from(&state.params);
        }
        log::info!("epoch {epoch}: loss {:.6e}", rec.total);
        state.history.push(rec);
        state.epoch = epoch + 1;
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Physics-informed training from inputs alone.
pub fn train_pio(
    wno: &Wno,
    params: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    aux: Vec<Vec<f64>>,
    spec: &PhysicsSpec,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    if cfg.mode != TrainMode::Physics {
        return Err(Error::Config("train_pio runs in physics mode".into()));
    }
    let physics = Physics::new(&cfg.physics_spec(spec), wno.grid(), wno.config().out_channels)?;
    let data = Dataset {
        inputs,
        aux,
        targets: None,
    };
    train(wno, Some(&physics), &data, cfg, TrainState::fresh(params, cfg), |_| Ok(()))
}

pub fn train_data_driven(
    wno: &Wno,
    params: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    if cfg.mode != TrainMode::Data {
        return Err(Error::Config("train_data_driven runs in data mode".into()));
    }
    let data = Dataset {
        inputs,
        aux: Vec::new(),
        targets: Some(targets),
    };
    train(wno, None, &data, cfg, TrainState::fresh(params, cfg), |_| Ok(()))
}

/// Physics loss of the operator's prediction for one input.
pub fn physics_loss(wno: &Wno, params: &[f64], physics: &Physics, input: &[f64], aux: &[f64]) -> Result<LossTerms> {
    physics.loss(&wno.forward(params, input)?, aux)
}

/// Physics loss and its gradient w.r.t. all parameters.
pub fn physics_loss_and_grad(
    wno: &Wno,
    params: &[f64],
    physics: &Physics,
    input: &[f64],
    aux: &[f64],
) -> Result<(LossTerms, Vec<f64>)> {
    let (out, cache) = wno.forward_cached(params, input)?;
    let (t, g_out) = physics.loss_and_grad(&out, aux)?;
    let mut grad = vec![0.0; wno.n_params()];
    wno.backward(params, &cache, &g_out, &mut grad)?;
    Ok((t, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Reverse-mode vs central-difference gradient of the physics loss at the
/// given parameter coordinates.
pub fn gradient_check(
    wno: &Wno,
    params: &[f64],
    physics: &Physics,
    input: &[f64],
    aux: &[f64],
    coords: &[usize],
    step: f64,
) -> Result<Vec<GradientCheck>> {
    let (_, grad) = physics_loss_and_grad(wno, params, physics, input, aux)?;
    let mut p = params.to_vec();
    coords
        .iter()
        .map(|&i| {
            if i >= p.len() {
                return Err(invalid(format!("coordinate {i} out of range")));
            }
            let orig = p[i];
            p[i] = orig + step;
            let lp = physics_loss(wno, &p, physics, input, aux)?.total;
            p[i] = orig - step;
            let lm = physics_loss(wno, &p, physics, input, aux)?.total;
            p[i] = orig;
            let fd = (lp - lm) / (2.0 * step);
            let scale = fd.abs().max(grad[i].abs());
            let relative_error = if scale == 0.0 { 0.0 } else { (fd - grad[i]).abs() / scale };
            Ok(GradientCheck {
                index: i,
                analytic: grad[i],
                finite_difference: fd,
                relative_error,
            })
        })
        .collect()
}

/// Operator, run configuration and optimizer state as one container.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub wno: WnoConfig,
    pub grid: Grid,
    pub train: TrainConfig,
    pub physics: Option<PhysicsSpec>,
    pub state: TrainState,
    /// free-form provenance (resolved experiment config, version)
    pub meta: serde_json::Value,
}

const HISTORY_COLUMNS: [&str; 6] = ["epoch", "total", "residual", "boundary", "initial", "data"];

impl Checkpoint {
    pub fn to_container(&self, model: &Wno) -> Result<ArrayFile> {
        let s = &self.state;
        let header = json!({
            "kind": "checkpoint",
            "wno": self.wno,
            "grid": self.grid,
            "train": self.train,
            "physics": self.physics,
            "epoch": s.epoch,
            "best_epoch": s.best_epoch,
            "best_loss": if s.best_loss.is_finite() { json!(s.best_loss) } else { json!(null) },
            "adam_t": s.adam.t,
            "history_columns": HISTORY_COLUMNS,
            "meta": self.meta,
        });
        let mut f = ArrayFile::new(header);
        for e in model.layout() {
            f.push_f64(&format!("param/{}", e.name), &e.shape, s.params[e.range()].to_vec())?;
        }
        let n = s.params.len();
        f.push_f64("best_params", &[n], s.best_params.clone())?;
        f.push_f64("adam/m", &[n], s.adam.m.clone())?;
        f.push_f64("adam/v", &[n], s.adam.v.clone())?;
        let hist: Vec<f64> = s
            .history
            .iter()
            .flat_map(|r| [r.epoch as f64, r.total, r.residual, r.boundary, r.initial, r.data])
            .collect();
        f.push_f64("history", &[s.history.len(), HISTORY_COLUMNS.len()], hist)?;
        Ok(f)
    }

    pub fn from_container(f: &ArrayFile) -> Result<(Self, Wno)> {
        let h = &f.header;
        if h.get("kind").and_then(|k| k.as_str()) != Some("checkpoint") {
            return Err(Error::Decode("container is not a checkpoint".into()));
        }
        let field = |k: &str| h.get(k).cloned().ok_or_else(|| Error::Decode(format!("checkpoint header lacks {k:?}")));
        let de = |k: &str| -> Result<serde_json::Value> { field(k) };
        let wno_cfg: WnoConfig = serde_json::from_value(de("wno")?).map_err(|e| Error::Decode(format!("wno: {e}")))?;
        let grid_raw: Grid = serde_json::from_value(de("grid")?).map_err(|e| Error::Decode(format!("grid: {e}")))?;
        // rebuild through the validating constructor
        let grid = Grid::new(grid_raw.bounds(), grid_raw.dims(), grid_raw.roles())?;
        let train: TrainConfig = serde_json::from_value(de("train")?).map_err(|e| Error::Decode(format!("train: {e}")))?;
        let physics: Option<PhysicsSpec> =
            serde_json::from_value(de("physics")?).map_err(|e| Error::Decode(format!("physics: {e}")))?;
        let as_usize = |k: &str| -> Result<usize> {
            de(k)?
                .as_u64()
                .and_then(|v| usize::try_from(v).ok())
                .ok_or_else(|| Error::Decode(format!("{k} is not an unsigned integer")))
        };
        let model = Wno::new(&wno_cfg, &grid)?;
        let mut params = vec![0.0; model.n_params()];
        for e in model.layout() {
            let (shp, v) = f.f64(&format!("param/{}", e.name))?;
            if shp != e.shape.as_slice() {
                return Err(Error::Decode(format!("parameter {} has shape {shp:?}, expected {:?}", e.name, e.shape)));
            }
            params[e.range()].copy_from_slice(v);
        }
        let n = params.len();
        let flat = |name: &str| -> Result<Vec<f64>> {
            let (shp, v) = f.f64(name)?;
            if shp != [n] {
                return Err(Error::Decode(format!("{name} has shape {shp:?}, expected [{n}]")));
            }
            Ok(v.to_vec())
        };
        let mut adam = Adam::new(n, train.learning_rate, train.weight_decay);
        adam.m = flat("adam/m")?;
        adam.v = flat("adam/v")?;
        adam.t = de("adam_t")?.as_u64().ok_or_else(|| Error::Decode("adam_t".into()))?;
        let (hs, hv) = f.f64("history")?;
        if hs.len() != 2 || hs[1] != HISTORY_COLUMNS.len() {
            return Err(Error::Decode(format!("history table has shape {hs:?}")));
        }
        let history = hv
            .chunks_exact(HISTORY_COLUMNS.len())
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                total: r[1],
                residual: r[2],
                boundary: r[3],
                initial: r[4],
                data: r[5],
            })
            .collect();
        let state = TrainState {
            params,
            adam,
            epoch: as_usize("epoch")?,
            best_params: flat("best_params")?,
            best_loss: de("best_loss")?.as_f64().unwrap_or(f64::INFINITY),
            best_epoch: as_usize("best_epoch")?,
            history,
        };
        Ok((
            Checkpoint {
                wno: wno_cfg,
                grid,
                train,
                physics,
                state,
                meta: h.get("meta").cloned().unwrap_or(serde_json::Value::Null),
            },
            model,
        ))
    }

    pub fn save(&self, model: &Wno, path: &std::path::Path) -> Result<()> {
        self.to_container(model)?.write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, Wno)> {
        Self::from_container(&ArrayFile::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residuals::PdeSystem;
    use crate::wavelet::WaveletFamily;
    use crate::wno::Activation;

    fn small() -> (Wno, Physics, Dataset) {
        let grid = Grid::space_time(9, 9).unwrap();
        let cfg = WnoConfig {
            width: 4,
            levels: 2,
            blocks: 2,
            wavelet: WaveletFamily::Db6,
            activation: Activation::Gelu,
            projection_width: 8,
            ..Default::default()
        };
        let wno = Wno::new(&cfg, &grid).unwrap();
        let physics = Physics::new(&PhysicsSpec::for_system(PdeSystem::DiffusionReaction), &grid, 1).unwrap();
        let mut data = Dataset::default();
        for s in 0..6 {
            let f: Vec<f64> = (0..9).map(|i| ((i + s) as f64 * 0.4).sin()).collect();
            data.inputs.push((0..81).map(|k| f[k / 9]).collect());
            data.aux.push(f);
        }
        (wno, physics, data)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (wno, physics, data) = small();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.0,
            ..Default::default()
        };
        let p0 = wno.init_params(3);
        let st = train(&wno, Some(&physics), &data, &cfg, TrainState::fresh(p0.clone(), &cfg), |_| Ok(())).unwrap();
        assert_eq!(st.params, p0);
        assert_eq!(st.history.len(), 1);
    }

    #[test]
    fn decay_contracts_geometrically_without_gradient() {
        let mut adam = Adam::new(3, 0.1, 0.01);
        let mut p = vec![1.0, -2.0, 0.5];
        let n0: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]);
        }
        let n1: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n1 / n0 - (1.0 - 0.1 * 0.01f64).powi(10)).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_is_deterministic_and_loss_falls() {
        let (wno, physics, data) = small();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 3,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let run = || train(&wno, Some(&physics), &data, &cfg, TrainState::fresh(wno.init_params(1), &cfg), |_| Ok(())).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().total < a.history[0].total);
        assert!(a.best_loss <= a.history.iter().map(|r| r.total).fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (wno, physics, data) = small();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            ..Default::default()
        };
        let p0 = wno.init_params(5);
        let full = train(&wno, Some(&physics), &data, &cfg, TrainState::fresh(p0.clone(), &cfg), |_| Ok(())).unwrap();
        let half_cfg = TrainConfig { epochs: 2, ..cfg.clone() };
        let half = train(&wno, Some(&physics), &data, &half_cfg, TrainState::fresh(p0, &cfg), |_| Ok(())).unwrap();
        // through the container to exercise the checkpoint path too
        let ck = Checkpoint {
            wno: wno.config().clone(),
            grid: wno.grid().clone(),
            train: cfg.clone(),
            physics: Some(physics.spec().clone()),
            state: half,
            meta: serde_json::Value::Null,
        };
        let bytes = ck.to_container(&wno).unwrap().encode().unwrap();
        let (back, model) = Checkpoint::from_container(&ArrayFile::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, ck);
        let rest = train(&model, Some(&physics), &data, &cfg, back.state, |_| Ok(())).unwrap();
        assert_eq!(rest.params, full.params);
        assert_eq!(rest.history, full.history);
    }

    #[test]
    fn data_mode_needs_targets() {
        let (wno, _, data) = small();
        let cfg = TrainConfig {
            mode: TrainMode::Data,
            epochs: 1,
            ..Default::default()
        };
        let r = train(&wno, None, &data, &cfg, TrainState::fresh(wno.init_params(0), &cfg), |_| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let (wno, physics, data) = small();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let mut p = wno.init_params(0);
        let b = wno.entry("proj.b2").unwrap().offset;
        p[b] = f64::NAN;
        let r = train(&wno, Some(&physics), &data, &cfg, TrainState::fresh(p, &cfg), |_| Ok(()));
        assert!(matches!(r, Err(Error::NonFiniteLoss { epoch: 0, batch: 0, .. })), "{r:?}");
    }

    #[test]
    fn relative_l2_gradient() {
        let t = [1.0, -2.0, 0.5];
        let p = [0.7, -1.0, 0.9];
        let (_, g) = relative_l2_grad(&p, &t);
        for i in 0..3 {
            let mut a = p;
            a[i] += 1e-6;
            let mut b = p;
            b[i] -= 1e-6;
            let fd = (relative_l2(&a, &t) - relative_l2(&b, &t)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
