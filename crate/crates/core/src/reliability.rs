//! Limit states, first-passage times, Monte Carlo failure probability,
//! reliability index, kernel density estimates and threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF. Rational approximation (relative error
/// ~1e−9) polished by one Halley step against `erfc`. Returns ±∞ at the
/// endpoints and NaN outside [0, 1].
pub fn std_normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        let q = (-2.0 * q.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement; the residual is taken on the smaller tail for accuracy
    let e = if x < 0.0 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_cdf(-x)
    };
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    x
}

/// β = Φ⁻¹(1 − P_f); ±∞ sentinels at P_f ∈ {0, 1}.
pub fn reliability_index(pf: f64) -> f64 {
    if pf <= 0.0 {
        log::warn!("P_f = 0: reliability index reported as +inf");
        return f64::INFINITY;
    }
    if pf >= 1.0 {
        log::warn!("P_f = 1: reliability index reported as -inf");
        return f64::NEG_INFINITY;
    }
    -std_normal_quantile(pf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Probe {
    /// one spatial node (flat index into the spatial grid)
    Point(usize),
    /// the maximum over all spatial nodes
    FieldMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    TimeIndependent,
    FirstPassage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitState {
    /// threshold e_h
    pub threshold: f64,
    pub probe: Probe,
    /// inclusive time-index window [t₁, t₂]
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    pub mode: LimitMode,
}

impl LimitState {
    pub fn validate(&self, n_space: usize, n_time: usize) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(invalid("limit-state threshold must be finite"));
        }
        if let Probe::Point(i) = self.probe {
            if i >= n_space {
                return Err(invalid(format!("probe index {i} out of range for {n_space} nodes")));
            }
        }
        if let Some((a, b)) = self.window {
            if a >= b || b >= n_time {
                return Err(invalid(format!("time window ({a}, {b}) invalid for {n_time} frames")));
            }
        }
        Ok(())
    }

    fn time_range(&self, n_time: usize) -> std::ops::RangeInclusive<usize> {
        match self.window {
            Some((a, b)) => a..=b,
            None => 0..=n_time - 1,
        }
    }
}

/// Read-only view of a response u(s, t): `n_space` nodes × `n_time` frames.
#[derive(Clone, Copy, Debug)]
pub struct Response<'a> {
    values: &'a [f64],
    n_space: usize,
    n_time: usize,
    time_major: bool,
}

impl<'a> Response<'a> {
    /// Layout [space][time] (space–time grids with axis 0 = x).
    pub fn space_major(values: &'a [f64], n_space: usize, n_time: usize) -> Result<Self> {
        Self::new(values, n_space, n_time, false)
    }

    /// Layout [time][space] (frame sequences).
    pub fn time_major(values: &'a [f64], n_space: usize, n_time: usize) -> Result<Self> {
        Self::new(values, n_space, n_time, true)
    }

    /// A single stationary field.
    pub fn stationary(values: &'a [f64]) -> Result<Self> {
        Self::new(values, values.len(), 1, false)
    }

    fn new(values: &'a [f64], n_space: usize, n_time: usize, time_major: bool) -> Result<Self> {
        if n_space == 0 || n_time == 0 || values.len() != n_space * n_time {
            return Err(crate::error::shape((n_space, n_time), values.len()));
        }
        Ok(Response {
            values,
            n_space,
            n_time,
            time_major,
        })
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        if self.time_major {
            self.values[t * self.n_space + s]
        } else {
            self.values[s * self.n_time + t]
        }
    }

    /// |u| at the probe for each time frame (field max for `FieldMax`).
    pub fn probe_trajectory(&self, probe: Probe) -> Vec<f64> {
        (0..self.n_time)
            .map(|t| match probe {
                Probe::Point(s) => self.get(s, t).abs(),
                Probe::FieldMax => (0..self.n_space).map(|s| self.get(s, t).abs()).fold(0.0, f64::max),
            })
            .collect()
    }
}

/// Peak |u| over the probe set and time window.
pub fn peak_response(u: &Response, ls: &LimitState) -> Result<f64> {
    ls.validate(u.n_space(), u.n_time())?;
    let traj = u.probe_trajectory(ls.probe);
    Ok(ls.time_range(u.n_time()).map(|t| traj[t]).fold(0.0, f64::max))
}

/// Margin J = e_h − max |u|; failure iff J < 0.
pub fn evaluate_limit_state(u: &Response, ls: &LimitState) -> Result<f64> {
    Ok(ls.threshold - peak_response(u, ls)?)
}

/// First time |u| strictly exceeds `threshold`, linearly interpolated
/// between the last non-exceeding frame and the first exceeding one.
pub fn first_passage_time(trajectory: &[f64], times: &[f64], threshold: f64) -> Result<Option<f64>> {
    if trajectory.is_empty() || trajectory.len() != times.len() {
        return Err(invalid("trajectory must be non-empty and match its time stamps"));
    }
    let Some(k) = trajectory.iter().position(|v| v.abs() > threshold) else {
        return Ok(None);
    };
    if k == 0 {
        return Ok(Some(times[0]));
    }
    let (a, b) = (trajectory[k - 1].abs(), trajectory[k].abs());
    let frac = ((threshold - a) / (b - a)).clamp(0.0, 1.0);
    Ok(Some(times[k - 1] + frac * (times[k] - times[k - 1])))
}

/// First-passage time of a response within the limit-state window.
pub fn response_passage_time(u: &Response, ls: &LimitState, times: &[f64]) -> Result<Option<f64>> {
    ls.validate(u.n_space(), u.n_time())?;
    if times.len() != u.n_time() {
        return Err(crate::error::shape(u.n_time(), times.len()));
    }
    let traj = u.probe_trajectory(ls.probe);
    let r = ls.time_range(u.n_time());
    let (a, b) = (*r.start(), *r.end());
    first_passage_time(&traj[a..=b], &times[a..=b], ls.threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub bandwidth: f64,
    /// all samples identical: `x` holds the single atom, `y = [1]`
    pub point_mass: bool,
}

pub const KDE_POINTS: usize = 512;

/// Silverman's rule-of-thumb bandwidth 0.9 · min(σ, IQR/1.34) · n^(−1/5).
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < s.len() {
            s[i] * (1.0 - f) + s[i + 1] * f
        } else {
            s[i]
        }
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate on 512 points over [min − 3b, max + 3b].
pub fn pdf_estimate(samples: &[f64]) -> Result<Density> {
    if samples.len() < 10 {
        return Err(invalid(format!("density estimate needs at least 10 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(invalid("density samples must be finite"));
    }
    let (lo, hi) = samples.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let b = silverman_bandwidth(samples);
    if hi == lo || !(b > 0.0) {
        log::warn!("all {} density samples equal {lo}: returning a point mass", samples.len());
        return Ok(Density {
            x: vec![lo],
            y: vec![1.0],
            bandwidth: 0.0,
            point_mass: true,
        });
    }
    let (a, z) = (lo - 3.0 * b, hi + 3.0 * b);
    let step = (z - a) / (KDE_POINTS - 1) as f64;
    let x: Vec<f64> = (0..KDE_POINTS).map(|i| a + i as f64 * step).collect();
    let norm = 1.0 / (samples.len() as f64 * b);
    let y = x
        .iter()
        .map(|&xi| norm * samples.iter().map(|&s| std_normal_pdf((xi - s) / b)).sum::<f64>())
        .collect();
    Ok(Density {
        x,
        y,
        bandwidth: b,
        point_mass: false,
    })
}

/// Trapezoid integral of a density curve (1 for a point mass).
pub fn density_mass(d: &Density) -> f64 {
    if d.point_mass {
        return d.y.iter().sum();
    }
    d.x.windows(2).zip(d.y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub pf: f64,
    pub beta: f64,
    pub n_samples: usize,
    pub failures: usize,
    pub stderr: f64,
    /// failure times (first passage) or peak responses
    pub samples: Vec<f64>,
    pub density: Option<Density>,
}

/// Counting estimator with binomial standard error.
pub fn estimate_pf(failed: &[bool]) -> Result<ReliabilityReport> {
    if failed.is_empty() {
        return Err(invalid("need at least one sample"));
    }
    let n = failed.len();
    let k = failed.iter().filter(|&&f| f).count();
    let pf = k as f64 / n as f64;
    Ok(ReliabilityReport {
        pf,
        beta: reliability_index(pf),
        n_samples: n,
        failures: k,
        stderr: (pf * (1.0 - pf) / n as f64).sqrt(),
        samples: Vec::new(),
        density: None,
    })
}

/// Report from peak responses: failure iff peak > e_h. The peaks are kept
/// as samples and their density attached when there are enough of them.
pub fn estimate_pf_from_peaks(peaks: &[f64], threshold: f64) -> Result<ReliabilityReport> {
    let failed: Vec<bool> = peaks.iter().map(|&p| threshold - p < 0.0).collect();
    let mut rep = estimate_pf(&failed)?;
    rep.samples = peaks.to_vec();
    rep.density = if peaks.len() >= 10 { Some(pdf_estimate(peaks)?) } else { None };
    Ok(rep)
}

/// Report from first-passage times (None = never crossed).
pub fn estimate_pf_from_passages(times: &[Option<f64>]) -> Result<ReliabilityReport> {
    let failed: Vec<bool> = times.iter().map(Option::is_some).collect();
    let mut rep = estimate_pf(&failed)?;
    rep.samples = times.iter().flatten().copied().collect();
    rep.density = if rep.samples.len() >= 10 { Some(pdf_estimate(&rep.samples)?) } else { None };
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub pf: f64,
    pub beta: f64,
    pub stderr: f64,
}

/// P_f and β for each threshold, all from one set of peak responses.
pub fn threshold_sweep(peaks: &[f64], thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if peaks.is_empty() {
        return Err(invalid("need at least one response"));
    }
    let mut sorted = peaks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&e| {
            // failures = #{peak > e}
            let k = sorted.len() - sorted.partition_point(|&p| p <= e);
            let pf = k as f64 / n;
            SweepRow {
                threshold: e,
                pf,
                beta: reliability_index(pf),
                stderr: (pf * (1.0 - pf) / n).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_roundtrip_across_range() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((std_normal_cdf(std_normal_quantile(p)) - p).abs() < 1e-12);
        }
        for p in [1e-12, 1e-8, 1e-5, 1.0 - 1e-9] {
            let x = std_normal_quantile(p);
            assert!((std_normal_cdf(x) - p).abs() < 1e-9 * p.min(1.0 - p).max(1e-300) + 1e-16);
        }
    }

    #[test]
    fn known_quantiles() {
        assert_eq!(std_normal_quantile(0.5), 0.0);
        assert!((std_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!(std_normal_quantile(0.0).is_infinite());
        assert!(std_normal_quantile(1.5).is_nan());
    }

    #[test]
    fn beta_sentinels() {
        assert_eq!(reliability_index(0.0), f64::INFINITY);
        assert_eq!(reliability_index(1.0), f64::NEG_INFINITY);
        assert_eq!(reliability_index(0.5), 0.0);
    }

    #[test]
    fn limit_state_margin() {
        let u = [0.1, 0.9, -0.3, 0.2];
        let r = Response::space_major(&u, 2, 2).unwrap();
        let ls = LimitState {
            threshold: 0.85,
            probe: Probe::Point(0),
            window: None,
            mode: LimitMode::TimeIndependent,
        };
        assert!((evaluate_limit_state(&r, &ls).unwrap() + 0.05).abs() < 1e-15);
        let bad = LimitState {
            probe: Probe::Point(2),
            ..ls.clone()
        };
        assert!(evaluate_limit_state(&r, &bad).is_err());
    }

    #[test]
    fn passage_rules() {
        let times: Vec<f64> = (0..11).map(|t| t as f64).collect();
        let u: Vec<f64> = times.iter().map(|t| 0.1 * t).collect();
        assert!((first_passage_time(&u, &times, 0.5).unwrap().unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(first_passage_time(&u, &times, 2.0).unwrap(), None);
        assert!(first_passage_time(&[], &[], 1.0).is_err());
        let u = [0.0, 0.2, 0.8];
        assert!((first_passage_time(&u, &[0.0, 1.0, 2.0], 0.5).unwrap().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn counting_estimator() {
        let mut f = vec![false; 1000];
        f.iter_mut().take(88).for_each(|v| *v = true);
        let r = estimate_pf(&f).unwrap();
        assert_eq!(r.pf, 0.088);
        assert!((r.stderr - 0.00896).abs() < 1e-5);
        let r = estimate_pf(&[false; 10]).unwrap();
        assert_eq!(r.beta, f64::INFINITY);
    }

    #[test]
    fn sweep_edges() {
        let peaks = [0.2, 0.5, 0.9];
        let s = threshold_sweep(&peaks, &[0.1, 0.5, 1.0]).unwrap();
        assert_eq!(s[0].pf, 1.0);
        assert!((s[1].pf - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[2].pf, 0.0);
    }

    #[test]
    fn point_mass_density() {
        let d = pdf_estimate(&[2.0; 20]).unwrap();
        assert!(d.point_mass);
        assert_eq!(density_mass(&d), 1.0);
        assert!(pdf_estimate(&[1.0; 5]).is_err());
    }
}
