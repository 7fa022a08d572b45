use std::f64::consts::PI;

use piwno::random_fields::{
    darcy_pushforward, draw_trig_params, sample_grf_rbf, sample_grf_spectral, sample_trig_source, GrfSpec, Pushforward,
};
use piwno::grid::Grid;
use piwno::solvers::*;

/// Max of the series solution of −Δu = 1 on the unit square (at the centre):
/// u = Σ_{m,n odd} 16 / (π⁴ m n (m² + n²)) sin(mπx) sin(nπy).
fn poisson_series_centre() -> f64 {
    let mut s = 0.0;
    for m in (1..400).step_by(2) {
        for n in (1..400).step_by(2) {
            // sin(kπ/2) = (−1)^((k−1)/2) for odd k
            let sm = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let sn = if (n / 2) % 2 == 0 { 1.0 } else { -1.0 };
            s += 16.0 / (PI.powi(4) * (m * n) as f64 * ((m * m + n * n) as f64)) * sm * sn;
        }
    }
    s
}

fn order(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn manufactured_1d(reaction: Reaction, diffusivity: f64, exact: impl Fn(f64, f64) -> f64 + Sync + Copy, forcing: impl Fn(f64, f64) -> f64 + Sync, nx: usize) -> f64 {
    let solver = ReactionDiffusion1d {
        nx,
        n_out: 5,
        t_end: 1.0,
        diffusivity,
        reaction,
        forcing: &forcing,
        amplitude: 2.0,
    };
    let u0: Vec<f64> = (0..nx).map(|i| exact(i as f64 / (nx - 1) as f64, 0.0)).collect();
    let u = solver.solve(&u0, &SolverConfig::with_substeps(1000)).unwrap();
    (0..nx)
        .map(|i| (u[i * 5 + 4] - exact(i as f64 / (nx - 1) as f64, 1.0)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn diffusion_reaction_polynomial_solution_reproduced() {
    let (b, k) = (0.01, 0.01);
    let exact = |x: f64, t: f64| t * x * (1.0 - x);
    let forcing = move |x: f64, t: f64| x * (1.0 - x) + 2.0 * b * t - k * (t * x * (1.0 - x)).powi(2);
    let err = manufactured_1d(Reaction::Quadratic { k }, b, exact, forcing, 41);
    assert!(err < 1e-8, "err {err}");
}

#[test]
fn diffusion_reaction_spatial_order() {
    let (b, k) = (0.01, 0.01);
    let exact = |x: f64, t: f64| t * (PI * x).sin();
    let forcing = move |x: f64, t: f64| {
        let s = (PI * x).sin();
        s + b * PI * PI * t * s - k * (t * s).powi(2)
    };
    let errs: Vec<f64> = [11, 21, 41].iter().map(|&n| manufactured_1d(Reaction::Quadratic { k }, b, exact, forcing, n)).collect();
    for p in order(&errs) {
        assert!(p >= 1.9, "orders {:?} errors {errs:?}", order(&errs));
    }
}

#[test]
fn nagumo_spatial_order() {
    let alpha = -0.5;
    let r = Reaction::Nagumo { alpha };
    let exact = |x: f64, t: f64| t * (PI * x).sin();
    let forcing = move |x: f64, t: f64| {
        let s = (PI * x).sin();
        s + PI * PI * t * s - r.eval(t * s)
    };
    let errs: Vec<f64> = [11, 21, 41].iter().map(|&n| manufactured_1d(r, 1.0, exact, forcing, n)).collect();
    for p in order(&errs) {
        assert!(p >= 1.9, "orders {:?} errors {errs:?}", order(&errs));
    }
}

#[test]
fn darcy_spatial_order() {
    let a_fn = |x: f64, y: f64| 1.0 + x * x + 0.5 * y;
    let mut errs = Vec::new();
    for n in [17, 33, 65] {
        let g = Grid::unit_square(n).unwrap();
        let pts = g.node_coords();
        let a: Vec<f64> = pts.iter().map(|p| a_fn(p[0], p[1])).collect();
        // −∇·(a∇u) for u = sin(πx) sin(πy); axis 0 = x, axis 1 = y
        let f: Vec<f64> = pts
            .iter()
            .map(|p| {
                let (x, y) = (p[0], p[1]);
                let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
                let lap = -2.0 * PI * PI * sx * sy;
                -(a_fn(x, y) * lap + 2.0 * x * PI * cx * sy + 0.5 * PI * sx * cy)
            })
            .collect();
        let op = DarcyOperator::new(&a, n).unwrap();
        let (u, res) = op.solve(&f, &SolverConfig::default()).unwrap();
        assert!(res < 1e-10);
        let e = u
            .iter()
            .zip(&pts)
            .map(|(v, p)| (v - (PI * p[0]).sin() * (PI * p[1]).sin()).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    for p in order(&errs) {
        assert!(p >= 1.9, "orders {:?} errors {errs:?}", order(&errs));
    }
}

#[test]
fn darcy_unit_permeability_matches_series() {
    let oracle = poisson_series_centre();
    assert!((oracle - 0.073671).abs() < 2e-6, "oracle {oracle}");
    let u = solve_darcy(&vec![1.0; 64 * 64], 1.0, 64, &SolverConfig::default()).unwrap();
    let max = u.values.iter().cloned().fold(f64::MIN, f64::max);
    assert!((max - oracle).abs() < 1e-3, "max {max}");
    assert!(u.values.iter().all(|&v| v >= 0.0));
}

#[test]
fn darcy_scaling_and_max_principle_on_binary_permeability() {
    let g = Grid::unit_square(64).unwrap();
    let raw = sample_grf_spectral(&GrfSpec::darcy(), &g, 7).unwrap();
    let a = darcy_pushforward(&raw, Pushforward::default());
    let cfg = SolverConfig::default();
    let u1 = solve_darcy(&a.values, 1.0, 64, &cfg).unwrap();
    let a2: Vec<f64> = a.values.iter().map(|v| 2.0 * v).collect();
    let u2 = solve_darcy(&a2, 1.0, 64, &cfg).unwrap();
    assert!(u1.values.iter().all(|&v| v >= -1e-14));
    for (p, q) in u1.values.iter().zip(&u2.values) {
        assert!((p - 2.0 * q).abs() < 1e-9 * p.abs().max(1e-3));
    }
}

#[test]
fn diffusion_reaction_step_calibration() {
    // halving the internal step moves the output by < 1e-6
    let [n, p, w] = draw_trig_params(3);
    let f = sample_trig_source(n, p, w, &Grid::unit_1d(81).unwrap()).unwrap();
    let a = solve_diffusion_reaction(&f.values, 0.01, 0.01, &SolverConfig::default()).unwrap();
    let b = solve_diffusion_reaction(&f.values, 0.01, 0.01, &SolverConfig::with_substeps(2 * SolverConfig::default().substeps)).unwrap();
    let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d < 1e-6, "sup change {d}");
}

#[test]
fn nagumo_stays_bounded_on_random_initial_conditions() {
    let g = Grid::unit_1d(65).unwrap();
    let spec = GrfSpec::nagumo();
    let cfg = SolverConfig::with_substeps(20);
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let u0 = sample_grf_rbf(&spec, &g, seed).unwrap();
        let u = solve_nagumo(&u0.values, 1.0, -0.5, &cfg).unwrap();
        worst = worst.max(u.values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    assert!(worst <= 1.5, "max |u| {worst}");
}

#[test]
fn allen_cahn_energy_decreases_and_max_principle() {
    let g = Grid::periodic_unit_square(64).unwrap();
    let u0 = sample_grf_spectral(&GrfSpec::allen_cahn(), &g, 11).unwrap();
    let bound = u0.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let frames = solve_allen_cahn(&u0.values, 64, 1e-3, 0.05, ALLEN_CAHN_FRAMES, &SolverConfig::with_substeps(10)).unwrap();
    assert_eq!(frames.len(), 23);
    let energies: Vec<f64> = frames.iter().map(|f| ginzburg_landau_energy(f, 64, 1e-3)).collect();
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "energy rose: {energies:?}");
    }
    for f in &frames {
        assert!(f.iter().all(|v| v.abs() <= bound + 1e-6));
    }
}
