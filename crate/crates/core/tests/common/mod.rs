#![allow(dead_code)]

use smalldomain::panel::{aggregate, CellCounts};
use smalldomain::simulate::{generate, preset, ScenarioSpec};
use smalldomain::{Direction, DomainGrid, TransitionRecord};

/// Exit transitions of a simulated preset panel.
pub fn exit_records(spec: &ScenarioSpec) -> (Vec<TransitionRecord>, CellCounts) {
    let sim = generate(spec).unwrap();
    let recs = sim.panel.extract_transitions(Direction::Exit, &spec.grid);
    let counts = aggregate(&recs, &spec.grid);
    (recs, counts)
}

pub fn preset_exit(name: &str, seed: u64) -> (Vec<TransitionRecord>, CellCounts) {
    exit_records(&preset(name, seed).unwrap())
}

pub fn small_grid() -> DomainGrid {
    DomainGrid::new(30, 39, 2001, 2010).unwrap()
}

/// Exact posterior of a binomial proportion under a flat prior on the logit,
/// by trapezoid quadrature on the logit scale.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn binomial_quadrature(k: u64, n: u64) -> Quadrature {
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let mode = (p / (1.0 - p)).ln();
    let sd = 1.0 / (n * p * (1.0 - p)).sqrt();
    let m = 40_000;
    let (lo, hi) = (mode - 15.0 * sd, mode + 15.0 * sd);
    let h = (hi - lo) / m as f64;
    let log_post = |e: f64| k * e - n * (e.exp().ln_1p());
    let peak = log_post(mode);
    let etas: Vec<f64> = (0..=m).map(|i| lo + h * i as f64).collect();
    let dens: Vec<f64> = etas.iter().map(|&e| (log_post(e) - peak).exp()).collect();
    let mut cdf = vec![0.0; m + 1];
    for i in 1..=m {
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
    }
    let z = cdf[m];
    let sig = |e: f64| 1.0 / (1.0 + (-e).exp());
    let mut mean = 0.0;
    for i in 1..=m {
        mean += 0.5 * h * (dens[i] * sig(etas[i]) + dens[i - 1] * sig(etas[i - 1]));
    }
    let quantile = |q: f64| {
        let target = q * z;
        let i = cdf.partition_point(|&c| c < target).clamp(1, m);
        let t = (target - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
        sig(etas[i - 1] + t * h)
    };
    Quadrature { mean: mean / z, q025: quantile(0.025), q975: quantile(0.975) }
}
