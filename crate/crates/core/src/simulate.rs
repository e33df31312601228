//! Synthetic panels generated from known transition and MH surfaces.

use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::panel::{Panel, PersonYear};
use crate::rng::stream_rng;
use crate::scalar::{logit, sigmoid};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Scalar field over the grid. Polynomials are in standardized coordinates
/// `za, zt ∈ [−1, 1]` spanning the grid; points outside the grid are clamped
/// to its edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    Constant(f64),
    /// `c + a·za + t·zt + aa·za² + tt·zt² + at·za·zt`.
    Polynomial { c: f64, a: f64, t: f64, aa: f64, tt: f64, at: f64 },
    /// Explicit values in grid order.
    Cells(Vec<f64>),
}

impl Surface {
    pub fn linear(c: f64, a: f64, t: f64) -> Self {
        Surface::Polynomial { c, a, t, aa: 0.0, tt: 0.0, at: 0.0 }
    }

    pub fn at(&self, grid: &DomainGrid, age: i32, year: i32) -> f64 {
        let age = age.clamp(grid.age_min, grid.age_max);
        let year = year.clamp(grid.year_min, grid.year_max);
        match self {
            Surface::Constant(v) => *v,
            Surface::Polynomial { c, a, t, aa, tt, at } => {
                let z = |x: i32, lo: i32, hi: i32| if hi == lo { 0.0 } else { (2 * x - lo - hi) as f64 / (hi - lo) as f64 };
                let za = z(age, grid.age_min, grid.age_max);
                let zt = z(year, grid.year_min, grid.year_max);
                c + a * za + t * zt + aa * za * za + tt * zt * zt + at * za * zt
            }
            Surface::Cells(v) => v[grid.index_of(age, year).expect("clamped into grid")],
        }
    }

    pub fn values(&self, grid: &DomainGrid) -> Vec<f64> {
        grid.cells().iter().map(|c| self.at(grid, c.age, c.year)).collect()
    }

    pub fn grid_mean(&self, grid: &DomainGrid) -> f64 {
        self.values(grid).iter().sum::<f64>() / grid.len() as f64
    }

    /// Shifts the constant so the grid mean equals `target`.
    pub fn centered(self, grid: &DomainGrid, target: f64) -> Self {
        let shift = target - self.grid_mean(grid);
        match self {
            Surface::Constant(_) => Surface::Constant(target),
            Surface::Polynomial { c, a, t, aa, tt, at } => Surface::Polynomial { c: c + shift, a, t, aa, tt, at },
            Surface::Cells(v) => Surface::Cells(v.into_iter().map(|x| x + shift).collect()),
        }
    }

    fn check_len(&self, grid: &DomainGrid) -> Result<()> {
        match self {
            Surface::Cells(v) if v.len() != grid.len() => {
                Err(Error::InvalidSpec(format!("surface has {} values for {} grid cells", v.len(), grid.len())))
            }
            _ => Ok(()),
        }
    }
}

/// Ground truth of the MH difference process:
/// `ΔY ~ N(α + β₁ y_prev + s₁(a, t) + β₂ M s₂(a, t), σ(y_prev))`, with
/// `log σ(y) = log_sigma_75 + log_sigma_slope · (y − 75)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhTruth {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Mean zero over the grid.
    pub s1: Surface,
    /// Mean one over the grid.
    pub s2: Surface,
    pub log_sigma_75: f64,
    pub log_sigma_slope: f64,
}

impl MhTruth {
    pub fn sigma(&self, y_prev: f64) -> f64 {
        (self.log_sigma_75 + self.log_sigma_slope * (y_prev - 75.0)).exp()
    }

    /// Planted exposure effect `β₂ s₂(a, t)`.
    pub fn effect(&self, grid: &DomainGrid, age: i32, year: i32) -> f64 {
        self.beta2 * self.s2.at(grid, age, year)
    }

    pub fn mean_change(&self, grid: &DomainGrid, age: i32, year: i32, y_prev: f64, exposed: bool) -> f64 {
        let e = if exposed { self.effect(grid, age, year) } else { 0.0 };
        self.alpha + self.beta1 * y_prev + self.s1.at(grid, age, year) + e
    }
}

impl Default for MhTruth {
    fn default() -> Self {
        Self {
            alpha: 24.75,
            beta1: -0.33,
            beta2: -2.39,
            s1: Surface::Constant(0.0),
            s2: Surface::Constant(1.0),
            log_sigma_75: 8.0f64.ln(),
            log_sigma_slope: -0.012,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub grid: DomainGrid,
    pub n_baseline: usize,
    pub n_topup: usize,
    pub topup_year: i32,
    /// Annual dropout hazard.
    pub dropout: f64,
    /// Dropout hazard while in HAS; `None` keeps dropout non-informative.
    /// Untested territory: no estimator here corrects for it.
    pub dropout_exposed: Option<f64>,
    /// Logit of the entry probability.
    pub entry_logit: Surface,
    /// Logit of the exit probability.
    pub exit_logit: Surface,
    pub mh: MhTruth,
    pub initial_has: f64,
    /// Initial MH is `100 − Gamma(shape, scale)`, clipped to `[0, 100]`.
    pub initial_mh_shape: f64,
    pub initial_mh_scale: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_grid(mut self, grid: DomainGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_sizes(mut self, n_baseline: usize, n_topup: usize) -> Self {
        self.n_baseline = n_baseline;
        self.n_topup = n_topup;
        self
    }

    pub fn p_entry(&self, age: i32, year: i32) -> f64 {
        sigmoid(self.entry_logit.at(&self.grid, age, year))
    }

    pub fn p_exit(&self, age: i32, year: i32) -> f64 {
        sigmoid(self.exit_logit.at(&self.grid, age, year))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        for s in [&self.entry_logit, &self.exit_logit, &self.mh.s1, &self.mh.s2] {
            s.check_len(g)?;
        }
        let prob = |p: f64, what: &str| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} = {p} must lie in (0, 1)")))
            }
        };
        prob(1.0 - self.dropout, "1 - dropout")?;
        if let Some(d) = self.dropout_exposed {
            prob(1.0 - d, "1 - exposed dropout")?;
        }
        prob(self.initial_has, "initial HAS prevalence")?;
        for c in g.cells() {
            let (pe, px) = (self.p_entry(c.age, c.year), self.p_exit(c.age, c.year));
            if !(pe > 0.0 && pe < 1.0 && px >= 0.0 && px < 1.0) {
                return Err(Error::InvalidSpec(format!("transition probabilities at ({}, {}) out of range", c.age, c.year)));
            }
        }
        if (self.mh.s1.grid_mean(g)).abs() > 1e-9 {
            return Err(Error::InvalidSpec("s1 must have mean zero over the grid".into()));
        }
        if (self.mh.s2.grid_mean(g) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec("s2 must have mean one over the grid".into()));
        }
        if !(self.mh.sigma(0.0).is_finite() && self.mh.sigma(100.0) > 0.0) {
            return Err(Error::InvalidSpec("sigma(y_prev) must be positive".into()));
        }
        if self.initial_mh_shape <= 0.0 || self.initial_mh_scale <= 0.0 {
            return Err(Error::InvalidSpec("initial MH gamma parameters must be positive".into()));
        }
        if self.topup_year < g.year_min || self.topup_year > g.year_max {
            return Err(Error::InvalidSpec(format!("top-up year {} outside the grid years", self.topup_year)));
        }
        Ok(())
    }
}

pub const PRESETS: [&str; 4] = ["homogeneous", "white_noise", "smooth_gradient", "has_effect_modified"];

fn base_spec(name: &str, seed: u64) -> ScenarioSpec {
    let p_entry = 0.03;
    let p_exit = 0.46;
    ScenarioSpec {
        name: name.into(),
        grid: DomainGrid::hilda(),
        n_baseline: 19914,
        n_topup: 5451,
        topup_year: 2012,
        dropout: 0.05,
        dropout_exposed: None,
        entry_logit: Surface::linear(logit(p_entry), 0.0, 0.0),
        exit_logit: Surface::Constant(logit(p_exit)),
        mh: MhTruth::default(),
        initial_has: p_entry / (p_entry + p_exit),
        initial_mh_shape: 2.0,
        initial_mh_scale: 12.5,
        seed,
    }
}

/// Named scenarios on the default grid.
///
/// * `homogeneous`: exit probability 0.46 everywhere.
/// * `white_noise`: exit logits `logit(0.46) + N(0, 0.3²)` per cell, drawn from `seed`.
/// * `smooth_gradient`: exit probability declining in age and calendar time.
/// * `has_effect_modified`: exposure effect ranging over `[−3.8, −1.1]` and a
///   structured unexposed surface.
pub fn preset(name: &str, seed: u64) -> Result<ScenarioSpec> {
    let mut s = base_spec(name, seed);
    let grid = s.grid;
    let pi_o = logit(0.46);
    match name {
        "homogeneous" => {}
        "white_noise" => {
            let mut rng = stream_rng(seed, u64::MAX);
            let noise = Normal::new(0.0, 0.3).expect("valid normal");
            s.exit_logit = Surface::Cells((0..grid.len()).map(|_| pi_o + noise.sample(&mut rng)).collect());
        }
        "smooth_gradient" => {
            s.exit_logit = Surface::Polynomial { c: pi_o, a: -0.45, t: -0.25, aa: 0.2, tt: 0.0, at: 0.0 }.centered(&grid, pi_o);
            s.entry_logit = Surface::linear(logit(0.03), -0.2, 0.1);
        }
        "has_effect_modified" => {
            let (pe, px) = (0.08, 0.3);
            s.entry_logit = Surface::linear(logit(pe), 0.0, 0.0);
            s.exit_logit = Surface::linear(logit(px), -0.3, 0.0);
            s.initial_has = pe / (pe + px);
            let beta2 = -2.45;
            // effect = β₂ s₂ = −2.45 − 1.35 (0.7 za − 0.3 zt), spanning [−3.8, −1.1]
            let k = -1.35 / beta2;
            s.mh.beta2 = beta2;
            s.mh.s2 = Surface::linear(1.0, 0.7 * k, -0.3 * k).centered(&grid, 1.0);
            s.mh.s1 = Surface::Polynomial { c: 0.0, a: 0.5, t: -0.8, aa: 0.0, tt: 0.4, at: 0.0 }.centered(&grid, 0.0);
        }
        _ => return Err(Error::InvalidSpec(format!("unknown preset {name:?}; expected one of {}", PRESETS.join(", ")))),
    }
    Ok(s)
}

/// Planted surfaces in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub grid: DomainGrid,
    pub p_entry: Vec<f64>,
    pub p_exit: Vec<f64>,
    pub effect: Vec<f64>,
    pub s1: Vec<f64>,
}

impl Truth {
    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        let g = spec.grid;
        let cells = g.cells();
        Self {
            grid: g,
            p_entry: cells.iter().map(|c| spec.p_entry(c.age, c.year)).collect(),
            p_exit: cells.iter().map(|c| spec.p_exit(c.age, c.year)).collect(),
            effect: cells.iter().map(|c| spec.mh.effect(&g, c.age, c.year)).collect(),
            s1: spec.mh.s1.values(&g),
        }
    }

    pub fn average_effect(&self) -> f64 {
        self.effect.iter().sum::<f64>() / self.effect.len() as f64
    }

    /// `age,year,p_entry,p_exit`.
    pub fn write_transitions_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["age", "year", "p_entry", "p_exit"])?;
        for (i, c) in self.grid.cells().iter().enumerate() {
            w.write_record([c.age.to_string(), c.year.to_string(), self.p_entry[i].to_string(), self.p_exit[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `age,year,effect,s1`.
    pub fn write_effects_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["age", "year", "effect", "s1"])?;
        for (i, c) in self.grid.cells().iter().enumerate() {
            w.write_record([c.age.to_string(), c.year.to_string(), self.effect[i].to_string(), self.s1[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub panel: Panel,
    pub truth: Truth,
}

struct Person<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    gamma: Gamma<f64>,
}

impl Person<'_> {
    fn initial_mh(&mut self) -> f64 {
        (100.0 - self.gamma.sample(&mut self.rng)).clamp(0.0, 100.0)
    }

    fn transition(&mut self, age: i32, year: i32, has: bool) -> bool {
        let u: f64 = self.rng.random();
        if has {
            u >= self.spec.p_exit(age, year)
        } else {
            u < self.spec.p_entry(age, year)
        }
    }

    fn mh_step(&mut self, age: i32, year: i32, y_prev: f64, exposed: bool) -> f64 {
        let m = &self.spec.mh;
        let z: f64 = self.rng.sample(rand_distr::StandardNormal);
        let dy = m.mean_change(&self.spec.grid, age, year, y_prev, exposed) + m.sigma(y_prev) * z;
        (y_prev + dy).clamp(0.0, 100.0)
    }
}

fn record(id: &str, year: i32, age: i32, has: bool, mh: f64) -> PersonYear {
    PersonYear { person_id: id.to_string(), year, age, income: None, housing_cost: None, has: Some(has), mh: Some(mh) }
}

/// Simulates one panel member. Records are kept from age `age_min − 1`
/// (so age-`age_min` cells receive transitions) up to `age_max`.
fn simulate_person(spec: &ScenarioSpec, index: usize, gamma: Gamma<f64>) -> Vec<PersonYear> {
    let g = spec.grid;
    let mut p = Person { spec, rng: stream_rng(spec.seed, index as u64 + 1), gamma };
    let start = if index < spec.n_baseline { g.year_min } else { spec.topup_year };
    let mut age = p.rng.random_range(g.age_min - 11..=g.age_max);
    let mut has = p.rng.random::<f64>() < spec.initial_has;
    let mut mh = p.initial_mh();
    let id = format!("p{index:06}");
    let mut out = Vec::new();
    if age >= g.age_min - 1 {
        out.push(record(&id, start, age, has, mh));
    }
    for year in start + 1..=g.year_max {
        let hazard = if has { spec.dropout_exposed.unwrap_or(spec.dropout) } else { spec.dropout };
        if p.rng.random::<f64>() < hazard {
            break;
        }
        age += 1;
        if age > g.age_max {
            break;
        }
        let next_mh = p.mh_step(age, year, mh, has);
        has = p.transition(age, year, has);
        mh = next_mh;
        if age >= g.age_min - 1 {
            out.push(record(&id, year, age, has, mh));
        }
    }
    out
}

fn gamma_of(spec: &ScenarioSpec) -> Result<Gamma<f64>> {
    Gamma::new(spec.initial_mh_shape, spec.initial_mh_scale).map_err(|e| Error::InvalidSpec(format!("initial MH distribution: {e}")))
}

/// Simulates the panel. Each person draws from their own stream of the
/// master seed, so output is identical regardless of thread count.
pub fn generate(spec: &ScenarioSpec) -> Result<Simulated> {
    spec.validate()?;
    let gamma = gamma_of(spec)?;
    let people: Vec<Vec<PersonYear>> =
        (0..spec.n_baseline + spec.n_topup).into_par_iter().map(|i| simulate_person(spec, i, gamma)).collect();
    Ok(Simulated { panel: Panel::new(people.into_iter().flatten().collect())?, truth: Truth::from_spec(spec) })
}

/// Oversampled mode: for every cell and both prior HAS states, `n_per_cell`
/// two-wave persons observed at `(age − 1, year − 1)` and `(age, year)`.
/// Cells in the first grid year use a prior wave before the grid.
pub fn generate_oversampled(spec: &ScenarioSpec, n_per_cell: usize) -> Result<Simulated> {
    spec.validate()?;
    let gamma = gamma_of(spec)?;
    let g = spec.grid;
    let cells = g.cells();
    let jobs = cells.len() * 2 * n_per_cell;
    let people: Vec<[PersonYear; 2]> = (0..jobs)
        .into_par_iter()
        .map(|j| {
            let c = cells[j / (2 * n_per_cell)];
            let prior = (j / n_per_cell) % 2 == 1;
            let mut p = Person { spec, rng: stream_rng(spec.seed, j as u64 + 1), gamma };
            let id = format!("o{j:08}");
            let y0 = p.initial_mh();
            let y1 = p.mh_step(c.age, c.year, y0, prior);
            let next = p.transition(c.age, c.year, prior);
            [record(&id, c.year - 1, c.age - 1, prior, y0), record(&id, c.year, c.age, next, y1)]
        })
        .collect();
    Ok(Simulated { panel: Panel::new(people.into_iter().flatten().collect())?, truth: Truth::from_spec(spec) })
}
