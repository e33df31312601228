//! Age × calendar-year lattice and cohort algebra.

use crate::error::{Error, Result};
use num_traits::Num;
use serde::{Deserialize, Serialize};
use std::ops::Neg;

/// Rectangular lattice of one-year age by one-year calendar cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainGrid {
    pub age_min: i32,
    pub age_max: i32,
    pub year_min: i32,
    pub year_max: i32,
}

/// One lattice cell. `cohort` is the birth year implied by `year - age`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainCell {
    pub age: i32,
    pub year: i32,
    pub cohort: i32,
}

impl DomainCell {
    pub fn new(age: i32, year: i32) -> Self {
        Self { age, year, cohort: year - age }
    }
}

impl DomainGrid {
    pub fn new(age_min: i32, age_max: i32, year_min: i32, year_max: i32) -> Result<Self> {
        if age_min > age_max {
            return Err(Error::InvalidGrid(format!("age_min {age_min} > age_max {age_max}")));
        }
        if year_min > year_max {
            return Err(Error::InvalidGrid(format!("year_min {year_min} > year_max {year_max}")));
        }
        Ok(Self { age_min, age_max, year_min, year_max })
    }

    /// Ages 25–64 by calendar years 2001–2016.
    pub fn hilda() -> Self {
        Self { age_min: 25, age_max: 64, year_min: 2001, year_max: 2016 }
    }

    pub fn n_ages(&self) -> usize {
        (self.age_max - self.age_min + 1) as usize
    }

    pub fn n_years(&self) -> usize {
        (self.year_max - self.year_min + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.n_ages() * self.n_years()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, age: i32, year: i32) -> bool {
        (self.age_min..=self.age_max).contains(&age) && (self.year_min..=self.year_max).contains(&year)
    }

    /// Row-major position (age outer, year inner).
    pub fn index_of(&self, age: i32, year: i32) -> Option<usize> {
        if !self.contains(age, year) {
            return None;
        }
        let ai = (age - self.age_min) as usize;
        let yi = (year - self.year_min) as usize;
        Some(ai * self.n_years() + yi)
    }

    pub fn cell(&self, index: usize) -> DomainCell {
        let ny = self.n_years();
        let age = self.age_min + (index / ny) as i32;
        let year = self.year_min + (index % ny) as i32;
        DomainCell::new(age, year)
    }

    /// All cells in row-major order: age outer, year inner.
    pub fn cells(&self) -> Vec<DomainCell> {
        (self.age_min..=self.age_max)
            .flat_map(|a| (self.year_min..=self.year_max).map(move |t| DomainCell::new(a, t)))
            .collect()
    }

    pub fn ages(&self) -> impl Iterator<Item = i32> {
        self.age_min..=self.age_max
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.year_min..=self.year_max
    }
}

/// Quadratic age–period–cohort polynomial
/// `alpha + beta1 A + beta2 A² + gamma1 P + gamma2 P² + delta1 C + delta2 C²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticApcCoeffs<T> {
    pub alpha: T,
    pub beta1: T,
    pub beta2: T,
    pub gamma1: T,
    pub gamma2: T,
    pub delta1: T,
    pub delta2: T,
}

/// The same polynomial written in age and period only:
/// `constant + age A + period P + age2 A² + period2 P² + age_period A P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApCoeffs<T> {
    pub constant: T,
    pub age: T,
    pub period: T,
    pub age2: T,
    pub period2: T,
    pub age_period: T,
}

impl<T: Num + Copy> QuadraticApcCoeffs<T> {
    pub fn eval(&self, age: T, period: T, cohort: T) -> T {
        self.alpha
            + self.beta1 * age
            + self.beta2 * age * age
            + self.gamma1 * period
            + self.gamma2 * period * period
            + self.delta1 * cohort
            + self.delta2 * cohort * cohort
    }
}

impl<T: Num + Copy> ApCoeffs<T> {
    pub fn eval(&self, age: T, period: T) -> T {
        self.constant
            + self.age * age
            + self.period * period
            + self.age2 * age * age
            + self.period2 * period * period
            + self.age_period * age * period
    }
}

/// Substitutes `C = P - A` and collects terms. Works over any ring, so
/// rationals give an exact identity.
pub fn apc_reparameterize<T: Num + Copy + Neg<Output = T>>(c: &QuadraticApcCoeffs<T>) -> ApCoeffs<T> {
    let two = T::one() + T::one();
    ApCoeffs {
        constant: c.alpha,
        age: c.beta1 - c.delta1,
        period: c.gamma1 + c.delta1,
        age2: c.beta2 + c.delta2,
        period2: c.gamma2 + c.delta2,
        age_period: -(two * c.delta2),
    }
}
