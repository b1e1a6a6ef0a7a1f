//! Observed semi-competing risks records.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(a: usize) -> Option<Arm> {
        match a {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

/// One subject: `(X, Y, δ1, δ2, A, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    /// `min(T1, T2, C)`
    pub x: f64,
    /// `min(T2, C)`
    pub y: f64,
    pub d1: bool,
    pub d2: bool,
    pub arm: Arm,
    pub z: Vec<f64>,
}

impl SubjectRecord {
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite()) || self.x < 0.0 || self.y < 0.0 {
            return Err(Error::InvalidInput(format!(
                "times must be finite and nonnegative (x = {}, y = {})",
                self.x, self.y
            )));
        }
        if self.x > self.y {
            return Err(Error::InvalidInput(format!("x = {} exceeds y = {}", self.x, self.y)));
        }
        if self.z.len() != p {
            return Err(Error::InvalidInput(format!("expected {p} covariates, found {}", self.z.len())));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate".into()));
        }
        Ok(())
    }
}

/// A validated collection of subjects sharing one covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<SubjectRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            r.validate(p).map_err(|e| Error::InvalidInput(format!("record {i}: {e}")))?;
        }
        Ok(Dataset { records, covariate_names })
    }

    /// Default labels `z1..zp`.
    pub fn default_names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("z{j}")).collect()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arm_records(&self, arm: Arm) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(move |r| r.arm == arm)
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.arm_records(arm).count()
    }

    /// Subset by index, with repetition allowed (bootstrap resamples).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Fractions of records with `d1 = 0` and `d2 = 0`.
    pub fn censoring_rates(&self) -> (f64, f64) {
        if self.records.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.records.len() as f64;
        let c1 = self.records.iter().filter(|r| !r.d1).count() as f64;
        let c2 = self.records.iter().filter(|r| !r.d2).count() as f64;
        (c1 / n, c2 / n)
    }
}
