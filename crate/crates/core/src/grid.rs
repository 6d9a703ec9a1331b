//! Per-sequence 3D parameter grids built from a corpus of estimated θ.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pulse::{SequenceKind, ThetaSet};

pub const DEFAULT_BINS: usize = 50;

/// How grid bounds are derived from the corpus extremes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundsRule {
    /// Expand min and max outward by 20% of their magnitude. Equals
    /// `[0.8 min, 1.2 max]` for positive values and always contains the corpus.
    #[default]
    Outward,
    /// `[0.8 min, 1.2 max]` taken literally, which can exclude negative minima.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGrid {
    pub kind: SequenceKind,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub bins: usize,
}

fn outward(min: f64, max: f64) -> (f64, f64) {
    let lo = if min >= 0.0 { 0.8 * min } else { 1.2 * min };
    let hi = if max >= 0.0 { 1.2 * max } else { 0.8 * max };
    (lo, hi)
}

fn widen(center: f64) -> (f64, f64) {
    let half = (0.2 * center.abs()).max(1e-6);
    (center - half, center + half)
}

pub fn build_grid(thetas: &[ThetaSet], bins: usize) -> Result<ParamGrid> {
    build_grid_with(thetas, bins, BoundsRule::Outward)
}

pub fn build_grid_with(thetas: &[ThetaSet], bins: usize, rule: BoundsRule) -> Result<ParamGrid> {
    let first = thetas
        .first()
        .ok_or_else(|| Error::Usage("cannot build a grid from an empty θ list".into()))?;
    if let Some(other) = thetas.iter().find(|t| t.kind != first.kind) {
        return Err(Error::Usage(format!(
            "mixed sequence kinds in grid corpus: {} and {}",
            first.kind, other.kind
        )));
    }
    if bins < 2 {
        return Err(Error::Usage(format!("grid needs at least 2 bins per dimension, got {bins}")));
    }
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    for m in 0..3 {
        let (min, max) = thetas
            .iter()
            .map(|t| t.theta[m])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (mut lo, mut hi) = match rule {
            BoundsRule::Outward => outward(min, max),
            BoundsRule::Literal => (0.8 * min, 1.2 * max),
        };
        if lo >= hi {
            (lo, hi) = widen(0.5 * (min + max));
        }
        lower[m] = lo;
        upper[m] = hi;
    }
    Ok(ParamGrid {
        kind: first.kind,
        lower,
        upper,
        bins,
    })
}

impl ParamGrid {
    pub fn new(kind: SequenceKind, lower: [f64; 3], upper: [f64; 3], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Usage(format!("grid needs at least 2 bins per dimension, got {bins}")));
        }
        for m in 0..3 {
            if !(lower[m].is_finite() && upper[m].is_finite() && lower[m] < upper[m]) {
                return Err(Error::Validation(format!(
                    "grid bounds for theta{m} must satisfy lower < upper, got [{}, {}]",
                    lower[m], upper[m]
                )));
            }
        }
        Ok(ParamGrid { kind, lower, upper, bins })
    }

    pub fn point_count(&self) -> usize {
        self.bins.pow(3)
    }

    pub fn contains(&self, theta: &ThetaSet) -> bool {
        (0..3).all(|m| self.lower[m] <= theta.theta[m] && theta.theta[m] <= self.upper[m])
    }

    /// Centre of bin `i` along dimension `m`.
    pub fn bin_center(&self, m: usize, i: usize) -> f64 {
        let width = (self.upper[m] - self.lower[m]) / self.bins as f64;
        self.lower[m] + (i as f64 + 0.5) * width
    }

    pub fn point(&self, idx: [usize; 3]) -> ThetaSet {
        ThetaSet {
            kind: self.kind,
            theta: [0, 1, 2].map(|m| self.bin_center(m, idx[m])),
        }
    }

    /// Bin indices of the `flat`-th point in lexicographic order (the last
    /// dimension varies fastest).
    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let b = self.bins;
        [flat / (b * b), (flat / b) % b, flat % b]
    }

    pub fn point_at(&self, flat: usize) -> ThetaSet {
        self.point(self.unflatten(flat))
    }

    /// Uniformly chosen flat point index.
    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(0..self.point_count())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut kind = None;
        let mut bins = None;
        let mut bounds: [Option<(f64, f64)>; 3] = [None; 3];
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
            match (f[0], f.len()) {
                ("kind", 2) => kind = Some(f[1].parse::<SequenceKind>().map_err(|e| err(e.to_string()))?),
                ("bins", 2) => bins = Some(f[1].parse::<usize>().map_err(|_| err(format!("invalid bin count {:?}", f[1])))?),
                ("theta0", 3) => bounds[0] = Some((num(f[1])?, num(f[2])?)),
                ("theta1", 3) => bounds[1] = Some((num(f[1])?, num(f[2])?)),
                ("theta2", 3) => bounds[2] = Some((num(f[1])?, num(f[2])?)),
                _ => return Err(err(format!("unrecognized grid entry {line:?}"))),
            }
        }
        let missing = |what: &str| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: format!("missing {what}"),
        };
        let kind = kind.ok_or_else(|| missing("kind"))?;
        let bins = bins.ok_or_else(|| missing("bins"))?;
        let mut lower = [0.0; 3];
        let mut upper = [0.0; 3];
        for m in 0..3 {
            let (lo, hi) = bounds[m].ok_or_else(|| missing(&format!("theta{m} bounds")))?;
            lower[m] = lo;
            upper[m] = hi;
        }
        ParamGrid::new(kind, lower, upper, bins)
    }
}

impl fmt::Display for ParamGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind {}", self.kind)?;
        writeln!(f, "bins {}", self.bins)?;
        for m in 0..3 {
            writeln!(f, "theta{m} {} {}", self.lower[m], self.upper[m])?;
        }
        Ok(())
    }
}

/// θ at a uniformly chosen grid point; deterministic in `seed`.
pub fn sample_uniform(grid: &ParamGrid, seed: u64) -> ThetaSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.point_at(grid.sample_index(&mut rng))
}

/// All `bins³` grid points in lexicographic bin order.
pub fn enumerate_grid(grid: &ParamGrid) -> impl Iterator<Item = ThetaSet> + '_ {
    (0..grid.point_count()).map(move |i| grid.point_at(i))
}
