//! Three-class Gaussian mixture fitting of brain intensities and the mapping
//! of mixture components onto CSF, gray matter and white matter.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pulse::SequenceKind;
use crate::volume::percentile_nearest_rank;

pub const MIN_SAMPLES: usize = 1000;
pub const MAX_ITERATIONS: usize = 500;
pub const REL_TOLERANCE: f64 = 1e-7;
/// Variance floor relative to the squared sample range; equals 1e-8 for
/// intensities spanning [0, 1].
pub const VARIANCE_FLOOR: f64 = 1e-8;
pub const MIN_WEIGHT: f64 = 1e-4;

/// Fixed chunk size for E-step partial sums; summation order does not depend
/// on the number of worker threads.
const CHUNK: usize = 8192;

/// Fitted three-component mixture, components sorted by ascending mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub means: [f64; 3],
    pub variances: [f64; 3],
    pub weights: [f64; 3],
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl GmmFit {
    pub fn std_devs(&self) -> [f64; 3] {
        self.variances.map(f64::sqrt)
    }
}

impl fmt::Display for GmmFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# gmm3 components sorted by mean")?;
        for c in 0..3 {
            writeln!(
                f,
                "component {c} mean {} variance {} weight {}",
                self.means[c], self.variances[c], self.weights[c]
            )?;
        }
        writeln!(f, "log_likelihood {}", self.log_likelihood)?;
        write!(f, "iterations {}", self.iterations)
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    means: [f64; 3],
    variances: [f64; 3],
    weights: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    log_likelihood: f64,
    // responsibility mass, first and second moments about the current mean
    n: [f64; 3],
    s1: [f64; 3],
    s2: [f64; 3],
}

impl Stats {
    fn add(mut self, o: &Stats) -> Stats {
        self.log_likelihood += o.log_likelihood;
        for k in 0..3 {
            self.n[k] += o.n[k];
            self.s1[k] += o.s1[k];
            self.s2[k] += o.s2[k];
        }
        self
    }
}

fn e_step_chunk(xs: &[f64], p: &Params) -> Stats {
    let log_norm: [f64; 3] = [0, 1, 2].map(|k| {
        p.weights[k].ln() - 0.5 * (2.0 * std::f64::consts::PI * p.variances[k]).ln()
    });
    let inv_2var = p.variances.map(|v| 0.5 / v);
    let mut st = Stats::default();
    for &x in xs {
        let mut lp = [0.0; 3];
        for k in 0..3 {
            let d = x - p.means[k];
            lp[k] = log_norm[k] - d * d * inv_2var[k];
        }
        let m = lp[0].max(lp[1]).max(lp[2]);
        let r = lp.map(|l| (l - m).exp());
        let total = r[0] + r[1] + r[2];
        st.log_likelihood += m + total.ln();
        for k in 0..3 {
            let rk = r[k] / total;
            let d = x - p.means[k];
            st.n[k] += rk;
            st.s1[k] += rk * d;
            st.s2[k] += rk * d * d;
        }
    }
    st
}

fn e_step(samples: &[f64], p: &Params) -> Stats {
    let partial: Vec<Stats> = samples.par_chunks(CHUNK).map(|c| e_step_chunk(c, p)).collect();
    partial.iter().fold(Stats::default(), |acc, s| acc.add(s))
}

fn initial_means(sorted: &[f64]) -> [f64; 3] {
    let distinct = |m: [f64; 3]| m[0] < m[1] && m[1] < m[2];
    let at = |q: f64| {
        let mut v = sorted.to_vec();
        percentile_nearest_rank(&mut v, q)
    };
    let quartiles = [at(25.0), at(50.0), at(75.0)];
    if distinct(quartiles) {
        return quartiles;
    }
    let sixths = [at(100.0 / 6.0), at(50.0), at(500.0 / 6.0)];
    if distinct(sixths) {
        return sixths;
    }
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    [1.0, 3.0, 5.0].map(|f| lo + (hi - lo) * f / 6.0)
}

/// Sum of squared distances of each sample to its nearest mean.
fn pooled_variance(samples: &[f64], means: &[f64; 3]) -> f64 {
    samples
        .par_chunks(CHUNK)
        .map(|c| {
            c.iter()
                .map(|&x| means.iter().map(|m| (x - m) * (x - m)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Fit a three-component 1D Gaussian mixture by EM.
///
/// Initialization is deterministic: means at the 25th/50th/75th percentiles
/// (falling back to wider quantiles, then to an even split of the range, when
/// those coincide), a shared variance pooled over the partition of samples by
/// nearest initial mean, and uniform weights. Iterates until the relative log-likelihood change drops
/// below 1e-7 or 500 iterations have run.
pub fn fit_gmm3(samples: &[f64]) -> Result<GmmFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite sample {bad}")));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let spread = hi - lo;
    if !(spread > 0.0) {
        return Err(Error::DegenerateFit(format!("all {} samples equal {lo}", samples.len())));
    }
    let floor = VARIANCE_FLOOR * spread * spread;

    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let means = initial_means(&sorted);
    drop(sorted);
    let var = (pooled_variance(samples, &means) / n).max(floor);
    let mut p = Params {
        means,
        variances: [var; 3],
        weights: [1.0 / 3.0; 3],
    };

    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let st = e_step(samples, &p);
        ll = st.log_likelihood;
        iterations += 1;
        debug_assert!(
            ll >= prev_ll - 1e-9 * prev_ll.abs().max(1.0),
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        for k in 0..3 {
            if st.n[k] / n < MIN_WEIGHT {
                return Err(Error::DegenerateFit(format!(
                    "component {k} collapsed (weight {:.3e})",
                    st.n[k] / n
                )));
            }
            let shift = st.s1[k] / st.n[k];
            p.means[k] += shift;
            p.variances[k] = (st.s2[k] / st.n[k] - shift * shift).max(floor);
            p.weights[k] = st.n[k] / n;
        }
        let converged = (ll - prev_ll).abs() <= REL_TOLERANCE * ll.abs();
        prev_ll = ll;
        if converged {
            break;
        }
    }

    let wsum: f64 = p.weights.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| p.means[a].total_cmp(&p.means[b]));
    Ok(GmmFit {
        means: order.map(|k| p.means[k]),
        variances: order.map(|k| p.variances[k]),
        weights: order.map(|k| p.weights[k] / wsum),
        log_likelihood: ll,
        iterations,
    })
}

/// Mean intensities of CSF, gray matter and white matter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMeans {
    pub csf: f64,
    pub gm: f64,
    pub wm: f64,
}

impl ClassMeans {
    pub fn new(csf: f64, gm: f64, wm: f64) -> Result<Self> {
        let m = ClassMeans { csf, gm, wm };
        let v = m.as_array();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("class means must be finite, got {v:?}")));
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if too_close(v[a], v[b]) {
                return Err(Error::AmbiguousAssignment(format!(
                    "class means {} and {} are not separated",
                    v[a], v[b]
                )));
            }
        }
        Ok(m)
    }

    /// `[csf, gm, wm]`.
    pub fn as_array(&self) -> [f64; 3] {
        [self.csf, self.gm, self.wm]
    }

    pub fn scaled(&self, c: f64) -> ClassMeans {
        ClassMeans {
            csf: self.csf * c,
            gm: self.gm * c,
            wm: self.wm * c,
        }
    }
}

fn too_close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-6 * a.abs().max(b.abs())
}

/// Map fitted components to tissues: ascending means are CSF < GM < WM for
/// T1-weighted kinds and WM < GM < CSF for T2-SPACE.
pub fn assign_tissues(fit: &GmmFit, kind: SequenceKind) -> Result<ClassMeans> {
    let mut m = fit.means;
    m.sort_by(f64::total_cmp);
    for w in m.windows(2) {
        if too_close(w[0], w[1]) {
            return Err(Error::AmbiguousAssignment(format!(
                "component means {} and {} are within 1e-6 relative",
                w[0], w[1]
            )));
        }
    }
    if kind.is_t1_weighted() {
        ClassMeans::new(m[0], m[1], m[2])
    } else {
        ClassMeans::new(m[2], m[1], m[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn fit_with_means(means: [f64; 3]) -> GmmFit {
        GmmFit {
            means,
            variances: [1e-3; 3],
            weights: [1.0 / 3.0; 3],
            log_likelihood: 0.0,
            iterations: 1,
        }
    }

    #[test]
    fn separated_spikes() {
        let mut xs = Vec::new();
        for v in [0.1, 0.5, 0.9] {
            xs.extend(std::iter::repeat(v).take(1000));
        }
        let fit = fit_gmm3(&xs).unwrap();
        for (m, e) in fit.means.iter().zip([0.1, 0.5, 0.9]) {
            assert!((m - e).abs() < 1e-6);
        }
        for w in fit.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-6);
        }
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_known_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comps = [(0.2, 0.2), (0.55, 0.35), (0.8, 0.45)];
        let mut xs = Vec::with_capacity(100_000);
        for (mean, w) in comps {
            let d = Normal::new(mean, 0.03).unwrap();
            let count = (w * 100_000.0) as usize;
            xs.extend((0..count).map(|_| d.sample(&mut rng)));
        }
        let fit = fit_gmm3(&xs).unwrap();
        for ((m, w), (em, ew)) in fit.means.iter().zip(fit.weights).zip(comps) {
            assert!((m - em).abs() < 0.005, "mean {m} vs {em}");
            assert!((w - ew).abs() < 0.01, "weight {w} vs {ew}");
        }
        for v in fit.variances {
            assert!(v >= VARIANCE_FLOOR);
        }
    }

    #[test]
    fn constant_samples_degenerate() {
        assert!(matches!(fit_gmm3(&[0.4; 2000]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            fit_gmm3(&[0.1; 999]),
            Err(Error::InsufficientData { needed: 1000, got: 999 })
        ));
    }

    #[test]
    fn two_values_collapse_a_component() {
        let mut xs = vec![0.2; 1000];
        xs.extend(vec![0.7; 1000]);
        assert!(matches!(fit_gmm3(&xs), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn coinciding_quartiles_fall_back() {
        // quartiles 25/50 both land on the large middle class
        let mut xs = vec![0.1; 200];
        xs.extend(vec![0.5; 1600]);
        xs.extend(vec![0.9; 200]);
        let fit = fit_gmm3(&xs).unwrap();
        for (m, e) in fit.means.iter().zip([0.1, 0.5, 0.9]) {
            assert!((m - e).abs() < 1e-6);
        }
    }

    #[test]
    fn ordering_t1_weighted() {
        let cm = assign_tissues(&fit_with_means([0.5, 0.15, 0.8]), SequenceKind::Mprage).unwrap();
        assert_eq!(cm, ClassMeans { csf: 0.15, gm: 0.5, wm: 0.8 });
    }

    #[test]
    fn ordering_t2_weighted() {
        let cm = assign_tissues(&fit_with_means([0.2, 0.45, 0.9]), SequenceKind::T2Space).unwrap();
        assert_eq!(cm, ClassMeans { csf: 0.9, gm: 0.45, wm: 0.2 });
    }

    #[test]
    fn near_tie_is_ambiguous() {
        let r = assign_tissues(&fit_with_means([0.5, 0.5 + 1e-9, 0.9]), SequenceKind::Flash);
        assert!(matches!(r, Err(Error::AmbiguousAssignment(_))));
    }
}
