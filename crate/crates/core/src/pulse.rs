//! Imaging equations: the theoretical FLASH and T2-SPACE forms and the
//! three-parameter log-linear approximations used for estimation and
//! synthesis.
//!
//! All relaxation times are in milliseconds and `ln` is the natural log.
//! T2* is identified with T2.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::lstsq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SequenceKind {
    Flash,
    Spgr,
    Mprage,
    T2Space,
}

impl SequenceKind {
    pub const ALL: [SequenceKind; 4] = [
        SequenceKind::Flash,
        SequenceKind::Spgr,
        SequenceKind::Mprage,
        SequenceKind::T2Space,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Flash => "FLASH",
            SequenceKind::Spgr => "SPGR",
            SequenceKind::Mprage => "MPRAGE",
            SequenceKind::T2Space => "T2SPACE",
        }
    }

    /// Byte code used in the batch file formats.
    pub fn code(self) -> u8 {
        match self {
            SequenceKind::Flash => 0,
            SequenceKind::Spgr => 1,
            SequenceKind::Mprage => 2,
            SequenceKind::T2Space => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// FLASH and SPGR share one approximation.
    pub fn is_flash_like(self) -> bool {
        matches!(self, SequenceKind::Flash | SequenceKind::Spgr)
    }

    /// Whether white matter is the brightest tissue (CSF the darkest).
    pub fn is_t1_weighted(self) -> bool {
        !matches!(self, SequenceKind::T2Space)
    }

    /// The T1 and T2 basis terms `(g1, g2)` of the approximation, so that
    /// `ln S = θ0 + ln ρ + θ1·g1 + θ2·g2`.
    #[inline]
    pub fn basis(self, t1: f64, t2: f64) -> [f64; 2] {
        match self {
            SequenceKind::Flash | SequenceKind::Spgr => [1.0 / t1, 1.0 / t2],
            SequenceKind::Mprage => [t1, t1 * t1],
            SequenceKind::T2Space => [t1, 1.0 / t2],
        }
    }
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| Error::Usage(format!("unknown sequence kind {s:?} (expected FLASH, SPGR, MPRAGE or T2SPACE)")))
    }
}

/// A sequence kind and its three approximate imaging parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSet {
    pub kind: SequenceKind,
    pub theta: [f64; 3],
}

impl ThetaSet {
    pub fn new(kind: SequenceKind, theta: [f64; 3]) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation(format!("theta components must be finite, got {theta:?}")));
        }
        Ok(ThetaSet { kind, theta })
    }

    /// Parse every non-empty, non-comment line of a θ config text.
    pub fn parse_all(text: &str, source_name: &str) -> Result<Vec<ThetaSet>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(parse_err(format!("expected `kind theta0 theta1 theta2`, got {} fields", fields.len())));
            }
            let kind: SequenceKind = fields[0].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let mut theta = [0.0; 3];
            for (t, f) in theta.iter_mut().zip(&fields[1..]) {
                *t = f.parse().map_err(|_| parse_err(format!("invalid number {f:?}")))?;
            }
            out.push(ThetaSet::new(kind, theta).map_err(|e| parse_err(e.to_string()))?);
        }
        Ok(out)
    }

    pub fn to_config_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ThetaSet {
    /// `kind theta0 theta1 theta2` in shortest round-trip decimal notation.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.kind, self.theta[0], self.theta[1], self.theta[2])
    }
}

fn check_beta(rho: f64, t1: f64, t2: f64) -> Result<()> {
    if rho > 0.0 && t1 > 0.0 && t2 > 0.0 && rho.is_finite() && t1.is_finite() && t2.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "NMR parameters must be positive and finite, got rho={rho}, T1={t1}, T2={t2}"
        )))
    }
}

/// `ln S` under the three-parameter approximation, without domain checks.
#[inline]
pub fn log_intensity_unchecked(rho: f64, t1: f64, t2: f64, theta: &ThetaSet) -> f64 {
    let [g1, g2] = theta.kind.basis(t1, t2);
    theta.theta[0] + rho.ln() + theta.theta[1] * g1 + theta.theta[2] * g2
}

/// `ln S` for NMR parameters `(rho, t1, t2)`:
///
/// * FLASH/SPGR: `θ0 + ln ρ + θ1/T1 + θ2/T2`
/// * MPRAGE: `θ0 + ln ρ + θ1·T1 + θ2·T1²`
/// * T2-SPACE: `θ0 + ln ρ + θ1·T1 + θ2/T2`
pub fn approx_log_intensity(beta: [f64; 3], theta: &ThetaSet) -> Result<f64> {
    let [rho, t1, t2] = beta;
    check_beta(rho, t1, t2)?;
    Ok(log_intensity_unchecked(rho, t1, t2, theta))
}

pub fn approx_intensity(beta: [f64; 3], theta: &ThetaSet) -> Result<f64> {
    approx_log_intensity(beta, theta).map(f64::exp)
}

/// Physical FLASH acquisition parameters. Times in ms, flip angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalFlashParams {
    pub gain: f64,
    pub tr: f64,
    pub te: f64,
    pub alpha: f64,
}

impl TheoreticalFlashParams {
    pub fn new(gain: f64, tr: f64, te: f64, alpha: f64) -> Result<Self> {
        if !(gain > 0.0) {
            return Err(Error::Validation(format!("FLASH gain must be positive, got {gain}")));
        }
        if !(te >= 0.0 && tr > te) {
            return Err(Error::Validation(format!("FLASH requires TR > TE >= 0, got TR={tr}, TE={te}")));
        }
        if !(alpha > 0.0 && alpha < std::f64::consts::PI) {
            return Err(Error::Validation(format!("flip angle must lie in (0, pi), got {alpha}")));
        }
        Ok(TheoreticalFlashParams { gain, tr, te, alpha })
    }

    /// `ln((1 − E1)/(1 − cos α·E1))` with `E1 = exp(−TR/T1)`.
    pub fn t1_term(&self, t1: f64) -> f64 {
        let e1 = (-self.tr / t1).exp();
        ((1.0 - e1) / (1.0 - self.alpha.cos() * e1)).ln()
    }
}

/// Physical turbo-spin-echo parameters for the T2-SPACE form. Times in ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalT2SpaceParams {
    pub gain: f64,
    pub td: f64,
    pub te_n: f64,
    pub f: f64,
}

impl TheoreticalT2SpaceParams {
    pub fn new(gain: f64, td: f64, te_n: f64, f: f64) -> Result<Self> {
        if !(gain > 0.0 && td > 0.0 && te_n > 0.0 && f.is_finite()) {
            return Err(Error::Validation(format!(
                "T2-SPACE requires G, TD, TE_n > 0, got G={gain}, TD={td}, TE_n={te_n}, F={f}"
            )));
        }
        Ok(TheoreticalT2SpaceParams { gain, td, te_n, f })
    }

    /// `ln(1 − F·exp(−TD/T1))`.
    pub fn t1_term(&self, t1: f64) -> f64 {
        (1.0 - self.f * (-self.td / t1).exp()).ln()
    }

    pub fn intensity(&self, rho: f64, t1: f64, t2: f64) -> Result<f64> {
        check_beta(rho, t1, t2)?;
        Ok(self.gain * rho * (1.0 - self.f * (-self.td / t1).exp()) * (-self.te_n / t2).exp())
    }
}

/// Closed-form FLASH signal
/// `G ρ sin α (1 − e^{−TR/T1}) / (1 − cos α e^{−TR/T1}) e^{−TE/T2*}`.
pub fn flash_theoretical(rho: f64, t1: f64, t2star: f64, p: &TheoreticalFlashParams) -> Result<f64> {
    if !(t1 > 0.0 && t2star > 0.0) {
        return Err(Error::Domain(format!(
            "relaxation times must be positive, got T1={t1}, T2*={t2star}"
        )));
    }
    let e1 = (-p.tr / t1).exp();
    Ok(p.gain * rho * p.alpha.sin() * (1.0 - e1) / (1.0 - p.alpha.cos() * e1) * (-p.te / t2star).exp())
}

/// Theoretical sequence whose T1 dependence is compared to the approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TheoreticalParams {
    Flash(TheoreticalFlashParams),
    T2Space(TheoreticalT2SpaceParams),
}

impl TheoreticalParams {
    pub fn kind(&self) -> SequenceKind {
        match self {
            TheoreticalParams::Flash(_) => SequenceKind::Flash,
            TheoreticalParams::T2Space(_) => SequenceKind::T2Space,
        }
    }

    pub fn t1_term(&self, t1: f64) -> f64 {
        match self {
            TheoreticalParams::Flash(p) => p.t1_term(t1),
            TheoreticalParams::T2Space(p) => p.t1_term(t1),
        }
    }
}

/// Least-squares fit of an approximation's T1 term to a theoretical curve.
#[derive(Debug, Clone, PartialEq)]
pub struct T1TermFit {
    pub kind: SequenceKind,
    /// Constant offset (absorbed into θ0), then the T1 coefficients: θ1 for
    /// FLASH/SPGR and T2-SPACE, θ1 and θ2 for MPRAGE.
    pub coefficients: Vec<f64>,
    /// Largest relative error of the T1 signal factor over the fit samples.
    pub max_rel_error: f64,
}

fn t1_basis(kind: SequenceKind, t1: f64) -> Vec<f64> {
    match kind {
        SequenceKind::Flash | SequenceKind::Spgr => vec![1.0, 1.0 / t1],
        SequenceKind::T2Space => vec![1.0, t1],
        SequenceKind::Mprage => vec![1.0, t1, t1 * t1],
    }
}

impl T1TermFit {
    /// Approximate log T1 factor at `t1`.
    pub fn eval(&self, t1: f64) -> f64 {
        t1_basis(self.kind, t1)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    /// Relative error of the signal factor, `|exp(approx − exact) − 1|`.
    pub fn relative_error(&self, t1: f64, exact_log: f64) -> f64 {
        (self.eval(t1) - exact_log).exp_m1().abs()
    }
}

/// Uniformly spaced samples over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Fit the T1 term of `kind`'s approximation to an arbitrary log T1 curve.
pub fn fit_t1_term(
    kind: SequenceKind,
    log_t1_term: impl Fn(f64) -> f64,
    t1_range: (f64, f64),
    n_samples: usize,
) -> Result<T1TermFit> {
    let (lo, hi) = t1_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Usage(format!("T1 range must satisfy 0 < lo < hi, got ({lo}, {hi})")));
    }
    let unknowns = t1_basis(kind, lo).len();
    if n_samples < unknowns {
        return Err(Error::Usage(format!(
            "{kind} T1 fit needs at least {unknowns} samples, got {n_samples}"
        )));
    }
    let t1s = linspace(lo, hi, n_samples);
    let exact: Vec<f64> = t1s.iter().map(|&t| log_t1_term(t)).collect();
    if exact.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("theoretical T1 term is not finite over the range".into()));
    }
    let mut columns = vec![Vec::with_capacity(n_samples); unknowns];
    for &t in &t1s {
        for (c, b) in columns.iter_mut().zip(t1_basis(kind, t)) {
            c.push(b);
        }
    }
    let coefficients = lstsq(&columns, &exact)?;
    let mut fit = T1TermFit {
        kind,
        coefficients,
        max_rel_error: 0.0,
    };
    fit.max_rel_error = t1s
        .iter()
        .zip(&exact)
        .map(|(&t, &e)| fit.relative_error(t, e))
        .fold(0.0, f64::max);
    Ok(fit)
}

/// Fit the approximation's T1 term to the theoretical `f1(T1)` of `p`.
pub fn fit_approximation_to_theory(
    p: &TheoreticalParams,
    t1_range: (f64, f64),
    n_samples: usize,
) -> Result<T1TermFit> {
    fit_t1_term(p.kind(), |t| p.t1_term(t), t1_range, n_samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, FRAC_PI_2};

    fn theta(kind: SequenceKind, t: [f64; 3]) -> ThetaSet {
        ThetaSet::new(kind, t).unwrap()
    }

    #[test]
    fn flash_full_recovery_limit() {
        let p = TheoreticalFlashParams::new(2.5, 100.0 * 800.0, 0.0, FRAC_PI_2).unwrap();
        let s = flash_theoretical(0.7, 800.0, 60.0, &p).unwrap();
        assert!((s - 2.5 * 0.7).abs() < 1e-9);
    }

    #[test]
    fn flash_direct_arithmetic() {
        let p = TheoreticalFlashParams::new(1.0, 20.0, 5.0, 30f64.to_radians()).unwrap();
        let s = flash_theoretical(1.0, 600.0, 80.0, &p).unwrap();
        // evaluated independently: sin30 (1-e^{-1/30}) / (1 - cos30 e^{-1/30}) e^{-1/16}
        let e1 = (-1.0f64 / 30.0).exp();
        let expected = 0.5 * (1.0 - e1) / (1.0 - 0.75f64.sqrt() * e1) * (-0.0625f64).exp();
        assert!((s - expected).abs() < 1e-15);
        assert!((s - 0.0948399579).abs() < 1e-9);
    }

    #[test]
    fn flash_rejects_bad_times() {
        let p = TheoreticalFlashParams::new(1.0, 20.0, 5.0, 0.5).unwrap();
        assert!(flash_theoretical(1.0, 0.0, 80.0, &p).is_err());
        assert!(flash_theoretical(1.0, 600.0, -1.0, &p).is_err());
        assert!(TheoreticalFlashParams::new(1.0, 5.0, 5.0, 0.5).is_err());
    }

    #[test]
    fn flash_increasing_in_rho() {
        let p = TheoreticalFlashParams::new(1.0, 20.0, 5.0, 0.5).unwrap();
        let a = flash_theoretical(0.5, 900.0, 70.0, &p).unwrap();
        let b = flash_theoretical(0.6, 900.0, 70.0, &p).unwrap();
        assert!(b > a);
    }

    #[test]
    fn zero_theta_gives_zero_log() {
        for kind in SequenceKind::ALL {
            let v = approx_log_intensity([1.0, 900.0, 80.0], &theta(kind, [0.0; 3])).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn flash_log_example() {
        let v = approx_log_intensity([0.8, 600.0, 80.0], &theta(SequenceKind::Flash, [0.1, -200.0, -20.0])).unwrap();
        let expected = 0.1 + 0.8f64.ln() - 200.0 / 600.0 - 20.0 / 80.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - (-0.7064768846)).abs() < 1e-9);
    }

    #[test]
    fn mprage_log_example() {
        let v = approx_log_intensity([1.0, 1000.0, 80.0], &theta(SequenceKind::Mprage, [0.0, 1e-3, -1e-7])).unwrap();
        assert!((v - 0.9).abs() < 1e-12);
    }

    #[test]
    fn t2space_basis() {
        let v = approx_log_intensity([1.0, 600.0, 80.0], &theta(SequenceKind::T2Space, [0.0, 1.0, 1.0])).unwrap();
        assert!((v - 600.0125).abs() < 1e-12);
    }

    #[test]
    fn spgr_matches_flash() {
        let b = [0.9, 1100.0, 95.0];
        let t = [0.3, -120.0, -12.0];
        assert_eq!(
            approx_log_intensity(b, &theta(SequenceKind::Flash, t)).unwrap(),
            approx_log_intensity(b, &theta(SequenceKind::Spgr, t)).unwrap()
        );
    }

    #[test]
    fn exp_of_ln_rho() {
        let v = approx_intensity([E, 900.0, 80.0], &theta(SequenceKind::Mprage, [0.0; 3])).unwrap();
        assert!((v - E).abs() < 1e-15);
    }

    #[test]
    fn intensity_positive_under_strong_decay() {
        let v = approx_intensity([1.0, 900.0, 1.0], &theta(SequenceKind::Flash, [0.0, 0.0, -700.0])).unwrap();
        assert!(v >= 0.0 && v < 1e-300);
    }

    #[test]
    fn domain_errors() {
        let t = theta(SequenceKind::Flash, [0.0; 3]);
        assert!(approx_log_intensity([0.0, 900.0, 80.0], &t).is_err());
        assert!(approx_log_intensity([1.0, -900.0, 80.0], &t).is_err());
        assert!(approx_log_intensity([1.0, 900.0, 0.0], &t).is_err());
        assert!(ThetaSet::new(SequenceKind::Flash, [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn theta_config_round_trip() {
        let sets = vec![
            theta(SequenceKind::Mprage, [0.2, 1e-3, -1e-7]),
            theta(SequenceKind::T2Space, [-1.5, 2.5e-4, 12.0]),
        ];
        let text: String = sets.iter().map(|s| format!("{s}\n")).collect();
        assert!(!text.contains('e'), "decimal notation expected: {text}");
        let back = ThetaSet::parse_all(&format!("# header\n{text}\n"), "mem").unwrap();
        assert_eq!(back, sets);
    }

    #[test]
    fn theta_config_errors_name_line() {
        let err = ThetaSet::parse_all("FLASH 1 2 3\nBOGUS 1 2 3\n", "t.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(ThetaSet::parse_all("FLASH 1 2\n", "t.txt").is_err());
    }

    #[test]
    fn manufactured_curve_fits_exactly() {
        let fit = fit_t1_term(SequenceKind::Flash, |t| -0.4 + 350.0 / t, (500.0, 3000.0), 40).unwrap();
        assert!((fit.coefficients[0] + 0.4).abs() < 1e-12);
        assert!((fit.coefficients[1] - 350.0).abs() < 1e-8);
        assert!(fit.max_rel_error < 1e-12);
        let fit = fit_t1_term(SequenceKind::Mprage, |t| 0.1 + 1e-3 * t - 2e-7 * t * t, (500.0, 3000.0), 30).unwrap();
        assert!(fit.max_rel_error < 1e-10);
    }

    #[test]
    fn exactly_determined_fit_interpolates() {
        let p = TheoreticalParams::Flash(TheoreticalFlashParams::new(1.0, 20.0, 5.0, 30f64.to_radians()).unwrap());
        let fit = fit_approximation_to_theory(&p, (500.0, 3000.0), 2).unwrap();
        assert!(fit.max_rel_error < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(fit_t1_term(SequenceKind::Mprage, |t| t, (500.0, 3000.0), 2).is_err());
        assert!(fit_t1_term(SequenceKind::Flash, |t| t, (0.0, 3000.0), 10).is_err());
    }

    #[test]
    fn degenerate_range_is_singular() {
        // all samples at one T1 value make the basis columns collinear
        let err = fit_t1_term(SequenceKind::Flash, |t| 1.0 / t, (1000.0, 1000.0 + 1e-9), 5);
        assert!(err.is_err());
    }
}
