//! Robust-feature theory for the Gaussian feature model.
//!
//! Data: `y` uniform on `{-1, +1}`; `x_1 = y` with probability `p` and `-y`
//! otherwise (the robust feature); `x_2..x_{n+1}` i.i.d. `N(eta*y, 1)` (the
//! non-robust features). The classifier is `sgn(w . x)`.
//!
//! Optimal classifiers weight every non-robust feature equally, so all
//! weights after the first are pinned to 1 and everything here is a function
//! of the robust weight `w1`. The robust feature weight is then
//! `W_R = w1 / n`.
//!
//! With `A(w) = (w + eta*n)/sqrt(n)` and `B(w) = (eta*n - w)/sqrt(n)`, the
//! expected 0-1 accuracy is `u(w) = p*Phi(A(w)) + (1-p)*Phi(B(w))`. It is
//! unimodal with peak `w1* = ln(p/(1-p)) / (2*eta)`. Adversarial training
//! under an ℓ∞ budget `eps < eta` sees the same function with `eta` replaced
//! by `eta - eps`. Sharpness-aware training maximizes
//! `min_{|d| <= eps} u(w + d)`, whose maximizer balances
//! `u(w - eps) = u(w + eps)`.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

/// Parameters `(p, eta, n)` of the feature model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureModelSpec {
    /// Probability that the robust feature agrees with the label, in `(0.5, 1)`.
    pub p: f64,
    /// Mean scale of the non-robust features, `> 0`.
    pub eta: f64,
    /// Number of non-robust features, `>= 1`.
    pub n: usize,
}

impl FeatureModelSpec {
    pub fn new(p: f64, eta: f64, n: usize) -> Result<Self> {
        let spec = Self { p, eta, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.5 && self.p < 1.0) {
            return Err(Error::InvalidSpec(format!("p = {} must lie in (0.5, 1)", self.p)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidSpec(format!("eta = {} must be positive", self.eta)));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        Ok(())
    }

    /// Total input dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// `ln p - ln(1 - p)`.
    pub fn log_odds(&self) -> f64 {
        self.p.ln() - (1.0 - self.p).ln()
    }
}

/// Standard normal CDF.
///
/// Evaluated as `erfc(-z/sqrt 2)/2` using the fdlibm `erfc`, whose relative
/// error stays within a few ulps over the whole real line (including the
/// tails), so the absolute error is far below `1e-12`.
pub fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Upper tail `1 - Phi(z)` without cancellation.
pub fn phi_upper(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `Phi(b) - Phi(a)`, evaluated through whichever tail keeps full relative
/// precision.
pub fn phi_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        phi_upper(a) - phi_upper(b)
    } else if b <= 0.0 {
        phi(b) - phi(a)
    } else {
        1.0 - phi_upper(b) - phi(a)
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Accuracy function for effective non-robust mean `mean`.
struct Accuracy {
    p: f64,
    shift: f64,
    sqrt_n: f64,
}

impl Accuracy {
    fn new(spec: &FeatureModelSpec, mean: f64) -> Self {
        Self {
            p: spec.p,
            shift: mean * spec.n as f64,
            sqrt_n: (spec.n as f64).sqrt(),
        }
    }

    fn a(&self, w: f64) -> f64 {
        (w + self.shift) / self.sqrt_n
    }

    fn b(&self, w: f64) -> f64 {
        (self.shift - w) / self.sqrt_n
    }

    fn value(&self, w: f64) -> f64 {
        self.p * phi(self.a(w)) + (1.0 - self.p) * phi(self.b(w))
    }

    fn slope(&self, w: f64) -> f64 {
        (self.p * normal_pdf(self.a(w)) - (1.0 - self.p) * normal_pdf(self.b(w))) / self.sqrt_n
    }

    /// `value(w - eps) - value(w + eps)` without forming either accuracy.
    fn gap(&self, w: f64, eps: f64) -> f64 {
        let robust = -self.p * phi_interval(self.a(w - eps), self.a(w + eps));
        let flipped = (1.0 - self.p) * phi_interval(self.b(w + eps), self.b(w - eps));
        robust + flipped
    }

    /// Rounding bound for [`Accuracy::gap`]: the subtracted tail values.
    fn gap_noise(&self, w: f64, eps: f64) -> f64 {
        let tail = |a: f64, b: f64| {
            if a >= 0.0 {
                phi_upper(a)
            } else if b <= 0.0 {
                phi(b)
            } else {
                1.0
            }
        };
        let scale = self.p * tail(self.a(w - eps), self.a(w + eps))
            + (1.0 - self.p) * tail(self.b(w + eps), self.b(w - eps));
        32.0 * f64::EPSILON * scale
    }
}

/// Expected clean 0-1 accuracy of `sgn(w . x)` with `w = (w1, 1, ..., 1)`.
pub fn clean_accuracy(w1: f64, spec: &FeatureModelSpec) -> Result<f64> {
    spec.validate()?;
    Ok(Accuracy::new(spec, spec.eta).value(w1))
}

/// Derivative of [`clean_accuracy`] with respect to `w1`.
pub fn clean_accuracy_slope(w1: f64, spec: &FeatureModelSpec) -> Result<f64> {
    spec.validate()?;
    Ok(Accuracy::new(spec, spec.eta).slope(w1))
}

fn check_at_budget(spec: &FeatureModelSpec, eps_at: f64) -> Result<()> {
    if !(eps_at >= 0.0 && eps_at < spec.eta) {
        return Err(Error::Precondition(format!(
            "adversarial budget eps = {eps_at} must satisfy 0 <= eps < eta = {}",
            spec.eta
        )));
    }
    Ok(())
}

/// Accuracy under the worst-case ℓ∞ perturbation `(0, -eps*y, ..., -eps*y)`.
/// Exact for `w1 >= 0` with unit non-robust weights.
pub fn adv_accuracy(w1: f64, spec: &FeatureModelSpec, eps_at: f64) -> Result<f64> {
    spec.validate()?;
    check_at_budget(spec, eps_at)?;
    Ok(Accuracy::new(spec, spec.eta - eps_at).value(w1))
}

/// `u(w - eps) - u(w + eps)`; zero at the sharpness-aware optimum.
pub fn sharpness_gap(w1: f64, eps: f64, spec: &FeatureModelSpec) -> Result<f64> {
    spec.validate()?;
    Ok(Accuracy::new(spec, spec.eta).gap(w1, eps))
}

/// A robust weight together with its robust feature weight `W_R = w1 / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustWeight {
    pub w1: f64,
    pub wr: f64,
}

impl RobustWeight {
    fn new(w1: f64, spec: &FeatureModelSpec) -> Self {
        Self {
            w1,
            wr: w1 / spec.n as f64,
        }
    }
}

/// Optimal robust weight under standard training.
pub fn wr_standard(spec: &FeatureModelSpec) -> Result<RobustWeight> {
    spec.validate()?;
    Ok(RobustWeight::new(spec.log_odds() / (2.0 * spec.eta), spec))
}

/// Optimal robust weight under ℓ∞ adversarial training with budget `eps_at < eta`.
pub fn wr_at(spec: &FeatureModelSpec, eps_at: f64) -> Result<RobustWeight> {
    spec.validate()?;
    check_at_budget(spec, eps_at)?;
    Ok(RobustWeight::new(
        spec.log_odds() / (2.0 * (spec.eta - eps_at)),
        spec,
    ))
}

/// How the sharpness-aware root was found.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverDiagnostics {
    /// Final bracket.
    pub bracket: (f64, f64),
    /// Bisection iterations.
    pub iterations: usize,
    /// `|u(w - eps) - u(w + eps)|` at the returned point.
    pub residual: f64,
    /// Number of times the initial upper end `w1* + eps` had to be pushed out.
    pub bracket_extensions: usize,
    /// `w1* - w1_sam + eps`.
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamSolution {
    pub weight: RobustWeight,
    pub diagnostics: SolverDiagnostics,
}

const BISECTION_WIDTH: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const MAX_EXTENSIONS: usize = 60;

/// Sharpness-aware robust weight, by bisection on `u(w - eps) - u(w + eps)`
/// over `[w1*, w1* + eps]`.
///
/// The gap is negative at `w1*` (the peak is skewed toward larger weights)
/// and positive at `w1* + eps` (where it equals `u(w1*) - u(w1* + 2 eps)`).
/// Should rounding make the upper end non-positive, it is pushed out
/// geometrically and the number of pushes is reported. For radii so small
/// that the gap at `w1*` is below rounding, a non-negative value there is
/// accepted as long as it is within the rounding error of the tails it
/// subtracts.
pub fn wr_sam_numeric(spec: &FeatureModelSpec, eps_sam: f64) -> Result<SamSolution> {
    let standard = wr_standard(spec)?;
    if !(eps_sam >= 0.0 && eps_sam.is_finite()) {
        return Err(Error::Precondition(format!(
            "weight perturbation radius eps = {eps_sam} must be non-negative"
        )));
    }
    if eps_sam == 0.0 {
        return Ok(SamSolution {
            weight: standard,
            diagnostics: SolverDiagnostics {
                bracket: (standard.w1, standard.w1),
                ..Default::default()
            },
        });
    }

    let acc = Accuracy::new(spec, spec.eta);
    let g = |w: f64| acc.gap(w, eps_sam);

    let mut lo = standard.w1;
    let g_lo = g(lo);
    let mut hi = lo + eps_sam;
    let mut g_hi = g(hi);
    let mut extensions = 0;
    while g_hi <= 0.0 && extensions < MAX_EXTENSIONS {
        extensions += 1;
        hi = lo + eps_sam * 2f64.powi(extensions as i32);
        g_hi = g(hi);
    }
    if !(g_lo <= acc.gap_noise(lo, eps_sam) && g_hi > 0.0) {
        return Err(Error::Bracket { lo, hi, g_lo, g_hi });
    }

    let mut iterations = 0;
    while hi - lo > BISECTION_WIDTH && iterations < MAX_BISECTIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let g_mid = g(mid);
        if g_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if g_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let w1 = lo + 0.5 * (hi - lo);
    Ok(SamSolution {
        weight: RobustWeight::new(w1, spec),
        diagnostics: SolverDiagnostics {
            bracket: (lo, hi),
            iterations,
            residual: g(w1).abs(),
            bracket_extensions: extensions,
            h: standard.w1 - w1 + eps_sam,
        },
    })
}

/// Small-radius expansion `W_R* (1 + 2/3 eps^2)` of the sharpness-aware
/// robust feature weight, taken literally in the unnormalized variable.
pub fn wr_sam_approx(spec: &FeatureModelSpec, eps_sam: f64) -> Result<f64> {
    let standard = wr_standard(spec)?;
    if !(eps_sam >= 0.0 && eps_sam.is_finite()) {
        return Err(Error::Precondition(format!(
            "weight perturbation radius eps = {eps_sam} must be non-negative"
        )));
    }
    Ok(standard.wr * (1.0 + 2.0 / 3.0 * eps_sam * eps_sam))
}

/// Second-order expansion with the Gaussian variance `n` kept in the Taylor
/// coefficients: `W_R* (1 + eps^2 / (3n))`.
///
/// Balancing `u(w - eps) = u(w + eps)` to leading order gives a shift of
/// `-u'''(w1*) eps^2 / (6 u''(w1*))`, and at the peak `u'''/u'' = -2 w1*/n`.
/// This tracks [`wr_sam_numeric`] to fourth order in `eps`, unlike
/// [`wr_sam_approx`].
pub fn wr_sam_second_order(spec: &FeatureModelSpec, eps_sam: f64) -> Result<f64> {
    let standard = wr_standard(spec)?;
    if !(eps_sam >= 0.0 && eps_sam.is_finite()) {
        return Err(Error::Precondition(format!(
            "weight perturbation radius eps = {eps_sam} must be non-negative"
        )));
    }
    Ok(standard.wr * (1.0 + eps_sam * eps_sam / (3.0 * spec.n as f64)))
}

/// Adversarial budgets that give the same robust feature weight as
/// sharpness-aware training with radius `eps_sam`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonMatch {
    /// `2 eta / (2 + 3 / eps_sam^2)`.
    pub approx: f64,
    /// Budget at which the closed-form AT weight equals the numeric SAM weight.
    pub exact: f64,
}

pub fn eps_at_equivalent(spec: &FeatureModelSpec, eps_sam: f64) -> Result<EpsilonMatch> {
    spec.validate()?;
    if !(eps_sam > 0.0 && eps_sam.is_finite()) {
        return Err(Error::Precondition(format!(
            "eps_sam = {eps_sam} must be positive"
        )));
    }
    let approx = 2.0 * spec.eta / (2.0 + 3.0 / (eps_sam * eps_sam));
    let sam = wr_sam_numeric(spec, eps_sam)?;
    // w1_at(eps) = log_odds / (2 (eta - eps)) solved for eps.
    let exact = spec.eta - spec.log_odds() / (2.0 * sam.weight.w1);
    Ok(EpsilonMatch { approx, exact })
}

/// Robust feature weight `w_1 / (w_2 + ... + w_{n+1})` of a weight vector.
pub fn estimate_wr(weights: &[f64]) -> Result<f64> {
    if weights.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least two weights, got {}",
            weights.len()
        )));
    }
    let denom: f64 = weights[1..].iter().sum();
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateRatio(denom));
    }
    Ok(weights[0] / denom)
}

/// All robust feature weights for one spec and one perturbation size, which
/// is used as both the adversarial budget and the weight radius.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub spec: FeatureModelSpec,
    pub eps: f64,
    pub w1_star: f64,
    pub wr_star: f64,
    pub w1_at: f64,
    pub wr_at: f64,
    pub w1_sam: f64,
    pub wr_sam_numeric: f64,
    pub wr_sam_approx: f64,
    /// Adversarial budget matching `eps` used as the weight radius.
    pub eps_at_equiv: f64,
    pub eps_at_exact: f64,
    pub diagnostics: SolverDiagnostics,
}

impl TheoryReport {
    pub fn compute(spec: &FeatureModelSpec, eps: f64) -> Result<Self> {
        let standard = wr_standard(spec)?;
        let at = wr_at(spec, eps)?;
        let sam = wr_sam_numeric(spec, eps)?;
        let matched = if eps > 0.0 {
            eps_at_equivalent(spec, eps)?
        } else {
            EpsilonMatch {
                approx: 0.0,
                exact: 0.0,
            }
        };
        Ok(Self {
            spec: *spec,
            eps,
            w1_star: standard.w1,
            wr_star: standard.wr,
            w1_at: at.w1,
            wr_at: at.wr,
            w1_sam: sam.weight.w1,
            wr_sam_numeric: sam.weight.wr,
            wr_sam_approx: wr_sam_approx(spec, eps)?,
            eps_at_equiv: matched.approx,
            eps_at_exact: matched.exact,
            diagnostics: sam.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FeatureModelSpec {
        FeatureModelSpec::new(0.9, 0.1, 10).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(FeatureModelSpec::new(0.5, 0.1, 10).is_err());
        assert!(FeatureModelSpec::new(1.0, 0.1, 10).is_err());
        assert!(FeatureModelSpec::new(0.9, 0.0, 10).is_err());
        assert!(FeatureModelSpec::new(0.9, 0.1, 0).is_err());
        assert!(clean_accuracy(0.0, &FeatureModelSpec { p: 0.2, eta: 0.1, n: 3 }).is_err());
    }

    #[test]
    fn phi_symmetry() {
        assert_eq!(phi(0.0), 0.5);
        for &z in &[0.1, 0.7, 1.3, 2.9, 5.5, 8.0] {
            assert!((phi(-z) - (1.0 - phi(z))).abs() < 1e-14);
        }
    }

    #[test]
    fn phi_interval_matches_direct_difference() {
        for &(a, b) in &[(-1.0, 0.5), (0.2, 0.9), (-3.0, -2.5), (-0.1, 0.1)] {
            assert!((phi_interval(a, b) - (phi(b) - phi(a))).abs() < 1e-15);
        }
        // Far tail where the direct difference is lost entirely.
        let d = phi_interval(10.0, 10.1);
        assert!(d > 0.0 && phi(10.1) - phi(10.0) == 0.0);
    }

    #[test]
    fn clean_accuracy_at_zero_weight() {
        let s = spec();
        let expect = phi(s.eta * (s.n as f64).sqrt());
        assert!((clean_accuracy(0.0, &s).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn clean_accuracy_tends_to_p() {
        let s = spec();
        assert!((clean_accuracy(1e4, &s).unwrap() - s.p).abs() < 1e-12);
    }

    #[test]
    fn adv_accuracy_zero_budget_is_clean() {
        let s = spec();
        for &w in &[-2.0, 0.0, 3.0, 10.986] {
            assert_eq!(adv_accuracy(w, &s, 0.0).unwrap(), clean_accuracy(w, &s).unwrap());
        }
    }

    #[test]
    fn adv_accuracy_below_clean() {
        let s = spec();
        for &w in &[0.5, 2.0, 10.0] {
            assert!(adv_accuracy(w, &s, 0.05).unwrap() < clean_accuracy(w, &s).unwrap());
        }
    }

    #[test]
    fn adv_budget_must_be_below_eta() {
        let s = spec();
        assert!(adv_accuracy(1.0, &s, 0.1).is_err());
        assert!(wr_at(&s, 0.2).is_err());
        assert!(wr_at(&s, -0.01).is_err());
    }

    #[test]
    fn standard_weight_values() {
        let r = wr_standard(&spec()).unwrap();
        assert!((r.w1 - 10.986_122_886_681_098).abs() < 1e-12);
        assert!((r.wr - 1.098_612_288_668_109_8).abs() < 1e-13);
    }

    #[test]
    fn standard_weight_vanishes_near_half() {
        let r = wr_standard(&FeatureModelSpec::new(0.5 + 1e-9, 0.1, 10).unwrap()).unwrap();
        assert!(r.w1.abs() < 1e-6 && r.wr.abs() < 1e-7);
    }

    #[test]
    fn doubling_eta_halves_weight() {
        let a = wr_standard(&FeatureModelSpec::new(0.75, 0.1, 5).unwrap()).unwrap();
        let b = wr_standard(&FeatureModelSpec::new(0.75, 0.2, 5).unwrap()).unwrap();
        assert!((a.wr - 2.0 * b.wr).abs() < 1e-14);
    }

    #[test]
    fn at_weight_values() {
        let s = spec();
        assert_eq!(wr_at(&s, 0.0).unwrap(), wr_standard(&s).unwrap());
        let at = wr_at(&s, 0.05).unwrap();
        assert!((at.wr - 2.197_224_577_336_219_6).abs() < 1e-12);
        let st = wr_standard(&s).unwrap();
        assert!((at.wr / st.wr - s.eta / (s.eta - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn sam_zero_radius_is_standard() {
        let s = spec();
        assert_eq!(wr_sam_numeric(&s, 0.0).unwrap().weight, wr_standard(&s).unwrap());
        assert_eq!(wr_sam_approx(&s, 0.0).unwrap(), wr_standard(&s).unwrap().wr);
    }

    #[test]
    fn sam_exceeds_standard_and_balances_gap() {
        let s = spec();
        let st = wr_standard(&s).unwrap();
        for &eps in &[0.01, 0.1, 0.5, 2.0] {
            let sol = wr_sam_numeric(&s, eps).unwrap();
            assert!(sol.weight.wr > st.wr, "eps = {eps}");
            assert!(sol.diagnostics.residual < 1e-10);
            let u = |w| clean_accuracy(w, &s).unwrap();
            assert!((u(sol.weight.w1 - eps) - u(sol.weight.w1 + eps)).abs() < 1e-10);
        }
    }

    #[test]
    fn sam_rejects_negative_radius() {
        assert!(wr_sam_numeric(&spec(), -0.1).is_err());
        assert!(wr_sam_approx(&spec(), -0.1).is_err());
    }

    #[test]
    fn approx_value() {
        let v = wr_sam_approx(&spec(), 0.1).unwrap();
        assert!((v - 1.098_612_288_668_11 * (1.0 + 0.02 / 3.0)).abs() < 1e-12);
        assert!((v - 1.10594).abs() < 1e-5);
    }

    #[test]
    fn eps_match_values() {
        let m = eps_at_equivalent(&spec(), 0.1).unwrap();
        assert!((m.approx - 0.2 / 302.0).abs() < 1e-16);
        assert!(m.approx < 0.1);
        assert!(eps_at_equivalent(&spec(), 0.0).is_err());
        let tiny = eps_at_equivalent(&spec(), 1e-3).unwrap();
        assert!(tiny.approx < 1e-6);
    }

    #[test]
    fn estimate_wr_cases() {
        let mut w = vec![1.0; 11];
        w[0] = 2.0;
        assert!((estimate_wr(&w).unwrap() - 0.2).abs() < 1e-15);
        assert!((estimate_wr(&[1.0; 11]).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(
            estimate_wr(&[1.0, 0.5, -0.5]),
            Err(Error::DegenerateRatio(_))
        ));
        assert!(estimate_wr(&[1.0]).is_err());
    }

    #[test]
    fn report_at_zero_eps_collapses() {
        let r = TheoryReport::compute(&spec(), 0.0).unwrap();
        assert_eq!(r.wr_at, r.wr_star);
        assert_eq!(r.wr_sam_numeric, r.wr_star);
        assert_eq!(r.wr_sam_approx, r.wr_star);
        assert_eq!(r.eps_at_equiv, 0.0);
    }
}
