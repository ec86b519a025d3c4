//! Monte Carlo checks of the gradient-signal and ranking results on a
//! single-parameter Bernoulli policy.
//!
//! Every experiment is a pure function of its parameters and an
//! [`RngStream`], so a report is reproducible from the seed alone.

use rayon::prelude::*;

use crate::env::env_reward;
use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};

/// Monte Carlo tolerance, in standard errors.
pub const MC_SIGMAS: f64 = 3.0;

/// Comparisons between empirical rates `k/n` and thresholds treat values
/// this close as equal, so decimal thresholds such as 0.1 behave as written.
const RATE_TOLERANCE: f64 = 1e-12;

pub fn logistic(theta: f64) -> f64 {
    1.0 / (1.0 + (-theta).exp())
}

/// `pi(r = 1) = logistic(theta)`. The score of outcome `r` is `r - p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliPolicy {
    pub theta: f64,
}

impl BernoulliPolicy {
    pub fn new(theta: f64) -> Self {
        BernoulliPolicy { theta }
    }

    pub fn from_prob(p: f64) -> Result<Self> {
        check_open_unit(p, "p")?;
        Ok(BernoulliPolicy {
            theta: (p / (1.0 - p)).ln(),
        })
    }

    pub fn p(&self) -> f64 {
        logistic(self.theta)
    }

    pub fn score(&self, success: bool) -> f64 {
        f64::from(u8::from(success)) - self.p()
    }

    /// Smallest squared score over the two outcomes.
    pub fn c_min(&self) -> f64 {
        let p = self.p();
        (p * p).min((1.0 - p) * (1.0 - p))
    }

    pub fn c_max(&self) -> f64 {
        let p = self.p();
        (p * p).max((1.0 - p) * (1.0 - p))
    }
}

fn check_open_unit(p: f64, name: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {p} must lie in (0, 1)")))
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    fn from_sums(sum: f64, sum_sq: f64, samples: usize) -> Estimate {
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / n).sqrt(),
            samples,
        }
    }
}

/// Estimates `E[|g|^2]` with `g = (r - p) * score = (r - p)^2`, i.e. `E[(r - p)^4]`.
pub fn grad_signal_sq(p: f64, samples: usize, rng: &mut RngStream) -> Result<Estimate> {
    check_open_unit(p, "p")?;
    if samples == 0 {
        return Err(Error::invalid("grad_signal_sq needs at least one sample"));
    }
    let policy = BernoulliPolicy::from_prob(p)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let s = policy.score(rng.bernoulli(p));
        let g2 = (s * s) * (s * s);
        sum += g2;
        sum_sq += g2 * g2;
    }
    Ok(Estimate::from_sums(sum, sum_sq, samples))
}

/// `E[(r - p)^4] = p(1-p)((1-p)^3 + p^3)`.
pub fn grad_signal_closed_form(p: f64) -> f64 {
    let q = 1.0 - p;
    p * q * (q * q * q + p * p * p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRow {
    pub p: f64,
    pub estimate: Estimate,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    /// Grid point with the largest estimate.
    pub argmax_p: f64,
    /// Whether `argmax_p` is at most one grid cell from the point nearest 0.5.
    pub argmax_pass: bool,
    /// Grid point maximising the estimate divided by `(1-p)^3 + p^3`,
    /// which isolates the `p(1-p)` factor.
    pub factor_argmax_p: f64,
    pub factor_argmax_pass: bool,
}

impl SandwichReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.argmax_pass
    }

    pub fn failures(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| !r.pass).map(|r| r.p).collect()
    }
}

/// Checks `c_min p(1-p) <= E|g|^2 <= c_max p(1-p)` within [`MC_SIGMAS`]
/// standard errors at every grid point, and where the maximum falls.
pub fn check_variance_sandwich(p_grid: &[f64], samples: usize, seed: u64) -> Result<SandwichReport> {
    if p_grid.is_empty() {
        return Err(Error::invalid("variance sandwich needs a non-empty grid"));
    }
    let rows = p_grid
        .par_iter()
        .map(|&p| {
            let mut rng = derive_stream(seed, &format!("theory-sandwich-p{p}"));
            let estimate = grad_signal_sq(p, samples, &mut rng)?;
            let policy = BernoulliPolicy::from_prob(p)?;
            let factor = p * (1.0 - p);
            let (lower, upper) = (policy.c_min() * factor, policy.c_max() * factor);
            let slack = MC_SIGMAS * estimate.std_err;
            let pass = estimate.mean >= lower - slack && estimate.mean <= upper + slack;
            Ok(SandwichRow {
                p,
                estimate,
                lower,
                upper,
                pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let argmax = |value: &dyn Fn(&SandwichRow) -> f64| -> usize {
        let mut best = 0;
        for (i, r) in rows.iter().enumerate() {
            if value(r) > value(&rows[best]) {
                best = i;
            }
        }
        best
    };
    let centre = nearest_index(p_grid, 0.5);
    let raw = argmax(&|r| r.estimate.mean);
    let factor = argmax(&|r| r.estimate.mean / grad_signal_closed_form(r.p) * r.p * (1.0 - r.p));
    Ok(SandwichReport {
        argmax_p: rows[raw].p,
        argmax_pass: raw.abs_diff(centre) <= 1,
        factor_argmax_p: rows[factor].p,
        factor_argmax_pass: factor.abs_diff(centre) <= 1,
        rows,
    })
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// Both sides of `p(1-p) = 1/4 - (p - 1/2)^2`.
pub fn alpha_identity(p: f64) -> (f64, f64) {
    (p * (1.0 - p), 0.25 - (p - 0.5) * (p - 0.5))
}

/// Largest gap between the two sides over `p = 0, step, 2 step, ..., 1`.
pub fn max_alpha_identity_gap(step: f64) -> Result<f64> {
    if step.is_nan() || step <= 0.0 || step > 1.0 {
        return Err(Error::invalid(format!("grid step {step} must lie in (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n)
        .map(|i| {
            let (lhs, rhs) = alpha_identity(i as f64 / n as f64);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max))
}

/// Two tasks with true success rates `p1` (closer to `alpha`) and `p2`,
/// each estimated from `n` rollouts, repeated `trials` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingExperiment {
    pub p1: f64,
    pub p2: f64,
    pub alpha: f64,
    pub n: usize,
    pub trials: usize,
}

impl RankingExperiment {
    pub fn delta1(&self) -> f64 {
        (self.p1 - self.alpha).abs()
    }

    pub fn delta2(&self) -> f64 {
        (self.p2 - self.alpha).abs()
    }

    pub fn delta_margin(&self) -> f64 {
        (self.delta2() - self.delta1()) / 3.0
    }

    pub fn bound(&self) -> f64 {
        ranking_bound(self.delta1(), self.delta2(), self.n)
    }

    fn validate(&self) -> Result<()> {
        check_open_unit(self.p1, "p1")?;
        check_open_unit(self.p2, "p2")?;
        if self.delta1() >= self.delta2() {
            return Err(Error::invalid(format!(
                "ranking needs |p1 - alpha| < |p2 - alpha|, got {} and {}",
                self.delta1(),
                self.delta2()
            )));
        }
        if self.n == 0 || self.trials == 0 {
            return Err(Error::invalid("ranking needs n >= 1 and trials >= 1"));
        }
        Ok(())
    }
}

/// `min(1, 4 exp(-(2/9) (delta2 - delta1)^2 n))`.
pub fn ranking_bound(delta1: f64, delta2: f64, n: usize) -> f64 {
    let gap = delta2 - delta1;
    (4.0 * (-(2.0 / 9.0) * gap * gap * n as f64).exp()).min(1.0)
}

/// `2 exp(-2 n delta^2)`, not clamped.
pub fn hoeffding_bound(n: usize, delta: f64) -> f64 {
    2.0 * (-2.0 * n as f64 * delta * delta).exp()
}

pub fn mc_slack(empirical: f64, trials: usize) -> f64 {
    MC_SIGMAS * (empirical * (1.0 - empirical) / trials as f64).sqrt()
}

/// True when task 1 fails to outrank task 2, i.e. its environment reward is
/// not strictly larger. Ties count as mis-rankings.
///
/// Decided on `|p_hat - alpha|`, which orders rewards the same way for any
/// `beta > 0`, so mirror-image rates tie exactly.
pub fn misranked(p1_hat: f64, p2_hat: f64, alpha: f64) -> bool {
    (p1_hat - alpha).abs() >= (p2_hat - alpha).abs() - RATE_TOLERANCE
}

/// An empirical frequency against its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub trials: usize,
}

impl TailCheck {
    fn new(hits: usize, trials: usize, bound: f64) -> TailCheck {
        let empirical = hits as f64 / trials as f64;
        TailCheck {
            empirical,
            bound,
            slack: mc_slack(empirical, trials),
            trials,
        }
    }

    pub fn pass(&self) -> bool {
        self.empirical <= self.bound + self.slack
    }
}

fn binomial_rate(p: f64, n: usize, rng: &mut RngStream) -> f64 {
    (0..n).filter(|_| rng.bernoulli(p)).count() as f64 / n as f64
}

pub fn misranking_probability(exp: &RankingExperiment, rng: &mut RngStream) -> Result<TailCheck> {
    exp.validate()?;
    let hits = (0..exp.trials)
        .filter(|_| {
            let p1_hat = binomial_rate(exp.p1, exp.n, rng);
            let p2_hat = binomial_rate(exp.p2, exp.n, rng);
            misranked(p1_hat, p2_hat, exp.alpha)
        })
        .count();
    Ok(TailCheck::new(hits, exp.trials, exp.bound()))
}

/// Frequency of `|p_hat - p| > delta` over `trials` estimates from `n` draws.
pub fn hoeffding_tail(p: f64, n: usize, delta: f64, trials: usize, rng: &mut RngStream) -> Result<TailCheck> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p = {p} must lie in [0, 1]")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid(format!("delta = {delta} must be positive")));
    }
    if n == 0 || trials == 0 {
        return Err(Error::invalid("hoeffding_tail needs n >= 1 and trials >= 1"));
    }
    let hits = (0..trials)
        .filter(|_| (binomial_rate(p, n, rng) - p).abs() > delta + RATE_TOLERANCE)
        .count();
    Ok(TailCheck::new(hits, trials, hoeffding_bound(n, delta)))
}

/// Sanity check that [`misranked`] agrees with comparing rewards directly,
/// over every pair of rates `i/n`.
pub fn ranking_lemma_holds(alpha: f64, beta: f64, n: usize) -> bool {
    let rates: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    rates.iter().all(|&a| {
        rates.iter().all(|&b| {
            let (ra, rb) = (env_reward(a, alpha, beta), env_reward(b, alpha, beta));
            let (da, db) = ((a - alpha).abs(), (b - alpha).abs());
            // Only pairs whose distances differ clearly are compared, ties
            // are covered by the tolerance in `misranked`.
            (da - db).abs() < 1e-9 || ((ra <= rb) == misranked(a, b, alpha))
        })
    })
}

/// Sizes of the full verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub sandwich_samples: usize,
    pub ranking_trials: usize,
    pub hoeffding_trials: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 7,
            sandwich_samples: 100_000,
            ranking_trials: 10_000,
            hoeffding_trials: 10_000,
        }
    }
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub params: String,
    pub empirical: f64,
    pub bound: f64,
    pub pass: bool,
}

pub const REPORT_HEADER: &str = "experiment,params,empirical,bound,pass";

pub fn sandwich_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub const RANKING_NS: [usize; 5] = [25, 50, 100, 200, 400];

/// Runs the ranking grid for one `(p1, p2)` pair and checks that the
/// empirical rate does not grow with `n`.
pub fn ranking_sweep(p1: f64, p2: f64, alpha: f64, ns: &[usize], trials: usize, seed: u64) -> Result<Vec<TailCheck>> {
    ns.par_iter()
        .map(|&n| {
            let exp = RankingExperiment { p1, p2, alpha, n, trials };
            let mut rng = derive_stream(seed, &format!("theory-ranking-p1{p1}-p2{p2}-n{n}"));
            misranking_probability(&exp, &mut rng)
        })
        .collect()
}

pub fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();

    let grid = sandwich_grid();
    let sandwich = check_variance_sandwich(&grid, cfg.sandwich_samples, cfg.seed)?;
    for r in &sandwich.rows {
        rows.push(ReportRow {
            experiment: "variance-sandwich".into(),
            params: format!("p={};samples={};lower={:.10}", r.p, r.estimate.samples, r.lower),
            empirical: r.estimate.mean,
            bound: r.upper,
            pass: r.pass,
        });
    }
    rows.push(ReportRow {
        experiment: "variance-argmax".into(),
        params: "grid=0.1..0.9;target=0.5;tolerance=1 cell".into(),
        empirical: sandwich.argmax_p,
        bound: 0.5,
        pass: sandwich.argmax_pass,
    });
    rows.push(ReportRow {
        experiment: "variance-factor-argmax".into(),
        params: "grid=0.1..0.9;target=0.5;tolerance=1 cell".into(),
        empirical: sandwich.factor_argmax_p,
        bound: 0.5,
        pass: sandwich.factor_argmax_pass,
    });
    let half = sandwich.rows[nearest_index(&grid, 0.5)].estimate;
    rows.push(ReportRow {
        experiment: "grad-signal-closed-form".into(),
        params: format!("p=0.5;samples={}", half.samples),
        empirical: half.mean,
        bound: grad_signal_closed_form(0.5),
        pass: (half.mean - grad_signal_closed_form(0.5)).abs() <= MC_SIGMAS * half.std_err + 1e-15,
    });

    let gap = max_alpha_identity_gap(1e-3)?;
    rows.push(ReportRow {
        experiment: "alpha-identity".into(),
        params: "step=0.001".into(),
        empirical: gap,
        bound: 1e-14,
        pass: gap < 1e-14,
    });

    for p2 in [0.8, 0.9] {
        let checks = ranking_sweep(0.6, p2, 0.5, &RANKING_NS, cfg.ranking_trials, cfg.seed)?;
        for (n, c) in RANKING_NS.iter().zip(&checks) {
            rows.push(ReportRow {
                experiment: "ranking-bound".into(),
                params: format!("p1=0.6;p2={p2};alpha=0.5;n={n};trials={}", c.trials),
                empirical: c.empirical,
                bound: c.bound,
                pass: c.pass(),
            });
        }
        let empirical: Vec<f64> = checks.iter().map(|c| c.empirical).collect();
        rows.push(ReportRow {
            experiment: "ranking-monotone-in-n".into(),
            params: format!("p1=0.6;p2={p2};alpha=0.5;n=25..400"),
            empirical: empirical.last().copied().unwrap_or(0.0),
            bound: empirical[0],
            pass: non_increasing(&empirical),
        });
    }

    let mut hoeffding = Vec::new();
    for p in [0.3, 0.5, 0.7] {
        for n in [50, 200] {
            for delta in [0.05, 0.1] {
                hoeffding.push((p, n, delta));
            }
        }
    }
    let tails = hoeffding
        .par_iter()
        .map(|&(p, n, delta)| {
            let mut rng = derive_stream(cfg.seed, &format!("theory-hoeffding-p{p}-n{n}-d{delta}"));
            hoeffding_tail(p, n, delta, cfg.hoeffding_trials, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    for (&(p, n, delta), c) in hoeffding.iter().zip(&tails) {
        rows.push(ReportRow {
            experiment: "hoeffding-tail".into(),
            params: format!("p={p};n={n};delta={delta};trials={}", c.trials),
            empirical: c.empirical,
            bound: c.bound,
            pass: c.pass(),
        });
    }
    Ok(rows)
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.experiment,
            r.params,
            crate::metrics::format_real(r.empirical),
            crate::metrics::format_real(r.bound),
            if r.pass { "pass" } else { "fail" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values() {
        assert_abs_diff_eq!(grad_signal_closed_form(0.5), 0.0625, epsilon = 1e-15);
        let p = 0.3;
        let direct = p * 0.7f64.powi(4) + 0.7 * p.powi(4);
        assert_abs_diff_eq!(grad_signal_closed_form(p), direct, epsilon = 1e-15);
    }

    #[test]
    fn estimate_matches_closed_form() {
        for p in [0.1, 0.5, 0.9] {
            let mut rng = derive_stream(3, "g");
            let e = grad_signal_sq(p, 100_000, &mut rng).unwrap();
            assert!((e.mean - grad_signal_closed_form(p)).abs() <= MC_SIGMAS * e.std_err + 1e-15);
        }
    }

    #[test]
    fn degenerate_policies_have_no_signal() {
        let mut rng = derive_stream(3, "edge");
        assert!(grad_signal_sq(1e-6, 10_000, &mut rng).unwrap().mean < 1e-5);
        assert!(grad_signal_sq(1.0 - 1e-6, 10_000, &mut rng).unwrap().mean < 1e-5);
        assert!(grad_signal_sq(0.0, 10, &mut rng).is_err());
        assert!(grad_signal_sq(0.5, 0, &mut rng).is_err());
    }

    #[test]
    fn score_bounds_are_tight_at_half() {
        let pi = BernoulliPolicy::from_prob(0.5).unwrap();
        assert_abs_diff_eq!(pi.theta, 0.0);
        assert_eq!(pi.c_min(), 0.25);
        assert_eq!(pi.c_max(), 0.25);
        assert_eq!(pi.score(true), 0.5);
        assert_eq!(pi.score(false), -0.5);
    }

    #[test]
    fn sandwich_rejects_empty_grid() {
        assert!(check_variance_sandwich(&[], 10, 1).is_err());
    }

    #[test]
    fn sandwich_holds_on_grid() {
        let report = check_variance_sandwich(&sandwich_grid(), 20_000, 5).unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
        assert!(report.factor_argmax_pass);
    }

    #[test]
    fn alpha_identity_examples() {
        let (l, r) = alpha_identity(0.3);
        assert_abs_diff_eq!(l, 0.21, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.21, epsilon = 1e-15);
        assert_eq!(alpha_identity(0.5), (0.25, 0.25));
        assert_eq!(alpha_identity(1.0), (0.0, 0.0));
        assert!(max_alpha_identity_gap(1e-3).unwrap() < 1e-14);
        assert!(max_alpha_identity_gap(0.0).is_err());
    }

    #[test]
    fn ranking_bound_values() {
        assert_abs_diff_eq!(ranking_bound(0.1, 0.4, 200), 4.0 * (-4.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(ranking_bound(0.1, 0.4, 200), 0.0732626, epsilon = 1e-7);
        assert_eq!(ranking_bound(0.1, 0.4, 50), 1.0);
        assert!(ranking_bound(0.1, 0.5, 100) < ranking_bound(0.1, 0.3, 100));
    }

    #[test]
    fn hoeffding_bound_values() {
        assert_abs_diff_eq!(hoeffding_bound(100, 0.1), 0.2706706, epsilon = 1e-7);
        let b = hoeffding_bound(100, 0.1);
        assert_abs_diff_eq!(hoeffding_bound(200, 0.1), b * b / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn hoeffding_wide_delta_never_hits() {
        let mut rng = derive_stream(1, "h");
        assert_eq!(hoeffding_tail(0.5, 20, 1.0, 1000, &mut rng).unwrap().empirical, 0.0);
        assert!(hoeffding_tail(0.5, 20, 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn ranking_requires_ordered_gaps() {
        let exp = RankingExperiment {
            p1: 0.9,
            p2: 0.6,
            alpha: 0.5,
            n: 10,
            trials: 10,
        };
        assert!(misranking_probability(&exp, &mut derive_stream(1, "r")).is_err());
    }

    #[test]
    fn ties_are_misrankings() {
        assert!(misranked(0.4, 0.6, 0.5));
        assert!(misranked(0.5, 0.5, 0.5));
        assert!(!misranked(0.5, 0.6, 0.5));
    }

    #[test]
    fn ranking_lemma_on_fine_grid() {
        for alpha in [0.3, 0.5, 0.7] {
            assert!(ranking_lemma_holds(alpha, 4.0, 400));
        }
    }

    #[test]
    fn suite_rows_are_reproducible() {
        let cfg = SuiteConfig {
            seed: 11,
            sandwich_samples: 2_000,
            ranking_trials: 200,
            hoeffding_trials: 200,
        };
        let a = render_report(&run_suite(&cfg).unwrap());
        assert_eq!(a, render_report(&run_suite(&cfg).unwrap()));
        assert!(a.starts_with(REPORT_HEADER));
        assert_eq!(a.lines().count(), 1 + 9 + 3 + 1 + 12 + 12);
    }

    proptest! {
        #[test]
        fn closed_form_inside_sandwich(p in 0.01f64..0.99) {
            let pi = BernoulliPolicy::from_prob(p).unwrap();
            let f = p * (1.0 - p);
            let v = grad_signal_closed_form(p);
            prop_assert!(v >= pi.c_min() * f - 1e-15);
            prop_assert!(v <= pi.c_max() * f + 1e-15);
        }

        #[test]
        fn identity_holds_everywhere(p in 0.0f64..=1.0) {
            let (l, r) = alpha_identity(p);
            prop_assert!((l - r).abs() < 1e-15);
        }

        #[test]
        fn logistic_round_trip(p in 0.001f64..0.999) {
            let pi = BernoulliPolicy::from_prob(p).unwrap();
            prop_assert!((pi.p() - p).abs() < 1e-12);
        }
    }
}
