//! Noise schedules: the training schedule `β_1..β_T` with its cumulative
//! scales, and the short inference schedule `β̂_1..β̂_N` whose scales are
//! anchored at the noisy end.

use std::fmt::Write as _;

use crate::error::{check_open_unit, Error, Result};
use crate::numerics::tensor::fmt_f64;

/// `α_t = Π_{i≤t} √(1 − β_i)`.
pub fn alphas_from_betas(betas: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(betas.len());
    let mut a = 1.0;
    for &b in betas {
        check_open_unit("beta", b)?;
        a *= (1.0 - b).sqrt();
        out.push(a);
    }
    Ok(out)
}

/// Training-time schedule, indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Invalid("schedule needs at least one step".into()));
        }
        let alphas = alphas_from_betas(&betas)?;
        if alphas.iter().any(|&a| a <= 0.0) {
            return Err(Error::Invalid("cumulative scale underflowed to zero".into()));
        }
        Ok(Self { betas, alphas })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `α_t` for `0 ≤ t ≤ T`, with `α_0 = 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }
}

/// `β_t = eps / (T − t + 1)`, so `β_T = eps` and the scales grow toward the
/// noisy end.
pub fn linear_schedule(steps: usize, eps: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Invalid("schedule length must be at least 1".into()));
    }
    check_open_unit("eps", eps)?;
    let betas = (1..=steps)
        .map(|t| eps / (steps - t + 1) as f64)
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Largest admissible `β̂_n` given the scales one step noisier:
/// `min{1 − α̂²/(1 − β̂), β̂}`.
pub fn beta_upper_bound(alpha_next: f64, beta_next: f64) -> Result<f64> {
    check_open_unit("alpha_next", alpha_next)?;
    check_open_unit("beta_next", beta_next)?;
    if alpha_next * alpha_next >= 1.0 - beta_next {
        return Err(Error::InconsistentScales(format!(
            "alpha^2 = {} >= 1 - beta = {}",
            alpha_next * alpha_next,
            1.0 - beta_next
        )));
    }
    let first = 1.0 - alpha_next * alpha_next / (1.0 - beta_next);
    Ok(first.min(beta_next))
}

/// Sampling schedule with `N` steps. Index `n - 1` holds `β̂_n` and `α̂_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSchedule {
    beta_hats: Vec<f64>,
    alpha_hats: Vec<f64>,
}

impl InferenceSchedule {
    /// Scales anchored at the noisy end: `α̂_n = α̂_{n+1} / √(1 − β̂_{n+1})`.
    pub fn from_backward(beta_hats: Vec<f64>, alpha_last: f64) -> Result<Self> {
        if beta_hats.is_empty() {
            return Err(Error::DegenerateInit);
        }
        check_open_unit("alpha_N", alpha_last)?;
        for &b in &beta_hats {
            check_open_unit("beta_hat", b)?;
        }
        let n = beta_hats.len();
        let mut alpha_hats = vec![0.0; n];
        alpha_hats[n - 1] = alpha_last;
        for i in (0..n - 1).rev() {
            alpha_hats[i] = alpha_hats[i + 1] / (1.0 - beta_hats[i + 1]).sqrt();
        }
        Ok(Self {
            beta_hats,
            alpha_hats,
        })
    }

    /// Scales anchored at clean data: `α̂_n = Π_{i≤n} √(1 − β̂_i)`.
    pub fn from_forward(beta_hats: Vec<f64>) -> Result<Self> {
        if beta_hats.is_empty() {
            return Err(Error::DegenerateInit);
        }
        let alpha_hats = alphas_from_betas(&beta_hats)?;
        Ok(Self {
            beta_hats,
            alpha_hats,
        })
    }

    /// A subsequence of a training schedule used directly: the `k`-th step
    /// jumps between the cumulative scales at `steps[k-1]` and `steps[k]`.
    /// `steps` must be strictly increasing indices into `1..=T`.
    pub fn from_training_subsequence(schedule: &NoiseSchedule, steps: &[usize]) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::DegenerateInit);
        }
        let mut betas = Vec::with_capacity(steps.len());
        let mut prev = 0;
        for &t in steps {
            if t <= prev || t > schedule.len() {
                return Err(Error::Invalid(format!("bad subsequence index {t}")));
            }
            let ratio = schedule.alpha(t) / schedule.alpha(prev);
            betas.push(1.0 - ratio * ratio);
            prev = t;
        }
        let alphas = steps.iter().map(|&t| schedule.alpha(t)).collect();
        for &b in &betas {
            check_open_unit("beta_hat", b)?;
        }
        Ok(Self {
            beta_hats: betas,
            alpha_hats: alphas,
        })
    }

    pub fn len(&self) -> usize {
        self.beta_hats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_hats.is_empty()
    }

    pub fn beta_hats(&self) -> &[f64] {
        &self.beta_hats
    }

    pub fn alpha_hats(&self) -> &[f64] {
        &self.alpha_hats
    }

    /// `β̂_n` for `1 ≤ n ≤ N`.
    pub fn beta_hat(&self, n: usize) -> f64 {
        self.beta_hats[n - 1]
    }

    /// `α̂_n` for `0 ≤ n ≤ N`; `α̂_0 = α̂_1 / √(1 − β̂_1)` (exactly 1 for
    /// forward-anchored schedules, below 1 for valid backward ones).
    pub fn alpha_hat(&self, n: usize) -> f64 {
        if n == 0 {
            self.alpha_hats[0] / (1.0 - self.beta_hats[0]).sqrt()
        } else {
            self.alpha_hats[n - 1]
        }
    }

    /// `(α̂_N, β̂_N)`.
    pub fn init(&self) -> (f64, f64) {
        (*self.alpha_hats.last().unwrap(), *self.beta_hats.last().unwrap())
    }

    /// ```text
    /// N 3
    /// 1.0000000000000000e-3
    /// ...
    /// init 3.0000000000000000e-1 9.0000000000000000e-1
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "N {}", self.len()).unwrap();
        for &b in &self.beta_hats {
            writeln!(out, "{}", fmt_f64(b)).unwrap();
        }
        let (a, b) = self.init();
        writeln!(out, "init {} {}", fmt_f64(a), fmt_f64(b)).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("schedule value {s:?}: {e}")))
        };
        let head = lines
            .next()
            .ok_or_else(|| Error::Parse("empty schedule file".into()))?;
        let n = head
            .strip_prefix("N ")
            .ok_or_else(|| Error::Parse(format!("bad schedule header {head:?}")))?
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("schedule length: {e}")))?;
        let mut betas = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("schedule file truncated".into()))?;
            betas.push(parse(line)?);
        }
        let init = lines
            .next()
            .and_then(|l| l.strip_prefix("init "))
            .ok_or_else(|| Error::Parse("missing init line".into()))?;
        let vals: Vec<&str> = init.split_whitespace().collect();
        if vals.len() != 2 {
            return Err(Error::Parse("init line needs two values".into()));
        }
        let (alpha_n, beta_n) = (parse(vals[0])?, parse(vals[1])?);
        if lines.next().is_some() {
            return Err(Error::Parse("trailing content after init line".into()));
        }
        if betas.last() != Some(&beta_n) {
            return Err(Error::Parse(
                "init noise scale disagrees with the last listed scale".into(),
            ));
        }
        Self::from_backward(betas, alpha_n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    OutOfUnitInterval,
    NonMonotone,
    /// `β̂_n` at or above the admissible bound.
    BoundExceeded { beta: f64, bound: f64 },
    /// `α̂_n² ≥ 1 − β̂_n`, i.e. the implied cumulative scale one step cleaner
    /// would reach 1.
    InconsistentScales,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based step index.
    pub index: usize,
    pub kind: ViolationKind,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            ViolationKind::OutOfUnitInterval => write!(f, "step {}: noise scale outside (0, 1)", self.index),
            ViolationKind::NonMonotone => write!(f, "step {}: noise scales not increasing", self.index),
            ViolationKind::BoundExceeded { beta, bound } => {
                write!(f, "step {}: noise scale {beta} not below bound {bound}", self.index)
            }
            ViolationKind::InconsistentScales => {
                write!(f, "step {}: cumulative scale inconsistent with noise scale", self.index)
            }
        }
    }
}

/// Checks monotonicity and the per-step upper bound. Reports the first
/// offending step.
pub fn validate_inference_schedule(s: &InferenceSchedule) -> std::result::Result<(), Violation> {
    validate_with_slack(s, 0.0)
}

/// Like [`validate_inference_schedule`] but accepts the equality case at
/// step 1 that every schedule anchored at clean data hits (`α̂_0 = 1`).
/// The relative slack is a few ulps, so anything genuinely above the
/// bound is still rejected.
pub fn validate_for_sampling(s: &InferenceSchedule) -> std::result::Result<(), Violation> {
    validate_with_slack(s, 1e-12)
}

fn validate_with_slack(s: &InferenceSchedule, slack: f64) -> std::result::Result<(), Violation> {
    let n = s.len();
    for i in 1..=n {
        let b = s.beta_hat(i);
        let a = s.alpha_hat(i);
        if !(b > 0.0 && b < 1.0) || !(a > 0.0 && a < 1.0) {
            return Err(Violation {
                index: i,
                kind: ViolationKind::OutOfUnitInterval,
            });
        }
        if i < n {
            let next = s.beta_hat(i + 1);
            if b >= next {
                return Err(Violation {
                    index: i,
                    kind: ViolationKind::NonMonotone,
                });
            }
            let bound = match beta_upper_bound(s.alpha_hat(i + 1), next) {
                Ok(v) => v,
                Err(_) => {
                    return Err(Violation {
                        index: i + 1,
                        kind: ViolationKind::InconsistentScales,
                    })
                }
            };
            // `1 − α̂²` at the first step cancels to about one ulp of 1.
            let allowed = if i == 1 && slack > 0.0 { bound * (1.0 + slack) + 8.0 * f64::EPSILON } else { bound };
            let exceeded = if i == 1 && slack > 0.0 { b > allowed } else { b >= allowed };
            if exceeded {
                return Err(Violation {
                    index: i,
                    kind: ViolationKind::BoundExceeded { beta: b, bound },
                });
            }
        } else {
            // The top step has no successor, but its own pair must still admit
            // a cleaner step.
            let ok = a * a < 1.0 - b || (n == 1 && slack > 0.0 && a * a <= (1.0 - b) * (1.0 + slack));
            if !ok {
                return Err(Violation {
                    index: i,
                    kind: ViolationKind::InconsistentScales,
                });
            }
        }
    }
    Ok(())
}
