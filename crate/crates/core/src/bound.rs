//! Exact evaluation of the teacher-student training-loss bound
//!
//! ```text
//! L(θ) = R̂_{Pδ}(f) + R̂_{Pmix}(f, g)
//!      ≤ 2·R_P(f) + M·(‖Pmix − P‖₁ + ‖Pδ − P‖₁) + R̂_{Pmix}(g)
//! ```
//!
//! over finite distributions, so every integral is an exact weighted sum.
//! [`verify_bound`] also checks each intermediate inequality of the proof.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative slack granted to each inequality for floating-point rounding.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// A point of the joint (feature, target) space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    fn key(&self) -> (Vec<u64>, u64) {
        (self.x.iter().map(|v| v.to_bits()).collect(), self.y.to_bits())
    }
}

/// Finitely supported distribution over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    support: Vec<Sample>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(support: Vec<Sample>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::shape(support.len(), probs.len()));
        }
        if support.is_empty() {
            return Err(Error::InvalidInput("distribution has empty support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("negative or non-finite weight".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("weights sum to {total}")));
        }
        Ok(Self { support, probs })
    }

    /// Uniform weight on each listed sample (repeats accumulate mass), i.e. the
    /// empirical distribution of a dataset.
    pub fn empirical(samples: Vec<Sample>) -> Result<Self> {
        let n = samples.len();
        Self::new(samples, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn support(&self) -> &[Sample] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    /// Mass per distinct point.
    fn masses(&self) -> BTreeMap<(Vec<u64>, u64), f64> {
        let mut m = BTreeMap::new();
        for (s, p) in self.iter() {
            *m.entry(s.key()).or_insert(0.0) += p;
        }
        m
    }
}

/// A loss that is a metric on the target space.
pub trait Loss {
    fn eval(&self, a: f64, b: f64) -> f64;
}

/// `scale · |a − b|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsLoss {
    pub scale: f64,
}

impl Default for AbsLoss {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl Loss for AbsLoss {
    fn eval(&self, a: f64, b: f64) -> f64 {
        self.scale * (a - b).abs()
    }
}

pub trait Predictor {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> Predictor for F {
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Predictor for LinearPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// `Σ p · l(f(x), y)`.
pub fn risk(f: &impl Predictor, d: &DiscreteDist, l: &impl Loss) -> f64 {
    d.iter().map(|(s, p)| p * l.eval(f.predict(&s.x), s.y)).sum()
}

/// `Σ p · l(f(x), g(x))`: the risk of fitting the teacher's predictions.
pub fn teacher_student_risk(
    f: &impl Predictor,
    g: &impl Predictor,
    d: &DiscreteDist,
    l: &impl Loss,
) -> f64 {
    d.iter()
        .map(|(s, p)| p * l.eval(f.predict(&s.x), g.predict(&s.x)))
        .sum()
}

/// `Σ_u |a(u) − b(u)|` over the union of both supports.
pub fn l1_distance(a: &DiscreteDist, b: &DiscreteDist) -> f64 {
    let (ma, mb) = (a.masses(), b.masses());
    let mut total = 0.0;
    for (k, pa) in &ma {
        total += (pa - mb.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, pb) in &mb {
        if !ma.contains_key(k) {
            total += pb;
        }
    }
    total
}

/// One inequality (or identity) of the proof, evaluated numerically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProofStep {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl ProofStep {
    fn le(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let slack = ROUNDING_SLACK * (1.0 + lhs.abs().max(rhs.abs()));
        Self {
            name,
            lhs,
            rhs,
            holds: lhs <= rhs + slack,
        }
    }

    fn eq(name: &'static str, lhs: f64, rhs: f64) -> Self {
        let slack = ROUNDING_SLACK * (1.0 + lhs.abs().max(rhs.abs()));
        Self {
            name,
            lhs,
            rhs,
            holds: (lhs - rhs).abs() <= slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    /// Training loss `R̂_{Pδ}(f) + R̂_{Pmix}(f, g)`.
    pub lhs: f64,
    /// `R_P(f)`.
    pub true_risk: f64,
    /// `‖Pmix − P‖₁`.
    pub l1_mix: f64,
    /// `‖Pδ − P‖₁`.
    pub l1_emp: f64,
    /// `R̂_{Pmix}(g)`.
    pub teacher_risk: f64,
    /// `sup l(f(x), y)` over the evaluated universe.
    pub m: f64,
    pub rhs: f64,
    pub steps: Vec<ProofStep>,
    pub holds: bool,
}

impl RiskReport {
    fn failures(&self) -> String {
        self.steps
            .iter()
            .filter(|s| !s.holds)
            .map(|s| format!("{}: {} > {}", s.name, s.lhs, s.rhs))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Evaluates every term of the bound and every step of its proof.
///
/// Returns [`Error::BoundViolated`] listing the failing steps if anything does
/// not hold; since the bound is a theorem that indicates a bug.
pub fn verify_bound(
    f: &impl Predictor,
    g: &impl Predictor,
    p_true: &DiscreteDist,
    p_emp: &DiscreteDist,
    p_mix: &DiscreteDist,
    l: &impl Loss,
) -> Result<RiskReport> {
    let report = evaluate_bound(f, g, p_true, p_emp, p_mix, l);
    if report.holds {
        Ok(report)
    } else {
        Err(Error::BoundViolated(report.failures()))
    }
}

/// Same as [`verify_bound`] but returns the report even when a step fails.
pub fn evaluate_bound(
    f: &impl Predictor,
    g: &impl Predictor,
    p_true: &DiscreteDist,
    p_emp: &DiscreteDist,
    p_mix: &DiscreteDist,
    l: &impl Loss,
) -> RiskReport {
    let loss_f = |s: &Sample| l.eval(f.predict(&s.x), s.y);

    let r_true = risk(f, p_true, l);
    let r_emp = risk(f, p_emp, l);
    let r_mix_f = risk(f, p_mix, l);
    let r_mix_fg = teacher_student_risk(f, g, p_mix, l);
    let r_mix_g: f64 = p_mix
        .iter()
        .map(|(s, p)| p * l.eval(s.y, g.predict(&s.x)))
        .sum();
    let l1_mix = l1_distance(p_mix, p_true);
    let l1_emp = l1_distance(p_emp, p_true);

    let universe: Vec<&Sample> = p_true
        .support()
        .iter()
        .chain(p_emp.support())
        .chain(p_mix.support())
        .collect();
    let m = universe.iter().map(|s| loss_f(s)).fold(0.0, f64::max);

    let lhs = r_emp + r_mix_fg;
    let rhs = 2.0 * r_true + m * (l1_mix + l1_emp) + r_mix_g;

    // Σ_u l(f(x_u), y_u) · |a(u) − b(u)| over the union of supports.
    let weighted_gap = |a: &DiscreteDist, b: &DiscreteDist| {
        let (ma, mb) = (a.masses(), b.masses());
        let mut lookup: BTreeMap<(Vec<u64>, u64), &Sample> = BTreeMap::new();
        for s in a.support().iter().chain(b.support()) {
            lookup.entry(s.key()).or_insert(s);
        }
        lookup
            .iter()
            .map(|(k, s)| {
                let gap = ma.get(k).copied().unwrap_or(0.0) - mb.get(k).copied().unwrap_or(0.0);
                loss_f(s) * gap.abs()
            })
            .sum::<f64>()
    };
    let gap_emp = weighted_gap(p_emp, p_true);
    let gap_mix = weighted_gap(p_mix, p_true);
    let teacher_gap: f64 = p_mix
        .iter()
        .map(|(s, p)| {
            let fx = f.predict(&s.x);
            p * (l.eval(fx, g.predict(&s.x)) - l.eval(fx, s.y)).abs()
        })
        .sum();

    let decomposition = 2.0 * r_true + (r_emp - r_true) + (r_mix_f - r_true) + (r_mix_fg - r_mix_f);
    let split = 2.0 * r_true + (r_emp - r_true).abs() + (r_mix_f - r_true).abs() + (r_mix_fg - r_mix_f).abs();

    let steps = vec![
        ProofStep::eq("loss decomposition", lhs, decomposition),
        ProofStep::le("triangle split", lhs, split),
        ProofStep::le("teacher term under integral", (r_mix_fg - r_mix_f).abs(), teacher_gap),
        ProofStep::le("teacher term by loss triangle", teacher_gap, r_mix_g),
        ProofStep::le("empirical term under integral", (r_emp - r_true).abs(), gap_emp),
        ProofStep::le("empirical term by sup loss", gap_emp, m * l1_emp),
        ProofStep::le("mixing term under integral", (r_mix_f - r_true).abs(), gap_mix),
        ProofStep::le("mixing term by sup loss", gap_mix, m * l1_mix),
        ProofStep::le("bound", lhs, rhs),
    ];
    let holds = steps.iter().all(|s| s.holds);
    RiskReport {
        lhs,
        true_risk: r_true,
        l1_mix,
        l1_emp,
        teacher_risk: r_mix_g,
        m,
        rhs,
        steps,
        holds,
    }
}

/// A random verification instance: true distribution, its empirical sample,
/// a mixed version of that sample, and linear student/teacher predictors.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub student: LinearPredictor,
    pub teacher: LinearPredictor,
    pub p_true: DiscreteDist,
    pub p_emp: DiscreteDist,
    pub p_mix: DiscreteDist,
}

impl BoundInstance {
    /// At most `max_support` true support points in `dim` dimensions. The
    /// empirical distribution resamples the true one; the mixed distribution
    /// holds convex combinations of empirical pairs (plus a few originals).
    pub fn random(rng: &mut Rng, max_support: usize, dim: usize) -> Result<Self> {
        let max_support = max_support.max(1);
        let support_n = rng.inclusive(1, max_support);
        let truth = LinearPredictor {
            weights: (0..dim).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
            bias: rng.range_f64(-0.5, 0.5),
        };
        let points: Vec<Sample> = (0..support_n)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.range_f64(-2.0, 2.0)).collect();
                let y = truth.predict(&x) + 0.3 * rng.normal();
                Sample::new(x, y)
            })
            .collect();
        let mut weights: Vec<f64> = (0..support_n).map(|_| rng.range_f64(0.05, 1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let p_true = DiscreteDist::new(points.clone(), weights.clone())?;

        let draw = |rng: &mut Rng| {
            let u = rng.uniform();
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return i;
                }
            }
            weights.len() - 1
        };
        let n_emp = rng.inclusive(1, 2 * max_support);
        let emp: Vec<Sample> = (0..n_emp).map(|_| points[draw(rng)].clone()).collect();
        let p_emp = DiscreteDist::empirical(emp.clone())?;

        let n_mix = rng.inclusive(1, 2 * max_support);
        let mix: Vec<Sample> = (0..n_mix)
            .map(|_| {
                let a = &emp[rng.below(0, emp.len())];
                let b = &emp[rng.below(0, emp.len())];
                if rng.bernoulli(0.2) {
                    return a.clone();
                }
                let lam = rng.uniform();
                let x = a.x.iter().zip(&b.x).map(|(u, v)| lam * u + (1.0 - lam) * v).collect();
                Sample::new(x, lam * a.y + (1.0 - lam) * b.y)
            })
            .collect();
        let p_mix = DiscreteDist::empirical(mix)?;

        let student = LinearPredictor {
            weights: (0..dim).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
            bias: rng.range_f64(-0.5, 0.5),
        };
        let teacher = LinearPredictor {
            weights: student.weights.iter().map(|w| w + 0.3 * rng.normal()).collect(),
            bias: student.bias + 0.3 * rng.normal(),
        };
        Ok(Self {
            student,
            teacher,
            p_true,
            p_emp,
            p_mix,
        })
    }

    pub fn verify(&self, l: &impl Loss) -> Result<RiskReport> {
        verify_bound(&self.student, &self.teacher, &self.p_true, &self.p_emp, &self.p_mix, l)
    }

    pub fn evaluate(&self, l: &impl Loss) -> RiskReport {
        evaluate_bound(&self.student, &self.teacher, &self.p_true, &self.p_emp, &self.p_mix, l)
    }
}
