//! The sample, learn, verify and augment loop.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{Expr, Program, State};
use crate::eval::EvalError;
use crate::exec::DEFAULT_MAX_ITERS;
use crate::features::{get_features, FeatureError, FeatureKind, FeatureSet};
use crate::model_tree::{
    fit_model_tree, form_candidate, loss_exact, round_tree, tree_to_expectation, tree_to_string, ModelTree,
    RoundingScheme, TrainingSet, TreeConfig,
};
use crate::print::expr_to_string;
use crate::rng::RandomStream;
use crate::sampler::{
    format_state, sample_states, sample_traces_exact, sample_traces_sub, Domain, ExactDataset, SampleError,
    SubDataset,
};
use crate::soft_tree::{harden, train_restarts, SoftHyper, SubProblem};
use crate::verify::{check_exact, check_sub, Status, Verdict, VerifyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub nruns: usize,
    pub nstates: usize,
    /// Wall-clock budget in seconds.
    pub timeout: f64,
    pub seed: u64,
    pub domain: Domain,
    pub tree: TreeConfig,
    pub soft: SoftHyper,
    /// Times each counterexample is added to the state list.
    pub copies: usize,
    pub schemes: Vec<RoundingScheme>,
    pub max_iterations: Option<usize>,
    /// Cap on loop iterations of a single sampled run.
    pub max_loop_iters: u64,
    /// Record phase timings in the report.
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Exact,
            nruns: 500,
            nstates: 500,
            timeout: 600.0,
            seed: 0,
            domain: Domain::default(),
            tree: TreeConfig::default(),
            soft: SoftHyper::default(),
            copies: 10,
            schemes: RoundingScheme::ALL.to_vec(),
            max_iterations: None,
            max_loop_iters: DEFAULT_MAX_ITERS,
            timings: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CegisError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("feature evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Monotone time source in seconds.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances. Runs using it stop only on `max_iterations`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sampling: f64,
    pub learning: f64,
    pub verification: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub kind: FeatureKind,
    pub scheme: RoundingScheme,
    pub tree: String,
    pub candidate: String,
    /// Loss of the rounded tree on the training data (exact mode).
    pub loss: Option<f64>,
    /// `None` when the candidate repeats an earlier one of the same iteration.
    pub status: Option<Status>,
    pub counterexamples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnRecord {
    pub kind: FeatureKind,
    pub loss: f64,
    pub tree: String,
    /// `(epoch, loss)` samples of soft-tree training.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub curve: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub states: usize,
    pub data_points: usize,
    pub learned: Vec<LearnRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub counterexamples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Verified { candidate: String, tree_kind: FeatureKind, scheme: RoundingScheme, verdict: Verdict },
    Timeout,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub nruns: usize,
    pub nstates: usize,
    pub outcome: Outcome,
    pub iterations: Vec<IterationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
    #[serde(skip)]
    pub invariant: Option<Expr>,
    /// Final data set of an exact-mode run.
    #[serde(skip)]
    pub exact_data: Option<ExactDataset>,
    /// Final data set of a sub-mode run.
    #[serde(skip)]
    pub sub_data: Option<SubDataset>,
}

impl RunReport {
    pub fn is_verified(&self) -> bool {
        matches!(self.outcome, Outcome::Verified { .. })
    }
}

/// `states` followed by every counterexample `copies` times and then `fresh`.
pub fn augment_states(states: &[State], cex: &[State], copies: usize, fresh: &[State]) -> Vec<State> {
    let mut out = states.to_vec();
    for s in cex {
        for _ in 0..copies {
            out.push(s.clone());
        }
    }
    out.extend_from_slice(fresh);
    out
}

fn validate(cfg: &RunConfig) -> Result<(), CegisError> {
    if cfg.nruns == 0 || cfg.nstates == 0 {
        return Err(CegisError::Config("nruns and nstates must be positive".into()));
    }
    if !(cfg.timeout > 0.0) {
        return Err(CegisError::Config("timeout must be positive".into()));
    }
    if cfg.copies == 0 {
        return Err(CegisError::Config("copies must be at least 1".into()));
    }
    if cfg.schemes.is_empty() {
        return Err(CegisError::Config("no rounding scheme selected".into()));
    }
    Ok(())
}

struct Timer<'a> {
    clock: &'a dyn Clock,
    start: f64,
    budget: f64,
    t: Timings,
}

impl Timer<'_> {
    fn expired(&self) -> bool {
        self.clock.seconds() - self.start >= self.budget
    }

    fn lap<R>(&mut self, slot: fn(&mut Timings) -> &mut f64, f: impl FnOnce() -> R) -> R {
        let a = self.clock.seconds();
        let r = f();
        *slot(&mut self.t) += (self.clock.seconds() - a).max(0.0);
        r
    }
}

enum Data {
    Exact(ExactDataset),
    Sub(SubDataset),
}

impl Data {
    fn len(&self) -> usize {
        match self {
            Data::Exact(d) => d.len(),
            Data::Sub(d) => d.len(),
        }
    }
}

struct Run<'a> {
    prog: &'a Program,
    pre: Option<&'a Expr>,
    post: &'a Expr,
    cfg: &'a RunConfig,
    rng: RandomStream,
}

struct Candidate {
    kind: FeatureKind,
    scheme: RoundingScheme,
    tree: ModelTree,
    expr: Expr,
    loss: Option<f64>,
}

impl Run<'_> {
    fn sample(&self, data: &mut Data, states: &[State], batch: u64) -> Result<(), SampleError> {
        let rng = self.rng.split(2).split(batch);
        match data {
            Data::Exact(d) => {
                let more =
                    sample_traces_exact(self.prog, self.post, states, self.cfg.nruns, self.cfg.max_loop_iters, &rng)?;
                d.entries.extend(more.entries);
            }
            Data::Sub(d) => {
                let more = sample_traces_sub(self.prog, states, self.cfg.nruns, &rng)?;
                d.entries.extend(more.entries);
            }
        }
        Ok(())
    }

    fn learn(
        &self,
        data: &Data,
        feats: &[FeatureSet; 2],
        iteration: usize,
        learned: &mut Vec<LearnRecord>,
    ) -> Result<Vec<Candidate>, CegisError> {
        let guard = &self.prog.guard;
        let mut trees = Vec::new();
        match data {
            Data::Exact(d) => {
                for fs in feats {
                    let ts = TrainingSet::new(d, fs, self.post, guard)?;
                    let t = fit_model_tree(&ts, fs, &self.cfg.tree);
                    learned.push(LearnRecord {
                        kind: fs.kind,
                        loss: loss_exact(&t, &ts),
                        tree: tree_to_string(&t, fs, &self.prog.vars),
                        curve: Vec::new(),
                    });
                    trees.push((fs, t, Some(ts)));
                }
            }
            Data::Sub(d) => {
                let pre = self.pre.expect("sub mode has a pre-expectation");
                let mut h = self.cfg.soft.clone();
                h.seed = self.cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(iteration as u64);
                for fs in feats {
                    let prob = SubProblem::new(d, fs, pre, self.post, guard)?;
                    let split = prob.choose_splits(fs, guard, h.depth);
                    match train_restarts(&prob, fs.kind, &split, &h) {
                        Ok(out) => {
                            let t = harden(&out.tree);
                            learned.push(LearnRecord {
                                kind: fs.kind,
                                loss: out.loss,
                                tree: tree_to_string(&t, fs, &self.prog.vars),
                                curve: out.curve,
                            });
                            trees.push((fs, t, None));
                        }
                        Err(e) => log::warn!("{:?} soft tree skipped: {}", fs.kind, e),
                    }
                }
            }
        }
        let mut out = Vec::new();
        for &scheme in &self.cfg.schemes {
            for (fs, t, ts) in &trees {
                let rounded = round_tree(t, scheme);
                let inner = tree_to_expectation(&rounded, fs);
                out.push(Candidate {
                    kind: fs.kind,
                    scheme,
                    loss: ts.as_ref().map(|ts| loss_exact(&rounded, ts)),
                    expr: form_candidate(self.post, guard, &inner),
                    tree: rounded,
                });
            }
        }
        Ok(out)
    }

    fn check(&self, inv: &Expr, iteration: usize) -> Verdict {
        let vc = VerifyConfig {
            domain: self.cfg.domain.clone(),
            seed: self.cfg.seed.wrapping_mul(0x2545_f491).wrapping_add(iteration as u64),
            ..VerifyConfig::default()
        };
        match self.pre {
            Some(pre) => check_sub(inv, self.prog, pre, self.post, &vc),
            None => check_exact(inv, self.prog, self.post, &vc),
        }
    }

    fn go(&self, clock: &dyn Clock) -> Result<RunReport, CegisError> {
        validate(self.cfg)?;
        self.cfg.domain.check(&self.prog.vars).map_err(|e| CegisError::Config(e.to_string()))?;
        let cfg = self.cfg;
        let mut timer = Timer { clock, start: clock.seconds(), budget: cfg.timeout, t: Timings::default() };
        let mut pexp = Vec::new();
        if let Some(p) = self.pre {
            pexp.push(p.clone());
        }
        pexp.push(self.post.clone());
        let (lin, mul) = get_features(self.prog, &pexp)?;
        let feats = [lin, mul];

        let mut states = sample_states(self.prog, cfg.nstates, &cfg.domain, &self.rng.split(0).split(0));
        let mut data = match cfg.mode {
            Mode::Exact => Data::Exact(ExactDataset::default()),
            Mode::Sub => Data::Sub(SubDataset::default()),
        };
        timer.lap(|t| &mut t.sampling, || self.sample(&mut data, &states, 0))?;

        let mut iterations = Vec::new();
        let finish = |outcome, iterations, invariant, timer: Timer, data: Data| {
            let mut t = timer.t;
            t.total = (timer.clock.seconds() - timer.start).max(0.0);
            RunReport {
                mode: cfg.mode,
                seed: cfg.seed,
                nruns: cfg.nruns,
                nstates: cfg.nstates,
                outcome,
                iterations,
                timings: cfg.timings.then_some(t),
                invariant,
                exact_data: match &data {
                    Data::Exact(d) => Some(d.clone()),
                    Data::Sub(_) => None,
                },
                sub_data: match data {
                    Data::Sub(d) => Some(d),
                    Data::Exact(_) => None,
                },
            }
        };

        for it in 0.. {
            if timer.expired() {
                return Ok(finish(Outcome::Timeout, iterations, None, timer, data));
            }
            if cfg.max_iterations.is_some_and(|m| it >= m) {
                return Ok(finish(Outcome::IterationLimit, iterations, None, timer, data));
            }
            let mut rec = IterationRecord {
                iteration: it,
                states: states.len(),
                data_points: data.len(),
                learned: Vec::new(),
                candidates: Vec::new(),
                counterexamples: Vec::new(),
            };
            let cands = timer.lap(|t| &mut t.learning, || self.learn(&data, &feats, it, &mut rec.learned))?;

            let mut seen = BTreeSet::new();
            let mut cex = Vec::new();
            for c in cands {
                let text = expr_to_string(&c.expr, &self.prog.vars);
                let mut cr = CandidateRecord {
                    kind: c.kind,
                    scheme: c.scheme,
                    tree: tree_to_string(&c.tree, &feats[(c.kind == FeatureKind::Multiplicative) as usize], &self.prog.vars),
                    candidate: text.clone(),
                    loss: c.loss,
                    status: None,
                    counterexamples: 0,
                };
                if !seen.insert(text.clone()) {
                    rec.candidates.push(cr);
                    continue;
                }
                if timer.expired() {
                    rec.candidates.push(cr);
                    iterations.push(rec);
                    return Ok(finish(Outcome::Timeout, iterations, None, timer, data));
                }
                let verdict = timer.lap(|t| &mut t.verification, || self.check(&c.expr, it));
                cr.status = Some(verdict.status);
                cr.counterexamples = verdict.counterexamples.len();
                rec.candidates.push(cr);
                if verdict.status.is_verified() {
                    iterations.push(rec);
                    let outcome = Outcome::Verified { candidate: text, tree_kind: c.kind, scheme: c.scheme, verdict };
                    return Ok(finish(outcome, iterations, Some(c.expr), timer, data));
                }
                for ce in verdict.counterexamples {
                    rec.counterexamples.push(format_state(&self.prog.vars, &ce.state));
                    cex.push(ce.state);
                }
            }
            iterations.push(rec);

            let fresh = sample_states(self.prog, cfg.nstates, &cfg.domain, &self.rng.split(0).split(it as u64 + 1));
            let added = augment_states(&[], &cex, cfg.copies, &fresh);
            timer.lap(|t| &mut t.sampling, || self.sample(&mut data, &added, it as u64 + 1))?;
            states.extend(added);
        }
        unreachable!()
    }
}

/// Searches for an exact invariant of `prog` with respect to `post`.
pub fn run_exact(prog: &Program, post: &Expr, cfg: &RunConfig, clock: &dyn Clock) -> Result<RunReport, CegisError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Exact;
    Run { prog, pre: None, post, cfg: &cfg, rng: RandomStream::new(cfg.seed) }.go(clock)
}

/// Searches for a sub-invariant `I` with `pre <= I <= Phi(I)`.
pub fn run_sub(
    prog: &Program,
    pre: &Expr,
    post: &Expr,
    cfg: &RunConfig,
    clock: &dyn Clock,
) -> Result<RunReport, CegisError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Sub;
    Run { prog, pre: Some(pre), post, cfg: &cfg, rng: RandomStream::new(cfg.seed) }.go(clock)
}
