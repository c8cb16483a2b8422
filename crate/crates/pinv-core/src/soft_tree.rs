//! Differentiable model trees for sub-invariant learning.
//!
//! A soft tree splits on a fixed subset of at most a few features. Each
//! split has a trainable cut and routes by logistic weights with temperature
//! `tau`; every leaf sees every example with the product of its routing
//! weights. Training minimizes the one-sided losses
//! `err1 = sum max(0, pre - post - G*T)` and
//! `err2 = sum max(0, G*(post + T) - G*mean(post' + G'*T'))`
//! and [`harden`] turns the result into a [`ModelTree`].

use alloc::boxed::Box;
use alloc::vec::Vec;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{BoolExpr, CmpOp, Expr, Program, State};
use crate::eval::{eval_bool, eval_expr, EvalError};
use crate::exec::{CompiledBool, CompiledExpr};
use crate::features::{FeatureClass, FeatureKind, FeatureSet};
use crate::model_tree::{LeafModel, ModelTree, Split};
use crate::num::{round_digits, to_f64};
use crate::rng::RandomStream;
use crate::sampler::SubDataset;
use crate::wpe::wpe_loopfree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftSplit {
    pub feature: usize,
    /// Sorted distinct values seen in training, used when hardening.
    pub values: Vec<f64>,
    pub boolean: bool,
    pub integral: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    pub kind: FeatureKind,
    pub splits: Vec<SoftSplit>,
    /// Cut per split, in scaled feature units.
    pub cuts: Vec<f64>,
    pub tau: f64,
    /// One row per leaf: coefficients on scaled features, then the intercept.
    /// Multiplicative leaves hold exponents and the log of the constant.
    pub leaves: Vec<Vec<f64>>,
    /// Features are divided by these before use.
    pub scale: Vec<f64>,
    /// Features usable as multiplicative regressors.
    pub usable: Vec<bool>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SoftTree {
    pub fn new(kind: FeatureKind, n_features: usize, splits: Vec<SoftSplit>, cuts: Vec<f64>, tau: f64) -> Self {
        let leaves = alloc::vec![alloc::vec![0.0; n_features + 1]; 1 << splits.len()];
        SoftTree {
            kind,
            splits,
            cuts,
            tau,
            leaves,
            scale: alloc::vec![1.0; n_features],
            usable: alloc::vec![true; n_features],
        }
    }

    pub fn depth(&self) -> usize {
        self.splits.len()
    }

    pub fn n_features(&self) -> usize {
        self.scale.len()
    }

    pub fn n_params(&self) -> usize {
        self.cuts.len() + self.leaves.len() * (self.n_features() + 1)
    }

    /// Cuts followed by the leaf rows.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.cuts.clone();
        for l in &self.leaves {
            out.extend_from_slice(l);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let d = self.cuts.len();
        self.cuts.copy_from_slice(&p[..d]);
        let w = self.n_features() + 1;
        for (k, l) in self.leaves.iter_mut().enumerate() {
            l.copy_from_slice(&p[d + k * w..d + (k + 1) * w]);
        }
    }

    fn scaled(&self, fvec: &[f64]) -> Point {
        let z: Vec<f64> = fvec.iter().zip(&self.scale).map(|(f, s)| f / s).collect();
        let logz = z.iter().zip(&self.usable).map(|(v, &u)| if u && *v > 0.0 { v.ln() } else { 0.0 }).collect();
        Point { z, logz, post: 0.0, guard: 0.0 }
    }

    /// Routing weights of all leaves.
    fn weights(&self, p: &Point) -> Vec<f64> {
        let mut w = alloc::vec![1.0; self.leaves.len()];
        for (k, (s, c)) in self.splits.iter().zip(&self.cuts).enumerate() {
            let up = sigmoid((p.z[s.feature] - c) / self.tau);
            for (l, wl) in w.iter_mut().enumerate() {
                *wl *= if (l >> k) & 1 == 1 { up } else { 1.0 - up };
            }
        }
        w
    }

    fn leaf_value(&self, l: usize, p: &Point) -> f64 {
        let row = &self.leaves[l];
        let n = self.n_features();
        match self.kind {
            FeatureKind::Linear => row[n] + row[..n].iter().zip(&p.z).map(|(a, z)| a * z).sum::<f64>(),
            FeatureKind::Multiplicative => {
                let mut acc = row[n];
                for j in 0..n {
                    if self.usable[j] {
                        acc += row[j] * p.logz[j];
                    }
                }
                acc.exp()
            }
        }
    }

    fn forward(&self, p: &Point) -> f64 {
        self.weights(p).iter().enumerate().map(|(l, w)| w * self.leaf_value(l, p)).sum()
    }

    /// Adds `coef * dT/dparams` at `p` into `grad`.
    fn backward(&self, p: &Point, coef: f64, grad: &mut [f64]) {
        let d = self.depth();
        let n = self.n_features();
        let w = self.weights(p);
        let ups: Vec<f64> =
            self.splits.iter().zip(&self.cuts).map(|(s, c)| sigmoid((p.z[s.feature] - c) / self.tau)).collect();
        for (l, wl) in w.iter().enumerate() {
            let m = self.leaf_value(l, p);
            for k in 0..d {
                // d log(w_l) / d c_k
                let dlog = if (l >> k) & 1 == 1 { -(1.0 - ups[k]) } else { ups[k] } / self.tau;
                grad[k] += coef * m * wl * dlog;
            }
            let base = d + l * (n + 1);
            match self.kind {
                FeatureKind::Linear => {
                    for j in 0..n {
                        grad[base + j] += coef * wl * p.z[j];
                    }
                    grad[base + n] += coef * wl;
                }
                FeatureKind::Multiplicative => {
                    for j in 0..n {
                        if self.usable[j] {
                            grad[base + j] += coef * wl * m * p.logz[j];
                        }
                    }
                    grad[base + n] += coef * wl * m;
                }
            }
        }
    }
}

/// Output of the tree on a raw feature vector.
pub fn soft_forward(st: &SoftTree, fvec: &[f64]) -> f64 {
    st.forward(&st.scaled(fvec))
}

#[derive(Clone, Debug)]
struct Point {
    z: Vec<f64>,
    logz: Vec<f64>,
    post: f64,
    guard: f64,
}

#[derive(Clone, Debug)]
struct Example {
    pre: f64,
    at: usize,
    /// Successor points with their empirical frequencies.
    succ: Vec<(usize, f64)>,
}

/// A sub-invariant data set with features, pre, post and guard evaluated.
#[derive(Clone, Debug)]
pub struct SubProblem {
    raw: Vec<Vec<f64>>,
    points: Vec<Point>,
    examples: Vec<Example>,
    scale: Vec<f64>,
    usable: Vec<bool>,
    classes: Vec<FeatureClass>,
}

impl SubProblem {
    pub fn new(ds: &SubDataset, feats: &FeatureSet, pre: &Expr, post: &Expr, guard: &BoolExpr) -> Result<Self, EvalError> {
        let pre = CompiledExpr::new(pre);
        let post = CompiledExpr::new(post);
        let guard = CompiledBool::new(guard);
        let mut raw = Vec::new();
        let mut posts = Vec::new();
        let mut guards = Vec::new();
        let mut push = |s: &State| -> Result<usize, EvalError> {
            raw.push(feats.eval(s)?);
            posts.push(post.eval(&s.0)?);
            guards.push(if guard.eval(&s.0)? { 1.0 } else { 0.0 });
            Ok(raw.len() - 1)
        };
        let mut examples = Vec::new();
        for e in &ds.entries {
            let at = push(&e.state)?;
            let mut uniq: Vec<(&State, usize)> = Vec::new();
            for s in &e.successors {
                match uniq.iter_mut().find(|(t, _)| *t == s) {
                    Some((_, k)) => *k += 1,
                    None => uniq.push((s, 1)),
                }
            }
            let total = e.successors.len() as f64;
            let mut succ = Vec::new();
            for (s, k) in uniq {
                succ.push((push(s)?, k as f64 / total));
            }
            examples.push(Example { pre: pre.eval(&e.state.0)?, at, succ });
        }
        let n = feats.len();
        let mut scale = alloc::vec![1.0; n];
        let mut usable = alloc::vec![true; n];
        for j in 0..n {
            let m = raw.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
            if m > 0.0 && m.is_finite() {
                scale[j] = m;
            }
            usable[j] = raw.iter().all(|r| r[j] > 0.0 && r[j].is_finite());
        }
        let points = raw
            .iter()
            .zip(posts.iter().zip(&guards))
            .map(|(r, (&post, &guard))| {
                let z: Vec<f64> = r.iter().zip(&scale).map(|(f, s)| f / s).collect();
                let logz = z.iter().zip(&usable).map(|(v, &u)| if u { v.ln() } else { 0.0 }).collect();
                Point { z, logz, post, guard }
            })
            .collect();
        let classes = feats.features.iter().map(|f| f.class).collect();
        Ok(SubProblem { raw, points, examples, scale, usable, classes })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn split_info(&self, feature: usize) -> SoftSplit {
        let mut values: Vec<f64> = self.examples.iter().map(|e| self.raw[e.at][feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        values.dedup();
        let boolean = self.classes[feature] == FeatureClass::Bool;
        let integral = boolean || (self.classes[feature] == FeatureClass::Int && values.iter().all(|v| v.fract() == 0.0));
        SoftSplit { feature, values, boolean, integral }
    }

    /// Median of a feature over guard-true examples, in scaled units.
    fn median(&self, feature: usize) -> f64 {
        let mut v: Vec<f64> = self
            .examples
            .iter()
            .filter(|e| self.points[e.at].guard != 0.0)
            .map(|e| self.points[e.at].z[feature])
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            (v[mid - 1] + v[mid]) / 2.0
        }
    }

    /// Tree with zero leaves and cuts at the medians of `split`.
    pub fn initial_tree(&self, kind: FeatureKind, split: &[usize], tau: f64) -> SoftTree {
        let splits: Vec<SoftSplit> = split.iter().map(|&j| self.split_info(j)).collect();
        let cuts = split.iter().map(|&j| self.median(j)).collect();
        let mut st = SoftTree::new(kind, self.scale.len(), splits, cuts, tau);
        st.scale = self.scale.clone();
        st.usable = match kind {
            FeatureKind::Linear => alloc::vec![true; self.scale.len()],
            FeatureKind::Multiplicative => self.usable.clone(),
        };
        st
    }

    /// Up to `d` split features: guard variables first, then features most
    /// correlated with `pre - post` on guard-true examples.
    pub fn choose_splits(&self, feats: &FeatureSet, guard: &BoolExpr, d: usize) -> Vec<usize> {
        let rows: Vec<usize> = self.examples.iter().map(|e| e.at).filter(|&i| self.points[i].guard != 0.0).collect();
        let varies = |j: usize| rows.iter().any(|&i| self.raw[i][j] != self.raw[rows[0]][j]);
        if rows.is_empty() {
            return Vec::new();
        }
        let guard_vars = Expr::ind(guard.clone()).vars();
        let mut out: Vec<usize> = (0..feats.len())
            .filter(|&j| matches!(feats.features[j].expr, Expr::Var(v) if guard_vars.contains(&v)) && varies(j))
            .collect();
        out.truncate(d);
        let target: Vec<f64> = self
            .examples
            .iter()
            .filter(|e| self.points[e.at].guard != 0.0)
            .map(|e| e.pre - self.points[e.at].post)
            .collect();
        let mut scored: Vec<(f64, usize)> = (0..feats.len())
            .filter(|j| !out.contains(j) && varies(*j) && !feats.features[*j].expr.contains_indicator())
            .map(|j| {
                let x: Vec<f64> = rows.iter().map(|&i| self.raw[i][j]).collect();
                (-correlation(&x, &target).abs(), j)
            })
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        for (_, j) in scored {
            if out.len() >= d {
                break;
            }
            out.push(j);
        }
        out
    }
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// `err1 + err2` of the tree on the data set.
pub fn sub_loss(st: &SoftTree, prob: &SubProblem) -> f64 {
    let t: Vec<f64> = prob.points.iter().map(|p| st.forward(p)).collect();
    let mut loss = 0.0;
    for e in &prob.examples {
        let p = &prob.points[e.at];
        loss += (e.pre - p.post - p.guard * t[e.at]).max(0.0);
        if p.guard != 0.0 && !e.succ.is_empty() {
            let mean: f64 = e.succ.iter().map(|&(i, w)| w * (prob.points[i].post + prob.points[i].guard * t[i])).sum();
            loss += (p.guard * (p.post + t[e.at]) - p.guard * mean).max(0.0);
        }
    }
    loss
}

/// Gradient of [`sub_loss`] in [`SoftTree::params`] order.
pub fn grad_sub_loss(st: &SoftTree, prob: &SubProblem) -> Vec<f64> {
    let t: Vec<f64> = prob.points.iter().map(|p| st.forward(p)).collect();
    let mut coef = alloc::vec![0.0; prob.points.len()];
    for e in &prob.examples {
        let p = &prob.points[e.at];
        if e.pre - p.post - p.guard * t[e.at] > 0.0 {
            coef[e.at] -= p.guard;
        }
        if p.guard != 0.0 && !e.succ.is_empty() {
            let mean: f64 = e.succ.iter().map(|&(i, w)| w * (prob.points[i].post + prob.points[i].guard * t[i])).sum();
            if p.guard * (p.post + t[e.at]) - p.guard * mean > 0.0 {
                coef[e.at] += p.guard;
                for &(i, w) in &e.succ {
                    coef[i] -= p.guard * w * prob.points[i].guard;
                }
            }
        }
    }
    let mut grad = alloc::vec![0.0; st.n_params()];
    for (p, &c) in prob.points.iter().zip(&coef) {
        if c != 0.0 {
            st.backward(p, c, &mut grad);
        }
    }
    grad
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftHyper {
    pub depth: usize,
    pub epochs: usize,
    pub step: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Weight of the L1 penalty on leaf coefficients in feature units
    /// (intercepts excluded),
    /// added to the per-example mean loss during training.
    pub l1: f64,
    /// Epoch interval of the recorded training curve.
    pub curve_every: usize,
}

impl Default for SoftHyper {
    fn default() -> Self {
        SoftHyper { depth: 1, epochs: 2000, step: 0.05, tau_start: 1.0, tau_end: 1e-3, restarts: 3, seed: 0, l1: 1e-2, curve_every: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SoftTreeError {
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub tree: SoftTree,
    pub loss: f64,
    /// `(epoch, loss)` samples.
    pub curve: Vec<(usize, f64)>,
}

fn tau_at(h: &SoftHyper, epoch: usize) -> f64 {
    if h.epochs <= 1 {
        return h.tau_end;
    }
    let t = epoch as f64 / (h.epochs - 1) as f64;
    h.tau_start * (h.tau_end / h.tau_start).powf(t)
}

fn penalty(st: &SoftTree) -> f64 {
    let n = st.n_features();
    st.leaves.iter().map(|l| l[..n].iter().zip(&st.scale).map(|(a, s)| a.abs() / s).sum::<f64>()).sum()
}

/// Training objective: mean loss plus the L1 penalty.
pub fn objective(st: &SoftTree, prob: &SubProblem, h: &SoftHyper) -> f64 {
    sub_loss(st, prob) / prob.len().max(1) as f64 + h.l1 * penalty(st)
}

/// Sign-based descent on [`objective`] with per-parameter steps that grow by
/// 1.2 while the gradient keeps its sign and halve when it flips. Returns the
/// iterate with the lowest objective when routed at `tau_end`, with that
/// temperature set; `loss` is its [`sub_loss`].
pub fn train(st: &SoftTree, prob: &SubProblem, h: &SoftHyper) -> Result<TrainOutcome, SoftTreeError> {
    let mut cur = st.clone();
    let mut best = TrainOutcome { tree: st.clone(), loss: sub_loss(st, prob), curve: Vec::new() };
    if h.epochs == 0 || prob.is_empty() {
        return Ok(best);
    }
    let mut best_obj = f64::INFINITY;
    let n = cur.n_params();
    let d = cur.depth();
    let w = cur.n_features() + 1;
    let m = prob.len() as f64;
    let mut steps = alloc::vec![h.step; n];
    let mut prev = alloc::vec![0.0; n];
    let mut theta = cur.params();
    for epoch in 0..=h.epochs {
        if epoch < h.epochs {
            cur.tau = tau_at(h, epoch);
        }
        let loss = sub_loss(&cur, prob);
        if !loss.is_finite() {
            return Err(SoftTreeError::NonFinite { epoch });
        }
        let mut hard = cur.clone();
        hard.tau = h.tau_end;
        let hard_loss = if d == 0 { loss } else { sub_loss(&hard, prob) };
        let obj = hard_loss / m + h.l1 * penalty(&hard);
        if obj < best_obj {
            best_obj = obj;
            best.loss = hard_loss;
            best.tree = hard;
        }
        if epoch % h.curve_every.max(1) == 0 || epoch == h.epochs {
            best.curve.push((epoch, loss));
        }
        if epoch == h.epochs {
            break;
        }
        let mut g = grad_sub_loss(&cur, prob);
        for k in 0..n {
            g[k] /= m;
            if k >= d && (k - d) % w != w - 1 && theta[k] != 0.0 {
                g[k] += h.l1 * theta[k].signum() / cur.scale[(k - d) % w];
            }
        }
        for k in 0..n {
            let s = g[k] * prev[k];
            if s > 0.0 {
                steps[k] = (steps[k] * 1.2).min(1.0);
            } else if s < 0.0 {
                steps[k] = (steps[k] * 0.5).max(1e-9);
            }
            let gk = if s < 0.0 { 0.0 } else { g[k] };
            if gk > 0.0 {
                theta[k] -= steps[k];
            } else if gk < 0.0 {
                theta[k] += steps[k];
            }
            prev[k] = gk;
        }
        cur.set_params(&theta);
    }
    Ok(best)
}

/// Trains from the median initialization and from `restarts - 1` random
/// cut placements, keeping the lowest loss. Curves are concatenated.
pub fn train_restarts(
    prob: &SubProblem,
    kind: FeatureKind,
    split: &[usize],
    h: &SoftHyper,
) -> Result<TrainOutcome, SoftTreeError> {
    let rng = RandomStream::new(h.seed);
    let mut best: Option<TrainOutcome> = None;
    let mut curve = Vec::new();
    for r in 0..h.restarts.max(1) {
        let mut st = prob.initial_tree(kind, split, h.tau_start);
        if r > 0 {
            let mut stream = rng.split(r as u64);
            for (k, s) in split.iter().enumerate() {
                let vals: Vec<f64> =
                    prob.examples.iter().map(|e| prob.points[e.at].z[*s]).filter(|v| v.is_finite()).collect();
                if !vals.is_empty() {
                    st.cuts[k] = vals[stream.uniform_int(0, vals.len() as i64 - 1) as usize];
                }
            }
        }
        let out = train(&st, prob, h)?;
        curve.extend(out.curve.iter().map(|&(e, l)| (r * (h.epochs + 1) + e, l)));
        if best.as_ref().map_or(true, |b| out.loss < b.loss) {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one restart");
    best.curve = curve;
    Ok(best)
}

fn snap(lo: f64, hi: f64) -> f64 {
    for digits in 0..=8 {
        let r = round_digits((lo + hi) / 2.0, digits);
        if lo <= r && r < hi {
            return r;
        }
    }
    (lo + hi) / 2.0
}

/// Hard predicates in place of the soft routing. Splits whose cut lies
/// outside the training values keep only the reachable child.
pub fn harden(st: &SoftTree) -> ModelTree {
    fn leaf(st: &SoftTree, l: usize) -> ModelTree {
        let row = &st.leaves[l];
        let n = st.n_features();
        ModelTree::Leaf(match st.kind {
            FeatureKind::Linear => LeafModel::Linear {
                coef: (0..n).map(|j| row[j] / st.scale[j]).collect(),
                intercept: row[n],
            },
            FeatureKind::Multiplicative => {
                let mut log_c = row[n];
                let mut exponents = alloc::vec![0.0; n];
                for j in 0..n {
                    if st.usable[j] && row[j] != 0.0 {
                        exponents[j] = row[j];
                        log_c -= row[j] * st.scale[j].ln();
                    }
                }
                LeafModel::Multiplicative { constant: log_c.exp(), exponents }
            }
        })
    }
    fn go(st: &SoftTree, k: usize, l: usize) -> ModelTree {
        if k == st.depth() {
            return leaf(st, l);
        }
        let s = &st.splits[k];
        let cut = st.cuts[k] * st.scale[s.feature];
        let below = go(st, k + 1, l);
        let above = go(st, k + 1, l | (1 << k));
        if s.values.iter().all(|&v| v <= cut) {
            return below;
        }
        if s.values.iter().all(|&v| v > cut) {
            return above;
        }
        if s.boolean {
            let split = Split { feature: s.feature, op: CmpOp::Eq, cut: 1.0 };
            return ModelTree::Node { split, left: Box::new(below), right: Box::new(above) };
        }
        let snapped = if s.integral {
            cut.floor()
        } else {
            let lo = s.values.iter().copied().filter(|&v| v <= cut).fold(f64::NEG_INFINITY, f64::max);
            let hi = s.values.iter().copied().filter(|&v| v > cut).fold(f64::INFINITY, f64::min);
            let tol = 1e-3 * (1.0 + cut.abs());
            snap(lo.max(cut - tol), hi.min(cut + tol))
        };
        let split = Split { feature: s.feature, op: CmpOp::Le, cut: snapped };
        ModelTree::Node { split, left: Box::new(above), right: Box::new(below) }
    }
    crate::model_tree::collapse(go(st, 0, 0))
}

/// `err1 + err2` of the candidate `inv` with the successor average replaced
/// by its exact one-step expectation.
pub fn exact_sub_loss(prog: &Program, pre: &Expr, inv: &Expr, states: &[State]) -> Result<f64, EvalError> {
    let next = wpe_loopfree(&prog.body, inv);
    let mut total = BigRational::zero();
    for s in states {
        let env = s.to_rationals();
        let i = eval_expr(inv, &env)?;
        let d1 = eval_expr(pre, &env)? - i.clone();
        if d1 > BigRational::zero() {
            total += d1;
        }
        if eval_bool(&prog.guard, &env)? {
            let d2 = i - eval_expr(&next, &env)?;
            if d2 > BigRational::zero() {
                total += d2;
            }
        }
    }
    Ok(to_f64(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{get_features, Feature};
    use crate::model_tree::{form_candidate, round_tree, tree_eval, tree_to_expectation, RoundingScheme};
    use crate::parse::{parse_expr, parse_program};
    use crate::print::expr_to_string;
    use crate::sampler::{sample_states, sample_traces_sub, Domain, SubEntry};
    use proptest::prelude::*;

    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool;
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";
    const MART: &str = "var c : int; var b : int; var rounds : int; var p : prob; local d : bool;
        while (b > 0) { d ~ bernoulli(p); if (d) { c = c + b; b = 0; } else { c = c - b; b = 2 * b; } rounds = rounds + 1; }";

    fn set(p: &Program, names: &[&str]) -> FeatureSet {
        let features = names.iter().map(|n| Feature::new(parse_expr(n, &p.vars).unwrap(), &p.vars)).collect();
        FeatureSet { kind: FeatureKind::Linear, features }
    }

    fn one_split(kind: FeatureKind, boolean: bool) -> SoftTree {
        let split = SoftSplit { feature: 0, values: alloc::vec![0.0, 1.0, 2.0, 3.0], boolean, integral: false };
        let mut st = SoftTree::new(kind, 2, alloc::vec![split], alloc::vec![1.5], 1e-6);
        st.leaves[0] = alloc::vec![0.0, 1.0, 2.0];
        st.leaves[1] = alloc::vec![1.0, 0.0, -1.0];
        st
    }

    #[test]
    fn forward_examples() {
        let mut single = SoftTree::new(FeatureKind::Linear, 2, Vec::new(), Vec::new(), 1.0);
        single.leaves[0] = alloc::vec![2.0, 1.0, 0.5];
        assert_eq!(soft_forward(&single, &[1.0, 3.0]), 5.5);
        single.tau = 1e-3;
        assert_eq!(soft_forward(&single, &[1.0, 3.0]), 5.5);
        let st = one_split(FeatureKind::Linear, false);
        assert!((soft_forward(&st, &[2.5, 4.0]) - 1.5).abs() < 1e-6);
        let mut mid = st.clone();
        mid.tau = 0.7;
        let avg = (6.0 + 1.5 - 1.0) / 2.0;
        assert!((soft_forward(&mid, &[1.5, 4.0]) - avg).abs() < 1e-12);
    }

    #[test]
    fn harden_examples() {
        let mut single = SoftTree::new(FeatureKind::Linear, 2, Vec::new(), Vec::new(), 1.0);
        single.leaves[0] = alloc::vec![2.0, 1.0, 0.5];
        let h = harden(&single);
        assert_eq!(tree_eval(&h, &[1.0, 3.0]), 5.5);
        let st = one_split(FeatureKind::Linear, false);
        let h = harden(&st);
        for f in [-1.0, 0.0, 1.0, 1.4, 1.6, 2.0, 3.0, 5.0] {
            let x = [f, 0.25 * f];
            assert!((tree_eval(&h, &x) - soft_forward(&st, &x)).abs() < 1e-5, "{}", f);
        }
        let mut b = one_split(FeatureKind::Linear, true);
        b.splits[0].values = alloc::vec![0.0, 1.0];
        b.cuts[0] = 0.4;
        match harden(&b) {
            ModelTree::Node { split, .. } => assert_eq!(split, Split { feature: 0, op: CmpOp::Eq, cut: 1.0 }),
            other => panic!("{:?}", other),
        }
        let mut far = one_split(FeatureKind::Linear, false);
        far.cuts[0] = 10.0;
        assert_eq!(harden(&far).node_count(), 1);
    }

    fn mart_problem(nruns: usize) -> (Program, FeatureSet, SubProblem, Expr) {
        let p = parse_program(MART).unwrap();
        let post = parse_expr("rounds", &p.vars).unwrap();
        let pre = parse_expr("rounds + [b > 0]", &p.vars).unwrap();
        let (fl, _) = get_features(&p, &[post.clone()]).unwrap();
        let rng = RandomStream::new(11);
        let states = sample_states(&p, 60, &Domain::default(), &rng.split(0));
        let ds = sample_traces_sub(&p, &states, nruns, &rng.split(1)).unwrap();
        let prob = SubProblem::new(&ds, &fl, &pre, &post, &p.guard).unwrap();
        (p, fl, prob, pre)
    }

    #[test]
    fn guard_false_data() {
        let p = parse_program(GEO0).unwrap();
        let feats = set(&p, &["z", "p1"]);
        let s = p.state_from_pairs(&[("z", 2.0), ("flip", 1.0), ("p1", 0.5)]).unwrap();
        let ds = SubDataset { entries: alloc::vec![SubEntry { state: s, successors: Vec::new() }] };
        let post = parse_expr("z", &p.vars).unwrap();
        let lower = SubProblem::new(&ds, &feats, &parse_expr("z - 1", &p.vars).unwrap(), &post, &p.guard).unwrap();
        let mut st = lower.initial_tree(FeatureKind::Linear, &[], 1.0);
        st.leaves[0] = alloc::vec![3.0, -2.0, 7.0];
        assert_eq!(sub_loss(&st, &lower), 0.0);
        let higher = SubProblem::new(&ds, &feats, &parse_expr("z + 4", &p.vars).unwrap(), &post, &p.guard).unwrap();
        assert_eq!(sub_loss(&st, &higher), 4.0);
    }

    #[test]
    fn gambler_err2() {
        let p = parse_program(
            "var x : int; var y : int; var z : int; local d : bool;
             while (0 < x and x < y) { d ~ bernoulli(1/2); if (d) { x = x + 1; } else { x = x - 1; } z = z + 1; }",
        )
        .unwrap();
        let s = p.state_from_pairs(&[("x", 1.0), ("y", 3.0), ("z", 0.0)]).unwrap();
        let up = p.state_from_pairs(&[("x", 2.0), ("y", 3.0), ("z", 1.0)]).unwrap();
        let down = p.state_from_pairs(&[("x", 0.0), ("y", 3.0), ("z", 1.0)]).unwrap();
        let ds = SubDataset { entries: alloc::vec![SubEntry { state: s, successors: alloc::vec![up, down] }] };
        let feats = set(&p, &["x*y", "x*x"]);
        let post = Expr::zero();
        let prob = SubProblem::new(&ds, &feats, &Expr::zero(), &post, &p.guard).unwrap();
        let mut st = prob.initial_tree(FeatureKind::Linear, &[], 1.0);
        st.leaves[0] = alloc::vec![prob.scale[0], -prob.scale[1], 0.0];
        // x(y - x) is 2 at the state and (2 + 0)/2 = 1 on average after one step.
        assert!((sub_loss(&st, &prob) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leaf_gradient_by_hand() {
        let p = parse_program(GEO0).unwrap();
        let feats = set(&p, &["z", "p1"]);
        let s = p.state_from_pairs(&[("z", 2.0), ("flip", 0.0), ("p1", 0.5)]).unwrap();
        let ds = SubDataset { entries: alloc::vec![SubEntry { state: s.clone(), successors: alloc::vec![s] }] };
        let prob = SubProblem::new(&ds, &feats, &parse_expr("z + 5", &p.vars).unwrap(), &parse_expr("z", &p.vars).unwrap(), &p.guard)
            .unwrap();
        let st = prob.initial_tree(FeatureKind::Linear, &[], 1.0);
        let g = grad_sub_loss(&st, &prob);
        // Raw features are z = 2, p1 = 0.5; scaled by themselves they are 1.
        assert_eq!(g, alloc::vec![-1.0, -1.0, -1.0]);
        let scaled = [prob.points[0].z[0], prob.points[0].z[1]];
        assert_eq!(scaled, [1.0, 1.0]);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (_, _, prob, _) = mart_problem(20);
        let st = prob.initial_tree(FeatureKind::Linear, &[], 1.0);
        let h = SoftHyper { epochs: 0, ..SoftHyper::default() };
        assert_eq!(train(&st, &prob, &h).unwrap().tree, st);
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let (_, fl, prob, _) = mart_problem(20);
        let mut st = prob.initial_tree(FeatureKind::Linear, &[], 1.0);
        st.leaves[0][fl.len()] = 1.0;
        if sub_loss(&st, &prob) == 0.0 {
            assert!(grad_sub_loss(&st, &prob).iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn mart_learns_one() {
        let (p, fl, prob, pre) = mart_problem(100);
        let out = train_restarts(&prob, FeatureKind::Linear, &[], &SoftHyper::default()).unwrap();
        let hard = round_tree(&harden(&out.tree), RoundingScheme::Int);
        let post = parse_expr("rounds", &p.vars).unwrap();
        let cand = form_candidate(&post, &p.guard, &tree_to_expectation(&hard, &fl));
        assert_eq!(expr_to_string(&cand, &p.vars), "rounds + [b > 0]");
        let states = sample_states(&p, 30, &Domain::default(), &RandomStream::new(4));
        assert_eq!(exact_sub_loss(&p, &pre, &cand, &states).unwrap(), 0.0);
    }

    #[test]
    fn geo0_sub() {
        let p = parse_program(GEO0).unwrap();
        let post = parse_expr("z", &p.vars).unwrap();
        let pre = parse_expr("z + [flip == 0]*(1 - p1)", &p.vars).unwrap();
        let (fl, _) = get_features(&p, &[post.clone()]).unwrap();
        let rng = RandomStream::new(2);
        let states = sample_states(&p, 200, &Domain::default(), &rng.split(0));
        let ds = sample_traces_sub(&p, &states, 500, &rng.split(1)).unwrap();
        let prob = SubProblem::new(&ds, &fl, &pre, &post, &p.guard).unwrap();
        let out = train_restarts(&prob, FeatureKind::Linear, &[], &SoftHyper::default()).unwrap();
        let hard = round_tree(&harden(&out.tree), RoundingScheme::Int);
        let cand = form_candidate(&post, &p.guard, &tree_to_expectation(&hard, &fl));
        assert_eq!(expr_to_string(&cand, &p.vars), "z + [flip == 0]*(-p1 + 1)");
    }

    fn random_problem(seed: u64, kind: FeatureKind, depth: usize) -> (SoftTree, SubProblem) {
        let p = parse_program(GEO0).unwrap();
        let post = parse_expr("z", &p.vars).unwrap();
        let pre = parse_expr("z + [flip == 0]*(2 - p1)", &p.vars).unwrap();
        let mut feats = set(&p, &["z", "p1", "z*p1", "1 + p1"]);
        feats.kind = kind;
        let rng = RandomStream::new(seed);
        let states = sample_states(&p, 12, &Domain::default(), &rng.split(0));
        let ds = sample_traces_sub(&p, &states, 4, &rng.split(1)).unwrap();
        let prob = SubProblem::new(&ds, &feats, &pre, &post, &p.guard).unwrap();
        let split: Vec<usize> = [1, 0][..depth].to_vec();
        let mut st = prob.initial_tree(kind, &split, 0.3);
        let mut r = rng.split(2);
        let mut theta = st.params();
        for t in theta.iter_mut() {
            *t += r.uniform(-0.5, 0.5);
        }
        st.set_params(&theta);
        (st, prob)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn gradient_matches_differences(seed in 0u64..1000, mult in any::<bool>(), depth in 0usize..3) {
            let kind = if mult { FeatureKind::Multiplicative } else { FeatureKind::Linear };
            let (st, prob) = random_problem(seed, kind, depth);
            let g = grad_sub_loss(&st, &prob);
            let theta = st.params();
            let h = 1e-5;
            for k in 0..theta.len() {
                let mut a = st.clone();
                let mut b = st.clone();
                let mut ta = theta.clone();
                let mut tb = theta.clone();
                ta[k] += h;
                tb[k] -= h;
                a.set_params(&ta);
                b.set_params(&tb);
                let fd = (sub_loss(&a, &prob) - sub_loss(&b, &prob)) / (2.0 * h);
                let err = (fd - g[k]).abs() / (1.0f64).max(g[k].abs().max(fd.abs()));
                prop_assert!(err <= 1e-4, "param {} analytic {} numeric {}", k, g[k], fd);
            }
        }

        #[test]
        fn weights_sum_to_one(z in -3.0f64..3.0, c in -3.0f64..3.0, tau in 0.01f64..2.0) {
            let split = SoftSplit { feature: 0, values: alloc::vec![], boolean: false, integral: false };
            let st = SoftTree::new(FeatureKind::Linear, 2, alloc::vec![split.clone(), SoftSplit { feature: 1, ..split }], alloc::vec![c, -c], tau);
            let w = st.weights(&st.scaled(&[z, z * 0.5]));
            prop_assert_eq!(w.len(), 4);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
