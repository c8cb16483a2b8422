//! Model trees with linear or multiplicative leaves.
//!
//! A tree routes a feature vector by its predicates (true goes right) and
//! applies the reached leaf model. Trees are fitted to the residual
//! `v - post` of an exact data set, so that `post + [G]*T` approximates the
//! expected value of the post-expectation.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use log::debug;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::ast::{BoolExpr, CmpOp, Expr};
use crate::eval::EvalError;
use crate::exec::{CompiledBool, CompiledExpr};
use crate::features::{FeatureClass, FeatureKind, FeatureSet};
use crate::linalg::{ridge, LinearFit};
use crate::num::{decimal_ratio, round_digits};
use crate::print::expr_to_string;
use crate::sampler::ExactDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LeafModel {
    Linear { coef: Vec<f64>, intercept: f64 },
    Multiplicative { constant: f64, exponents: Vec<f64> },
}

impl LeafModel {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LeafModel::Linear { coef, intercept } => intercept + coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
            LeafModel::Multiplicative { constant, exponents } => {
                let mut acc = *constant;
                for (e, v) in exponents.iter().zip(x) {
                    if *e == 0.0 {
                        continue;
                    }
                    acc *= if e.fract() == 0.0 && e.abs() < 64.0 { v.powi(*e as i32) } else { v.powf(*e) };
                }
                acc
            }
        }
    }

    pub fn zero(kind: FeatureKind, n: usize) -> Self {
        match kind {
            FeatureKind::Linear => LeafModel::Linear { coef: alloc::vec![0.0; n], intercept: 0.0 },
            FeatureKind::Multiplicative => LeafModel::Multiplicative { constant: 0.0, exponents: alloc::vec![0.0; n] },
        }
    }

    fn round(&self, digits: u32) -> LeafModel {
        let clean = |x: f64| if x == 0.0 { 0.0 } else { x };
        match self {
            LeafModel::Linear { coef, intercept } => LeafModel::Linear {
                coef: coef.iter().map(|&c| clean(round_digits(c, digits))).collect(),
                intercept: clean(round_digits(*intercept, digits)),
            },
            LeafModel::Multiplicative { constant, exponents } => LeafModel::Multiplicative {
                constant: clean(round_digits(*constant, digits)),
                exponents: exponents.iter().map(|&e| clean(e.round())).collect(),
            },
        }
    }

    fn magnitude(&self) -> f64 {
        match self {
            LeafModel::Linear { coef, intercept } => intercept.abs() + coef.iter().map(|c| c.abs()).sum::<f64>(),
            LeafModel::Multiplicative { constant, exponents } => {
                constant.abs() + exponents.iter().map(|c| c.abs()).sum::<f64>()
            }
        }
    }
}

/// Predicate `features[feature] op cut`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub op: CmpOp,
    pub cut: f64,
}

impl Split {
    pub fn holds(&self, x: &[f64]) -> bool {
        self.op.holds(&x[self.feature], &self.cut)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTree {
    Leaf(LeafModel),
    Node {
        split: Split,
        /// Taken when the predicate fails.
        left: Box<ModelTree>,
        /// Taken when the predicate holds.
        right: Box<ModelTree>,
    },
}

impl ModelTree {
    pub fn node_count(&self) -> usize {
        match self {
            ModelTree::Leaf(_) => 1,
            ModelTree::Node { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ModelTree::Leaf(_) => 0,
            ModelTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Node count, then total coefficient magnitude.
    pub fn simplicity(&self) -> (usize, f64) {
        fn mag(t: &ModelTree) -> f64 {
            match t {
                ModelTree::Leaf(l) => l.magnitude(),
                ModelTree::Node { left, right, .. } => mag(left) + mag(right),
            }
        }
        (self.node_count(), mag(self))
    }

    pub fn leaves(&self) -> Vec<&LeafModel> {
        match self {
            ModelTree::Leaf(l) => alloc::vec![l],
            ModelTree::Node { left, right, .. } => {
                let mut out = left.leaves();
                out.extend(right.leaves());
                out
            }
        }
    }
}

pub fn tree_eval(t: &ModelTree, x: &[f64]) -> f64 {
    match t {
        ModelTree::Leaf(l) => l.eval(x),
        ModelTree::Node { split, left, right } => {
            if split.holds(x) {
                tree_eval(right, x)
            } else {
                tree_eval(left, x)
            }
        }
    }
}

/// Features and targets of an exact data set, evaluated once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub x: Vec<Vec<f64>>,
    pub post: Vec<f64>,
    pub guard: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainingSet {
    pub fn new(ds: &ExactDataset, feats: &FeatureSet, post: &Expr, guard: &BoolExpr) -> Result<Self, EvalError> {
        let post = CompiledExpr::new(post);
        let guard = CompiledBool::new(guard);
        let mut out = TrainingSet::default();
        for e in &ds.entries {
            out.x.push(feats.eval(&e.state)?);
            out.post.push(post.eval(&e.state.0)?);
            out.guard.push(if guard.eval(&e.state.0)? { 1.0 } else { 0.0 });
            out.target.push(e.value);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `sqrt(sum (post + G*T - v)^2)`.
pub fn loss_exact(t: &ModelTree, data: &TrainingSet) -> f64 {
    let mut acc = 0.0;
    for i in 0..data.len() {
        let pred = data.post[i] + if data.guard[i] != 0.0 { data.guard[i] * tree_eval(t, &data.x[i]) } else { 0.0 };
        acc += (pred - data.target[i]).powi(2);
    }
    acc.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_gain: f64,
    /// Relative cross-validated improvement needed to add a leaf regressor.
    pub select_gain: f64,
    pub folds: usize,
    /// Standard errors by which a split must beat its parent leaf.
    pub split_se: f64,
    pub lambda: f64,
    /// Root candidates whose full subtrees are compared.
    pub lookahead: usize,
    /// Cut points tried per feature.
    pub max_cuts: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 2, min_leaf: 10, min_gain: 1e-3, select_gain: 1e-2, folds: 5, split_se: 2.0, lambda: 1e-6, lookahead: 8, max_cuts: 64 }
    }
}

const REFINE: usize = 40;

/// Regression view of a training set for one leaf kind.
struct Design<'a> {
    split_x: Vec<&'a [f64]>,
    reg_x: Vec<Vec<f64>>,
    y: Vec<f64>,
    reg_cols: Vec<usize>,
    classes: Vec<FeatureClass>,
    kind: FeatureKind,
    n_features: usize,
}

fn design<'a>(data: &'a TrainingSet, feats: &FeatureSet) -> Design<'a> {
    let kind = feats.kind;
    let n_features = feats.len();
    let classes: Vec<FeatureClass> = feats.features.iter().map(|f| f.class).collect();
    let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.guard[i] != 0.0).collect();
    let resid = |i: usize| (data.target[i] - data.post[i]) / data.guard[i];
    match kind {
        FeatureKind::Linear => Design {
            split_x: rows.iter().map(|&i| data.x[i].as_slice()).collect(),
            reg_x: rows.iter().map(|&i| data.x[i].clone()).collect(),
            y: rows.iter().map(|&i| resid(i)).collect(),
            reg_cols: (0..n_features).collect(),
            classes,
            kind,
            n_features,
        },
        FeatureKind::Multiplicative => {
            let before = rows.len();
            rows.retain(|&i| resid(i) > 0.0);
            if rows.len() < before {
                debug!("dropped {} examples with nonpositive residuals from the multiplicative fit", before - rows.len());
            }
            let reg_cols: Vec<usize> =
                (0..n_features).filter(|&j| rows.iter().all(|&i| data.x[i][j] > 0.0 && data.x[i][j].is_finite())).collect();
            Design {
                split_x: rows.iter().map(|&i| data.x[i].as_slice()).collect(),
                reg_x: rows.iter().map(|&i| reg_cols.iter().map(|&j| data.x[i][j].ln()).collect()).collect(),
                y: rows.iter().map(|&i| resid(i).ln()).collect(),
                reg_cols,
                classes,
                kind,
                n_features,
            }
        }
    }
}

impl Design<'_> {
    fn leaf(&self, fit: &LinearFit) -> LeafModel {
        let mut full = alloc::vec![0.0; self.n_features];
        for (a, &j) in self.reg_cols.iter().enumerate() {
            full[j] = fit.coef[a];
        }
        match self.kind {
            FeatureKind::Linear => LeafModel::Linear { coef: full, intercept: fit.intercept },
            FeatureKind::Multiplicative => LeafModel::Multiplicative { constant: fit.intercept.exp(), exponents: full },
        }
    }

    fn fit(&self, idx: &[usize], cols: &[usize], lambda: f64) -> LinearFit {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| cols.iter().map(|&a| self.reg_x[i][a]).collect()).collect();
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let sub = ridge(&rows, &y, lambda, REFINE);
        let mut coef = alloc::vec![0.0; self.reg_cols.len()];
        for (k, &a) in cols.iter().enumerate() {
            coef[a] = sub.coef[k];
        }
        LinearFit { coef, intercept: sub.intercept }
    }

    fn fold_stats(&self, idx: &[usize], folds: usize) -> (Stats, Vec<Stats>) {
        let d = self.reg_cols.len();
        let mut total = Stats::new(d);
        let mut parts = alloc::vec![Stats::new(d); folds.max(1)];
        for &i in idx {
            total.add(&self.reg_x[i], self.y[i], 1.0);
            parts[i % folds.max(1)].add(&self.reg_x[i], self.y[i], 1.0);
        }
        (total, parts)
    }

    /// Forward selection of leaf regressors by cross-validated error.
    fn select(&self, idx: &[usize], cfg: &TreeConfig) -> (Vec<usize>, Vec<(usize, f64)>) {
        let (total, parts) = self.fold_stats(idx, cfg.folds);
        let cv = |cols: &[usize]| -> f64 {
            let mut acc = 0.0;
            for part in &parts {
                if part.n < 0.5 {
                    continue;
                }
                let train = total.minus(part);
                let (b, a) = train.solve(cols, cfg.lambda);
                acc += part.sse_with(cols, &b, a);
            }
            acc
        };
        let floor = 1e-10 * (total.syy + 1.0);
        let mut cols = Vec::new();
        let mut cur = cv(&cols);
        let min_train = parts.iter().map(|p| total.n - p.n).fold(f64::INFINITY, f64::min);
        while cur > floor && (cols.len() + 2) as f64 <= min_train {
            let mut best: Option<(usize, f64)> = None;
            for a in 0..self.reg_cols.len() {
                if cols.contains(&a) {
                    continue;
                }
                cols.push(a);
                let score = cv(&cols);
                cols.pop();
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((a, score));
                }
            }
            match best {
                Some((a, score)) if score < cur * (1.0 - cfg.select_gain) => {
                    cols.push(a);
                    cur = score;
                }
                _ => break,
            }
        }
        cols.sort_unstable();
        let folds = cfg.folds.max(1);
        let fits: Vec<(Vec<f64>, f64)> = parts.iter().map(|p| total.minus(p).solve(&cols, cfg.lambda)).collect();
        let errs = idx
            .iter()
            .map(|&i| {
                let (b, a) = &fits[i % folds];
                let pred = a + cols.iter().zip(b).map(|(&c, w)| w * self.reg_x[i][c]).sum::<f64>();
                (i, (self.y[i] - pred).powi(2))
            })
            .collect();
        (cols, errs)
    }
}

/// Running sums for least-squares scores of contiguous row ranges.
#[derive(Clone)]
struct Stats {
    n: f64,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    sy: f64,
    sxy: Vec<f64>,
    syy: f64,
}

impl Stats {
    fn new(d: usize) -> Self {
        Stats { n: 0.0, sx: alloc::vec![0.0; d], sxx: alloc::vec![0.0; d * d], sy: 0.0, sxy: alloc::vec![0.0; d], syy: 0.0 }
    }

    fn add(&mut self, x: &[f64], y: f64, sign: f64) {
        let d = self.sx.len();
        self.n += sign;
        self.sy += sign * y;
        self.syy += sign * y * y;
        for a in 0..d {
            self.sx[a] += sign * x[a];
            self.sxy[a] += sign * x[a] * y;
            for b in 0..=a {
                self.sxx[a * d + b] += sign * x[a] * x[b];
            }
        }
    }

    fn minus(&self, other: &Stats) -> Stats {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Stats {
            n: self.n - other.n,
            sx: sub(&self.sx, &other.sx),
            sxx: sub(&self.sxx, &other.sxx),
            sy: self.sy - other.sy,
            sxy: sub(&self.sxy, &other.sxy),
            syy: self.syy - other.syy,
        }
    }

    fn xx(&self, i: usize, j: usize) -> f64 {
        let d = self.sx.len();
        if i >= j {
            self.sxx[i * d + j]
        } else {
            self.sxx[j * d + i]
        }
    }

    /// Damped least squares on the columns `cols`, as `(coef, intercept)`.
    fn solve(&self, cols: &[usize], lambda: f64) -> (Vec<f64>, f64) {
        let n = self.n.max(1.0);
        let mut beta = alloc::vec![0.0; cols.len()];
        let active: Vec<usize> = (0..cols.len())
            .filter(|&k| {
                let c = cols[k];
                self.xx(c, c) - self.sx[c] * self.sx[c] / n > 1e-10 * (1.0 + self.xx(c, c))
            })
            .collect();
        let k = active.len();
        if k > 0 {
            let mut m = alloc::vec![0.0; k * k];
            let mut rhs = alloc::vec![0.0; k];
            for a in 0..k {
                let ca = cols[active[a]];
                rhs[a] = self.sxy[ca] - self.sx[ca] * self.sy / n;
                for b in 0..k {
                    let cb = cols[active[b]];
                    m[a * k + b] = self.xx(ca, cb) - self.sx[ca] * self.sx[cb] / n;
                }
            }
            let mut damp = lambda.max(1e-12);
            while damp <= 1.0 {
                let mut mm = m.clone();
                for a in 0..k {
                    mm[a * k + a] *= 1.0 + damp;
                }
                if let Some(b) = solve_spd(&mm, &rhs, k) {
                    for a in 0..k {
                        beta[active[a]] = b[a];
                    }
                    break;
                }
                damp *= 100.0;
            }
        }
        let mut intercept = self.sy / n;
        for (k, &c) in cols.iter().enumerate() {
            intercept -= beta[k] * self.sx[c] / n;
        }
        (beta, intercept)
    }

    /// `sum (y - a - b.x)^2` over the accumulated rows.
    fn sse_with(&self, cols: &[usize], b: &[f64], a: f64) -> f64 {
        let mut acc = self.syy + self.n * a * a - 2.0 * a * self.sy;
        for (k, &c) in cols.iter().enumerate() {
            acc += 2.0 * b[k] * (a * self.sx[c] - self.sxy[c]);
            for (l, &e) in cols.iter().enumerate() {
                acc += b[k] * b[l] * self.xx(c, e);
            }
        }
        acc.max(0.0)
    }

    /// Residual sum of squares of the damped fit on all columns.
    fn sse(&self, lambda: f64) -> f64 {
        if self.n < 0.5 {
            return 0.0;
        }
        let cols: Vec<usize> = (0..self.sx.len()).collect();
        let (b, a) = self.solve(&cols, lambda);
        self.sse_with(&cols, &b, a)
    }
}

fn solve_spd(m: &[f64], b: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = m[i * k + j];
            for t in 0..j {
                s -= l[i * k + t] * l[j * k + t];
            }
            if i == j {
                if s <= 1e-300 || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..k {
        for t in 0..i {
            y[i] -= l[i * k + t] * y[t];
        }
        y[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for t in i + 1..k {
            y[i] -= l[t * k + i] * y[t];
        }
        y[i] /= l[i * k + i];
    }
    Some(y)
}

/// Shortest decimal `r` with `lo <= r < hi`.
fn snap_cut(lo: f64, hi: f64) -> f64 {
    for digits in 0..=8 {
        let r = round_digits((lo + hi) / 2.0, digits);
        if lo <= r && r < hi {
            return r;
        }
    }
    (lo + hi) / 2.0
}

#[derive(Clone, Debug)]
struct Candidate {
    split: Split,
    score: f64,
}

impl Design<'_> {
    fn candidates(&self, idx: &[usize], cfg: &TreeConfig) -> Vec<Candidate> {
        let d = self.reg_cols.len();
        let mut total = Stats::new(d);
        for &i in idx {
            total.add(&self.reg_x[i], self.y[i], 1.0);
        }
        let mut out = Vec::new();
        for j in 0..self.n_features {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| self.split_x[a][j].partial_cmp(&self.split_x[b][j]).unwrap_or(core::cmp::Ordering::Equal));
            let mut distinct: Vec<f64> = order.iter().map(|&i| self.split_x[i][j]).collect();
            distinct.dedup();
            if distinct.len() < 2 {
                continue;
            }
            let integral = matches!(self.classes[j], FeatureClass::Bool | FeatureClass::Int)
                && distinct.iter().all(|v| v.fract() == 0.0);
            if self.classes[j] == FeatureClass::Bool && distinct.len() == 2 {
                self.eq_candidate(j, distinct[1], idx, &total, cfg, &mut out);
                continue;
            }
            if integral && distinct.len() <= 16 {
                for &v in &distinct {
                    self.eq_candidate(j, v, idx, &total, cfg, &mut out);
                }
            }
            let gaps = distinct.len() - 1;
            let step = if gaps > cfg.max_cuts { gaps as f64 / cfg.max_cuts as f64 } else { 1.0 };
            let mut chosen: Vec<usize> = (0..gaps.min(cfg.max_cuts)).map(|k| (k as f64 * step) as usize).collect();
            chosen.dedup();
            let mut left = Stats::new(d);
            let mut pos = 0;
            for g in chosen {
                let boundary = distinct[g];
                while pos < order.len() && self.split_x[order[pos]][j] <= boundary {
                    left.add(&self.reg_x[order[pos]], self.y[order[pos]], 1.0);
                    pos += 1;
                }
                if pos < cfg.min_leaf || order.len() - pos < cfg.min_leaf {
                    continue;
                }
                let cut = if integral { boundary.floor() } else { snap_cut(boundary, distinct[g + 1]) };
                let score = left.sse(cfg.lambda) + total.minus(&left).sse(cfg.lambda);
                out.push(Candidate { split: Split { feature: j, op: CmpOp::Le, cut }, score });
            }
        }
        out.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(core::cmp::Ordering::Equal));
        out
    }

    fn eq_candidate(&self, j: usize, v: f64, idx: &[usize], total: &Stats, cfg: &TreeConfig, out: &mut Vec<Candidate>) {
        let mut hit = Stats::new(self.reg_cols.len());
        let mut count = 0;
        for &i in idx {
            if self.split_x[i][j] == v {
                hit.add(&self.reg_x[i], self.y[i], 1.0);
                count += 1;
            }
        }
        if count < cfg.min_leaf || idx.len() - count < cfg.min_leaf {
            return;
        }
        let score = hit.sse(cfg.lambda) + total.minus(&hit).sse(cfg.lambda);
        out.push(Candidate { split: Split { feature: j, op: CmpOp::Eq, cut: v }, score });
    }

    fn predict(&self, t: &ModelTree, i: usize) -> f64 {
        match t {
            ModelTree::Node { split, left, right } => {
                self.predict(if split.holds(self.split_x[i]) { right } else { left }, i)
            }
            ModelTree::Leaf(LeafModel::Linear { coef, intercept }) => {
                intercept + self.reg_cols.iter().enumerate().map(|(a, &j)| coef[j] * self.reg_x[i][a]).sum::<f64>()
            }
            ModelTree::Leaf(LeafModel::Multiplicative { constant, exponents }) => {
                constant.ln() + self.reg_cols.iter().enumerate().map(|(a, &j)| exponents[j] * self.reg_x[i][a]).sum::<f64>()
            }
        }
    }

    fn train_sse(&self, t: &ModelTree, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| (self.y[i] - self.predict(t, i)).powi(2)).sum()
    }

    /// Tree for the rows `idx` with its per-row cross-validated errors.
    fn grow(&self, idx: &[usize], depth: usize, cfg: &TreeConfig) -> (ModelTree, Vec<(usize, f64)>) {
        let (cols, leaf_errs) = self.select(idx, cfg);
        let leaf = ModelTree::Leaf(self.leaf(&self.fit(idx, &cols, cfg.lambda)));
        let leaf_cv: f64 = leaf_errs.iter().map(|e| e.1).sum();
        let scale: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum::<f64>() + 1.0;
        if depth >= cfg.max_depth || idx.len() < 2 * cfg.min_leaf || leaf_cv <= 1e-10 * scale {
            return (leaf, leaf_errs);
        }
        let cands = self.candidates(idx, cfg);
        let look = if cfg.max_depth - depth >= 2 { cfg.lookahead.max(1) } else { 1 };
        let mut best: Option<(ModelTree, Vec<(usize, f64)>, f64)> = None;
        for c in cands.iter().take(look) {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| !c.split.holds(self.split_x[i]));
            let (lt, mut errs) = self.grow(&l, depth + 1, cfg);
            let (rt, re) = self.grow(&r, depth + 1, cfg);
            errs.extend(re);
            let total: f64 = errs.iter().map(|e| e.1).sum();
            let node = ModelTree::Node { split: c.split.clone(), left: Box::new(lt), right: Box::new(rt) };
            let key = |t: &ModelTree, cv: f64| (if cv <= 1e-10 * scale { 0.0 } else { cv }, t.node_count());
            if best.as_ref().map_or(true, |b| key(&node, total) < key(&b.0, b.2)) {
                best = Some((node, errs, total));
            }
        }
        match best {
            Some((tree, mut errs, cv)) if cv < leaf_cv * (1.0 - cfg.min_gain) => {
                errs.sort_by_key(|e| e.0);
                let diffs: Vec<f64> = leaf_errs.iter().zip(&errs).map(|(a, b)| a.1 - b.1).collect();
                let n = diffs.len() as f64;
                let mean = diffs.iter().sum::<f64>() / n;
                let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                if mean * n > cfg.split_se * (var * n).sqrt() && self.train_sse(&tree, idx) <= self.train_sse(&leaf, idx) {
                    (tree, errs)
                } else {
                    (leaf, leaf_errs)
                }
            }
            _ => (leaf, leaf_errs),
        }
    }
}

/// Fits a tree to the residuals `(v - post)/G` of the guard-true examples.
pub fn fit_model_tree(data: &TrainingSet, feats: &FeatureSet, cfg: &TreeConfig) -> ModelTree {
    let des = design(data, feats);
    if des.y.is_empty() {
        return ModelTree::Leaf(LeafModel::zero(feats.kind, feats.len()));
    }
    let idx: Vec<usize> = (0..des.y.len()).collect();
    collapse(des.grow(&idx, 0, cfg).0)
}

/// Merges sibling leaves that are identical.
pub fn collapse(t: ModelTree) -> ModelTree {
    match t {
        ModelTree::Leaf(_) => t,
        ModelTree::Node { split, left, right } => {
            let left = collapse(*left);
            let right = collapse(*right);
            match (&left, &right) {
                (ModelTree::Leaf(a), ModelTree::Leaf(b)) if a == b => left,
                _ => ModelTree::Node { split, left: Box::new(left), right: Box::new(right) },
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoundingScheme {
    #[serde(rename = "int")]
    Int,
    #[serde(rename = "1-digit")]
    OneDigit,
    #[serde(rename = "2-digit")]
    TwoDigit,
}

impl RoundingScheme {
    pub const ALL: [RoundingScheme; 3] = [RoundingScheme::Int, RoundingScheme::OneDigit, RoundingScheme::TwoDigit];

    pub fn digits(self) -> u32 {
        match self {
            RoundingScheme::Int => 0,
            RoundingScheme::OneDigit => 1,
            RoundingScheme::TwoDigit => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RoundingScheme::Int => "int",
            RoundingScheme::OneDigit => "1-digit",
            RoundingScheme::TwoDigit => "2-digit",
        }
    }
}

/// Rounds leaf coefficients (linear) or the leading constant (multiplicative,
/// exponents to integers) and merges leaves that become equal.
pub fn round_tree(t: &ModelTree, scheme: RoundingScheme) -> ModelTree {
    fn go(t: &ModelTree, digits: u32) -> ModelTree {
        match t {
            ModelTree::Leaf(l) => ModelTree::Leaf(l.round(digits)),
            ModelTree::Node { split, left, right } => ModelTree::Node {
                split: split.clone(),
                left: Box::new(go(left, digits)),
                right: Box::new(go(right, digits)),
            },
        }
    }
    collapse(go(t, scheme.digits()))
}

fn ratio(x: f64) -> BigRational {
    decimal_ratio(x).unwrap_or_else(BigRational::zero)
}

fn leaf_expr(l: &LeafModel, feats: &FeatureSet) -> Expr {
    match l {
        LeafModel::Linear { coef, intercept } => {
            let mut out: Option<Expr> = None;
            let mut push = |c: BigRational, e: Expr| {
                out = Some(match out.take() {
                    None => scaled(c, e),
                    Some(acc) if c.is_negative() => Expr::sub(acc, scaled(-c, e)),
                    Some(acc) => Expr::add(acc, scaled(c, e)),
                });
            };
            for (c, f) in coef.iter().zip(&feats.features) {
                if *c != 0.0 {
                    push(ratio(*c), f.expr.clone());
                }
            }
            let k = ratio(*intercept);
            if !k.is_zero() {
                push(k, Expr::one());
            }
            out.unwrap_or_else(Expr::zero)
        }
        LeafModel::Multiplicative { constant, exponents } => {
            let c = ratio(*constant);
            if c.is_zero() {
                return Expr::zero();
            }
            let mut out = Expr::Const(c);
            for (e, f) in exponents.iter().zip(&feats.features) {
                let k = e.round() as i32;
                if k != 0 {
                    out = Expr::mul(out, Expr::pow(f.expr.clone(), k));
                }
            }
            out
        }
    }
}

fn scaled(c: BigRational, e: Expr) -> Expr {
    if c == BigRational::from_integer(1.into()) {
        e
    } else if c == BigRational::from_integer((-1).into()) {
        Expr::neg(e)
    } else {
        Expr::mul(Expr::Const(c), e)
    }
}

fn predicate(s: &Split, feats: &FeatureSet) -> BoolExpr {
    BoolExpr::cmp(s.op, feats.features[s.feature].expr.clone(), Expr::Const(ratio(s.cut)))
}

/// Sum over root-to-leaf paths of the path indicator times the leaf model.
pub fn tree_to_expectation(t: &ModelTree, feats: &FeatureSet) -> Expr {
    fn go(t: &ModelTree, feats: &FeatureSet, path: Option<BoolExpr>, out: &mut Vec<Expr>) {
        match t {
            ModelTree::Leaf(l) => {
                let e = leaf_expr(l, feats);
                if e.is_zero_const() {
                    return;
                }
                out.push(match path {
                    Some(p) => Expr::mul(Expr::ind(p), e),
                    None => e,
                });
            }
            ModelTree::Node { split, left, right } => {
                let holds = predicate(split, feats);
                let fails = BoolExpr::cmp(split.op.negate(), feats.features[split.feature].expr.clone(), Expr::Const(ratio(split.cut)));
                let join = |p: &Option<BoolExpr>, q: BoolExpr| match p {
                    Some(p) => BoolExpr::and(p.clone(), q),
                    None => q,
                };
                go(left, feats, Some(join(&path, fails)), out);
                go(right, feats, Some(join(&path, holds)), out);
            }
        }
    }
    let mut terms = Vec::new();
    go(t, feats, None, &mut terms);
    Expr::sum(terms)
}

/// `post + [G]*inner`.
pub fn form_candidate(post: &Expr, guard: &BoolExpr, inner: &Expr) -> Expr {
    if inner.is_zero_const() {
        return post.clone();
    }
    Expr::add(post.clone(), Expr::mul(Expr::ind(guard.clone()), inner.clone()))
}

/// Indented rendering with one predicate or leaf per line.
pub fn tree_to_string(t: &ModelTree, feats: &FeatureSet, vars: &crate::ast::Vars) -> String {
    fn go(t: &ModelTree, feats: &FeatureSet, vars: &crate::ast::Vars, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match t {
            ModelTree::Leaf(l) => {
                out.push_str(&format!("{}{}\n", pad, expr_to_string(&leaf_expr(l, feats), vars)));
            }
            ModelTree::Node { split, left, right } => {
                out.push_str(&format!("{}if {}:\n", pad, crate::print::bool_to_string(&predicate(split, feats), vars)));
                go(right, feats, vars, depth + 1, out);
                out.push_str(&format!("{}else:\n", pad));
                go(left, feats, vars, depth + 1, out);
            }
        }
    }
    let mut out = String::new();
    go(t, feats, vars, 0, &mut out);
    out
}
