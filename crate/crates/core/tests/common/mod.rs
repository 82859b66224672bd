//! Shared generators and independent oracles for the integration tests.
//! Also compiled into the `seedstab` acceptance target.

#![allow(dead_code)]

use std::collections::BTreeSet;

use seedstab_core::gradcheck::{finite_difference_grad, relative_error};
use seedstab_core::interpret::{top_fraction_indices, InterpretationDistribution, Predictor};
use seedstab_core::{ComputeGraph, NodeId, Result, SeededRng, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-4;

// ---------------------------------------------------------------- graphs

#[derive(Clone, Copy, PartialEq)]
enum Range {
    Any,
    /// Values in [-1, 1].
    Bounded,
    /// Values bounded away from zero and above.
    Positive,
}

pub struct RandomGraph {
    pub graph: ComputeGraph,
    pub output: NodeId,
    pub inputs: Vec<(String, Tensor)>,
}

/// A random differentiable graph over inputs `x0`, `x1` (shape `[r, c]`),
/// `m` (`[c, c]`) and `v` (`[c]`), reduced to a scalar. At most
/// `max_nodes` nodes; every tensor has at most 16 elements.
pub fn random_graph(rng: &mut SeededRng, max_nodes: usize) -> RandomGraph {
    let r = 1 + rng.below(4);
    let c = 1 + rng.below(4);
    let mut g = ComputeGraph::new();
    let mut inputs = Vec::new();
    let mut pool: Vec<(NodeId, Range)> = Vec::new();
    for name in ["x0", "x1"] {
        let id = g.input(name, &[r, c]).unwrap();
        inputs.push((name.to_string(), rng.uniform(-1.0, 1.0, &[r, c]).unwrap()));
        pool.push((id, Range::Bounded));
    }
    let m = g.input("m", &[c, c]).unwrap();
    inputs.push(("m".into(), rng.uniform(-1.0, 1.0, &[c, c]).unwrap()));
    let v = g.input("v", &[c]).unwrap();
    inputs.push(("v".into(), rng.uniform(-1.0, 1.0, &[c]).unwrap()));

    let target = 8 + rng.below(max_nodes.saturating_sub(17).max(1));
    while g.len() < target {
        let pick = |rng: &mut SeededRng, pool: &[(NodeId, Range)], want: Option<Range>| {
            let candidates: Vec<(NodeId, Range)> = pool
                .iter()
                .copied()
                .filter(|(_, k)| match want {
                    None => true,
                    Some(Range::Bounded) => *k == Range::Bounded,
                    Some(Range::Positive) => *k == Range::Positive,
                    Some(Range::Any) => true,
                })
                .collect();
            if candidates.is_empty() {
                None
            } else {
                Some(candidates[rng.below(candidates.len())])
            }
        };
        let (a, _) = pick(rng, &pool, None).unwrap();
        let (b, _) = pick(rng, &pool, None).unwrap();
        let made = match rng.below(12) {
            0 => (g.add(a, b).unwrap(), Range::Any),
            1 => (g.sub(a, b).unwrap(), Range::Any),
            2 => (g.mul(a, b).unwrap(), Range::Any),
            3 => {
                let f = rng.uniform_vec(-2.0, 2.0, 1).unwrap()[0];
                (g.scale(a, f).unwrap(), Range::Any)
            }
            4 => (g.tanh(a).unwrap(), Range::Bounded),
            5 => (g.sigmoid(a).unwrap(), Range::Positive),
            6 => match pick(rng, &pool, Some(Range::Bounded)) {
                Some((x, _)) => (g.exp(x).unwrap(), Range::Positive),
                None => continue,
            },
            7 => match pick(rng, &pool, Some(Range::Positive)) {
                Some((x, _)) => (g.log(x).unwrap(), Range::Any),
                None => continue,
            },
            8 => (g.softmax(a).unwrap(), Range::Positive),
            9 => (g.matmul(a, m).unwrap(), Range::Any),
            10 => (g.add(a, v).unwrap(), Range::Any),
            _ => {
                let cat = g.concat(&[a, b]).unwrap();
                let w = g.constant(rng.uniform(-1.0, 1.0, &[2 * c, c]).unwrap());
                (g.matmul(cat, w).unwrap(), Range::Any)
            }
        };
        pool.push(made);
    }

    // tanh keeps the output bounded regardless of how values grew
    let last = pool.last().unwrap().0;
    let mut acc = g.tanh(last).unwrap();
    for _ in 0..2 {
        let (x, _) = pool[rng.below(pool.len())];
        let t = g.tanh(x).unwrap();
        acc = g.add(acc, t).unwrap();
    }
    let output = g.sum(acc).unwrap();
    RandomGraph {
        graph: g,
        output,
        inputs,
    }
}

fn bindings(inputs: &[(String, Tensor)]) -> Vec<(&str, &Tensor)> {
    inputs.iter().map(|(n, t)| (n.as_str(), t)).collect()
}

/// Largest relative error between backward and central differences over
/// every input element of `rg`.
pub fn graph_gradient_error(rg: &RandomGraph) -> Result<f64> {
    let mut g = rg.graph.clone();
    g.forward_eval(&bindings(&rg.inputs))?;
    let grads = g.backward(rg.output, &Tensor::scalar(1.0)?)?;
    let mut worst = 0.0f64;
    for (k, (name, point)) in rg.inputs.iter().enumerate() {
        let mut probe_graph = rg.graph.clone();
        let fd = finite_difference_grad(
            |x| {
                let mut inputs = rg.inputs.clone();
                inputs[k].1 = x.clone();
                probe_graph.forward_eval(&bindings(&inputs))?;
                probe_graph.value(rg.output)?.item()
            },
            point,
            FD_STEP,
        )?;
        let analytic = grads.input(name).expect("input gradient");
        for (a, b) in analytic.data().iter().zip(fd.data()) {
            worst = worst.max(relative_error(*a, *b, REL_FLOOR));
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------- averaging

/// ASWA written as a running mean over `[W0, w_1, ..., w_t]`: the average
/// after global step `t` is the plain mean of the initial weight and every
/// injected weight so far.
pub fn running_mean_oracle(initial: f64, injected: &[f64]) -> Vec<f64> {
    let mut sum = initial;
    injected
        .iter()
        .enumerate()
        .map(|(t, w)| {
            sum += w;
            sum / (t + 2) as f64
        })
        .collect()
}

/// NASWA re-derived from its description, vector weights, returning the
/// averaged weights and the 1-based global steps at which an update fired.
pub fn naswa_oracle(initial: &[f64], injected: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut avg = initial.to_vec();
    let mut norms = vec![0.0f64];
    let mut fired = Vec::new();
    for (t, w) in injected.iter().enumerate() {
        let step = t + 1;
        let dist: f64 = w.iter().zip(&avg).map(|(a, b)| (a - b).abs()).sum();
        let mean: f64 = norms.iter().sum::<f64>() / norms.len() as f64;
        if dist > mean {
            for (a, x) in avg.iter_mut().zip(w) {
                *a = (*a * step as f64 + x) / (step + 1) as f64;
            }
            norms = vec![dist];
            fired.push(step);
        } else {
            norms.push(dist);
        }
    }
    (avg, fired)
}

// ------------------------------------------------------------- stability

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            if *a > 0.0 {
                a * (a / b.max(1e-12)).ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    100.0 * (1.0 - inter / union)
}

/// Per-bucket `(entropy, jaccard, prediction std, count)` computed by
/// explicitly listing every (instance, ordered model pair).
/// `dists[s][m]` is model `m`'s distribution on instance `s`, `preds[s][m]`
/// its positive-class probability.
pub fn brute_force_buckets(
    dists: &[Vec<Vec<f64>>],
    preds: &[Vec<f64>],
    top_fraction: f64,
) -> Vec<(f64, f64, f64, usize)> {
    let mut rows: Vec<(usize, f64, f64, f64)> = Vec::new();
    for (s, per_model) in dists.iter().enumerate() {
        let n = per_model.len();
        let tops: Vec<Vec<usize>> = per_model
            .iter()
            .map(|p| {
                let d = InterpretationDistribution::new(p.clone()).unwrap();
                top_fraction_indices(&d, top_fraction).unwrap()
            })
            .collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pairs.push((i, j));
                }
            }
        }
        let h = pairs
            .iter()
            .map(|&(i, j)| kl(&per_model[i], &per_model[j]))
            .sum::<f64>()
            / pairs.len() as f64;
        let jd = pairs
            .iter()
            .map(|&(i, j)| jaccard(&tops[i], &tops[j]))
            .sum::<f64>()
            / pairs.len() as f64;
        let mean = preds[s].iter().sum::<f64>() / n as f64;
        let var = preds[s].iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
        let bucket = ((mean * 10.0).floor() as usize).min(9);
        rows.push((bucket, h, jd, var.sqrt()));
    }
    (0..10)
        .map(|b| {
            let members: Vec<_> = rows.iter().filter(|r| r.0 == b).collect();
            if members.is_empty() {
                return (0.0, 0.0, 0.0, 0);
            }
            let k = members.len() as f64;
            (
                members.iter().map(|r| r.1).sum::<f64>() / k,
                members.iter().map(|r| r.2).sum::<f64>() / k,
                members.iter().map(|r| r.3).sum::<f64>() / k,
                members.len(),
            )
        })
        .collect()
}

/// A random probability vector of length `d` with strictly positive
/// entries.
pub fn random_distribution(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let raw = rng.uniform_vec(0.01, 1.0, d).unwrap();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // make the sum exactly representable as 1 within tolerance
    let drift: f64 = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;
    p
}

// ------------------------------------------------------------------ LIME

/// Scores `intercept + sum_t w_t * [token t kept]` for class 1 and the
/// complement for class 0; token id 0 counts as masked.
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl Predictor for LinearModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn class_scores(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let s: f64 = self.intercept
            + ids
                .iter()
                .zip(&self.weights)
                .map(|(&id, w)| if id != 0 { *w } else { 0.0 })
                .sum::<f64>();
        Ok(vec![1.0 - s, s])
    }
}

/// Ranks of `values` by decreasing magnitude (ties by index).
pub fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx
}
