//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the code under test except to build inputs.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ttl_itd::conformal::CalibrationIndex;
use ttl_itd::harness::{RunConfig, SweepConfig};
use ttl_itd::linalg::FeatureMatrix;
use ttl_itd::ope::paired_bootstrap;
use ttl_itd::table::ActionTable;
use ttl_itd::trajectory::{SyntheticConfig, TransitionSet};
use ttl_itd::Exec;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// K nearest rows of `points` to `x` by a full sort of (distance, index).
pub fn brute_force_knn(points: &[Vec<f64>], x: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Threshold by explicit sort: the `⌈(n+1)(1−α)⌉`-th smallest score, or
/// `None` when that rank exceeds `n`.
pub fn sorted_threshold(scores: &[f64], alpha: f64) -> Option<f64> {
    let n = scores.len();
    let k = ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil() as usize;
    if k > n {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    Some(s[k.max(1) - 1])
}

/// Random calibration index with independent per-action scores.
pub fn random_index(
    rng: &mut ChaCha8Rng,
    n: usize,
    width: usize,
    actions: usize,
) -> (CalibrationIndex, Vec<Vec<f64>>) {
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..actions).map(|_| rng.gen_range(0.001..0.999)).collect())
        .collect();
    let taken: Vec<usize> = (0..n).map(|_| rng.gen_range(0..actions)).collect();
    let index = CalibrationIndex {
        points: FeatureMatrix::from_rows(width, &points).unwrap(),
        taken_scores: taken.iter().zip(&scores).map(|(&a, s)| s[a]).collect(),
        taken_actions: taken,
        per_action_scores: FeatureMatrix::from_rows(actions, &scores).unwrap(),
    };
    (index, points)
}

/// A random two-state, two-action MDP sampled into episodes.
///
/// The single feature is the state indicator, so a per-action linear model
/// with an intercept is exactly tabular.
pub struct TabularData {
    pub data: TransitionSet,
    pub states: Vec<usize>,
    /// `reward[s][a]`.
    pub reward: [[f64; 2]; 2],
}

pub fn tabular_episodes(seed: u64, episodes: usize, terminate: f64) -> TabularData {
    let mut r = rng(seed);
    let reward = [
        [-r.gen_range(0.0..1.0), -r.gen_range(0.0..1.0)],
        [-r.gen_range(0.0..1.0), -r.gen_range(0.0..1.0)],
    ];
    let p_next_one = [
        [r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)],
        [r.gen_range(0.1..0.9), r.gen_range(0.1..0.9)],
    ];
    let mut feats = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut states = Vec::new();
    let mut lengths = Vec::new();
    for _ in 0..episodes {
        let mut s = r.gen_range(0..2);
        let mut len = 0;
        loop {
            let a = r.gen_range(0..2);
            feats.push(vec![s as f64]);
            states.push(s);
            actions.push(a);
            rewards.push(reward[s][a]);
            len += 1;
            if r.gen::<f64>() < terminate {
                break;
            }
            s = usize::from(r.gen::<f64>() < p_next_one[s][a]);
        }
        lengths.push(len);
    }
    let data = TransitionSet::from_parts(
        FeatureMatrix::from_rows(1, &feats).unwrap(),
        actions,
        rewards,
        &lengths,
        2,
    )
    .unwrap();
    TabularData {
        data,
        states,
        reward,
    }
}

/// Q of the empirical MDP (transition and termination frequencies counted
/// from the data) under a state-indexed policy, by value iteration.
pub fn empirical_q(
    data: &TransitionSet,
    states: &[usize],
    policy: &[[f64; 2]; 2],
    gamma: f64,
) -> [[f64; 2]; 2] {
    let mut count = [[0.0; 2]; 2];
    let mut reward = [[0.0; 2]; 2];
    let mut next = [[[0.0; 2]; 2]; 2];
    let mut ends = vec![false; data.len()];
    for ep in &data.episodes {
        ends[ep.end - 1] = true;
    }
    for i in 0..data.len() {
        let (s, a) = (states[i], data.actions[i]);
        count[s][a] += 1.0;
        reward[s][a] += data.rewards[i];
        if !ends[i] {
            next[s][a][states[i + 1]] += 1.0;
        }
    }
    let mut q = [[0.0; 2]; 2];
    for _ in 0..20_000 {
        let v: Vec<f64> = (0..2)
            .map(|s| policy[s][0] * q[s][0] + policy[s][1] * q[s][1])
            .collect();
        let mut nq = [[0.0; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                let c = count[s][a];
                nq[s][a] =
                    (reward[s][a] + gamma * (next[s][a][0] * v[0] + next[s][a][1] * v[1])) / c;
            }
        }
        q = nq;
    }
    q
}

pub fn state_policy_table(states: &[usize], policy: &[[f64; 2]; 2]) -> ActionTable {
    ActionTable::from_rows(2, states.iter().map(|&s| policy[s].to_vec()).collect()).unwrap()
}

/// Per-decision importance sampling:
/// `Σ_t γ^t (Π_{j≤t} π_j/b_j) r_t`, computed forward.
pub fn per_decision_is(
    data: &TransitionSet,
    target: &ActionTable,
    behavior: &ActionTable,
    gamma: f64,
) -> Vec<f64> {
    data.episodes
        .iter()
        .map(|ep| {
            let mut w = 1.0;
            let mut disc = 1.0;
            let mut total = 0.0;
            for i in ep.clone() {
                let a = data.actions[i];
                w *= target.row(i)[a] / behavior.row(i)[a];
                total += disc * w * data.rewards[i];
                disc *= gamma;
            }
            total
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Small synthetic run: fast enough for every harness test.
pub fn small_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        seed,
        ..RunConfig::default()
    };
    c.data.synthetic = SyntheticConfig {
        n_members: 150,
        mean_len: 12.0,
        seed,
        ..SyntheticConfig::default()
    };
    c.model.ensemble_members = 4;
    c.model.bootstrap_resamples = 200;
    c.model.permutations = 200;
    c.dials.k = 30;
    c.sweep = SweepConfig {
        k: vec![10, 30],
        beta: vec![0.3, 0.9],
        lambda: vec![0.5, 1.0],
        lambda_costs: vec![0.0, 0.25, 0.5, 1.0, 2.0],
    };
    c
}

/// One replication of the coverage study: 200 paired gaussian returns with a
/// planted mean gap of 0.5, 2000 resamples, seeded by `rep`.
pub fn bootstrap_covers_gap(rep: u64) -> bool {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut r = rng(rep);
    let b: Vec<f64> = (0..200).map(|_| normal.sample(&mut r)).collect();
    let a: Vec<f64> = b.iter().map(|x| x + 0.5 + normal.sample(&mut r)).collect();
    let ci = paired_bootstrap(&a, &b, 2000, rep, Exec::Parallel).unwrap();
    ci.ci_low <= 0.5 && 0.5 <= ci.ci_high
}
