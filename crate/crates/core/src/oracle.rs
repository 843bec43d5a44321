//! Exact tabular machinery: occupancy measures from a direct linear solve,
//! Jensen-Shannon divergence, Bayes-optimal discriminators, and the
//! injectivity equivalence check — discriminating image transitions equals
//! discriminating state transitions exactly when the render map is
//! injective on the state set, because an injective map transports
//! likelihood ratios unchanged.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::envs::{Frame, GridMdp, RenderMap};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("policy row {0} does not sum to 1")]
    NonStochasticPolicy(usize),
    #[error("negative entry in distribution")]
    NegativeEntry,
    #[error("{0}")]
    Inconsistent(String),
}

/// Discounted visitation v[s], occupancy rho_sa and the 2-step transition
/// occupancy rho_ss, all unnormalized: their mass is 1/(1-gamma).
#[derive(Debug, Clone)]
pub struct OccupancyTable {
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub visitation: Vec<f64>,
    pub rho_sa: Vec<f64>,
    pub rho_ss: Vec<f64>,
}

impl OccupancyTable {
    pub fn sa(&self, s: usize, a: usize) -> f64 {
        self.rho_sa[s * self.n_actions + a]
    }

    pub fn ss(&self, s: usize, s2: usize) -> f64 {
        self.rho_ss[s * self.n_states + s2]
    }

    pub fn total_mass(&self) -> f64 {
        self.rho_sa.iter().sum()
    }

    /// rho_sa as a probability distribution (multiplied by 1-gamma).
    pub fn normalized_sa(&self) -> Vec<f64> {
        self.rho_sa.iter().map(|v| v * (1.0 - self.gamma)).collect()
    }

    pub fn normalized_ss(&self) -> Vec<f64> {
        self.rho_ss.iter().map(|v| v * (1.0 - self.gamma)).collect()
    }
}

/// Solves v = p0 + gamma P_pi^T v exactly and derives both occupancies.
pub fn occupancy(mdp: &GridMdp, policy: &[Vec<f64>]) -> Result<OccupancyTable, OracleError> {
    let n = mdp.n_states;
    let na = mdp.n_actions;
    for (s, row) in policy.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != na || (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(OracleError::NonStochasticPolicy(s));
        }
    }
    // A = I - gamma * P_pi^T
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        for s2 in 0..n {
            let mut p = 0.0;
            for act in 0..na {
                p += policy[s][act] * mdp.p(s, act, s2);
            }
            // transition s -> s2 contributes to row s2 of the solve
            a[s2 * n + s] -= mdp.gamma * p;
        }
    }
    for s in 0..n {
        a[s * n + s] += 1.0;
    }
    let v = solve_dense(&mut a, mdp.p0.clone(), n)?;

    let mut rho_sa = vec![0.0; n * na];
    let mut rho_ss = vec![0.0; n * n];
    for s in 0..n {
        for act in 0..na {
            let mass = policy[s][act] * v[s];
            rho_sa[s * na + act] = mass;
            for s2 in 0..n {
                rho_ss[s * n + s2] += mass * mdp.p(s, act, s2);
            }
        }
    }
    Ok(OccupancyTable {
        gamma: mdp.gamma,
        n_states: n,
        n_actions: na,
        visitation: v,
        rho_sa,
        rho_ss,
    })
}

/// Gaussian elimination with partial pivoting; the system here is
/// I - gamma P^T with gamma < 1, which is always non-singular.
fn solve_dense(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Result<Vec<f64>, OracleError> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())
            .unwrap();
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(OracleError::Inconsistent("singular occupancy system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Jensen-Shannon divergence between two distributions, natural log.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, OracleError> {
    if p.len() != q.len() {
        return Err(OracleError::Inconsistent("length mismatch".into()));
    }
    if p.iter().chain(q).any(|&v| v < 0.0) {
        return Err(OracleError::NegativeEntry);
    }
    let kl_to_mid = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                if a == 0.0 {
                    0.0
                } else {
                    a * (a / (0.5 * (a + b))).ln()
                }
            })
            .sum::<f64>()
    };
    Ok(0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p))
}

/// Bayes-optimal discriminator table over transition keys. Keys absent
/// from both classes default to 0.5 (zero mass on both sides).
#[derive(Debug, Clone)]
pub struct ExactDiscriminator {
    table: BTreeMap<(u64, u64), f64>,
}

impl ExactDiscriminator {
    pub fn get(&self, key: (u64, u64)) -> f64 {
        self.table.get(&key).copied().unwrap_or(0.5)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u64, u64), &f64)> {
        self.table.iter()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// D = rho_E / (rho_E + rho_A) under equal class priors.
pub fn bayes_discriminator(
    rho_agent: &BTreeMap<(u64, u64), f64>,
    rho_expert: &BTreeMap<(u64, u64), f64>,
) -> ExactDiscriminator {
    let mut table = BTreeMap::new();
    for key in rho_agent.keys().chain(rho_expert.keys()) {
        let a = rho_agent.get(key).copied().unwrap_or(0.0);
        let e = rho_expert.get(key).copied().unwrap_or(0.0);
        let d = if a + e == 0.0 { 0.5 } else { e / (a + e) };
        table.insert(*key, d);
    }
    ExactDiscriminator { table }
}

/// Transition occupancy as a keyed map over (s, s') pairs.
pub fn transition_map(occ: &OccupancyTable) -> BTreeMap<(u64, u64), f64> {
    let norm = occ.normalized_ss();
    let mut map = BTreeMap::new();
    for s in 0..occ.n_states {
        for s2 in 0..occ.n_states {
            let mass = norm[s * occ.n_states + s2];
            if mass > 0.0 {
                map.insert((s as u64, s2 as u64), mass);
            }
        }
    }
    map
}

/// Pushforward of a transition occupancy through the render map: state
/// transitions that collide in image space merge their mass.
pub fn pushforward_map(
    occ: &OccupancyTable,
    hashes: &[u64],
) -> BTreeMap<(u64, u64), f64> {
    let norm = occ.normalized_ss();
    let mut map: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for s in 0..occ.n_states {
        for s2 in 0..occ.n_states {
            let mass = norm[s * occ.n_states + s2];
            if mass > 0.0 {
                *map.entry((hashes[s], hashes[s2])).or_insert(0.0) += mass;
            }
        }
    }
    map
}

/// 64-bit FNV-1a over the pixel buffer.
pub fn frame_hash(frame: &Frame) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in &frame.pixels {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct InjectivityReport {
    pub injective: bool,
    pub collisions: Vec<(usize, usize)>,
}

/// Exhaustive pairwise comparison via frame hashing. Every hash equality is
/// verified byte-wise before a pair is reported, so hash collisions cannot
/// fabricate violations.
pub fn injectivity_check(frames: &[Frame]) -> InjectivityReport {
    let mut by_hash: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        by_hash.entry(frame_hash(f)).or_default().push(i);
    }
    let mut collisions = Vec::new();
    for group in by_hash.values() {
        if group.len() < 2 {
            continue;
        }
        for (k, &i) in group.iter().enumerate() {
            for &j in &group[k + 1..] {
                if frames[i].pixels == frames[j].pixels {
                    collisions.push((i, j));
                }
            }
        }
    }
    InjectivityReport {
        injective: collisions.is_empty(),
        collisions,
    }
}

#[derive(Debug, Clone)]
pub struct TransitionDiff {
    pub s: usize,
    pub s_next: usize,
    pub d_state: f64,
    pub d_image: f64,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub max_abs_diff: f64,
    pub worst: Option<TransitionDiff>,
    pub rows: Vec<TransitionDiff>,
}

/// Compares the Bayes-optimal state-transition discriminator with the
/// image-transition discriminator induced by the render map, over every
/// transition reachable by either policy.
pub fn equivalence_check(
    mdp: &GridMdp,
    pi_agent: &[Vec<f64>],
    pi_expert: &[Vec<f64>],
    map: &RenderMap,
) -> Result<EquivalenceReport, OracleError> {
    let occ_a = occupancy(mdp, pi_agent)?;
    let occ_e = occupancy(mdp, pi_expert)?;
    let hashes: Vec<u64> = (0..mdp.n_states)
        .map(|s| frame_hash(&mdp.render(s, map)))
        .collect();

    let d_state = bayes_discriminator(&transition_map(&occ_a), &transition_map(&occ_e));
    let d_image = bayes_discriminator(
        &pushforward_map(&occ_a, &hashes),
        &pushforward_map(&occ_e, &hashes),
    );

    let norm_a = occ_a.normalized_ss();
    let norm_e = occ_e.normalized_ss();
    let n = mdp.n_states;
    let mut rows = Vec::new();
    let mut max_abs_diff = 0.0;
    let mut worst = None;
    for s in 0..n {
        for s2 in 0..n {
            if norm_a[s * n + s2] + norm_e[s * n + s2] == 0.0 {
                continue;
            }
            let ds = d_state.get((s as u64, s2 as u64));
            let di = d_image.get((hashes[s], hashes[s2]));
            let row = TransitionDiff {
                s,
                s_next: s2,
                d_state: ds,
                d_image: di,
            };
            let diff = (ds - di).abs();
            if diff > max_abs_diff {
                max_abs_diff = diff;
                worst = Some(row.clone());
            }
            rows.push(row);
        }
    }
    Ok(EquivalenceReport {
        max_abs_diff,
        worst,
        rows,
    })
}

/// Uniform policy table.
pub fn uniform_policy(n_states: usize, n_actions: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n_actions as f64; n_actions]; n_states]
}

/// Soft goal-seeking policy for a lattice MDP: probability mass
/// concentrated on moving right/down toward the far corner.
pub fn lattice_expert_policy(w: usize, h: usize, greediness: f64) -> Vec<Vec<f64>> {
    let n = w * h;
    let base = (1.0 - greediness) / 4.0;
    let mut policy = Vec::with_capacity(n);
    for s in 0..n {
        let (row, col) = (s / w, s % w);
        let mut p = vec![base; 4];
        // prefer east (1) until at the right edge, then south (2)
        let favored = if col + 1 < w { 1 } else { 2 };
        p[favored] += greediness;
        if row + 1 >= h && col + 1 >= w {
            // at the goal: hover
            p = vec![0.25; 4];
        }
        let sum: f64 = p.iter().sum();
        for v in p.iter_mut() {
            *v /= sum;
        }
        let s2: f64 = p.iter().sum();
        p[3] += 1.0 - s2;
        policy.push(p);
    }
    policy
}

#[cfg(test)]
mod tests;
