//! Deterministic reference values for one regeneration cycle of the 1D walk.
//!
//! [`zeta_closed_forms`] gives the exact moments at the first event after the
//! first break when `p = 1`. [`enumerate_cycle`] expands the embedded jump
//! chain of a whole cycle level by level and accumulates the exact
//! contribution of every expanded path to `E(tau)` and `E(X(tau)^2)`.
//!
//! The walk is translation invariant, so a chain state is keyed by the broken
//! bonds relative to the walker and carries the zeroth, first and second
//! moments of the displacement over all paths merged into it. A bond at
//! relative offset `o` joins `x + o` and `x + o + 1`; the walker's left bond is
//! `-1` and its right bond `0`.

use rustc_hash::FxHashMap;
use serde::Serialize;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaForms {
    pub e_zeta_minus_sigma: f64,
    pub e_zeta: f64,
    pub e_x_zeta_sq: f64,
    pub gap: f64,
}

/// Moments at the first jump-or-repair after the first break, for `p = 1`.
pub fn zeta_closed_forms(lambda: f64, mu: f64) -> Result<ZetaForms> {
    if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "lambda and mu must be finite and > 0 (got {lambda}, {mu})"
        )));
    }
    let total = lambda + mu;
    Ok(ZetaForms {
        e_zeta_minus_sigma: 1.0 / total,
        e_zeta: 1.0 / lambda + 1.0 / total,
        e_x_zeta_sq: (mu + 4.0 * lambda) / total,
        gap: 2.0 * lambda / total,
    })
}

/// Partial expectation over the expanded part of the cycle tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Enclosure {
    /// Exact contribution of the expanded paths (a lower bound).
    pub absorbed_value: f64,
    pub absorbed_mass: f64,
    /// Probability of the paths still unexpanded at `depth`.
    pub residual_mass: f64,
    /// Upper bound on what the unexpanded paths can add.
    pub tail_bound: f64,
    pub depth: usize,
}

impl Enclosure {
    pub fn lower(&self) -> f64 {
        self.absorbed_value
    }

    pub fn upper(&self) -> f64 {
        self.absorbed_value + self.tail_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleEnclosure {
    /// Mean cycle duration.
    pub alpha: Enclosure,
    /// Mean squared cycle displacement.
    pub x2: Enclosure,
    /// `residual_mass <= mass_tol` was reached within the depth limit.
    pub converged: bool,
    /// Largest frontier seen, in merged states.
    pub peak_states: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Key {
    active: bool,
    offsets: SmallVec<[i32; 8]>,
}

impl Key {
    /// Folds a configuration and its mirror image onto one key. Returns the
    /// key and whether the displacement must be negated to match it; `X^2` is
    /// unaffected by the reflection.
    fn canonical(active: bool, mut offsets: SmallVec<[i32; 8]>) -> (Key, bool) {
        offsets.sort_unstable();
        let mut mirrored: SmallVec<[i32; 8]> = offsets.iter().map(|o| -o - 1).collect();
        mirrored.sort_unstable();
        let flip = mirrored < offsets;
        let offsets = if flip { mirrored } else { offsets };
        (Key { active, offsets }, flip)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    m0: f64,
    m1: f64,
    m2: f64,
}

impl Moments {
    fn scaled(self, w: f64) -> Self {
        Self {
            m0: self.m0 * w,
            m1: self.m1 * w,
            m2: self.m2 * w,
        }
    }

    /// Moments after every merged path moves by `s`.
    fn shifted(self, s: f64) -> Self {
        Self {
            m0: self.m0,
            m1: self.m1 + s * self.m0,
            m2: self.m2 + 2.0 * s * self.m1 + s * s * self.m0,
        }
    }

    fn reflected(self, flip: bool) -> Self {
        if flip {
            Self { m1: -self.m1, ..self }
        } else {
            self
        }
    }

    fn add(&mut self, o: Self) {
        self.m0 += o.m0;
        self.m1 += o.m1;
        self.m2 += o.m2;
    }
}

/// Frontier size beyond which the lightest states are set aside regardless
/// of the mass budget.
pub const MAX_FRONTIER_STATES: usize = 400_000;

/// Sum of nonnegative terms, smallest first.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Expands one cycle of the 1D walk for at most `depth` events, stopping
/// early once the unexpanded probability drops below `mass_tol`.
///
/// With `mass_tol > 0`, the lightest states of each level may be set aside
/// unexpanded (at most `mass_tol / 64` per level and `mass_tol / 2` overall);
/// they stay in `residual_mass` and in the tail bounds. Frontiers larger than
/// [`MAX_FRONTIER_STATES`] are cut back the same way. A residual above
/// `mass_tol` at the depth limit is reported through `converged = false`,
/// not as an error.
pub fn enumerate_cycle(params: &ModelParams, depth: usize, mass_tol: f64) -> Result<CycleEnclosure> {
    params.require_breaks()?;
    if params.dim != 1 {
        return Err(Error::InvalidParams("cycle enumeration is one-dimensional".into()));
    }
    if depth < 2 {
        return Err(Error::InvalidArgument(format!("depth must be >= 2 (got {depth})")));
    }
    if mass_tol.is_nan() || mass_tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mass_tol must be >= 0 (got {mass_tol})"
        )));
    }
    let (lambda, p, mu) = (params.lambda, params.p, params.mu);
    let level_budget = mass_tol / 64.0;
    let total_budget = mass_tol / 2.0;

    let mut frontier: FxHashMap<Key, Moments> = FxHashMap::default();
    frontier.insert(
        Key {
            active: false,
            offsets: SmallVec::new(),
        },
        Moments {
            m0: 1.0,
            ..Default::default()
        },
    );
    // Pruned states only matter through (active, broken count).
    let mut set_aside: FxHashMap<(bool, usize), Moments> = FxHashMap::default();
    let mut set_aside_mass = 0.0;
    let mut time_terms = Vec::new();
    let mut absorbed_terms = Vec::new();
    let mut x2_terms = Vec::new();
    let mut level = 0;
    let mut peak_states = 1;

    while level < depth {
        let residual = sorted_sum(frontier.values().map(|m| m.m0).collect()) + set_aside_mass;
        if residual < mass_tol {
            break;
        }
        let mut next: FxHashMap<Key, Moments> = FxHashMap::default();
        let mut push = |active: bool, offsets: SmallVec<[i32; 8]>, m: Moments| {
            let (key, flip) = Key::canonical(active, offsets);
            next.entry(key).or_default().add(m.reflected(flip));
        };
        for (key, &m) in &frontier {
            let k = key.offsets.len();
            let rate = lambda + mu * k as f64;
            time_terms.push(m.m0 / rate);

            let attempt = lambda / rate;
            let moves: SmallVec<[(i32, i32); 2]> = [(1, 0), (-1, -1)]
                .into_iter()
                .filter(|(_, bond)| !key.offsets.contains(bond))
                .collect();
            if moves.is_empty() {
                push(key.active, key.offsets.clone(), m.scaled(attempt));
            }
            for &(s, bond) in &moves {
                let w = attempt / moves.len() as f64;
                let moved = m.shifted(s as f64);
                let shifted: SmallVec<[i32; 8]> = key.offsets.iter().map(|o| o - s).collect();
                if p > 0.0 {
                    let mut offsets = shifted.clone();
                    offsets.push(bond - s);
                    push(true, offsets, moved.scaled(w * p));
                }
                if p < 1.0 {
                    push(key.active, shifted, moved.scaled(w * (1.0 - p)));
                }
            }

            let repair = mu / rate;
            for i in 0..k {
                let mut offsets = key.offsets.clone();
                offsets.remove(i);
                if offsets.is_empty() {
                    absorbed_terms.push(m.m0 * repair);
                    x2_terms.push(m.m2 * repair);
                } else {
                    push(true, offsets, m.scaled(repair));
                }
            }
        }

        let budget = level_budget.min(total_budget - set_aside_mass);
        if budget > 0.0 || next.len() > MAX_FRONTIER_STATES {
            let mut light: Vec<(f64, Key)> = next.iter().map(|(k, m)| (m.m0, k.clone())).collect();
            light.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let excess = light.len().saturating_sub(MAX_FRONTIER_STATES);
            let mut used = 0.0;
            for (i, (mass, key)) in light.into_iter().enumerate() {
                if i >= excess && used + mass > budget {
                    break;
                }
                used += mass;
                let m = next.remove(&key).expect("present");
                set_aside.entry((key.active, key.offsets.len())).or_default().add(m);
            }
            set_aside_mass += used;
        }

        frontier = next;
        peak_states = peak_states.max(frontier.len());
        level += 1;
    }

    let residual_mass = sorted_sum(frontier.values().map(|m| m.m0).collect()) + set_aside_mass;
    let absorbed_mass = sorted_sum(absorbed_terms);
    let unexpanded = frontier
        .iter()
        .map(|(k, m)| ((k.active, k.offsets.len()), *m))
        .chain(set_aside);
    let (alpha_tail, x2_tail) = tail_bounds(params, unexpanded);
    Ok(CycleEnclosure {
        alpha: Enclosure {
            absorbed_value: sorted_sum(time_terms),
            absorbed_mass,
            residual_mass,
            tail_bound: alpha_tail,
            depth: level,
        },
        x2: Enclosure {
            absorbed_value: sorted_sum(x2_terms),
            absorbed_mass,
            residual_mass,
            tail_bound: x2_tail,
            depth: level,
        },
        converged: residual_mass <= mass_tol,
        peak_states,
    })
}

/// Bounds on what the unexpanded states add to `E(tau)` and `E(X(tau)^2)`.
///
/// From a state with `k` broken bonds, matching each to a customer of a fresh
/// M/M/inf queue (arrivals at rate `lambda p`, service `mu`) keeps the broken
/// count below the queue length, so the remaining cycle time `R` is at most
/// the queue's time to drain from `k`. The extra displacement is at most the
/// number of attempts in `R`, whose second moment is `lambda E R + lambda^2 E R^2`,
/// and `(D + S)^2 <= 2 D^2 + 2 S^2`.
fn tail_bounds(params: &ModelParams, unexpanded: impl Iterator<Item = ((bool, usize), Moments)>) -> (f64, f64) {
    let states: Vec<_> = unexpanded.collect();
    if states.is_empty() {
        return (0.0, 0.0);
    }
    let arrival = params.break_rate();
    let k_max = states.iter().map(|((_, k), _)| *k).max().unwrap_or(0).max(1);
    let drain = DrainMoments::new(arrival, params.mu, k_max);
    let lambda = params.lambda;
    let mut alpha_terms = Vec::with_capacity(states.len());
    let mut x2_terms = Vec::with_capacity(states.len());
    for ((active, k), m) in states {
        let (r1, r2) = if active {
            (drain.first[k], drain.second[k])
        } else {
            // Wait for the first marked attempt, then drain from one customer.
            let idle = 1.0 / arrival;
            (
                idle + drain.first[1],
                2.0 * idle * idle + 2.0 * idle * drain.first[1] + drain.second[1],
            )
        };
        alpha_terms.push(m.m0 * r1);
        x2_terms.push(2.0 * m.m2 + 2.0 * m.m0 * (lambda * r1 + lambda * lambda * r2));
    }
    (sorted_sum(alpha_terms), sorted_sum(x2_terms))
}

/// First and second moments of the time an M/M/inf queue needs to empty,
/// indexed by the starting number of customers.
#[derive(Debug, Clone)]
pub struct DrainMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl DrainMoments {
    /// Solves the birth-death first-passage equations on `0..=cap`, with the
    /// cap far enough above both `k_max` and the mean occupancy that the
    /// truncated tail is negligible.
    pub fn new(arrival: f64, service: f64, k_max: usize) -> Self {
        let load = arrival / service;
        let cap = k_max + (10.0 * load).ceil() as usize + 100;
        let rate = |j: usize| {
            let births = if j < cap { arrival } else { 0.0 };
            (births, j as f64 * service)
        };
        // j = 1..=cap: -d_j h_{j-1} + (b_j + d_j) h_j - b_j h_{j+1} = rhs_j, h_0 = 0.
        let solve = |rhs: &[f64]| -> Vec<f64> {
            let n = cap;
            let mut c_prime = vec![0.0; n];
            let mut d_prime = vec![0.0; n];
            for i in 0..n {
                let (b, d) = rate(i + 1);
                let diag = b + d;
                let lower = if i > 0 { -d } else { 0.0 };
                let upper = -b;
                let denom = diag - lower * if i > 0 { c_prime[i - 1] } else { 0.0 };
                c_prime[i] = upper / denom;
                d_prime[i] = (rhs[i] - lower * if i > 0 { d_prime[i - 1] } else { 0.0 }) / denom;
            }
            let mut h = vec![0.0; n + 1];
            for i in (0..n).rev() {
                h[i + 1] = d_prime[i] - c_prime[i] * if i + 1 < n { h[i + 2] } else { 0.0 };
            }
            h
        };
        let first = solve(&vec![1.0; cap]);
        let rhs2: Vec<f64> = (1..=cap).map(|j| 2.0 * first[j]).collect();
        let second = solve(&rhs2);
        Self { first, second }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let z = zeta_closed_forms(1.0, 10.0).unwrap();
        assert!((z.e_zeta - 12.0 / 11.0).abs() < 1e-15);
        assert!((z.e_x_zeta_sq - 14.0 / 11.0).abs() < 1e-15);
        assert!((z.gap - 2.0 / 11.0).abs() < 1e-15);
        assert!((z.e_zeta_minus_sigma - 1.0 / 11.0).abs() < 1e-15);
        let one = zeta_closed_forms(1.0, 1.0).unwrap();
        assert_eq!(one.e_x_zeta_sq, 2.5);
        assert_eq!(one.gap, 1.0);
        assert!(zeta_closed_forms(1.0, 1e12).unwrap().gap < 1e-11);
        assert!(zeta_closed_forms(0.0, 1.0).is_err());
    }

    #[test]
    fn gap_identity_holds() {
        for (l, m) in [(1.0, 1.0), (0.3, 7.0), (2.0, 0.5), (1.0, 100.0)] {
            let z = zeta_closed_forms(l, m).unwrap();
            assert!((z.e_x_zeta_sq - l * z.e_zeta - z.gap).abs() < 1e-14);
            assert!(z.gap > 0.0);
        }
    }

    #[test]
    fn two_event_tree_by_hand() {
        // lambda = mu = p = 1. Level 0: the intact state (rate 1) adds 1 to
        // E(tau) and jumps left or right, breaking the crossed bond. Level 1:
        // each one-bond state has rate 2 and mass 1/2, adding 2 * (1/2)(1/2)
        // = 1/2; the repair branch (weight 1/2) absorbs with |X| = 1.
        let p = ModelParams::line(1.0, 1.0, 1.0).unwrap();
        let e = enumerate_cycle(&p, 2, 0.0).unwrap();
        assert_eq!(e.alpha.depth, 2);
        assert!((e.alpha.absorbed_value - 1.5).abs() < 1e-15);
        assert!((e.alpha.absorbed_mass - 0.5).abs() < 1e-15);
        assert!((e.alpha.residual_mass - 0.5).abs() < 1e-15);
        assert!((e.x2.absorbed_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_event_slice_matches_branch_probabilities() {
        for (l, m) in [(1.0, 3.0), (2.0, 0.7), (1.0, 10.0)] {
            let p = ModelParams::line(l, 1.0, m).unwrap();
            let e = enumerate_cycle(&p, 2, 0.0).unwrap();
            assert!((e.alpha.absorbed_mass - m / (l + m)).abs() < 1e-14);
            assert!((e.alpha.residual_mass - l / (l + m)).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_is_conserved() {
        for (l, pr, m) in [(1.0, 1.0, 1.0), (1.0, 0.5, 2.0), (2.0, 0.3, 0.8), (1.0, 1.0, 5.0)] {
            let p = ModelParams::line(l, pr, m).unwrap();
            for depth in [2, 5, 12, 18] {
                let e = enumerate_cycle(&p, depth, 0.0).unwrap();
                let total = e.alpha.absorbed_mass + e.alpha.residual_mass;
                assert!((total - 1.0).abs() < 1e-12, "params {p:?} depth {depth}: {total}");
            }
        }
    }

    #[test]
    fn monotone_in_depth() {
        let p = ModelParams::line(1.0, 0.7, 2.0).unwrap();
        let mut prev = enumerate_cycle(&p, 2, 0.0).unwrap();
        for depth in 3..18 {
            let e = enumerate_cycle(&p, depth, 0.0).unwrap();
            assert!(e.alpha.absorbed_value >= prev.alpha.absorbed_value);
            assert!(e.x2.absorbed_value >= prev.x2.absorbed_value);
            assert!(e.alpha.absorbed_mass >= prev.alpha.absorbed_mass);
            assert!(e.alpha.residual_mass <= prev.alpha.residual_mass + 1e-15);
            assert!(e.alpha.upper() <= prev.alpha.upper() + 1e-9);
            prev = e;
        }
    }

    #[test]
    fn large_mu_is_close_to_zeta() {
        let p = ModelParams::line(1.0, 1.0, 100.0).unwrap();
        let e = enumerate_cycle(&p, 200, 1e-10).unwrap();
        assert!(e.converged);
        let z = zeta_closed_forms(1.0, 100.0).unwrap();
        let scale = 2.0 * (1.0f64 / 101.0).powi(2);
        assert!(
            (e.alpha.absorbed_value - z.e_zeta).abs() < scale,
            "{}",
            e.alpha.absorbed_value
        );
    }

    #[test]
    fn drain_moments_reproduce_busy_cycle_formula() {
        // Idle time plus drain from one customer is the busy cycle.
        for (a, s) in [(1.0, 1.0), (2.0, 1.0), (1.0, 100.0), (0.5, 0.2)] {
            let d = DrainMoments::new(a, s, 1);
            let cycle = 1.0 / a + d.first[1];
            let want = (a / s).exp() / a;
            assert!((cycle - want).abs() < 1e-9 * want, "({a},{s}): {cycle} vs {want}");
        }
        // Without arrivals, draining k customers takes the max of k
        // exponentials: H_k / mu.
        let d = DrainMoments::new(1e-300, 2.0, 3);
        assert!((d.first[3] - (1.0 + 0.5 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
        // Second moment from one customer without arrivals: 2 / mu^2.
        assert!((d.second[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let p = ModelParams::line(1.0, 1.0, 1.0).unwrap();
        assert!(enumerate_cycle(&p, 1, 0.0).is_err());
        assert!(enumerate_cycle(&p.baseline(), 10, 0.0).is_err());
        assert!(enumerate_cycle(&ModelParams::new(1.0, 1.0, 1.0, 2).unwrap(), 10, 0.0).is_err());
    }
}
