//! Tree searches over the d^M schedule space.

use serde::{Deserialize, Serialize};

use super::env::CoolingEnv;
use crate::error::{Error, Result};

/// How partial schedules are ranked when pruning the beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BeamScore {
    /// F_r reached so far. Myopic: it prefers prefixes that fill |n_r⟩ early.
    Reached,
    /// Best final F_r over the d constant completions of the prefix.
    #[default]
    TailRollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub actions: Vec<u32>,
    pub fidelity: f64,
}

/// F_r of the all-τ_r schedule.
pub fn equal_spacing(env: &CoolingEnv) -> Result<f64> {
    env.fidelity(&vec![1; env.rounds()])
}

struct Node {
    actions: Vec<u32>,
    p: Vec<f64>,
    score: f64,
}

/// Deterministic beam search of width `width`. Ties keep generation order,
/// which is lexicographic in the actions.
pub fn beam_search_baseline(
    env: &CoolingEnv,
    width: usize,
    score: BeamScore,
) -> Result<SearchResult> {
    if width == 0 {
        return Err(Error::InvalidParameter("beam width must be >= 1".into()));
    }
    let n_r = env.n_r();
    let d = env.actions() as u32;
    let rounds = env.rounds();
    let mut best = SearchResult {
        actions: Vec::new(),
        fidelity: f64::NEG_INFINITY,
    };
    let mut beam = vec![Node {
        actions: Vec::new(),
        p: env.initial().as_slice().to_vec(),
        score: 0.0,
    }];
    for step in 0..rounds {
        let remaining = rounds - step - 1;
        let mut next = Vec::with_capacity(beam.len() * d as usize);
        for node in &beam {
            for a in 1..=d {
                let mut p = node.p.clone();
                env.apply(&mut p, a)?;
                let mut actions = node.actions.clone();
                actions.push(a);
                let s = match score {
                    BeamScore::Reached => p[n_r],
                    BeamScore::TailRollout => {
                        let mut top = f64::NEG_INFINITY;
                        for c in 1..=d {
                            let mut tail = p.clone();
                            for _ in 0..remaining {
                                env.apply(&mut tail, c)?;
                            }
                            if tail[n_r] > best.fidelity {
                                let mut full = actions.clone();
                                full.extend(std::iter::repeat_n(c, remaining));
                                best = SearchResult {
                                    actions: full,
                                    fidelity: tail[n_r],
                                };
                            }
                            top = top.max(tail[n_r]);
                            if remaining == 0 {
                                break;
                            }
                        }
                        top
                    }
                };
                next.push(Node {
                    actions,
                    p,
                    score: s,
                });
            }
        }
        next.sort_by(|x, y| y.score.total_cmp(&x.score));
        next.truncate(width);
        beam = next;
    }
    for node in beam {
        if node.p[n_r] > best.fidelity {
            best = SearchResult {
                fidelity: node.p[n_r],
                actions: node.actions,
            };
        }
    }
    Ok(best)
}

/// Enumerates all d^M schedules; the first maximum in lexicographic order wins.
pub fn exhaustive_search(env: &CoolingEnv) -> Result<SearchResult> {
    let d = env.actions() as u32;
    let size = (env.actions() as f64).powi(env.rounds() as i32);
    if size > 1e7 {
        return Err(Error::InvalidParameter(format!(
            "{size:.3e} schedules is too many to enumerate"
        )));
    }
    let mut best = SearchResult {
        actions: Vec::new(),
        fidelity: f64::NEG_INFINITY,
    };
    let mut actions = Vec::with_capacity(env.rounds());
    descend(env, d, env.initial().as_slice(), &mut actions, &mut best)?;
    Ok(best)
}

fn descend(
    env: &CoolingEnv,
    d: u32,
    p: &[f64],
    actions: &mut Vec<u32>,
    best: &mut SearchResult,
) -> Result<()> {
    if actions.len() == env.rounds() {
        if p[env.n_r()] > best.fidelity {
            *best = SearchResult {
                actions: actions.clone(),
                fidelity: p[env.n_r()],
            };
        }
        return Ok(());
    }
    for a in 1..=d {
        let mut q = p.to_vec();
        env.apply(&mut q, a)?;
        actions.push(a);
        descend(env, d, &q, actions, best)?;
        actions.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PhysicalParams;

    fn toy() -> CoolingEnv {
        CoolingEnv::new(&PhysicalParams::reference(), 5, 6, 2).unwrap()
    }

    #[test]
    fn wide_beam_equals_exhaustive() {
        let env = toy();
        let ex = exhaustive_search(&env).unwrap();
        for score in [BeamScore::Reached, BeamScore::TailRollout] {
            let beam = beam_search_baseline(&env, 64, score).unwrap();
            assert_eq!(beam, ex, "{score:?}");
        }
        // brute force by index as an independent enumeration
        let mut top = f64::NEG_INFINITY;
        for code in 0..64u32 {
            let actions: Vec<u32> = (0..6).map(|i| 1 + ((code >> (5 - i)) & 1)).collect();
            top = top.max(env.fidelity(&actions).unwrap());
        }
        assert_eq!(top, ex.fidelity);
    }

    #[test]
    fn width_one_is_greedy() {
        let env = toy();
        let b = beam_search_baseline(&env, 1, BeamScore::Reached).unwrap();
        let mut actions = Vec::new();
        for _ in 0..env.rounds() {
            let best = (1..=2u32)
                .map(|a| {
                    let mut t = actions.clone();
                    t.push(a);
                    (a, env.fidelity(&t).unwrap())
                })
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, x| if x.1 > acc.1 { x } else { acc },
                );
            actions.push(best.0);
        }
        assert_eq!(b.actions, actions);
        assert_eq!(
            b,
            beam_search_baseline(&env, 1, BeamScore::Reached).unwrap()
        );
    }

    #[test]
    fn search_beats_equal_spacing() {
        let env = toy();
        let b = beam_search_baseline(&env, 4, BeamScore::TailRollout).unwrap();
        assert!(b.fidelity >= equal_spacing(&env).unwrap());
        assert_eq!(env.fidelity(&b.actions).unwrap(), b.fidelity);
    }
}
