//! Exact finite-state oracles for nearest-neighbour walks on free groups.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CylinderIndex, Letter, Model};
use crate::walk::measure::StepMeasure;

/// Relative tolerance for "all generators carry the same mass".
const UNIFORM_TOL: f64 = 1e-12;

fn uniform_weights(measure: &StepMeasure) -> Result<(u32, f64)> {
    let (w, identity) = measure.nearest_neighbor_weights()?;
    let rank = (w.len() / 2) as u32;
    let p = w[0];
    if p <= 0.0 || w.iter().any(|&q| (q - p).abs() > UNIFORM_TOL * p.max(1.0)) {
        return Err(Error::UnsupportedMeasure(
            "the word-length chain is Markov only for generator-uniform measures; \
             use the harmonic letter chain for biased measures"
                .into(),
        ));
    }
    Ok((rank, identity))
}

/// Law of `κ_n = |L_n|` for a generator-uniform walk (optionally lazy):
/// a birth–death chain on `{0, …, N}` started at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthChainOracle {
    pub rank: u32,
    pub up: f64,
    pub down: f64,
    pub stay: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMoments {
    pub mean: f64,
    pub var: f64,
    /// `log E[e^{λκ_n}]`.
    pub log_mgf: f64,
}

impl ExactMoments {
    pub fn mgf(&self) -> f64 {
        self.log_mgf.exp()
    }
}

pub fn build_length_chain(measure: &StepMeasure, horizon: usize) -> Result<LengthChainOracle> {
    let (rank, identity) = uniform_weights(measure)?;
    let k2 = 2.0 * rank as f64;
    let moving = 1.0 - identity;
    Ok(LengthChainOracle {
        rank,
        up: moving * (k2 - 1.0) / k2,
        down: moving / k2,
        stay: identity,
        horizon,
    })
}

impl LengthChainOracle {
    /// `P(i → j)`; from 0 every move goes up.
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        if i == 0 {
            return match j {
                0 => self.stay,
                1 => self.up + self.down,
                _ => 0.0,
            };
        }
        if j == i + 1 {
            self.up
        } else if j + 1 == i {
            self.down
        } else if j == i {
            self.stay
        } else {
            0.0
        }
    }

    /// Drift `ℓ` from the stationary increment away from 0.
    pub fn drift(&self) -> f64 {
        self.up - self.down
    }

    /// Variance of one increment away from 0, which is `σ²` for this chain.
    pub fn increment_variance(&self) -> f64 {
        self.up + self.down - self.drift().powi(2)
    }

    /// `log E[e^{λΔ}]` for one increment away from 0.
    pub fn increment_log_mgf(&self, lambda: f64) -> f64 {
        (self.stay + self.up * lambda.exp() + self.down * (-lambda).exp()).ln()
    }

    fn check_horizon(&self, n: usize) -> Result<()> {
        if n > self.horizon {
            return Err(Error::HorizonExceeded {
                requested: n,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    /// One forward step of `v ↦ vP` with up/down moves weighted by `e^{±λ}`.
    fn forward(&self, v: &[f64], lambda: f64, out: &mut Vec<f64>) {
        let (eu, ed) = (lambda.exp(), (-lambda).exp());
        out.clear();
        out.resize(v.len() + 1, 0.0);
        out[0] = self.stay * v[0] + if v.len() > 1 { self.down * ed * v[1] } else { 0.0 };
        out[1] += (self.up + self.down) * eu * v[0];
        for j in 1..v.len() {
            let x = v[j];
            if x == 0.0 {
                continue;
            }
            out[j + 1] += self.up * eu * x;
            out[j] += self.stay * x;
            if j >= 2 {
                out[j - 1] += self.down * ed * x;
            }
        }
        // Only j = 1 flows down to 0, which was handled above.
    }

    /// Exact law of `κ_n`.
    pub fn distribution(&self, n: usize) -> Result<Vec<f64>> {
        self.check_horizon(n)?;
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for _ in 0..n {
            self.forward(&v, 0.0, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        Ok(v)
    }

    /// `log E[e^{λκ_n}]` for each `n` in `ns`, by a renormalized tilted forward pass.
    pub fn log_mgf_ladder(&self, ns: &[usize], lambda: f64) -> Result<Vec<f64>> {
        let max_n = ns.iter().copied().max().unwrap_or(0);
        self.check_horizon(max_n)?;
        let mut out = vec![0.0; ns.len()];
        let mut v = vec![1.0];
        let mut next = Vec::new();
        let mut log_scale = 0.0;
        for step in 0..=max_n {
            for (slot, &n) in ns.iter().enumerate() {
                if n == step {
                    out[slot] = log_scale + v.iter().sum::<f64>().ln();
                }
            }
            if step == max_n {
                break;
            }
            self.forward(&v, lambda, &mut next);
            std::mem::swap(&mut v, &mut next);
            let big = v.iter().fold(0.0f64, |a, &b| a.max(b));
            for x in &mut v {
                *x /= big;
            }
            log_scale += big.ln();
        }
        Ok(out)
    }

    pub fn exact_moments(&self, n: usize, lambda: f64) -> Result<ExactMoments> {
        let dist = self.distribution(n)?;
        let mean: f64 = dist.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let var: f64 = dist
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum();
        let log_mgf = if lambda == 0.0 {
            0.0
        } else {
            self.log_mgf_ladder(&[n], lambda)?[0]
        };
        Ok(ExactMoments { mean, var, log_mgf })
    }

    /// `(E κ_n, Var κ_n)` for each `n` in `ns` from one forward pass.
    pub fn moments_ladder(&self, ns: &[usize]) -> Result<Vec<(f64, f64)>> {
        let max_n = ns.iter().copied().max().unwrap_or(0);
        self.check_horizon(max_n)?;
        let mut out = vec![(0.0, 0.0); ns.len()];
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for step in 0..=max_n {
            for (slot, &n) in ns.iter().enumerate() {
                if n == step {
                    let mean: f64 = v.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                    let var = v
                        .iter()
                        .enumerate()
                        .map(|(k, p)| (k as f64 - mean).powi(2) * p)
                        .sum();
                    out[slot] = (mean, var);
                }
            }
            if step < max_n {
                self.forward(&v, 0.0, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
        }
        Ok(out)
    }
}

/// The exit law of a nearest-neighbour walk on `F_k` as a Markov chain on letters.
///
/// With first-passage probabilities `F(s)` solving
/// `F(s) = μ(s) / (1 − μ(e) − Σ_{t≠s} μ(t) F(t⁻¹))`, the first letter of the limit
/// word has law `ν₁(s) = F(s)(1 − F(s⁻¹)) / (1 − F(s)F(s⁻¹))` and the next letter
/// after `x` is `y ≠ x⁻¹` with probability `ν₁(y) / (1 − ν₁(x⁻¹))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicLetterChain {
    pub rank: u32,
    /// Step probabilities by letter slot.
    pub mu: Vec<f64>,
    pub identity: f64,
    pub first_passage: Vec<f64>,
    pub nu1: Vec<f64>,
    /// `trans[x][y]` over letter slots.
    pub trans: Vec<Vec<f64>>,
}

impl HarmonicLetterChain {
    pub fn from_measure(measure: &StepMeasure) -> Result<Self> {
        let (mu, identity) = measure.nearest_neighbor_weights()?;
        Self::from_weights(mu, identity)
    }

    pub fn from_weights(mu: Vec<f64>, identity: f64) -> Result<Self> {
        let k2 = mu.len();
        if k2 < 4 || !k2.is_multiple_of(2) {
            return Err(Error::UnsupportedMeasure(
                "harmonic letter chain needs rank ≥ 2".into(),
            ));
        }
        let inv = |s: usize| s ^ 1;
        let mut f = vec![0.0; k2];
        let mut iterations = 0;
        loop {
            let next: Vec<f64> = (0..k2)
                .map(|s| {
                    let rest: f64 = (0..k2).filter(|&t| t != s).map(|t| mu[t] * f[inv(t)]).sum();
                    mu[s] / (1.0 - identity - rest)
                })
                .collect();
            let change = next
                .iter()
                .zip(&f)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            f = next;
            iterations += 1;
            if change < 1e-16 {
                break;
            }
            if iterations > 1_000_000 {
                return Err(Error::Diverged {
                    iterations,
                    residual: change,
                });
            }
        }
        let nu1: Vec<f64> = (0..k2)
            .map(|s| {
                let (a, b) = (f[s], f[inv(s)]);
                a * (1.0 - b) / (1.0 - a * b)
            })
            .collect();
        let trans = (0..k2)
            .map(|x| {
                let denom = 1.0 - nu1[inv(x)];
                (0..k2)
                    .map(|y| {
                        if y == inv(x) {
                            0.0
                        } else if denom > 1e-300 {
                            nu1[y] / denom
                        } else {
                            1.0 / (k2 - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(HarmonicLetterChain {
            rank: (k2 / 2) as u32,
            mu,
            identity,
            first_passage: f,
            nu1,
            trans,
        })
    }

    /// Non-backtracking uniform chain: the exit law of the simple walk.
    pub fn uniform(rank: u32) -> Self {
        let k2 = 2 * rank as usize;
        let p = 1.0 / k2 as f64;
        Self::from_weights(vec![p; k2], 0.0).expect("simple walk on a free group of rank ≥ 2")
    }

    pub fn for_model(model: &Model) -> Result<Self> {
        match model {
            Model::Free { rank, .. } if *rank >= 2 => Ok(Self::uniform(*rank)),
            _ => Err(Error::UnsupportedMeasure("needs a free group of rank ≥ 2".into())),
        }
    }

    /// `ℓ = Σ_s μ(s)(1 − 2ν₁(s⁻¹))`.
    pub fn drift(&self) -> f64 {
        (0..self.mu.len())
            .map(|s| self.mu[s] * (1.0 - 2.0 * self.nu1[s ^ 1]))
            .sum()
    }

    /// `ν` of the cylinder of boundary words starting with `letters`.
    pub fn cylinder(&self, letters: &[Letter]) -> f64 {
        let Some(&first) = letters.first() else {
            return 1.0;
        };
        let mut p = self.nu1[CylinderIndex::slot(first)];
        for w in letters.windows(2) {
            p *= self.trans[CylinderIndex::slot(w[0])][CylinderIndex::slot(w[1])];
        }
        p
    }
}

/// Joint law of `(|L_k|, (L_k⁻¹·o | ξ)_o)` for a generator-uniform walk and any
/// boundary word `ξ`; `κ − σ = 2·(L_k⁻¹ o | ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefixChainOracle {
    pub rank: u32,
    pub identity: f64,
    pub horizon: usize,
}

impl PrefixChainOracle {
    pub fn new(measure: &StepMeasure, horizon: usize) -> Result<Self> {
        let (rank, identity) = uniform_weights(measure)?;
        Ok(PrefixChainOracle {
            rank,
            identity,
            horizon,
        })
    }

    /// `dist[len][cp]` after `k` steps.
    pub fn distribution(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        if k > self.horizon {
            return Err(Error::HorizonExceeded {
                requested: k,
                horizon: self.horizon,
            });
        }
        let k2 = 2.0 * self.rank as f64;
        let mv = 1.0 - self.identity;
        let mut d = vec![vec![0.0; k + 2]; k + 2];
        d[0][0] = 1.0;
        for _ in 0..k {
            let mut nd = vec![vec![0.0; k + 2]; k + 2];
            for len in 0..=k {
                for cp in 0..=len {
                    let p = d[len][cp];
                    if p == 0.0 {
                        continue;
                    }
                    nd[len][cp] += self.identity * p;
                    if len == 0 {
                        nd[1][1] += mv * p / k2;
                        nd[1][0] += mv * p * (k2 - 1.0) / k2;
                        continue;
                    }
                    // Cancel the last letter.
                    nd[len - 1][cp.min(len - 1)] += mv * p / k2;
                    // Extend by one of 2k−1 letters; one of them continues ξ when cp = len.
                    if cp == len {
                        nd[len + 1][cp + 1] += mv * p / k2;
                        nd[len + 1][cp] += mv * p * (k2 - 2.0) / k2;
                    } else {
                        nd[len + 1][cp] += mv * p * (k2 - 1.0) / k2;
                    }
                }
            }
            d = nd;
        }
        Ok(d)
    }

    /// `P(κ(L_k) − σ(L_k, ξ) > r)`.
    pub fn deviation_tail(&self, k: usize, r: f64) -> Result<f64> {
        let d = self.distribution(k)?;
        let mut tail = 0.0;
        for row in &d {
            for (cp, &p) in row.iter().enumerate() {
                if 2.0 * cp as f64 > r {
                    tail += p;
                }
            }
        }
        Ok(tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroupElement;

    fn uniform() -> StepMeasure {
        StepMeasure::uniform_free(Model::free(2)).unwrap()
    }

    #[test]
    fn length_chain_rows() {
        let o = build_length_chain(&uniform(), 100).unwrap();
        assert_eq!(o.transition(3, 4), 0.75);
        assert_eq!(o.transition(3, 2), 0.25);
        assert_eq!(o.transition(0, 1), 1.0);
        for i in 0..10 {
            let s: f64 = (0..12).map(|j| o.transition(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(o.drift(), 0.5);
        assert_eq!(o.increment_variance(), 0.75);
    }

    #[test]
    fn exact_moment_examples() {
        let o = build_length_chain(&uniform(), 2000).unwrap();
        let m1 = o.exact_moments(1, 0.3).unwrap();
        assert_eq!((m1.mean, m1.var), (1.0, 0.0));
        assert!((m1.log_mgf - 0.3).abs() < 1e-15);
        assert_eq!(o.exact_moments(17, 0.0).unwrap().log_mgf, 0.0);
        let m = o.exact_moments(2000, 0.0).unwrap();
        assert!((m.mean / 2000.0 - 0.5).abs() <= 1e-3);
        assert!(matches!(o.exact_moments(2001, 0.0), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn tilted_pass_matches_distribution() {
        let o = build_length_chain(&uniform(), 300).unwrap();
        let dist = o.distribution(300).unwrap();
        for lambda in [-0.4, -0.1, 0.2, 0.5] {
            let direct: f64 = dist
                .iter()
                .enumerate()
                .map(|(k, p)| p * (lambda * k as f64).exp())
                .sum::<f64>()
                .ln();
            let ladder = o.log_mgf_ladder(&[300], lambda).unwrap()[0];
            assert!((direct - ladder).abs() < 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn biased_measure_is_refused_by_length_chain() {
        assert!(matches!(
            build_length_chain(&StepMeasure::biased_f2(8), 10),
            Err(Error::UnsupportedMeasure(_))
        ));
    }

    #[test]
    fn harmonic_chain_uniform_values() {
        let h = HarmonicLetterChain::uniform(2);
        for s in 0..4 {
            assert!((h.first_passage[s] - 1.0 / 3.0).abs() < 1e-15);
            assert!((h.nu1[s] - 0.25).abs() < 1e-15);
        }
        assert!((h.drift() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn harmonic_chain_biased_values() {
        let h = HarmonicLetterChain::from_measure(&StepMeasure::biased_f2(8)).unwrap();
        // ν = Σ_g μ(g) g_*ν on every cylinder of length ≤ 4.
        let slots = [1, -1, 2, -2];
        let mu = [0.4, 0.2, 0.2, 0.2];
        let mut level: Vec<Vec<Letter>> = slots.iter().map(|&l| vec![l]).collect();
        let mut words = level.clone();
        for _ in 0..3 {
            level = level
                .iter()
                .flat_map(|w| {
                    let last = *w.last().unwrap();
                    slots.iter().filter(move |&&l| l != -last).map(move |&l| {
                        let mut v = w.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
            words.extend(level.iter().cloned());
        }
        assert_eq!(words.len(), 4 + 12 + 36 + 108);
        for w in &words {
            let mut pushed = 0.0;
            for (&g, &p) in slots.iter().zip(&mu) {
                let pre = if w[0] == g {
                    if w.len() == 1 {
                        1.0 - h.cylinder(&[-g])
                    } else {
                        h.cylinder(&w[1..])
                    }
                } else {
                    let mut v = vec![-g];
                    v.extend_from_slice(w);
                    h.cylinder(&v)
                };
                pushed += p * pre;
            }
            assert!((pushed - h.cylinder(w)).abs() < 1e-14, "{w:?}");
        }
        // Reference values from an independent script (fixed point plus brute-force word DP).
        assert!((h.first_passage[0] - 0.50544).abs() < 5e-5);
        assert!((h.drift() - 0.542_684_884_179_610_5).abs() < 1e-12);
    }

    #[test]
    fn prefix_chain_small_cases() {
        let o = PrefixChainOracle::new(&uniform(), 20).unwrap();
        // After one step W is a single letter matching ξ₀ with probability 1/4.
        assert!((o.deviation_tail(1, 1.0).unwrap() - 0.25).abs() < 1e-15);
        let total: f64 = o.distribution(9).unwrap().iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let lazy = StepMeasure::new(
            Model::free(2),
            vec![
                (GroupElement::parse("1").unwrap(), 0.2),
                (GroupElement::parse("a").unwrap(), 0.2),
                (GroupElement::parse("A").unwrap(), 0.2),
                (GroupElement::parse("b").unwrap(), 0.2),
                (GroupElement::parse("B").unwrap(), 0.2),
            ],
            1.0,
        )
        .unwrap();
        let l = build_length_chain(&lazy, 10).unwrap();
        assert!((l.drift() - 0.4).abs() < 1e-15);
    }
}
