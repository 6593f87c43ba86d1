//! KL chain rule and coarse-to-fine telescoping on finite state spaces.
//!
//! A [`CoarseningMap`] plays the role of a deterministic down-sampler: it
//! sends every fine state to one coarse state. Pushing two distributions
//! through it splits their divergence into a coarse part and an expected
//! conditional part, and chaining maps telescopes the fine divergence into
//! per-level non-negative pieces.

use crate::error::{invalid, Result};
use crate::rng::Stream;

const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution needs at least one state"));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid(format!(
                "probability {i} is {} (must be finite and non-negative)",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid("weights must have a finite positive sum"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("distribution needs at least one state"));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseningMap {
    assignment: Vec<usize>,
    coarse_size: usize,
}

impl CoarseningMap {
    pub fn new(assignment: Vec<usize>, coarse_size: usize) -> Result<Self> {
        if assignment.is_empty() || coarse_size == 0 {
            return Err(invalid("coarsening map needs at least one fine and one coarse state"));
        }
        let mut hit = vec![false; coarse_size];
        for (i, &y) in assignment.iter().enumerate() {
            if y >= coarse_size {
                return Err(invalid(format!("fine state {i} maps to {y}, outside 0..{coarse_size}")));
            }
            hit[y] = true;
        }
        if let Some(y) = hit.iter().position(|h| !h) {
            return Err(invalid(format!("coarse state {y} has no preimage")));
        }
        Ok(Self {
            assignment,
            coarse_size,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), n)
    }

    pub fn all_to_one(n: usize) -> Result<Self> {
        Self::new(vec![0; n], 1)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fine_size(&self) -> usize {
        self.assignment.len()
    }

    pub fn coarse_size(&self) -> usize {
        self.coarse_size
    }

    /// Uniformly random surjective map from `fine` onto `coarse` states.
    pub fn random(fine: usize, coarse: usize, rng: &mut Stream) -> Result<Self> {
        if coarse == 0 || coarse > fine {
            return Err(invalid(format!("cannot map {fine} states onto {coarse}")));
        }
        // every coarse state gets one preimage, the rest land anywhere
        let mut assignment: Vec<usize> = (0..coarse)
            .chain((coarse..fine).map(|_| rng.int_inclusive(0, coarse - 1)))
            .collect();
        rng.shuffle(&mut assignment);
        Self::new(assignment, coarse)
    }
}

/// `sum q ln(q / p)` in nats. Returns `+inf` when `q` puts mass where `p`
/// has none.
pub fn kl(q: &DiscreteDist, p: &DiscreteDist) -> Result<f64> {
    if q.len() != p.len() {
        return Err(invalid(format!("support sizes differ: {} vs {}", q.len(), p.len())));
    }
    Ok(kl_raw(q.probs(), p.probs()))
}

fn kl_raw(q: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return f64::INFINITY;
        }
        s += qi * (qi / pi).ln();
    }
    // rounding can leave a tiny negative value for q ~ p
    s.max(0.0)
}

pub fn pushforward(d: &DiscreteDist, m: &CoarseningMap) -> Result<DiscreteDist> {
    check_sizes(d, m)?;
    Ok(DiscreteDist {
        probs: push_raw(d.probs(), m),
    })
}

fn push_raw(d: &[f64], m: &CoarseningMap) -> Vec<f64> {
    let mut out = vec![0.0; m.coarse_size];
    for (&v, &y) in d.iter().zip(&m.assignment) {
        out[y] += v;
    }
    out
}

fn check_sizes(d: &DiscreteDist, m: &CoarseningMap) -> Result<()> {
    if d.len() != m.fine_size() {
        return Err(invalid(format!(
            "distribution has {} states, map expects {}",
            d.len(),
            m.fine_size()
        )));
    }
    Ok(())
}

fn finite_kl(q: &DiscreteDist, p: &DiscreteDist) -> Result<f64> {
    let v = kl(q, p)?;
    if v.is_infinite() {
        return Err(invalid("q is not absolutely continuous with respect to p"));
    }
    Ok(v)
}

/// `E_{y ~ Dq} KL(q | y || p | y)`, computed cell by cell. Cells without
/// q-mass contribute nothing.
pub fn expected_conditional_kl(q: &DiscreteDist, p: &DiscreteDist, m: &CoarseningMap) -> Result<f64> {
    check_sizes(q, m)?;
    finite_kl(q, p)?;
    let qy = push_raw(q.probs(), m);
    let py = push_raw(p.probs(), m);
    let mut cells: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); m.coarse_size];
    for (i, &y) in m.assignment.iter().enumerate() {
        cells[y].0.push(q.probs[i]);
        cells[y].1.push(p.probs[i]);
    }
    let mut total = 0.0;
    for (y, (cq, cp)) in cells.iter().enumerate() {
        if qy[y] == 0.0 {
            continue;
        }
        let cq: Vec<f64> = cq.iter().map(|v| v / qy[y]).collect();
        let cp: Vec<f64> = cp.iter().map(|v| v / py[y]).collect();
        total += qy[y] * kl_raw(&cq, &cp);
    }
    Ok(total)
}

/// `KL(q||p) - [KL(Dq||Dp) + E KL(q|y || p|y)]`.
pub fn chain_rule_residual(q: &DiscreteDist, p: &DiscreteDist, m: &CoarseningMap) -> Result<f64> {
    let fine = finite_kl(q, p)?;
    let coarse = finite_kl(&pushforward(q, m)?, &pushforward(p, m)?)?;
    let cond = expected_conditional_kl(q, p, m)?;
    Ok(fine - (coarse + cond))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TelescopingReport {
    /// `KL(q_t || p_t)` for `t = 0..=T`, finest first.
    pub level_kl: Vec<f64>,
    /// `KL(q_{t-1} || p_{t-1}) - KL(q_t || p_t)` for `t = 1..=T`.
    pub summands: Vec<f64>,
    /// Expected conditional divergence lost by map `t`, computed directly.
    pub conditional: Vec<f64>,
    /// Sum of the summands.
    pub total: f64,
    /// `KL(q_0||p_0) - (sum of conditionals + KL(q_T||p_T))`.
    pub residual: f64,
}

impl TelescopingReport {
    pub fn terminal_kl(&self) -> f64 {
        *self.level_kl.last().expect("at least the fine level")
    }

    pub fn min_summand(&self) -> f64 {
        self.summands.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when no coarse level has a larger divergence than the level
    /// above it, up to `tol`.
    pub fn monotone(&self, tol: f64) -> bool {
        self.level_kl.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

pub fn telescoping_check(q0: &DiscreteDist, p0: &DiscreteDist, maps: &[CoarseningMap]) -> Result<TelescopingReport> {
    if maps.is_empty() {
        return Err(invalid("telescoping needs at least one map"));
    }
    if q0.len() != p0.len() {
        return Err(invalid(format!("support sizes differ: {} vs {}", q0.len(), p0.len())));
    }
    let mut size = q0.len();
    for (t, m) in maps.iter().enumerate() {
        if m.fine_size() != size {
            return Err(invalid(format!(
                "map {} expects {} states but level {t} has {size}",
                t + 1,
                m.fine_size()
            )));
        }
        size = m.coarse_size();
    }

    let mut q = q0.clone();
    let mut p = p0.clone();
    let mut level_kl = vec![finite_kl(&q, &p)?];
    let mut conditional = Vec::with_capacity(maps.len());
    for m in maps {
        conditional.push(expected_conditional_kl(&q, &p, m)?);
        q = pushforward(&q, m)?;
        p = pushforward(&p, m)?;
        level_kl.push(finite_kl(&q, &p)?);
    }
    let summands: Vec<f64> = level_kl.windows(2).map(|w| w[0] - w[1]).collect();
    let total = summands.iter().sum();
    let residual = level_kl[0] - (conditional.iter().sum::<f64>() + level_kl[maps.len()]);
    Ok(TelescopingReport {
        level_kl,
        summands,
        conditional,
        total,
        residual,
    })
}

/// Random distribution over `n` states. With `allow_zeros` about a quarter
/// of the states get no mass (at least one state keeps some).
pub fn random_dist(n: usize, allow_zeros: bool, rng: &mut Stream) -> Result<DiscreteDist> {
    let keep = if allow_zeros {
        rng.int_inclusive(0, n.max(1) - 1)
    } else {
        0
    };
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            if allow_zeros && i != keep && rng.uniform() < 0.25 {
                0.0
            } else {
                // heavy tails make the divergences less trivial
                (-rng.uniform().max(1e-300).ln()).powi(2) + 1e-6
            }
        })
        .collect();
    DiscreteDist::from_weights(&weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSummary {
    pub instances: usize,
    pub max_abs_residual: f64,
    pub max_abs_telescoping_residual: f64,
    pub min_summand: f64,
    /// Largest `KL(Dq||Dp) - KL(q||p)` seen; non-positive when the
    /// data-processing inequality holds everywhere.
    pub max_dpi_excess: f64,
}

impl CampaignSummary {
    pub fn passed(&self, residual_tol: f64, summand_tol: f64) -> bool {
        self.max_abs_residual < residual_tol
            && self.max_abs_telescoping_residual < residual_tol
            && self.min_summand >= -summand_tol
            && self.max_dpi_excess <= summand_tol
    }
}

/// Random `(q, p, map)` instances with fine support up to `max_support`,
/// each also run as a two-level telescoping chain.
pub fn campaign(instances: usize, max_support: usize, seed: u64) -> Result<CampaignSummary> {
    if max_support < 1 {
        return Err(invalid("max support must be at least 1"));
    }
    let mut out = CampaignSummary {
        instances,
        max_abs_residual: 0.0,
        max_abs_telescoping_residual: 0.0,
        min_summand: f64::INFINITY,
        max_dpi_excess: f64::NEG_INFINITY,
    };
    for i in 0..instances {
        let mut rng = Stream::new(seed, "klcheck", &[i as u64]);
        let n = rng.int_inclusive(1, max_support);
        let q = random_dist(n, true, &mut rng)?;
        let p = random_dist(n, false, &mut rng)?;
        let m1 = CoarseningMap::random(n, rng.int_inclusive(1, n), &mut rng)?;
        let m2 = CoarseningMap::random(m1.coarse_size(), rng.int_inclusive(1, m1.coarse_size()), &mut rng)?;

        out.max_abs_residual = out.max_abs_residual.max(chain_rule_residual(&q, &p, &m1)?.abs());
        let rep = telescoping_check(&q, &p, &[m1, m2])?;
        out.max_abs_telescoping_residual = out.max_abs_telescoping_residual.max(rep.residual.abs());
        out.min_summand = out.min_summand.min(rep.min_summand());
        for w in rep.level_kl.windows(2) {
            out.max_dpi_excess = out.max_dpi_excess.max(w[1] - w[0]);
        }
    }
    Ok(out)
}
