//! Benchmark input families and the Greedy-derived budget construction.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::adwords::{AdWordsInstance, EnvError};

/// Budget given to advertisers that Greedy never pays.
pub const BUDGET_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Triangular { n: usize, b: usize },
    ThickZ { n: usize, b: usize },
    Powerlaw { n: usize },
    TriangularG { n: usize },
    UniformRandom { m: usize, n: usize },
    Mixture { components: Vec<(f64, DistributionSpec)> },
}

impl DistributionSpec {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
        match self {
            DistributionSpec::Triangular { n, b } => triangular(*n, *b, rng),
            DistributionSpec::ThickZ { n, b } => thick_z(*n, *b, rng),
            DistributionSpec::Powerlaw { n } => powerlaw(*n, rng),
            DistributionSpec::TriangularG { n } => triangular_g(*n, rng),
            DistributionSpec::UniformRandom { m, n } => uniform_random(*m, *n, rng),
            DistributionSpec::Mixture { components } => {
                let weights: Vec<f64> = components.iter().map(|(w, _)| *w).collect();
                let pick = WeightedIndex::new(&weights)
                    .map_err(|e| EnvError::InvalidInstance(format!("mixture weights: {e}")))?
                    .sample(rng);
                components[pick].1.sample(rng)
            }
        }
    }

    /// Short label such as `thick_z(5)` used in tables.
    pub fn label(&self) -> String {
        match self {
            DistributionSpec::Triangular { n, b } => format!("triangular({n},{b})"),
            DistributionSpec::ThickZ { n, b } => format!("thick_z({n},{b})"),
            DistributionSpec::Powerlaw { n } => format!("powerlaw({n})"),
            DistributionSpec::TriangularG { n } => format!("triangular_g({n})"),
            DistributionSpec::UniformRandom { m, n } => format!("uniform({m}x{n})"),
            DistributionSpec::Mixture { components } => {
                let parts: Vec<String> = components.iter().map(|(w, d)| format!("{w}:{}", d.label())).collect();
                format!("mixture[{}]", parts.join(","))
            }
        }
    }

    /// Parses `triangular:5:5`, `thick_z:5:5`, `powerlaw:5`, `triangular_g:5`, `uniform:25:5`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |k: usize| -> Result<usize, String> {
            parts
                .get(k)
                .ok_or_else(|| format!("`{s}`: missing field {k}"))?
                .parse()
                .map_err(|e| format!("`{s}`: {e}"))
        };
        let spec = match parts[0] {
            "triangular" => DistributionSpec::Triangular { n: num(1)?, b: num(2)? },
            "thick_z" => DistributionSpec::ThickZ { n: num(1)?, b: num(2)? },
            "powerlaw" => DistributionSpec::Powerlaw { n: num(1)? },
            "triangular_g" => DistributionSpec::TriangularG { n: num(1)? },
            "uniform" => DistributionSpec::UniformRandom { m: num(1)?, n: num(2)? },
            other => return Err(format!("unknown distribution `{other}`")),
        };
        Ok(spec)
    }
}

fn positive(name: &str, v: usize) -> Result<(), EnvError> {
    if v == 0 {
        return Err(EnvError::InvalidInstance(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn permuted<R: Rng + ?Sized>(inst: AdWordsInstance, rng: &mut R) -> AdWordsInstance {
    let mut perm: Vec<usize> = (0..inst.n()).collect();
    perm.shuffle(rng);
    inst.permute_columns(&perm)
}

/// Unpermuted triangular matrix: advertiser `i` bids 1 on slots `0..(i+1)·B`.
pub fn triangular_canonical(n: usize, b: usize) -> Result<AdWordsInstance, EnvError> {
    positive("n", n)?;
    positive("B", b)?;
    let m = n * b;
    let bids = (0..m)
        .flat_map(|j| (0..n).map(move |i| if j < (i + 1) * b { 1.0 } else { 0.0 }))
        .collect();
    AdWordsInstance::new(m, n, bids, vec![b as f64; n])
}

pub fn triangular<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
    Ok(permuted(triangular_canonical(n, b)?, rng))
}

/// Unpermuted thick-z matrix. Advertiser `i` bids 1 on its own block
/// `i·B..(i+1)·B`; advertisers in the upper half `i ≥ h` also bid on the
/// first `h` blocks, where `h = ⌈n/2⌉`.
pub fn thick_z_canonical(n: usize, b: usize) -> Result<AdWordsInstance, EnvError> {
    positive("n", n)?;
    positive("B", b)?;
    let m = n * b;
    let h = n.div_ceil(2);
    let bids = (0..m)
        .flat_map(|j| {
            (0..n).map(move |i| {
                let own = j / b == i;
                let shared = i >= h && j < h * b;
                if own || shared {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    AdWordsInstance::new(m, n, bids, vec![b as f64; n])
}

pub fn thick_z<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
    Ok(permuted(thick_z_canonical(n, b)?, rng))
}

/// Budgets equal to what an unbudgeted Greedy (lowest-index ties) would spend.
pub fn greedy_budgets(m: usize, n: usize, bids: &[f64]) -> Vec<f64> {
    let mut spend = vec![0.0; n];
    for row in bids.chunks(n).take(m) {
        let mut best: Option<usize> = None;
        for (i, &v) in row.iter().enumerate() {
            if v > 0.0 && best.map_or(true, |k| v > row[k]) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            spend[i] += row[i];
        }
    }
    spend.into_iter().map(|s| if s > 0.0 { s } else { BUDGET_FLOOR }).collect()
}

/// Preferential-attachment bipartite graph with `n²` slots and Greedy budgets.
pub fn powerlaw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
    if n < 2 {
        return Err(EnvError::InvalidInstance("powerlaw needs n ≥ 2".into()));
    }
    let m = n * n;
    let degree_noise = Normal::new(1.0, 1.0).expect("valid normal");
    let mut counts = vec![1.0; n];
    let mut bids = vec![0.0; m * n];
    for j in 0..m {
        let g: f64 = degree_noise.sample(rng);
        let d = (g.exp().round() as usize).clamp(1, n);
        let mut weights = counts.clone();
        let mut chosen = Vec::with_capacity(d);
        for _ in 0..d {
            let i = WeightedIndex::new(&weights).expect("positive weights").sample(rng);
            chosen.push(i);
            weights[i] = 0.0;
        }
        let base: f64 = rng.gen();
        let noise = Normal::new(base, 0.1).expect("valid normal");
        for &i in &chosen {
            counts[i] += 1.0;
            bids[j * n + i] = noise.sample(rng).clamp(0.0, 1.0);
        }
    }
    let budgets = greedy_budgets(m, n, &bids);
    AdWordsInstance::new(m, n, bids, budgets)
}

/// Triangular support with `B = n`, each one replaced by `Uniform(0.5, 1)`.
pub fn triangular_g<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
    let support = triangular(n, n, rng)?;
    let m = support.m();
    let bids: Vec<f64> = support
        .bids()
        .iter()
        .map(|&s| if s > 0.0 { rng.gen_range(0.5..=1.0) } else { 0.0 })
        .collect();
    let budgets = greedy_budgets(m, n, &bids);
    AdWordsInstance::new(m, n, bids, budgets)
}

/// i.i.d. `Uniform(0, 1)` bids with budgets `m/n`.
pub fn uniform_random<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<AdWordsInstance, EnvError> {
    positive("m", m)?;
    positive("n", n)?;
    let bids = (0..m * n).map(|_| rng.gen()).collect();
    AdWordsInstance::with_uniform_budgets(m, n, bids)
}
