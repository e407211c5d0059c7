use serde::{Deserialize, Serialize};

use super::EnvError;

/// An `m × n` bid matrix (slots × advertisers) with one budget per advertiser.
///
/// JSON form: `{"m": 2, "n": 2, "bids": [[1, 1], [0, 1]], "budgets": [1, 1]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceJson", into = "InstanceJson")]
pub struct AdWordsInstance {
    m: usize,
    n: usize,
    bids: Vec<f64>,
    budgets: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    m: usize,
    n: usize,
    bids: Vec<Vec<f64>>,
    budgets: Vec<f64>,
}

impl TryFrom<InstanceJson> for AdWordsInstance {
    type Error = EnvError;

    fn try_from(j: InstanceJson) -> Result<Self, EnvError> {
        if j.bids.len() != j.m || j.bids.iter().any(|r| r.len() != j.n) {
            return Err(EnvError::InvalidInstance(format!(
                "bids must be {}×{} rows",
                j.m, j.n
            )));
        }
        AdWordsInstance::new(j.m, j.n, j.bids.concat(), j.budgets)
    }
}

impl From<AdWordsInstance> for InstanceJson {
    fn from(inst: AdWordsInstance) -> Self {
        InstanceJson {
            m: inst.m,
            n: inst.n,
            bids: inst.bids.chunks(inst.n).map(<[f64]>::to_vec).collect(),
            budgets: inst.budgets,
        }
    }
}

impl AdWordsInstance {
    /// `bids` is row-major, one row of `n` bids per slot.
    pub fn new(m: usize, n: usize, bids: Vec<f64>, budgets: Vec<f64>) -> Result<Self, EnvError> {
        if m == 0 || n == 0 {
            return Err(EnvError::InvalidInstance("m and n must be at least 1".into()));
        }
        if bids.len() != m * n || budgets.len() != n {
            return Err(EnvError::InvalidInstance(format!(
                "expected {} bids and {} budgets, got {} and {}",
                m * n,
                n,
                bids.len(),
                budgets.len()
            )));
        }
        if let Some(b) = bids.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(EnvError::InvalidInstance(format!("bid {b} outside [0, 1]")));
        }
        if let Some(b) = budgets.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(EnvError::InvalidInstance(format!("budget {b} must be positive")));
        }
        Ok(AdWordsInstance { m, n, bids, budgets })
    }

    /// Every advertiser gets budget `m / n`.
    pub fn with_uniform_budgets(m: usize, n: usize, bids: Vec<f64>) -> Result<Self, EnvError> {
        Self::new(m, n, bids, vec![m as f64 / n as f64; n])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn bid(&self, slot: usize, advertiser: usize) -> f64 {
        self.bids[slot * self.n + advertiser]
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.bids[slot * self.n..(slot + 1) * self.n]
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn max_bid(&self) -> f64 {
        self.bids.iter().copied().fold(0.0, f64::max)
    }

    /// Same instance with advertiser columns reordered: new column `k` is old `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let bids = (0..self.m)
            .flat_map(|j| perm.iter().map(move |&i| (j, i)))
            .map(|(j, i)| self.bid(j, i))
            .collect();
        let budgets = perm.iter().map(|&i| self.budgets[i]).collect();
        AdWordsInstance {
            m: self.m,
            n: self.n,
            bids,
            budgets,
        }
    }

    /// Multiplies bids and budgets by `s`; bids must stay within `[0, 1]`.
    pub fn scaled(&self, s: f64) -> Result<Self, EnvError> {
        Self::new(
            self.m,
            self.n,
            self.bids.iter().map(|b| b * s).collect(),
            self.budgets.iter().map(|b| b * s).collect(),
        )
    }
}
