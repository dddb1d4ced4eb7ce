use serde::{Deserialize, Serialize};

use super::model::{ActionId, MdpModel, StateId, SCHEMA_VERSION};
use super::MdpError;
use crate::linalg;

/// Cached feature table `φ(s, a)`, aligned with the admissible lists of the
/// model it belongs to: `table[s][k]` is the feature of the `k`-th admissible
/// action at `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapRaw", into = "FeatureMapRaw")]
pub struct FeatureMap {
    dim: usize,
    table: Vec<Vec<Vec<f64>>>,
    phi_max: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapRaw {
    version: u32,
    dim: usize,
    features: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    phi_max: Option<f64>,
}

impl TryFrom<FeatureMapRaw> for FeatureMap {
    type Error = MdpError;
    fn try_from(raw: FeatureMapRaw) -> Result<Self, MdpError> {
        if raw.version != SCHEMA_VERSION {
            return Err(MdpError::Invalid(format!("unsupported schema version {}", raw.version)));
        }
        FeatureMap::new(raw.dim, raw.features)
    }
}

impl From<FeatureMap> for FeatureMapRaw {
    fn from(f: FeatureMap) -> Self {
        FeatureMapRaw { version: SCHEMA_VERSION, dim: f.dim, features: f.table, phi_max: Some(f.phi_max) }
    }
}

impl FeatureMap {
    pub fn new(dim: usize, table: Vec<Vec<Vec<f64>>>) -> Result<Self, MdpError> {
        let mut phi_max: f64 = 0.0;
        for (s, row) in table.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                if x.len() != dim {
                    return Err(MdpError::Invalid(format!("feature ({s},#{k}) has length {} not {dim}", x.len())));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(MdpError::Invalid(format!("feature ({s},#{k}) is not finite")));
                }
                phi_max = phi_max.max(linalg::norm(x));
            }
        }
        Ok(FeatureMap { dim, table, phi_max })
    }

    /// Checks that the table shape matches the model's admissible sets.
    pub fn check_against(&self, mdp: &MdpModel) -> Result<(), MdpError> {
        if self.table.len() != mdp.num_states() {
            return Err(MdpError::Invalid("feature table state count mismatch".into()));
        }
        for (s, row) in self.table.iter().enumerate() {
            if row.len() != mdp.actions(s).len() {
                return Err(MdpError::Invalid(format!("feature table action count mismatch at state {s}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    #[inline]
    pub fn at(&self, s: StateId, k: usize) -> &[f64] {
        &self.table[s][k]
    }

    #[inline]
    pub fn state(&self, s: StateId) -> &[Vec<f64>] {
        &self.table[s]
    }

    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    /// Feature of action `a` at `s`, looked up through the admissible list.
    pub fn lookup(&self, admissible: &[Vec<ActionId>], s: StateId, a: ActionId) -> Option<&[f64]> {
        let k = admissible.get(s)?.binary_search(&a).ok()?;
        Some(&self.table[s][k])
    }

    /// `⟨φ(s, a_k), θ⟩` for every admissible action at `s`.
    pub fn scores<'a>(&'a self, s: StateId, theta: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.table[s].iter().map(move |x| linalg::dot(x, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_norm_bound_and_round_trips() {
        let f = FeatureMap::new(2, vec![vec![vec![3.0, 4.0], vec![0.0, 1.0]], vec![vec![0.0, 0.0]]]).unwrap();
        assert_eq!(f.phi_max(), 5.0);
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"features\"") && text.contains("\"dim\""));
        let back: FeatureMap = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(FeatureMap::new(3, vec![vec![vec![1.0]]]).is_err());
    }
}
