//! Two-level information-type hierarchy.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

const TRECIS_ONTOLOGY: &str = include_str!("../data/trecis_ontology.json");

/// A two-level label hierarchy: every lower label has exactly one upper parent.
///
/// Label order is the order of first appearance in the ontology file, so score
/// vectors and indicator vectors index labels consistently everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelOntology {
    upper: Vec<String>,
    lower: Vec<String>,
    parent_of: Vec<usize>,
    children: Vec<Vec<usize>>,
    ait: Vec<usize>,
    upper_index: HashMap<String, usize>,
    lower_index: HashMap<String, usize>,
}

impl LabelOntology {
    /// The TREC-IS hierarchy bundled with the crate.
    pub fn trecis() -> Self {
        let ontology = Self::from_json_str(TRECIS_ONTOLOGY).expect("bundled ontology parses");
        ontology.check_trecis_shape().expect("bundled ontology has the TREC-IS shape");
        ontology
    }

    pub fn bundled_json() -> &'static str {
        TRECIS_ONTOLOGY
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Parses `{"<lower>": "<upper>", ..., "ait": [..]}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let object = value
            .as_object()
            .ok_or_else(|| Error::Validation("ontology must be a JSON object".into()))?;
        let mut pairs = Vec::new();
        let mut ait_names = Vec::new();
        for (key, v) in object {
            if key == "ait" {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::Validation("`ait` must be an array".into()))?;
                for item in arr {
                    let name = item
                        .as_str()
                        .ok_or_else(|| Error::Validation("`ait` entries must be strings".into()))?;
                    ait_names.push(name.to_string());
                }
            } else {
                let parent = v.as_str().ok_or_else(|| {
                    Error::Validation(format!("parent of `{key}` must be a string"))
                })?;
                pairs.push((key.clone(), parent.to_string()));
            }
        }
        Self::new(&pairs, &ait_names)
    }

    /// Builds an ontology from `(lower, upper)` pairs in label order.
    pub fn new(pairs: &[(String, String)], ait: &[String]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Validation("ontology has no labels".into()));
        }
        let mut upper = Vec::new();
        let mut upper_index = HashMap::new();
        let mut lower = Vec::new();
        let mut lower_index = HashMap::new();
        let mut parent_of = Vec::new();
        for (low, up) in pairs {
            let u = *upper_index.entry(up.clone()).or_insert_with(|| {
                upper.push(up.clone());
                upper.len() - 1
            });
            if lower_index.insert(low.clone(), lower.len()).is_some() {
                return Err(Error::Validation(format!("duplicate lower label `{low}`")));
            }
            lower.push(low.clone());
            parent_of.push(u);
        }
        if let Some(clash) = lower.iter().find(|l| upper_index.contains_key(*l)) {
            return Err(Error::Validation(format!("`{clash}` is both an upper and a lower label")));
        }
        let mut children = vec![Vec::new(); upper.len()];
        for (c, &p) in parent_of.iter().enumerate() {
            children[p].push(c);
        }
        let mut ait_idx = Vec::new();
        for name in ait {
            let idx = *lower_index
                .get(name)
                .ok_or_else(|| Error::UnknownLabel(name.clone()))?;
            if ait_idx.contains(&idx) {
                return Err(Error::Validation(format!("duplicate AIT label `{name}`")));
            }
            ait_idx.push(idx);
        }
        Ok(Self { upper, lower, parent_of, children, ait: ait_idx, upper_index, lower_index })
    }

    /// Checks the TREC-IS invariants: 4 upper / 25 lower labels, parent sizes
    /// Report 14, Other 5, CallToAction 3, Request 3 and six actionable types.
    pub fn check_trecis_shape(&self) -> Result<()> {
        if self.upper.len() != 4 || self.lower.len() != 25 {
            return Err(Error::Validation(format!(
                "expected 4 upper and 25 lower labels, found {} and {}",
                self.upper.len(),
                self.lower.len()
            )));
        }
        for (name, size) in [("Report", 14), ("Other", 5), ("CallToAction", 3), ("Request", 3)] {
            let u = self.upper_index(name)?;
            if self.children[u].len() != size {
                return Err(Error::Validation(format!(
                    "`{name}` has {} children, expected {size}",
                    self.children[u].len()
                )));
            }
        }
        if self.ait.len() != 6 {
            return Err(Error::Validation(format!("expected 6 AIT labels, found {}", self.ait.len())));
        }
        Ok(())
    }

    pub fn upper_labels(&self) -> &[String] {
        &self.upper
    }

    pub fn lower_labels(&self) -> &[String] {
        &self.lower
    }

    pub fn n_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn n_lower(&self) -> usize {
        self.lower.len()
    }

    /// Parent index of each lower label.
    pub fn parents(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn parent_of(&self, lower: usize) -> usize {
        self.parent_of[lower]
    }

    pub fn children(&self, upper: usize) -> &[usize] {
        &self.children[upper]
    }

    /// Indices of the actionable information types.
    pub fn ait(&self) -> &[usize] {
        &self.ait
    }

    pub fn ait_labels(&self) -> Vec<String> {
        self.ait.iter().map(|&i| self.lower[i].clone()).collect()
    }

    pub fn lower_index(&self, name: &str) -> Result<usize> {
        self.lower_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn upper_index(&self, name: &str) -> Result<usize> {
        self.upper_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn parent_name(&self, lower: &str) -> Result<&str> {
        let idx = self.lower_index(lower)?;
        Ok(&self.upper[self.parent_of[idx]])
    }

    /// Image of a lower-label set under the parent map.
    pub fn derive_upper_labels<S: AsRef<str>>(
        &self,
        lower: impl IntoIterator<Item = S>,
    ) -> Result<BTreeSet<String>> {
        lower
            .into_iter()
            .map(|l| self.parent_name(l.as_ref()).map(str::to_string))
            .collect()
    }

    /// 0/1 indicator vectors `(upper, lower)` for a set of lower labels.
    pub fn indicators<S: AsRef<str>>(
        &self,
        lower: impl IntoIterator<Item = S>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut up = vec![0.0; self.n_upper()];
        let mut low = vec![0.0; self.n_lower()];
        for name in lower {
            let c = self.lower_index(name.as_ref())?;
            low[c] = 1.0;
            up[self.parent_of[c]] = 1.0;
        }
        Ok((up, low))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_shape() {
        let o = LabelOntology::trecis();
        assert_eq!(o.n_upper(), 4);
        assert_eq!(o.n_lower(), 25);
        let sizes: Vec<usize> = (0..4).map(|u| o.children(u).len()).collect();
        assert_eq!(sizes, vec![3, 3, 5, 14]);
        assert_eq!(
            o.ait_labels(),
            ["MovePeople", "EmergingThreats", "NewSubEvent", "ServiceAvailable", "GoodsServices", "SearchAndRescue"]
        );
    }

    #[test]
    fn derive_examples() {
        let o = LabelOntology::trecis();
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(o.derive_upper_labels(["SearchAndRescue"]).unwrap(), set(&["Request"]));
        assert_eq!(o.derive_upper_labels(Vec::<String>::new()).unwrap(), set(&[]));
        assert_eq!(o.derive_upper_labels(["News", "Weather", "Location"]).unwrap(), set(&["Report"]));
        assert_eq!(
            o.derive_upper_labels(["MovePeople", "Irrelevant"]).unwrap(),
            set(&["CallToAction", "Other"])
        );
    }

    #[test]
    fn unknown_label_is_named() {
        let o = LabelOntology::trecis();
        match o.derive_upper_labels(["Tsunami"]) {
            Err(Error::UnknownLabel(name)) => assert_eq!(name, "Tsunami"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_ait_outside_lower() {
        let pairs = vec![("a".to_string(), "A".to_string())];
        assert!(LabelOntology::new(&pairs, &["b".to_string()]).is_err());
    }
}
