use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    Categorical,
    /// Two-level variable. With `categories` set, the raw column holds the
    /// category strings; without, it already holds numeric 0/1.
    Binary,
}

/// Predicate side of a recode rule. Thresholds are compared against the raw value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Gt(f64),
    Ge(f64),
    Lt(f64),
    Le(f64),
}

impl Predicate {
    pub fn matches(&self, v: f64) -> bool {
        match *self {
            Predicate::Gt(c) => v > c,
            Predicate::Ge(c) => v >= c,
            Predicate::Lt(c) => v < c,
            Predicate::Le(c) => v <= c,
        }
    }

    fn overlaps(&self, other: &Predicate) -> bool {
        use Predicate::*;
        let upper = |p: &Predicate| matches!(p, Gt(_) | Ge(_));
        match (upper(self), upper(other)) {
            (true, true) | (false, false) => true,
            _ => {
                let (hi, lo) = if upper(self) {
                    (self, other)
                } else {
                    (other, self)
                };
                let (a, a_incl) = match *hi {
                    Gt(a) => (a, false),
                    Ge(a) => (a, true),
                    _ => unreachable!(),
                };
                let (b, b_incl) = match *lo {
                    Lt(b) => (b, false),
                    Le(b) => (b, true),
                    _ => unreachable!(),
                };
                a < b || (a == b && a_incl && b_incl)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecodeRule {
    pub when: Predicate,
    pub replace_with: f64,
}

impl RecodeRule {
    pub fn new(when: Predicate, replace_with: f64) -> Self {
        Self { when, replace_with }
    }

    pub fn apply(&self, v: f64) -> Option<f64> {
        self.when.matches(v).then_some(self.replace_with)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default)]
    pub recode_rules: Vec<RecodeRule>,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Continuous,
            recode_rules: Vec::new(),
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Categorical,
            recode_rules: Vec::new(),
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    /// Two-category variable; the second category is the one coded 1 when collapsed.
    pub fn binary<S: Into<String>>(name: impl Into<String>, categories: [S; 2]) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Binary,
            recode_rules: Vec::new(),
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn with_rule(mut self, rule: RecodeRule) -> Self {
        self.recode_rules.push(rule);
        self
    }

    /// Whether the raw column holds category strings.
    pub fn is_text(&self) -> bool {
        match self.kind {
            VariableKind::Categorical => true,
            VariableKind::Binary => !self.categories.is_empty(),
            VariableKind::Continuous => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("empty variable name".into()));
        }
        match self.kind {
            VariableKind::Categorical if self.categories.len() < 2 => {
                return Err(Error::Schema(format!(
                    "categorical variable '{}' needs at least 2 categories, has {}",
                    self.name,
                    self.categories.len()
                )))
            }
            VariableKind::Binary if !self.categories.is_empty() && self.categories.len() != 2 => {
                return Err(Error::Schema(format!(
                    "binary variable '{}' must list exactly 2 categories",
                    self.name
                )))
            }
            _ => {}
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate category '{c}' in '{}'",
                    self.name
                )));
            }
        }
        for (i, a) in self.recode_rules.iter().enumerate() {
            for b in &self.recode_rules[i + 1..] {
                if a.when.overlaps(&b.when) {
                    return Err(Error::Schema(format!(
                        "recode rules {:?} and {:?} on '{}' overlap",
                        a.when, b.when, self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_category_is_rejected() {
        let v = VariableSpec::categorical("sector", ["agriculture"]);
        assert!(v.validate().is_err());
    }

    #[test]
    fn overlapping_rules_are_rejected() {
        let v = VariableSpec::continuous("ikg")
            .with_rule(RecodeRule::new(Predicate::Gt(60.0), 60.0))
            .with_rule(RecodeRule::new(Predicate::Ge(70.0), 70.0));
        assert!(v.validate().is_err());

        let v = VariableSpec::continuous("n2064")
            .with_rule(RecodeRule::new(Predicate::Lt(1.0), 1.0))
            .with_rule(RecodeRule::new(Predicate::Gt(4.0), 4.0));
        assert!(v.validate().is_ok());

        let touching = VariableSpec::continuous("x")
            .with_rule(RecodeRule::new(Predicate::Le(1.0), 1.0))
            .with_rule(RecodeRule::new(Predicate::Ge(1.0), 1.0));
        assert!(touching.validate().is_err());
    }
}
