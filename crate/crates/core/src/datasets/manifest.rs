use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Unlabelled,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Unlabelled => "unlabelled",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "unlabelled" => Ok(Role::Unlabelled),
            "test" => Ok(Role::Test),
            other => Err(Error::validation(format!("unknown role {other:?}"))),
        }
    }
}

/// How many classes go to each role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitProportions {
    Counts {
        train: usize,
        unlabelled: usize,
        test: usize,
    },
    Fractions {
        train: f64,
        unlabelled: f64,
        test: f64,
    },
}

impl SplitProportions {
    fn resolve(&self, n: usize) -> Result<(usize, usize, usize)> {
        match *self {
            SplitProportions::Counts {
                train,
                unlabelled,
                test,
            } => {
                let total = train + unlabelled + test;
                if total > n {
                    return Err(Error::validation(format!(
                        "split counts ({train}, {unlabelled}, {test}) exceed the {n} available classes"
                    )));
                }
                if total < n {
                    return Err(Error::validation(format!(
                        "split counts ({train}, {unlabelled}, {test}) leave {} of {n} classes unassigned",
                        n - total
                    )));
                }
                Ok((train, unlabelled, test))
            }
            SplitProportions::Fractions {
                train,
                unlabelled,
                test,
            } => {
                let fr = [train, unlabelled, test];
                if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
                    return Err(Error::validation("split fractions must be non-negative"));
                }
                if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::validation("split fractions must sum to 1"));
                }
                let n_train = (train * n as f64).round() as usize;
                let n_test = ((test * n as f64).round() as usize).min(n - n_train);
                Ok((n_train, n - n_train - n_test, n_test))
            }
        }
    }
}

/// Assignment of every class name to exactly one role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    assignments: BTreeMap<String, Role>,
    seed: u64,
}

impl SplitManifest {
    pub fn new(assignments: BTreeMap<String, Role>, seed: u64) -> Self {
        Self { assignments, seed }
    }

    pub fn assignments(&self) -> &BTreeMap<String, Role> {
        &self.assignments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn role(&self, class_name: &str) -> Option<Role> {
        self.assignments.get(class_name).copied()
    }

    /// `(n_train, n_unlabelled, n_test)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for r in self.assignments.values() {
            match r {
                Role::Train => c.0 += 1,
                Role::Unlabelled => c.1 += 1,
                Role::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn classes_with(&self, role: Role) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(c, _)| c.clone())
            .collect()
    }

    /// Line-oriented text form: `# seed=<int>` then one `<class>\t<role>` per class.
    pub fn to_text(&self) -> String {
        let mut s = format!("# seed={}\n", self.seed);
        for (c, r) in &self.assignments {
            s.push_str(c);
            s.push('\t');
            s.push_str(r.as_str());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("empty manifest"))?;
        let seed = header
            .strip_prefix("# seed=")
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::validation(format!("bad manifest header {header:?}")))?;
        let mut assignments = BTreeMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (class, role) = line.split_once('\t').ok_or_else(|| {
                Error::validation(format!("manifest line {} lacks a tab", lineno + 2))
            })?;
            if assignments.insert(class.to_string(), role.parse()?).is_some() {
                return Err(Error::validation(format!(
                    "class {class:?} assigned twice in manifest"
                )));
            }
        }
        Ok(Self { assignments, seed })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Seeded uniform shuffle of the class list followed by prefix partitioning
/// into train, unlabelled and test roles.
pub fn build_split_manifest(
    class_names: &[String],
    proportions: SplitProportions,
    seed: u64,
) -> Result<SplitManifest> {
    let mut seen = BTreeSet::new();
    for c in class_names {
        if c.is_empty() || c.contains(['\t', '\n', '\r']) {
            return Err(Error::validation(format!("invalid class name {c:?}")));
        }
        if !seen.insert(c.as_str()) {
            return Err(Error::validation(format!("duplicate class name {c:?}")));
        }
    }
    let (n_train, n_unl, _) = proportions.resolve(class_names.len())?;
    let mut order: Vec<&String> = class_names.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let role = if i < n_train {
                Role::Train
            } else if i < n_train + n_unl {
                Role::Unlabelled
            } else {
                Role::Test
            };
            (c.clone(), role)
        })
        .collect();
    Ok(SplitManifest { assignments, seed })
}
