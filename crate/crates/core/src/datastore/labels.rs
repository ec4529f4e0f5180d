//! Annotated shot pairs, stored as JSON lines.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Match-cut type a pair was annotated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Frame,
    Motion,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Frame => "frame",
            Task::Motion => "motion",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Task::Frame),
            "motion" => Ok(Task::Motion),
            other => Err(Error::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// Which candidate generator surfaced the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    H1,
    H2,
    H4,
    H5,
    RandomNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub movie_id: String,
    pub shot_i: u32,
    pub shot_j: u32,
    pub task: Task,
    /// Three annotator votes, or empty for random negatives.
    pub votes: Vec<bool>,
    pub majority: bool,
    pub source: PairSource,
}

impl LabeledPair {
    pub fn random_negative(movie_id: impl Into<String>, shot_i: u32, shot_j: u32, task: Task) -> Self {
        Self {
            movie_id: movie_id.into(),
            shot_i,
            shot_j,
            task,
            votes: Vec::new(),
            majority: false,
            source: PairSource::RandomNegative,
        }
    }

    /// Checks pair ordering, vote count, and majority consistency.
    pub fn validate(&self) -> Result<()> {
        if self.shot_i == 0 || self.shot_j == 0 {
            return Err(Error::Validation(format!(
                "{}: shot indices are 1-based",
                self.describe()
            )));
        }
        if self.shot_i >= self.shot_j {
            return Err(Error::Validation(format!(
                "{}: requires shot_i < shot_j",
                self.describe()
            )));
        }
        match (self.votes.len(), self.source) {
            (0, PairSource::RandomNegative) => {}
            (0, _) => {
                return Err(Error::Validation(format!(
                    "{}: only random negatives may omit votes",
                    self.describe()
                )))
            }
            (3, _) => {
                let yes = self.votes.iter().filter(|v| **v).count();
                if (yes >= 2) != self.majority {
                    return Err(Error::Validation(format!(
                        "{}: votes {:?} disagree with majority={}",
                        self.describe(),
                        self.votes,
                        self.majority
                    )));
                }
            }
            (n, _) => {
                return Err(Error::Validation(format!(
                    "{}: expected 3 votes, found {n}",
                    self.describe()
                )))
            }
        }
        if self.source == PairSource::RandomNegative && self.majority {
            return Err(Error::Validation(format!(
                "{}: random negatives must be labeled negative",
                self.describe()
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("pair {}:({}, {})", self.movie_id, self.shot_i, self.shot_j)
    }
}

/// Loads every row of a labels file, validates all of them, and returns the
/// rows for `task`. When `known_movies` is given, rows naming any other movie
/// are rejected.
pub fn load_labels(
    path: &Path,
    task: Task,
    known_movies: Option<&BTreeSet<String>>,
) -> Result<Vec<LabeledPair>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        pair.validate()?;
        if let Some(known) = known_movies {
            if !known.contains(&pair.movie_id) {
                return Err(Error::Validation(format!(
                    "{}:{}: unknown movie {:?}",
                    path.display(),
                    lineno + 1,
                    pair.movie_id
                )));
            }
        }
        if pair.task == task {
            out.push(pair);
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, pairs: &[LabeledPair]) -> Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p).map_err(|e| Error::json(path, e))?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(votes: Vec<bool>, majority: bool) -> LabeledPair {
        LabeledPair {
            movie_id: "m".into(),
            shot_i: 1,
            shot_j: 2,
            task: Task::Frame,
            votes,
            majority,
            source: PairSource::H2,
        }
    }

    #[test]
    fn majority_must_match_votes() {
        assert!(pair(vec![true, true, false], true).validate().is_ok());
        let err = pair(vec![true, true, false], false).validate().unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn ordering_enforced() {
        let mut p = pair(vec![false; 3], false);
        p.shot_i = 2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn random_negative_rules() {
        let mut p = LabeledPair::random_negative("m", 1, 5, Task::Motion);
        assert!(p.validate().is_ok());
        p.majority = true;
        assert!(p.validate().is_err());
        let mut q = pair(vec![], false);
        q.source = PairSource::H1;
        assert!(q.validate().is_err());
    }

    #[test]
    fn load_filters_by_task_and_movie() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let mut motion = pair(vec![true, true, true], true);
        motion.task = Task::Motion;
        motion.source = PairSource::H5;
        write_labels(&path, &[pair(vec![false; 3], false), motion]).unwrap();
        assert_eq!(load_labels(&path, Task::Frame, None).unwrap().len(), 1);
        assert_eq!(load_labels(&path, Task::Motion, None).unwrap().len(), 1);
        let known: BTreeSet<String> = ["other".to_string()].into();
        assert!(load_labels(&path, Task::Frame, Some(&known)).is_err());
    }

    #[test]
    fn field_names_on_the_wire() {
        let json = serde_json::to_value(LabeledPair::random_negative("tt01", 3, 9, Task::Frame)).unwrap();
        assert_eq!(json["source"], "random_negative");
        assert_eq!(json["task"], "frame");
        assert_eq!(json["shot_i"], 3);
    }
}
