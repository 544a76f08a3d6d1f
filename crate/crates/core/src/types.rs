//! Shared data model: embedding sets, score matrices and their validity rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the retrieval problem a set of embeddings lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Candidate,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Query => "query",
            Role::Candidate => "candidate",
        }
    }
}

/// Dense subject id assigned to every candidate row.
pub const POOL_SUBJECT: usize = 0;

/// A matrix of row embeddings with per-row metadata.
///
/// Queries carry a dense subject id per row and optionally a class label.
/// Candidates are class prototypes: `label_of` gives the class id of each
/// row and every class appears exactly once. All candidate rows belong to
/// [`POOL_SUBJECT`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Array2<f64>,
    pub subject_of: Vec<usize>,
    pub label_of: Option<Vec<usize>>,
    pub role: Role,
}

impl EmbeddingSet {
    pub fn new(
        vectors: Array2<f64>,
        role: Role,
        subject_of: Vec<usize>,
        label_of: Option<Vec<usize>>,
    ) -> Result<Self> {
        let set = Self {
            vectors,
            subject_of,
            label_of,
            role,
        };
        set.validate()?;
        Ok(set)
    }

    /// Candidate set whose row `i` is the prototype of class `i`.
    pub fn candidates(vectors: Array2<f64>) -> Result<Self> {
        let n = vectors.nrows();
        Self::new(
            vectors,
            Role::Candidate,
            vec![POOL_SUBJECT; n],
            Some((0..n).collect()),
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_of.iter().max().map_or(0, |&s| s + 1)
    }

    /// Row indices belonging to `subject`, in file order.
    pub fn rows_of_subject(&self, subject: usize) -> Vec<usize> {
        self.subject_of
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == subject)
            .map(|(i, _)| i)
            .collect()
    }

    /// Class id of every candidate row, or the row index when unlabeled.
    pub fn class_ids(&self) -> Vec<usize> {
        match &self.label_of {
            Some(labels) => labels.clone(),
            None => (0..self.len()).collect(),
        }
    }

    /// Copy of the selected rows, keeping metadata aligned.
    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingSet {
        let vectors = self.vectors.select(ndarray::Axis(0), rows);
        EmbeddingSet {
            vectors,
            subject_of: rows.iter().map(|&r| self.subject_of[r]).collect(),
            label_of: self
                .label_of
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            role: self.role,
        }
    }

    /// Same set with all labels removed.
    pub fn without_labels(&self) -> EmbeddingSet {
        EmbeddingSet {
            label_of: None,
            ..self.clone()
        }
    }

    /// Checks every structural invariant. Never panics.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.vectors.dim();
        if n == 0 {
            return Err(Error::EmptySet);
        }
        if d < 2 {
            return Err(Error::DimTooSmall(d));
        }
        for ((row, col), v) in self.vectors.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
        if self.subject_of.len() != n {
            return Err(Error::MetadataLength(format!(
                "subject_of has {} entries for {n} rows",
                self.subject_of.len()
            )));
        }
        if let Some(labels) = &self.label_of {
            if labels.len() != n {
                return Err(Error::MetadataLength(format!(
                    "label_of has {} entries for {n} rows",
                    labels.len()
                )));
            }
        }
        match self.role {
            Role::Query => {
                let present: BTreeSet<usize> = self.subject_of.iter().copied().collect();
                let expected = present.len();
                if let Some(missing) = (0..expected).find(|s| !present.contains(s)) {
                    return Err(Error::NonContiguousSubjects { expected, missing });
                }
            }
            Role::Candidate => {
                if let Some(labels) = &self.label_of {
                    let mut seen = vec![false; n];
                    for &c in labels {
                        if c >= n {
                            return Err(Error::MetadataLength(format!(
                                "candidate class id {c} outside 0..{n}"
                            )));
                        }
                        if seen[c] {
                            return Err(Error::DuplicateClass(c));
                        }
                        seen[c] = true;
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn expect_role(&self, role: Role) -> Result<()> {
        if self.role == role {
            Ok(())
        } else {
            Err(Error::RoleMismatch {
                expected: role.name(),
                found: self.role.name(),
            })
        }
    }
}

/// Maps arbitrary subject names onto dense ids `0..S` in sorted name order.
///
/// Returns the per-row dense ids and the name → id map that gets persisted
/// alongside the data.
pub fn canonicalize_subjects<S: AsRef<str>>(raw: &[S]) -> (Vec<usize>, BTreeMap<String, usize>) {
    let names: BTreeSet<&str> = raw.iter().map(|s| s.as_ref()).collect();
    let map: BTreeMap<String, usize> = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), i))
        .collect();
    let dense = raw.iter().map(|s| map[s.as_ref()]).collect();
    (dense, map)
}

/// Pipeline stage that produced a score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    New,
    Geom,
    Struct,
    Final,
}

impl Stage {
    pub fn code(self) -> u8 {
        match self {
            Stage::Base => 0,
            Stage::New => 1,
            Stage::Geom => 2,
            Stage::Struct => 3,
            Stage::Final => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Stage::Base,
            1 => Stage::New,
            2 => Stage::Geom,
            3 => Stage::Struct,
            4 => Stage::Final,
            other => return Err(Error::BadStageByte(other)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::New => "new",
            Stage::Geom => "geom",
            Stage::Struct => "struct",
            Stage::Final => "final",
        }
    }

    /// Allowed edges: Base → New → {Geom, Struct} → Final.
    pub fn can_advance_to(self, next: Stage) -> bool {
        matches!(
            (self, next),
            (Stage::Base, Stage::New)
                | (Stage::New, Stage::Geom)
                | (Stage::New, Stage::Struct)
                | (Stage::Geom, Stage::Final)
                | (Stage::Struct, Stage::Final)
        )
    }
}

/// Dense `|Q| × |C|` score matrix.
///
/// `query_ids[i]` is the row index of query `i` in the originating query
/// set; `class_ids[j]` is the class id of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub scores: Array2<f64>,
    pub stage: Stage,
    pub query_ids: Vec<usize>,
    pub class_ids: Vec<usize>,
}

impl SimMatrix {
    /// Matrix with identity index maps.
    pub fn new(scores: Array2<f64>, stage: Stage) -> Self {
        let (q, c) = scores.dim();
        Self {
            scores,
            stage,
            query_ids: (0..q).collect(),
            class_ids: (0..c).collect(),
        }
    }

    pub fn with_ids(mut self, query_ids: Vec<usize>, class_ids: Vec<usize>) -> Result<Self> {
        let (q, c) = self.scores.dim();
        if query_ids.len() != q || class_ids.len() != c {
            return Err(Error::ShapeMismatch {
                left: (q, c),
                right: (query_ids.len(), class_ids.len()),
            });
        }
        self.query_ids = query_ids;
        self.class_ids = class_ids;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn n_queries(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage == expected {
            Ok(())
        } else {
            Err(Error::WrongStage {
                expected,
                found: self.stage,
            })
        }
    }

    /// Same scores and index maps, advanced to `next`.
    pub fn advance(self, next: Stage) -> Result<Self> {
        if !self.stage.can_advance_to(next) {
            return Err(Error::WrongStage {
                expected: next,
                found: self.stage,
            });
        }
        Ok(Self {
            stage: next,
            ..self
        })
    }

    /// Column index of every class id.
    pub fn column_of_class(&self) -> HashMap<usize, usize> {
        self.class_ids
            .iter()
            .enumerate()
            .map(|(col, &class)| (class, col))
            .collect()
    }

    pub(crate) fn derive(&self, scores: Array2<f64>, stage: Stage) -> Self {
        Self {
            scores,
            stage,
            query_ids: self.query_ids.clone(),
            class_ids: self.class_ids.clone(),
        }
    }
}
