//! Seeded synthetic benchmark with subject shift and injected hub classes.
//!
//! Model:
//! * prototypes `p_c` are standard Gaussian vectors scaled to unit norm;
//! * hub classes get candidate embedding `v_c = (1 − γ) p_c + γ p̄`, where
//!   `p̄` is the prototype centroid (not renormalized); other classes use
//!   `v_c = p_c`;
//! * subject `s` has distortion `A_s = I + ε G_s` with `G_s` entries drawn
//!   from `N(0, 1/d)`, and shift `b_s` of norm `δ` in a Gaussian direction;
//! * a query of class `c` from subject `s` is `A_s (p_c + σ η) + b_s` with
//!   `η ~ N(0, I)`, so `σ` is the per-coordinate noise standard deviation.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, one stream per item:
//! `(1 << 56) | c` for prototype `c`, `2 << 56` for the hub selection,
//! `(3 << 56) | s` for subject `s` distortion, and
//! `(4 << 56) | (s << 28) | c` for the query noise of subject `s`, class `c`.
//! Normal draws use the `rand_distr` ziggurat `StandardNormal`.
//!
//! Within a subject, rows are ordered repetition-major (all classes of
//! repetition 0, then repetition 1, ...), so any prefix window covers
//! classes evenly. Subjects are concatenated in id order.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EmbeddingSet, Role};

const TAG_PROTOTYPE: u64 = 1 << 56;
const TAG_HUBS: u64 = 2 << 56;
const TAG_SUBJECT: u64 = 3 << 56;
const TAG_QUERY: u64 = 4 << 56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub d: usize,
    pub n_classes: usize,
    pub n_subjects: usize,
    pub q_per_class_per_subject: usize,
    pub sigma_noise: f64,
    pub shift_mean: f64,
    pub shift_cov: f64,
    pub n_hub: usize,
    pub hub_gamma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 20240917,
            d: 64,
            n_classes: 200,
            n_subjects: 6,
            q_per_class_per_subject: 10,
            sigma_noise: 0.6,
            shift_mean: 0.5,
            shift_cov: 0.15,
            n_hub: 20,
            hub_gamma: 0.7,
        }
    }
}

impl SynthSpec {
    /// Same layout with every distortion switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            sigma_noise: 0.0,
            shift_mean: 0.0,
            shift_cov: 0.0,
            hub_gamma: 0.0,
            ..self.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            serde_json::from_str(text).map_err(|e| Error::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.d < 2 {
            return bad(format!("d must be >= 2, got {}", self.d));
        }
        if self.n_classes < 1 || self.n_subjects < 1 || self.q_per_class_per_subject < 1 {
            return bad("class, subject and repetition counts must be >= 1".into());
        }
        if self.n_classes >= 1 << 28 || self.n_subjects >= 1 << 28 {
            return bad("class and subject counts must be below 2^28".into());
        }
        for (name, v) in [
            ("sigma_noise", self.sigma_noise),
            ("shift_mean", self.shift_mean),
            ("shift_cov", self.shift_cov),
            ("hub_gamma", self.hub_gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.hub_gamma >= 1.0 {
            return bad(format!("hub_gamma must be < 1, got {}", self.hub_gamma));
        }
        if self.n_hub > self.n_classes {
            return bad(format!(
                "n_hub={} exceeds n_classes={}",
                self.n_hub, self.n_classes
            ));
        }
        Ok(())
    }

    pub fn rows_per_subject(&self) -> usize {
        self.n_classes * self.q_per_class_per_subject
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub queries: EmbeddingSet,
    pub candidates: EmbeddingSet,
    /// Sorted ids of the injected hub classes.
    pub hub_classes: Vec<usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn prototypes(spec: &SynthSpec) -> Array2<f64> {
    let mut p = Array2::zeros((spec.n_classes, spec.d));
    p.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(c, mut row)| {
            let mut rng = stream(spec.seed, TAG_PROTOTYPE | c as u64);
            row.mapv_inplace(|_| gaussian(&mut rng));
            let norm = row.dot(&row).sqrt();
            row /= norm;
        });
    p
}

fn hub_classes(spec: &SynthSpec) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..spec.n_classes).collect();
    ids.shuffle(&mut stream(spec.seed, TAG_HUBS));
    let mut hubs = ids[..spec.n_hub].to_vec();
    hubs.sort_unstable();
    hubs
}

fn subject_rows(spec: &SynthSpec, s: usize, protos: &Array2<f64>) -> Array2<f64> {
    let d = spec.d;
    let mut rng = stream(spec.seed, TAG_SUBJECT | s as u64);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut a = Array2::<f64>::eye(d);
    for v in a.iter_mut() {
        *v += spec.shift_cov * gaussian(&mut rng) * inv_sqrt_d;
    }
    let mut b = Array1::from_shape_fn(d, |_| gaussian(&mut rng));
    let bn = b.dot(&b).sqrt();
    b *= spec.shift_mean / bn;

    let reps = spec.q_per_class_per_subject;
    let c_count = spec.n_classes;
    let mut clean = Array2::zeros((reps * c_count, d));
    for c in 0..c_count {
        let mut rng = stream(spec.seed, TAG_QUERY | ((s as u64) << 28) | c as u64);
        for rep in 0..reps {
            let mut row = clean.row_mut(rep * c_count + c);
            for (k, v) in row.iter_mut().enumerate() {
                *v = protos[[c, k]] + spec.sigma_noise * gaussian(&mut rng);
            }
        }
    }
    let mut out = clean.dot(&a.t());
    out += &b.view().insert_axis(Axis(0));
    out
}

/// Generates queries (with labels and subjects) and one candidate per class.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let protos = prototypes(spec);
    let hubs = hub_classes(spec);

    let mut cand = protos.clone();
    if !hubs.is_empty() && spec.hub_gamma > 0.0 {
        let centroid = protos.mean_axis(Axis(0)).expect("n_classes >= 1");
        for &c in &hubs {
            let mut row = cand.row_mut(c);
            let pulled = &row * (1.0 - spec.hub_gamma) + &centroid * spec.hub_gamma;
            row.assign(&pulled);
        }
    }

    let blocks: Vec<Array2<f64>> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| subject_rows(spec, s, &protos))
        .collect();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let vectors = ndarray::concatenate(Axis(0), &views).expect("equal widths");

    let per = spec.rows_per_subject();
    let subject_of = (0..spec.n_subjects)
        .flat_map(|s| std::iter::repeat_n(s, per))
        .collect();
    let label_of = (0..spec.n_subjects)
        .flat_map(|_| (0..spec.q_per_class_per_subject).flat_map(|_| 0..spec.n_classes))
        .collect();

    Ok(SynthData {
        queries: EmbeddingSet::new(vectors, Role::Query, subject_of, Some(label_of))?,
        candidates: EmbeddingSet::candidates(cand)?,
        hub_classes: hubs,
    })
}
