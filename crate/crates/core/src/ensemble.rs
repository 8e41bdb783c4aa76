//! Combining several models' predictions into one map.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::maps::{LabelMap, ProbMap, IGNORE_LABEL};
use crate::{Error, Result};

/// How a tie between equally voted classes is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// The tied class voted by the earliest member in priority order.
    #[default]
    Priority,
    /// The smallest tied class index.
    LowestClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleConfig {
    member_names: Vec<String>,
    tie_break: TieBreak,
}

impl EnsembleConfig {
    /// `member_names` is in priority order, highest first.
    pub fn new(member_names: Vec<String>, tie_break: TieBreak) -> Result<Self> {
        if member_names.is_empty() {
            return Err(Error::Param("an ensemble needs at least one member".into()));
        }
        for (i, name) in member_names.iter().enumerate() {
            if member_names[..i].contains(name) {
                return Err(Error::Param(format!("duplicate ensemble member {name:?}")));
            }
        }
        Ok(Self { member_names, tie_break })
    }

    pub fn member_names(&self) -> &[String] {
        &self.member_names
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }
}

/// Per-pixel majority vote. Ignore votes are not counted; a pixel where every
/// member abstains stays ignored.
pub fn vote(members: &[LabelMap], config: &EnsembleConfig) -> Result<LabelMap> {
    let names = config.member_names();
    if members.len() != names.len() {
        return Err(Error::Shape(format!(
            "{} label maps supplied for {} ensemble members",
            members.len(),
            names.len()
        )));
    }
    let first = &members[0];
    for (map, name) in members.iter().zip(names).skip(1) {
        if !map.same_shape(first) {
            return Err(Error::Shape(format!(
                "member {name:?} is {}x{} with {} classes, expected {}x{} with {}",
                map.height(),
                map.width(),
                map.num_classes(),
                first.height(),
                first.width(),
                first.num_classes()
            )));
        }
    }

    let mut counts = vec![0u32; first.num_classes()];
    let mut out = Vec::with_capacity(first.len());
    for px in 0..first.len() {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut best_count = 0;
        for m in members {
            let l = m.data()[px];
            if l != IGNORE_LABEL {
                let c = &mut counts[usize::from(l)];
                *c += 1;
                best_count = best_count.max(*c);
            }
        }
        let label = if best_count == 0 {
            IGNORE_LABEL
        } else {
            match config.tie_break() {
                TieBreak::Priority => members
                    .iter()
                    .map(|m| m.data()[px])
                    .find(|&l| l != IGNORE_LABEL && counts[usize::from(l)] == best_count)
                    .unwrap_or(IGNORE_LABEL),
                TieBreak::LowestClass => counts.iter().position(|&c| c == best_count).map_or(IGNORE_LABEL, |c| c as u8),
            }
        };
        out.push(label);
    }
    LabelMap::new(first.height(), first.width(), first.num_classes(), out)
}

/// Weighted per-pixel average of probability maps, renormalized per pixel.
/// `None` weights every member equally.
pub fn average_probs(members: &[ProbMap], weights: Option<&[f32]>) -> Result<ProbMap> {
    let first = members.first().ok_or_else(|| Error::Param("averaging needs at least one member".into()))?;
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = vec![1.0f32; members.len()];
            &uniform
        }
    };
    if weights.len() != members.len() {
        return Err(Error::Shape(format!("{} weights for {} members", weights.len(), members.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Param("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().map(|&w| f64::from(w)).sum();
    if total <= 0.0 {
        return Err(Error::Param("weights sum to zero".into()));
    }
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.height() != first.height() || m.width() != first.width() || m.num_classes() != first.num_classes() {
            return Err(Error::Shape(format!("member {i} does not match member 0's shape")));
        }
    }

    let c = first.num_classes();
    let mut acc = vec![0.0f64; c];
    let mut data = Vec::with_capacity(first.data().len());
    for px in 0..first.num_pixels() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (m, &w) in members.iter().zip(weights) {
            for (a, &p) in acc.iter_mut().zip(m.pixel(px)) {
                *a += f64::from(w) * f64::from(p);
            }
        }
        let sum: f64 = acc.iter().sum();
        data.extend(acc.iter().map(|a| ((a / sum) as f32).min(1.0)));
    }
    ProbMap::new(first.height(), first.width(), c, data)
}
