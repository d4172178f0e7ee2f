//! Merged-token representations.
//!
//! Member order matters only for tie-breaking: the pipeline passes the group
//! root (destination) first, then the remaining members in spatial order.

use crate::config::Representation;
use crate::error::{Error, Result};

fn common_dim(members: &[&[f32]]) -> Result<usize> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidSpec("merge group must have at least one member".into()))?;
    let d = first.len();
    for m in &members[1..] {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.len(),
            });
        }
    }
    Ok(d)
}

/// Per channel, the member entry with the largest absolute value, sign kept.
/// Ties go to the earliest member.
pub fn merge_max_per_dim(members: &[&[f32]]) -> Result<Vec<f32>> {
    common_dim(members)?;
    let mut out = members[0].to_vec();
    for m in &members[1..] {
        for (o, &v) in out.iter_mut().zip(m.iter()) {
            if v.abs() > o.abs() {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Size-weighted mean and the combined size.
pub fn merge_weighted_average(members: &[&[f32]], sizes: &[u32]) -> Result<(Vec<f32>, u32)> {
    let d = common_dim(members)?;
    if sizes.len() != members.len() {
        return Err(Error::DimensionMismatch {
            expected: members.len(),
            found: sizes.len(),
        });
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidSpec("token sizes must be at least 1".into()));
    }
    if members.len() == 1 {
        return Ok((members[0].to_vec(), sizes[0]));
    }
    let total: u64 = sizes.iter().map(|&s| s as u64).sum();
    let mut acc = vec![0.0f64; d];
    for (m, &s) in members.iter().zip(sizes) {
        for (a, &v) in acc.iter_mut().zip(m.iter()) {
            *a += s as f64 * v as f64;
        }
    }
    let out = acc.into_iter().map(|a| (a / total as f64) as f32).collect();
    Ok((out, total as u32))
}

/// The whole member with the largest L1 norm, earliest member on ties.
pub fn merge_max_vector(members: &[&[f32]]) -> Result<Vec<f32>> {
    common_dim(members)?;
    let l1 = |m: &[f32]| m.iter().map(|v| v.abs() as f64).sum::<f64>();
    let mut best = 0;
    let mut best_norm = l1(members[0]);
    for (j, m) in members.iter().enumerate().skip(1) {
        let n = l1(m);
        if n > best_norm {
            best = j;
            best_norm = n;
        }
    }
    Ok(members[best].to_vec())
}

impl Representation {
    /// Collapses a group. `sizes` is consulted only by the weighted average,
    /// which is also the only representation that returns a size.
    pub fn merge(self, members: &[&[f32]], sizes: Option<&[u32]>) -> Result<(Vec<f32>, Option<u32>)> {
        match self {
            Representation::MaxPerDim => Ok((merge_max_per_dim(members)?, None)),
            Representation::MaxVector => Ok((merge_max_vector(members)?, None)),
            Representation::WeightedAverage => {
                let ones;
                let sizes = match sizes {
                    Some(s) => s,
                    None => {
                        ones = vec![1; members.len()];
                        &ones
                    }
                };
                let (v, s) = merge_weighted_average(members, sizes)?;
                Ok((v, Some(s)))
            }
        }
    }
}
