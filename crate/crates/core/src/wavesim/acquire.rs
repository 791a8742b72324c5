//! Series of acquisitions over probe positions and push locations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_noise, simulate, SimConfig};
use crate::error::{Error, Result};
use crate::field::{DisplacementSequence, ElasticityMap};
use crate::geom::{GridGeom, PushDescriptor};
use crate::swd::{DatasetRecord, Label, RecordMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionPlan {
    pub positions: usize,
    pub pushes: usize,
    /// Lateral push centers (px); evenly spaced across the grid when absent.
    pub push_centers: Option<Vec<usize>>,
}

impl Default for AcquisitionPlan {
    fn default() -> Self {
        Self {
            positions: 1,
            pushes: 7,
            push_centers: None,
        }
    }
}

impl AcquisitionPlan {
    pub fn centers(&self, geom: &GridGeom) -> Result<Vec<usize>> {
        match &self.push_centers {
            Some(c) if c.len() != self.pushes => Err(Error::invalid(
                "push_centers",
                format!("{} centers for {} pushes", c.len(), self.pushes),
            )),
            Some(c) => Ok(c.clone()),
            None => Ok(push_centers(geom, self.pushes)),
        }
    }
}

/// `n` push centers splitting the lateral extent into `n + 1` equal parts.
pub fn push_centers(geom: &GridGeom, n: usize) -> Vec<usize> {
    (1..=n)
        .map(|k| ((geom.lateral_px * k) as f64 / (n + 1) as f64).round() as usize)
        .collect()
}

fn noise_seed(base: u64, position: usize, push: usize) -> u64 {
    let mut z = base ^ ((position as u64) << 32 | push as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates every push once and derives one noisy record per probe
/// position. Positions differ only by their noise realization. Records are
/// ordered by position, then push; pushes are numbered from 1.
pub fn acquire(
    map: &ElasticityMap,
    base: &SimConfig,
    plan: &AcquisitionPlan,
    phantom_id: &str,
    concentration: u32,
    label: &Label,
) -> Result<Vec<DatasetRecord>> {
    if plan.positions == 0 || plan.pushes == 0 {
        return Err(Error::invalid("positions", "positions and pushes must be >= 1"));
    }
    let centers = plan.centers(&base.geom)?;
    let clean: Vec<DisplacementSequence> = centers
        .par_iter()
        .map(|&c| {
            let cfg = SimConfig {
                push: PushDescriptor {
                    lateral_center_px: c,
                    ..base.push
                },
                noise_std: 0.0,
                ..base.clone()
            };
            simulate(map, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(plan.positions * centers.len());
    for position in 0..plan.positions {
        for (k, seq) in clean.iter().enumerate() {
            let mut data = seq.data().to_vec();
            add_noise(&mut data, base.noise_std, noise_seed(base.seed, position, k));
            out.push(DatasetRecord {
                sequence: seq.with_data(data)?,
                label: label.clone(),
                meta: RecordMeta {
                    phantom_id: phantom_id.to_string(),
                    concentration,
                    position: position as u32,
                    push: k as u32 + 1,
                },
            });
        }
    }
    Ok(out)
}
