//! JSON form of a domain: `{grid, inside, core}` with masks run-length encoded
//! as `[row, start, len]` triples in row-major order.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GridDomain, GridSpec};
use crate::error::{Error, Result};

pub type RleRun = [usize; 3];

pub fn encode_rle(grid: &GridSpec, mask: &[bool]) -> Vec<RleRun> {
    let n = grid.cells_per_side();
    let mut runs = Vec::new();
    for row in 0..n {
        let mut i = 0;
        while i < n {
            if mask[grid.cell_index(i, row)] {
                let start = i;
                while i < n && mask[grid.cell_index(i, row)] {
                    i += 1;
                }
                runs.push([row, start, i - start]);
            } else {
                i += 1;
            }
        }
    }
    runs
}

pub fn decode_rle(grid: &GridSpec, runs: &[RleRun]) -> Result<Vec<bool>> {
    let n = grid.cells_per_side();
    let mut mask = vec![false; grid.cell_count()];
    for &[row, start, len] in runs {
        if row >= n || len == 0 || start + len > n {
            return Err(Error::Serialization(format!("run [{row}, {start}, {len}] out of range")));
        }
        for i in start..start + len {
            mask[grid.cell_index(i, row)] = true;
        }
    }
    Ok(mask)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainJson {
    grid: GridSpec,
    inside: Vec<RleRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    core: Option<Vec<RleRun>>,
}

impl Serialize for GridDomain {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DomainJson {
            grid: self.grid,
            inside: encode_rle(&self.grid, &self.inside),
            core: self.core.as_ref().map(|c| encode_rle(&self.grid, c)),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridDomain {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DomainJson::deserialize(d)?;
        let build = || -> Result<GridDomain> {
            let inside = decode_rle(&raw.grid, &raw.inside)?;
            let dom = GridDomain::from_mask(raw.grid, inside)?;
            match &raw.core {
                Some(runs) => dom.with_core(decode_rle(&raw.grid, runs)?),
                None => Ok(dom),
            }
        };
        build().map_err(D::Error::custom)
    }
}
