//! JSON interchange: space, covering, operator, cover and certificate files.
//!
//! All files are UTF-8 JSON without comments; complex numbers are `[re, im]`
//! pairs. Loading always goes through the domain constructors, so malformed
//! data is rejected with the same validation errors as programmatic
//! construction.

use crate::covering::{BranchedCovering, CayleyTable, CoveringError, GroupAction};
use crate::dimension::DimensionCertificate;
use crate::operators::{CMat, ControlledObject, ControlledOperator, OperatorError};
use crate::space::{BigFamily, CoreError, CoverFamily, Entourage, FiniteCoarseSpace, NamedEntourage, PointId};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Covering(#[from] CoveringError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("operator file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntourageFile {
    pub name: String,
    pub pairs: Vec<(PointId, PointId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub points: Vec<PointId>,
    pub entourages: Vec<EntourageFile>,
}

impl SpaceFile {
    pub fn from_space(space: &FiniteCoarseSpace) -> Self {
        SpaceFile {
            points: space.points().to_vec(),
            entourages: space
                .entourages()
                .iter()
                .map(|e| EntourageFile {
                    name: e.name.clone(),
                    pairs: e.pairs.iter().cloned().collect(),
                })
                .collect(),
        }
    }

    pub fn into_space(self) -> Result<FiniteCoarseSpace, IoError> {
        let entourages = self
            .entourages
            .into_iter()
            .map(|e| NamedEntourage { name: e.name, pairs: Entourage::from_pairs(e.pairs) })
            .collect();
        Ok(FiniteCoarseSpace::new(self.points, entourages)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionFile {
    pub pairs: Vec<(PointId, PointId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigFamilyMemberFile {
    pub index: i64,
    pub subset: Vec<PointId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckActionFile {
    pub table: CayleyTable,
    pub action: Vec<DeckElementFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckElementFile {
    pub element: usize,
    pub map: Vec<(PointId, PointId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringFile {
    pub source: SpaceFile,
    pub target: SpaceFile,
    pub f: Vec<(PointId, PointId)>,
    pub connection: ConnectionFile,
    pub big_family: Vec<BigFamilyMemberFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deck: Option<DeckActionFile>,
}

impl CoveringFile {
    pub fn from_covering(cov: &BranchedCovering) -> Self {
        CoveringFile {
            source: SpaceFile::from_space(cov.source()),
            target: SpaceFile::from_space(cov.target()),
            f: cov.map().iter().map(|(&x, &y)| (x, y)).collect(),
            connection: ConnectionFile { pairs: cov.connection().iter().cloned().collect() },
            big_family: cov
                .big_family()
                .members()
                .iter()
                .map(|(k, z)| BigFamilyMemberFile { index: *k, subset: z.iter().cloned().collect() })
                .collect(),
            deck: cov.deck().map(|deck| DeckActionFile {
                table: deck.table.clone(),
                action: deck
                    .action
                    .iter()
                    .map(|(&g, perm)| DeckElementFile {
                        element: g,
                        map: perm.iter().map(|(&a, &b)| (a, b)).collect(),
                    })
                    .collect(),
            }),
        }
    }

    pub fn into_covering(self) -> Result<BranchedCovering, IoError> {
        let source = self.source.into_space()?;
        let target = self.target.into_space()?;
        let f: BTreeMap<PointId, PointId> = self.f.into_iter().collect();
        let connection = Entourage::from_pairs(self.connection.pairs);
        let members = self
            .big_family
            .into_iter()
            .map(|m| (m.index, m.subset.into_iter().collect::<BTreeSet<_>>()))
            .collect();
        let big_family = BigFamily::new(members)?;
        let deck = self.deck.map(|d| GroupAction {
            table: d.table,
            action: d
                .action
                .into_iter()
                .map(|e| (e.element, e.map.into_iter().collect()))
                .collect(),
        });
        Ok(BranchedCovering::new(source, target, f, connection, big_family, deck)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFile {
    pub row: PointId,
    pub col: PointId,
    /// row-major complex entries as `[re, im]`
    pub matrix: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFile {
    pub space: SpaceFile,
    pub domain_dims: BTreeMap<String, usize>,
    pub codomain_dims: BTreeMap<String, usize>,
    pub blocks: Vec<BlockFile>,
}

fn dims_to_file(dims: &BTreeMap<PointId, usize>) -> BTreeMap<String, usize> {
    dims.iter().map(|(&p, &d)| (p.to_string(), d)).collect()
}

fn dims_from_file(dims: &BTreeMap<String, usize>) -> Result<BTreeMap<PointId, usize>, IoError> {
    dims.iter()
        .map(|(k, &d)| {
            k.parse::<PointId>()
                .map(|p| (p, d))
                .map_err(|_| IoError::Malformed(format!("bad point id {k:?}")))
        })
        .collect()
}

impl OperatorFile {
    pub fn from_operator(op: &ControlledOperator) -> Self {
        OperatorFile {
            space: SpaceFile::from_space(&op.domain.space),
            domain_dims: dims_to_file(&op.domain.dims),
            codomain_dims: dims_to_file(&op.codomain.dims),
            blocks: op
                .blocks()
                .iter()
                .map(|(&(r, c), m)| BlockFile {
                    row: r,
                    col: c,
                    matrix: (0..m.nrows())
                        .map(|i| (0..m.ncols()).map(|j| (m[(i, j)].re, m[(i, j)].im)).collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn into_operator(self) -> Result<ControlledOperator, IoError> {
        let space = self.space.into_space()?;
        let domain = ControlledObject::new(space.clone(), dims_from_file(&self.domain_dims)?);
        let codomain = ControlledObject::new(space, dims_from_file(&self.codomain_dims)?);
        let mut blocks = BTreeMap::new();
        for b in self.blocks {
            let rows = b.matrix.len();
            let cols = b.matrix.first().map(Vec::len).unwrap_or(0);
            if b.matrix.iter().any(|r| r.len() != cols) {
                return Err(IoError::Malformed(format!(
                    "ragged matrix at block ({}, {})",
                    b.row, b.col
                )));
            }
            let m = CMat::from_fn(rows, cols, |i, j| {
                let (re, im) = b.matrix[i][j];
                Complex64::new(re, im)
            });
            blocks.insert((b.row, b.col), m);
        }
        Ok(ControlledOperator::new(domain, codomain, blocks)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub scale: Vec<(PointId, PointId)>,
    pub parts: Vec<Vec<PointId>>,
    pub multiplicity: usize,
    pub dimension: usize,
}

impl CertificateFile {
    pub fn from_certificate(cert: &DimensionCertificate) -> Self {
        CertificateFile {
            scale: cert.scale.iter().cloned().collect(),
            parts: cert
                .cover
                .parts()
                .iter()
                .map(|p| p.iter().cloned().collect())
                .collect(),
            multiplicity: cert.multiplicity(),
            dimension: cert.dimension,
        }
    }

    pub fn into_certificate(self) -> DimensionCertificate {
        let cover =
            CoverFamily::new(self.parts.into_iter().map(|p| p.into_iter().collect()).collect());
        DimensionCertificate::new(Entourage::from_pairs(self.scale), cover)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverFile {
    pub parts: Vec<Vec<PointId>>,
}

impl CoverFile {
    pub fn from_cover(cover: &CoverFamily) -> Self {
        CoverFile { parts: cover.parts().iter().map(|p| p.iter().cloned().collect()).collect() }
    }

    pub fn into_cover(self) -> CoverFamily {
        CoverFamily::new(self.parts.into_iter().map(|p| p.into_iter().collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub points: Vec<PointId>,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_space(path: &Path) -> Result<FiniteCoarseSpace, IoError> {
    load_json::<SpaceFile>(path)?.into_space()
}

pub fn save_space(path: &Path, space: &FiniteCoarseSpace) -> Result<(), IoError> {
    save_json(path, &SpaceFile::from_space(space))
}

pub fn load_covering(path: &Path) -> Result<BranchedCovering, IoError> {
    load_json::<CoveringFile>(path)?.into_covering()
}

pub fn save_covering(path: &Path, cov: &BranchedCovering) -> Result<(), IoError> {
    save_json(path, &CoveringFile::from_covering(cov))
}

pub fn load_operator(path: &Path) -> Result<ControlledOperator, IoError> {
    load_json::<OperatorFile>(path)?.into_operator()
}

pub fn save_operator(path: &Path, op: &ControlledOperator) -> Result<(), IoError> {
    save_json(path, &OperatorFile::from_operator(op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::CayleyTable;
    use crate::space::BigFamily;

    fn sheet(m: u32, n: u32) -> BranchedCovering {
        let source = FiniteCoarseSpace::cycle(m * n, &[1]);
        let target = FiniteCoarseSpace::cycle(n, &[1]);
        let f = (0..m * n).map(|x| (x, x % n)).collect();
        let p = FiniteCoarseSpace::cycle_entourage(0, m * n, (n - 1) / 2);
        let deck = GroupAction {
            table: CayleyTable::cyclic(m as usize),
            action: (0..m as usize)
                .map(|g| (g, (0..m * n).map(|x| (x, (x + g as u32 * n) % (m * n))).collect()))
                .collect(),
        };
        BranchedCovering::new(source, target, f, p, BigFamily::empty(), Some(deck)).unwrap()
    }

    #[test]
    fn space_file_roundtrip() {
        let space = FiniteCoarseSpace::cycle(7, &[1, 2]);
        let file = SpaceFile::from_space(&space);
        let json = serde_json::to_string(&file).unwrap();
        let back: SpaceFile = serde_json::from_str(&json).unwrap();
        assert_eq!(file, back);
        assert_eq!(back.into_space().unwrap(), space);
    }

    #[test]
    fn covering_file_roundtrip() {
        let cov = sheet(3, 5);
        let file = CoveringFile::from_covering(&cov);
        let json = serde_json::to_string_pretty(&file).unwrap();
        let back: CoveringFile = serde_json::from_str(&json).unwrap();
        assert_eq!(file, back);
        let cov2 = back.into_covering().unwrap();
        assert_eq!(&cov2, &cov);
    }

    #[test]
    fn operator_file_roundtrip() {
        let space = FiniteCoarseSpace::cycle(5, &[1]);
        let obj = ControlledObject::constant(&space, 2);
        let mut blocks = BTreeMap::new();
        blocks.insert(
            (1u32, 0u32),
            CMat::from_fn(2, 2, |i, j| Complex64::new(i as f64, j as f64 - 0.5)),
        );
        let op = ControlledOperator::new(obj.clone(), obj, blocks).unwrap();
        let file = OperatorFile::from_operator(&op);
        let json = serde_json::to_string(&file).unwrap();
        let back: OperatorFile = serde_json::from_str(&json).unwrap();
        assert_eq!(file, back);
        let op2 = back.into_operator().unwrap();
        assert_eq!(op2.max_block_deviation(&op), 0.0);
        assert_eq!(op2.domain.dims, op.domain.dims);
    }

    #[test]
    fn malformed_covering_is_rejected() {
        let cov = sheet(2, 5);
        let mut file = CoveringFile::from_covering(&cov);
        file.f.pop(); // drop one point: f no longer total
        assert!(file.into_covering().is_err());
    }

    #[test]
    fn emitted_json_is_deterministic() {
        let cov = sheet(3, 5);
        let a = serde_json::to_string_pretty(&CoveringFile::from_covering(&cov)).unwrap();
        let b = serde_json::to_string_pretty(&CoveringFile::from_covering(&cov)).unwrap();
        assert_eq!(a, b);
    }
}
