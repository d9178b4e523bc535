//! Embedding tables, scoring functions, and negative sampling.

mod sampling;
mod score;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, stream};

pub use sampling::{sample_negatives, sample_negatives_into, Corrupted, NegativeBatch};
pub use score::{grad_score, score_complex, score_transe, ModelKind, Norm, ScoreGrad, Scorer};

/// Entity and relation vectors of one model. ComplEx rows are stored as
/// `[real half ‖ imaginary half]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub kind: ModelKind,
    pub entities: Matrix,
    pub relations: Matrix,
}

impl EmbeddingTable {
    pub fn new(kind: ModelKind, entities: Matrix, relations: Matrix) -> Result<Self> {
        let dim = entities.cols();
        if relations.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: relations.cols(),
            });
        }
        validate_dim(kind, dim)?;
        Ok(Self {
            kind,
            entities,
            relations,
        })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }

    /// Writes `<dir>/manifest`, `<dir>/entities.txt`, `<dir>/relations.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = format!(
            "model_kind={}\ndim={}\nentity_count={}\nrelation_count={}\n",
            self.kind,
            self.dim(),
            self.entity_count(),
            self.relation_count()
        );
        let path = dir.join("manifest");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        self.entities.write_text(&dir.join("entities.txt"))?;
        self.relations.write_text(&dir.join("relations.txt"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest");
        let kv = read_key_values(&path)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: 0,
                    message: format!("missing key {k}"),
                })
                .map(String::as_str)
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Parse {
                path: path.clone(),
                line: 0,
                message: format!("bad value for {k}"),
            })
        };
        let kind: ModelKind = get("model_kind")?.parse()?;
        let dim = num("dim")?;
        let entities = Matrix::read_text(&dir.join("entities.txt"), dim)?;
        let relations = Matrix::read_text(&dir.join("relations.txt"), dim)?;
        for (what, want, got) in [
            ("entity_count", num("entity_count")?, entities.rows()),
            ("relation_count", num("relation_count")?, relations.rows()),
        ] {
            if want != got {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: 0,
                    message: format!("{what}={want} but matrix has {got} rows"),
                });
            }
        }
        Self::new(kind, entities, relations)
    }
}

fn validate_dim(kind: ModelKind, dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    if kind == ModelKind::ComplEx && !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "ComplEx needs an even dimension, got {dim}"
        )));
    }
    Ok(())
}

/// Reads a `key=value` per line file into an ordered map.
pub(crate) fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected key=value".into(),
        })?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// Uniform initialization in `[-6/√d, 6/√d]`.
pub fn init_embeddings(
    kind: ModelKind,
    entity_count: usize,
    relation_count: usize,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    validate_dim(kind, dim)?;
    if entity_count == 0 || relation_count == 0 {
        return Err(Error::invalid(
            "entity and relation counts must be positive",
        ));
    }
    let bound = 6.0 / (dim as f64).sqrt();
    let mut rng = rng::derive(seed, &[stream::INIT]);
    let mut fill = |rows: usize| {
        let data = (0..rows * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Matrix::from_vec(rows, dim, data)
    };
    let entities = fill(entity_count)?;
    let relations = fill(relation_count)?;
    EmbeddingTable::new(kind, entities, relations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_embeddings(ModelKind::TransE, 30, 4, 16, 7).unwrap();
        let b = init_embeddings(ModelKind::TransE, 30, 4, 16, 7).unwrap();
        assert_eq!(a, b);
        let bound = 6.0 / 4.0;
        assert!(a
            .entities
            .as_slice()
            .iter()
            .chain(a.relations.as_slice())
            .all(|v| v.abs() <= bound));
        assert_ne!(a, init_embeddings(ModelKind::TransE, 30, 4, 16, 8).unwrap());
    }

    #[test]
    fn complex_rows_are_split_halves() {
        let t = init_embeddings(ModelKind::ComplEx, 2, 1, 4, 1).unwrap();
        let row = t.entities.row(0);
        // [re0, re1, im0, im1] scores like the two complex numbers re_k + i·im_k
        let one = [1.0, 0.0, 0.0, 0.0];
        let s = score_complex(row, &one, &one).unwrap();
        assert_eq!(s, row[0]);
        assert!(init_embeddings(ModelKind::ComplEx, 2, 1, 3, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = init_embeddings(ModelKind::ComplEx, 5, 2, 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.write(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest")).unwrap();
        assert_eq!(
            manifest,
            "model_kind=ComplEx\ndim=4\nentity_count=5\nrelation_count=2\n"
        );
        let back = EmbeddingTable::read(dir.path()).unwrap();
        assert_eq!(back.kind, ModelKind::ComplEx);
        for (a, b) in t.entities.as_slice().iter().zip(back.entities.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
