use std::fs;
use std::path::Path;

use super::Arm;
use crate::embedding::{read_key_values, EmbeddingTable, ModelKind};
use crate::error::{Error, Result};
use crate::eval::Scope;
use crate::fed::{ClientState, ServerState};
use crate::kg::Triple;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSnapshot {
    pub id: usize,
    pub relations: Vec<usize>,
    pub index_map: Vec<usize>,
    pub table: EmbeddingTable,
}

impl ClientSnapshot {
    /// Rebuilds a trainable client over `train` from the stored rows.
    pub fn to_client(&self, train: Vec<Triple>) -> Result<ClientState> {
        ClientState::from_parts(
            self.id,
            self.relations.clone(),
            train,
            self.index_map.clone(),
            self.table.clone(),
        )
    }
}

/// Server entity table plus every client's table, tagged with where it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    pub arm: Arm,
    pub round: usize,
    pub seed: u64,
    pub kind: ModelKind,
    pub server: Matrix,
    pub clients: Vec<ClientSnapshot>,
}

impl ModelSnapshot {
    pub fn capture(
        arm: Arm,
        seed: u64,
        server: &ServerState,
        clients: &[ClientState],
    ) -> Result<Self> {
        let kind = clients
            .first()
            .map(|c| c.table.kind)
            .ok_or_else(|| Error::invalid("snapshot needs at least one client"))?;
        let snap = Self {
            arm,
            round: server.round,
            seed,
            kind,
            server: server.entities.clone(),
            clients: clients
                .iter()
                .map(|c| ClientSnapshot {
                    id: c.id,
                    relations: c.relations.clone(),
                    index_map: c.index_map.clone(),
                    table: c.table.clone(),
                })
                .collect(),
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.server.cols();
        for (i, c) in self.clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::invalid(format!(
                    "client at position {i} has id {}",
                    c.id
                )));
            }
            if c.table.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.table.dim(),
                });
            }
            if c.table.kind != self.kind {
                return Err(Error::invalid(format!(
                    "client {i} stores {}, not {}",
                    c.table.kind, self.kind
                )));
            }
            if let Some(&g) = c.index_map.iter().find(|&&g| g >= self.server.rows()) {
                return Err(Error::IndexOutOfRange {
                    index: g,
                    len: self.server.rows(),
                });
            }
        }
        Ok(())
    }

    pub fn relation_count(&self) -> usize {
        self.clients.first().map_or(0, |c| c.table.relation_count())
    }

    /// Owning client of every relation id.
    pub fn relation_owner(&self) -> Result<Vec<usize>> {
        let mut owner = vec![usize::MAX; self.relation_count()];
        for c in &self.clients {
            for &r in &c.relations {
                let slot = owner.get_mut(r).ok_or(Error::IndexOutOfRange {
                    index: r,
                    len: self.relation_count(),
                })?;
                *slot = c.id;
            }
        }
        Ok(owner)
    }

    /// Relation rows taken from each relation's owner.
    pub fn relation_table(&self) -> Result<Matrix> {
        let owner = self.relation_owner()?;
        let mut rel = Matrix::zeros(self.relation_count(), self.server.cols());
        for (r, &c) in owner.iter().enumerate() {
            if let Some(client) = self.clients.get(c) {
                rel.row_mut(r)
                    .copy_from_slice(client.table.relations.row(r));
            }
        }
        Ok(rel)
    }

    /// Full-vocabulary table per client for the given scope.
    pub fn scope_tables(&self, scope: Scope) -> Result<Vec<EmbeddingTable>> {
        self.clients
            .iter()
            .map(|c| {
                let mut entities = self.server.clone();
                if scope == Scope::Local {
                    for (i, &g) in c.index_map.iter().enumerate() {
                        entities.row_mut(g).copy_from_slice(c.table.entities.row(i));
                    }
                }
                EmbeddingTable::new(self.kind, entities, c.table.relations.clone())
            })
            .collect()
    }

    pub fn server_state(&self) -> ServerState {
        ServerState {
            entities: self.server.clone(),
            round: self.round,
        }
    }

    /// `provenance`, `server/` and one `client_<k>/` per client.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("provenance");
        let text = format!(
            "arm={}\nround={}\nseed={}\nclients={}\n",
            self.arm,
            self.round,
            self.seed,
            self.clients.len()
        );
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        EmbeddingTable::new(self.kind, self.server.clone(), self.relation_table()?)?
            .write(&dir.join("server"))?;
        for c in &self.clients {
            let cdir = dir.join(format!("client_{}", c.id));
            c.table.write(&cdir)?;
            write_ids(&cdir.join("index_map.txt"), &c.index_map, "\n")?;
            write_ids(&cdir.join("owned_relations.txt"), &c.relations, " ")?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("provenance");
        if !path.exists() {
            return Err(Error::MissingSnapshot(dir.display().to_string()));
        }
        let kv = read_key_values(&path)?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k).map(String::as_str).ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: 0,
                message: format!("missing key {k}"),
            })
        };
        let bad = |k: &str| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("bad value for {k}"),
        };
        let arm: Arm = get("arm")?.parse()?;
        let round: usize = get("round")?.parse().map_err(|_| bad("round"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
        let n: usize = get("clients")?.parse().map_err(|_| bad("clients"))?;
        let server = EmbeddingTable::read(&dir.join("server"))?;
        let clients = (0..n)
            .map(|id| {
                let cdir = dir.join(format!("client_{id}"));
                Ok(ClientSnapshot {
                    id,
                    relations: read_ids(&cdir.join("owned_relations.txt"))?,
                    index_map: read_ids(&cdir.join("index_map.txt"))?,
                    table: EmbeddingTable::read(&cdir)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let snap = Self {
            arm,
            round,
            seed,
            kind: server.kind,
            server: server.entities,
            clients,
        };
        snap.validate()?;
        Ok(snap)
    }
}

fn write_ids(path: &Path, ids: &[usize], sep: &str) -> Result<()> {
    let mut text = ids
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(sep);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_ids(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("not an id: {tok:?}"),
            })
        })
        .collect()
}
