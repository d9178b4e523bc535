use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{write_triples, KnowledgeGraph, Triple, Vocab};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Shuffles relation ids under `seed` and deals them round-robin. Each inner
/// list is sorted.
pub fn assign_relations(
    relation_count: usize,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::invalid("client count must be positive"));
    }
    if n_clients > relation_count {
        return Err(Error::TooManyClients {
            clients: n_clients,
            relations: relation_count,
        });
    }
    let mut order: Vec<usize> = (0..relation_count).collect();
    order.shuffle(&mut rng::derive(seed, &[stream::PARTITION]));
    let mut owned = vec![Vec::new(); n_clients];
    for (i, r) in order.into_iter().enumerate() {
        owned[i % n_clients].push(r);
    }
    owned.iter_mut().for_each(|v| v.sort_unstable());
    Ok(owned)
}

fn owner_table(owned: &[Vec<usize>], relation_count: usize) -> Vec<usize> {
    let mut owner = vec![usize::MAX; relation_count];
    for (c, rels) in owned.iter().enumerate() {
        for &r in rels {
            owner[r] = c;
        }
    }
    owner
}

/// Splits `kg` into one graph per client by relation ownership. Every client
/// keeps the full entity and relation vocabularies.
pub fn partition_by_relation(
    kg: &KnowledgeGraph,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<KnowledgeGraph>> {
    let owned = assign_relations(kg.relation_count(), n_clients, seed)?;
    let owner = owner_table(&owned, kg.relation_count());
    let mut parts = vec![Vec::new(); n_clients];
    for t in &kg.triples {
        parts[owner[t.relation]].push(*t);
    }
    Ok(parts.into_iter().map(|ts| kg.with_triples(ts)).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientData {
    pub relations: Vec<usize>,
    pub train: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Relation-partitioned dataset: shared vocabularies plus per-client
/// train/test triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub entities: Vocab,
    pub relations: Vocab,
    pub clients: Vec<ClientData>,
}

impl Partition {
    pub fn build(
        train: &KnowledgeGraph,
        test: &[Triple],
        n_clients: usize,
        seed: u64,
    ) -> Result<Self> {
        let nr = train.relation_count();
        let owned = assign_relations(nr, n_clients, seed)?;
        let owner = owner_table(&owned, nr);
        let mut clients: Vec<ClientData> = owned
            .into_iter()
            .map(|relations| ClientData {
                relations,
                ..Default::default()
            })
            .collect();
        for t in &train.triples {
            clients[owner[t.relation]].train.push(*t);
        }
        for t in test {
            let c = *owner.get(t.relation).ok_or(Error::IndexOutOfRange {
                index: t.relation,
                len: nr,
            })?;
            clients[c].test.push(*t);
        }
        Ok(Self {
            entities: train.entities.clone(),
            relations: train.relations.clone(),
            clients,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn graph(&self) -> KnowledgeGraph {
        KnowledgeGraph {
            triples: Vec::new(),
            entities: self.entities.clone(),
            relations: self.relations.clone(),
        }
    }

    /// Client that owns each relation id.
    pub fn relation_owner(&self) -> Vec<usize> {
        let owned: Vec<Vec<usize>> = self.clients.iter().map(|c| c.relations.clone()).collect();
        owner_table(&owned, self.relation_count())
    }

    pub fn all_triples(&self) -> Vec<Triple> {
        self.clients
            .iter()
            .flat_map(|c| c.train.iter().chain(&c.test))
            .copied()
            .collect()
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.clients.iter().enumerate() {
            let ids: Vec<String> = c.relations.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "client_{i}\t{}", ids.join(" "));
        }
        s
    }

    /// Writes `entities.txt`, `relations.txt`, `client_<k>.txt`,
    /// `client_<k>.test.txt`, and `manifest` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.entities.write(&dir.join("entities.txt"))?;
        self.relations.write(&dir.join("relations.txt"))?;
        let kg = self.graph();
        for (i, c) in self.clients.iter().enumerate() {
            write_triples(&dir.join(format!("client_{i}.txt")), &kg, &c.train)?;
            write_triples(&dir.join(format!("client_{i}.test.txt")), &kg, &c.test)?;
        }
        let manifest = dir.join("manifest");
        fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let entities = Vocab::read(&dir.join("entities.txt"))?;
        let relations = Vocab::read(&dir.join("relations.txt"))?;
        let manifest_path = dir.join("manifest");
        let manifest =
            fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let kg = KnowledgeGraph {
            triples: Vec::new(),
            entities,
            relations,
        };
        let mut clients = Vec::new();
        for (lineno, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: manifest_path.clone(),
                line: lineno + 1,
                message,
            };
            let (name, ids) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `client_<k><TAB><relation ids>`".into()))?;
            if name != format!("client_{}", clients.len()) {
                return Err(parse_err(format!("unexpected client name {name:?}")));
            }
            let relations = ids
                .split_whitespace()
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(format!("bad relation id {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let read = |file: String| -> Result<Vec<Triple>> {
                let path = dir.join(file);
                if !path.exists() {
                    return Ok(Vec::new());
                }
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                kg.resolve_str(&text, &path)
            };
            let i = clients.len();
            clients.push(ClientData {
                relations,
                train: read(format!("client_{i}.txt"))?,
                test: read(format!("client_{i}.test.txt"))?,
            });
        }
        if clients.is_empty() {
            return Err(Error::invalid(format!(
                "{}: no clients listed",
                manifest_path.display()
            )));
        }
        Ok(Self {
            entities: kg.entities,
            relations: kg.relations,
            clients,
        })
    }
}
