//! Graph bundle files.
//!
//! Everything [`GraphBundle::build`] produces, so a training run can skip
//! construction. Little-endian layout:
//!
//! ```text
//! magic        8 bytes "MGCCFGRB"
//! version      u32     1
//! fingerprint  u64     dataset fingerprint
//! users, items u64, u64
//! config       u64 length + UTF-8 JSON (GraphConfig)
//! bipartite    user lists, then item lists
//! user graph   threshold f64, target f64, unreachable u8, lists
//! item graph   same
//! user table   sampled table (users -> items)
//! item table   sampled table (items -> users)
//!
//! lists  = u64 count, then per list: u64 length + u32 indices
//! table  = u64 nodes, u64 sets, u64 hops + u64 sizes,
//!          u8 has-neighbours flag per node, u64 length + u32 data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_bipartite, build_similarity_graph, presample, Axis, BipartiteGraph,
    SampledNeighborTable, SimilarityConfig, SimilarityGraph,
};
use crate::binio::{BinReader, BinWriter};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 8] = b"MGCCFGRB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub target_avg_degree: f64,
    pub max_mge_degree: usize,
    pub exact_cutoff: usize,
    pub estimate_sample: usize,
    /// Per-hop sample sizes, hop 1 (the root's own neighbours) first.
    pub sample_sizes: Vec<usize>,
    pub num_presample_sets: usize,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            target_avg_degree: 10.0,
            max_mge_degree: 64,
            exact_cutoff: 20_000,
            estimate_sample: 2_000,
            sample_sizes: vec![15, 10],
            num_presample_sets: 30,
            seed: 0,
        }
    }
}

impl GraphConfig {
    pub fn similarity(&self, axis: Axis) -> SimilarityConfig {
        SimilarityConfig {
            target_avg_degree: self.target_avg_degree,
            max_degree: self.max_mge_degree,
            exact_cutoff: self.exact_cutoff,
            estimate_sample: self.estimate_sample,
            seed: self.seed ^ if axis == Axis::Users { 0x5553 } else { 0x4954 },
        }
    }
}

/// All graph structure derived from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub config: GraphConfig,
    pub dataset_fingerprint: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub bipartite: BipartiteGraph,
    pub user_graph: SimilarityGraph,
    pub item_graph: SimilarityGraph,
    /// Users' sampled item neighbours.
    pub user_samples: SampledNeighborTable,
    /// Items' sampled user neighbours.
    pub item_samples: SampledNeighborTable,
}

impl GraphBundle {
    pub fn build(ds: &InteractionDataset, config: &GraphConfig) -> Result<Self> {
        let bipartite = build_bipartite(ds);
        let user_graph = build_similarity_graph(ds, Axis::Users, &config.similarity(Axis::Users))?;
        let item_graph = build_similarity_graph(ds, Axis::Items, &config.similarity(Axis::Items))?;
        let user_samples = presample(
            &bipartite.user_neighbors,
            &config.sample_sizes,
            config.num_presample_sets,
            config.seed.wrapping_mul(2).wrapping_add(1),
        )?;
        let item_samples = presample(
            &bipartite.item_neighbors,
            &config.sample_sizes,
            config.num_presample_sets,
            config.seed.wrapping_mul(2).wrapping_add(2),
        )?;
        Ok(GraphBundle {
            config: config.clone(),
            dataset_fingerprint: ds.fingerprint(),
            num_users: ds.num_users(),
            num_items: ds.num_items(),
            bipartite,
            user_graph,
            item_graph,
            user_samples,
            item_samples,
        })
    }

    /// Fails unless the bundle was built from `ds`.
    pub fn check_matches(&self, ds: &InteractionDataset) -> Result<()> {
        if self.dataset_fingerprint != ds.fingerprint()
            || self.num_users != ds.num_users()
            || self.num_items != ds.num_items()
        {
            return Err(Error::Config(
                "graph bundle was built from a different dataset snapshot".into(),
            ));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(BUNDLE_MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.dataset_fingerprint)?;
        w.u64(self.num_users as u64)?;
        w.u64(self.num_items as u64)?;
        w.str(&serde_json::to_string(&self.config)?)?;
        write_lists(&mut w, &self.bipartite.user_neighbors)?;
        write_lists(&mut w, &self.bipartite.item_neighbors)?;
        for g in [&self.user_graph, &self.item_graph] {
            w.f64(g.threshold)?;
            w.f64(g.target_avg_degree)?;
            w.u8(u8::from(g.unreachable))?;
            write_lists(&mut w, &g.neighbors)?;
        }
        for t in [&self.user_samples, &self.item_samples] {
            w.u64(t.num_nodes() as u64)?;
            w.u64(t.num_sets() as u64)?;
            w.u64(t.sizes().len() as u64)?;
            for &s in t.sizes() {
                w.u64(s as u64)?;
            }
            for &h in t.has_neighbors() {
                w.u8(u8::from(h))?;
            }
            write_indices(&mut w, t.raw_data())?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = BinReader::new(input);
        if &r.exact::<8>()? != BUNDLE_MAGIC {
            return Err(Error::Format("not a graph bundle".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let dataset_fingerprint = r.u64()?;
        let num_users = r.len(u32::MAX as u64)?;
        let num_items = r.len(u32::MAX as u64)?;
        let config: GraphConfig = serde_json::from_str(&r.str()?)?;
        let bipartite = BipartiteGraph {
            user_neighbors: read_lists(&mut r)?,
            item_neighbors: read_lists(&mut r)?,
        };
        let mut graphs = Vec::with_capacity(2);
        for _ in 0..2 {
            let threshold = r.f64()?;
            let target_avg_degree = r.f64()?;
            let unreachable = r.u8()? != 0;
            graphs.push(SimilarityGraph {
                threshold,
                target_avg_degree,
                unreachable,
                neighbors: read_lists(&mut r)?,
            });
        }
        let mut tables = Vec::with_capacity(2);
        for _ in 0..2 {
            let nodes = r.len(u32::MAX as u64)?;
            let sets = r.len(1 << 20)?;
            let hops = r.len(64)?;
            let sizes = (0..hops).map(|_| r.len(1 << 20)).collect::<Result<Vec<_>>>()?;
            let flags = (0..nodes).map(|_| Ok(r.u8()? != 0)).collect::<Result<Vec<_>>>()?;
            let data = read_indices(&mut r)?;
            tables.push(SampledNeighborTable::from_raw(nodes, sets, sizes, flags, data)?);
        }
        let item_graph = graphs.pop().expect("two graphs");
        let user_graph = graphs.pop().expect("two graphs");
        let item_samples = tables.pop().expect("two tables");
        let user_samples = tables.pop().expect("two tables");
        let bundle = GraphBundle {
            config,
            dataset_fingerprint,
            num_users,
            num_items,
            bipartite,
            user_graph,
            item_graph,
            user_samples,
            item_samples,
        };
        bundle.check_shapes()?;
        Ok(bundle)
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.bipartite.user_neighbors.len() == self.num_users
            && self.bipartite.item_neighbors.len() == self.num_items
            && self.user_graph.num_nodes() == self.num_users
            && self.item_graph.num_nodes() == self.num_items
            && self.user_samples.num_nodes() == self.num_users
            && self.item_samples.num_nodes() == self.num_items;
        if !ok {
            return Err(Error::Format("graph bundle sections disagree on node counts".into()));
        }
        let in_range = |lists: &[Vec<usize>], bound: usize| lists.iter().flatten().all(|&x| x < bound);
        if !(in_range(&self.bipartite.user_neighbors, self.num_items)
            && in_range(&self.bipartite.item_neighbors, self.num_users)
            && in_range(&self.user_graph.neighbors, self.num_users)
            && in_range(&self.item_graph.neighbors, self.num_items)
            && self.user_samples.raw_data().iter().all(|&x| x < self.num_items.max(1))
            && self.item_samples.raw_data().iter().all(|&x| x < self.num_users.max(1)))
        {
            return Err(Error::Format("graph bundle index out of range".into()));
        }
        Ok(())
    }
}

fn to_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("index {x} exceeds u32")))
}

fn write_indices<W: Write>(w: &mut BinWriter<W>, xs: &[usize]) -> Result<()> {
    w.u64(xs.len() as u64)?;
    for &x in xs {
        w.u32(to_u32(x)?)?;
    }
    Ok(())
}

fn read_indices<R: Read>(r: &mut BinReader<R>) -> Result<Vec<usize>> {
    let n = r.len(1 << 36)?;
    (0..n).map(|_| Ok(r.u32()? as usize)).collect()
}

fn write_lists<W: Write>(w: &mut BinWriter<W>, lists: &[Vec<usize>]) -> Result<()> {
    w.u64(lists.len() as u64)?;
    for l in lists {
        write_indices(w, l)?;
    }
    Ok(())
}

fn read_lists<R: Read>(r: &mut BinReader<R>) -> Result<Vec<Vec<usize>>> {
    let n = r.len(u32::MAX as u64)?;
    (0..n).map(|_| read_indices(r)).collect()
}

pub fn write_bundle(path: impl AsRef<Path>, bundle: &GraphBundle) -> Result<()> {
    bundle.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<GraphBundle> {
    GraphBundle::read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{block_dataset, BlockConfig};
    use crate::dataset::{filter_and_index, split, SplitRatios};

    #[test]
    fn bundle_round_trip() {
        let synth = block_dataset(&BlockConfig::small(), 2);
        let ds = split(&filter_and_index(&synth.raw, 3).unwrap(), SplitRatios::default(), 2).unwrap();
        let cfg = GraphConfig {
            num_presample_sets: 4,
            target_avg_degree: 4.0,
            ..Default::default()
        };
        let bundle = GraphBundle::build(&ds, &cfg).unwrap();
        let mut buf = Vec::new();
        bundle.write_to(&mut buf).unwrap();
        let back = GraphBundle::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, bundle);
        back.check_matches(&ds).unwrap();
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
