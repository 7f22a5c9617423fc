//! Partition inspection table.

use std::fmt;

use crate::graph::{dirichlet_label_partition, graph_density, mean_degree, ratio_to_f64, Split};

use super::config::RunConfig;
use super::run::{build_source_graph, partition_spec};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub source: String,
    pub client: usize,
    pub nodes: usize,
    pub train: usize,
    pub class_counts: Vec<usize>,
    /// `None` when the client holds fewer than two nodes.
    pub density: Option<f64>,
    pub mean_degree: Option<f64>,
}

impl PartitionRow {
    pub fn class_proportions(&self) -> Vec<f64> {
        self.class_counts
            .iter()
            .map(|&c| if self.nodes == 0 { 0.0 } else { c as f64 / self.nodes as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub seed: u64,
    pub rows: Vec<PartitionRow>,
    pub warnings: Vec<String>,
}

/// Partitions every source of `cfg` with `seed` (default: the first configured seed).
pub fn partition_report(cfg: &RunConfig, seed: Option<u64>) -> Result<PartitionReport, HarnessError> {
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (si, src) in cfg.sources.iter().enumerate() {
        let g = build_source_graph(cfg, si, seed)?;
        let p = dirichlet_label_partition(&g, &partition_spec(cfg, si, seed))?;
        for w in &p.warnings {
            warnings.push(format!("source {}: {w:?}", src.name));
        }
        for cg in &p.clients {
            let mut class_counts = vec![0; g.n_classes()];
            for &y in cg.graph.labels() {
                class_counts[y] += 1;
            }
            rows.push(PartitionRow {
                source: src.name.clone(),
                client: cg.client,
                nodes: cg.graph.n_nodes(),
                train: cg.graph.count(Split::Train),
                class_counts,
                density: graph_density(&cg.graph).ok().map(ratio_to_f64),
                mean_degree: mean_degree(&cg.graph).ok().map(ratio_to_f64),
            });
        }
    }
    Ok(PartitionReport { seed, rows, warnings })
}

impl fmt::Display for PartitionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "{:<12} {:>6} {:>6} {:>6} {:>8} {:>8}  class proportions", "source", "client", "nodes", "train", "density", "degree")?;
        let opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let props: Vec<String> = r.class_proportions().iter().map(|p| format!("{p:.3}")).collect();
            writeln!(
                f,
                "{:<12} {:>6} {:>6} {:>6} {:>8} {:>8}  {}",
                r.source,
                r.client,
                r.nodes,
                r.train,
                opt(r.density),
                opt(r.mean_degree),
                props.join(" ")
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
