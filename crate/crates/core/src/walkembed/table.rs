use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{NodeCounts, NodeId};

/// One dense vector per node, stored row-major in global node order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    counts: NodeCounts,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(counts: NodeCounts, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        if data.len() != counts.total() * dim {
            return Err(Error::format(format!(
                "embedding data has {} values, expected {}",
                data.len(),
                counts.total() * dim
            )));
        }
        Ok(EmbeddingTable { counts, dim, data })
    }

    pub fn zeros(counts: NodeCounts, dim: usize) -> Self {
        EmbeddingTable {
            counts,
            dim,
            data: vec![0.0; counts.total() * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> NodeCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, global: usize) -> &[f64] {
        &self.data[global * self.dim..(global + 1) * self.dim]
    }

    /// `None` for nodes outside the table (e.g. a question created after training).
    pub fn vector(&self, id: NodeId) -> Option<&[f64]> {
        self.counts.contains(id).then(|| self.row(self.counts.global(id)))
    }

    /// Copies the node's vector into `out`, or zeros if the node is unknown.
    pub fn copy_into(&self, id: NodeId, out: &mut [f64]) {
        match self.vector(id) {
            Some(v) => out.copy_from_slice(v),
            None => out.fill(0.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cosine(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let (x, y) = (self.vector(a)?, self.vector(b)?);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        (nx > 0.0 && ny > 0.0).then(|| dot / (nx * ny))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "embed v1 {} {}", self.len(), self.dim)?;
        for g in 0..self.len() {
            write!(out, "{}", self.counts.node_at(g))?;
            for v in self.row(g) {
                write!(out, " {v:.8e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads the text format. Node counts are inferred from the largest
    /// index of each kind; nodes absent from the file get zero vectors.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::format("empty embedding file"))??;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "embed" || f[1] != "v1" {
            return Err(Error::format(format!("bad embedding header `{header}`")));
        }
        let count: usize = f[2].parse().map_err(|_| Error::format("bad embedding count"))?;
        let dim: usize = f[3].parse().map_err(|_| Error::format("bad embedding dim"))?;
        let mut rows = Vec::with_capacity(count);
        let mut counts = NodeCounts::default();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id: NodeId = parts
                .next()
                .expect("non-empty line")
                .parse()
                .map_err(|_| Error::parse(i + 2, "bad node id"))?;
            let v = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(i + 2, "bad float"))?;
            if v.len() != dim {
                return Err(Error::parse(i + 2, format!("expected {dim} values, got {}", v.len())));
            }
            counts.include(id);
            rows.push((id, v));
        }
        if rows.len() != count {
            return Err(Error::format(format!("header says {count} rows, file has {}", rows.len())));
        }
        let mut table = EmbeddingTable::zeros(counts, dim);
        for (id, v) in rows {
            let g = counts.global(id);
            table.data[g * dim..(g + 1) * dim].copy_from_slice(&v);
        }
        Ok(table)
    }
}
