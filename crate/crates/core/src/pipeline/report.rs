use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::clustering::GcdMetrics;
use crate::error::{Error, Result};

use super::infer::{EntropyStats, Inference};
use super::train::{EpochRecord, WarmupRecord};

/// Outcome of a run. The JSON form is key-sorted and excludes the wall
/// clock, so identical runs serialise to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub warmup: Option<WarmupRecord>,
    pub epochs: Vec<EpochRecord>,
    pub k: usize,
    pub k_source: String,
    pub k_probes: BTreeMap<usize, f64>,
    pub n_source_pins: usize,
    pub n_pseudo_pins: usize,
    pub kmeans_iterations: usize,
    pub kmeans_objective: f64,
    pub metrics: Option<GcdMetrics>,
    pub entropy: EntropyStats,
    pub disc_entropy: EntropyStats,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn new(
        config: BTreeMap<String, String>,
        warmup: Option<WarmupRecord>,
        epochs: Vec<EpochRecord>,
        inference: &Inference,
    ) -> Self {
        Self {
            config,
            warmup,
            epochs,
            k: inference.k,
            k_source: inference.k_source.clone(),
            k_probes: inference.k_probes.clone(),
            n_source_pins: inference.n_source_pins,
            n_pseudo_pins: inference.n_pseudo_pins,
            kmeans_iterations: inference.clustering.iterations,
            kmeans_objective: inference.clustering.objective,
            metrics: inference.metrics.clone(),
            entropy: inference.entropy.clone(),
            disc_entropy: inference.disc_entropy.clone(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        // serde_json's map type keeps keys sorted
        let value = serde_json::to_value(self)
            .map_err(|e| Error::InvalidConfig(format!("report serialisation: {e}")))?;
        let mut s = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::InvalidConfig(format!("report serialisation: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::MalformedHeader(format!("report: {e}")))
    }

    /// Flat `metric,value` rows.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::IoFailure(e.into());
        w.write_record(["metric", "value"]).map_err(io)?;
        let mut rows: Vec<(String, String)> = vec![
            ("k".into(), self.k.to_string()),
            ("k_source".into(), self.k_source.clone()),
            ("epochs".into(), self.epochs.len().to_string()),
            ("n_source_pins".into(), self.n_source_pins.to_string()),
            ("n_pseudo_pins".into(), self.n_pseudo_pins.to_string()),
            ("entropy_mean".into(), self.entropy.mean.to_string()),
        ];
        if let Some(m) = &self.metrics {
            rows.push(("all".into(), m.all.to_string()));
            rows.push(("old".into(), m.old.to_string()));
            rows.push(("new".into(), m.new.to_string()));
        }
        if let Some(a) = self.entropy.auroc {
            rows.push(("entropy_auroc".into(), a.to_string()));
        }
        if let Some(a) = self.disc_entropy.auroc {
            rows.push(("disc_entropy_auroc".into(), a.to_string()));
        }
        rows.push((
            "wall_clock_secs".into(),
            format!("{:.3}", self.wall_clock_secs),
        ));
        for (k, v) in rows {
            w.write_record([k, v]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Projection of the rows of `points` on their two leading principal axes.
/// Each axis is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n == 0 || dim < 2 {
        return Err(Error::ShapeMismatch(
            "PCA needs points of dimension ≥ 2".into(),
        ));
    }
    let x = DMatrix::from_fn(n, dim, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|a| a * sign).collect()
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(r, v)| r * v).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}

/// `index,label,cluster,pc1,pc2` per target sample.
pub fn write_pca_csv<W: Write>(
    out: W,
    coords: &[[f64; 2]],
    labels: &[i32],
    clusters: &[usize],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::IoFailure(e.into());
    w.write_record(["index", "label", "cluster", "pc1", "pc2"])
        .map_err(io)?;
    for (i, c) in coords.iter().enumerate() {
        w.write_record([
            i.to_string(),
            labels.get(i).copied().unwrap_or(-1).to_string(),
            clusters.get(i).map_or(String::new(), usize::to_string),
            c[0].to_string(),
            c[1].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
