//! Parameter grids: one full run per point, collected into a CSV table.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::Metrics;
use crate::model::{Aggregation, EngineConfig};

/// Values to try per engine parameter; empty axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub epsilon: Vec<f64>,
    pub epsilon_init: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: Vec<usize>,
    pub c: Vec<usize>,
    pub a: Vec<f64>,
    pub l: Vec<usize>,
    pub n: Vec<usize>,
    pub b: Vec<usize>,
    pub seed: Vec<u64>,
    pub aggregation: Vec<Aggregation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// `(parameter, value)` for each swept axis, in grid order.
    pub params: Vec<(&'static str, String)>,
    pub config: EngineConfig,
}

type Setter = Box<dyn Fn(&mut EngineConfig)>;

impl SweepGrid {
    fn axes(&self) -> Vec<(&'static str, Vec<(String, Setter)>)> {
        fn axis<T: Clone + std::fmt::Debug + 'static>(
            values: &[T],
            set: fn(&mut EngineConfig, T),
        ) -> Vec<(String, Setter)> {
            values
                .iter()
                .map(|v| {
                    let v2 = v.clone();
                    let label = format!("{v:?}");
                    let label = label.trim_matches('"').to_lowercase();
                    (
                        label,
                        Box::new(move |c: &mut EngineConfig| set(c, v2.clone())) as Setter,
                    )
                })
                .collect()
        }
        vec![
            ("epsilon", axis(&self.epsilon, |c, v| c.epsilon = v)),
            ("epsilon_init", axis(&self.epsilon_init, |c, v| c.epsilon_init = v)),
            ("gamma", axis(&self.gamma, |c, v| c.gamma = v)),
            ("k", axis(&self.k, |c, v| c.k = v)),
            ("c", axis(&self.c, |c, v| c.c = v)),
            ("a", axis(&self.a, |c, v| c.a = v)),
            ("l", axis(&self.l, |c, v| c.l = v)),
            ("n", axis(&self.n, |c, v| c.n = v)),
            ("b", axis(&self.b, |c, v| c.b = v)),
            ("seed", axis(&self.seed, |c, v| c.seed = v)),
            ("aggregation", axis(&self.aggregation, |c, v| c.aggregation = v)),
        ]
        .into_iter()
        .filter(|(_, values)| !values.is_empty())
        .collect()
    }

    /// Cartesian product of the non-empty axes over `base`, duplicates
    /// removed (first occurrence kept). Every point must be a valid config.
    pub fn points(&self, base: &EngineConfig) -> Result<Vec<SweepPoint>> {
        let axes = self.axes();
        if axes.is_empty() {
            return Err(Error::Invalid("sweep grid has no values".into()));
        }
        let mut points = vec![SweepPoint {
            params: Vec::new(),
            config: base.clone(),
        }];
        for (name, values) in &axes {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for (label, set) in values {
                    let mut config = p.config.clone();
                    set(&mut config);
                    let mut params = p.params.clone();
                    params.push((*name, label.clone()));
                    next.push(SweepPoint { params, config });
                }
            }
            points = next;
        }
        let mut unique: Vec<SweepPoint> = Vec::with_capacity(points.len());
        for p in points {
            if !unique.iter().any(|u| u.config == p.config) {
                unique.push(p);
            }
        }
        for p in &unique {
            p.config.clone().validate()?;
        }
        Ok(unique)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: Vec<(&'static str, String)>,
    /// A failed run keeps its row with the error message.
    pub outcome: std::result::Result<Metrics, String>,
}

/// Runs every point, at most `jobs` at a time. Rows come back in point order.
pub fn run_sweep<F>(points: &[SweepPoint], jobs: usize, run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&EngineConfig) -> Result<Metrics> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start sweep workers: {e}")))?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|p| SweepRow {
                params: p.params.clone(),
                outcome: run(&p.config).map_err(|e| {
                    tracing::warn!(params = ?p.params, "sweep point failed: {e}");
                    e.to_string()
                }),
            })
            .collect()
    }))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header: swept parameters, then `auc, ap, frames_conscious, frames_total,
/// compression_rate, reasoner_calls, error`.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = rows
        .first()
        .map(|r| r.params.iter().map(|p| p.0).collect())
        .unwrap_or_default();
    header.extend([
        "auc",
        "ap",
        "frames_conscious",
        "frames_total",
        "compression_rate",
        "reasoner_calls",
        "error",
    ]);
    out.write_record(&header)?;
    for row in rows {
        let mut record: Vec<String> = row.params.iter().map(|p| p.1.clone()).collect();
        match &row.outcome {
            Ok(m) => record.extend([
                opt(m.auc),
                opt(m.ap),
                m.frames_conscious.to_string(),
                m.frames_total.to_string(),
                m.compression_rate.to_string(),
                m.reasoner_calls.to_string(),
                String::new(),
            ]),
            Err(e) => {
                record.extend(std::iter::repeat_n(String::new(), 6));
                record.push(e.clone());
            }
        }
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(frames_conscious: usize) -> Metrics {
        Metrics {
            auc: Some(0.5),
            ap: None,
            compression_rate: frames_conscious as f64 / 10.0,
            frames_total: 10,
            frames_conscious,
            reasoner_calls: 1,
        }
    }

    #[test]
    fn product_and_dedup() {
        let grid = SweepGrid {
            epsilon: vec![1.6, 2.0, 1.6],
            k: vec![8, 16],
            ..Default::default()
        };
        let points = grid.points(&EngineConfig::default()).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(
            points[0].params,
            vec![("epsilon", "1.6".to_string()), ("k", "8".to_string())]
        );
        assert_eq!(points[3].config.epsilon, 2.0);
        assert_eq!(points[3].config.k, 16);
    }

    #[test]
    fn singleton_and_empty_grids() {
        let one = SweepGrid {
            a: vec![1.5],
            ..Default::default()
        };
        assert_eq!(one.points(&EngineConfig::default()).unwrap().len(), 1);
        assert!(SweepGrid::default().points(&EngineConfig::default()).is_err());
        let bad = SweepGrid {
            l: vec![7],
            ..Default::default()
        };
        assert!(bad.points(&EngineConfig::default()).is_err());
    }

    #[test]
    fn failed_points_keep_their_rows() {
        let grid = SweepGrid {
            epsilon: vec![1.0, 2.0, 3.0],
            ..Default::default()
        };
        let points = grid.points(&EngineConfig::default()).unwrap();
        let rows = run_sweep(&points, 2, |cfg| {
            if cfg.epsilon == 2.0 {
                Err(Error::Invalid("boom".into()))
            } else {
                Ok(metrics(cfg.epsilon as usize))
            }
        })
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].outcome.is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "epsilon,auc,ap,frames_conscious,frames_total,compression_rate,reasoner_calls,error"
        );
        assert!(lines[2].ends_with("invalid value: boom"));
        assert!(lines[1].starts_with("1.0,0.5,,1,10,"));
    }

    #[test]
    fn grid_parses_from_toml_like_json() {
        let grid: SweepGrid = serde_json::from_str(r#"{"epsilon":[1.6,2.0],"aggregation":["mean"]}"#).unwrap();
        let points = grid.points(&EngineConfig::default()).unwrap();
        assert_eq!(points[0].config.aggregation, Aggregation::Mean);
        assert_eq!(points[0].params[1], ("aggregation", "mean".to_string()));
        assert!(serde_json::from_str::<SweepGrid>(r#"{"eps":[1.0]}"#).is_err());
    }
}
