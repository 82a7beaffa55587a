//! Run reports, multi-run averages and the per-method and per-distance views.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::{mean, DistanceF1, PlaybackReport, SplitMetrics, PLAYBACK_REFERENCE_F1};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// Distillation method, absent for directly trained models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// One seed per run, in run order.
    pub seeds: Vec<u64>,
    pub n_runs: usize,
    /// Metrics per split name, averaged over runs.
    pub splits: BTreeMap<String, SplitMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub playback: Option<PlaybackReport>,
}

impl MetricsReport {
    pub fn single(model: &str, method: Option<&str>, seed: u64) -> Self {
        MetricsReport {
            model: model.into(),
            method: method.map(Into::into),
            seeds: vec![seed],
            n_runs: 1,
            splits: BTreeMap::new(),
            playback: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `distance_m,f1,n,reference_f1` rows of the playback section.
    pub fn playback_csv(&self) -> Option<String> {
        let pb = self.playback.as_ref()?;
        let mut s = String::from("distance_m,f1,n,reference_f1\n");
        for d in &pb.distances {
            let reference = PLAYBACK_REFERENCE_F1.iter().find(|(m, _)| *m == d.distance_m).map(|r| r.1);
            let _ = writeln!(s, "{},{},{},{}", d.distance_m, d.f1, d.n, reference.map(|r| r.to_string()).unwrap_or_default());
        }
        Some(s)
    }
}

/// Mean of each metric over runs of the same model and method.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::Metric("no runs to aggregate".into()))?;
    for r in reports {
        if r.model != first.model || r.method != first.method {
            return Err(Error::Metric(format!(
                "cannot average {}/{:?} with {}/{:?}",
                first.model, first.method, r.model, r.method
            )));
        }
    }
    let mut splits = BTreeMap::new();
    for name in first.splits.keys() {
        let got: Vec<&SplitMetrics> = reports
            .iter()
            .map(|r| r.splits.get(name).ok_or_else(|| Error::Metric(format!("a run lacks split `{name}`"))))
            .collect::<Result<_>>()?;
        let auc = mean(&got.iter().map(|m| m.auc).collect::<Vec<_>>());
        let f1 = mean(&got.iter().map(|m| m.f1).collect::<Vec<_>>());
        splits.insert(name.clone(), SplitMetrics { auc, f1, n: got[0].n });
    }
    let playback = match &first.playback {
        None => None,
        Some(pb) => {
            let all: Vec<&PlaybackReport> = reports
                .iter()
                .map(|r| r.playback.as_ref().ok_or_else(|| Error::Metric("a run lacks playback results".into())))
                .collect::<Result<_>>()?;
            let distances: Vec<DistanceF1> = pb
                .distances
                .iter()
                .map(|d| {
                    let f1s: Vec<f64> = all.iter().filter_map(|p| p.f1_at(d.distance_m)).collect();
                    DistanceF1 { distance_m: d.distance_m, f1: mean(&f1s), n: d.n }
                })
                .collect();
            let mean_f1 = mean(&distances.iter().map(|d| d.f1).collect::<Vec<_>>());
            Some(PlaybackReport { distances, mean_f1 })
        }
    };
    Ok(MetricsReport {
        model: first.model.clone(),
        method: first.method.clone(),
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        n_runs: reports.iter().map(|r| r.n_runs).sum(),
        splits,
        playback,
    })
}

/// Reference averages per (student, method), for context.
pub const METHOD_REFERENCE: [(&str, &str, f64, f64); 12] = [
    ("student1", "response", 0.9831, 0.9443),
    ("student1", "feature", 0.9888, 0.9509),
    ("student1", "relational", 0.9896, 0.9609),
    ("student2", "response", 0.9824, 0.9494),
    ("student2", "feature", 0.9893, 0.9589),
    ("student2", "relational", 0.9898, 0.9622),
    ("student3", "response", 0.9810, 0.9372),
    ("student3", "feature", 0.9870, 0.9496),
    ("student3", "relational", 0.9856, 0.9528),
    ("student4", "response", 0.9689, 0.9405),
    ("student4", "feature", 0.9883, 0.9542),
    ("student4", "relational", 0.9880, 0.9545),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCell {
    pub model: String,
    pub method: String,
    pub avg_auc: f64,
    pub avg_f1: f64,
    pub n_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<(f64, f64)>,
}

/// Averages per model and method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub split: String,
    pub cells: Vec<MethodCell>,
    /// Per model, whether relational >= feature >= response in average F1.
    pub ordering: BTreeMap<String, bool>,
}

impl MethodTable {
    pub fn from_reports(reports: &[MetricsReport], split: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for r in reports {
            let Some(method) = &r.method else { continue };
            let m = r.splits.get(split).ok_or_else(|| Error::Metric(format!("report lacks split `{split}`")))?;
            let reference = METHOD_REFERENCE
                .iter()
                .find(|(s, k, _, _)| *s == r.model && k == method)
                .map(|(_, _, auc, f1)| (*auc, *f1));
            cells.push(MethodCell { model: r.model.clone(), method: method.clone(), avg_auc: m.auc, avg_f1: m.f1, n_runs: r.n_runs, reference });
        }
        let mut ordering = BTreeMap::new();
        let f1 = |model: &str, method: &str| cells.iter().find(|c| c.model == model && c.method == method).map(|c| c.avg_f1);
        let models: Vec<String> = cells.iter().map(|c| c.model.clone()).collect();
        for model in models {
            if let (Some(r), Some(f), Some(s)) = (f1(&model, "relational"), f1(&model, "feature"), f1(&model, "response")) {
                ordering.insert(model, r >= f && f >= s);
            }
        }
        Ok(MethodTable { split: split.into(), cells, ordering })
    }

    pub fn render(&self) -> String {
        let methods = ["response", "feature", "relational"];
        let mut s = format!("{:<10}", "model");
        for m in methods {
            let _ = write!(s, " {:>11} {:>11}", format!("{m}_auc"), format!("{m}_f1"));
        }
        s.push('\n');
        let mut models: Vec<&str> = self.cells.iter().map(|c| c.model.as_str()).collect();
        models.dedup();
        for model in models {
            let _ = write!(s, "{model:<10}");
            for m in methods {
                match self.cells.iter().find(|c| c.model == model && c.method == m) {
                    Some(c) => {
                        let _ = write!(s, " {:>11.4} {:>11.4}", c.avg_auc, c.avg_f1);
                    }
                    None => {
                        let _ = write!(s, " {:>11} {:>11}", "-", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, f1: f64) -> MetricsReport {
        let mut r = MetricsReport::single("student3", Some("relational"), seed);
        r.splits.insert("test".into(), SplitMetrics { auc: 0.9, f1, n: 10 });
        r
    }

    #[test]
    fn averages_and_seeds() {
        let agg = aggregate_runs(&[run(1, 0.9), run(2, 1.0)]).unwrap();
        assert_eq!(agg.splits["test"].f1, 0.95);
        assert_eq!(agg.seeds, vec![1, 2]);
        assert_eq!(agg.n_runs, 2);
        let same = aggregate_runs(&vec![run(1, 0.93); 5]).unwrap();
        assert_eq!(same.splits["test"], run(1, 0.93).splits["test"]);
    }

    #[test]
    fn mismatched_runs_rejected() {
        let mut other = run(3, 0.5);
        other.method = Some("feature".into());
        assert!(aggregate_runs(&[run(1, 0.9), other]).is_err());
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn table_ordering_flag() {
        let mk = |method: &str, f1: f64| {
            let mut r = run(0, f1);
            r.method = Some(method.into());
            r
        };
        let t = MethodTable::from_reports(&[mk("response", 0.9), mk("feature", 0.92), mk("relational", 0.95)], "test").unwrap();
        assert_eq!(t.ordering["student3"], true);
        assert_eq!(t.cells[2].reference, Some((0.9856, 0.9528)));
        assert!(t.render().contains("student3"));
    }
}
