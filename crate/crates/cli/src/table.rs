//! Mean ± standard deviation tables over runs.

use std::fmt::Write;

use serde::Serialize;

use crate::harness::GridOutcome;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    /// Mean over runs of each run's mean episode return.
    pub mean: f64,
    /// Sample standard deviation of the run means; absent for one run.
    pub std: Option<f64>,
    pub success_rate: f64,
    pub episodes: usize,
    pub llm_calls: usize,
    pub joint_mean: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub task: String,
    pub method: String,
    /// `None` when the method does not apply to the task.
    pub stats: Option<CellStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<Row>,
    /// Per method, the mean of its cell means across tasks.
    pub overall: Vec<(String, Option<f64>)>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); `None` below two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

impl ResultTable {
    pub fn from_outcome(outcome: &GridOutcome) -> ResultTable {
        let rows: Vec<Row> = outcome
            .cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let stats = cell.applicable.then(|| {
                    let eps: Vec<_> = outcome.episodes.iter().filter(|e| e.cell == c).collect();
                    let run_means: Vec<f64> = (0..outcome.runs)
                        .map(|r| {
                            let vals: Vec<f64> = eps.iter().filter(|e| e.run == r).map(|e| e.value).collect();
                            mean(&vals)
                        })
                        .collect();
                    let joints: Option<Vec<f64>> = eps.iter().map(|e| e.joint).collect();
                    CellStats {
                        mean: mean(&run_means),
                        std: sample_std(&run_means),
                        success_rate: eps.iter().filter(|e| e.success).count() as f64 / eps.len() as f64,
                        episodes: eps.len(),
                        llm_calls: eps.iter().map(|e| e.llm_calls).sum(),
                        joint_mean: joints.filter(|j| !j.is_empty()).map(|j| mean(&j)),
                        failed: eps.iter().filter(|e| e.error.is_some()).count(),
                    }
                });
                Row {
                    task: cell.task.clone(),
                    method: cell.method.clone(),
                    stats,
                }
            })
            .collect();
        let mut methods: Vec<String> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        let overall = methods
            .into_iter()
            .map(|m| {
                let means: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == m)
                    .filter_map(|r| r.stats.as_ref().map(|s| s.mean))
                    .collect();
                let value = (!means.is_empty()).then(|| mean(&means));
                (m, value)
            })
            .collect();
        ResultTable { rows, overall }
    }

    fn tasks(&self) -> Vec<&str> {
        let mut tasks: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !tasks.contains(&r.task.as_str()) {
                tasks.push(&r.task);
            }
        }
        tasks
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,method,mean,std,success_rate,episodes,llm_calls,joint_mean,failed\n");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            match &r.stats {
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "{},{},{:.4},{},{:.4},{},{},{},{}",
                        r.task,
                        r.method,
                        s.mean,
                        opt(s.std),
                        s.success_rate,
                        s.episodes,
                        s.llm_calls,
                        opt(s.joint_mean),
                        s.failed
                    );
                }
                None => {
                    let _ = writeln!(out, "{},{},-,-,-,0,0,-,0", r.task, r.method);
                }
            }
        }
        for (m, v) in &self.overall {
            let _ = writeln!(out, "overall,{m},{},-,-,-,-,-,-", opt(*v));
        }
        out
    }

    /// Methods as rows, tasks as columns, cells as `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let tasks = self.tasks();
        let mut out = String::from("| Method |");
        for t in &tasks {
            let _ = write!(out, " {t} |");
        }
        out.push_str(" Overall |\n|---|");
        out.push_str(&"---|".repeat(tasks.len() + 1));
        out.push('\n');
        for (m, overall) in &self.overall {
            let _ = write!(out, "| {m} |");
            for t in &tasks {
                let cell = self.rows.iter().find(|r| r.method == *m && r.task == *t);
                let text = match cell.and_then(|r| r.stats.as_ref()) {
                    None => "-".to_string(),
                    Some(s) => match s.std {
                        Some(sd) => format!("{:.2} ± {:.2}", s.mean, sd),
                        None => format!("{:.2}", s.mean),
                    },
                };
                let _ = write!(out, " {text} |");
            }
            let _ = writeln!(out, " {} |", overall.map_or("-".to_string(), |v| format!("{v:.2}")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        let sd = sample_std(&[1.0, 2.0, 3.0]).unwrap();
        assert!((sd - 1.0).abs() < 1e-15);
        assert_eq!(sample_std(&[5.0]), None);
    }
}
