//! Evaluation over a fixed test set and the statistics used to compare
//! methods: 1-sigma Student-t confidence half-widths and one-sided tests.

use super::gd::{gd_refine, GdConfig};
use crate::autodiff::Tape;
use crate::net::{forward_batch, param_leaves, positions_of, ForwardOptions, ModelParams, NetError};
use crate::sim::{total_energy, ProblemInstance};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Φ(1): the central probability mass of a 1-sigma interval.
const ONE_SIGMA_CENTRAL: f64 = 0.682_689_492_137_085_9;

/// Mean final energy of the model over a test set, optionally refining
/// each prediction with gradient descent first.
pub fn evaluate_model(
    params: &ModelParams,
    test_set: &[ProblemInstance],
    gd_post: Option<&GdConfig>,
    batch_size: usize,
) -> Result<f64, NetError> {
    assert!(!test_set.is_empty());
    let options = ForwardOptions::default();
    let mut sum = 0.0;
    for chunk in test_set.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let pv = param_leaves(&mut tape, params);
        let out = forward_batch(&mut tape, params, &pv, chunk, &options)?;
        let finals = positions_of(&tape, *out.positions.last().unwrap());
        let n = chunk[0].n();
        for (bi, inst) in chunk.iter().enumerate() {
            let pos = &finals[bi * n..(bi + 1) * n];
            sum += match gd_post {
                None => total_energy(pos, &inst.a),
                Some(cfg) => gd_refine(pos, &inst.a, cfg).energy,
            };
        }
    }
    Ok(sum / test_set.len() as f64)
}

/// Mean energy of plain gradient descent from the initial configurations.
pub fn evaluate_gd(test_set: &[ProblemInstance], config: &GdConfig) -> f64 {
    let sum: f64 = test_set
        .iter()
        .map(|inst| gd_refine(&inst.positions, &inst.a, config).energy)
        .sum();
    sum / test_set.len() as f64
}

/// Sample mean.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_var(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Half-width of the 1-sigma confidence interval of the mean, via the
/// Student-t quantile with n-1 degrees of freedom. None for a single run.
pub fn t_sigma_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    let q = dist.inverse_cdf(0.5 + ONE_SIGMA_CENTRAL / 2.0);
    Some(q * (sample_var(values) / n as f64).sqrt())
}

/// One-sided p-value for H1: mean(a) < mean(b). Welch's t-test; when one
/// side is deterministic (single value or zero variance) it degrades to a
/// one-sample test against that constant.
pub fn one_sided_p_less(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let (ma, mb) = (mean(a), mean(b));
    let va = if a.len() > 1 { sample_var(a) } else { 0.0 };
    let vb = if b.len() > 1 { sample_var(b) } else { 0.0 };
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    if sa + sb == 0.0 {
        return if ma < mb { 0.0 } else { 1.0 };
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let dof = if sa == 0.0 {
        (b.len() - 1) as f64
    } else if sb == 0.0 {
        (a.len() - 1) as f64
    } else {
        // Welch–Satterthwaite
        (sa + sb) * (sa + sb)
            / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64)
    };
    let dist = StudentsT::new(0.0, 1.0, dof.max(1.0)).expect("valid dof");
    dist.cdf(t)
}

/// One comparison row of the output tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRow {
    pub method: String,
    /// Neighborhood size; None = fully connected.
    pub k: Option<usize>,
    pub mean_energy: f64,
    pub ci_half_width: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
}

/// Per-method evaluation bundle: the run means feeding the statistics.
#[derive(Debug, Clone)]
pub struct MethodEval {
    pub method: String,
    pub k: Option<usize>,
    pub run_means: Vec<f64>,
}

impl MethodEval {
    pub fn row(&self) -> ResultsRow {
        ResultsRow {
            method: self.method.clone(),
            k: self.k,
            mean_energy: mean(&self.run_means),
            ci_half_width: t_sigma_half_width(&self.run_means),
            runs: self.run_means.len(),
        }
    }
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,K,mean_energy,ci_half_width,runs\n");
        for row in &self.rows {
            let k = row.k.map_or("FC".to_string(), |k| k.to_string());
            let ci = row.ci_half_width.map_or(String::new(), |w| w.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.method, k, row.mean_energy, ci, row.runs
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty csv")?;
        if header != "method,K,mean_energy,ci_half_width,runs" {
            return Err(format!("unexpected header {header:?}"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(format!("line {}: expected 5 fields", i + 2));
            }
            let k = if parts[1] == "FC" {
                None
            } else {
                Some(parts[1].parse().map_err(|e| format!("line {}: K: {e}", i + 2))?)
            };
            let ci = if parts[3].is_empty() {
                None
            } else {
                Some(parts[3].parse().map_err(|e| format!("line {}: ci: {e}", i + 2))?)
            };
            rows.push(ResultsRow {
                method: parts[0].to_string(),
                k,
                mean_energy: parts[2]
                    .parse()
                    .map_err(|e| format!("line {}: mean: {e}", i + 2))?,
                ci_half_width: ci,
                runs: parts[4]
                    .parse()
                    .map_err(|e| format!("line {}: runs: {e}", i + 2))?,
            });
        }
        Ok(ResultsTable { rows })
    }
}
