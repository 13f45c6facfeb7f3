//! Orchestration of the comparison study: trains every method for the
//! requested table, evaluates all of them on one fixed test set, and
//! reports means, confidence half-widths, and one-sided ordering tests.

use crate::net::ModelConfig;
use crate::optim::{
    evaluate_gd, evaluate_model, mean, one_sided_p_less, train, GdConfig, MethodEval,
    ResultsTable, TrainConfig, TrainError,
};
use crate::sim::{mix_seed, sample_instance, ProblemInstance, SEED_DOMAIN_TEST};
use serde::{Deserialize, Serialize};

pub const ORDERING_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 30 epochs × 1000 examples, 5 runs: bounded sanity-scale study.
    Desk,
    /// 100 epochs × 5000 examples, 15 runs: the headline protocol.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySettings {
    pub scale: Scale,
    pub epochs: usize,
    pub examples_per_epoch: usize,
    pub runs: usize,
    pub test_size: usize,
    pub n_nodes: usize,
    pub batch_size: usize,
    pub base_seed: u64,
    pub gd: GdConfig,
}

impl StudySettings {
    pub fn desk(base_seed: u64) -> Self {
        StudySettings {
            scale: Scale::Desk,
            epochs: 30,
            examples_per_epoch: 1000,
            runs: 5,
            test_size: 512,
            n_nodes: 10,
            batch_size: 32,
            base_seed,
            gd: GdConfig::default(),
        }
    }

    pub fn full(base_seed: u64) -> Self {
        StudySettings {
            scale: Scale::Full,
            epochs: 100,
            examples_per_epoch: 5000,
            runs: 15,
            ..Self::desk(base_seed)
        }
    }

    fn train_config(&self, method_tag: u64, run: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            examples_per_epoch: self.examples_per_epoch,
            batch_size: self.batch_size,
            seed: mix_seed(self.base_seed, method_tag, run as u64),
            n_nodes: self.n_nodes,
            ..TrainConfig::default()
        }
    }
}

/// Ordering claims checked by the study. `passed = None` marks
/// informational comparisons that do not gate acceptance.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: String,
    pub p_value: Option<f64>,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct StudyOutcome {
    pub table1: Option<ResultsTable>,
    pub table2: Option<ResultsTable>,
    pub verdicts: Vec<Verdict>,
    pub methods: Vec<MethodEval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSelection {
    Table1,
    Table2,
    Both,
}

fn method_tag(label: &str, k: Option<usize>) -> u64 {
    let mut h: u64 = 0xcafe_f00d;
    for b in label.bytes() {
        h = h.wrapping_mul(0x100_0000_01b3) ^ b as u64;
    }
    h ^ k.map_or(0xffff, |k| k as u64)
}

/// Trains `runs` models of one configuration and returns the per-run mean
/// test energies (and refined means when `refine` is set).
#[allow(clippy::too_many_arguments)]
fn run_method(
    label: &str,
    config: &ModelConfig,
    settings: &StudySettings,
    test_set: &[ProblemInstance],
    refine: bool,
    progress: &mut dyn FnMut(String),
) -> Result<(MethodEval, Option<MethodEval>), TrainError> {
    let mut run_means = Vec::with_capacity(settings.runs);
    let mut refined_means = Vec::with_capacity(settings.runs);
    for run in 0..settings.runs {
        let tc = settings.train_config(method_tag(label, config.k), run);
        progress(format!(
            "[{label}{}] run {}/{} training (seed {})",
            config.k.map_or(String::new(), |k| format!(" K{k}")),
            run + 1,
            settings.runs,
            tc.seed
        ));
        let t0 = std::time::Instant::now();
        let (params, metrics) = train(config, &tc, |m| {
            if (m.epoch + 1) % 10 == 0 {
                progress(format!(
                    "    epoch {:>3}: mean train energy {:.4}",
                    m.epoch + 1,
                    m.mean_train_energy
                ));
            }
        })?;
        let final_train = metrics.last().map_or(f64::NAN, |m| m.mean_train_energy);
        let test_mean = evaluate_model(&params, test_set, None, settings.batch_size)?;
        run_means.push(test_mean);
        if refine {
            let refined = evaluate_model(&params, test_set, Some(&settings.gd), settings.batch_size)?;
            refined_means.push(refined);
        }
        progress(format!(
            "    done in {:.0}s: train {:.4}, test {:.4}{}",
            t0.elapsed().as_secs_f64(),
            final_train,
            test_mean,
            refined_means
                .last()
                .map_or(String::new(), |r| format!(", refined {r:.4}")),
        ));
    }
    let eval = MethodEval {
        method: label.to_string(),
        k: config.k,
        run_means,
    };
    let refined = refine.then(|| MethodEval {
        method: format!("{label}+gd"),
        k: config.k,
        run_means: refined_means,
    });
    Ok((eval, refined))
}

fn ordering_verdict(name: &str, lower: &MethodEval, higher: &MethodEval, gate: bool) -> Verdict {
    let p = one_sided_p_less(&lower.run_means, &higher.run_means);
    let passed = p < ORDERING_ALPHA;
    Verdict {
        name: name.to_string(),
        p_value: Some(p),
        passed: gate.then_some(passed),
        detail: format!(
            "{} {:.4} vs {} {:.4}, one-sided p = {:.4}",
            lower.method,
            mean(&lower.run_means),
            higher.method,
            mean(&higher.run_means),
            p
        ),
    }
}

/// Runs the requested comparison study. Fully connected runs are shared
/// between the two tables.
pub fn run_study(
    settings: &StudySettings,
    selection: TableSelection,
    progress: &mut dyn FnMut(String),
) -> Result<StudyOutcome, TrainError> {
    let test_set: Vec<ProblemInstance> = (0..settings.test_size)
        .map(|i| {
            sample_instance(
                settings.n_nodes,
                mix_seed(settings.base_seed, SEED_DOMAIN_TEST, i as u64),
            )
        })
        .collect::<Result<_, _>>()?;
    progress(format!(
        "test set: {} instances of {} nodes",
        test_set.len(),
        settings.n_nodes
    ));

    let single_fc = ModelConfig::single_pass();
    let iter_fc = ModelConfig::iterative();
    let nograd_fc = ModelConfig {
        basis_gradients: false,
        ..ModelConfig::iterative()
    };

    let mut outcome = StudyOutcome::default();

    // fully connected runs feed both tables
    let (single, _) = run_method("single", &single_fc, settings, &test_set, false, progress)?;
    let (iterative, iter_gd) =
        run_method("iterative", &iter_fc, settings, &test_set, true, progress)?;
    let iter_gd = iter_gd.expect("refined evaluation requested");

    if matches!(selection, TableSelection::Table1 | TableSelection::Both) {
        progress("gradient-descent baseline".to_string());
        let gd_mean = evaluate_gd(&test_set, &settings.gd);
        let gd_eval = MethodEval {
            method: "gd".into(),
            k: None,
            run_means: vec![gd_mean],
        };
        let (nograd, _) = run_method(
            "no-basis-grad",
            &nograd_fc,
            settings,
            &test_set,
            false,
            progress,
        )?;

        outcome.table1 = Some(ResultsTable {
            rows: vec![
                gd_eval.row(),
                single.row(),
                nograd.row(),
                iterative.row(),
                iter_gd.row(),
            ],
        });
        outcome
            .verdicts
            .push(ordering_verdict("iterative < single-pass", &iterative, &single, true));
        outcome
            .verdicts
            .push(ordering_verdict("iterative+gd < gd", &iter_gd, &gd_eval, true));
        outcome.verdicts.push(ordering_verdict(
            "iterative < no-basis-grad (informational)",
            &iterative,
            &nograd,
            false,
        ));
        outcome.methods.extend([gd_eval, nograd]);
    }

    if matches!(selection, TableSelection::Table2 | TableSelection::Both) {
        let mut rows = vec![single.row(), iterative.row()];
        let mut k_iters: Vec<MethodEval> = Vec::new();
        for k in [5usize, 3] {
            let single_k = ModelConfig {
                k: Some(k),
                ..ModelConfig::single_pass()
            };
            let iter_k = ModelConfig {
                k: Some(k),
                ..ModelConfig::iterative()
            };
            let (s_eval, _) = run_method("single", &single_k, settings, &test_set, false, progress)?;
            let (i_eval, _) = run_method("iterative", &iter_k, settings, &test_set, false, progress)?;
            rows.push(s_eval.row());
            rows.push(i_eval.row());
            outcome.verdicts.push(ordering_verdict(
                &format!("iterative < single-pass at K{k}"),
                &i_eval,
                &s_eval,
                true,
            ));
            k_iters.push(i_eval.clone());
            outcome.methods.extend([s_eval, i_eval]);
        }
        outcome.verdicts.push(ordering_verdict(
            "iterative < single-pass at FC",
            &iterative,
            &single,
            true,
        ));
        if let Some(iter_k3) = k_iters.iter().find(|m| m.k == Some(3)) {
            outcome.verdicts.push(ordering_verdict(
                "iterative K3 < single-pass FC",
                iter_k3,
                &single,
                true,
            ));
        }
        outcome.table2 = Some(ResultsTable { rows });
    }

    outcome.methods.extend([single, iterative, iter_gd]);
    Ok(outcome)
}

/// Plain-text report: tables plus pass/fail verdict lines.
pub fn summarize(outcome: &StudyOutcome) -> String {
    let mut out = String::new();
    if let Some(t) = &outcome.table1 {
        out.push_str("== average energy after optimization (lower is better) ==\n");
        out.push_str(&t.to_csv());
    }
    if let Some(t) = &outcome.table2 {
        out.push_str("== neighborhood-size comparison ==\n");
        out.push_str(&t.to_csv());
    }
    for v in &outcome.verdicts {
        let status = match v.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        out.push_str(&format!("[{status}] {}: {}\n", v.name, v.detail));
    }
    out
}
