//! Command implementations. Each command computes everything first, then
//! writes its files in one pass, then prints.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use dylora_core::bench::{self, ArmKind, Check, Outcome};
use dylora_core::tasks::{eval_merged, eval_task};
use dylora_core::trainer::{init_rng, train};
use dylora_core::{DyLoraAdapter, RankDistributionKind, UpdateMode};

use crate::checkpoint;
use crate::config::{BuiltTask, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::output::{self, CHECKPOINT_FILE, MANIFEST_FILE, REPORT_FILE, TRACE_FILE};

/// Config plus command-line overrides, resolved once per invocation.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let mut config = ExperimentConfig::load(path)?;
        if let Some(s) = seed {
            config = config.with_seed(s);
        }
        let out_dir = out.unwrap_or_else(|| config.output.dir.clone());
        Ok(Self { config, out_dir })
    }

    fn task(&self) -> Result<BuiltTask> {
        self.config.task.build()
    }

    fn header(&self, command: &str) -> serde_json::Map<String, Value> {
        let mut m = serde_json::Map::new();
        m.insert("command".into(), json!(command));
        m.insert("config_hash".into(), json!(self.config.hash()));
        m
    }
}

fn emit(stdout: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(stdout, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

fn print_checks(stdout: &mut dyn Write, checks: &[Check]) -> Result<()> {
    for c in checks {
        emit(
            stdout,
            &format!("[{}] {}: {}", c.outcome.name(), c.name, c.detail),
        )?;
    }
    Ok(())
}

pub fn train_cmd(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let built = run.task()?;
    let task = built.as_task();
    let spec = run.config.adapter.spec();
    let cfg = run.config.train.to_config();
    let adapter = DyLoraAdapter::init(&mut init_rng(cfg.seed), task.base_weight().clone(), spec)?;
    let out = train(adapter, task, &cfg)?;
    let evals = (spec.r_min..=spec.r_max)
        .map(|b| Ok(json!({ "rank": b, "metric": eval_task(&out.adapter, task, b)? })))
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = run.header("train");
    manifest.insert("seed".into(), json!(cfg.seed));
    manifest.insert("metric".into(), json!(task.metric_kind().name()));
    manifest.insert("counters".into(), output::counters_json(&out.counters));
    manifest.insert("eval".into(), Value::Array(evals));
    output::write_all(
        &run.out_dir,
        &[
            (CHECKPOINT_FILE, checkpoint::encode(&out.adapter)),
            (TRACE_FILE, output::trace_csv(&out.trace)),
            (
                MANIFEST_FILE,
                output::manifest_bytes(&Value::Object(manifest)),
            ),
        ],
    )?;
    let last = out.trace.last().map(|t| t.loss).unwrap_or(f64::NAN);
    emit(
        stdout,
        &format!(
            "trained {} steps, final batch loss {last}",
            out.counters.steps_run
        ),
    )
}

/// Evaluates a checkpoint at one rank on the configured task and prints a
/// JSON record. With `merged`, the metric comes from the merged weight
/// matrix, which is also written next to the other outputs.
pub fn eval_cmd(
    run: &Run,
    ckpt: &Path,
    rank: usize,
    merged: bool,
    stdout: &mut dyn Write,
) -> Result<()> {
    let adapter = checkpoint::load(ckpt)?;
    if rank < adapter.r_min() || rank > adapter.r_max() {
        return Err(CliError::Usage(format!(
            "rank {rank} is outside the checkpoint's stored range [{}, {}]",
            adapter.r_min(),
            adapter.r_max()
        )));
    }
    let built = run.task()?;
    let task = built.as_task();
    if adapter.w0() != task.base_weight() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not wrap the configured task's base map",
            ckpt.display()
        )));
    }
    let metric = if merged {
        let weights = adapter.merge(rank)?;
        let m = eval_merged(&weights, task)?;
        output::write_all(
            &run.out_dir,
            &[(
                &format!("merged_r{rank}.bin"),
                checkpoint::encode_merged(&weights, rank),
            )],
        )?;
        m
    } else {
        eval_task(&adapter, task, rank)?
    };
    let record = json!({
        "rank": rank,
        "metric_kind": task.metric_kind().name(),
        "metric": metric,
        "path": if merged { "merged" } else { "forward" },
        "range": [adapter.r_min(), adapter.r_max()],
    });
    emit(stdout, &record.to_string())
}

fn hard_failures(checks: &[Check]) -> Vec<&Check> {
    checks
        .iter()
        .filter(|c| c.hard && c.outcome == Outcome::Fail)
        .collect()
}

/// Trains every arm per seed, evaluates every rank and asserts the headline
/// properties. Report files are written before any assertion error.
pub fn sweep_cmd(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let built = run.task()?;
    let task = built.as_task();
    let cfg = &run.config;
    let arms = cfg.arms();
    let report = bench::rank_sweep(
        task,
        cfg.adapter.spec(),
        &arms,
        &cfg.sweep_ranks(),
        &cfg.bench.seeds,
    )?;

    let dynamic = arms.iter().find(|a| a.kind == ArmKind::Dynamic);
    let fixed = arms
        .iter()
        .find(|a| matches!(a.kind, ArmKind::Static { .. }));
    let mut checks = Vec::new();
    if let (Some(d), Some(s)) = (dynamic, fixed) {
        checks.extend(bench::headline_checks(&report, &d.name, &s.name));
    }
    if let Some(d) = dynamic {
        checks.push(bench::monotonicity_check(&report, &d.name));
    }

    let mut manifest = run.header("sweep");
    manifest.insert("seeds".into(), json!(report.seeds));
    manifest.insert("metric".into(), json!(report.metric.name()));
    manifest.insert("ranks".into(), json!(report.ranks));
    manifest.insert("arms".into(), output::summary_json(&report));
    manifest.insert("checks".into(), output::checks_json(&checks));
    output::write_all(
        &run.out_dir,
        &[
            (REPORT_FILE, output::report_csv(output::sweep_rows(&report))),
            (
                MANIFEST_FILE,
                output::manifest_bytes(&Value::Object(manifest)),
            ),
        ],
    )?;
    print_checks(stdout, &checks)?;
    for a in report.arms.iter().filter(|a| a.failure.is_some()) {
        emit(
            stdout,
            &format!(
                "[fail] arm {}: {}",
                a.name,
                a.failure.as_deref().unwrap_or("")
            ),
        )?;
    }
    let failed = hard_failures(&checks);
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<_> = failed.iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Assertion(names.join(", ")))
    }
}

/// Distribution × update-mode grid. Flags are warn-only.
pub fn ablation_cmd(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let built = run.task()?;
    let task = built.as_task();
    let cfg = &run.config;
    let dists: Vec<RankDistributionKind> =
        cfg.bench.distributions.iter().map(|&d| d.into()).collect();
    let modes: Vec<UpdateMode> = cfg.bench.modes.iter().map(|&m| m.into()).collect();
    let ab = bench::ablation(
        task,
        cfg.adapter.spec(),
        &cfg.train.to_config(),
        &dists,
        &modes,
        &cfg.bench.seeds,
    )?;

    let mut manifest = run.header("ablation");
    manifest.insert("seeds".into(), json!(ab.report.seeds));
    manifest.insert("metric".into(), json!(ab.report.metric.name()));
    manifest.insert("ranks".into(), json!(ab.report.ranks));
    manifest.insert("arms".into(), output::summary_json(&ab.report));
    manifest.insert("flags".into(), output::checks_json(&ab.flags));
    output::write_all(
        &run.out_dir,
        &[
            (
                REPORT_FILE,
                output::report_csv(output::sweep_rows(&ab.report)),
            ),
            (
                MANIFEST_FILE,
                output::manifest_bytes(&Value::Object(manifest)),
            ),
        ],
    )?;
    print_checks(stdout, &ab.flags)?;
    for a in ab.report.arms.iter().filter(|a| a.failure.is_some()) {
        emit(
            stdout,
            &format!(
                "[fail] arm {}: {}",
                a.name,
                a.failure.as_deref().unwrap_or("")
            ),
        )?;
    }
    Ok(())
}

/// Cost of a per-candidate rank search versus one dynamic run.
pub fn search_cmd(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let built = run.task()?;
    let task = built.as_task();
    let cfg = &run.config;
    let train_cfg = cfg.train.to_config();
    let per_run = cfg.bench.per_run_steps.unwrap_or(train_cfg.steps);
    let ledger = bench::search_simulation(
        task,
        cfg.adapter.spec(),
        &cfg.search_candidates(),
        per_run,
        &train_cfg,
    )?;

    let seed = train_cfg.seed;
    let rows = [&ledger.search, &ledger.dynamic]
        .into_iter()
        .flat_map(|arm| {
            arm.metrics
                .iter()
                .map(move |&(r, m)| (r, arm.name.clone(), seed, m))
        });
    let arm_json = |a: &bench::SearchArm| {
        json!({
            "arm": a.name,
            "total_steps": a.total_steps,
            "total_passes": a.total_passes,
            "ranks_trained": a.ranks_trained,
            "best_rank": a.best_rank,
            "best_metric": a.best_metric,
        })
    };
    let (search_steps, dynamic_steps) = ledger.steps_ratio();
    let mut manifest = run.header("search");
    manifest.insert("seeds".into(), json!([seed]));
    manifest.insert("metric".into(), json!(ledger.metric.name()));
    manifest.insert("candidates".into(), json!(ledger.candidates));
    manifest.insert("per_run_steps".into(), json!(ledger.per_run_steps));
    manifest.insert("steps_ratio".into(), json!(ledger.steps_ratio_f64()));
    manifest.insert(
        "arms".into(),
        json!([arm_json(&ledger.search), arm_json(&ledger.dynamic)]),
    );
    output::write_all(
        &run.out_dir,
        &[
            (REPORT_FILE, output::report_csv(rows)),
            (
                MANIFEST_FILE,
                output::manifest_bytes(&Value::Object(manifest)),
            ),
        ],
    )?;
    emit(
        stdout,
        &format!(
            "search: {search_steps} steps over {} candidates (best rank {}), dynamic: {dynamic_steps} steps (best rank {}), ratio {}",
            ledger.candidates.len(),
            ledger.search.best_rank,
            ledger.dynamic.best_rank,
            ledger.steps_ratio_f64()
        ),
    )
}

/// Individual versus summation loss under one step budget.
pub fn loss_cost_cmd(run: &Run, stdout: &mut dyn Write) -> Result<()> {
    let built = run.task()?;
    let task = built.as_task();
    let train_cfg = run.config.train.to_config();
    let cost = bench::loss_mode_cost(task, run.config.adapter.spec(), &train_cfg)?;

    let seed = train_cfg.seed;
    let results = [&cost.individual, &cost.summation];
    let rows = results.into_iter().flat_map(|r| {
        r.metrics
            .iter()
            .map(move |&(b, m)| (b, r.mode.name().to_string(), seed, m))
    });
    let (sum_passes, ind_passes) = cost.pass_ratio();
    let mut manifest = run.header("loss-cost");
    manifest.insert("seeds".into(), json!([seed]));
    manifest.insert("metric".into(), json!(task.metric_kind().name()));
    manifest.insert(
        "modes".into(),
        results
            .iter()
            .map(|r| {
                json!({
                    "mode": r.mode.name(),
                    "counters": output::counters_json(&r.counters),
                    "average_metric": r.average_metric,
                })
            })
            .collect(),
    );
    manifest.insert(
        "pass_ratio".into(),
        json!(sum_passes as f64 / ind_passes as f64),
    );
    output::write_all(
        &run.out_dir,
        &[
            (REPORT_FILE, output::report_csv(rows)),
            (
                MANIFEST_FILE,
                output::manifest_bytes(&Value::Object(manifest)),
            ),
        ],
    )?;
    emit(
        stdout,
        &format!(
            "individual: {ind_passes} passes, average metric {}; summation: {sum_passes} passes, average metric {}",
            cost.individual.average_metric, cost.summation.average_metric
        ),
    )
}
