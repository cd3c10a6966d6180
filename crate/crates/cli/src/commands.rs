use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use symrom::aslip::{aslip_baseline, BASELINE_COLUMNS};
use symrom::data::{load_dataset, preprocess_dataset, Dataset, DatasetSchema, Split};
use symrom::pipeline::{
    dataset_fingerprint, fine_tune, load_model, model_to_string, run_pipeline, scan_cell, test_reconstruction_error,
    MultiPhaseModel, PipelineOutput, SelectionReport,
};
use symrom::rollout::{compare_models, rollout, rollout_full, rollout_with_reset, RolloutResult};
use symrom::sindy::print_symbolic;
use symrom::synthetic::{generate, save_synthetic, SyntheticSpec, GROUND_TRUTH_FILE};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::CliError;

pub struct Context {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self, command: &str) -> PathBuf {
        self.config.out_dir(self.out_root.as_deref(), command)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.config_path.clone(), self.config.clone())
    }

    fn load_dataset(&self, path: &Path, manifest: &mut RunManifest) -> Result<Dataset, CliError> {
        let schema = DatasetSchema {
            m: self.config.joints,
            ..Default::default()
        };
        let ds = manifest.time("load_dataset", || {
            load_dataset(path, &schema).and_then(|raw| preprocess_dataset(&raw, &self.config.preprocess))
        })?;
        manifest.input_hashed(path, dataset_fingerprint(&ds));
        log::info!("loaded {} jumps from {}", ds.len(), path.display());
        Ok(ds)
    }

    fn load_model(&self, manifest: &mut RunManifest) -> Result<MultiPhaseModel, CliError> {
        let path = self.config.model()?;
        let model = load_model(path)?;
        manifest.input_file(path)?;
        Ok(model)
    }
}

/// Maps `f` over `items`, on the rayon pool when `parallel` is set. Results
/// keep the input order either way.
fn map_jobs<T, R, F>(parallel: bool, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn jump_label(index: usize) -> String {
    format!("jump_{index:03}")
}

fn test_jumps(ds: &Dataset) -> Result<Vec<usize>, CliError> {
    let idx = ds.indices(Split::Test);
    if idx.is_empty() {
        return Err(CliError::Usage("dataset has no test jumps".into()));
    }
    Ok(idx)
}

pub fn gen(ctx: &Context, preset: &str) -> Result<(), CliError> {
    let mut spec = match &ctx.config.synthetic {
        Some(s) => s.clone(),
        None => SyntheticSpec::preset(preset)?,
    };
    if ctx.config.synthetic.is_none() {
        spec.seed = ctx.config.training.seed;
    }
    let out = ctx.out_dir("gen");
    let mut manifest = ctx.manifest("gen");
    manifest.seeds = vec![spec.seed, spec.lift_seed];
    let (dataset, truth) = manifest.time("generate", || generate(&spec))?;
    save_synthetic(&dataset, &truth, &out)?;
    manifest.record_output(&out.join(symrom::data::MANIFEST_FILE))?;
    manifest.record_output(&out.join(GROUND_TRUTH_FILE))?;
    for i in 0..dataset.len() {
        manifest.record_output(&out.join(format!("{}.csv", jump_label(i))))?;
    }
    let (train, val, test) = dataset.split_counts();
    println!(
        "generated {} jumps ({train}/{val}/{test} train/validation/test), {} samples each, l_true = {}",
        dataset.len(),
        spec.samples_per_jump(),
        spec.l_true
    );
    println!("dataset written to {}", out.display());
    manifest.finish(&out)?;
    Ok(())
}

fn report_pipeline(out: &PipelineOutput, text: &mut String) {
    let log = &out.log;
    let h = &log.step1_history.train;
    writeln!(
        text,
        "step 1: reconstruction loss {:.6e} -> {:.6e} ({} epochs)",
        h.first().copied().unwrap_or(0.0),
        h.last().copied().unwrap_or(0.0),
        h.len().saturating_sub(1)
    )
    .unwrap();
    writeln!(
        text,
        "step 2: all-phase reconstruction loss {:.6e} -> {:.6e}",
        log.step2_loss.0, log.step2_loss.1
    )
    .unwrap();
    for (phase, m) in &log.phase_metrics {
        writeln!(
            text,
            "step 3 [{phase}]: latent mse {:.6e}, decoded mse {:.6e}, {} active terms",
            m.latent_mse, m.decoded_mse, m.active
        )
        .unwrap();
    }
}

fn equations(model: &MultiPhaseModel) -> String {
    let mut text = String::new();
    for pm in &model.phases {
        writeln!(text, "[{}]", pm.phase).unwrap();
        for line in print_symbolic(pm, 2) {
            writeln!(text, "  {line}").unwrap();
        }
    }
    text
}

fn write_model(
    out: &PipelineOutput,
    dataset: &Dataset,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let mut summary = String::new();
    report_pipeline(out, &mut summary);
    if !dataset.indices(Split::Test).is_empty() {
        let e = test_reconstruction_error(&out.model, dataset)?;
        writeln!(summary, "test reconstruction error E_dec = {e:.6e}").unwrap();
    }
    let eqs = equations(&out.model);
    print!("{summary}{eqs}");
    let model_path = out_dir.join("model.json");
    manifest.write(&model_path, model_to_string(&out.model).as_bytes())?;
    manifest.write(&out_dir.join("equations.txt"), eqs.as_bytes())?;
    println!("model written to {}", model_path.display());
    Ok(())
}

pub fn train(ctx: &Context) -> Result<(), CliError> {
    let out_dir = ctx.out_dir("train");
    let mut manifest = ctx.manifest("train");
    manifest.seeds = vec![ctx.config.training.seed];
    let ds = ctx.load_dataset(ctx.config.dataset()?, &mut manifest)?;
    let out = manifest.time("train", || run_pipeline(&ds, &ctx.config.training))?;
    write_model(&out, &ds, &out_dir, &mut manifest)?;
    manifest.finish(&out_dir)?;
    Ok(())
}

pub fn finetune(ctx: &Context) -> Result<(), CliError> {
    let out_dir = ctx.out_dir("finetune");
    let mut manifest = ctx.manifest("finetune");
    manifest.seeds = vec![ctx.config.training.seed];
    let base = ctx.load_model(&mut manifest)?;
    let ds = ctx.load_dataset(ctx.config.dataset()?, &mut manifest)?;
    let out = manifest.time("finetune", || fine_tune(&base, &ds, &ctx.config.training))?;
    write_model(&out, &ds, &out_dir, &mut manifest)?;
    manifest.finish(&out_dir)?;
    Ok(())
}

pub fn scan(ctx: &Context, l_values: &[usize], seeds: &[u64]) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let l_values = if l_values.is_empty() { &cfg.scan.l_values[..] } else { l_values };
    let seeds = if seeds.is_empty() { &cfg.scan.seeds[..] } else { seeds };
    if l_values.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("scan needs at least one latent dimension and one seed".into()));
    }
    let out_dir = ctx.out_dir("scan");
    let mut manifest = ctx.manifest("scan");
    manifest.seeds = seeds.to_vec();
    let ds = ctx.load_dataset(cfg.dataset()?, &mut manifest)?;
    if let Some(&bad) = l_values.iter().find(|&&l| l == 0 || l > ds.full_dim()) {
        return Err(CliError::Usage(format!("latent dimension {bad} outside 1..={}", ds.full_dim())));
    }
    let cells: Vec<(usize, u64)> = l_values.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let rows = manifest.time("scan", || {
        map_jobs(cfg.parallel, &cells, |&(l, s)| scan_cell(&ds, l, s, &cfg.training))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
    })?;
    let report = SelectionReport::from_rows(cfg.training.selection_lambda, rows);
    manifest.write(&out_dir.join("selection.csv"), report.to_csv().as_bytes())?;
    manifest.write(&out_dir.join("selection_summary.csv"), report.aggregate_csv().as_bytes())?;
    print!("{}", report.aggregate_csv());
    for s in report.seeds() {
        if let Some(l) = report.best_l(s) {
            println!("seed {s}: minimum L_mod at l = {l}");
        }
    }
    println!("{} rows written to {}", report.rows.len(), out_dir.join("selection.csv").display());
    manifest.finish(&out_dir)?;
    Ok(())
}

fn metrics_header(columns: &[String]) -> String {
    let mut h = String::from("jump,mode,mean_rmse");
    for c in columns {
        write!(h, ",{c}").unwrap();
    }
    h.push('\n');
    h
}

fn metrics_row(jump: &str, mode: &str, r: &RolloutResult) -> String {
    let mut line = format!("{jump},{mode},{:e}", r.mean_rmse());
    for v in &r.rmse {
        write!(line, ",{v:e}").unwrap();
    }
    line.push('\n');
    line
}

pub fn eval(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let out_dir = ctx.out_dir("eval");
    let mut manifest = ctx.manifest("eval");
    let model = ctx.load_model(&mut manifest)?;
    let ds = ctx.load_dataset(cfg.dataset()?, &mut manifest)?;
    let jumps = test_jumps(&ds)?;
    let results = manifest.time("rollout", || {
        map_jobs(cfg.parallel, &jumps, |&j| -> symrom::Result<_> {
            let traj = &ds.jumps[j];
            let full = rollout_full(&model, traj, &cfg.rollout)?;
            let reset = match cfg.rollout.reset_interval {
                0 => None,
                _ => Some(rollout_with_reset(&model, traj, &cfg.rollout)?),
            };
            Ok((j, full, reset))
        })
        .into_iter()
        .collect::<symrom::Result<Vec<_>>>()
    })?;

    let mut metrics = String::new();
    let (mut full_sum, mut reset_sum) = (0.0, 0.0);
    for (j, full, reset) in &results {
        let label = jump_label(*j);
        if metrics.is_empty() {
            metrics = metrics_header(&full.columns);
        }
        metrics.push_str(&metrics_row(&label, "full", full));
        manifest.write(&out_dir.join("rollouts").join(format!("{label}_full.csv")), full.to_csv().as_bytes())?;
        full_sum += full.mean_rmse();
        if let Some(r) = reset {
            metrics.push_str(&metrics_row(&label, "reset", r));
            manifest.write(&out_dir.join("rollouts").join(format!("{label}_reset.csv")), r.to_csv().as_bytes())?;
            reset_sum += r.mean_rmse();
        }
    }
    manifest.write(&out_dir.join("metrics.csv"), metrics.as_bytes())?;
    let n = results.len() as f64;
    println!("{} test jumps, mean RMSE full rollout {:.6e}", results.len(), full_sum / n);
    if cfg.rollout.reset_interval > 0 {
        println!(
            "mean RMSE with reset every {} steps {:.6e}",
            cfg.rollout.reset_interval,
            reset_sum / n
        );
    }
    println!("metrics written to {}", out_dir.join("metrics.csv").display());
    manifest.finish(&out_dir)?;
    Ok(())
}

pub fn baseline(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let out_dir = ctx.out_dir("baseline");
    let mut manifest = ctx.manifest("baseline");
    let model = match cfg.model {
        Some(_) => Some(ctx.load_model(&mut manifest)?),
        None => None,
    };
    let ds = ctx.load_dataset(cfg.dataset()?, &mut manifest)?;
    let jumps = test_jumps(&ds)?;
    let results = manifest.time("simulate", || {
        map_jobs(cfg.parallel, &jumps, |&j| -> symrom::Result<_> {
            let traj = &ds.jumps[j];
            let slip = aslip_baseline(&cfg.aslip, traj, &cfg.rollout)?;
            let learned = model.as_ref().map(|m| rollout(m, traj, &cfg.rollout)).transpose()?;
            Ok((j, slip, learned))
        })
        .into_iter()
        .collect::<symrom::Result<Vec<_>>>()
    })?;

    // mean RMSE over test jumps of the base position, the columns every model predicts
    let mut sums: Vec<(&str, [f64; 3])> = Vec::new();
    for (j, slip, learned) in &results {
        let label = jump_label(*j);
        let mut entries: Vec<(&str, &RolloutResult)> = Vec::new();
        if let Some(l) = learned {
            entries.push(("learned", l));
        }
        entries.push(("aslip", slip));
        let cmp = compare_models(&entries);
        let dir = out_dir.join("comparison");
        manifest.write(&dir.join(format!("{label}_rmse.csv")), cmp.table_csv().as_bytes())?;
        manifest.write(&dir.join(format!("{label}_error.csv")), cmp.series_csv().as_bytes())?;
        if sums.is_empty() {
            sums = entries.iter().map(|(name, _)| (*name, [0.0; 3])).collect();
        }
        for ((_, r), (_, acc)) in entries.iter().zip(sums.iter_mut()) {
            for (a, col) in acc.iter_mut().zip(BASELINE_COLUMNS) {
                let k = r.columns.iter().position(|c| c == col).expect("base columns present");
                *a += r.rmse[k];
            }
        }
    }
    let mut table = format!("model,{}\n", BASELINE_COLUMNS.join(","));
    for (name, acc) in &sums {
        let cells: Vec<String> = acc.iter().map(|v| format!("{:e}", v / results.len() as f64)).collect();
        writeln!(table, "{name},{}", cells.join(",")).unwrap();
    }
    manifest.write(&out_dir.join("comparison.csv"), table.as_bytes())?;
    print!("{table}");
    println!("{} test jumps compared; tables in {}", results.len(), out_dir.display());
    manifest.finish(&out_dir)?;
    Ok(())
}
