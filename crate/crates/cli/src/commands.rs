use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use narrative_core::metrics::{instability_stats, progression_table, render3, RoundMetrics, ARROW};
use narrative_core::model::ShapTable;
use narrative_core::orchestrator::store::{touch, InputFile, RunDir, RunManifest, TRANSCRIPTS_FILE};
use narrative_core::orchestrator::{
    run_batch, BaselineMode, Design, Instance, InstanceFailure, ProblemCategory, RunConfig, Transcript,
};
use narrative_core::prompt::template;
use narrative_core::simlab::{render_templated_narrative, synth_corpus, FaultPlan};

use crate::config::HarnessConfig;
use crate::inputs::{dataset_path, load_plan, load_tables, plan_path, Baselines, DATASETS_DIR};

/// Command-line overrides of the `[run]` section.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub design: Option<Design>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub n_features: Option<usize>,
    /// Comma-separated evaluator panel; enables ensemble extraction. The first id is the primary.
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Role binding such as `narrator=gpt` (repeatable).
    #[arg(long = "models", value_name = "ROLE=MODEL_ID")]
    pub models: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, run: &mut RunConfig) -> Result<()> {
        if let Some(d) = self.design {
            run.design = d;
        }
        if let Some(r) = self.max_rounds {
            run.max_rounds = r;
        }
        if let Some(n) = self.n_features {
            run.n_features = n;
        }
        if let Some(panel) = &self.ensemble {
            run.ensemble.enabled = true;
            run.ensemble.panel = panel.clone();
            run.ensemble.primary = panel.first().cloned();
        }
        if let Some(s) = self.seed {
            run.seed = s;
        }
        for binding in &self.models {
            let (role, model) = binding
                .split_once('=')
                .with_context(|| format!("--models expects ROLE=MODEL_ID, got `{binding}`"))?;
            run.models.set(role.trim(), model.trim()).map_err(anyhow::Error::msg)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Harness config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of SHAP-table JSON files with a `datasets/` subdirectory.
    #[arg(long)]
    pub tables: PathBuf,
    /// JSON object mapping instance ids to baseline narratives.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub failures: Vec<InstanceFailure>,
    pub metrics: Vec<RoundMetrics<f64>>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub async fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    let started = unix_now();
    let mut harness = HarnessConfig::load(&args.config)?;
    args.overrides.apply(&mut harness.run)?;
    harness.validate(&args.config)?;
    let config = harness.run.clone();

    let tables = load_tables(&args.tables)?;
    let baselines = match &args.baselines {
        Some(p) => Some(Baselines::load(p)?),
        None => None,
    };
    if config.baseline_mode == BaselineMode::FromFile {
        let Some(b) = &baselines else {
            bail!(
                "{}: [run] baseline_mode is from_file but no --baselines file was given",
                args.config.display()
            );
        };
        if let Some((path, t)) = tables.tables.iter().find(|(_, t)| b.get(t).is_none()) {
            bail!(
                "{}: no baseline narrative for instance `{}` ({})",
                args.baselines.as_ref().expect("present").display(),
                t.instance_id,
                path.display()
            );
        }
    }

    let gateway = harness.build_gateway()?;
    let run_id = config.effective_run_id();
    let dir = RunDir::create(&args.out, &run_id)?;
    dir.write_config(&config)?;

    let instances: Vec<Instance<'_>> = tables
        .tables
        .iter()
        .map(|(_, t)| Instance {
            table: t,
            info: tables.info(&t.dataset_id),
            baseline: baselines.as_ref().and_then(|b| b.get(t)),
        })
        .collect();
    let outcome = run_batch(&config, &gateway, &instances).await?;

    touch(&dir.path().join(TRANSCRIPTS_FILE))?;
    dir.append_transcripts(&outcome.transcripts)?;
    if !outcome.metrics.is_empty() {
        dir.write_metrics(&outcome.metrics)?;
    }

    let mut inputs = vec![InputFile::hash(&args.config)?];
    for (p, _) in &tables.tables {
        inputs.push(InputFile::hash(p)?);
    }
    for id in tables.infos.keys() {
        inputs.push(InputFile::hash(&dataset_path(&args.tables, id))?);
    }
    if let Some(p) = &args.baselines {
        inputs.push(InputFile::hash(p)?);
    }
    let manifest = RunManifest {
        run_id: run_id.clone(),
        config: config.clone(),
        inputs,
        started_at_unix: started,
        finished_at_unix: unix_now(),
        instances: instances.len(),
        failed_instances: outcome.failures.clone(),
        ledger: gateway.ledger().lines(),
        total_cost: gateway.ledger().total_cost(),
        template_versions: template::versions(),
    };
    dir.write_manifest(&manifest)?;

    Ok(RunSummary {
        run_dir: dir.path().to_path_buf(),
        failures: outcome.failures,
        metrics: outcome.metrics,
    })
}

/// One loaded run directory.
#[derive(Debug, Clone)]
pub struct RunView {
    pub dir: PathBuf,
    pub label: String,
    pub config: RunConfig,
    pub metrics: Vec<RoundMetrics<f64>>,
    pub transcripts: Vec<Transcript>,
}

impl RunView {
    pub fn load(path: &Path) -> Result<Self> {
        let dir = RunDir::open(path)?;
        let config = dir.load_config()?;
        let metrics = dir.load_metrics().with_context(|| format!("{} has no usable metrics", path.display()))?;
        let transcripts = dir.load_transcripts()?;
        let mut label = format!("{}/{}", config.design, config.models.narrator);
        if config.ensemble.enabled {
            label.push_str(" (e)");
        }
        Ok(RunView {
            dir: path.to_path_buf(),
            label,
            config,
            metrics,
            transcripts,
        })
    }

    /// Runs that differ only in seed, run id or ensemble setting share this key.
    fn pairing_key(&self) -> String {
        format!("{}/{}/{}", self.config.design, self.config.models.narrator, self.config.models.evaluator)
    }

    fn repeat_key(&self) -> String {
        format!("{} {}", self.pairing_key(), self.config.ensemble.enabled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub progression_csv: String,
    /// Long format: round, metric, value, run.
    pub plot_csv: String,
    pub categories_csv: String,
}

fn csv_string(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn text_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s:<w$}", w = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

type Render = fn(&RoundMetrics<f64>) -> String;

const CATEGORIES: [ProblemCategory; 6] = [
    ProblemCategory::C1,
    ProblemCategory::C2,
    ProblemCategory::C3,
    ProblemCategory::C4,
    ProblemCategory::C5,
    ProblemCategory::NoProblem,
];

pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<Report> {
    if run_dirs.is_empty() {
        bail!("no run directories given");
    }
    let mut runs: Vec<RunView> = run_dirs.iter().map(|p| RunView::load(p)).collect::<Result<_>>()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &runs {
        *counts.entry(r.label.clone()).or_default() += 1;
    }
    for r in &mut runs {
        if counts[&r.label] > 1 {
            let id = r.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            r.label = format!("{} [{id}]", r.label);
        }
    }

    let tables = runs
        .iter()
        .map(|r| progression_table(&r.metrics).with_context(|| format!("{}: empty metrics", r.dir.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut grid = vec![std::iter::once("metric".to_string()).chain(runs.iter().map(|r| r.label.clone())).collect::<Vec<_>>()];
    for (i, (name, _)) in tables[0].rows().iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(tables.iter().map(|t| t.rows()[i].1.to_string()));
        grid.push(row);
    }
    let mut text = String::from("Faithfulness by round\n");
    text.push_str(&text_table(&grid));
    let progression_csv = csv_string(&grid);

    // original | ensemble pairs
    let mut pairs = Vec::new();
    let mut keys: Vec<String> = runs.iter().map(RunView::pairing_key).collect();
    keys.dedup();
    for key in keys {
        let o: Vec<&RunView> = runs.iter().filter(|r| r.pairing_key() == key && !r.config.ensemble.enabled).collect();
        let e: Vec<&RunView> = runs.iter().filter(|r| r.pairing_key() == key && r.config.ensemble.enabled).collect();
        if let ([o], [e]) = (o.as_slice(), e.as_slice()) {
            pairs.push((key, *o, *e));
        }
    }
    if !pairs.is_empty() {
        let mut rows = vec![vec!["run".to_string(), "metric".into(), "o|e".into()]];
        for (key, o, e) in &pairs {
            let len = o.metrics.len().max(e.metrics.len());
            let at = |m: &[RoundMetrics<f64>], i: usize| m[i.min(m.len() - 1)];
            let metrics: [(&str, Render); 5] = [
                ("RA", |r| render3(r.ra)),
                ("SA", |r| render3(r.sa)),
                ("VA", |r| render3(r.va)),
                ("Overall", |r| render3(r.overall)),
                ("Unfaithful", |r| r.unfaithful_count.to_string()),
            ];
            for (name, f) in metrics {
                let cells: Vec<String> = (0..len)
                    .map(|i| format!("{}|{}", f(&at(&o.metrics, i)), f(&at(&e.metrics, i))))
                    .collect();
                rows.push(vec![key.clone(), name.to_string(), cells.join(ARROW)]);
            }
        }
        text.push_str("\nOriginal vs ensemble extraction\n");
        text.push_str(&text_table(&rows));
    }

    // repeated runs of one configuration
    let mut groups: BTreeMap<String, Vec<&RunView>> = BTreeMap::new();
    for r in &runs {
        groups.entry(r.repeat_key()).or_default().push(r);
    }
    let mut stats_rows = vec![vec!["runs".to_string(), "count".into(), "mean".into(), "min".into(), "max".into(), "std".into()]];
    for group in groups.values().filter(|g| g.len() > 1) {
        let finals: Vec<f64> = group.iter().map(|r| r.metrics.last().expect("non-empty").overall).collect();
        let s = instability_stats(&finals)?;
        let label = group[0].label.split(" [").next().unwrap_or_default().to_string();
        stats_rows.push(vec![
            label,
            group.len().to_string(),
            render3(s.mean),
            render3(s.min),
            render3(s.max),
            render3(s.std_dev),
        ]);
    }
    if stats_rows.len() > 1 {
        text.push_str("\nInstability of the final overall score across repeated runs\n");
        text.push_str(&text_table(&stats_rows));
    }

    let mut cat_rows = vec![std::iter::once("category".to_string()).chain(runs.iter().map(|r| r.label.clone())).collect::<Vec<_>>()];
    for c in CATEGORIES {
        let mut row = vec![c.to_string()];
        for r in &runs {
            let n = r
                .transcripts
                .iter()
                .filter(|t| t.annotation.as_ref().is_some_and(|a| a.category == c))
                .count();
            row.push(n.to_string());
        }
        cat_rows.push(row);
    }
    if runs.iter().any(|r| r.transcripts.iter().any(|t| t.annotation.is_some())) {
        text.push_str("\nAnnotated problem categories\n");
        text.push_str(&text_table(&cat_rows));
    }
    let categories_csv = csv_string(&cat_rows);

    let mut plot = vec![vec!["round".to_string(), "metric".into(), "value".into(), "run".into()]];
    for r in &runs {
        for m in &r.metrics {
            for (name, v) in [
                ("RA", m.ra),
                ("SA", m.sa),
                ("VA", m.va),
                ("overall", m.overall),
                ("unfaithful_count", m.unfaithful_count as f64),
            ] {
                plot.push(vec![m.round_index.to_string(), name.into(), v.to_string(), r.label.clone()]);
            }
        }
    }

    Ok(Report {
        text,
        progression_csv,
        plot_csv: csv_string(&plot),
        categories_csv,
    })
}

/// Writes a report's files into `dir` (created if needed).
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in [
        ("report.txt", &report.text),
        ("progression.csv", &report.progression_csv),
        ("plot.csv", &report.plot_csv),
        ("categories.csv", &report.categories_csv),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn cmd_annotate(run_dir: &Path, instance_id: &str, round: usize, category: &str, note: &str) -> Result<Transcript> {
    let category: ProblemCategory = category.parse().map_err(anyhow::Error::msg)?;
    let dir = RunDir::open(run_dir)?;
    Ok(dir.annotate(instance_id, round, category, note)?)
}

fn baseline_key(t: &ShapTable) -> String {
    format!("{}/{}", t.dataset_id, t.instance_id)
}

/// Renders templated baselines for every table; tables without a plan file get a faithful one.
pub fn cmd_simgen(plan_dir: &Path, tables_dir: &Path, out: &Path, n: usize) -> Result<Baselines> {
    let tables = load_tables(tables_dir)?;
    let mut map = BTreeMap::new();
    for (_, t) in &tables.tables {
        let plan = load_plan(plan_dir, &t.instance_id)?.unwrap_or_default();
        let text = render_templated_narrative(t, n, &plan)
            .with_context(|| format!("bad fault plan {}", plan_path(plan_dir, &t.instance_id).display()))?;
        map.insert(baseline_key(t), text);
    }
    let baselines = Baselines(map);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(out, baselines.to_json()).with_context(|| format!("writing {}", out.display()))?;
    Ok(baselines)
}

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    /// Output directory; receives tables/, plans/, baselines.json and simlab.toml.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 30)]
    pub faulty: usize,
    #[arg(long, default_value_t = 4)]
    pub n_features: usize,
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub const SAMPLE_CONFIG: &str = r#"[run]
design = "critic_rule"
max_rounds = 3
n_features = 4

[run.models]
narrator = "sim"
evaluator = "sim"

[gateway]
max_attempts = 1

[providers.sim]
kind = "simlab"
policy = { kind = "compliant" }
"#;

/// Writes a synthetic corpus: tables, non-identity plans, rendered baselines and a config.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let corpus = synth_corpus(args.seed, args.instances, args.faulty, args.n_features, args.rows)?;
    let tables_dir = args.out.join("tables");
    let plans_dir = args.out.join("plans");
    let datasets_dir = tables_dir.join(DATASETS_DIR);
    for d in [&datasets_dir, &plans_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let write = |p: PathBuf, body: String| fs::write(&p, body).with_context(|| format!("writing {}", p.display()));
    let dataset_id = corpus.cases.first().map(|c| c.table.dataset_id.clone()).unwrap_or_default();
    write(
        datasets_dir.join(format!("{dataset_id}.json")),
        serde_json::to_string_pretty(&corpus.info)? + "\n",
    )?;
    let mut map = BTreeMap::new();
    for case in &corpus.cases {
        let id = &case.table.instance_id;
        write(tables_dir.join(format!("{id}.json")), case.table.to_json())?;
        if case.plan != FaultPlan::default() {
            write(plan_path(&plans_dir, id), serde_json::to_string_pretty(&case.plan)? + "\n")?;
        }
        map.insert(baseline_key(&case.table), case.baseline.clone());
    }
    write(args.out.join("baselines.json"), Baselines(map).to_json())?;
    write(args.out.join("simlab.toml"), SAMPLE_CONFIG.to_string())?;
    Ok(())
}
