use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use narrative_cli::commands::SAMPLE_CONFIG;
use narrative_cli::inputs::load_tables;
use narrative_cli::{cmd_annotate, cmd_report, cmd_run, cmd_simgen, cmd_synth, Overrides, RunArgs, SynthArgs};
use narrative_core::evaluator::compare;
use narrative_core::orchestrator::store::RunDir;
use narrative_core::orchestrator::{Design, ProblemCategory};
use narrative_core::simlab::{oracle_extract, FaultPlan};
use tempfile::TempDir;

fn synth(dir: &Path, m: usize, faulty: usize) -> PathBuf {
    let out = dir.join("corpus");
    cmd_synth(&SynthArgs {
        out: out.clone(),
        instances: m,
        faulty,
        n_features: 4,
        rows: 8,
        seed: 11,
    })
    .unwrap();
    out
}

fn run_args(corpus: &Path, out: &Path) -> RunArgs {
    RunArgs {
        config: corpus.join("simlab.toml"),
        tables: corpus.join("tables"),
        baselines: Some(corpus.join("baselines.json")),
        out: out.to_path_buf(),
        overrides: Overrides::default(),
    }
}

#[tokio::test]
async fn run_writes_all_artifacts_and_they_reload() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 20, 6);
    let s = cmd_run(&run_args(&corpus, &tmp.path().join("runs"))).await.unwrap();
    assert!(s.failures.is_empty());
    let dir = RunDir::open(&s.run_dir).unwrap();
    let metrics = dir.load_metrics().unwrap();
    assert_eq!(metrics.len(), 3);
    assert_eq!(metrics, s.metrics);
    assert_eq!(metrics[0].unfaithful_count, 6);
    assert_eq!(dir.load_transcripts().unwrap().len(), 20);
    let manifest = dir.load_manifest().unwrap();
    assert_eq!(manifest.instances, 20);
    assert_eq!(manifest.config, dir.load_config().unwrap());
    // config + 20 tables + dataset description + baselines
    assert_eq!(manifest.inputs.len(), 23);
    assert!(!manifest.template_versions.is_empty());
    assert!(manifest.ledger.iter().all(|l| l.key.run_id == manifest.run_id));
}

#[tokio::test]
async fn same_config_refuses_to_overwrite() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 3, 1);
    let args = run_args(&corpus, &tmp.path().join("runs"));
    cmd_run(&args).await.unwrap();
    let err = cmd_run(&args).await.unwrap_err();
    assert!(err.to_string().contains("already exists"), "{err}");
}

#[tokio::test]
async fn from_file_without_baselines_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 3, 1);
    let mut args = run_args(&corpus, &tmp.path().join("runs"));
    args.baselines = None;
    let err = cmd_run(&args).await.unwrap_err().to_string();
    assert!(err.contains("simlab.toml") && err.contains("baseline"), "{err}");
    assert!(!tmp.path().join("runs").exists());
}

#[tokio::test]
async fn bad_config_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 3, 1);
    fs::write(corpus.join("simlab.toml"), SAMPLE_CONFIG.replace("max_rounds = 3", "max_rounds = 0")).unwrap();
    let err = cmd_run(&run_args(&corpus, &tmp.path().join("runs"))).await.unwrap_err().to_string();
    assert!(err.contains("max_rounds"), "{err}");
    fs::write(corpus.join("simlab.toml"), SAMPLE_CONFIG.replace("n_features = 4", "n_featurez = 4")).unwrap();
    let err = cmd_run(&run_args(&corpus, &tmp.path().join("runs"))).await.unwrap_err().to_string();
    assert!(err.contains("n_featurez") && err.contains("simlab.toml"), "{err}");
}

#[tokio::test]
async fn ten_rounds_give_ten_rows() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 10, 6);
    let cfg = SAMPLE_CONFIG.replace("policy = { kind = \"compliant\" }", "policy = { kind = \"partial\", p = 0.5 }");
    fs::write(corpus.join("simlab.toml"), cfg).unwrap();
    let mut args = run_args(&corpus, &tmp.path().join("runs"));
    args.overrides = Overrides {
        max_rounds: Some(10),
        ..Overrides::default()
    };
    let s = cmd_run(&args).await.unwrap();
    assert!(s.metrics.len() <= 10);
    assert_eq!(s.metrics.len(), 10);
    for w in s.metrics.windows(2) {
        assert!(w[1].unfaithful_count <= w[0].unfaithful_count);
    }
}

#[tokio::test]
async fn overrides_reach_the_stored_config() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 4, 2);
    let cfg = format!("{SAMPLE_CONFIG}\n[providers.panel]\nkind = \"simlab\"\nmodels = [\"a\", \"b\", \"c\"]\n");
    fs::write(corpus.join("simlab.toml"), cfg).unwrap();
    let mut args = run_args(&corpus, &tmp.path().join("runs"));
    args.overrides = Overrides {
        design: Some(Design::Coherent),
        ensemble: Some(vec!["b".into(), "a".into(), "c".into()]),
        seed: Some(3),
        models: vec!["critic=a".into(), "coherence=c".into()],
        ..Overrides::default()
    };
    let s = cmd_run(&args).await.unwrap();
    let c = RunDir::open(&s.run_dir).unwrap().load_config().unwrap();
    assert_eq!(c.design, Design::Coherent);
    assert_eq!(c.ensemble.primary(), Some("b"));
    assert_eq!(c.seed, 3);
    assert_eq!(c.models.critic.as_deref(), Some("a"));
    let t = &RunDir::open(&s.run_dir).unwrap().load_transcripts().unwrap()[0];
    assert_eq!(t.rounds.len(), 3);
    assert_eq!(t.rounds[0].extractions.len(), 3);

    let mut bad = run_args(&corpus, &tmp.path().join("runs2"));
    bad.overrides.models = vec!["judge=a".into()];
    assert!(cmd_run(&bad).await.unwrap_err().to_string().contains("judge"));
}

#[tokio::test]
async fn report_shapes() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 8, 4);
    let cfg = format!("{SAMPLE_CONFIG}\n[providers.panel]\nkind = \"simlab\"\nmodels = [\"a\", \"b\"]\n");
    fs::write(corpus.join("simlab.toml"), cfg).unwrap();
    let runs = tmp.path().join("runs");
    let o = cmd_run(&run_args(&corpus, &runs)).await.unwrap();
    let mut ens = run_args(&corpus, &runs);
    ens.overrides.ensemble = Some(vec!["a".into(), "b".into()]);
    let e = cmd_run(&ens).await.unwrap();

    let single = cmd_report(std::slice::from_ref(&o.run_dir)).unwrap();
    let header = single.progression_csv.lines().next().unwrap();
    assert_eq!(header, "metric,critic_rule/sim");
    assert!(!single.text.contains("o|e"));

    let both = cmd_report(&[o.run_dir.clone(), e.run_dir.clone()]).unwrap();
    assert_eq!(both.progression_csv.lines().next().unwrap(), "metric,critic_rule/sim,critic_rule/sim (e)");
    assert!(both.text.contains("o|e"));
    assert!(both.text.contains("4|4→0|0→0|0"), "{}", both.text);
    assert_eq!(both.plot_csv.lines().next().unwrap(), "round,metric,value,run");
    // 2 runs x 3 rounds x 5 metrics
    assert_eq!(both.plot_csv.lines().count(), 1 + 30);
}

#[tokio::test]
async fn annotations_are_counted_with_history() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 5, 2);
    let s = cmd_run(&run_args(&corpus, &tmp.path().join("runs"))).await.unwrap();
    cmd_annotate(&s.run_dir, "001", 0, "C2", "hedged wording").unwrap();
    let t = cmd_annotate(&s.run_dir, "001", 0, "C4", "flow edit broke rank").unwrap();
    assert_eq!(t.annotation.as_ref().unwrap().category, ProblemCategory::C4);
    assert_eq!(t.annotation_history.len(), 2);
    cmd_annotate(&s.run_dir, "002", 0, "c2", "").unwrap();
    assert!(cmd_annotate(&s.run_dir, "001", 0, "C7", "").is_err());
    assert!(cmd_annotate(&s.run_dir, "001", 9, "C1", "").is_err());
    assert!(cmd_annotate(&s.run_dir, "nope", 0, "C1", "").is_err());

    let r = cmd_report(std::slice::from_ref(&s.run_dir)).unwrap();
    let rows: Vec<&str> = r.categories_csv.lines().collect();
    assert!(rows.contains(&"C2,1") && rows.contains(&"C4,1") && rows.contains(&"C1,0"), "{rows:?}");
}

fn unfaithful_baselines(tables_dir: &Path, baselines: &narrative_cli::inputs::Baselines) -> usize {
    let set = load_tables(tables_dir).unwrap();
    set.tables
        .iter()
        .filter(|(_, t)| {
            let rec = oracle_extract(baselines.get(t).unwrap()).unwrap();
            !compare(&rec, t, 4, 1e-6).unwrap().is_faithful()
        })
        .count()
}

#[test]
fn simgen_counts_and_errors() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 12, 5);
    let tables = corpus.join("tables");

    let empty = tmp.path().join("no-plans");
    fs::create_dir(&empty).unwrap();
    let b = cmd_simgen(&empty, &tables, &tmp.path().join("identity.json"), 4).unwrap();
    assert_eq!(b.0.len(), 12);
    assert_eq!(unfaithful_baselines(&tables, &b), 0);

    let b = cmd_simgen(&corpus.join("plans"), &tables, &tmp.path().join("mixed.json"), 4).unwrap();
    assert_eq!(unfaithful_baselines(&tables, &b), 5);

    let bad_dir = tmp.path().join("bad-plans");
    fs::create_dir(&bad_dir).unwrap();
    let plan = FaultPlan {
        rank_swaps: vec![(0, 7)],
        ..FaultPlan::default()
    };
    fs::write(bad_dir.join("003.json"), serde_json::to_string(&plan).unwrap()).unwrap();
    let err = format!("{:#}", cmd_simgen(&bad_dir, &tables, &tmp.path().join("bad.json"), 4).unwrap_err());
    assert!(err.contains("003.json"), "{err}");
    fs::write(bad_dir.join("003.json"), "{\"rank_swapz\": []}").unwrap();
    let err = format!("{:#}", cmd_simgen(&bad_dir, &tables, &tmp.path().join("bad.json"), 4).unwrap_err());
    assert!(err.contains("003.json"), "{err}");
}

#[test]
fn scripted_provider_from_fixture_file() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 2, 0);
    let fixtures = r#"[{"role": "narrator", "responses": ["This is not a templated narrative."]},
                       {"role": "evaluator", "responses": ["```python\n{}\n```"]}]"#;
    fs::write(corpus.join("fixtures.json"), fixtures).unwrap();
    let cfg = r#"[run]
design = "basic"
baseline_mode = "narrator_generated"
max_rounds = 2

[run.models]
narrator = "s"
evaluator = "s"

[gateway]
max_attempts = 1

[providers.s]
kind = "scripted"
fixtures = "fixtures.json"
"#;
    fs::write(corpus.join("scripted.toml"), cfg).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut args = run_args(&corpus, &tmp.path().join("runs"));
    args.config = corpus.join("scripted.toml");
    args.baselines = None;
    let s = rt.block_on(cmd_run(&args)).unwrap();
    assert!(s.failures.is_empty());
    // an empty extraction misses every feature
    assert_eq!(s.metrics[0].unfaithful_count, 2);
    assert_eq!(s.metrics[0].ra, 0.0);
}

#[test]
fn exit_status_follows_hard_failures() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth(tmp.path(), 2, 1);
    let bin = env!("CARGO_BIN_EXE_narrate");
    let ok = Command::new(bin)
        .args(["run", "--config"])
        .arg(corpus.join("simlab.toml"))
        .arg("--tables")
        .arg(corpus.join("tables"))
        .arg("--baselines")
        .arg(corpus.join("baselines.json"))
        .arg("--out")
        .arg(tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    // no narrator fixture: every instance fails when generating its baseline
    fs::write(corpus.join("fixtures.json"), r#"[{"role": "evaluator", "responses": ["{}"]}]"#).unwrap();
    let cfg = "[run]\ndesign = \"basic\"\nbaseline_mode = \"narrator_generated\"\n\n[run.models]\nnarrator = \"s\"\nevaluator = \"s\"\n\n[gateway]\nmax_attempts = 1\n\n[providers.s]\nkind = \"scripted\"\nfixtures = \"fixtures.json\"\n";
    fs::write(corpus.join("bad.toml"), cfg).unwrap();
    let failed = Command::new(bin)
        .args(["run", "--config"])
        .arg(corpus.join("bad.toml"))
        .arg("--tables")
        .arg(corpus.join("tables"))
        .arg("--out")
        .arg(tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(failed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("narrator failed"));
    let run_dir = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("basic"))
        .unwrap();
    let manifest = RunDir::open(&run_dir).unwrap().load_manifest().unwrap();
    assert_eq!(manifest.failed_instances.len(), 2);

    let usage = Command::new(bin).args(["annotate", "x", "y", "0", "C1"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
