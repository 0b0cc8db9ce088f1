//! Loading tables, dataset descriptions, baselines and fault plans from disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use narrative_core::model::{load_shap_table, DatasetInfo, ShapTable};
use narrative_core::simlab::FaultPlan;

/// Dataset descriptions live next to the tables under this directory.
pub const DATASETS_DIR: &str = "datasets";

#[derive(Debug, Clone)]
pub struct TableSet {
    /// Tables in file-name order, with the file they came from.
    pub tables: Vec<(PathBuf, ShapTable)>,
    pub infos: BTreeMap<String, DatasetInfo>,
}

impl TableSet {
    pub fn info(&self, dataset_id: &str) -> &DatasetInfo {
        &self.infos[dataset_id]
    }
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    files.sort();
    Ok(files)
}

pub fn dataset_path(tables_dir: &Path, dataset_id: &str) -> PathBuf {
    tables_dir.join(DATASETS_DIR).join(format!("{dataset_id}.json"))
}

/// Reads every `*.json` table in `dir` and the description file of each dataset seen.
pub fn load_tables(dir: &Path) -> Result<TableSet> {
    let mut tables = Vec::new();
    let mut infos = BTreeMap::new();
    let mut seen = BTreeMap::new();
    for path in json_files(dir)? {
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let loaded = load_shap_table(&bytes).with_context(|| path.display().to_string())?;
        for w in &loaded.warnings {
            tracing::warn!(file = %path.display(), warning = ?w, "table loaded with a warning");
        }
        let t = loaded.table;
        if let Some(prev) = seen.insert((t.dataset_id.clone(), t.instance_id.clone()), path.clone()) {
            bail!(
                "{}: instance `{}` of dataset `{}` already loaded from {}",
                path.display(),
                t.instance_id,
                t.dataset_id,
                prev.display()
            );
        }
        if !infos.contains_key(&t.dataset_id) {
            let ip = dataset_path(dir, &t.dataset_id);
            let bytes = fs::read(&ip).with_context(|| {
                format!("{}: dataset description {} is missing", path.display(), ip.display())
            })?;
            let info = DatasetInfo::load(&bytes).with_context(|| ip.display().to_string())?;
            infos.insert(t.dataset_id.clone(), info);
        }
        tables.push((path, t));
    }
    if tables.is_empty() {
        bail!("{}: no table files (*.json) found", dir.display());
    }
    Ok(TableSet { tables, infos })
}

/// Baseline narratives keyed by `dataset/instance` or by instance id alone.
#[derive(Debug, Clone, Default)]
pub struct Baselines(pub BTreeMap<String, String>);

impl Baselines {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading baselines {}", path.display()))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)
            .with_context(|| format!("{}: expected a JSON object of instance id to narrative", path.display()))?;
        Ok(Baselines(map))
    }

    pub fn get(&self, table: &ShapTable) -> Option<&str> {
        self.0
            .get(&format!("{}/{}", table.dataset_id, table.instance_id))
            .or_else(|| self.0.get(&table.instance_id))
            .map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.0).expect("serializable");
        s.push('\n');
        s
    }
}

pub fn plan_path(plan_dir: &Path, instance_id: &str) -> PathBuf {
    plan_dir.join(format!("{instance_id}.json"))
}

/// The plan for `instance_id`, or `None` when the directory has no file for it.
pub fn load_plan(plan_dir: &Path, instance_id: &str) -> Result<Option<FaultPlan>> {
    let path = plan_path(plan_dir, instance_id);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let plan = serde_json::from_str(&text).with_context(|| format!("bad fault plan {}", path.display()))?;
    Ok(Some(plan))
}
