use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{render_templated_narrative, FaultPlan, SimError};
use crate::model::{DatasetInfo, FeatureRow, ShapTable};

const FEATURES: [(&str, &str); 20] = [
    ("age", "Age of the person in years"),
    ("income", "Yearly income in thousands"),
    ("tenure", "Years as a customer"),
    ("balance", "Account balance in thousands"),
    ("credit_score", "Credit score"),
    ("num_products", "Number of products held"),
    ("hours_per_week", "Working hours per week"),
    ("education_years", "Years of formal education"),
    ("glucose", "Plasma glucose concentration"),
    ("bmi", "Body mass index"),
    ("blood_pressure", "Diastolic blood pressure"),
    ("insulin", "Serum insulin level"),
    ("goals", "Goals scored in the match"),
    ("attempts", "Attempts on goal"),
    ("corners", "Corners won"),
    ("fouls", "Fouls committed"),
    ("absences", "Number of school absences"),
    ("studytime", "Weekly study time"),
    ("failures", "Number of past class failures"),
    ("goout", "Going out with friends, from 1 (very low) to 5 (very high)"),
];

pub const SYNTH_DATASET: &str = "synthetic";

pub fn synth_info() -> DatasetInfo {
    DatasetInfo {
        dataset_description: "A synthetic tabular dataset used for simulated runs.".into(),
        target_description: "A binary outcome, 1 for the positive class.".into(),
        task_description: "Binary classification of the outcome.".into(),
        feature_descriptions: FEATURES.iter().map(|(n, d)| (n.to_string(), d.to_string())).collect(),
    }
}

/// A random table with `rows` features whose |SHAP| values are distinct at three decimals.
pub fn synth_table(rng: &mut ChaCha8Rng, instance_id: &str, rows: usize) -> ShapTable {
    let rows = rows.clamp(1, FEATURES.len());
    let mut names: Vec<&(&str, &str)> = FEATURES.iter().collect();
    names.shuffle(rng);
    let mut magnitudes: Vec<u32> = (1..=400).collect::<Vec<_>>();
    magnitudes.shuffle(rng);
    let mut magnitudes = magnitudes[..rows].to_vec();
    magnitudes.sort_unstable_by(|a, b| b.cmp(a));
    let probability = f64::from(rng.gen_range(1..1000u32)) / 1000.0;
    ShapTable {
        dataset_id: SYNTH_DATASET.into(),
        instance_id: instance_id.into(),
        predicted_class: u8::from(probability >= 0.5),
        probability_class1: probability,
        rows: names[..rows]
            .iter()
            .zip(magnitudes)
            .map(|((name, desc), m)| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                FeatureRow {
                    feature_name: name.to_string(),
                    shap_value: sign * f64::from(m) / 1000.0,
                    feature_value: f64::from(rng.gen_range(0..100u32)),
                    feature_average: f64::from(rng.gen_range(0..1000u32)) / 10.0,
                    feature_description: desc.to_string(),
                }
            })
            .collect(),
    }
}

/// One to three faults over the top `n` features; at most one rank swap.
pub fn synth_plan(rng: &mut ChaCha8Rng, table: &ShapTable, n: usize) -> FaultPlan {
    let top: Vec<String> = table.rows.iter().take(n).map(|r| r.feature_name.clone()).collect();
    let mut plan = FaultPlan {
        seed: rng.gen(),
        ..FaultPlan::default()
    };
    let faults = rng.gen_range(1..=3);
    for _ in 0..faults {
        match rng.gen_range(0..3) {
            0 if plan.rank_swaps.is_empty() && n >= 2 => {
                let i = rng.gen_range(0..n);
                let j = (i + rng.gen_range(1..n)) % n;
                plan.rank_swaps.push((i.min(j), i.max(j)));
            }
            1 => {
                let name = top.choose(rng).expect("n >= 1").clone();
                if !plan.sign_flips.contains(&name) {
                    plan.sign_flips.push(name);
                }
            }
            _ => {
                let name = top.choose(rng).expect("n >= 1").clone();
                if plan.value_perturbations.iter().all(|(f, _)| f != &name) {
                    let delta = *[-2.0, -1.0, -0.5, 0.5, 1.0, 3.0].choose(rng).expect("non-empty");
                    plan.value_perturbations.push((name, delta));
                }
            }
        }
    }
    if plan.is_identity() {
        plan.sign_flips.push(top[0].clone());
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub table: ShapTable,
    pub plan: FaultPlan,
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCorpus {
    pub info: DatasetInfo,
    pub cases: Vec<SimCase>,
}

/// `m` instances, exactly `faulty` of them with a non-identity fault plan.
pub fn synth_corpus(seed: u64, m: usize, faulty: usize, n: usize, rows: usize) -> Result<SimCorpus, SimError> {
    if faulty > m {
        return Err(SimError::InvalidPlan(format!("{faulty} faulty instances requested out of {m}")));
    }
    if n == 0 || n > rows.min(FEATURES.len()) {
        return Err(SimError::InvalidPlan(format!("n = {n} does not fit {rows} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_faulty: Vec<bool> = (0..m).map(|i| i < faulty).collect();
    is_faulty.shuffle(&mut rng);
    let mut cases = Vec::with_capacity(m);
    for (i, faulty) in is_faulty.into_iter().enumerate() {
        let table = synth_table(&mut rng, &format!("{i:03}"), rows);
        let plan = if faulty { synth_plan(&mut rng, &table, n) } else { FaultPlan::default() };
        let baseline = render_templated_narrative(&table, n, &plan)?;
        cases.push(SimCase { table, plan, baseline });
    }
    Ok(SimCorpus {
        info: synth_info(),
        cases,
    })
}
