use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse};
use crate::prompt::RoleTag;

/// Currency units per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Price {
    pub input_per_million: f64,
    pub output_per_million: f64,
}

impl Price {
    pub fn cost(&self, usage: &Usage) -> f64 {
        (usage.input_tokens as f64 * self.input_per_million
            + usage.output_tokens as f64 * self.output_per_million)
            / 1_000_000.0
    }
}

/// Prices keyed by model id. Models without an entry cost nothing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub models: BTreeMap<String, Price>,
}

impl PriceTable {
    pub fn with(mut self, model_id: impl Into<String>, price: Price) -> Self {
        self.models.insert(model_id.into(), price);
        self
    }

    pub fn price(&self, model_id: &str) -> Price {
        self.models.get(model_id).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UsageKey {
    pub run_id: String,
    pub provider_id: String,
    pub role_tag: RoleTag,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: &Usage) {
        self.requests += other.requests;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
    }

    pub fn of(response: &ChatResponse) -> Usage {
        Usage {
            requests: 1,
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
        }
    }
}

/// Integer token accumulators; cost is derived from the totals on demand.
#[derive(Debug, Default)]
pub struct UsageLedger {
    prices: PriceTable,
    entries: Mutex<BTreeMap<UsageKey, Usage>>,
    by_context: Mutex<BTreeMap<(String, String, usize), Usage>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    #[serde(flatten)]
    pub key: UsageKey,
    #[serde(flatten)]
    pub usage: Usage,
    pub cost: f64,
}

impl UsageLedger {
    pub fn new(prices: PriceTable) -> Self {
        UsageLedger {
            prices,
            entries: Mutex::new(BTreeMap::new()),
            by_context: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn record(&self, request: &ChatRequest, response: &ChatResponse) {
        let key = UsageKey {
            run_id: request.context.run_id.clone(),
            provider_id: response.provider_id.clone(),
            role_tag: request.role_tag,
            model_id: request.model_id.clone(),
        };
        self.entries
            .lock()
            .expect("ledger lock")
            .entry(key)
            .or_default()
            .add(&Usage::of(response));
        let ctx = &request.context;
        self.by_context
            .lock()
            .expect("ledger lock")
            .entry((ctx.run_id.clone(), ctx.instance_id.clone(), ctx.round))
            .or_default()
            .add(&Usage::of(response));
    }

    /// Usage attributed to one (run, instance, round).
    pub fn context_usage(&self, context: &super::RequestContext) -> Usage {
        self.by_context
            .lock()
            .expect("ledger lock")
            .get(&(context.run_id.clone(), context.instance_id.clone(), context.round))
            .copied()
            .unwrap_or_default()
    }

    /// Snapshot in key order.
    pub fn lines(&self) -> Vec<LedgerLine> {
        self.entries
            .lock()
            .expect("ledger lock")
            .iter()
            .map(|(key, usage)| LedgerLine {
                cost: self.prices.price(&key.model_id).cost(usage),
                key: key.clone(),
                usage: *usage,
            })
            .collect()
    }

    pub fn total_usage(&self) -> Usage {
        let mut total = Usage::default();
        for usage in self.entries.lock().expect("ledger lock").values() {
            total.add(usage);
        }
        total
    }

    pub fn total_cost(&self) -> f64 {
        self.lines().iter().map(|l| l.cost).sum()
    }

    pub fn run_cost(&self, run_id: &str) -> f64 {
        self.lines()
            .iter()
            .filter(|l| l.key.run_id == run_id)
            .map(|l| l.cost)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::RequestContext;

    fn req(model: &str, role: RoleTag) -> ChatRequest {
        ChatRequest {
            role_tag: role,
            body: String::new(),
            temperature: 0.0,
            model_id: model.into(),
            max_output_tokens: 1,
            context: RequestContext {
                run_id: "r".into(),
                ..Default::default()
            },
        }
    }

    fn resp(input: u64, output: u64) -> ChatResponse {
        ChatResponse {
            body: "x".into(),
            input_tokens: input,
            output_tokens: output,
            latency_ms: 0,
            provider_id: "p".into(),
        }
    }

    #[test]
    fn hand_multiplied_cost() {
        // 1000 * 3.0 / 1e6 + 500 * 15.0 / 1e6 = 0.003 + 0.0075
        let prices = PriceTable::default().with(
            "m",
            Price {
                input_per_million: 3.0,
                output_per_million: 15.0,
            },
        );
        let ledger = UsageLedger::new(prices);
        ledger.record(&req("m", RoleTag::Narrator), &resp(1000, 500));
        assert!((ledger.total_cost() - 0.0105).abs() < 1e-15);
        assert!((ledger.run_cost("r") - 0.0105).abs() < 1e-15);
        assert_eq!(ledger.run_cost("other"), 0.0);
    }

    #[test]
    fn accumulates_per_role_and_is_monotone() {
        let ledger = UsageLedger::new(PriceTable::default().with(
            "m",
            Price {
                input_per_million: 1.0,
                output_per_million: 2.0,
            },
        ));
        let mut last = 0.0;
        for i in 0..10u64 {
            let role = if i % 2 == 0 { RoleTag::Narrator } else { RoleTag::Evaluator };
            ledger.record(&req("m", role), &resp(100 * i, 7));
            let now = ledger.total_cost();
            assert!(now >= last);
            last = now;
        }
        let lines = ledger.lines();
        assert_eq!(lines.len(), 2);
        let usage = ledger.total_usage();
        assert_eq!(usage.requests, 10);
        assert_eq!(usage.input_tokens, 4500);
        assert_eq!(usage.output_tokens, 70);
        let expected = (4500.0 * 1.0 + 70.0 * 2.0) / 1e6;
        assert!((ledger.total_cost() - expected).abs() < 1e-15);
    }
}
