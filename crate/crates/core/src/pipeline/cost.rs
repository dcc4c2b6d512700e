use serde::{Deserialize, Serialize};

use super::{Component, PipelineTrace};

/// Token totals per component. Fractional so that per-question averages
/// can be stored in the same shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentTokens {
    pub reader: f64,
    pub proxy: f64,
    pub rewriter: f64,
    pub judge: f64,
    #[serde(default)]
    pub self_eval: f64,
}

impl ComponentTokens {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Reader => self.reader,
            Component::Proxy => self.proxy,
            Component::Rewriter => self.rewriter,
            Component::Judge => self.judge,
            Component::SelfEval => self.self_eval,
        }
    }

    pub fn add(&mut self, c: Component, n: f64) {
        match c {
            Component::Reader => self.reader += n,
            Component::Proxy => self.proxy += n,
            Component::Rewriter => self.rewriter += n,
            Component::Judge => self.judge += n,
            Component::SelfEval => self.self_eval += n,
        }
    }

    pub fn extra_total(&self) -> f64 {
        self.proxy + self.rewriter + self.judge + self.self_eval
    }
}

/// Relative per-token cost of each non-reader component (reader = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub proxy: f64,
    pub rewriter: f64,
    pub judge: f64,
    pub self_eval: f64,
}

impl CostWeights {
    pub fn uniform(w: f64) -> Self {
        Self { proxy: w, rewriter: w, judge: w, self_eval: w }
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    #[serde(flatten)]
    pub tokens: ComponentTokens,
    pub weighted_extra_cost: f64,
    pub extra_cost_ratio: f64,
    /// Some count came from the whitespace fallback rather than the server.
    #[serde(default)]
    pub approximate: bool,
}

impl CostLedger {
    pub fn from_tokens(tokens: ComponentTokens, weights: &CostWeights) -> Self {
        let weighted_extra_cost = tokens.proxy * weights.proxy
            + tokens.rewriter * weights.rewriter
            + tokens.judge * weights.judge
            + tokens.self_eval * weights.self_eval;
        let extra_cost_ratio = if tokens.reader > 0.0 { weighted_extra_cost / tokens.reader } else { 0.0 };
        Self { tokens, weighted_extra_cost, extra_cost_ratio, approximate: false }
    }
}

/// Ledger for one trace: prompt plus completion tokens per component.
pub fn account_cost(trace: &PipelineTrace, weights: &CostWeights) -> CostLedger {
    let mut tokens = ComponentTokens::default();
    let mut approximate = false;
    for ex in &trace.exchanges {
        tokens.add(ex.role, ex.exchange.total_tokens() as f64);
        approximate |= ex.exchange.approximate_usage;
    }
    CostLedger { approximate, ..CostLedger::from_tokens(tokens, weights) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_ledger() {
        let t = ComponentTokens { reader: 200.0, proxy: 24.0, rewriter: 35.0, judge: 3.0, self_eval: 0.0 };
        let l = CostLedger::from_tokens(t, &CostWeights::uniform(0.1));
        // 0.1 * (24 + 35 + 3) = 6.2 ; 6.2 / 200 = 0.031
        assert!((l.weighted_extra_cost - 6.2).abs() < 1e-9);
        assert!((l.extra_cost_ratio - 0.031).abs() < 1e-12);
    }

    #[test]
    fn no_extra_components() {
        let l = CostLedger::from_tokens(ComponentTokens { reader: 50.0, ..Default::default() }, &CostWeights::uniform(0.1));
        assert_eq!(l.extra_cost_ratio, 0.0);
    }

    #[test]
    fn unit_weights_give_raw_sum() {
        let t = ComponentTokens { reader: 192.86, proxy: 24.42, rewriter: 35.27, judge: 3.38, self_eval: 0.0 };
        let l = CostLedger::from_tokens(t, &CostWeights::default());
        assert!((l.weighted_extra_cost - t.extra_total()).abs() < 1e-12);
    }
}
