//! The run state machine: ingest, predict, sentiment, decide, emit, on the
//! highest healthy tier of a three-tier fallback ladder.
//!
//! Runs reach execution only through [`PolicyGateway`]; this module has no
//! access to the pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::desk::{ActionOutcome, ActionRequest, PolicyGateway};
use crate::fabric::{validate_emission, CanonicalTimestamp, Emission, ValidationStatus};
use crate::sentiment::{
    divergence_detect, lexicon_score, stack_fuse, tokenize, Divergence, FusionConfig, Modality,
    ModalityScore,
};
use crate::subnet::{PredictionSource, UpliftSwitch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Remote,
    InProcess,
    Legacy,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Remote => "REMOTE",
            Tier::InProcess => "IN_PROCESS",
            Tier::Legacy => "LEGACY",
        }
    }

    pub fn status(self) -> ValidationStatus {
        match self {
            Tier::Remote => ValidationStatus::Valid,
            Tier::InProcess => ValidationStatus::Degraded,
            Tier::Legacy => ValidationStatus::Fallback,
        }
    }

    fn nodes(self) -> &'static [Node] {
        match self {
            Tier::Legacy => &[Node::Ingest, Node::Decide, Node::Emit],
            _ => &[Node::Ingest, Node::Predict, Node::Sentiment, Node::Decide, Node::Emit],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Node {
    Ingest,
    Predict,
    Sentiment,
    Decide,
    Emit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeOutcome {
    Ok,
    Failed(String),
    TierUnavailable,
}

/// Routes an action through the gateway. A denial is audited there.
pub fn invoke_action(
    gateway: &mut dyn PolicyGateway,
    action: &ActionRequest,
    clock: CanonicalTimestamp,
) -> ActionOutcome {
    gateway.submit(action, clock)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierHealth {
    pub remote: bool,
    pub in_process: bool,
}

impl Default for TierHealth {
    fn default() -> Self {
        Self { remote: true, in_process: true }
    }
}

impl TierHealth {
    fn healthy(self, tier: Tier) -> bool {
        match tier {
            Tier::Remote => self.remote,
            Tier::InProcess => self.in_process,
            Tier::Legacy => true,
        }
    }
}

/// Seeded unreliability for the remote tier: each remote node fails
/// independently with `failure_probability`.
#[derive(Debug, Clone)]
pub struct FailureInjector {
    failure_probability: f64,
    rng: ChaCha8Rng,
}

impl FailureInjector {
    pub fn new(failure_probability: f64, seed: u64) -> Self {
        Self { failure_probability, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn never() -> Self {
        Self::new(0.0, 0)
    }

    fn remote_node_fails(&mut self) -> bool {
        self.failure_probability > 0.0 && self.rng.random::<f64>() < self.failure_probability
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub run_id: String,
    pub at: CanonicalTimestamp,
    pub text: String,
    pub onchain_flow: f64,
    pub grey_feed: f64,
    /// Prediction from the standalone calibration path.
    pub standalone_p: f64,
    /// Prediction from the subnet, when one is available.
    pub subnet_p: Option<f64>,
    pub proposed_action: Option<ActionRequest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub tier_used: Tier,
    pub node_trace: Vec<(Tier, Node, NodeOutcome)>,
    pub emission: Emission,
    pub action_outcome: Option<ActionOutcome>,
    pub emission_seq: Option<u64>,
}

/// Stateless apart from the uplift switch and the injector's RNG. The
/// gateway is passed per run so the runtime never holds it.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub fusion: FusionConfig,
    pub uplift: UpliftSwitch,
    pub injector: FailureInjector,
}

struct Working {
    prediction: Option<(f64, PredictionSource)>,
    sentiment: Option<(f64, Divergence)>,
    decision: String,
    action: Option<ActionOutcome>,
}

impl Runtime {
    /// Walks the node sequence on the highest healthy tier. A failed node
    /// restarts the run one tier down; the legacy tier cannot fail, so every
    /// run ends in a schema-valid emission.
    pub fn execute_run(
        &mut self,
        gateway: &mut dyn PolicyGateway,
        inputs: &RunInputs,
        health: TierHealth,
    ) -> RunRecord {
        let mut trace = Vec::new();
        for tier in [Tier::Remote, Tier::InProcess, Tier::Legacy] {
            if !health.healthy(tier) {
                trace.push((tier, Node::Ingest, NodeOutcome::TierUnavailable));
                continue;
            }
            if let Some(record) = self.attempt(gateway, tier, inputs, &mut trace) {
                return record;
            }
        }
        unreachable!("the legacy tier always completes")
    }

    fn attempt(
        &mut self,
        gateway: &mut dyn PolicyGateway,
        tier: Tier,
        inputs: &RunInputs,
        trace: &mut Vec<(Tier, Node, NodeOutcome)>,
    ) -> Option<RunRecord> {
        let mut w = Working { prediction: None, sentiment: None, decision: "HOLD".into(), action: None };
        for &node in tier.nodes() {
            if tier == Tier::Remote && self.injector.remote_node_fails() {
                trace.push((tier, node, NodeOutcome::Failed("injected remote failure".into())));
                return None;
            }
            match node {
                Node::Ingest | Node::Emit => {}
                Node::Predict => {
                    let served = self.uplift.serve(inputs.standalone_p, inputs.subnet_p);
                    w.prediction = Some((served.p, served.source));
                }
                Node::Sentiment => match self.sentiment(inputs) {
                    Ok(s) => w.sentiment = Some(s),
                    Err(e) => {
                        trace.push((tier, node, NodeOutcome::Failed(e)));
                        return None;
                    }
                },
                Node::Decide => {
                    if let Some(action) = &inputs.proposed_action {
                        w.decision = format!("PROPOSE_{:?}", action.kind).to_uppercase();
                        w.action = Some(invoke_action(gateway, action, inputs.at));
                    }
                }
            }
            trace.push((tier, node, NodeOutcome::Ok));
        }
        let emission = self.emission(tier, inputs, &w);
        let emission_seq = gateway.record_emission(&emission, inputs.at).ok();
        Some(RunRecord {
            run_id: inputs.run_id.clone(),
            tier_used: tier,
            node_trace: trace.clone(),
            emission,
            action_outcome: w.action,
            emission_seq,
        })
    }

    fn sentiment(&self, inputs: &RunInputs) -> Result<(f64, Divergence), String> {
        let text = lexicon_score(&tokenize(&inputs.text));
        let scores: Vec<ModalityScore> = [
            (Modality::Text, text, "lexicon"),
            (Modality::OnchainFlow, inputs.onchain_flow, "onchain"),
            (Modality::GreyFeed, inputs.grey_feed, "grey-feed"),
        ]
        .into_iter()
        .map(|(modality, score, provenance)| ModalityScore {
            modality,
            score,
            observed_at: inputs.at,
            provenance: provenance.into(),
        })
        .collect();
        let fused = stack_fuse(&scores, &self.fusion).map_err(|e| e.to_string())?;
        Ok((fused, divergence_detect(fused, inputs.onchain_flow, self.fusion.divergence_threshold)))
    }

    fn emission(&self, tier: Tier, inputs: &RunInputs, w: &Working) -> Emission {
        let mut body = Map::new();
        body.insert("tier".into(), Value::from(tier.as_str()));
        body.insert("decision".into(), Value::from(w.decision.clone()));
        let (p, source) = w.prediction.unwrap_or((inputs.standalone_p, PredictionSource::Standalone));
        body.insert("prediction".into(), json!({ "p": p, "source": source }));
        if let Some((fused, divergence)) = w.sentiment {
            body.insert("sentiment".into(), json!({ "fused": fused, "divergence": divergence }));
            let cohort = if divergence == Divergence::Flag { "DEGRADED" } else { "OK" };
            body.insert("cohort_status".into(), Value::from(cohort));
        }
        if let Some(outcome) = &w.action {
            body.insert("action".into(), serde_json::to_value(outcome).expect("serialisable"));
        }
        let emission = Emission {
            run_id: inputs.run_id.clone(),
            produced_at: inputs.at,
            validation_status: tier.status(),
            body,
        };
        debug_assert!(validate_emission(&emission.to_document()).is_ok());
        emission
    }
}
