use std::fmt;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::governance::EscalationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleId {
    BuyOnly,
    NoDeployerWallet,
    LiveRequiresTwoFlagsPlusApproval,
    CapRaiseRequiresRationaleAndApproval,
    NoHumanImpersonation,
}

impl RuleId {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::BuyOnly => "BUY_ONLY",
            RuleId::NoDeployerWallet => "NO_DEPLOYER_WALLET",
            RuleId::LiveRequiresTwoFlagsPlusApproval => "LIVE_REQUIRES_TWO_FLAGS_PLUS_APPROVAL",
            RuleId::CapRaiseRequiresRationaleAndApproval => "CAP_RAISE_REQUIRES_RATIONALE_AND_APPROVAL",
            RuleId::NoHumanImpersonation => "NO_HUMAN_IMPERSONATION",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WalletId(pub String);

impl WalletId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for WalletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered rule list. Rules are checked in order and the first denial
/// is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleConstitution {
    pub role_name: String,
    pub rules: Vec<RuleId>,
    pub deployer_wallets: Vec<WalletId>,
}

impl RoleConstitution {
    pub fn trader(deployer_wallet: WalletId) -> Self {
        Self {
            role_name: "Trader".into(),
            rules: vec![
                RuleId::BuyOnly,
                RuleId::NoDeployerWallet,
                RuleId::LiveRequiresTwoFlagsPlusApproval,
                RuleId::CapRaiseRequiresRationaleAndApproval,
                RuleId::NoHumanImpersonation,
            ],
            deployer_wallets: vec![deployer_wallet],
        }
    }

    pub fn contains(&self, rule: RuleId) -> bool {
        self.rules.contains(&rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Buy,
    Sell,
    LiveFlip,
    CapRaise,
    Resume,
    TopUp,
}

/// The two independent configuration gates that must both be set before
/// live execution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveFlags {
    pub live_trading_enabled: bool,
    pub execution_wallet_armed: bool,
}

impl LiveFlags {
    pub fn both_set(self) -> bool {
        self.live_trading_enabled && self.execution_wallet_armed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedAction {
    pub kind: ActionKind,
    pub wallet: WalletId,
    pub flags: LiveFlags,
    pub mode: Mode,
    /// Escalation id of the approval this action relies on.
    pub approval_ref: Option<String>,
    /// Set when the action claims to be taken in a human's name.
    pub on_behalf_of: Option<String>,
}

/// Read-only access to approved escalations.
pub trait GovernanceView {
    /// Kind and rationale of an approved escalation, if `escalation_id`
    /// names one.
    fn approved(&self, escalation_id: &str) -> Option<(EscalationKind, &str)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "rule", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Allow,
    Deny(RuleId),
}

impl Verdict {
    pub fn is_allow(self) -> bool {
        matches!(self, Verdict::Allow)
    }
}

pub fn check_constitution(
    action: &ProposedAction,
    constitution: &RoleConstitution,
    governance: &dyn GovernanceView,
) -> Verdict {
    for &rule in &constitution.rules {
        if !rule_passes(rule, action, constitution, governance) {
            return Verdict::Deny(rule);
        }
    }
    Verdict::Allow
}

fn approved_as(governance: &dyn GovernanceView, reference: Option<&str>, kind: EscalationKind) -> Option<String> {
    let (k, rationale) = governance.approved(reference?)?;
    (k == kind).then(|| rationale.to_string())
}

fn rule_passes(
    rule: RuleId,
    action: &ProposedAction,
    constitution: &RoleConstitution,
    governance: &dyn GovernanceView,
) -> bool {
    let reference = action.approval_ref.as_deref();
    match rule {
        RuleId::BuyOnly => action.kind != ActionKind::Sell,
        RuleId::NoDeployerWallet => !constitution.deployer_wallets.contains(&action.wallet),
        RuleId::LiveRequiresTwoFlagsPlusApproval => match action.kind {
            ActionKind::LiveFlip => {
                action.flags.both_set()
                    && approved_as(governance, reference, EscalationKind::LiveFlip).is_some()
            }
            ActionKind::Buy | ActionKind::Sell => action.flags.both_set() && action.mode == Mode::Live,
            _ => true,
        },
        RuleId::CapRaiseRequiresRationaleAndApproval => match action.kind {
            ActionKind::CapRaise => approved_as(governance, reference, EscalationKind::CapRaise)
                .is_some_and(|r| !r.trim().is_empty()),
            _ => true,
        },
        RuleId::NoHumanImpersonation => action.on_behalf_of.is_none(),
    }
}
