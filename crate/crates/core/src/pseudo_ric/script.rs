//! Declarative xApp behavior scripts (`behavior.json`).

use std::collections::BTreeSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::mtype::Mtype;
use crate::router::{EndpointId, RmrMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSelector {
    All,
    Gnb(u32),
}

impl NodeSelector {
    pub fn matches(self, gnb: u32) -> bool {
        match self {
            NodeSelector::All => true,
            NodeSelector::Gnb(id) => id == gnb,
        }
    }
}

impl Serialize for NodeSelector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NodeSelector::All => s.serialize_str("*"),
            NodeSelector::Gnb(id) => s.serialize_u32(*id),
        }
    }
}

impl<'de> Deserialize<'de> for NodeSelector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(id) => Ok(NodeSelector::Gnb(id)),
            Raw::Text(s) if s == "*" => Ok(NodeSelector::All),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "node_selector must be \"*\" or a gNB id, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionIntent {
    pub node_selector: NodeSelector,
    pub report_period_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Action {
    Log,
    Reply {
        mtype: Mtype,
        #[serde(default)]
        payload_template: String,
    },
    Send {
        mtype: Mtype,
        #[serde(default)]
        payload_template: String,
    },
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub match_mtype: Mtype,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum HealthBehavior {
    #[default]
    AlwaysOk,
    FailAfter {
        n: u64,
    },
}

impl HealthBehavior {
    /// Outcome of the `probe_number`-th probe (1-based).
    pub fn probe_ok(self, probe_number: u64) -> bool {
        match self {
            HealthBehavior::AlwaysOk => true,
            HealthBehavior::FailAfter { n } => probe_number <= n,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorScript {
    #[serde(default)]
    pub on_start: Vec<SubscriptionIntent>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub health_behavior: HealthBehavior,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScriptError {
    #[error("behavior script is malformed: {0}")]
    Malformed(String),
    #[error("behavior script uses mtype {0} outside the mtype domain")]
    MtypeDomain(u32),
    #[error("subscription intent {0} has a zero report period")]
    ZeroPeriod(usize),
}

/// What one interpreter step produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub outgoing: Vec<RmrMessage>,
    /// (mtype, correlation) of messages handled by a LOG rule.
    pub logged: Vec<(Mtype, Option<String>)>,
    /// Messages handled by IGNORE or matched by no rule.
    pub ignored: Vec<(Mtype, bool)>,
}

impl BehaviorScript {
    pub fn parse(raw: &[u8]) -> Result<Self, ScriptError> {
        let script: BehaviorScript =
            serde_json::from_slice(raw).map_err(|e| ScriptError::Malformed(e.to_string()))?;
        script.check()?;
        Ok(script)
    }

    pub fn check(&self) -> Result<(), ScriptError> {
        for t in self.mtypes() {
            if !t.in_domain() {
                return Err(ScriptError::MtypeDomain(t.0));
            }
        }
        if let Some(i) = self.on_start.iter().position(|s| s.report_period_ms == 0) {
            return Err(ScriptError::ZeroPeriod(i));
        }
        Ok(())
    }

    fn mtypes(&self) -> impl Iterator<Item = Mtype> + '_ {
        self.rules.iter().flat_map(|r| {
            let out = match &r.action {
                Action::Reply { mtype, .. } | Action::Send { mtype, .. } => Some(*mtype),
                _ => None,
            };
            std::iter::once(r.match_mtype).chain(out)
        })
    }

    /// Message types the script expects to receive.
    pub fn rx_interest(&self) -> BTreeSet<Mtype> {
        let mut out: BTreeSet<Mtype> = self.rules.iter().map(|r| r.match_mtype).collect();
        if !self.on_start.is_empty() {
            out.insert(Mtype::RIC_INDICATION);
        }
        out
    }

    pub fn max_report_period_ms(&self) -> Option<u64> {
        self.on_start.iter().map(|s| s.report_period_ms).max()
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::canonical::to_canonical_vec(self).expect("serializable")
    }

    /// Applies first-hit rules to `inbox`. Pure: same inputs, same output.
    pub fn apply(&self, endpoint: &EndpointId, inbox: &[RmrMessage], now_ms: u64) -> StepOutput {
        let mut out = StepOutput::default();
        for msg in inbox {
            match self.rules.iter().find(|r| r.match_mtype == msg.mtype) {
                None => out.ignored.push((msg.mtype, false)),
                Some(rule) => match &rule.action {
                    Action::Log => out.logged.push((msg.mtype, msg.correlation_id.clone())),
                    Action::Ignore => out.ignored.push((msg.mtype, true)),
                    Action::Reply {
                        mtype,
                        payload_template,
                    } => out.outgoing.push(
                        RmrMessage::new(
                            *mtype,
                            endpoint.clone(),
                            render(payload_template, msg, endpoint, now_ms),
                            now_ms,
                        )
                        .with_correlation(msg.correlation_id.clone()),
                    ),
                    Action::Send {
                        mtype,
                        payload_template,
                    } => out.outgoing.push(RmrMessage::new(
                        *mtype,
                        endpoint.clone(),
                        render(payload_template, msg, endpoint, now_ms),
                        now_ms,
                    )),
                },
            }
        }
        out
    }
}

/// Substitutes `{in_mtype}`, `{source}`, `{self}`, `{sim_time_ms}` and `{correlation_id}`.
fn render(template: &str, trigger: &RmrMessage, me: &EndpointId, now_ms: u64) -> Vec<u8> {
    template
        .replace("{in_mtype}", &trigger.mtype.to_string())
        .replace("{source}", trigger.source.as_str())
        .replace("{self}", me.as_str())
        .replace("{sim_time_ms}", &now_ms.to_string())
        .replace(
            "{correlation_id}",
            trigger.correlation_id.as_deref().unwrap_or(""),
        )
        .into_bytes()
}
