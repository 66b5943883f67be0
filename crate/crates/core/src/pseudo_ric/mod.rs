//! The Pseudo-RIC: runs xApps as interpreted scripts against the router and a
//! simulated RAN on one logical clock.
//!
//! Per tick the runtime (1) advances the scenario and delivers due
//! indications, (2) steps every live xApp in endpoint-id order, and (3) runs
//! due health probes. Deploy and undeploy happen between ticks.

mod script;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_vec;
use crate::manifest::XAppManifest;
use crate::mtype::Mtype;
use crate::router::{EndpointId, RmrMessage, RouteTable, RouterError, RouterStats};
use crate::scenario::{EventKind, KpmRequest, Scenario, ScenarioEvent, WorldView};

pub use script::{
    Action, BehaviorScript, HealthBehavior, NodeSelector, Rule, ScriptError, StepOutput,
    SubscriptionIntent,
};

/// Endpoint of the simulated E2 termination.
pub const E2TERM: &str = "e2term";
pub const DEFAULT_TICK_MS: u64 = 1000;

pub fn endpoint_for(manifest: &XAppManifest) -> EndpointId {
    EndpointId::new(format!(
        "xapp/{}/{}",
        manifest.name_str(),
        manifest.version_string()
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RicError {
    #[error("record {0} is already running")]
    AlreadyRunning(String),
    #[error("router registration failed: {0}")]
    RouterRegistrationFailed(RouterError),
    #[error("record {0} is not running")]
    NotRunning(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeState {
    pub consecutive_failures: u64,
    pub alive: bool,
    pub probes_run: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub sim_time_ms: u64,
    pub probe_number: u64,
    pub ok: bool,
    pub consecutive_failures: u64,
    pub alive: bool,
    /// Runtime-log sequence number of the PROBE event.
    pub event_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunningXApp {
    pub record_id: String,
    pub endpoint_id: EndpointId,
    pub manifest: XAppManifest,
    pub script: BehaviorScript,
    pub probe_state: ProbeState,
    pub probe_history: Vec<ProbeResult>,
    pub observed_tx: BTreeMap<Mtype, u64>,
    pub observed_rx: BTreeMap<Mtype, u64>,
    /// Types the script wanted to receive that the manifest does not declare,
    /// with the runtime-log sequence number of the refusal.
    pub refused_rx: BTreeMap<Mtype, u64>,
    pub deployed_at_ms: u64,
    pub ignored: u64,
}

impl RunningXApp {
    pub fn failure_threshold(&self) -> u64 {
        self.manifest.health.failure_threshold.max(1) as u64
    }

    pub fn liveness_period_ms(&self) -> u64 {
        self.manifest.health.liveness_period_ms.max(1) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: u64,
    pub endpoint_id: EndpointId,
    pub gnb_id: u32,
    pub report_period_ms: u64,
    pub created_at: u64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuntimeEventKind {
    Deployed {
        record_id: String,
        endpoint: EndpointId,
    },
    Undeployed {
        record_id: String,
        endpoint: EndpointId,
    },
    RxRegistrationRefused {
        endpoint: EndpointId,
        mtype: Mtype,
    },
    Subscribed {
        subscription_id: u64,
        endpoint: EndpointId,
        gnb_id: u32,
        report_period_ms: u64,
    },
    SubscriptionRejected {
        endpoint: EndpointId,
        reason: String,
    },
    SubscriptionCancelled {
        subscription_id: u64,
    },
    RuleLog {
        endpoint: EndpointId,
        mtype: Mtype,
        correlation_id: Option<String>,
    },
    Unmatched {
        endpoint: EndpointId,
        mtype: Mtype,
    },
    Probe {
        endpoint: EndpointId,
        ok: bool,
        consecutive_failures: u64,
    },
    XappDied {
        endpoint: EndpointId,
        record_id: String,
    },
    ScenarioLoaded {
        gnbs: usize,
        ues: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeEvent {
    pub seq: u64,
    pub sim_time_ms: u64,
    #[serde(flatten)]
    pub kind: RuntimeEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XAppStatus {
    pub record_id: String,
    pub endpoint: EndpointId,
    pub alive: bool,
    pub consecutive_failures: u64,
    pub probes_run: u64,
    pub observed_tx: BTreeMap<Mtype, u64>,
    pub observed_rx: BTreeMap<Mtype, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicStatus {
    pub sim_time_ms: u64,
    pub tick_ms: u64,
    pub scenario_loaded: bool,
    pub router: RouterStats,
    pub endpoints: Vec<EndpointId>,
    pub running: Vec<XAppStatus>,
    pub subscriptions: Vec<Subscription>,
}

/// Everything a deploy needs from the registry.
#[derive(Debug, Clone)]
pub struct DeployRequest {
    pub record_id: String,
    pub manifest: XAppManifest,
    pub script: BehaviorScript,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubscriptionRequestBody {
    gnb_id: u32,
    report_period_ms: u64,
}

#[derive(Debug, Clone)]
pub struct PseudoRic {
    router: RouteTable,
    scenario: Option<Scenario>,
    running: BTreeMap<EndpointId, RunningXApp>,
    by_record: BTreeMap<String, EndpointId>,
    subscriptions: Vec<Subscription>,
    events: Vec<RuntimeEvent>,
    sim_time_ms: u64,
    tick_ms: u64,
    next_subscription: u64,
    next_correlation: u64,
}

impl PseudoRic {
    pub fn new(scenario: Option<Scenario>) -> Self {
        let mut router = RouteTable::new();
        router
            .register_endpoint(
                EndpointId::new(E2TERM),
                BTreeSet::from([Mtype::SUBSCRIPTION_REQ]),
                BTreeSet::from([Mtype::SUBSCRIPTION_RESP, Mtype::RIC_INDICATION]),
            )
            .expect("fresh router");
        let (sim_time_ms, tick_ms) = scenario
            .as_ref()
            .map_or((0, DEFAULT_TICK_MS), |s| (s.sim_time_ms(), s.tick_ms()));
        Self {
            router,
            scenario,
            running: BTreeMap::new(),
            by_record: BTreeMap::new(),
            subscriptions: Vec::new(),
            events: Vec::new(),
            sim_time_ms,
            tick_ms,
            next_subscription: 1,
            next_correlation: 1,
        }
    }

    pub fn with_tick_ms(mut self, tick_ms: u64) -> Self {
        if self.scenario.is_none() && tick_ms > 0 {
            self.tick_ms = tick_ms;
        }
        self
    }

    pub fn router(&self) -> &RouteTable {
        &self.router
    }

    /// Raw router access, e.g. for injecting traffic from outside any xApp.
    pub fn router_mut(&mut self) -> &mut RouteTable {
        &mut self.router
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.scenario.as_ref()
    }

    pub fn sim_time_ms(&self) -> u64 {
        self.sim_time_ms
    }

    pub fn tick_ms(&self) -> u64 {
        self.tick_ms
    }

    pub fn events(&self) -> &[RuntimeEvent] {
        &self.events
    }

    pub fn event(&self, seq: u64) -> Option<&RuntimeEvent> {
        self.events.get(seq as usize).filter(|e| e.seq == seq)
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }

    pub fn running(&self) -> impl Iterator<Item = &RunningXApp> {
        self.running.values()
    }

    pub fn running_by_record(&self, record_id: &str) -> Option<&RunningXApp> {
        self.by_record
            .get(record_id)
            .and_then(|e| self.running.get(e))
    }

    pub fn is_running(&self, record_id: &str) -> bool {
        self.by_record.contains_key(record_id)
    }

    pub fn snapshot(&self) -> Option<WorldView> {
        self.scenario.as_ref().map(Scenario::snapshot)
    }

    fn log(&mut self, kind: RuntimeEventKind) -> u64 {
        let seq = self.events.len() as u64;
        self.events.push(RuntimeEvent {
            seq,
            sim_time_ms: self.sim_time_ms,
            kind,
        });
        seq
    }

    /// Replaces the scenario. Existing subscriptions are cancelled and the
    /// on-start intents of live xApps are re-issued against the new gNBs.
    pub fn load_scenario(&mut self, scenario: Scenario) {
        self.cancel_subscriptions(|_| true);
        self.tick_ms = scenario.tick_ms();
        self.sim_time_ms = scenario.sim_time_ms();
        let cfg = scenario.config();
        let (gnbs, ues) = (cfg.gnbs.len(), cfg.ues.len());
        self.scenario = Some(scenario);
        self.log(RuntimeEventKind::ScenarioLoaded { gnbs, ues });
        let live: Vec<EndpointId> = self
            .running
            .values()
            .filter(|x| x.probe_state.alive)
            .map(|x| x.endpoint_id.clone())
            .collect();
        for ep in live {
            self.issue_subscriptions(&ep);
        }
        self.serve_e2term();
    }

    /// Registers the xApp with exactly its manifest declarations and issues
    /// its on-start subscriptions.
    pub fn deploy(&mut self, req: DeployRequest) -> Result<&RunningXApp, RicError> {
        if self.by_record.contains_key(&req.record_id) {
            return Err(RicError::AlreadyRunning(req.record_id));
        }
        let endpoint = endpoint_for(&req.manifest);
        let declared_rx = req.manifest.declared_rx();
        self.router
            .register_endpoint(
                endpoint.clone(),
                declared_rx.clone(),
                req.manifest.declared_tx(),
            )
            .map_err(RicError::RouterRegistrationFailed)?;

        let mut refused_rx = BTreeMap::new();
        for t in req.script.rx_interest().difference(&declared_rx) {
            let seq = self.log(RuntimeEventKind::RxRegistrationRefused {
                endpoint: endpoint.clone(),
                mtype: *t,
            });
            refused_rx.insert(*t, seq);
        }
        self.log(RuntimeEventKind::Deployed {
            record_id: req.record_id.clone(),
            endpoint: endpoint.clone(),
        });
        self.running.insert(
            endpoint.clone(),
            RunningXApp {
                record_id: req.record_id.clone(),
                endpoint_id: endpoint.clone(),
                manifest: req.manifest,
                script: req.script,
                probe_state: ProbeState {
                    consecutive_failures: 0,
                    alive: true,
                    probes_run: 0,
                },
                probe_history: Vec::new(),
                observed_tx: BTreeMap::new(),
                observed_rx: BTreeMap::new(),
                refused_rx,
                deployed_at_ms: self.sim_time_ms,
                ignored: 0,
            },
        );
        self.by_record.insert(req.record_id, endpoint.clone());
        self.issue_subscriptions(&endpoint);
        self.serve_e2term();
        Ok(&self.running[&endpoint])
    }

    pub fn undeploy(&mut self, record_id: &str) -> Result<RunningXApp, RicError> {
        let endpoint = self
            .by_record
            .remove(record_id)
            .ok_or_else(|| RicError::NotRunning(record_id.to_owned()))?;
        self.cancel_subscriptions(|s| s.endpoint_id == endpoint);
        if self.router.is_registered(&endpoint) {
            self.router
                .deregister_endpoint(&endpoint)
                .expect("checked registration");
        }
        let x = self.running.remove(&endpoint).expect("index is consistent");
        self.log(RuntimeEventKind::Undeployed {
            record_id: record_id.to_owned(),
            endpoint,
        });
        Ok(x)
    }

    fn cancel_subscriptions(&mut self, pred: impl Fn(&Subscription) -> bool) {
        let ids: Vec<u64> = self
            .subscriptions
            .iter_mut()
            .filter(|s| s.active && pred(s))
            .map(|s| {
                s.active = false;
                s.id
            })
            .collect();
        for id in ids {
            self.log(RuntimeEventKind::SubscriptionCancelled {
                subscription_id: id,
            });
        }
    }

    fn route_from_xapp(&mut self, endpoint: &EndpointId, msg: RmrMessage) {
        if let Some(x) = self.running.get_mut(endpoint) {
            *x.observed_tx.entry(msg.mtype).or_default() += 1;
        }
        self.router.route(msg);
    }

    fn issue_subscriptions(&mut self, endpoint: &EndpointId) {
        let Some(x) = self.running.get(endpoint) else {
            return;
        };
        let gnbs = self
            .scenario
            .as_ref()
            .map(Scenario::gnb_ids)
            .unwrap_or_default();
        let mut requests = Vec::new();
        for intent in &x.script.on_start {
            let targets: Vec<u32> = match intent.node_selector {
                NodeSelector::All => gnbs.clone(),
                NodeSelector::Gnb(id) => vec![id],
            };
            for gnb_id in targets {
                requests.push(SubscriptionRequestBody {
                    gnb_id,
                    report_period_ms: intent.report_period_ms,
                });
            }
        }
        for body in requests {
            let corr = format!("subreq-{}", self.next_correlation);
            self.next_correlation += 1;
            let msg = RmrMessage::new(
                Mtype::SUBSCRIPTION_REQ,
                endpoint.clone(),
                to_canonical_vec(&body).expect("serializable"),
                self.sim_time_ms,
            )
            .with_correlation(Some(corr));
            self.route_from_xapp(endpoint, msg);
        }
    }

    /// The E2 termination: turns subscription requests into subscriptions.
    fn serve_e2term(&mut self) {
        let e2 = EndpointId::new(E2TERM);
        let inbox = self
            .router
            .drain(&e2, usize::MAX)
            .expect("e2term is registered");
        for req in inbox {
            let parsed: Result<SubscriptionRequestBody, _> = serde_json::from_slice(&req.payload);
            let verdict = match parsed {
                Err(e) => Err(format!("unreadable subscription request: {e}")),
                Ok(body) => {
                    let known = self
                        .scenario
                        .as_ref()
                        .is_some_and(|s| s.gnb_ids().contains(&body.gnb_id));
                    if !known {
                        Err(format!("unknown gNB {}", body.gnb_id))
                    } else if body.report_period_ms < self.tick_ms {
                        Err(format!(
                            "report period {} ms is shorter than the {} ms tick",
                            body.report_period_ms, self.tick_ms
                        ))
                    } else if !self
                        .running
                        .get(&req.source)
                        .is_some_and(|x| x.probe_state.alive)
                    {
                        Err(format!("`{}` is not a live xApp", req.source))
                    } else {
                        Ok(body)
                    }
                }
            };
            let response = match verdict {
                Ok(body) => {
                    let id = self.next_subscription;
                    self.next_subscription += 1;
                    self.subscriptions.push(Subscription {
                        id,
                        endpoint_id: req.source.clone(),
                        gnb_id: body.gnb_id,
                        report_period_ms: body.report_period_ms,
                        created_at: self.sim_time_ms,
                        active: true,
                    });
                    self.log(RuntimeEventKind::Subscribed {
                        subscription_id: id,
                        endpoint: req.source.clone(),
                        gnb_id: body.gnb_id,
                        report_period_ms: body.report_period_ms,
                    });
                    serde_json::json!({"accepted": true, "subscription_id": id, "gnb_id": body.gnb_id})
                }
                Err(reason) => {
                    self.log(RuntimeEventKind::SubscriptionRejected {
                        endpoint: req.source.clone(),
                        reason: reason.clone(),
                    });
                    serde_json::json!({"accepted": false, "reason": reason})
                }
            };
            let resp = RmrMessage::new(
                Mtype::SUBSCRIPTION_RESP,
                e2.clone(),
                to_canonical_vec(&response).expect("serializable"),
                self.sim_time_ms,
            )
            .with_correlation(req.correlation_id.clone());
            self.router.route_directed(resp, &req.source);
        }
    }

    /// Drains the xApp's mailbox and applies its rules.
    pub fn step_xapp(&mut self, endpoint: &EndpointId) -> Vec<RmrMessage> {
        let Some(x) = self.running.get(endpoint) else {
            return Vec::new();
        };
        if !x.probe_state.alive {
            return Vec::new();
        }
        let inbox = self
            .router
            .drain(endpoint, usize::MAX)
            .expect("live xApps are registered");
        let out = x.script.apply(endpoint, &inbox, self.sim_time_ms);
        {
            let x = self.running.get_mut(endpoint).expect("checked above");
            for m in &inbox {
                *x.observed_rx.entry(m.mtype).or_default() += 1;
            }
            x.ignored += out.ignored.len() as u64;
        }
        for (mtype, correlation_id) in &out.logged {
            self.log(RuntimeEventKind::RuleLog {
                endpoint: endpoint.clone(),
                mtype: *mtype,
                correlation_id: correlation_id.clone(),
            });
        }
        for (mtype, _) in out.ignored.iter().filter(|(_, by_rule)| !by_rule) {
            self.log(RuntimeEventKind::Unmatched {
                endpoint: endpoint.clone(),
                mtype: *mtype,
            });
        }
        for m in &out.outgoing {
            self.route_from_xapp(endpoint, m.clone());
        }
        out.outgoing
    }

    /// Runs one health probe against the xApp's scripted health behavior.
    pub fn probe(&mut self, endpoint: &EndpointId) -> Option<ProbeResult> {
        let now = self.sim_time_ms;
        let x = self.running.get_mut(endpoint)?;
        if !x.probe_state.alive {
            return None;
        }
        x.probe_state.probes_run += 1;
        let ok = x.script.health_behavior.probe_ok(x.probe_state.probes_run);
        x.probe_state.consecutive_failures = if ok {
            0
        } else {
            x.probe_state.consecutive_failures + 1
        };
        x.probe_state.alive = x.probe_state.consecutive_failures < x.failure_threshold();
        let (probe_number, cf, alive, record_id) = (
            x.probe_state.probes_run,
            x.probe_state.consecutive_failures,
            x.probe_state.alive,
            x.record_id.clone(),
        );
        let event_seq = self.log(RuntimeEventKind::Probe {
            endpoint: endpoint.clone(),
            ok,
            consecutive_failures: cf,
        });
        let result = ProbeResult {
            sim_time_ms: now,
            probe_number,
            ok,
            consecutive_failures: cf,
            alive,
            event_seq,
        };
        self.running
            .get_mut(endpoint)
            .expect("present")
            .probe_history
            .push(result);
        if !alive {
            self.cancel_subscriptions(|s| s.endpoint_id == *endpoint);
            let _ = self.router.deregister_endpoint(endpoint);
            self.log(RuntimeEventKind::XappDied {
                endpoint: endpoint.clone(),
                record_id,
            });
        }
        Some(result)
    }

    /// Advances the logical clock by one tick.
    pub fn tick(&mut self) -> Vec<ScenarioEvent> {
        let prev = self.sim_time_ms;
        let scenario_events = match self.scenario.as_mut() {
            Some(scenario) => {
                let requests: Vec<KpmRequest> = self
                    .subscriptions
                    .iter()
                    .filter(|s| s.active)
                    .map(|s| KpmRequest {
                        subscription_id: s.id,
                        gnb_id: s.gnb_id,
                        period_ms: s.report_period_ms,
                        created_at_ms: s.created_at,
                    })
                    .collect();
                let evs = scenario.tick(&requests);
                self.sim_time_ms = scenario.sim_time_ms();
                evs
            }
            None => {
                self.sim_time_ms += self.tick_ms;
                Vec::new()
            }
        };
        let now = self.sim_time_ms;

        let e2 = EndpointId::new(E2TERM);
        for ev in &scenario_events {
            if let EventKind::KpmReport {
                subscription_id,
                payload,
                ..
            } = &ev.kind
            {
                let Some(sub) = self.subscriptions.iter().find(|s| s.id == *subscription_id) else {
                    continue;
                };
                let target = sub.endpoint_id.clone();
                let msg = RmrMessage::new(
                    Mtype::RIC_INDICATION,
                    e2.clone(),
                    to_canonical_vec(payload).expect("serializable"),
                    now,
                )
                .with_correlation(Some(format!("sub-{subscription_id}")));
                self.router.route_directed(msg, &target);
            }
        }
        self.serve_e2term();

        let live: Vec<EndpointId> = self
            .running
            .values()
            .filter(|x| x.probe_state.alive)
            .map(|x| x.endpoint_id.clone())
            .collect();
        for ep in &live {
            self.step_xapp(ep);
        }

        for ep in &live {
            let due = self.running.get(ep).is_some_and(|x| {
                let period = x.liveness_period_ms();
                let since = |t: u64| t.saturating_sub(x.deployed_at_ms) / period;
                now > x.deployed_at_ms && since(now) > since(prev)
            });
            if due {
                self.probe(ep);
            }
        }
        scenario_events
    }

    pub fn run_for(&mut self, duration_ms: u64) {
        let end = self.sim_time_ms + duration_ms;
        while self.sim_time_ms < end {
            self.tick();
        }
    }

    pub fn status(&self) -> RicStatus {
        RicStatus {
            sim_time_ms: self.sim_time_ms,
            tick_ms: self.tick_ms,
            scenario_loaded: self.scenario.is_some(),
            router: self.router.stats().clone(),
            endpoints: self.router.endpoint_ids().cloned().collect(),
            running: self
                .running
                .values()
                .map(|x| XAppStatus {
                    record_id: x.record_id.clone(),
                    endpoint: x.endpoint_id.clone(),
                    alive: x.probe_state.alive,
                    consecutive_failures: x.probe_state.consecutive_failures,
                    probes_run: x.probe_state.probes_run,
                    observed_tx: x.observed_tx.clone(),
                    observed_rx: x.observed_rx.clone(),
                })
                .collect(),
            subscriptions: self.subscriptions.clone(),
        }
    }
}
