//! Deterministic simulated RAN: gNBs, waypoint mobility, handover and KPM reports.
//!
//! The world advances only through [`Scenario::tick`]. Nothing in this module
//! consumes router messages; xApps observe the world through KPM indications
//! and cannot steer it.

mod config;
pub mod radio;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::canonical::{round3, to_canonical_vec};

pub use config::{Arena, GnbConfig, Position, RadioParams, ScenarioConfig, UeConfig};

/// Number of trailing events carried by a [`WorldView`].
pub const RECENT_EVENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario config is not valid JSON: {0}")]
    Parse(String),
    #[error("invalid scenario config: {0}")]
    Invalid(String),
}

fn ser_round3<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round3(*x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeReport {
    pub ue_id: u32,
    #[serde(serialize_with = "ser_round3")]
    pub rsrp_dbm: f64,
    #[serde(serialize_with = "ser_round3")]
    pub throughput_bps_per_hz: f64,
}

/// Payload of a RIC indication for one gNB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmIndication {
    pub gnb_id: u32,
    pub period_ms: u64,
    pub connected_ue_count: usize,
    pub per_ue: Vec<UeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Move {
        ue: u32,
        #[serde(serialize_with = "ser_round3")]
        x_m: f64,
        #[serde(serialize_with = "ser_round3")]
        y_m: f64,
    },
    Handover {
        ue: u32,
        from: u32,
        to: u32,
        #[serde(serialize_with = "ser_round3")]
        serving_rsrp_dbm: f64,
        #[serde(serialize_with = "ser_round3")]
        target_rsrp_dbm: f64,
    },
    KpmReport {
        gnb: u32,
        subscription_id: u64,
        payload: KpmIndication,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub seq: u64,
    pub sim_time_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handover {
    pub ue: u32,
    pub from: u32,
    pub to: u32,
    pub serving_rsrp_dbm: f64,
    pub target_rsrp_dbm: f64,
}

/// A periodic report the scenario should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KpmRequest {
    pub subscription_id: u64,
    pub gnb_id: u32,
    pub period_ms: u64,
    pub created_at_ms: u64,
}

impl KpmRequest {
    /// True when a multiple of the period since creation falls in `(prev, now]`.
    pub fn is_due(&self, prev_ms: u64, now_ms: u64) -> bool {
        if self.period_ms == 0 || now_ms <= self.created_at_ms {
            return false;
        }
        let elapsed_now = (now_ms - self.created_at_ms) / self.period_ms;
        let elapsed_prev = prev_ms.saturating_sub(self.created_at_ms) / self.period_ms;
        elapsed_now > elapsed_prev
    }
}

#[derive(Debug, Clone, PartialEq)]
struct UeState {
    id: u32,
    position: Position,
    /// Closed path: start followed by the waypoints.
    path: Vec<Position>,
    /// Index into `path` of the vertex being approached.
    target: usize,
    speed_mps: f64,
}

impl UeState {
    fn new(cfg: &UeConfig) -> Self {
        let mut path = vec![cfg.start];
        path.extend(cfg.waypoints.iter().copied());
        Self {
            id: cfg.id,
            position: cfg.start,
            target: if path.len() > 1 { 1 } else { 0 },
            path,
            speed_mps: cfg.speed_mps,
        }
    }

    fn loop_length(&self) -> f64 {
        let n = self.path.len();
        (0..n)
            .map(|i| self.path[i].distance(self.path[(i + 1) % n]))
            .sum()
    }

    /// Moves along the looped polyline; returns false when the UE is stationary.
    fn advance(&mut self, mut dist: f64) -> bool {
        if self.path.len() < 2 || self.loop_length() == 0.0 {
            return false;
        }
        while dist > 0.0 {
            let goal = self.path[self.target];
            let remaining = self.position.distance(goal);
            if remaining <= dist {
                self.position = goal;
                dist -= remaining;
                self.target = (self.target + 1) % self.path.len();
            } else {
                let f = dist / remaining;
                self.position = Position::new(
                    self.position.x_m + (goal.x_m - self.position.x_m) * f,
                    self.position.y_m + (goal.y_m - self.position.y_m) * f,
                );
                dist = 0.0;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeView {
    pub id: u32,
    #[serde(serialize_with = "ser_round3")]
    pub x_m: f64,
    #[serde(serialize_with = "ser_round3")]
    pub y_m: f64,
    pub serving: u32,
}

/// Read model of the world at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldView {
    pub sim_time_ms: u64,
    pub arena: Arena,
    pub gnbs: Vec<GnbConfig>,
    pub ues: Vec<UeView>,
    pub serving_map: BTreeMap<u32, u32>,
    pub event_count: usize,
    pub recent_events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    config: ScenarioConfig,
    sim_time_ms: u64,
    ues: Vec<UeState>,
    serving: BTreeMap<u32, u32>,
    events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let mut ues: Vec<UeState> = config.ues.iter().map(UeState::new).collect();
        ues.sort_by_key(|u| u.id);
        let serving = ues
            .iter()
            .map(|u| {
                let (g, _) = radio::best_gnb(&config.radio, &config.gnbs, u.position)
                    .expect("validated: at least one gNB");
                (u.id, g)
            })
            .collect();
        Ok(Self {
            config,
            sim_time_ms: 0,
            ues,
            serving,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn sim_time_ms(&self) -> u64 {
        self.sim_time_ms
    }

    pub fn tick_ms(&self) -> u64 {
        self.config.tick_ms
    }

    pub fn gnb_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.config.gnbs.iter().map(|g| g.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn serving_map(&self) -> &BTreeMap<u32, u32> {
        &self.serving
    }

    pub fn ue_position(&self, ue: u32) -> Option<Position> {
        self.ues.iter().find(|u| u.id == ue).map(|u| u.position)
    }

    pub fn event_log(&self) -> &[ScenarioEvent] {
        &self.events
    }

    fn gnb(&self, id: u32) -> Option<&GnbConfig> {
        self.config.gnbs.iter().find(|g| g.id == id)
    }

    pub fn rsrp(&self, gnb: u32, ue_position: Position) -> Option<f64> {
        self.gnb(gnb)
            .map(|g| radio::rsrp_dbm(&self.config.radio, g, ue_position))
    }

    /// The handover the hysteresis rule calls for at the current positions.
    pub fn handover_decision(&self, ue: u32) -> Option<Handover> {
        let pos = self.ue_position(ue)?;
        let serving = *self.serving.get(&ue)?;
        let serving_rsrp = self.rsrp(serving, pos)?;
        let (best, best_rsrp) = radio::best_gnb(&self.config.radio, &self.config.gnbs, pos)?;
        (best != serving && best_rsrp > serving_rsrp + self.config.radio.handover_hysteresis_db)
            .then_some(Handover {
                ue,
                from: serving,
                to: best,
                serving_rsrp_dbm: serving_rsrp,
                target_rsrp_dbm: best_rsrp,
            })
    }

    fn push(&mut self, kind: EventKind) -> ScenarioEvent {
        let ev = ScenarioEvent {
            seq: self.events.len() as u64,
            sim_time_ms: self.sim_time_ms,
            kind,
        };
        self.events.push(ev.clone());
        ev
    }

    /// Builds the indication for `gnb_id` from the current serving map.
    pub fn kpm_indication(&self, gnb_id: u32, period_ms: u64) -> Option<KpmIndication> {
        let g = self.gnb(gnb_id)?;
        let noise = self.config.radio.noise_floor_dbm;
        let per_ue: Vec<UeReport> = self
            .ues
            .iter()
            .filter(|u| self.serving.get(&u.id) == Some(&gnb_id))
            .map(|u| {
                let rsrp = radio::rsrp_dbm(&self.config.radio, g, u.position);
                UeReport {
                    ue_id: u.id,
                    rsrp_dbm: rsrp,
                    throughput_bps_per_hz: radio::throughput_bps_per_hz(rsrp, noise),
                }
            })
            .collect();
        Some(KpmIndication {
            gnb_id,
            period_ms,
            connected_ue_count: per_ue.len(),
            per_ue,
        })
    }

    /// Advances one tick: mobility, then handovers, then due KPM reports.
    pub fn tick(&mut self, requests: &[KpmRequest]) -> Vec<ScenarioEvent> {
        let first = self.events.len();
        let prev = self.sim_time_ms;
        self.sim_time_ms += self.config.tick_ms;
        let dt_s = self.config.tick_ms as f64 / 1000.0;

        for i in 0..self.ues.len() {
            let moved = {
                let ue = &mut self.ues[i];
                ue.advance(ue.speed_mps * dt_s)
            };
            if moved {
                let ue = &self.ues[i];
                let kind = EventKind::Move {
                    ue: ue.id,
                    x_m: ue.position.x_m,
                    y_m: ue.position.y_m,
                };
                self.push(kind);
            }
        }

        let ue_ids: Vec<u32> = self.ues.iter().map(|u| u.id).collect();
        for ue in ue_ids {
            if let Some(h) = self.handover_decision(ue) {
                self.serving.insert(ue, h.to);
                self.push(EventKind::Handover {
                    ue,
                    from: h.from,
                    to: h.to,
                    serving_rsrp_dbm: h.serving_rsrp_dbm,
                    target_rsrp_dbm: h.target_rsrp_dbm,
                });
            }
        }

        let mut due: Vec<&KpmRequest> = requests
            .iter()
            .filter(|r| r.is_due(prev, self.sim_time_ms))
            .collect();
        due.sort_by_key(|r| r.subscription_id);
        for r in due {
            if let Some(payload) = self.kpm_indication(r.gnb_id, r.period_ms) {
                self.push(EventKind::KpmReport {
                    gnb: r.gnb_id,
                    subscription_id: r.subscription_id,
                    payload,
                });
            }
        }

        self.events[first..].to_vec()
    }

    pub fn snapshot(&self) -> WorldView {
        let start = self.events.len().saturating_sub(RECENT_EVENTS);
        WorldView {
            sim_time_ms: self.sim_time_ms,
            arena: self.config.arena,
            gnbs: self.config.gnbs.clone(),
            ues: self
                .ues
                .iter()
                .map(|u| UeView {
                    id: u.id,
                    x_m: u.position.x_m,
                    y_m: u.position.y_m,
                    serving: self.serving[&u.id],
                })
                .collect(),
            serving_map: self.serving.clone(),
            event_count: self.events.len(),
            recent_events: self.events[start..].to_vec(),
        }
    }

    /// Event log as JSON lines with reals rounded to three decimals.
    pub fn export_event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// Hash over the radio and mobility state (config, clock, positions, serving).
    pub fn state_digest(&self) -> String {
        let positions: Vec<(u32, u64, u64, usize)> = self
            .ues
            .iter()
            .map(|u| {
                (
                    u.id,
                    u.position.x_m.to_bits(),
                    u.position.y_m.to_bits(),
                    u.target,
                )
            })
            .collect();
        let state = serde_json::json!({
            "config": self.config,
            "sim_time_ms": self.sim_time_ms,
            "positions": positions,
            "serving": self.serving,
        });
        hex::encode(Sha256::digest(
            to_canonical_vec(&state).expect("serializable"),
        ))
    }
}
