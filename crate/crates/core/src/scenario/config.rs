use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
}

impl Position {
    pub const fn new(x_m: f64, y_m: f64) -> Self {
        Self { x_m, y_m }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub width_m: f64,
    pub height_m: f64,
}

impl Arena {
    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width_m).contains(&p.x_m) && (0.0..=self.height_m).contains(&p.y_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnbConfig {
    pub id: u32,
    pub position: Position,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeConfig {
    pub id: u32,
    pub start: Position,
    #[serde(default)]
    pub waypoints: Vec<Position>,
    pub speed_mps: f64,
}

/// Log-distance propagation and handover parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub pl0_db: f64,
    pub ref_dist_m: f64,
    pub path_loss_exponent: f64,
    pub noise_floor_dbm: f64,
    pub handover_hysteresis_db: f64,
    pub bandwidth_hz: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            pl0_db: 40.0,
            ref_dist_m: 1.0,
            path_loss_exponent: 3.0,
            noise_floor_dbm: -100.0,
            handover_hysteresis_db: 3.0,
            bandwidth_hz: 20e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub tick_ms: u64,
    pub arena: Arena,
    pub gnbs: Vec<GnbConfig>,
    #[serde(default)]
    pub ues: Vec<UeConfig>,
    #[serde(default)]
    pub radio: RadioParams,
}

impl ScenarioConfig {
    pub fn from_json(raw: &[u8]) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig =
            serde_json::from_slice(raw).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.tick_ms == 0 {
            return bad("tick_ms must be positive".into());
        }
        if !(self.arena.width_m > 0.0 && self.arena.height_m > 0.0) {
            return bad("arena dimensions must be positive".into());
        }
        if self.gnbs.is_empty() {
            return bad("at least one gNB is required".into());
        }
        let mut ids = BTreeSet::new();
        for g in &self.gnbs {
            if !ids.insert(g.id) {
                return bad(format!("duplicate gNB id {}", g.id));
            }
            if !self.arena.contains(g.position) {
                return bad(format!("gNB {} lies outside the arena", g.id));
            }
            if !g.tx_power_dbm.is_finite() {
                return bad(format!("gNB {} tx power is not finite", g.id));
            }
        }
        let mut ids = BTreeSet::new();
        for u in &self.ues {
            if !ids.insert(u.id) {
                return bad(format!("duplicate UE id {}", u.id));
            }
            if !(u.speed_mps > 0.0 && u.speed_mps.is_finite()) {
                return bad(format!("UE {} speed must be positive", u.id));
            }
            if std::iter::once(&u.start)
                .chain(&u.waypoints)
                .any(|p| !self.arena.contains(*p))
            {
                return bad(format!("UE {} has a position outside the arena", u.id));
            }
        }
        let r = &self.radio;
        if r.ref_dist_m.is_nan() || r.ref_dist_m <= 0.0 {
            return bad("radio.ref_dist_m must be positive".into());
        }
        if r.handover_hysteresis_db.is_nan() || r.handover_hysteresis_db < 0.0 {
            return bad("radio.handover_hysteresis_db must be non-negative".into());
        }
        if r.bandwidth_hz.is_nan() || r.bandwidth_hz <= 0.0 {
            return bad("radio.bandwidth_hz must be positive".into());
        }
        if ![r.pl0_db, r.path_loss_exponent, r.noise_floor_dbm]
            .iter()
            .all(|x| x.is_finite())
        {
            return bad("radio parameters must be finite".into());
        }
        Ok(())
    }
}
