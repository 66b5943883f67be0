//! Deterministic log-distance propagation, no fading.

use super::config::{GnbConfig, Position, RadioParams};

/// `pl0 + 10·n·log10(max(d, d0)/d0)`
pub fn path_loss_db(radio: &RadioParams, distance_m: f64) -> f64 {
    let d = distance_m.max(radio.ref_dist_m);
    radio.pl0_db + 10.0 * radio.path_loss_exponent * (d / radio.ref_dist_m).log10()
}

pub fn rsrp_dbm(radio: &RadioParams, gnb: &GnbConfig, ue: Position) -> f64 {
    gnb.tx_power_dbm - path_loss_db(radio, gnb.position.distance(ue))
}

/// Shannon spectral efficiency with RSRP over the noise floor as the SNR.
pub fn throughput_bps_per_hz(rsrp_dbm: f64, noise_floor_dbm: f64) -> f64 {
    (1.0 + 10f64.powf((rsrp_dbm - noise_floor_dbm) / 10.0)).log2()
}

/// Index of the strongest gNB; ties go to the lowest id.
pub fn best_gnb(radio: &RadioParams, gnbs: &[GnbConfig], ue: Position) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for g in gnbs {
        let p = rsrp_dbm(radio, g, ue);
        best = match best {
            Some((id, bp)) if bp > p || (bp == p && id < g.id) => Some((id, bp)),
            _ => Some((g.id, p)),
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gnb(id: u32, x: f64) -> GnbConfig {
        GnbConfig {
            id,
            position: Position::new(x, 0.0),
            tx_power_dbm: 30.0,
        }
    }

    #[test]
    fn reference_distance_and_clamp() {
        let r = RadioParams::default();
        assert_eq!(path_loss_db(&r, 1.0), 40.0);
        assert_eq!(rsrp_dbm(&r, &gnb(1, 0.0), Position::new(1.0, 0.0)), -10.0);
        assert_eq!(rsrp_dbm(&r, &gnb(1, 0.0), Position::new(0.0, 0.0)), -10.0);
        assert_eq!(path_loss_db(&r, 0.25), 40.0);
    }

    #[test]
    fn hundred_metres() {
        let r = RadioParams::default();
        let p = rsrp_dbm(&r, &gnb(1, 0.0), Position::new(0.0, 100.0));
        assert!((p - -70.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn spectral_efficiency() {
        // 0 dB SNR -> log2(2) = 1
        assert!((throughput_bps_per_hz(-100.0, -100.0) - 1.0).abs() < 1e-12);
        assert!(throughput_bps_per_hz(-250.0, -100.0) >= 0.0);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let r = RadioParams::default();
        let gnbs = [gnb(7, 10.0), gnb(3, -10.0)];
        assert_eq!(best_gnb(&r, &gnbs, Position::new(0.0, 0.0)).unwrap().0, 3);
        let gnbs = [gnb(3, -10.0), gnb(7, 10.0)];
        assert_eq!(best_gnb(&r, &gnbs, Position::new(0.0, 0.0)).unwrap().0, 3);
        assert_eq!(best_gnb(&r, &gnbs, Position::new(9.0, 0.0)).unwrap().0, 7);
    }
}
