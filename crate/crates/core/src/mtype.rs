//! Message-type identifiers and the well-known types used by the Pseudo-RIC.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Exclusive upper bound of the message-type domain (2^31).
pub const MTYPE_LIMIT: i64 = 1 << 31;

/// Integer routing key carried by every router message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mtype(pub u32);

impl Mtype {
    pub const SUBSCRIPTION_REQ: Mtype = Mtype(12010);
    pub const SUBSCRIPTION_RESP: Mtype = Mtype(12011);
    pub const RIC_INDICATION: Mtype = Mtype(12050);
    pub const HEALTH_PROBE: Mtype = Mtype(100);
    pub const HEALTH_REPLY: Mtype = Mtype(101);

    /// Returns the mtype for `raw` if it lies in `[0, 2^31)`.
    pub fn from_i64(raw: i64) -> Option<Mtype> {
        if (0..MTYPE_LIMIT).contains(&raw) {
            Some(Mtype(raw as u32))
        } else {
            None
        }
    }

    pub fn in_domain(self) -> bool {
        i64::from(self.0) < MTYPE_LIMIT
    }
}

impl fmt::Display for Mtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
