use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleState {
    Submitted,
    Validating,
    ValidationFailed,
    Testing,
    TestFailed,
    Available,
    Deployed,
    Retired,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 8] = [
        LifecycleState::Submitted,
        LifecycleState::Validating,
        LifecycleState::ValidationFailed,
        LifecycleState::Testing,
        LifecycleState::TestFailed,
        LifecycleState::Available,
        LifecycleState::Deployed,
        LifecycleState::Retired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Submitted => "SUBMITTED",
            LifecycleState::Validating => "VALIDATING",
            LifecycleState::ValidationFailed => "VALIDATION_FAILED",
            LifecycleState::Testing => "TESTING",
            LifecycleState::TestFailed => "TEST_FAILED",
            LifecycleState::Available => "AVAILABLE",
            LifecycleState::Deployed => "DEPLOYED",
            LifecycleState::Retired => "RETIRED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }

    pub fn is_failed(self) -> bool {
        matches!(
            self,
            LifecycleState::ValidationFailed | LifecycleState::TestFailed
        )
    }

    /// States that may only be entered with a passing report on file.
    pub fn is_gated(self) -> bool {
        matches!(self, LifecycleState::Available | LifecycleState::Deployed)
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LifecycleEvent {
    ValidationStarted,
    ValidationPassed,
    ValidationFailed,
    TestPassed,
    TestFailed,
    DeployRequested,
    UndeployRequested,
    Retire,
    /// A fixed package with the same name and version replaced this one.
    Superseded,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 9] = [
        LifecycleEvent::ValidationStarted,
        LifecycleEvent::ValidationPassed,
        LifecycleEvent::ValidationFailed,
        LifecycleEvent::TestPassed,
        LifecycleEvent::TestFailed,
        LifecycleEvent::DeployRequested,
        LifecycleEvent::UndeployRequested,
        LifecycleEvent::Retire,
        LifecycleEvent::Superseded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleEvent::ValidationStarted => "VALIDATION_STARTED",
            LifecycleEvent::ValidationPassed => "VALIDATION_PASSED",
            LifecycleEvent::ValidationFailed => "VALIDATION_FAILED",
            LifecycleEvent::TestPassed => "TEST_PASSED",
            LifecycleEvent::TestFailed => "TEST_FAILED",
            LifecycleEvent::DeployRequested => "DEPLOY_REQUESTED",
            LifecycleEvent::UndeployRequested => "UNDEPLOY_REQUESTED",
            LifecycleEvent::Retire => "RETIRE",
            LifecycleEvent::Superseded => "SUPERSEDED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The transition table. `None` means the pair is illegal.
pub fn next_state(from: LifecycleState, event: LifecycleEvent) -> Option<LifecycleState> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    Some(match (from, event) {
        (S::Submitted, E::ValidationStarted) => S::Validating,
        (S::Validating, E::ValidationFailed) => S::ValidationFailed,
        (S::Validating, E::ValidationPassed) => S::Testing,
        (S::Testing, E::TestFailed) => S::TestFailed,
        (S::Testing, E::TestPassed) => S::Available,
        (S::Available, E::DeployRequested) => S::Deployed,
        (S::Available, E::Retire) => S::Retired,
        (S::Deployed, E::UndeployRequested) => S::Available,
        (S::Deployed, E::Retire) => S::Retired,
        (S::ValidationFailed | S::TestFailed, E::Superseded) => S::Retired,
        _ => return None,
    })
}
