//! Registry, onboarding pipeline and live Pseudo-RIC behind one owner.
//!
//! Onboarding is split so a caller holding the store behind a lock can run
//! the expensive acceptance test without it: [`Store::begin_onboarding`]
//! validates and returns a [`TestJob`], [`TestJob::run`] is pure, and
//! [`Store::finish_testing`] files the report.

use std::path::{Path, PathBuf};

use crate::archive::PackageArchive;
use crate::conformance::{
    run_acceptance, validation_checks, AcceptancePlan, CheckSeverity, ConformanceReport, PlanError,
};
use crate::manifest::{
    validate_manifest, RicProfile, ValidationResult, Violation, ViolationCode, XAppManifest,
};
use crate::pseudo_ric::{BehaviorScript, DeployRequest, PseudoRic, RicError, RicStatus};
use crate::registry::{
    next_state, LifecycleEvent, LifecycleState, PersistError, RecoveryReport, Registry,
    RegistryError, SubmitOutcome,
};
use crate::router::ObservationLine;
use crate::scenario::{Scenario, ScenarioConfig, ScenarioError, ScenarioEvent, WorldView};

/// The scenario acceptance runs use unless configured otherwise.
pub const DEFAULT_ACCEPTANCE_SCENARIO: &str =
    include_str!("../../../scenarios/two-gnb-crossing.json");

pub fn default_acceptance_scenario() -> ScenarioConfig {
    ScenarioConfig::from_json(DEFAULT_ACCEPTANCE_SCENARIO.as_bytes())
        .expect("bundled scenario is valid")
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Runtime(#[from] RicError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("record {0} has no report yet")]
    NoReport(String),
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub profile: RicProfile,
    pub acceptance_scenario: ScenarioConfig,
    /// Tick of the live Pseudo-RIC before a scenario is loaded.
    pub tick_ms: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            profile: RicProfile::default(),
            acceptance_scenario: default_acceptance_scenario(),
            tick_ms: crate::pseudo_ric::DEFAULT_TICK_MS,
        }
    }
}

/// An acceptance test ready to run outside the store.
#[derive(Debug, Clone)]
pub struct TestJob {
    pub record_id: String,
    pub report_id: String,
    pub manifest: XAppManifest,
    pub script: BehaviorScript,
    pub plan: AcceptancePlan,
    /// Validation warnings carried into the acceptance report.
    pub carried: ValidationResult,
}

impl TestJob {
    pub fn run(&self) -> Result<ConformanceReport, PlanError> {
        let run = run_acceptance(
            &self.record_id,
            &self.report_id,
            &self.manifest,
            &self.script,
            &self.plan,
        )?;
        let mut checks = validation_checks(&self.carried);
        checks.retain(|c| c.severity != CheckSeverity::Error);
        checks.extend(run.report.checks);
        Ok(ConformanceReport::new(
            run.report.report_id,
            run.report.record_id,
            checks,
            run.report.started_at,
            run.report.finished_at,
        ))
    }
}

#[derive(Debug, Clone)]
pub enum Onboarding {
    /// Validation failed; the record is in VALIDATION_FAILED.
    Rejected(ConformanceReport),
    /// Validation passed; the record is in TESTING.
    Test(Box<TestJob>),
}

#[derive(Debug)]
pub struct Store {
    registry: Registry,
    ric: PseudoRic,
    config: StoreConfig,
    data_dir: Option<PathBuf>,
}

impl Store {
    pub fn in_memory(config: StoreConfig) -> Self {
        let ric = PseudoRic::new(None).with_tick_ms(config.tick_ms);
        Self {
            registry: Registry::new(),
            ric,
            config,
            data_dir: None,
        }
    }

    /// Loads `dir` strictly and redeploys DEPLOYED records.
    pub fn open(dir: &Path, config: StoreConfig) -> Result<Self, StoreError> {
        let registry = Registry::load(dir)?;
        Self::with_registry(registry, dir, config)
    }

    /// Like [`Store::open`] but salvages a damaged directory.
    pub fn open_recovering(
        dir: &Path,
        config: StoreConfig,
    ) -> Result<(Self, RecoveryReport), StoreError> {
        let (registry, report) = Registry::recover(dir)?;
        let mut store = Self::with_registry(registry, dir, config)?;
        store.save()?;
        Ok((store, report))
    }

    fn with_registry(
        registry: Registry,
        dir: &Path,
        config: StoreConfig,
    ) -> Result<Self, StoreError> {
        let mut store = Self {
            registry,
            ric: PseudoRic::new(None).with_tick_ms(config.tick_ms),
            config,
            data_dir: Some(dir.to_owned()),
        };
        let deployed: Vec<String> = store
            .registry
            .records()
            .filter(|r| r.state == LifecycleState::Deployed)
            .map(|r| r.id.clone())
            .collect();
        for id in deployed {
            let req = store.deploy_request(&id)?;
            store.ric.deploy(req)?;
        }
        Ok(store)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn ric(&self) -> &PseudoRic {
        &self.ric
    }

    pub fn ric_mut(&mut self) -> &mut PseudoRic {
        &mut self.ric
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    /// Persists pending changes when the store is disk-backed.
    pub fn save(&mut self) -> Result<(), StoreError> {
        if let Some(dir) = &self.data_dir {
            self.registry.persist(dir)?;
        }
        Ok(())
    }

    pub fn submit(&mut self, pkg: PackageArchive) -> Result<SubmitOutcome, StoreError> {
        let out = self.registry.submit(pkg)?;
        self.save()?;
        Ok(out)
    }

    pub fn submit_bytes(&mut self, archive: &[u8]) -> Result<SubmitOutcome, StoreError> {
        let out = self.registry.submit_bytes(archive)?;
        self.save()?;
        Ok(out)
    }

    /// Manifest validation against the RIC profile plus dependency lookup in
    /// this store.
    pub fn validate(&self, m: &XAppManifest) -> ValidationResult {
        let mut result = validate_manifest(m, &self.config.profile);
        for (i, d) in m.dependencies.iter().enumerate() {
            if self
                .registry
                .resolve(&d.name, |v| d.version.contains(v))
                .is_empty()
            {
                result.violations.push(Violation::new(
                    ViolationCode::DependencyUnresolved,
                    format!("dependencies[{i}]"),
                    format!(
                        "no {} in [{}, {}) is in the store",
                        d.name, d.version.min, d.version.max
                    ),
                ));
            }
        }
        ValidationResult::from_violations(result.violations)
    }

    /// SUBMITTED → VALIDATING → VALIDATION_FAILED or TESTING.
    ///
    /// A record left in VALIDATING or TESTING by a crash picks up where it
    /// stopped.
    pub fn begin_onboarding(&mut self, id: &str) -> Result<Onboarding, StoreError> {
        let state = self.registry.get(id)?.state;
        match state {
            LifecycleState::Submitted => {
                self.registry
                    .transition(id, LifecycleEvent::ValidationStarted)?;
            }
            LifecycleState::Validating => {}
            LifecycleState::Testing => {
                let plan = self.default_plan(id)?;
                return Ok(Onboarding::Test(Box::new(self.test_job(id, plan)?)));
            }
            _ => {
                self.registry.require_state(id, LifecycleState::Submitted)?;
            }
        }
        let rec = self.registry.get(id)?;
        let result = self.validate(&rec.manifest);
        let outcome = if result.valid {
            self.registry
                .transition(id, LifecycleEvent::ValidationPassed)?;
            let plan = self.default_plan(id)?;
            Onboarding::Test(Box::new(self.test_job(id, plan)?))
        } else {
            let report_id = self.registry.next_report_id(id)?;
            let report = ConformanceReport::new(report_id, id, validation_checks(&result), 0, 0);
            self.registry.attach_report(id, report.clone())?;
            self.registry
                .transition(id, LifecycleEvent::ValidationFailed)?;
            Onboarding::Rejected(report)
        };
        self.save()?;
        Ok(outcome)
    }

    /// Records whose onboarding has not finished.
    pub fn unfinished(&self) -> Vec<String> {
        self.registry
            .records()
            .filter(|r| {
                matches!(
                    r.state,
                    LifecycleState::Submitted
                        | LifecycleState::Validating
                        | LifecycleState::Testing
                )
            })
            .map(|r| r.id.clone())
            .collect()
    }

    fn default_plan(&self, id: &str) -> Result<AcceptancePlan, StoreError> {
        let script = &self.registry.get(id)?.package.behavior_script;
        Ok(AcceptancePlan::default_for(
            script,
            self.config.acceptance_scenario.clone(),
        ))
    }

    fn test_job(&self, id: &str, plan: AcceptancePlan) -> Result<TestJob, StoreError> {
        let rec = self.registry.require_state(id, LifecycleState::Testing)?;
        Ok(TestJob {
            record_id: id.to_owned(),
            report_id: self.registry.next_report_id(id)?,
            manifest: rec.manifest.clone(),
            script: rec.package.behavior_script.clone(),
            plan,
            carried: self.validate(&rec.manifest),
        })
    }

    /// Files an acceptance report: TESTING → AVAILABLE or TEST_FAILED.
    pub fn finish_testing(
        &mut self,
        id: &str,
        report: ConformanceReport,
    ) -> Result<LifecycleState, StoreError> {
        self.registry.require_state(id, LifecycleState::Testing)?;
        let passed = report.passed();
        self.registry.attach_report(id, report)?;
        let event = if passed {
            LifecycleEvent::TestPassed
        } else {
            LifecycleEvent::TestFailed
        };
        let state = self.registry.transition(id, event)?;
        self.save()?;
        Ok(state)
    }

    /// Runs the whole pipeline for a SUBMITTED record.
    pub fn onboard(&mut self, id: &str) -> Result<LifecycleState, StoreError> {
        match self.begin_onboarding(id)? {
            Onboarding::Rejected(_) => Ok(LifecycleState::ValidationFailed),
            Onboarding::Test(job) => {
                let report = job.run()?;
                self.finish_testing(id, report)
            }
        }
    }

    /// Acceptance-tests a record in TESTING under an explicit plan.
    pub fn run_acceptance(
        &mut self,
        id: &str,
        plan: AcceptancePlan,
    ) -> Result<ConformanceReport, StoreError> {
        let report = self.test_job(id, plan)?.run()?;
        self.finish_testing(id, report.clone())?;
        Ok(report)
    }

    pub fn latest_report(&self, id: &str) -> Result<&ConformanceReport, StoreError> {
        self.registry
            .get(id)?
            .latest_report()
            .ok_or_else(|| StoreError::NoReport(id.to_owned()))
    }

    fn deploy_request(&self, id: &str) -> Result<DeployRequest, StoreError> {
        let rec = self.registry.get(id)?;
        Ok(DeployRequest {
            record_id: id.to_owned(),
            manifest: rec.manifest.clone(),
            script: rec.package.behavior_script.clone(),
        })
    }

    fn check_transition(&self, id: &str, event: LifecycleEvent) -> Result<(), StoreError> {
        let from = self.registry.get(id)?.state;
        next_state(from, event).ok_or(RegistryError::InvalidTransition { from, event })?;
        Ok(())
    }

    /// AVAILABLE → DEPLOYED, starting the xApp in the live Pseudo-RIC.
    pub fn deploy(&mut self, id: &str) -> Result<LifecycleState, StoreError> {
        self.check_transition(id, LifecycleEvent::DeployRequested)?;
        let req = self.deploy_request(id)?;
        self.ric.deploy(req)?;
        let state = self
            .registry
            .transition(id, LifecycleEvent::DeployRequested)?;
        self.save()?;
        Ok(state)
    }

    /// DEPLOYED → AVAILABLE, stopping the xApp.
    pub fn undeploy(&mut self, id: &str) -> Result<LifecycleState, StoreError> {
        self.check_transition(id, LifecycleEvent::UndeployRequested)?;
        self.ric.undeploy(id)?;
        let state = self
            .registry
            .transition(id, LifecycleEvent::UndeployRequested)?;
        self.save()?;
        Ok(state)
    }

    pub fn retire(&mut self, id: &str) -> Result<LifecycleState, StoreError> {
        self.check_transition(id, LifecycleEvent::Retire)?;
        if self.ric.is_running(id) {
            self.ric.undeploy(id)?;
        }
        let state = self.registry.transition(id, LifecycleEvent::Retire)?;
        self.save()?;
        Ok(state)
    }

    pub fn load_scenario(&mut self, config: ScenarioConfig) -> Result<WorldView, StoreError> {
        let scenario = Scenario::new(config)?;
        self.ric.load_scenario(scenario);
        Ok(self.ric.snapshot().expect("just loaded"))
    }

    /// Advances the live runtime by `ticks` ticks.
    pub fn step(&mut self, ticks: u32) -> Vec<ScenarioEvent> {
        (0..ticks).flat_map(|_| self.ric.tick()).collect()
    }

    pub fn ric_status(&self) -> RicStatus {
        self.ric.status()
    }

    pub fn ric_logs(&self, since_seq: Option<u64>, limit: usize) -> Vec<ObservationLine> {
        self.ric
            .router()
            .log_since(since_seq)
            .take(limit)
            .map(ObservationLine::from)
            .collect()
    }

    pub fn world(&self) -> Option<WorldView> {
        self.ric.snapshot()
    }
}
