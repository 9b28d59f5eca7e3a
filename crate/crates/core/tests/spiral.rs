use std::fs;
use std::sync::Arc;

use skillspiral::catalog::{reference_text, DEFECT_TEXT};
use skillspiral::evolution::{
    ablation_table, env_factory, load_reports, replay, replay_in_run, run_spiral, stage_table, EvolutionConfig, Mode,
    ReplayError, ReplayVerdict, ReportError, RevisionSource, RunDir, RunSummary, Runtime, StopReason,
};
use skillspiral::executor::Provider;
use skillspiral::gateway::{CannedTransport, Gateway, GatewayConfig, MemoryAudit};
use skillspiral::trajectory::{deserialize, serialize};
use skillspiral::vocab::RuleKind;

fn small(mode: Mode, stages: usize) -> EvolutionConfig {
    let mut c = EvolutionConfig {
        mode,
        stage_count: stages,
        ..EvolutionConfig::default()
    };
    c.test.per_family = 3;
    c
}

fn run_into(config: &EvolutionConfig, dir: &RunDir) -> skillspiral::evolution::SpiralOutcome {
    let runtime = Runtime::from_config(config, Some(dir)).unwrap();
    run_spiral(config, &runtime, Some(dir)).unwrap()
}

fn canned_runtime(config: &EvolutionConfig, replies: &[&str]) -> Runtime {
    let gateway = Gateway::new(
        GatewayConfig::default(),
        Box::new(CannedTransport::replies(replies.iter().copied())),
        Arc::new(MemoryAudit::new()),
    );
    Runtime {
        gateway: Some(Arc::new(gateway)),
        env_factory: env_factory(&config.environment, config.horizon),
    }
}

#[test]
fn single_stage_run_has_one_revision_and_two_evaluations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path().join("run")).unwrap();
    let outcome = run_into(&small(Mode::SkillAware, 1), &dir);
    assert_eq!(outcome.revisions, 1);
    assert_eq!(outcome.reports.len(), 2);
    assert_eq!(outcome.stopped, StopReason::Completed);
    assert_eq!(dir.store().unwrap().versions().unwrap(), vec![0, 1]);

    let (summary, reports) = load_reports(&dir).unwrap();
    assert_eq!(summary.evaluated_stages, vec![0, 1]);
    let table = stage_table(&reports);
    assert_eq!(table.lines().count(), 3, "{table}");
    let csv = fs::read_to_string(dir.path("stages.csv")).unwrap();
    assert!(csv.starts_with("stage,skill_version,episodes,successes,rate,put,clean_put,heat_put,cool_put,examine,put_two\n"));
    assert_eq!(csv.lines().count(), 3);
    for name in ["manifest.json", "config.toml", "summary.json", "audit/reflections.jsonl", "audit/revisions.jsonl"] {
        assert!(dir.path(name).is_file(), "{name}");
    }
}

#[test]
fn frozen_modes_store_only_the_initial_skill() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in [Mode::NoSkill, Mode::StaticSkill] {
        let dir = RunDir::create(tmp.path().join(mode.as_str())).unwrap();
        let outcome = run_into(&small(mode, 10), &dir);
        assert_eq!((outcome.revisions, outcome.train_episodes), (0, 0));
        assert_eq!(dir.store().unwrap().versions().unwrap(), vec![0]);
        assert_eq!(dir.manifest().unwrap().mode, mode.as_str());
        assert_eq!(outcome.reports.len(), 1);
    }
}

#[test]
fn unaware_rewrites_keep_the_defect() {
    let outcome = {
        let c = small(Mode::SkillUnaware, 4);
        run_spiral(&c, &Runtime::from_config(&c, None).unwrap(), None).unwrap()
    };
    assert_eq!(outcome.revisions, 4);
    assert_eq!(outcome.train_episodes, 4 * 8);
    for v in &outcome.versions {
        assert!(v.appendix.is_empty());
    }
    let texts: Vec<&str> = outcome.final_skill.live_rules().map(|r| r.text.as_str()).collect();
    assert!(texts.contains(&DEFECT_TEXT));
    assert!(texts.contains(&reference_text(RuleKind::Cool)));
}

#[test]
fn episode_cap_stops_the_run_and_evaluates_the_last_version() {
    let mut c = small(Mode::SkillAware, 10);
    c.max_train_episodes = 30;
    c.eval_every_stage = false;
    let outcome = run_spiral(&c, &Runtime::from_config(&c, None).unwrap(), None).unwrap();
    assert_eq!(outcome.stopped, StopReason::EpisodeCap);
    assert_eq!(outcome.train_episodes, 30);
    assert!(outcome.revisions < 10);
    let last = outcome.reports.last().unwrap();
    assert_eq!(last.skill_version, outcome.final_skill.version);
    assert_eq!(last.stage, outcome.revisions);
}

#[test]
fn aborted_remote_revisions_keep_the_run_alive() {
    let mut c = small(Mode::SkillAware, 2);
    c.providers.revision = RevisionSource::Remote;
    c.max_train_episodes = 40;
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path().join("run")).unwrap();
    let runtime = canned_runtime(&c, &["sorry, I cannot help with that"]);
    let outcome = run_spiral(&c, &runtime, Some(&dir)).unwrap();
    assert_eq!(outcome.revisions, 0);
    assert!(outcome.failed_revisions > 0);
    assert_eq!(outcome.final_skill.version, 0);
    let log = fs::read_to_string(dir.path("audit/revisions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), outcome.failed_revisions);
    assert!(log.lines().all(|l| l.contains("\"aborted\"")));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small(Mode::SkillAware, 3);
    let a = RunDir::create(tmp.path().join("a")).unwrap();
    let b = RunDir::create(tmp.path().join("b")).unwrap();
    let oa = run_into(&c, &a);
    let ob = run_into(&c, &b);
    assert_eq!(oa.versions, ob.versions);
    assert_eq!(
        fs::read(a.path("stages.csv")).unwrap(),
        fs::read(b.path("stages.csv")).unwrap()
    );
}

#[test]
fn tampered_log_diverges_at_the_edited_step() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path().join("run")).unwrap();
    let c = small(Mode::SkillAware, 1);
    run_into(&c, &dir);
    let factory = env_factory(&c.environment, c.horizon);
    let log = fs::read_dir(dir.path("trajectories/train"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| {
            let t = deserialize(std::io::BufReader::new(fs::File::open(p).unwrap())).unwrap();
            t.len() >= 3
        })
        .unwrap();
    assert_eq!(replay_in_run(&dir, &log, factory.as_ref()).unwrap(), ReplayVerdict::Identical);

    let mut traj = deserialize(std::io::BufReader::new(fs::File::open(&log).unwrap())).unwrap();
    traj.steps[1].action = "inventory".into();
    let tampered = tmp.path().join("tampered.jsonl");
    serialize(&traj, &mut fs::File::create(&tampered).unwrap()).unwrap();
    match replay_in_run(&dir, &tampered, factory.as_ref()).unwrap() {
        ReplayVerdict::Diverged { step, .. } => assert_eq!(step, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn remote_executor_trajectories_cannot_be_replayed() {
    let mut c = small(Mode::StaticSkill, 0);
    c.executor.provider = Provider::RemoteModel;
    c.test.per_family = 1;
    c.horizon = 3;
    let runtime = canned_runtime(&c, &["look"]);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path().join("run")).unwrap();
    let outcome = run_spiral(&c, &runtime, Some(&dir)).unwrap();
    assert_eq!(outcome.reports[0].successes, 0);
    let log = fs::read_dir(dir.path("trajectories/eval")).unwrap().next().unwrap().unwrap().path();
    let traj = deserialize(std::io::BufReader::new(fs::File::open(&log).unwrap())).unwrap();
    assert!(traj.seed_record.sidecar.is_none());
    assert!(traj.steps.iter().all(|s| s.action == "look"));
    let skill = dir.store().unwrap().load_version(0).unwrap();
    let factory = env_factory(&c.environment, c.horizon);
    assert!(matches!(replay(&traj, &skill, factory.as_ref()), Err(ReplayError::MissingSidecar(_))));
}

#[test]
fn missing_report_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path().join("run")).unwrap();
    run_into(&small(Mode::SkillAware, 2), &dir);
    fs::remove_file(dir.report_path(1)).unwrap();
    match load_reports(&dir) {
        Err(ReportError::IncompleteRun { missing, .. }) => assert!(missing.contains("stage 1"), "{missing}"),
        other => panic!("{other:?}"),
    }
    fs::remove_file(dir.path("summary.json")).unwrap();
    assert!(matches!(load_reports(&dir), Err(ReportError::IncompleteRun { .. })));
}

#[test]
fn ablation_table_orders_runs_by_final_rate() {
    let summaries: Vec<RunSummary> = Mode::ALL
        .into_iter()
        .map(|mode| {
            let c = small(mode, 3);
            let o = run_spiral(&c, &Runtime::from_config(&c, None).unwrap(), None).unwrap();
            RunSummary {
                mode: mode.to_string(),
                master_seed: c.master_seed,
                revisions: o.revisions,
                stage_count: c.stage_count,
                train_episodes: o.train_episodes,
                stopped: o.stopped.as_str().to_string(),
                evaluated_stages: o.reports.iter().map(|r| r.stage).collect(),
                final_skill_version: o.final_skill.version,
                initial_rate: o.initial_rate(),
                final_rate: o.final_rate(),
            }
        })
        .collect();
    let table = ablation_table(&summaries);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let finals: Vec<f64> = rows
        .iter()
        .map(|r| r.split_whitespace().nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(finals.windows(2).all(|w| w[0] >= w[1]), "{table}");
    assert!(rows[3].starts_with("no_skill"), "{table}");
}
