use skillspiral::catalog::{reference_text, InitialSkill, DEFECT_TEXT, SLOW_CLEAN_TEXT};
use skillspiral::env::MicroWorldEnv;
use skillspiral::episode::{run_episode, EpisodeRequest};
use skillspiral::executor::{Executor, ExecutorConfig};
use skillspiral::microworld::{sample_task, TaskFamily};
use skillspiral::reflection::{
    oracle_reflect, parse_reflection_reply, validate_reflection, ReflectionError, ReflectionType, ReflectionViolation,
};
use skillspiral::skill::{RuleId, Skill};
use skillspiral::trajectory::{Trajectory, DEFAULT_HORIZON};
use skillspiral::vocab::RuleKind;

fn episode(skill: &Skill, family: TaskFamily, seed: u64, eps: f64) -> Trajectory {
    let (task, _, _) = sample_task(family, seed);
    let executor = Executor::RuleBased(ExecutorConfig {
        lapse_rate: eps,
        ..ExecutorConfig::default()
    });
    run_episode(
        &mut MicroWorldEnv::new(DEFAULT_HORIZON),
        &executor,
        EpisodeRequest {
            trajectory_id: format!("{family}-{seed}"),
            task: &task,
            skill,
            horizon: DEFAULT_HORIZON,
            executor_seed: seed,
        },
    )
    .trajectory
    .unwrap()
}

fn seeded() -> Skill {
    Skill::initial(InitialSkill::Seeded.rules()).unwrap()
}

fn rule_with_text(skill: &Skill, text: &str) -> RuleId {
    skill.live_rules().find(|r| r.text == text).unwrap().rule_id.clone()
}

fn heat_id(skill: &Skill) -> RuleId {
    rule_with_text(skill, DEFECT_TEXT)
}

#[test]
fn injected_heat_defect_yields_its_correction() {
    let skill = seeded();
    let traj = episode(&skill, TaskFamily::HeatPut, 3, 0.0);
    assert!(!traj.success);
    let records = oracle_reflect(&traj, &skill, 1).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.kind, ReflectionType::SkillDefect);
    assert_eq!(r.target.as_ref(), Some(&heat_id(&skill)));
    assert_eq!(r.directive, "heat objects at the microwave");
    let step = traj.step(r.evidence.start).unwrap();
    // The cited step is the one the defective rule prescribed.
    assert!(step.action.contains("sink"), "{}", step.action);
    let trace = traj.trace(r.evidence.start).unwrap();
    assert_eq!(trace.applied_rule_ids, vec![heat_id(&skill)]);
}

#[test]
fn missing_rule_on_success_is_a_discovery() {
    let skill = seeded();
    let traj = (0..200)
        .map(|s| episode(&skill, TaskFamily::CoolPut, s, 0.0))
        .find(|t| t.success)
        .expect("some cool task succeeds without a cool rule");
    let records = oracle_reflect(&traj, &skill, 1).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].kind, ReflectionType::Discovery);
    assert_eq!(records[0].target, None);
    assert_eq!(records[0].directive, reference_text(RuleKind::Cool));
}

#[test]
fn certain_lapse_on_failure_targets_the_lapsed_rule() {
    let skill = Skill::initial(InitialSkill::Complete.rules()).unwrap();
    let traj = (0..50)
        .map(|s| episode(&skill, TaskFamily::Put, s, 1.0))
        .find(|t| !t.success)
        .unwrap();
    let first_lapse = traj
        .seed_record
        .sidecar
        .as_ref()
        .unwrap()
        .iter()
        .position(|t| t.lapse)
        .unwrap();
    let lapsed = &traj.seed_record.sidecar.as_ref().unwrap()[first_lapse].applied_rule_ids[0];
    let records = oracle_reflect(&traj, &skill, 1).unwrap();
    assert_eq!(records[0].kind, ReflectionType::ExecutionLapse);
    assert_eq!(records[0].target.as_ref(), Some(lapsed));
    assert_eq!(records[0].evidence.start, first_lapse + 1);
}

#[test]
fn skipped_look_on_success_is_an_optimization() {
    let skill = seeded();
    let clean = rule_with_text(&skill, SLOW_CLEAN_TEXT);
    let (traj, record) = (0..2000)
        .filter_map(|s| {
            let traj = episode(&skill, TaskFamily::CleanPut, s, 0.3);
            let rec = oracle_reflect(&traj, &skill, 3)
                .unwrap()
                .into_iter()
                .find(|r| r.kind == ReflectionType::Optimization)?;
            Some((traj, rec))
        })
        .next()
        .unwrap();
    assert!(traj.success);
    assert_eq!(record.target, Some(clean));
    assert_eq!(record.directive, "clean objects at the sink");
}

#[test]
fn perfect_episode_yields_nothing() {
    let skill = Skill::initial(InitialSkill::Complete.rules()).unwrap();
    for family in TaskFamily::ALL {
        let traj = episode(&skill, family, 1, 0.0);
        assert!(traj.success);
        assert!(oracle_reflect(&traj, &skill, 3).unwrap().is_empty(), "{family}");
    }
}

#[test]
fn k_caps_the_record_count() {
    let skill = seeded();
    for seed in 0..40 {
        let traj = episode(&skill, TaskFamily::PutTwo, seed, 0.5);
        for k in 1..4 {
            assert!(oracle_reflect(&traj, &skill, k).unwrap().len() <= k);
        }
    }
}

#[test]
fn oracle_needs_the_sidecar() {
    let skill = seeded();
    let mut traj = episode(&skill, TaskFamily::Put, 1, 0.0);
    traj.seed_record.sidecar = None;
    assert!(matches!(oracle_reflect(&traj, &skill, 1), Err(ReflectionError::MissingSidecar(_))));
}

#[test]
fn validation_names_each_violation() {
    let skill = seeded();
    let traj = episode(&skill, TaskFamily::HeatPut, 3, 0.0);
    let mut r = oracle_reflect(&traj, &skill, 1).unwrap().remove(0);
    assert!(validate_reflection(&r, &traj, &skill).is_empty());

    r.kind = ReflectionType::Optimization;
    r.target = Some(RuleId("r99".into()));
    r.evidence.end = traj.len() + 1;
    r.directive = " ".into();
    r.skill_version_seen = 4;
    let v = validate_reflection(&r, &traj, &skill);
    assert!(v.contains(&ReflectionViolation::TypeOutcomeMismatch {
        kind: ReflectionType::Optimization,
        success: false
    }));
    assert!(v.contains(&ReflectionViolation::DanglingTarget {
        target: RuleId("r99".into())
    }));
    assert!(v.iter().any(|x| matches!(x, ReflectionViolation::EvidenceOutOfRange { .. })));
    assert!(v.contains(&ReflectionViolation::EmptyDirective));
    assert!(v.contains(&ReflectionViolation::WrongSkillVersion { expected: 0, got: 4 }));

    r.kind = ReflectionType::SkillDefect;
    r.target = None;
    assert!(validate_reflection(&r, &traj, &skill).contains(&ReflectionViolation::MissingTarget));
}

#[test]
fn reply_parsing_is_all_or_nothing() {
    let skill = seeded();
    let traj = episode(&skill, TaskFamily::HeatPut, 3, 0.0);
    let heat = rule_with_text(&skill, DEFECT_TEXT);
    let good = format!(
        r#"[{{"type":"SKILL_DEFECT","target":"{heat}","evidence":{{"start":1,"end":2,"excerpt":""}},"directive":"heat objects at the microwave"}}]"#
    );
    let parsed = parse_reflection_reply(&good, &traj, &skill, 1).unwrap();
    assert_eq!(parsed[0].record_id, format!("{}/rf1", traj.trajectory_id));
    assert_eq!(parsed[0].skill_version_seen, 0);

    let fenced = format!("```json\n{good}\n```");
    assert!(parse_reflection_reply(&fenced, &traj, &skill, 1).is_ok());
    assert!(parse_reflection_reply("[]", &traj, &skill, 1).unwrap().is_empty());

    let two = format!("[{0},{0}]", &good[1..good.len() - 1]);
    assert!(parse_reflection_reply(&two, &traj, &skill, 1).is_err());
    assert!(parse_reflection_reply(&two, &traj, &skill, 2).is_ok());
    let discovery = good.replace("SKILL_DEFECT", "DISCOVERY");
    assert!(parse_reflection_reply(&discovery, &traj, &skill, 1).is_err());
    let extra = good.replace("\"directive\"", "\"confidence\":1,\"directive\"");
    assert!(parse_reflection_reply(&extra, &traj, &skill, 1).is_err());
}
