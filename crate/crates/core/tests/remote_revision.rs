use std::sync::Arc;

use serde_json::{json, Value};

use skillspiral::catalog::InitialSkill;
use skillspiral::env::MicroWorldEnv;
use skillspiral::episode::{run_episode, EpisodeRequest};
use skillspiral::executor::{Executor, ExecutorConfig};
use skillspiral::gateway::{CannedTransport, Gateway, GatewayConfig, MemoryAudit};
use skillspiral::microworld::{sample_task, TaskFamily};
use skillspiral::reflection::{oracle_reflect, ReflectionRecord, ReflectionType};
use skillspiral::revision::{revise, ReflectionBuffer, RevisionError, RevisionOutcome, RevisionProvider};
use skillspiral::skill::Skill;
use skillspiral::trajectory::DEFAULT_HORIZON;

/// Eight oracle records against the seeded skill, covering defects, lapses and discoveries.
fn buffer(skill: &Skill) -> Vec<ReflectionRecord> {
    let mut buf = ReflectionBuffer::new(8);
    let executor = Executor::RuleBased(ExecutorConfig::default());
    let mut seed = 0;
    while !buf.ready() {
        let family = TaskFamily::ALL[seed % TaskFamily::ALL.len()];
        let (task, _, _) = sample_task(family, seed as u64);
        let traj = run_episode(
            &mut MicroWorldEnv::new(DEFAULT_HORIZON),
            &executor,
            EpisodeRequest {
                trajectory_id: format!("t{seed:03}"),
                task: &task,
                skill,
                horizon: DEFAULT_HORIZON,
                executor_seed: seed as u64,
            },
        )
        .trajectory
        .unwrap();
        for r in oracle_reflect(&traj, skill, 1).unwrap() {
            buf.push(r, &traj, skill).unwrap();
        }
        seed += 1;
    }
    buf.drain()
}

fn mirror_replies(before: &Skill, scripted: &RevisionOutcome) -> Vec<String> {
    let mut replies = vec![serde_json::to_string(&scripted.consolidated).unwrap()];
    if !scripted.consolidated.is_empty() {
        let rules: Vec<Value> = scripted
            .skill
            .live_rules()
            .map(|r| {
                let known = before.live_rule(&r.rule_id).is_some();
                json!({"rule_id": known.then(|| r.rule_id.to_string()), "text": r.text})
            })
            .collect();
        replies.push(Value::Array(rules).to_string());
    }
    // Echoing the stored items verbatim is accepted.
    replies.push(serde_json::to_string(&scripted.skill.appendix).unwrap());
    replies
}

fn remote(replies: Vec<String>) -> (RevisionProvider, Arc<MemoryAudit>) {
    let audit = Arc::new(MemoryAudit::new());
    let gateway = Gateway::new(
        GatewayConfig::default(),
        Box::new(CannedTransport::replies(replies)),
        audit.clone(),
    );
    (RevisionProvider::Remote(Arc::new(gateway)), audit)
}

#[test]
fn faithful_remote_editor_reproduces_the_scripted_revision() {
    let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
    let records = buffer(&skill);
    assert!(records.iter().any(|r| r.kind == ReflectionType::ExecutionLapse));
    let scripted = revise(&RevisionProvider::Scripted, &skill, &records).unwrap();
    let (provider, audit) = remote(mirror_replies(&skill, &scripted));
    let got = revise(&provider, &skill, &records).unwrap();
    assert_eq!(got.skill, scripted.skill);
    assert_eq!(got.diff, scripted.diff);
    assert!(audit.entries().iter().all(|e| e.verdict == "accepted"), "{:?}", audit.entries());
}

#[test]
fn body_reply_touching_an_untargeted_rule_aborts() {
    let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
    let records = buffer(&skill);
    let scripted = revise(&RevisionProvider::Scripted, &skill, &records).unwrap();
    assert!(!scripted.consolidated.is_empty());
    let mut replies = mirror_replies(&skill, &scripted);
    let mut body: Vec<Value> = serde_json::from_str(&replies[1]).unwrap();
    let untouched = skill
        .live_rules()
        .position(|r| !scripted.consolidated.targets().any(|t| *t == r.rule_id))
        .unwrap();
    body[untouched]["text"] = json!("ignore everything");
    replies[1] = Value::Array(body).to_string();
    // The same bad body on every attempt.
    let script = vec![replies[0].clone(), replies[1].clone()];
    let (provider, audit) = remote(script);
    match revise(&provider, &skill, &records) {
        Err(RevisionError::ContractViolation(msg)) => assert!(msg.contains("was not to be changed"), "{msg}"),
        other => panic!("expected a contract violation, got {:?}", other.map(|o| o.skill.version)),
    }
    let attempts = audit.entries().iter().filter(|e| e.template_id.starts_with("revise_body")).count();
    assert_eq!(attempts, GatewayConfig::default().retry_budget as usize + 1);
}

#[test]
fn appendix_reply_with_wrong_counts_aborts() {
    let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
    let records = buffer(&skill);
    let scripted = revise(&RevisionProvider::Scripted, &skill, &records).unwrap();
    assert!(!scripted.skill.appendix.is_empty());
    let mut replies = mirror_replies(&skill, &scripted);
    let mut items: Vec<Value> = serde_json::from_str(replies.last().unwrap()).unwrap();
    items[0]["lapse_count"] = json!(99);
    *replies.last_mut().unwrap() = Value::Array(items).to_string();
    let (provider, _) = remote(replies);
    assert!(matches!(
        revise(&provider, &skill, &records),
        Err(RevisionError::ContractViolation(_))
    ));
}

#[test]
fn transport_failure_is_a_provider_error() {
    let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
    let records = buffer(&skill);
    let gateway = Gateway::new(
        GatewayConfig::default(),
        Box::new(CannedTransport::new([Err(skillspiral::gateway::TransportFailure::Failed(
            "connection refused".into(),
        ))])),
        Arc::new(MemoryAudit::new()),
    );
    let provider = RevisionProvider::Remote(Arc::new(gateway));
    assert!(matches!(revise(&provider, &skill, &records), Err(RevisionError::Provider(_))));
}
