use skillspiral::catalog::InitialSkill;
use skillspiral::env::{Environment, MicroWorldEnv, ProtocolEnv};
use skillspiral::episode::{run_episode, EpisodeRequest};
use skillspiral::executor::{Executor, ExecutorConfig};
use skillspiral::microworld::{sample_task, TaskFamily};
use skillspiral::skill::Skill;
use skillspiral::trajectory::{Trajectory, DEFAULT_HORIZON};

fn run(env: &mut dyn Environment, skill: &Skill, family: TaskFamily, seed: u64, eps: f64) -> Trajectory {
    let (task, _, _) = sample_task(family, seed);
    let executor = Executor::RuleBased(ExecutorConfig {
        lapse_rate: eps,
        ..ExecutorConfig::default()
    });
    run_episode(
        env,
        &executor,
        EpisodeRequest {
            trajectory_id: format!("{family}-{seed}"),
            task: &task,
            skill,
            horizon: DEFAULT_HORIZON,
            executor_seed: seed * 31 + 7,
        },
    )
    .trajectory
    .unwrap()
}

#[test]
fn loopback_transcripts_equal_in_process_ones() {
    let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
    let mut direct = MicroWorldEnv::new(DEFAULT_HORIZON);
    let mut wire = ProtocolEnv::loopback(DEFAULT_HORIZON).unwrap();
    for family in TaskFamily::ALL {
        for seed in 0..8 {
            let a = run(&mut direct, &skill, family, seed, 0.15);
            let b = run(&mut wire, &skill, family, seed, 0.15);
            assert_eq!(a, b, "{family} seed {seed}");
        }
    }
    wire.close().unwrap();
}

#[test]
fn observed_lapse_rate_matches_epsilon() {
    let skill = Skill::initial(InitialSkill::Complete.rules()).unwrap();
    let eps = 0.15;
    let (mut applicable, mut lapses) = (0u64, 0u64);
    let mut env = MicroWorldEnv::new(DEFAULT_HORIZON);
    for seed in 0..600 {
        let family = TaskFamily::ALL[seed as usize % TaskFamily::ALL.len()];
        let traj = run(&mut env, &skill, family, seed, eps);
        for trace in traj.seed_record.sidecar.unwrap() {
            if !trace.applied_rule_ids.is_empty() {
                applicable += 1;
                lapses += u64::from(trace.lapse);
            }
        }
    }
    let m = applicable as f64;
    let sigma = (m * eps * (1.0 - eps)).sqrt();
    let diff = (lapses as f64 - m * eps).abs();
    assert!(applicable > 2000, "{applicable}");
    assert!(diff <= 3.0 * sigma, "{lapses} lapses over {applicable} steps, expected {:.0} +- {:.0}", m * eps, 3.0 * sigma);
}
