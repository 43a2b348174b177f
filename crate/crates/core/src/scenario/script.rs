use crate::coordination::{Task, TaskRequest};
use crate::protocol::{PhoneSample, Timestamp, UnitQuat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Speed of the `step` trajectory's ramp, m/s.
pub const STEP_RAMP_SPEED: f64 = 0.25;
/// Random walks reflect off a cube of this half-width around the start.
pub const WALK_BOUND: f64 = 0.1;
/// Per-sample jump a violating user sends, far beyond any sane speed limit.
pub const VIOLATION_DELTA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    Lissajous { amplitude_m: f64, freq_hz: f64 },
    Step { offset: Vec3 },
    RandomWalk { step_m: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    CompleteAfter { secs: f64 },
    DisconnectAfter { secs: f64 },
    ViolateSafetyAfter { secs: f64 },
}

impl Behavior {
    pub fn secs(self) -> f64 {
        match self {
            Behavior::CompleteAfter { secs } | Behavior::DisconnectAfter { secs } | Behavior::ViolateSafetyAfter { secs } => secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedUser {
    pub user_id: String,
    #[serde(default)]
    pub arrival_s: f64,
    pub task: TaskRequest,
    pub trajectory: Trajectory,
    pub behavior: Behavior,
    /// Goes silent if still queued this long after arriving.
    #[serde(default)]
    pub queue_patience_s: Option<f64>,
}

impl ScriptedUser {
    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: f64| v.is_finite();
        let traj_ok = match &self.trajectory {
            Trajectory::Lissajous { amplitude_m, freq_hz } => finite(*amplitude_m) && finite(*freq_hz),
            Trajectory::Step { offset } => offset.is_finite(),
            Trajectory::RandomWalk { step_m, .. } => finite(*step_m),
        };
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if !(self.arrival_s >= 0.0 && finite(self.arrival_s)) {
            return Err(format!("{}: arrival_s must be finite and non-negative", self.user_id));
        }
        if !traj_ok || !(self.behavior.secs() >= 0.0 && finite(self.behavior.secs())) {
            return Err(format!("{}: trajectory and behavior parameters must be finite", self.user_id));
        }
        if self.queue_patience_s.is_some_and(|p| !(p >= 0.0 && finite(p))) {
            return Err(format!("{}: queue_patience_s must be finite and non-negative", self.user_id));
        }
        Ok(())
    }
}

/// Produces the phone samples of one scripted session. Sample `k` is sent
/// `k` control periods after the session starts; sample 0 engages the
/// clutch and carries no motion.
#[derive(Debug, Clone)]
pub struct SampleScript {
    trajectory: Trajectory,
    behavior: Behavior,
    period_s: f64,
    seq: u32,
    walk: Vec3,
    rng: ChaCha8Rng,
}

impl SampleScript {
    pub fn new(user: &ScriptedUser, rate_hz: f64) -> Self {
        let seed = match user.trajectory {
            Trajectory::RandomWalk { seed, .. } => seed,
            _ => 0,
        };
        SampleScript {
            trajectory: user.trajectory.clone(),
            behavior: user.behavior,
            period_s: 1.0 / rate_hz,
            seq: 0,
            walk: Vec3::ZERO,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn offset(&self, t: f64) -> Vec3 {
        match &self.trajectory {
            Trajectory::Lissajous { amplitude_m: a, freq_hz: f } => {
                let w = 2.0 * PI * f;
                Vec3::new(a * (w * t).sin(), a * (2.0 * w * t).sin() / 2.0, 0.0)
            }
            Trajectory::Step { offset } => {
                let len = offset.norm();
                if len == 0.0 {
                    Vec3::ZERO
                } else {
                    *offset * (STEP_RAMP_SPEED * t / len).min(1.0)
                }
            }
            Trajectory::RandomWalk { .. } => self.walk,
        }
    }

    fn orientation(&self, t: f64) -> UnitQuat {
        match &self.trajectory {
            Trajectory::Lissajous { freq_hz, .. } => {
                UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3 * (2.0 * PI * freq_hz * t).sin())
            }
            _ => UnitQuat::IDENTITY,
        }
    }

    /// Seconds after session start at which sample `seq` is due.
    pub fn due_after(&self, seq: u32) -> f64 {
        seq as f64 * self.period_s
    }

    pub fn seq(&self) -> u32 {
        self.seq
    }

    /// The next sample, stamped with the client clock `t_client`.
    pub fn next(&mut self, t_client: Timestamp) -> PhoneSample {
        let k = self.seq;
        let t = self.due_after(k);
        let delta = if k == 0 {
            Vec3::ZERO
        } else if matches!(self.behavior, Behavior::ViolateSafetyAfter { secs } if t >= secs) {
            Vec3::new(VIOLATION_DELTA, 0.0, 0.0)
        } else if let Trajectory::RandomWalk { step_m, .. } = self.trajectory {
            let dir = loop {
                let v = Vec3::new(self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0));
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v * (1.0 / n);
                }
            };
            let mut d = dir * step_m;
            let next = self.walk + d;
            for (i, c) in next.to_array().into_iter().enumerate() {
                if c.abs() > WALK_BOUND {
                    let mut a = d.to_array();
                    a[i] = -a[i];
                    d = Vec3::from_array(a);
                }
            }
            self.walk = self.walk + d;
            d
        } else {
            self.offset(t) - self.offset(t - self.period_s)
        };
        self.seq += 1;
        PhoneSample { seq: k, t_client, delta_pos: delta, orientation: self.orientation(t), clutch: true }
    }
}

/// Parameters for generating a random user population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomUsers {
    pub count: usize,
    pub arrival_window_s: f64,
    pub min_session_s: f64,
    pub max_session_s: f64,
    pub disconnect_fraction: f64,
    pub violate_fraction: f64,
    pub abandon_fraction: f64,
    pub any_task_fraction: f64,
}

impl Default for RandomUsers {
    fn default() -> Self {
        RandomUsers {
            count: 0,
            arrival_window_s: 300.0,
            min_session_s: 5.0,
            max_session_s: 40.0,
            disconnect_fraction: 0.15,
            violate_fraction: 0.05,
            abandon_fraction: 0.1,
            any_task_fraction: 0.5,
        }
    }
}

impl RandomUsers {
    /// Users `u000`, `u001`, … with arrivals uniform over the window.
    /// Specific-task requests are drawn from `tasks` so every user has at
    /// least one compatible robot.
    pub fn generate(&self, seed: u64, tasks: &[Task]) -> Vec<ScriptedUser> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrivals: Vec<f64> = (0..self.count).map(|_| rng.gen_range(0.0..=self.arrival_window_s)).collect();
        arrivals.sort_by(f64::total_cmp);
        arrivals
            .into_iter()
            .enumerate()
            .map(|(i, arrival)| {
                let task = if tasks.is_empty() || rng.gen_bool(self.any_task_fraction) {
                    TaskRequest::Any
                } else {
                    TaskRequest::Only(tasks[rng.gen_range(0..tasks.len())])
                };
                let trajectory = match rng.gen_range(0..3) {
                    0 => Trajectory::Lissajous { amplitude_m: rng.gen_range(0.01..0.06), freq_hz: rng.gen_range(0.1..0.5) },
                    1 => Trajectory::Step {
                        offset: Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
                    },
                    _ => Trajectory::RandomWalk { step_m: rng.gen_range(0.0005..0.004), seed: rng.gen() },
                };
                let secs = rng.gen_range(self.min_session_s..=self.max_session_s);
                let roll: f64 = rng.gen();
                let behavior = if roll < self.violate_fraction {
                    Behavior::ViolateSafetyAfter { secs }
                } else if roll < self.violate_fraction + self.disconnect_fraction {
                    Behavior::DisconnectAfter { secs }
                } else {
                    Behavior::CompleteAfter { secs }
                };
                let queue_patience_s = rng.gen_bool(self.abandon_fraction).then(|| rng.gen_range(10.0..120.0));
                ScriptedUser { user_id: format!("u{i:03}"), arrival_s: arrival, task, trajectory, behavior, queue_patience_s }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(trajectory: Trajectory, behavior: Behavior) -> ScriptedUser {
        ScriptedUser { user_id: "u".into(), arrival_s: 0.0, task: TaskRequest::Any, trajectory, behavior, queue_patience_s: None }
    }

    #[test]
    fn step_ramps_at_fixed_speed_then_holds() {
        let u = user(Trajectory::Step { offset: Vec3::new(0.1, 0.0, 0.0) }, Behavior::CompleteAfter { secs: 5.0 });
        let mut s = SampleScript::new(&u, 50.0);
        let mut total = Vec3::ZERO;
        for k in 0..100u32 {
            let p = s.next(Timestamp(k as u64));
            assert_eq!(p.seq, k);
            assert!(p.delta_pos.norm() <= STEP_RAMP_SPEED / 50.0 + 1e-12);
            total += p.delta_pos;
        }
        assert!((total.x - 0.1).abs() < 1e-12);
    }

    #[test]
    fn random_walk_is_bounded_and_seeded() {
        let u = user(Trajectory::RandomWalk { step_m: 0.01, seed: 9 }, Behavior::CompleteAfter { secs: 5.0 });
        let (mut a, mut b) = (SampleScript::new(&u, 50.0), SampleScript::new(&u, 50.0));
        let mut pos = Vec3::ZERO;
        for k in 0..2000 {
            let (x, y) = (a.next(Timestamp(k)), b.next(Timestamp(k)));
            assert_eq!(x, y);
            pos += x.delta_pos;
            assert!(pos.to_array().iter().all(|c| c.abs() <= WALK_BOUND + 1e-12));
        }
    }

    #[test]
    fn violation_starts_on_schedule() {
        let u = user(Trajectory::Step { offset: Vec3::ZERO }, Behavior::ViolateSafetyAfter { secs: 1.0 });
        let mut s = SampleScript::new(&u, 50.0);
        let samples: Vec<_> = (0..60).map(|k| s.next(Timestamp(k))).collect();
        assert!(samples[..50].iter().all(|p| p.delta_pos == Vec3::ZERO));
        assert!(samples[50..].iter().all(|p| p.delta_pos.x == VIOLATION_DELTA));
    }

    #[test]
    fn generated_population_is_valid_and_deterministic() {
        let gen = RandomUsers { count: 100, ..Default::default() };
        let users = gen.generate(3, &[Task::ObjectSearch]);
        assert_eq!(users, gen.generate(3, &[Task::ObjectSearch]));
        assert_ne!(users, gen.generate(4, &[Task::ObjectSearch]));
        assert!(users.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
        for u in &users {
            u.validate().unwrap();
            assert!(u.task.accepts(Task::ObjectSearch));
        }
    }
}
