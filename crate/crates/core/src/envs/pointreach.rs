//! A point mass accelerating in a square arena toward a goal.
//!
//! Observation: `[goal.x - x, goal.y - y, vx, vy]`. Action: 2-D acceleration
//! in units of `max_accel`. Semi-implicit Euler: velocity is updated first,
//! clamped to `max_speed`, then position. Hitting the arena edge clips the
//! position and zeroes the velocity component into the wall.
//!
//! True reward per step is `-|pos - goal|` after moving, plus `goal_bonus`
//! for every step that ends inside the goal radius. Episodes always run for
//! `episode_len` steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvError, Environment, StepOutcome};
use crate::rng::StreamRng;
use crate::types::{ActionVector, Frame, Point, RobotPose, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointReachConfig {
    /// Arena spans `[-half_width, half_width]` on both axes (m).
    pub half_width: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub dt: f64,
    pub episode_len: usize,
    pub goal_radius: f64,
    pub goal_bonus: f64,
    /// Goals are placed uniformly at least this far inside the arena edge.
    pub goal_margin: f64,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        Self {
            half_width: 1.0,
            max_speed: 1.0,
            max_accel: 2.0,
            dt: 0.1,
            episode_len: 100,
            goal_radius: 0.1,
            goal_bonus: 1.0,
            goal_margin: 0.1,
        }
    }
}

impl PointReachConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [self.half_width, self.max_speed, self.max_accel, self.dt, self.goal_radius];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.episode_len == 0 {
            return Err(EnvError::Config("pointreach dimensions must be positive".into()));
        }
        if !(0.0..self.half_width).contains(&self.goal_margin) {
            return Err(EnvError::Config("goal margin must lie inside the arena".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointReachState {
    pub pos: Point,
    pub vel: Point,
    pub goal: Point,
    pub step: usize,
}

pub struct PointReach {
    config: PointReachConfig,
    rng: StreamRng,
    state: PointReachState,
    last_reward: f64,
}

impl PointReach {
    pub fn new(config: PointReachConfig, rng: StreamRng) -> Result<Self, EnvError> {
        config.validate()?;
        let origin = Point { x: 0.0, y: 0.0 };
        let state = PointReachState { pos: origin, vel: origin, goal: origin, step: 0 };
        let mut env = Self { config, rng, state, last_reward: 0.0 };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &PointReachConfig {
        &self.config
    }

    pub fn state(&self) -> PointReachState {
        self.state
    }

    pub fn set_state(&mut self, state: PointReachState) {
        self.state = state;
    }

    fn distance_to_goal(&self) -> f64 {
        (self.state.pos.x - self.state.goal.x).hypot(self.state.pos.y - self.state.goal.y)
    }
}

impl Environment for PointReach {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self) -> StateVector {
        let hw = self.config.half_width;
        let g = hw - self.config.goal_margin;
        let pos = Point { x: self.rng.random_range(-hw..hw), y: self.rng.random_range(-hw..hw) };
        let goal = Point { x: self.rng.random_range(-g..=g), y: self.rng.random_range(-g..=g) };
        self.state = PointReachState { pos, vel: Point { x: 0.0, y: 0.0 }, goal, step: 0 };
        self.last_reward = 0.0;
        self.observation()
    }

    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError> {
        let [ax, ay, _] = check_action(action, 2)?;
        let c = &self.config;
        let s = &mut self.state;
        s.vel.x += ax * c.max_accel * c.dt;
        s.vel.y += ay * c.max_accel * c.dt;
        let speed = s.vel.x.hypot(s.vel.y);
        if speed > c.max_speed {
            s.vel.x *= c.max_speed / speed;
            s.vel.y *= c.max_speed / speed;
        }
        s.pos.x += s.vel.x * c.dt;
        s.pos.y += s.vel.y * c.dt;
        for (p, v) in [(&mut s.pos.x, &mut s.vel.x), (&mut s.pos.y, &mut s.vel.y)] {
            if p.abs() > c.half_width {
                *p = p.clamp(-c.half_width, c.half_width);
                *v = 0.0;
            }
        }
        s.step += 1;
        let d = self.distance_to_goal();
        let reached = d <= self.config.goal_radius;
        self.last_reward = -d + if reached { self.config.goal_bonus } else { 0.0 };
        let done = self.state.step >= self.config.episode_len;
        Ok(StepOutcome { observation: self.observation(), done })
    }

    fn observation(&self) -> StateVector {
        let s = &self.state;
        StateVector(vec![s.goal.x - s.pos.x, s.goal.y - s.pos.y, s.vel.x, s.vel.y])
    }

    fn frame(&self) -> Frame {
        let s = &self.state;
        Frame {
            t: s.step as u64,
            robot: RobotPose {
                x: s.pos.x,
                y: s.pos.y,
                vx: s.vel.x,
                vy: s.vel.y,
                heading: s.vel.y.atan2(s.vel.x),
                gain: 0.0,
            },
            humans: vec![],
            goal: s.goal,
            lidar: vec![],
        }
    }

    fn last_true_reward(&self) -> f64 {
        self.last_reward
    }
}
