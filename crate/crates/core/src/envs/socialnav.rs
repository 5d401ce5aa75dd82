//! A robot crossing a corridor among walking humans.
//!
//! The corridor spans `x ∈ [0, length]`, `y ∈ [-width/2, width/2]`. The robot
//! carries a commanded heading and speed plus a social-force gain. An action
//! `[a_h, a_s, a_g]` turns by `a_h * heading_rate`, changes speed by
//! `a_s * speed_rate` and changes the gain by `a_g * gain_rate` within
//! `gain_range`; episodes start from a uniformly drawn gain. The realised
//! velocity is the commanded motion plus the social-force displacement from
//! humans and the two side walls, clamped to `max_speed`.
//!
//! Observation: `[lidar_0 .. lidar_{n-1}, goal_x, goal_y, speed, gain]` where
//! the goal offset is in the robot's body frame (x forward, y left) and
//! `speed` is the commanded speed.
//!
//! True reward: `w_goal * progress + w_arrival * at_goal - w_proximity * proximity
//! - w_collision * hit`, where `progress` is the decrease in goal distance per
//! second, `at_goal` marks steps ending inside the goal radius, `proximity` is
//! `max(0, comfort - d) / comfort` for the nearest human centre distance `d`,
//! and `hit` marks overlap of robot and human discs. Episodes always run for
//! `episode_len` steps, so arriving sooner earns more arrival reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{compute_lidar, distance, social_force, Wall};
use super::{check_action, EnvError, Environment, StepOutcome};
use crate::rng::StreamRng;
use crate::types::{ActionVector, Frame, Point, RobotPose, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialNavConfig {
    pub length: f64,
    pub width: f64,
    pub human_count: usize,
    pub human_speed: (f64, f64),
    pub human_radius: f64,
    pub robot_radius: f64,
    pub lidar_rays: usize,
    pub lidar_range: f64,
    pub gain_range: (f64, f64),
    pub length_scale: f64,
    pub max_speed: f64,
    /// Per-step change at full action for heading (rad) and speed (m/s).
    pub heading_rate: f64,
    pub speed_rate: f64,
    /// Per-step gain change at full action.
    pub gain_rate: f64,
    pub dt: f64,
    pub episode_len: usize,
    pub goal_radius: f64,
    pub comfort_distance: f64,
    pub w_goal: f64,
    pub w_arrival: f64,
    pub w_proximity: f64,
    pub w_collision: f64,
    /// Sentiment of a high "speed" extreme for the oracle.
    pub speed_high_positive: bool,
}

impl Default for SocialNavConfig {
    fn default() -> Self {
        Self {
            length: 8.0,
            width: 3.0,
            human_count: 3,
            human_speed: (0.3, 0.7),
            human_radius: 0.25,
            robot_radius: 0.25,
            lidar_rays: 16,
            lidar_range: 4.0,
            gain_range: (0.0, 2.0),
            length_scale: 1.0,
            max_speed: 1.0,
            heading_rate: 0.3,
            speed_rate: 0.2,
            gain_rate: 0.1,
            dt: 0.1,
            episode_len: 150,
            goal_radius: 0.3,
            comfort_distance: 1.2,
            w_goal: 1.0,
            w_arrival: 1.0,
            w_proximity: 0.5,
            w_collision: 5.0,
            speed_high_positive: true,
        }
    }
}

impl SocialNavConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            self.length,
            self.width,
            self.human_radius,
            self.robot_radius,
            self.lidar_range,
            self.length_scale,
            self.max_speed,
            self.dt,
            self.goal_radius,
            self.comfort_distance,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.episode_len == 0 {
            return Err(EnvError::Config("socialnav dimensions must be positive".into()));
        }
        if self.lidar_rays < 4 {
            return Err(EnvError::Config("at least 4 lidar rays required".into()));
        }
        if !(self.gain_range.0 >= 0.0 && self.gain_range.0 < self.gain_range.1) {
            return Err(EnvError::Config("gain range must satisfy 0 <= g_min < g_max".into()));
        }
        if !(self.human_speed.0 > 0.0 && self.human_speed.0 <= self.human_speed.1) {
            return Err(EnvError::Config("human speeds must be positive and ordered".into()));
        }
        if self.width <= 2.0 * (self.robot_radius + 0.2) || self.length <= 3.0 {
            return Err(EnvError::Config("corridor too small".into()));
        }
        Ok(())
    }

    pub fn walls(&self) -> [Wall; 4] {
        let (l, h) = (self.length, self.width / 2.0);
        [Wall::new(0.0, -h, l, -h), Wall::new(l, -h, l, h), Wall::new(l, h, 0.0, h), Wall::new(0.0, h, 0.0, -h)]
    }
}

/// A human pacing between two waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Human {
    pub pos: Point,
    pub waypoints: [Point; 2],
    pub target: usize,
    pub speed: f64,
}

impl Human {
    fn advance(&mut self, dt: f64) {
        let mut budget = self.speed * dt;
        // At most two legs per step; waypoints are far apart relative to one step.
        for _ in 0..2 {
            let goal = self.waypoints[self.target];
            let d = distance(self.pos, goal);
            if d > budget {
                self.pos.x += (goal.x - self.pos.x) / d * budget;
                self.pos.y += (goal.y - self.pos.y) / d * budget;
                return;
            }
            self.pos = goal;
            budget -= d;
            self.target = 1 - self.target;
        }
    }

    fn velocity(&self) -> Point {
        let goal = self.waypoints[self.target];
        let d = distance(self.pos, goal);
        if d == 0.0 {
            return Point { x: 0.0, y: 0.0 };
        }
        Point { x: (goal.x - self.pos.x) / d * self.speed, y: (goal.y - self.pos.y) / d * self.speed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialNavState {
    pub pos: Point,
    pub vel: Point,
    pub heading: f64,
    pub speed: f64,
    pub gain: f64,
    pub humans: Vec<Human>,
    pub goal: Point,
    pub step: usize,
}

pub struct SocialNav {
    config: SocialNavConfig,
    walls: [Wall; 4],
    rng: StreamRng,
    state: SocialNavState,
    last_reward: f64,
}

impl SocialNav {
    pub fn new(config: SocialNavConfig, rng: StreamRng) -> Result<Self, EnvError> {
        config.validate()?;
        let origin = Point { x: 0.0, y: 0.0 };
        let state = SocialNavState {
            pos: origin,
            vel: origin,
            heading: 0.0,
            speed: 0.0,
            gain: config.gain_range.0,
            humans: vec![],
            goal: origin,
            step: 0,
        };
        let walls = config.walls();
        let mut env = Self { config, walls, rng, state, last_reward: 0.0 };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &SocialNavConfig {
        &self.config
    }

    pub fn state(&self) -> &SocialNavState {
        &self.state
    }

    pub fn set_state(&mut self, state: SocialNavState) {
        self.state = state;
    }

    fn human_positions(&self) -> Vec<Point> {
        self.state.humans.iter().map(|h| h.pos).collect()
    }

    fn nearest_human(&self) -> Option<f64> {
        self.state.humans.iter().map(|h| distance(self.state.pos, h.pos)).min_by(f64::total_cmp)
    }

    fn spawn_human(&mut self, index: usize, robot: Point) -> Human {
        let c = &self.config;
        let h = c.width / 2.0 - c.human_radius - 0.05;
        let speed = self.rng.random_range(c.human_speed.0..=c.human_speed.1);
        for _ in 0..100 {
            // The first human walks the corridor's length; the others cross it.
            let waypoints = if index.is_multiple_of(3) {
                let y = self.rng.random_range(-h..h);
                [Point { x: c.length - 0.5, y }, Point { x: 0.5, y }]
            } else {
                let x = self.rng.random_range(0.3 * c.length..0.8 * c.length);
                let (a, b) = if self.rng.random_bool(0.5) { (-h, h) } else { (h, -h) };
                [Point { x, y: a }, Point { x, y: b }]
            };
            let t: f64 = self.rng.random_range(0.0..1.0);
            let pos = Point {
                x: waypoints[0].x + t * (waypoints[1].x - waypoints[0].x),
                y: waypoints[0].y + t * (waypoints[1].y - waypoints[0].y),
            };
            if distance(pos, robot) > 1.5 {
                return Human { pos, waypoints, target: 1, speed };
            }
        }
        let far = Point { x: c.length - 0.5, y: 0.0 };
        Human { pos: far, waypoints: [far, Point { x: c.length - 0.5, y: 0.5 }], target: 1, speed }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if w.is_finite() {
        w
    } else {
        0.0
    }
}

impl Environment for SocialNav {
    fn obs_dim(&self) -> usize {
        self.config.lidar_rays + 4
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn reset(&mut self) -> StateVector {
        let c = self.config.clone();
        let margin = c.width / 2.0 - c.robot_radius - 0.25;
        let pos = Point { x: self.rng.random_range(0.5..1.0), y: self.rng.random_range(-margin..margin) };
        let goal_margin = c.width / 2.0 - c.goal_radius - 0.1;
        let goal =
            Point { x: self.rng.random_range(c.length - 1.5..c.length - 0.5), y: self.rng.random_range(-goal_margin..goal_margin) };
        let heading = (goal.y - pos.y).atan2(goal.x - pos.x) + self.rng.random_range(-0.3..0.3);
        let gain = self.rng.random_range(c.gain_range.0..=c.gain_range.1);
        let humans = (0..c.human_count).map(|i| self.spawn_human(i, pos)).collect();
        self.state = SocialNavState {
            pos,
            vel: Point { x: 0.0, y: 0.0 },
            heading,
            speed: 0.0,
            gain,
            humans,
            goal,
            step: 0,
        };
        self.last_reward = 0.0;
        self.observation()
    }

    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError> {
        let [dh, ds, dg] = check_action(action, 3)?;
        let c = &self.config;
        let before = distance(self.state.pos, self.state.goal);
        let humans = self.human_positions();
        let s = &mut self.state;
        s.heading = wrap_angle(s.heading + dh * c.heading_rate);
        s.speed = (s.speed + ds * c.speed_rate).clamp(0.0, c.max_speed);
        s.gain = (s.gain + dg * c.gain_rate).clamp(c.gain_range.0, c.gain_range.1);

        // The corridor ends are doorways: they bound the position but do not repel.
        let sides = [self.walls[0], self.walls[2]];
        let force = social_force(s.pos, &humans, &sides, s.gain, c.length_scale);
        let mut vx = s.speed * s.heading.cos() + force.x;
        let mut vy = s.speed * s.heading.sin() + force.y;
        let v = vx.hypot(vy);
        if v > c.max_speed {
            vx *= c.max_speed / v;
            vy *= c.max_speed / v;
        }
        let (lo_x, hi_x) = (c.robot_radius, c.length - c.robot_radius);
        let half = c.width / 2.0 - c.robot_radius;
        let nx = (s.pos.x + vx * c.dt).clamp(lo_x, hi_x);
        let ny = (s.pos.y + vy * c.dt).clamp(-half, half);
        s.vel = Point { x: (nx - s.pos.x) / c.dt, y: (ny - s.pos.y) / c.dt };
        s.pos = Point { x: nx, y: ny };
        for h in &mut s.humans {
            h.advance(c.dt);
        }
        s.step += 1;

        let after = distance(self.state.pos, self.state.goal);
        let progress = (before - after) / c.dt;
        let nearest = self.nearest_human();
        let proximity = nearest.map_or(0.0, |d| (c.comfort_distance - d).max(0.0) / c.comfort_distance);
        let collided = nearest.is_some_and(|d| d < c.robot_radius + c.human_radius);
        let reached = after <= c.goal_radius;
        self.last_reward = c.w_goal * progress + if reached { c.w_arrival } else { 0.0 }
            - c.w_proximity * proximity
            - if collided { c.w_collision } else { 0.0 };
        let done = self.state.step >= c.episode_len;
        Ok(StepOutcome { observation: self.observation(), done })
    }

    fn observation(&self) -> StateVector {
        let c = &self.config;
        let s = &self.state;
        let mut obs = compute_lidar(
            s.pos,
            s.heading,
            c.lidar_rays,
            c.lidar_range,
            &self.human_positions(),
            c.human_radius,
            &self.walls,
        );
        let (dx, dy) = (s.goal.x - s.pos.x, s.goal.y - s.pos.y);
        let (sin, cos) = s.heading.sin_cos();
        obs.extend([cos * dx + sin * dy, -sin * dx + cos * dy, s.speed, s.gain]);
        obs.truncate(self.obs_dim());
        StateVector(obs)
    }

    fn frame(&self) -> Frame {
        let c = &self.config;
        let s = &self.state;
        let humans = self.human_positions();
        Frame {
            t: s.step as u64,
            robot: RobotPose { x: s.pos.x, y: s.pos.y, vx: s.vel.x, vy: s.vel.y, heading: s.heading, gain: s.gain },
            lidar: compute_lidar(s.pos, s.heading, c.lidar_rays, c.lidar_range, &humans, c.human_radius, &self.walls),
            humans,
            goal: s.goal,
        }
    }

    fn last_true_reward(&self) -> f64 {
        self.last_reward
    }

    fn gain(&self) -> Option<f64> {
        Some(self.state.gain)
    }
}

impl SocialNav {
    /// Velocities of all humans, for rendering and tests.
    pub fn human_velocities(&self) -> Vec<Point> {
        self.state.humans.iter().map(Human::velocity).collect()
    }
}
