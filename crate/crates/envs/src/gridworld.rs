//! Partially observable predator-prey on a square grid.
//!
//! One predator hunts randomly moving preys. The predator sees the 3x3 block
//! of cells directly in front of it (rows 1..=3 ahead, one column either side
//! of its heading), each cell one-hot encoded as empty, prey, or off-grid.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTION_COUNT: usize = 5;
const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Unit step with y growing southwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Wait,
    Catch,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Wait,
        Action::Catch,
    ];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL.get(i).copied().ok_or(Error::InvalidAction(i))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreyAction {
    Stay,
    TurnLeft,
    TurnRight,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

impl Pose {
    fn ahead(&self, steps: i32) -> (i32, i32) {
        let (dx, dy) = self.heading.delta();
        (self.x + dx * steps, self.y + dy * steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prey {
    pub pose: Pose,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub grid_size: usize,
    pub preys: usize,
    pub max_steps: usize,
    pub move_penalty: f64,
    pub wait_penalty: f64,
    pub catch_reward: f64,
    pub miss_penalty: f64,
    /// Probabilities of stay, turn left, turn right, forward.
    pub prey_policy: [f64; 4],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            grid_size: 9,
            preys: 2,
            max_steps: 500,
            move_penalty: -0.01,
            wait_penalty: -0.25,
            catch_reward: 1.0,
            miss_penalty: -0.5,
            prey_policy: [0.10, 0.25, 0.25, 0.40],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 || self.preys + 1 > self.grid_size * self.grid_size {
            return Err(Error::InvalidConfig(format!(
                "a {0}x{0} grid cannot hold {1} preys and a predator",
                self.grid_size, self.preys
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        let total: f64 = self.prey_policy.iter().sum();
        if self.prey_policy.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "prey policy must be a probability vector".into(),
            ));
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        9 * CHANNELS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step: usize,
    action: Option<Action>,
    reward: f64,
    done: bool,
    predator: &'a Pose,
    preys: &'a [Prey],
}

pub struct GridWorld {
    config: GridConfig,
    predator: Pose,
    preys: Vec<Prey>,
    steps: usize,
    done: bool,
    trace: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for GridWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridWorld")
            .field("predator", &self.predator)
            .field("preys", &self.preys)
            .field("steps", &self.steps)
            .field("done", &self.done)
            .finish()
    }
}

impl GridWorld {
    /// A world that must be [`reset`](Self::reset) before stepping.
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        Ok(GridWorld {
            predator: Pose {
                x: 0,
                y: 0,
                heading: Heading::North,
            },
            preys: Vec::new(),
            steps: 0,
            done: true,
            trace: None,
            config,
        })
    }

    /// Places entities by hand, for scripted scenarios.
    pub fn from_parts(config: GridConfig, predator: Pose, preys: Vec<Prey>) -> Result<Self> {
        config.validate()?;
        let mut world = GridWorld {
            predator,
            preys,
            steps: 0,
            done: false,
            trace: None,
            config,
        };
        if !world.layout_is_valid() {
            return Err(Error::InvalidConfig(
                "entities overlap or leave the grid".into(),
            ));
        }
        world.done = world.preys.iter().all(|p| !p.alive);
        Ok(world)
    }

    /// Writes one JSON line per reset and step to `sink`.
    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.trace = Some(sink);
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn predator(&self) -> Pose {
        self.predator
    }

    pub fn preys(&self) -> &[Prey] {
        &self.preys
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let n = self.config.grid_size;
        let cells = rand::seq::index::sample(rng, n * n, self.config.preys + 1);
        let mut poses = cells.iter().map(|c| Pose {
            x: (c % n) as i32,
            y: (c / n) as i32,
            heading: Heading::North,
        });
        self.predator = poses.next().expect("at least one cell");
        self.preys = poses.map(|pose| Prey { pose, alive: true }).collect();
        self.predator.heading = Heading::ALL[rng.gen_range(0..4)];
        for prey in &mut self.preys {
            prey.pose.heading = Heading::ALL[rng.gen_range(0..4)];
        }
        self.steps = 0;
        self.done = false;
        self.write_trace(None, 0.0)?;
        Ok(self.observe())
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let action = Action::from_index(action)?;
        let reward = self.act(action);
        for i in 0..self.preys.len() {
            if self.preys[i].alive {
                let choice = prey_policy(&self.config.prey_policy, rng);
                self.move_prey(i, choice);
            }
        }
        self.steps += 1;
        self.done = self.preys.iter().all(|p| !p.alive) || self.steps >= self.config.max_steps;
        self.write_trace(Some(action), reward)?;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }

    fn act(&mut self, action: Action) -> f64 {
        let c = &self.config;
        match action {
            Action::Forward => {
                let (x, y) = self.predator.ahead(1);
                if self.in_bounds(x, y) && self.live_prey_at(x, y).is_none() {
                    self.predator.x = x;
                    self.predator.y = y;
                }
                c.move_penalty
            }
            Action::TurnLeft => {
                self.predator.heading = self.predator.heading.left();
                c.move_penalty
            }
            Action::TurnRight => {
                self.predator.heading = self.predator.heading.right();
                c.move_penalty
            }
            Action::Wait => c.wait_penalty,
            Action::Catch => {
                let (x, y) = self.predator.ahead(1);
                match self.live_prey_at(x, y) {
                    Some(i) => {
                        self.preys[i].alive = false;
                        self.config.catch_reward
                    }
                    None => self.config.miss_penalty,
                }
            }
        }
    }

    /// Applies a prey move; a blocked forward step leaves the prey in place.
    pub fn move_prey(&mut self, index: usize, action: PreyAction) {
        let pose = self.preys[index].pose;
        match action {
            PreyAction::Stay => {}
            PreyAction::TurnLeft => self.preys[index].pose.heading = pose.heading.left(),
            PreyAction::TurnRight => self.preys[index].pose.heading = pose.heading.right(),
            PreyAction::Forward => {
                let (x, y) = pose.ahead(1);
                if self.is_free(x, y) {
                    self.preys[index].pose.x = x;
                    self.preys[index].pose.y = y;
                }
            }
        }
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        let n = self.config.grid_size as i32;
        (0..n).contains(&x) && (0..n).contains(&y)
    }

    fn live_prey_at(&self, x: i32, y: i32) -> Option<usize> {
        self.preys
            .iter()
            .position(|p| p.alive && p.pose.x == x && p.pose.y == y)
    }

    fn is_free(&self, x: i32, y: i32) -> bool {
        self.in_bounds(x, y)
            && !(self.predator.x == x && self.predator.y == y)
            && self.live_prey_at(x, y).is_none()
    }

    /// Bounds hold and no two live entities share a cell.
    pub fn layout_is_valid(&self) -> bool {
        let mut cells = vec![(self.predator.x, self.predator.y)];
        cells.extend(
            self.preys
                .iter()
                .filter(|p| p.alive)
                .map(|p| (p.pose.x, p.pose.y)),
        );
        let all_in = cells.iter().all(|&(x, y)| self.in_bounds(x, y));
        let mut sorted = cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        all_in && sorted.len() == cells.len()
    }

    /// Cells ordered by distance ahead (1..=3), then left to right.
    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; 9 * CHANNELS];
        let (fx, fy) = self.predator.heading.delta();
        let (rx, ry) = self.predator.heading.right().delta();
        let mut cell = 0;
        for dist in 1..=3 {
            for lateral in -1..=1 {
                let x = self.predator.x + fx * dist + rx * lateral;
                let y = self.predator.y + fy * dist + ry * lateral;
                let channel = if !self.in_bounds(x, y) {
                    2
                } else if self.live_prey_at(x, y).is_some() {
                    1
                } else {
                    0
                };
                obs[cell * CHANNELS + channel] = 1.0;
                cell += 1;
            }
        }
        obs
    }

    fn write_trace(&mut self, action: Option<Action>, reward: f64) -> Result<()> {
        if let Some(sink) = self.trace.as_mut() {
            let record = TraceRecord {
                step: self.steps,
                action,
                reward,
                done: self.done,
                predator: &self.predator,
                preys: &self.preys,
            };
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Draws a prey move from `probs` (stay, left, right, forward).
pub fn prey_policy<R: Rng + ?Sized>(probs: &[f64; 4], rng: &mut R) -> PreyAction {
    const MOVES: [PreyAction; 4] = [
        PreyAction::Stay,
        PreyAction::TurnLeft,
        PreyAction::TurnRight,
        PreyAction::Forward,
    ];
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (p, m) in probs.iter().zip(MOVES) {
        acc += p;
        if draw < acc {
            return m;
        }
    }
    PreyAction::Forward
}
